#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
// Nodes live on an append-only tape, so creation order is already a
// topological order and backward is a single reverse sweep.

#include "resformer/numerics.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace resformer::ad {

class Tape;

struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

class Tape {
  public:
    Var leaf(Mat value, bool requires_grad = true) {
        return push(std::move(value), requires_grad, {});
    }
    Var constant(Mat value) { return leaf(std::move(value), false); }

    const Mat& value(Var v) const { return nodes_[v.idx].value; }
    const Mat& grad(Var v) const { return nodes_[v.idx].grad; }

    Var matmul(Var a, Var b) {
        const Mat& av = value(a);
        const Mat& bv = value(b);
        if (av.cols() != bv.rows()) throw DimensionError("matmul shape mismatch");
        Var out = push(av * bv, needs(a) || needs(b), [this, a, b](const Mat& g) {
            if (needs(a)) nodes_[a.idx].grad.noalias() += g * value(b).transpose();
            if (needs(b)) nodes_[b.idx].grad.noalias() += value(a).transpose() * g;
        });
        return out;
    }

    Var add(Var a, Var b) {
        if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
            throw DimensionError("add shape mismatch");
        return push(value(a) + value(b), needs(a) || needs(b),
                    [this, a, b](const Mat& g) {
                        if (needs(a)) nodes_[a.idx].grad += g;
                        if (needs(b)) nodes_[b.idx].grad += g;
                    });
    }

    // Adds a 1 x c row vector to every row of a.
    Var add_row(Var a, Var row) {
        if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
            throw DimensionError("add_row expects a 1 x cols bias");
        Mat out = value(a);
        out.rowwise() += value(row).row(0);
        return push(std::move(out), needs(a) || needs(row),
                    [this, a, row](const Mat& g) {
                        if (needs(a)) nodes_[a.idx].grad += g;
                        if (needs(row)) nodes_[row.idx].grad += g.colwise().sum();
                    });
    }

    Var scale(Var a, double c) {
        return push(value(a) * c, needs(a), [this, a, c](const Mat& g) {
            if (needs(a)) nodes_[a.idx].grad += g * c;
        });
    }

    Var transpose(Var a) {
        return push(value(a).transpose(), needs(a), [this, a](const Mat& g) {
            if (needs(a)) nodes_[a.idx].grad += g.transpose();
        });
    }

    Var relu(Var a) {
        return push(value(a).cwiseMax(0.0), needs(a), [this, a](const Mat& g) {
            if (needs(a))
                nodes_[a.idx].grad.array() +=
                    g.array() * (value(a).array() > 0.0).cast<double>();
        });
    }

    Var leaky_relu(Var a, double slope) {
        Mat out = value(a).unaryExpr([slope](double x) { return x > 0 ? x : slope * x; });
        return push(std::move(out), needs(a), [this, a, slope](const Mat& g) {
            if (needs(a))
                nodes_[a.idx].grad.array() +=
                    g.array() * value(a).unaryExpr([slope](double x) {
                                        return x > 0 ? 1.0 : slope;
                                    }).array();
        });
    }

    Var tanh(Var a) {
        Mat out = value(a).array().tanh();
        Var v = push(std::move(out), needs(a), nullptr);
        nodes_[v.idx].backward = [this, a, v](const Mat& g) {
            if (needs(a))
                nodes_[a.idx].grad.array() +=
                    g.array() * (1.0 - value(v).array().square());
        };
        return v;
    }

    // Softmax over each row.
    Var row_softmax(Var a) {
        Mat out = value(a);
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            double mx = out.row(r).maxCoeff();
            out.row(r) = (out.row(r).array() - mx).exp();
            out.row(r) /= out.row(r).sum();
        }
        Var v = push(std::move(out), needs(a), nullptr);
        nodes_[v.idx].backward = [this, a, v](const Mat& g) {
            if (!needs(a)) return;
            const Mat& y = value(v);
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                double dot = g.row(r).dot(y.row(r));
                nodes_[a.idx].grad.row(r).array() +=
                    y.row(r).array() * (g.row(r).array() - dot);
            }
        };
        return v;
    }

    // Per-row layer normalization with trainable gain/bias (1 x c each).
    Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5) {
        const Mat& x = value(a);
        if (x.cols() < 2) throw DimensionError("layer_norm requires width >= 2");
        Mat xhat(x.rows(), x.cols());
        Vec inv_std(x.rows());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            double mean = x.row(r).mean();
            double var = (x.row(r).array() - mean).square().mean();
            inv_std(r) = 1.0 / std::sqrt(var + eps);
            xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
        }
        Mat out = xhat;
        out.array().rowwise() *= value(gain).row(0).array();
        out.rowwise() += value(bias).row(0);
        bool any = needs(a) || needs(gain) || needs(bias);
        return push(std::move(out), any,
                    [this, a, gain, bias, xhat, inv_std](const Mat& g) {
                        if (needs(bias)) nodes_[bias.idx].grad += g.colwise().sum();
                        if (needs(gain))
                            nodes_[gain.idx].grad +=
                                (g.array() * xhat.array()).colwise().sum().matrix();
                        if (!needs(a)) return;
                        const double n = static_cast<double>(xhat.cols());
                        for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                            Eigen::RowVectorXd dxhat =
                                g.row(r).array() * value(gain).row(0).array();
                            double m1 = dxhat.mean();
                            double m2 = (dxhat.array() * xhat.row(r).array()).mean();
                            nodes_[a.idx].grad.row(r).array() +=
                                inv_std(r) * (dxhat.array() - m1 -
                                              xhat.row(r).array() * m2);
                            (void)n;
                        }
                    });
    }

    Var concat_cols(Var a, Var b) {
        if (value(a).rows() != value(b).rows())
            throw DimensionError("concat_cols row mismatch");
        Mat out(value(a).rows(), value(a).cols() + value(b).cols());
        out << value(a), value(b);
        return push(std::move(out), needs(a) || needs(b), [this, a, b](const Mat& g) {
            if (needs(a)) nodes_[a.idx].grad += g.leftCols(value(a).cols());
            if (needs(b)) nodes_[b.idx].grad += g.rightCols(value(b).cols());
        });
    }

    Var concat_rows(const std::vector<Var>& parts) {
        if (parts.empty()) throw DimensionError("concat_rows of nothing");
        Eigen::Index rows = 0, cols = value(parts[0]).cols();
        for (Var p : parts) {
            if (value(p).cols() != cols) throw DimensionError("concat_rows col mismatch");
            rows += value(p).rows();
        }
        Mat out(rows, cols);
        Eigen::Index r = 0;
        bool any = false;
        for (Var p : parts) {
            out.middleRows(r, value(p).rows()) = value(p);
            r += value(p).rows();
            any = any || needs(p);
        }
        return push(std::move(out), any, [this, parts](const Mat& g) {
            Eigen::Index r = 0;
            for (Var p : parts) {
                if (needs(p)) nodes_[p.idx].grad += g.middleRows(r, value(p).rows());
                r += value(p).rows();
            }
        });
    }

    Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n) {
        if (r0 < 0 || n <= 0 || r0 + n > value(a).rows())
            throw DimensionError("slice_rows out of range");
        return push(value(a).middleRows(r0, n), needs(a),
                    [this, a, r0, n](const Mat& g) {
                        if (needs(a)) nodes_[a.idx].grad.middleRows(r0, n) += g;
                    });
    }

    Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n) {
        if (c0 < 0 || n <= 0 || c0 + n > value(a).cols())
            throw DimensionError("slice_cols out of range");
        return push(value(a).middleCols(c0, n), needs(a),
                    [this, a, c0, n](const Mat& g) {
                        if (needs(a)) nodes_[a.idx].grad.middleCols(c0, n) += g;
                    });
    }

    Var mean_rows(Var a) {
        Mat out = value(a).colwise().mean();
        double inv = 1.0 / static_cast<double>(value(a).rows());
        return push(std::move(out), needs(a), [this, a, inv](const Mat& g) {
            if (needs(a))
                nodes_[a.idx].grad +=
                    (g.row(0) * inv).replicate(value(a).rows(), 1);
        });
    }

    Var repeat_rows(Var a, Eigen::Index n) {
        if (value(a).rows() != 1) throw DimensionError("repeat_rows expects one row");
        Mat out = value(a).row(0).replicate(n, 1);
        return push(std::move(out), needs(a), [this, a](const Mat& g) {
            if (needs(a)) nodes_[a.idx].grad += g.colwise().sum();
        });
    }

    // Table row gather; backward scatter-adds into the table.
    Var gather_rows(Var table, std::vector<int> ids) {
        const Mat& t = value(table);
        for (int id : ids)
            if (id < 0 || id >= t.rows())
                throw DimensionError("gather_rows id out of range");
        Mat out(static_cast<Eigen::Index>(ids.size()), t.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) out.row(i) = t.row(ids[i]);
        return push(std::move(out), needs(table),
                    [this, table, ids = std::move(ids)](const Mat& g) {
                        if (!needs(table)) return;
                        for (std::size_t i = 0; i < ids.size(); ++i)
                            nodes_[table.idx].grad.row(ids[i]) += g.row(i);
                    });
    }

    // Inverted dropout on every entry; identity when p == 0.
    Var dropout(Var a, double p, Rng& rng) {
        if (p < 0.0 || p >= 1.0) throw RangeError("dropout rate must be in [0, 1)");
        if (p == 0.0) return a;
        Mat mask(value(a).rows(), value(a).cols());
        double keep = 1.0 - p;
        for (Eigen::Index i = 0; i < mask.size(); ++i)
            mask.data()[i] = rng.next_double() < p ? 0.0 : 1.0 / keep;
        Mat out = value(a).cwiseProduct(mask);
        return push(std::move(out), needs(a), [this, a, mask](const Mat& g) {
            if (needs(a)) nodes_[a.idx].grad += g.cwiseProduct(mask);
        });
    }

    // Mean cross-entropy of row-wise logits against integer labels,
    // computed through log-softmax. Returns a 1x1 scalar node.
    Var softmax_cross_entropy(Var logits, std::vector<int> labels) {
        const Mat& z = value(logits);
        if (static_cast<Eigen::Index>(labels.size()) != z.rows())
            throw DimensionError("one label per logit row required");
        Mat probs(z.rows(), z.cols());
        double loss = 0.0;
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            if (labels[r] < 0 || labels[r] >= z.cols())
                throw RangeError("label out of range");
            double mx = z.row(r).maxCoeff();
            Eigen::RowVectorXd sh = z.row(r).array() - mx;
            double lse = std::log(sh.array().exp().sum());
            probs.row(r) = (sh.array() - lse).exp();
            loss -= sh(labels[r]) - lse;
        }
        loss /= static_cast<double>(z.rows());
        Mat out(1, 1);
        out(0, 0) = loss;
        return push(std::move(out), needs(logits),
                    [this, logits, probs, labels = std::move(labels)](const Mat& g) {
                        if (!needs(logits)) return;
                        double c = g(0, 0) / static_cast<double>(probs.rows());
                        Mat d = probs;
                        for (Eigen::Index r = 0; r < d.rows(); ++r)
                            d(r, labels[r]) -= 1.0;
                        nodes_[logits.idx].grad += c * d;
                    });
    }

    void backward(Var loss) {
        if (value(loss).size() != 1)
            throw DimensionError("backward expects a scalar node");
        for (auto& n : nodes_)
            if (n.requires_grad) n.grad.setZero(n.value.rows(), n.value.cols());
        nodes_[loss.idx].grad.setConstant(1.0);
        for (int i = loss.idx; i >= 0; --i)
            if (nodes_[i].backward && nodes_[i].requires_grad)
                nodes_[i].backward(nodes_[i].grad);
    }

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad;
        std::function<void(const Mat&)> backward;
    };

    bool needs(Var v) const { return nodes_[v.idx].requires_grad; }

    Var push(Mat value, bool requires_grad, std::function<void(const Mat&)> bw) {
        Node n{std::move(value), Mat(), requires_grad, std::move(bw)};
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
};

}  // namespace resformer::ad
