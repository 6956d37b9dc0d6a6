#pragma once

// Deterministic RNG, matrix primitives, spectral estimation and the
// finite-difference gradient oracle shared by every other module.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace resformer {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct RangeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct EvaluationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}
}  // namespace detail

// xoshiro256** seeded through splitmix64. Sub-streams are derived by
// folding the stream id into the splitmix seed, which gives independent
// sequences for distinct (seed, stream) pairs.
class Rng {
  public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream) {
        std::uint64_t sm = seed ^ detail::splitmix64(stream);
        for (auto& w : state_) w = detail::splitmix64(sm);
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    // Independent sub-stream; the parent is left untouched.
    Rng split(std::uint64_t stream_id) const {
        return Rng(seed_, stream_ * 0x9e3779b97f4a7c15ULL + stream_id + 1);
    }

    std::uint64_t next_u64() {
        std::uint64_t* s = state_;
        std::uint64_t result = detail::rotl(s[1] * 5, 7) * 9;
        std::uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = detail::rotl(s[3], 45);
        return result;
    }

    // Uniform on [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Box-Muller on the documented uniform stream; the spare draw is cached.
    double gaussian(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1, u2;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return mean + stddev * r * std::cos(a);
    }

  private:
    std::uint64_t state_[4];
    std::uint64_t seed_;
    std::uint64_t stream_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline void check_dims_positive(Eigen::Index rows, Eigen::Index cols) {
    if (rows <= 0 || cols <= 0)
        throw DimensionError("matrix dimensions must be positive, got " +
                             std::to_string(rows) + "x" + std::to_string(cols));
}

inline Mat gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                           double mean = 0.0, double stddev = 1.0) {
    check_dims_positive(rows, cols);
    if (stddev <= 0.0) throw RangeError("stddev must be positive");
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.gaussian(mean, stddev);
    return m;
}

inline Mat uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                          double lo, double hi) {
    check_dims_positive(rows, cols);
    if (lo >= hi) throw RangeError("uniform bounds require lo < hi");
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
    return m;
}

// Zeroes exactly round(sparsity * rows * cols) entries, positions drawn
// uniformly without replacement (partial Fisher-Yates over flat indices).
inline Mat apply_sparsity(Rng& rng, Mat m, double sparsity) {
    if (sparsity < 0.0 || sparsity > 1.0)
        throw RangeError("sparsity must lie in [0, 1]");
    const std::size_t total = static_cast<std::size_t>(m.size());
    const std::size_t n_zero =
        static_cast<std::size_t>(std::llround(sparsity * static_cast<double>(total)));
    if (n_zero == 0) return m;
    std::vector<std::size_t> idx(total);
    for (std::size_t i = 0; i < total; ++i) idx[i] = i;
    for (std::size_t i = 0; i < n_zero; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (total - i));
        std::swap(idx[i], idx[j]);
        m.data()[idx[i]] = 0.0;
    }
    return m;
}

struct SpectralEstimate {
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
};

// Dominant-modulus eigenvalue estimate by restarted Arnoldi power
// iteration. Plain power iteration stalls when the dominant eigenvalues
// form a complex pair or cluster at nearly equal modulus (typical for
// dense Gaussian matrices); projecting onto a small Krylov subspace and
// taking the largest Ritz modulus handles both. Restarts use the dominant
// Ritz vector; a Gram-Schmidt breakdown means the subspace is invariant
// and the estimate is exact.
inline SpectralEstimate power_iteration(const Mat& a, double tol = 1e-10,
                                        int max_iter = 10000,
                                        std::uint64_t seed = 0x5eed) {
    if (a.rows() != a.cols())
        throw DimensionError("power_iteration requires a square matrix");
    if (tol <= 0.0) throw RangeError("tol must be positive");
    const Eigen::Index n = a.rows();
    if (n == 0) throw DimensionError("power_iteration on empty matrix");

    Rng rng(seed, 0xabcdef);
    auto draw_start = [&]() {
        Vec v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.gaussian();
        double nrm = v.norm();
        return Vec(v / (nrm > 0 ? nrm : 1.0));
    };

    const Eigen::Index m = std::min<Eigen::Index>(n, 30);
    SpectralEstimate res;
    Vec v = draw_start();
    double prev = -1.0;
    int matvecs = 0;
    while (matvecs < max_iter) {
        Mat q(n, m + 1);
        Mat h = Mat::Zero(m + 1, m);
        q.col(0) = v;
        Eigen::Index k = 0;
        bool invariant = false;
        for (; k < m; ++k) {
            Vec w = a * q.col(k);
            ++matvecs;
            for (Eigen::Index j = 0; j <= k; ++j) {
                h(j, k) = q.col(j).dot(w);
                w -= h(j, k) * q.col(j);
            }
            for (Eigen::Index j = 0; j <= k; ++j) {  // re-orthogonalize
                double c = q.col(j).dot(w);
                h(j, k) += c;
                w -= c * q.col(j);
            }
            h(k + 1, k) = w.norm();
            if (h(k + 1, k) < 1e-300) {  // exact invariant subspace
                ++k;
                invariant = true;
                break;
            }
            q.col(k + 1) = w / h(k + 1, k);
        }
        Eigen::EigenSolver<Mat> es(h.topLeftCorner(k, k));
        Eigen::Index best = 0;
        double est = 0.0;
        for (Eigen::Index i = 0; i < k; ++i) {
            double mag = std::abs(es.eigenvalues()(i));
            if (mag > est) {
                est = mag;
                best = i;
            }
        }
        res.iterations = matvecs;
        res.value = est;
        if (invariant ||
            (prev >= 0.0 && std::abs(est - prev) < tol * std::max(1.0, est))) {
            res.converged = true;
            return res;
        }
        prev = est;
        Eigen::VectorXcd y = es.eigenvectors().col(best);
        Vec restart = (q.leftCols(k) * y.real()).eval();
        if (restart.norm() < 1e-300) restart = q.leftCols(k) * y.imag();
        double nrm = restart.norm();
        v = nrm > 0 ? Vec(restart / nrm) : draw_start();
    }
    res.converged = false;
    return res;
}

// Numerically stable softmax with max subtraction.
inline Vec softmax(const Vec& v) {
    if (v.size() == 0) throw DimensionError("softmax of empty vector");
    double mx = v.maxCoeff();
    Vec e = (v.array() - mx).exp();
    return e / e.sum();
}

inline Vec layer_norm(const Vec& v, const Vec& gain, const Vec& bias,
                      double eps = 1e-5) {
    if (v.size() < 2) throw DimensionError("layer_norm requires length >= 2");
    if (gain.size() != v.size() || bias.size() != v.size())
        throw DimensionError("layer_norm affine parameters must match input size");
    double mean = v.mean();
    double var = (v.array() - mean).square().mean();
    Vec xhat = (v.array() - mean) / std::sqrt(var + eps);
    return (xhat.array() * gain.array() + bias.array()).matrix();
}

// Central differences at 64-bit; the project's gradient oracle.
inline Vec finite_difference_gradient(const std::function<double(const Vec&)>& f,
                                      const Vec& p, double h) {
    if (h <= 0.0) throw RangeError("finite difference step must be positive");
    Vec g(p.size());
    Vec q = p;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        double orig = q(i);
        q(i) = orig + h;
        double fp = f(q);
        q(i) = orig - h;
        double fm = f(q);
        q(i) = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw EvaluationError("non-finite objective at coordinate " +
                                  std::to_string(i));
        g(i) = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace resformer
