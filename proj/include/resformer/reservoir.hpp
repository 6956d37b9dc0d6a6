#pragma once

// Long-term memory: leaky-integrator reservoirs with fixed random weights
// scaled to a target spectral radius, trainable nonlinear readouts, and the
// group ensemble that emits memory tokens for the fusion block.

#include "resformer/numerics.hpp"

#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

namespace resformer {

enum class Activation { relu, tanh, leaky_relu, linear };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::linear: return "linear";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "leaky_relu") return Activation::leaky_relu;
    if (s == "linear") return Activation::linear;
    throw RangeError("unknown activation: " + s);
}

inline double apply_activation(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0 ? x : 0.0;
        case Activation::tanh: return std::tanh(x);
        case Activation::leaky_relu: return x > 0 ? x : 0.01 * x;
        case Activation::linear: return x;
    }
    return x;
}

struct ReservoirConfig {
    int size = 100;              // N_r
    int input_dim = 1;           // N_u
    double leaky_alpha = 0.5;    // alpha in [0, 1]
    double spectral_radius = 0.9;
    double sparsity = 0.5;
    double input_scaling = 0.1;  // sigma_in
    int readout_dim = 64;        // m
    Activation readout_activation = Activation::relu;
    std::uint64_t seed = 0;

    void validate() const {
        if (size <= 0 || input_dim <= 0 || readout_dim <= 0)
            throw DimensionError("reservoir dimensions must be positive");
        if (leaky_alpha < 0.0 || leaky_alpha > 1.0)
            throw RangeError("leaky_alpha must lie in [0, 1]");
        if (spectral_radius <= 0.0) throw RangeError("spectral_radius must be positive");
        if (sparsity < 0.0 || sparsity > 1.0) throw RangeError("sparsity must lie in [0, 1]");
        if (input_scaling <= 0.0) throw RangeError("input_scaling must be positive");
    }
};

struct Reservoir {
    Mat W;       // N_r x N_r, fixed after construction
    Mat W_in;    // N_r x N_u, fixed
    Vec theta;   // N_r, fixed
    ReservoirConfig config;
    Mat W_out;     // m x N_r, trainable
    Mat theta_out; // 1 x m, trainable
};

struct ReservoirState {
    Vec x;
    long step_count = 0;
};

struct ConstructionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Distinct sub-streams per matrix so layout changes in one draw cannot
// silently shift another.
inline Reservoir build_reservoir(const ReservoirConfig& config) {
    config.validate();
    Reservoir r;
    r.config = config;
    Rng base(config.seed);
    Rng rng_w = base.split(1), rng_sp = base.split(2), rng_in = base.split(3),
        rng_th = base.split(4), rng_out = base.split(5);

    Mat w = gaussian_matrix(rng_w, config.size, config.size, 0.0, 1.0);
    w = apply_sparsity(rng_sp, std::move(w), config.sparsity);
    auto est = power_iteration(w);
    if (!est.converged)
        throw ConstructionError("power iteration failed to converge for seed " +
                                std::to_string(config.seed));
    if (est.value <= 0.0)
        throw ConstructionError("sparsified reservoir matrix has zero spectral radius, seed " +
                                std::to_string(config.seed));
    r.W = w * (config.spectral_radius / est.value);

    double s = config.input_scaling;
    r.W_in = uniform_matrix(rng_in, config.size, config.input_dim, -s, s);
    r.theta = uniform_matrix(rng_th, config.size, 1, -s, s).col(0);

    // He-style init for the ReLU readout; bias starts at zero.
    r.W_out = gaussian_matrix(rng_out, config.readout_dim, config.size, 0.0,
                              std::sqrt(2.0 / config.size));
    r.theta_out = Mat::Zero(1, config.readout_dim);
    return r;
}

enum class StateInit { zero, seeded_random };

inline ReservoirState init_state(const Reservoir& r, StateInit mode, Rng& rng) {
    ReservoirState s;
    if (mode == StateInit::zero) {
        s.x = Vec::Zero(r.config.size);
    } else {
        s.x = uniform_matrix(rng, r.config.size, 1, -0.1, 0.1).col(0);
    }
    s.step_count = 0;
    return s;
}

// x_t = (1-alpha) x_{t-1} + alpha tanh(W_in h_t + theta + W x_{t-1})
inline ReservoirState step(const Reservoir& r, const ReservoirState& state,
                           const Vec& h) {
    if (h.size() != r.config.input_dim)
        throw DimensionError("reservoir input dimension mismatch");
    if (state.x.size() != r.config.size)
        throw DimensionError("reservoir state dimension mismatch");
    const double a = r.config.leaky_alpha;
    ReservoirState out;
    out.x = (1.0 - a) * state.x +
            a * (r.W_in * h + r.theta + r.W * state.x).array().tanh().matrix();
    out.step_count = state.step_count + 1;
    return out;
}

// h = sigma(W_out x + theta_out); the trainable path into the fusion block.
inline Vec readout(const Reservoir& r, const ReservoirState& state) {
    if (state.x.size() != r.config.size)
        throw DimensionError("readout state dimension mismatch");
    Vec pre = r.W_out * state.x + r.theta_out.row(0).transpose();
    for (Eigen::Index i = 0; i < pre.size(); ++i)
        pre(i) = apply_activation(r.config.readout_activation, pre(i));
    return pre;
}

struct EmptyHistoryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class GroupReservoir {
  public:
    GroupReservoir(std::vector<Reservoir> members, int history_window)
        : members_(std::move(members)), k_(history_window) {
        if (members_.empty()) throw DimensionError("group needs at least one member");
        if (k_ < 1) throw RangeError("history window must be >= 1");
        int m = members_[0].config.readout_dim;
        for (const auto& r : members_)
            if (r.config.readout_dim != m)
                throw DimensionError("member readout dims must be equal");
    }

    const std::vector<Reservoir>& members() const { return members_; }
    std::vector<Reservoir>& members() { return members_; }
    int history_window() const { return k_; }
    int readout_dim() const { return members_[0].config.readout_dim; }
    std::size_t num_members() const { return members_.size(); }
    long steps_recorded() const { return steps_; }

    std::vector<ReservoirState> init_states(StateInit mode, Rng& rng) {
        history_.clear();
        steps_ = 0;
        std::vector<ReservoirState> states;
        states.reserve(members_.size());
        for (std::size_t i = 0; i < members_.size(); ++i) {
            Rng sub = rng.split(i);
            states.push_back(init_state(members_[i], mode, sub));
        }
        return states;
    }

    // Steps every member on the shared input and records the post-step
    // state snapshot (the ring buffer behind memory_tokens).
    std::vector<ReservoirState> group_step(const std::vector<ReservoirState>& states,
                                           const Vec& h) {
        check_states(states);
        std::vector<ReservoirState> out;
        out.reserve(members_.size());
        std::vector<Vec> snapshot;
        snapshot.reserve(members_.size());
        for (std::size_t i = 0; i < members_.size(); ++i) {
            out.push_back(step(members_[i], states[i], h));
            snapshot.push_back(out.back().x);
        }
        history_.push_back(std::move(snapshot));
        while (static_cast<int>(history_.size()) > k_) history_.pop_front();
        ++steps_;
        return out;
    }

    // o_t: member readouts concatenated in member order.
    Vec group_readout(const std::vector<ReservoirState>& states) const {
        check_states(states);
        int m = readout_dim();
        Vec o(static_cast<Eigen::Index>(members_.size()) * m);
        for (std::size_t i = 0; i < members_.size(); ++i)
            o.segment(static_cast<Eigen::Index>(i) * m, m) = readout(members_[i], states[i]);
        return o;
    }

    // State snapshots backing the memory tokens: oldest step first, members
    // in order within each step. Rows < k*L before k steps exist.
    std::vector<std::vector<Vec>> memory_snapshots() const {
        if (history_.empty())
            throw EmptyHistoryError("memory_tokens requested before any step");
        return {history_.begin(), history_.end()};
    }

    // M x m matrix of per-member readouts over the retained window,
    // evaluated against the current readout parameters.
    Mat memory_tokens() const {
        auto snaps = memory_snapshots();
        int m = readout_dim();
        Mat tokens(static_cast<Eigen::Index>(snaps.size() * members_.size()), m);
        Eigen::Index row = 0;
        for (const auto& snap : snaps)
            for (std::size_t i = 0; i < members_.size(); ++i) {
                ReservoirState s{snap[i], 0};
                tokens.row(row++) = readout(members_[i], s).transpose();
            }
        return tokens;
    }

    void clear_history() {
        history_.clear();
        steps_ = 0;
    }

  private:
    void check_states(const std::vector<ReservoirState>& states) const {
        if (states.size() != members_.size())
            throw DimensionError("expected one state per group member");
    }

    std::vector<Reservoir> members_;
    int k_;
    std::deque<std::vector<Vec>> history_;
    long steps_ = 0;
};

// Paper-scale defaults for the five-member group; the desk-scale profile
// shrinks sizes so tests run in seconds.
inline std::vector<ReservoirConfig> default_group_configs(bool desk_scale,
                                                          int input_dim,
                                                          int readout_dim,
                                                          std::uint64_t seed) {
    const int paper_sizes[5] = {1500, 1600, 1700, 1800, 1900};
    const int desk_sizes[5] = {60, 70, 80, 90, 100};
    const double rho[5] = {0.9, 0.85, 0.8, 0.75, 0.7};
    const double alpha[5] = {0.48, 0.49, 0.50, 0.51, 0.52};
    const double sparsity[5] = {0.6, 0.55, 0.5, 0.45, 0.4};
    std::vector<ReservoirConfig> configs(5);
    for (int i = 0; i < 5; ++i) {
        configs[i].size = desk_scale ? desk_sizes[i] : paper_sizes[i];
        configs[i].spectral_radius = rho[i];
        configs[i].leaky_alpha = alpha[i];
        configs[i].sparsity = sparsity[i];
        configs[i].input_dim = input_dim;
        configs[i].readout_dim = readout_dim;
        configs[i].seed = seed + 101 * (i + 1);
    }
    return configs;
}

}  // namespace resformer
