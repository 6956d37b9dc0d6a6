#include <catch2/catch_amalgamated.hpp>

#include "resformer/reservoir.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstring>

using namespace resformer;

namespace {

ReservoirConfig small_config(std::uint64_t seed = 7) {
    ReservoirConfig c;
    c.size = 80;
    c.input_dim = 8;
    c.readout_dim = 6;
    c.leaky_alpha = 0.5;
    c.spectral_radius = 0.9;
    c.sparsity = 0.5;
    c.seed = seed;
    return c;
}

// Hand-checkable 2-unit reservoir with fixed (non-random) weights.
Reservoir two_unit(double alpha) {
    Reservoir r;
    r.config.size = 2;
    r.config.input_dim = 1;
    r.config.readout_dim = 2;
    r.config.leaky_alpha = alpha;
    r.W = Mat(2, 2);
    r.W << 0.3, -0.2, 0.1, 0.4;
    r.W_in = Mat(2, 1);
    r.W_in << 0.5, -0.7;
    r.theta = Vec(2);
    r.theta << 0.05, -0.1;
    r.W_out = Mat::Identity(2, 2);
    r.theta_out = Mat::Zero(1, 2);
    return r;
}

}  // namespace

TEST_CASE("build_reservoir hits the configured spectral radius") {
    ReservoirConfig c = small_config();
    Reservoir r = build_reservoir(c);
    Eigen::EigenSolver<Mat> es(r.W);
    double rho = es.eigenvalues().cwiseAbs().maxCoeff();
    CHECK(std::abs(rho - 0.9) / 0.9 < 1e-6);
    auto est = power_iteration(r.W);
    CHECK(est.converged);
    CHECK(std::abs(est.value - 0.9) / 0.9 < 1e-6);
}

TEST_CASE("build_reservoir sparsity count and uniform ranges") {
    ReservoirConfig c = small_config();
    c.size = 100;
    c.sparsity = 0.5;
    Reservoir r = build_reservoir(c);
    int zeros = 0;
    for (int i = 0; i < 100; ++i)
        for (int j = 0; j < 100; ++j)
            if (r.W(i, j) == 0.0) ++zeros;
    CHECK(zeros >= 5000);  // rescaling keeps zeros zero; collisions can add none
    CHECK(zeros == 5000);

    double s = c.input_scaling;
    CHECK(r.W_in.minCoeff() >= -s);
    CHECK(r.W_in.maxCoeff() <= s);
    CHECK(r.theta.minCoeff() >= -s);
    CHECK(r.theta.maxCoeff() <= s);
}

TEST_CASE("build_reservoir is deterministic in seed") {
    Reservoir a = build_reservoir(small_config(99));
    Reservoir b = build_reservoir(small_config(99));
    Reservoir c = build_reservoir(small_config(100));
    CHECK(a.W == b.W);
    CHECK(a.W_in == b.W_in);
    CHECK(a.theta == b.theta);
    CHECK(a.W_out == b.W_out);
    CHECK(a.W != c.W);
}

TEST_CASE("init_state modes") {
    Reservoir r = build_reservoir(small_config());
    Rng rng(3, 0);
    ReservoirState z = init_state(r, StateInit::zero, rng);
    CHECK(z.x.cwiseAbs().maxCoeff() == 0.0);
    CHECK(z.step_count == 0);

    Rng ra(3, 1), rb(3, 1), rc(3, 2);
    ReservoirState s1 = init_state(r, StateInit::seeded_random, ra);
    ReservoirState s2 = init_state(r, StateInit::seeded_random, rb);
    ReservoirState s3 = init_state(r, StateInit::seeded_random, rc);
    CHECK(s1.x == s2.x);
    CHECK(s1.x != s3.x);
    CHECK(s1.x.minCoeff() >= -0.1);
    CHECK(s1.x.maxCoeff() <= 0.1);
}

TEST_CASE("step matches the leaky-integrator update exactly") {
    SECTION("alpha = 0 freezes the state") {
        Reservoir r = two_unit(0.0);
        ReservoirState s;
        s.x = Vec(2);
        s.x << 0.4, -0.6;
        Vec h(1);
        h << 2.0;
        ReservoirState out = step(r, s, h);
        CHECK(out.x == s.x);
        CHECK(out.step_count == 1);
        CHECK(s.step_count == 0);  // functional update
    }
    SECTION("alpha = 1 from zero is a pure tanh drive") {
        Reservoir r = two_unit(1.0);
        ReservoirState s;
        s.x = Vec::Zero(2);
        Vec h(1);
        h << 0.8;
        ReservoirState out = step(r, s, h);
        CHECK(out.x(0) == Catch::Approx(std::tanh(0.5 * 0.8 + 0.05)).epsilon(1e-14));
        CHECK(out.x(1) == Catch::Approx(std::tanh(-0.7 * 0.8 - 0.1)).epsilon(1e-14));
    }
    SECTION("hand-computed 2-unit trajectory within 1e-12") {
        Reservoir r = two_unit(0.5);
        ReservoirState s;
        s.x = Vec(2);
        s.x << 0.1, -0.2;
        Vec h(1);
        h << 1.5;
        // independent long-double evaluation of the same update
        long double x0 = 0.1L, x1 = -0.2L;
        long double p0 = 0.5L * 1.5L + 0.05L + 0.3L * x0 + (-0.2L) * x1;
        long double p1 = -0.7L * 1.5L - 0.1L + 0.1L * x0 + 0.4L * x1;
        long double e0 = 0.5L * x0 + 0.5L * tanhl(p0);
        long double e1 = 0.5L * x1 + 0.5L * tanhl(p1);
        ReservoirState out = step(r, s, h);
        CHECK(std::abs(out.x(0) - (double)e0) < 1e-12);
        CHECK(std::abs(out.x(1) - (double)e1) < 1e-12);

        // second step from the first
        long double q0 = 0.5L * 1.5L + 0.05L + 0.3L * e0 + (-0.2L) * e1;
        long double q1 = -0.7L * 1.5L - 0.1L + 0.1L * e0 + 0.4L * e1;
        long double f0 = 0.5L * e0 + 0.5L * tanhl(q0);
        long double f1 = 0.5L * e1 + 0.5L * tanhl(q1);
        ReservoirState out2 = step(r, out, h);
        CHECK(std::abs(out2.x(0) - (double)f0) < 1e-12);
        CHECK(std::abs(out2.x(1) - (double)f1) < 1e-12);
    }
    SECTION("dimension mismatch rejected") {
        Reservoir r = two_unit(0.5);
        ReservoirState s;
        s.x = Vec::Zero(2);
        Vec bad(3);
        bad.setZero();
        CHECK_THROWS_AS(step(r, s, bad), DimensionError);
    }
}

TEST_CASE("readout applies the configured activation") {
    Reservoir r = two_unit(0.5);
    ReservoirState s;
    s.x = Vec(2);
    s.x << 0.5, -0.5;

    r.config.readout_activation = Activation::relu;
    r.W_out = Mat::Zero(2, 2);
    r.theta_out = Mat::Zero(1, 2);
    CHECK(readout(r, s).cwiseAbs().maxCoeff() == 0.0);

    r.theta_out << -1.0, -2.0;
    CHECK(readout(r, s).cwiseAbs().maxCoeff() == 0.0);  // all-negative pre-acts

    r.config.readout_activation = Activation::linear;
    r.W_out << 1.0, 2.0, 3.0, 4.0;
    r.theta_out << 0.1, 0.2;
    Vec expect = r.W_out * s.x + r.theta_out.row(0).transpose();
    CHECK((readout(r, s) - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("fading memory: trajectories forget their initial state") {
    // every desk-scale member config
    auto configs = default_group_configs(true, 8, 6, 21);
    REQUIRE(configs.size() == 5);
    for (const auto& c : configs) {
        Reservoir r = build_reservoir(c);
        Rng ra(1, 10), rb(1, 11), rh(1, 12);
        ReservoirState sa = init_state(r, StateInit::seeded_random, ra);
        ReservoirState sb = init_state(r, StateInit::seeded_random, rb);
        REQUIRE((sa.x - sb.x).norm() > 1e-3);
        for (int t = 0; t < 200; ++t) {
            Vec h = uniform_matrix(rh, 8, 1, -1.0, 1.0).col(0);
            sa = step(r, sa, h);
            sb = step(r, sb, h);
        }
        INFO("size " << c.size << " rho " << c.spectral_radius);
        CHECK((sa.x - sb.x).norm() < 1e-6);
    }
}

TEST_CASE("state stays inside [-1, 1] from a bounded start") {
    Reservoir r = build_reservoir(small_config(5));
    Rng rng(2, 2), rh(2, 3);
    ReservoirState s = init_state(r, StateInit::seeded_random, rng);
    for (int t = 0; t < 300; ++t) {
        Vec h = gaussian_matrix(rh, 8, 1, 0.0, 3.0).col(0);
        s = step(r, s, h);
        REQUIRE(s.x.minCoeff() >= -1.0);
        REQUIRE(s.x.maxCoeff() <= 1.0);
    }
}

TEST_CASE("frozen weights survive many steps untouched") {
    Reservoir r = build_reservoir(small_config(31));
    Mat w = r.W, win = r.W_in;
    Vec th = r.theta;
    Rng rng(4, 4), rh(4, 5);
    ReservoirState s = init_state(r, StateInit::seeded_random, rng);
    for (int t = 0; t < 50; ++t)
        s = step(r, s, uniform_matrix(rh, 8, 1, -1.0, 1.0).col(0));
    CHECK(std::memcmp(r.W.data(), w.data(), sizeof(double) * w.size()) == 0);
    CHECK(std::memcmp(r.W_in.data(), win.data(), sizeof(double) * win.size()) == 0);
    CHECK(std::memcmp(r.theta.data(), th.data(), sizeof(double) * th.size()) == 0);
}

TEST_CASE("group_step and group_readout honor the ensemble contract") {
    auto configs = default_group_configs(true, 8, 6, 77);
    std::vector<Reservoir> members;
    for (const auto& c : configs) members.push_back(build_reservoir(c));
    GroupReservoir group(std::move(members), 2);

    Rng rng(8, 0), rh(8, 1);
    auto states = group.init_states(StateInit::seeded_random, rng);
    REQUIRE(states.size() == 5);

    Vec h = uniform_matrix(rh, 8, 1, -1.0, 1.0).col(0);
    auto next = group.group_step(states, h);

    // members stepped independently: each matches a standalone step
    for (int i = 0; i < 5; ++i) {
        ReservoirState ref = step(group.members()[i], states[i], h);
        CHECK((next[i].x - ref.x).cwiseAbs().maxCoeff() == 0.0);
    }

    // distinct configs -> distinct trajectories
    for (int i = 1; i < 5; ++i) CHECK(next[0].x.head(10) != next[i].x.head(10));

    Vec o = group.group_readout(next);
    CHECK(o.size() == 5 * 6);
    for (int i = 0; i < 5; ++i) {
        Vec r = readout(group.members()[i], next[i]);
        CHECK((o.segment(i * 6, 6) - r).cwiseAbs().maxCoeff() == 0.0);
    }

    std::vector<ReservoirState> wrong(states.begin(), states.begin() + 3);
    CHECK_THROWS_AS(group.group_step(wrong, h), DimensionError);
}

TEST_CASE("memory_tokens window shape, order and truncation") {
    auto configs = default_group_configs(true, 8, 6, 13);
    std::vector<Reservoir> members;
    for (const auto& c : configs) members.push_back(build_reservoir(c));
    GroupReservoir group(std::move(members), 2);

    Rng rng(5, 0), rh(5, 1);
    auto states = group.init_states(StateInit::zero, rng);
    CHECK_THROWS_AS(group.memory_tokens(), EmptyHistoryError);

    Vec h1 = uniform_matrix(rh, 8, 1, -1.0, 1.0).col(0);
    states = group.group_step(states, h1);
    Mat t1 = group.memory_tokens();
    CHECK(t1.rows() == 5);  // k=2 after a single step: L rows only
    CHECK(t1.cols() == 6);
    Vec o1 = group.group_readout(states);

    Vec h2 = uniform_matrix(rh, 8, 1, -1.0, 1.0).col(0);
    states = group.group_step(states, h2);
    Mat t2 = group.memory_tokens();
    CHECK(t2.rows() == 10);
    Vec o2 = group.group_readout(states);

    // oldest step first, member-minor within a step
    for (int i = 0; i < 5; ++i) {
        CHECK((t2.row(i).transpose() - o1.segment(i * 6, 6)).cwiseAbs().maxCoeff() <
              1e-15);
        CHECK((t2.row(5 + i).transpose() - o2.segment(i * 6, 6))
                  .cwiseAbs()
                  .maxCoeff() < 1e-15);
    }

    // window slides: a third step drops the first
    Vec h3 = uniform_matrix(rh, 8, 1, -1.0, 1.0).col(0);
    states = group.group_step(states, h3);
    Mat t3 = group.memory_tokens();
    CHECK(t3.rows() == 10);
    for (int i = 0; i < 5; ++i)
        CHECK((t3.row(i).transpose() - o2.segment(i * 6, 6)).cwiseAbs().maxCoeff() <
              1e-15);

    group.clear_history();
    CHECK_THROWS_AS(group.memory_tokens(), EmptyHistoryError);
}

TEST_CASE("k=1 memory tokens equal the current group readout") {
    auto configs = default_group_configs(true, 8, 6, 14);
    std::vector<Reservoir> members;
    for (const auto& c : configs) members.push_back(build_reservoir(c));
    GroupReservoir group(std::move(members), 1);

    Rng rng(6, 0), rh(6, 1);
    auto states = group.init_states(StateInit::seeded_random, rng);
    for (int t = 0; t < 3; ++t)
        states = group.group_step(states, uniform_matrix(rh, 8, 1, -1.0, 1.0).col(0));
    Mat toks = group.memory_tokens();
    Vec o = group.group_readout(states);
    REQUIRE(toks.rows() == 5);
    for (int i = 0; i < 5; ++i)
        CHECK((toks.row(i).transpose() - o.segment(i * 6, 6)).cwiseAbs().maxCoeff() <
              1e-15);
}

TEST_CASE("single-member group degenerates to the plain reservoir") {
    Reservoir r = build_reservoir(small_config(41));
    Reservoir copy = build_reservoir(small_config(41));
    GroupReservoir group({std::move(copy)}, 2);
    Rng rng(7, 0), rh(7, 1);
    auto states = group.init_states(StateInit::zero, rng);
    ReservoirState solo;
    solo.x = Vec::Zero(80);
    for (int t = 0; t < 4; ++t) {
        Vec h = uniform_matrix(rh, 8, 1, -1.0, 1.0).col(0);
        states = group.group_step(states, h);
        solo = step(r, solo, h);
    }
    CHECK((states[0].x - solo.x).cwiseAbs().maxCoeff() == 0.0);
    CHECK((group.group_readout(states) - readout(r, solo)).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("default group configs mirror the documented tables") {
    auto paper = default_group_configs(false, 128, 64, 1);
    REQUIRE(paper.size() == 5);
    CHECK(paper[0].size == 1500);
    CHECK(paper[4].size == 1900);
    CHECK(paper[0].spectral_radius == Catch::Approx(0.9));
    CHECK(paper[4].spectral_radius == Catch::Approx(0.7));
    CHECK(paper[0].leaky_alpha == Catch::Approx(0.48));
    CHECK(paper[4].leaky_alpha == Catch::Approx(0.52));
    CHECK(paper[0].sparsity == Catch::Approx(0.6));
    CHECK(paper[4].sparsity == Catch::Approx(0.4));

    auto desk = default_group_configs(true, 128, 64, 1);
    CHECK(desk[0].size == 60);
    CHECK(desk[4].size == 100);
    for (int i = 0; i < 5; ++i) {
        CHECK(desk[i].spectral_radius == paper[i].spectral_radius);
        CHECK(desk[i].leaky_alpha == paper[i].leaky_alpha);
        CHECK(desk[i].sparsity == paper[i].sparsity);
        CHECK(desk[i].input_dim == 128);
        CHECK(desk[i].readout_dim == 64);
    }
}

TEST_CASE("config validation rejects out-of-range values") {
    ReservoirConfig c = small_config();
    c.leaky_alpha = 1.5;
    CHECK_THROWS_AS(c.validate(), RangeError);
    c = small_config();
    c.spectral_radius = 0.0;
    CHECK_THROWS_AS(c.validate(), RangeError);
    c = small_config();
    c.size = 0;
    CHECK_THROWS_AS(c.validate(), DimensionError);
}
