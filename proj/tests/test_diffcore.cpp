#include <doctest.h>

#include <cmath>

#include "dyno/autodiff.hpp"
#include "dyno/ops.hpp"
#include "dyno/params.hpp"
#include "dyno/rng.hpp"

using namespace dyno;

TEST_CASE("forward: identity and affine graphs") {
    ad::Tape t(true);
    const Tensor x({3}, {1.0, -2.0, 3.0});
    ad::NodeId xi = t.constant(x);
    CHECK(t.val(xi)[0] == 1.0);
    CHECK(t.val(xi)[2] == 3.0);

    // affine with zero weights returns the bias
    ParamSet ps;
    ps.add("w", Tensor({2, 2}));
    ps.add("b", Tensor({2}, {0.5, -0.25}));
    ad::Tape t2(true);
    ad::NodeId in = t2.constant(Tensor({1, 2}, {7.0, 9.0}));
    ad::NodeId out = t2.add_rowvec(t2.matmul(in, t2.param(ps, "w")), t2.param(ps, "b"));
    CHECK(t2.val(out)[0] == 0.5);
    CHECK(t2.val(out)[1] == -0.25);
}

TEST_CASE("forward is bit-stable across calls") {
    Rng rng(3);
    ParamSet ps;
    ps.add("w", rng.normal_tensor({4, 3}));
    const Tensor x = rng.normal_tensor({2, 4});
    auto run = [&]() {
        ad::Tape t(true);
        return t.val(t.tanh_(t.matmul(t.constant(x), t.param(ps, "w"))));
    };
    const Tensor a = run(), b = run();
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("backward: sum gives all-ones gradient") {
    ad::Tape t(true);
    ad::NodeId x = t.leaf(Tensor({4}, {1.0, 2.0, 3.0, 4.0}));
    ad::NodeId l = t.sum(x);
    t.backward_scalar(l);
    for (int i = 0; i < 4; ++i) CHECK(t.grad(x)[i] == 1.0);
}

TEST_CASE("backward: grad of 0.5*|Wx|^2 is (Wx) x^T") {
    // hand formula on a 2x2 case
    ParamSet ps;
    ps.add("w", Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));  // row-major [[1,2],[3,4]]
    const Tensor x({2, 1}, {1.0, -1.0});
    ad::Tape t(true);
    ad::NodeId y = t.matmul(t.param(ps, "w"), t.constant(x));  // Wx = [-1, -1]^T
    ad::NodeId l = t.scale(t.sum_sq(y), 0.5);
    t.backward_scalar(l);
    // dL/dW = (Wx) x^T = [[-1, 1], [-1, 1]]
    CHECK(ps.grad("w")[0] == doctest::Approx(-1.0));
    CHECK(ps.grad("w")[1] == doctest::Approx(1.0));
    CHECK(ps.grad("w")[2] == doctest::Approx(-1.0));
    CHECK(ps.grad("w")[3] == doctest::Approx(1.0));
}

TEST_CASE("backward: zero output grad adds nothing") {
    ParamSet ps;
    ps.add("w", Tensor({2}, {1.0, 2.0}));
    ad::Tape t(true);
    ad::NodeId l = t.sum_sq(t.param(ps, "w"));
    t.backward(l, Tensor::scalar(0.0));
    CHECK(ps.grad("w")[0] == 0.0);
    CHECK(ps.grad("w")[1] == 0.0);
}

TEST_CASE("backward accumulation is linear") {
    ParamSet ps;
    ps.add("w", Tensor({2}, {0.5, 0.25}));  // powers of two keep arithmetic exact
    auto grads_after = [&](const std::vector<double>& seeds) {
        ps.zero_grads();
        ad::Tape t(true);
        ad::NodeId l = t.sum_sq(t.param(ps, "w"));
        for (double s : seeds) t.backward(l, Tensor::scalar(s));
        return std::make_pair(ps.grad("w")[0], ps.grad("w")[1]);
    };
    const auto two = grads_after({1.0, 2.0});
    const auto one = grads_after({3.0});
    CHECK(two.first == one.first);
    CHECK(two.second == one.second);
}

TEST_CASE("backward on a value-only tape is a precondition error") {
    ad::Tape t(false);
    ad::NodeId x = t.constant(Tensor::scalar(1.0));
    CHECK_THROWS_AS(t.backward_scalar(x), std::runtime_error);
}

TEST_CASE("elementwise op gradients: minimum, clamp, exp") {
    ad::Tape t(true);
    ad::NodeId a = t.leaf(Tensor({2}, {1.0, 5.0}));
    ad::NodeId b = t.leaf(Tensor({2}, {2.0, 3.0}));
    ad::NodeId m = t.minimum(a, b);
    t.backward(m, Tensor({2}, {1.0, 1.0}));
    CHECK(t.grad(a)[0] == 1.0);  // a smaller
    CHECK(t.grad(a)[1] == 0.0);
    CHECK(t.grad(b)[1] == 1.0);  // b smaller

    ad::Tape t2(true);
    ad::NodeId x = t2.leaf(Tensor({3}, {0.5, 1.5, -0.5}));
    ad::NodeId c = t2.clamp(x, 0.0, 1.0);
    CHECK(t2.val(c)[1] == 1.0);
    t2.backward(c, Tensor({3}, {1.0, 1.0, 1.0}));
    CHECK(t2.grad(x)[0] == 1.0);
    CHECK(t2.grad(x)[1] == 0.0);  // outside the clamp window
    CHECK(t2.grad(x)[2] == 0.0);

    ad::Tape t3(true);
    ad::NodeId e = t3.leaf(Tensor::scalar(0.7));
    ad::NodeId y = t3.exp_(e);
    t3.backward_scalar(y);
    CHECK(t3.grad(e).item() == doctest::Approx(std::exp(0.7)));
}

TEST_CASE("grad_check: quadratic loss and constant loss") {
    Rng rng(11);
    ParamSet ps;
    ps.add("w", rng.normal_tensor({6}));
    auto quad = [&](bool with_grad) {
        if (with_grad) {
            ps.zero_grads();
            ad::Tape t(true);
            ad::NodeId l = t.sum_sq(t.param(ps, "w"));
            t.backward_scalar(l);
            return t.val(l).item();
        }
        return ops::sum_sq(ps.value("w"));
    };
    CHECK(grad_check(quad, ps, 1e-5, 6, rng) < 1e-7);

    auto constant = [&](bool with_grad) {
        if (with_grad) ps.zero_grads();
        return 4.2;
    };
    CHECK(grad_check(constant, ps, 1e-5, 6, rng) == 0.0);
    CHECK_THROWS_AS(grad_check(constant, ps, 1e-2, 6, rng), std::invalid_argument);
}

TEST_CASE("grad_check over a small mixed-op network") {
    Rng rng(21);
    ParamSet ps;
    ps.add("w1", rng.normal_tensor({5, 4}));
    ps.add("b1", rng.normal_tensor({4}));
    ps.add("w2", rng.normal_tensor({4, 2}));
    const Tensor x = rng.normal_tensor({3, 5});
    auto build = [&](ad::Tape& t) {
        ad::NodeId h = t.tanh_(t.add_rowvec(t.matmul(t.constant(x), t.param(ps, "w1")),
                                            t.param(ps, "b1")));
        ad::NodeId pooled = t.mean_rows(h);
        ad::NodeId out = t.matmul(t.reshape(pooled, {1, 4}), t.param(ps, "w2"));
        return t.sum_sq(t.concat_cols({out, t.broadcast_row(pooled, 1)}));
    };
    auto loss = [&](bool with_grad) {
        if (with_grad) {
            ps.zero_grads();
            ad::Tape t(true);
            ad::NodeId l = build(t);
            t.backward_scalar(l);
            return t.val(l).item();
        }
        ad::Tape t(false);
        return t.val(build(t)).item();
    };
    CHECK(grad_check(loss, ps, 1e-5, 30, rng) < 1e-7);
}

TEST_CASE("adam: zero grads leave params unchanged") {
    ParamSet ps;
    ps.add("w", Tensor({2}, {1.0, 2.0}));
    AdamState adam(ps, AdamConfig{});
    adam.step(ps);
    CHECK(ps.value("w")[0] == 1.0);
    CHECK(ps.value("w")[1] == 2.0);
    CHECK(adam.step_count() == 1);
}

TEST_CASE("adam: first bias-corrected step moves by about lr") {
    ParamSet ps;
    ps.add("w", Tensor({1}, {0.0}));
    AdamConfig cfg;
    cfg.lr = 0.1;
    AdamState adam(ps, cfg);
    ps.grad("w")[0] = 1.0;
    adam.step(ps);
    CHECK(ps.value("w")[0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(ps.grad("w")[0] == 0.0);  // grads zeroed afterward
}

TEST_CASE("adam rejects non-finite gradients") {
    ParamSet ps;
    ps.add("w", Tensor({1}, {0.0}));
    AdamState adam(ps, AdamConfig{});
    ps.grad("w")[0] = std::nan("");
    CHECK_THROWS_AS(adam.step(ps), std::runtime_error);
}

TEST_CASE("param set rejects duplicates and unknown names") {
    ParamSet ps;
    ps.add("w", Tensor({1}));
    CHECK_THROWS_AS(ps.add("w", Tensor({1})), std::invalid_argument);
    CHECK_THROWS_AS(ps.value("nope"), std::invalid_argument);
}
