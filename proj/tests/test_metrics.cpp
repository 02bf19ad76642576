#include <doctest.h>

#include <cmath>

#include "dyno/denoiser.hpp"
#include "dyno/metrics.hpp"
#include "dyno/ops.hpp"

using namespace dyno;

namespace {

/// Linear action map a = M v (ignores the noisy action and the step).
class LinearActionMap final : public DifferentiableActionDenoiser {
public:
    /// weights: [d_v, d_a] so the map matrix M (d_a x d_v) is its transpose
    explicit LinearActionMap(Tensor weights, int horizon, int dim)
        : horizon_(horizon), dim_(dim) {
        params_.add("w", std::move(weights));
    }

    Tensor predict_clean(const Tensor&, int, const Tensor& hidden,
                         const Tensor&) const override {
        const int dv = params_.value("w").dim(0);
        const Tensor out = ops::matmul(hidden.reshaped({1, dv}), params_.value("w"));
        return out.reshaped({horizon_, dim_});
    }

    ad::NodeId predict_clean_node(ad::Tape& t, ad::NodeId, int, ad::NodeId hidden,
                                  const Tensor&, bool bind) override {
        return t.matmul(hidden, bind ? t.param(params_, "w") : t.param_value(params_, "w"));
    }

    ParamSet& params() override { return params_; }
    const ParamSet& params() const override { return params_; }

private:
    int horizon_, dim_;
    ParamSet params_;
};

class ConstantActionMap final : public DifferentiableActionDenoiser {
public:
    ConstantActionMap(int horizon, int dim) : a0_({horizon, dim}) {}
    Tensor predict_clean(const Tensor&, int, const Tensor&, const Tensor&) const override {
        return a0_;
    }
    ad::NodeId predict_clean_node(ad::Tape& t, ad::NodeId, int, ad::NodeId,
                                  const Tensor&, bool) override {
        return t.constant(a0_.reshaped({1, static_cast<int>(a0_.size())}));
    }
    ParamSet& params() override { return params_; }
    const ParamSet& params() const override { return params_; }

private:
    Tensor a0_;
    ParamSet params_;
};

/// Classic Jacobi eigenvalue iteration for small symmetric matrices
/// (test-only oracle for the singular value solver).
std::vector<double> sym_eigenvalues(std::vector<std::vector<double>> a) {
    const int n = static_cast<int>(a.size());
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-24) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = 0.5 * std::atan2(2.0 * a[p][q], a[p][p] - a[q][q]);
                const double c = std::cos(theta), s = std::sin(theta);
                for (int k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp + s * akq;
                    a[k][q] = -s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk + s * aqk;
                    a[q][k] = -s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = a[i][i];
    std::sort(ev.begin(), ev.end(), std::greater<double>());
    return ev;
}

}  // namespace

TEST_CASE("effective rank closed forms and guards") {
    CHECK(effective_rank({1.0, 1.0, 1.0}) == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(effective_rank({1.0, 0.0, 0.0}) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(effective_rank({3.0, 1.0}) == doctest::Approx(1.6).epsilon(1e-14));
    CHECK_THROWS_AS(effective_rank({0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(effective_rank({1.0, -0.5}), std::invalid_argument);
}

TEST_CASE("effective rank is scale invariant and bounded by the nonzero count") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(6);
        int nonzero = 0;
        for (double& v : s) {
            v = rng.uniform() < 0.3 ? 0.0 : std::abs(rng.normal());
            nonzero += v > 0.0 ? 1 : 0;
        }
        if (nonzero == 0) s[0] = 1.0, nonzero = 1;
        const double er = effective_rank(s);
        CHECK(er >= 1.0 - 1e-12);
        CHECK(er <= nonzero + 1e-12);
        std::vector<double> scaled = s;
        for (double& v : scaled) v *= 7.5;
        CHECK(effective_rank(scaled) == doctest::Approx(er).epsilon(1e-12));
    }
}

TEST_CASE("singular values: identity, diagonal, random cross-check") {
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
    const std::vector<double> sv = svd_values(eye);
    for (double v : sv) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

    Tensor diag({2, 2});
    diag[0] = 3.0;
    diag[3] = 1.0;
    const std::vector<double> sd = svd_values(diag);
    CHECK(sd[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(sd[1] == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(6);
    const Tensor a = rng.normal_tensor({5, 7});
    const std::vector<double> s = svd_values(a);
    REQUIRE(s.size() == 5);
    // squared singular values equal the eigenvalues of A A^T
    std::vector<std::vector<double>> aat(5, std::vector<double>(5, 0.0));
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            for (int k = 0; k < 7; ++k) aat[i][j] += a[i * 7 + k] * a[j * 7 + k];
    const std::vector<double> ev = sym_eigenvalues(aat);
    for (int i = 0; i < 5; ++i)
        CHECK(s[i] * s[i] == doctest::Approx(ev[i]).epsilon(1e-8));

    Tensor bad({2, 2});
    bad[0] = std::nan("");
    CHECK_THROWS_AS(svd_values(bad), std::invalid_argument);
}

TEST_CASE("singular value energy is preserved on matrices up to 64x256") {
    Rng rng(7);
    for (auto [m, n] : {std::pair{8, 16}, std::pair{64, 256}, std::pair{16, 4}}) {
        const Tensor a = rng.normal_tensor({m, n});
        const std::vector<double> s = svd_values(a);
        CHECK(s.size() == static_cast<std::size_t>(std::min(m, n)));
        double energy = 0.0;
        for (double v : s) {
            CHECK(v >= 0.0);
            energy += v * v;
        }
        const double frob = ops::sum_sq(a);
        CHECK(energy == doctest::Approx(frob).epsilon(1e-8));
        for (std::size_t i = 0; i + 1 < s.size(); ++i) CHECK(s[i] >= s[i + 1]);
    }
}

TEST_CASE("jacobian of a linear action map equals its matrix in both modes") {
    Rng rng(8);
    const int dv = 6, horizon = 4, dim = 2, da = horizon * dim;
    const Tensor w = rng.normal_tensor({dv, da});
    LinearActionMap lin(w, horizon, dim);
    const Tensor h = rng.normal_tensor({dv});
    const Tensor instr = instruction_one_hot(0, 2);
    const Tensor eps = rng.normal_tensor({horizon, dim});
    const ActionNoiseSchedule sched = ActionNoiseSchedule::linear(20);

    for (JacobianMode mode : {JacobianMode::ReverseMode, JacobianMode::FiniteDifference}) {
        const Tensor jac = action_jacobian(lin, h, instr, sched, 5, eps, mode);
        REQUIRE(jac.dim(0) == da);
        REQUIRE(jac.dim(1) == dv);
        for (int a = 0; a < da; ++a)
            for (int v = 0; v < dv; ++v)
                CHECK(jac[a * dv + v] == doctest::Approx(w[v * da + a]).epsilon(1e-6));
    }
    CHECK_THROWS_AS(
        action_jacobian(lin, h, instr, sched, 5, eps, JacobianMode::FiniteDifference, 0.0),
        std::invalid_argument);
}

TEST_CASE("jacobian of a constant action map is zero") {
    ConstantActionMap cam(4, 2);
    Rng rng(9);
    const Tensor h = rng.normal_tensor({6});
    const Tensor eps = rng.normal_tensor({4, 2});
    const ActionNoiseSchedule sched = ActionNoiseSchedule::linear(20);
    const Tensor jac = action_jacobian(cam, h, instruction_one_hot(0, 2), sched, 5, eps,
                                       JacobianMode::ReverseMode);
    for (std::int64_t i = 0; i < jac.size(); ++i) CHECK(jac[i] == 0.0);
}

TEST_CASE("finite differences and reverse mode agree on a nonlinear action net") {
    ActionArch arch;
    arch.horizon = 3;
    arch.action_dim = 2;
    arch.hidden_dim = 8;
    arch.instr_dim = 2;
    arch.h1 = 16;
    arch.h2 = 8;
    ActionMlp net(arch);
    Rng rng(10);
    net.init_params(rng);
    const Tensor h = rng.normal_tensor({8});
    const Tensor instr = instruction_one_hot(1, 2);
    const Tensor eps = rng.normal_tensor({3, 2});
    const ActionNoiseSchedule sched = ActionNoiseSchedule::linear(20);
    const Tensor jr = action_jacobian(net, h, instr, sched, 3, eps, JacobianMode::ReverseMode);
    const Tensor jf =
        action_jacobian(net, h, instr, sched, 3, eps, JacobianMode::FiniteDifference, 1e-4);
    const double rel = ops::l2_norm(ops::sub(jr, jf)) / (ops::l2_norm(jr) + 1e-30);
    CHECK(rel < 1e-3);
}

TEST_CASE("l1_eval: zero for an oracle, positive and stable otherwise") {
    WorldConfig wc;
    wc.frames = 4;
    wc.frame_size = 8;
    wc.modes = 2;
    wc.horizon = 3;
    Dataset single;
    single.config = wc;
    single.episodes.push_back(gen_episode(3, 0, wc));
    const NoiseSchedule sched = karras_schedule(5, 0.05, 4.0, 7.0);
    const SeedSplitter seeds(12);

    const ConstantDenoiser oracle(single.episodes[0].expert_latent);
    CHECK(l1_eval(oracle, single, sched, seeds) < 1e-9);

    DenoiserArch arch = DenoiserArch::for_world(wc);
    arch.cond_hidden = 8;
    arch.frame_hidden = 16;
    arch.mix_hidden = 8;
    MlpDenoiser net(arch);
    Rng rng(13);
    net.init_params(rng);
    const Dataset ds = make_dataset(4, 14, wc);
    const double v1 = l1_eval(net, ds, sched, seeds);
    const double v2 = l1_eval(net, ds, sched, seeds);
    CHECK(v1 == v2);
    CHECK(v1 > 0.0);
}

TEST_CASE("er report on a linear action map matches the analytic effective rank") {
    WorldConfig wc;
    wc.frames = 4;
    wc.frame_size = 8;
    wc.modes = 2;
    wc.horizon = 3;
    const Dataset ds = make_dataset(3, 15, wc);
    DenoiserArch varch = DenoiserArch::for_world(wc);
    varch.cond_hidden = 8;
    varch.frame_hidden = 16;
    varch.mix_hidden = 8;
    MlpDenoiser vpm(varch);
    Rng rng(16);
    vpm.init_params(rng);

    const int dv = varch.hidden_dim(), da = wc.horizon * wc.action_dim;
    const Tensor w = rng.normal_tensor({dv, da});
    LinearActionMap lin(w, wc.horizon, wc.action_dim);
    const NoiseSchedule sched = karras_schedule(5, 0.05, 4.0, 7.0);
    const ActionNoiseSchedule asched = ActionNoiseSchedule::linear(20);

    const ErReport report = er_report(lin, vpm, ds, sched, asched, 5, SeedSplitter(17));
    const double expect = effective_rank(svd_values(w));
    CHECK(report.avg_er == doctest::Approx(expect).epsilon(1e-6));
    CHECK(report.d_a == da);
    CHECK(report.d_v == dv);
    CHECK(report.avg_er >= 1.0);
    CHECK(report.avg_er <= std::min(da, dv));
    CHECK(report.avg_err > 0.0);
    CHECK(report.avg_err <= 1.0);
    CHECK(report.avg_err == doctest::Approx(report.avg_er / std::min(da, dv)).epsilon(1e-12));
    CHECK(report.per_episode_er.size() == ds.size());
}
