#include <doctest.h>

#include <cmath>

#include "dyno/denoiser.hpp"
#include "dyno/metrics.hpp"
#include "dyno/ops.hpp"
#include "dyno/rl.hpp"
#include "test_doubles.hpp"

using namespace dyno;
using dyno::testing::AffineDenoiser;

namespace {

WorldConfig tiny_world() {
    WorldConfig cfg;
    cfg.frames = 4;
    cfg.frame_size = 8;
    cfg.modes = 2;
    cfg.horizon = 3;
    return cfg;
}

MlpDenoiser make_net(const WorldConfig& wc, std::uint64_t seed = 5) {
    DenoiserArch arch = DenoiserArch::for_world(wc);
    arch.cond_hidden = 8;
    arch.frame_hidden = 16;
    arch.mix_hidden = 8;
    MlpDenoiser net(arch);
    Rng rng(seed);
    net.init_params(rng);
    return net;
}

/// One-element hand-crafted trajectory whose single stochastic step has
/// sigma_i=2, sigma_im1=1, state 0 and the given action, rolled out under an
/// all-zero affine policy (so the old mean is exactly 0).
DenoiseTrajectory crafted_trajectory(double action_value) {
    DenoiseTrajectory traj;
    traj.condition.observation = Tensor({1});
    traj.condition.instruction = Tensor({1}, {1.0});
    traj.sigmas = {2.0, 1.0, 0.0};
    traj.step_stochastic = {true, false};
    StochasticStep st;
    st.position = 0;
    st.sigma_i = 2.0;
    st.sigma_im1 = 1.0;
    st.sigma_up = ancestral_coeffs(2.0, 1.0).sigma_up;
    st.state = Tensor({1});
    const AffineDenoiser old_net(0.0, 0.0);
    const Tensor denoised = old_net.denoise(st.state, 2.0, traj.condition).x0_pred;
    AncestralStepResult r =
        euler_ancestral_step(st.state, 2.0, 1.0, denoised, Tensor({1}));
    st.mean = r.transition.mean;
    st.action = Tensor({1}, {action_value});
    traj.stochastic.push_back(st);
    traj.final_latent = Tensor({1});
    return traj;
}

RolloutGroup crafted_group(double action_value, double advantage) {
    RolloutGroup g;
    g.condition.observation = Tensor({1});
    g.condition.instruction = Tensor({1}, {1.0});
    g.trajectories.push_back(crafted_trajectory(action_value));
    const StochasticStep& st = g.trajectories[0].stochastic[0];
    g.old_logps.push_back({gaussian_log_prob(st.action, {st.mean, st.sigma_up})});
    g.rewards.push_back(0.0);
    g.advantages.push_back(advantage);
    return g;
}

}  // namespace

TEST_CASE("latent reward closed forms") {
    const RewardWeights w;
    Rng rng(3);
    const Tensor x0 = rng.normal_tensor({8});
    CHECK(latent_reward(x0, x0, w) == doctest::Approx(1.0).epsilon(1e-12));

    const Tensor ones = Tensor::full({8}, 1.0);
    const Tensor twice = Tensor::full({8}, 2.0);
    CHECK(latent_reward(twice, ones, w) == doctest::Approx(0.0).epsilon(1e-9));

    const Tensor e1({2}, {1.0, 0.0});
    const Tensor e2({2}, {0.0, 1.0});
    CHECK(latent_reward(e2, e1, w) == doctest::Approx(-1.0).epsilon(1e-12));

    CHECK_THROWS_AS(latent_reward(x0, Tensor({8}), w), std::invalid_argument);
    // all-zero prediction: cosine collapses to 0 through the guard
    CHECK(latent_reward(Tensor({8}), ones, w) ==
          doctest::Approx(-1.0).epsilon(1e-9));
    RewardWeights zero;
    zero.lambda_l1 = 0.0;
    zero.lambda_cos = 0.0;
    CHECK_THROWS_AS(latent_reward(x0, ones, zero), std::invalid_argument);
}

TEST_CASE("pixel reward equals the latent formula on decoded tensors") {
    const RewardWeights w;
    Tensor fa({1, 8, 8}), fb({1, 8, 8});
    fa[0] = 1.0;
    fb[2 * 8 + 2] = 1.0;  // disjoint support -> orthogonal decoded frames
    const Tensor la = encode_frames(fa);
    const Tensor lb = encode_frames(fb);
    CHECK(pixel_reward(la, la, w) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pixel_reward(lb, la, w) ==
          doctest::Approx(latent_reward(decode_latent(lb), decode_latent(la), w)).epsilon(1e-15));
    RewardWeights cos_only;
    cos_only.lambda_l1 = 0.0;
    CHECK(pixel_reward(lb, la, cos_only) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("group advantages: hand values, degenerate group, invariances") {
    const std::vector<double> a = group_advantages({1.0, 2.0, 3.0});
    CHECK(a[0] == doctest::Approx(-1.2247448713915890).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(a[2] == doctest::Approx(1.2247448713915890).epsilon(1e-12));

    const std::vector<double> z = group_advantages({0.7, 0.7, 0.7, 0.7});
    for (double v : z) CHECK(v == 0.0);

    CHECK_THROWS_AS(group_advantages({1.0}), std::invalid_argument);

    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> r(8);
        for (double& v : r) v = rng.normal();
        const std::vector<double> adv = group_advantages(r);
        double mean = 0.0, var = 0.0;
        for (double v : adv) mean += v;
        mean /= 8.0;
        for (double v : adv) var += (v - mean) * (v - mean);
        var /= 8.0;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);

        // shift and positive-scale invariance
        std::vector<double> shifted(8), scaled(8);
        const double c1 = rng.normal(), c2 = 0.1 + std::abs(rng.normal());
        for (int i = 0; i < 8; ++i) {
            shifted[i] = r[i] + c1;
            scaled[i] = c1 + c2 * r[i];
        }
        const std::vector<double> adv_s = group_advantages(shifted);
        const std::vector<double> adv_c = group_advantages(scaled);
        for (int i = 0; i < 8; ++i) {
            CHECK(adv_s[i] == doctest::Approx(adv[i]).epsilon(1e-9));
            CHECK(adv_c[i] == doctest::Approx(adv[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("importance ratio is exactly 1 on-policy and continuous off-policy") {
    const WorldConfig wc = tiny_world();
    MlpDenoiser net = make_net(wc);
    const Episode ep = gen_episode(1, 0, wc);
    const NoiseSchedule sched = karras_schedule(5, 0.05, 4.0, 7.0);
    const SeedSplitter seeds(11);
    const RolloutGroup g = make_rollout_group(net, ep, sched, 2, 1, RewardKind::Latent,
                                              RewardWeights{}, seeds, 0, 0);
    CHECK(importance_ratio(g.trajectories[0], net, net) == 1.0);
    CHECK(importance_ratio(g.trajectories[1], net, net) == 1.0);

    double prev = 1e9;
    for (double delta : {1e-2, 1e-3, 1e-4}) {
        MlpDenoiser bumped = net;
        bumped.params().value("b_out")[0] += delta;
        const double rho = importance_ratio(g.trajectories[0], bumped, net);
        CHECK(rho > 0.0);
        CHECK(std::abs(rho - 1.0) < prev);
        prev = std::abs(rho - 1.0);
    }
    CHECK_THROWS_AS(importance_ratio(g.trajectories[0], net, net, 7), std::invalid_argument);
}

TEST_CASE("old-policy log-probs stored in groups match the density recomputed under the snapshot") {
    const WorldConfig wc = tiny_world();
    MlpDenoiser net = make_net(wc);
    const Episode ep = gen_episode(6, 1, wc);
    const NoiseSchedule sched = karras_schedule(5, 0.05, 4.0, 7.0);
    const RolloutGroup g = make_rollout_group(net, ep, sched, 3, 1, RewardKind::Latent,
                                              RewardWeights{}, SeedSplitter(4), 2, 1);
    for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
        const StochasticStep& st = g.trajectories[i].first_step();
        const Tensor denoised = net.denoise(st.state, st.sigma_i, ep.condition).x0_pred;
        const AncestralStepResult r = euler_ancestral_step(
            st.state, st.sigma_i, st.sigma_im1, denoised, Tensor(st.state.shape()));
        const double lp = gaussian_log_prob(st.action, {r.transition.mean, st.sigma_up});
        CHECK(lp == g.old_logps[i][0]);
    }
}

TEST_CASE("on-policy objective is zero with unit ratios") {
    const WorldConfig wc = tiny_world();
    MlpDenoiser net = make_net(wc);
    const NoiseSchedule sched = karras_schedule(5, 0.05, 4.0, 7.0);
    const SeedSplitter seeds(21);
    std::vector<RolloutGroup> groups;
    for (int b = 0; b < 3; ++b) {
        const Episode ep = gen_episode(30 + b, b % wc.modes, wc);
        groups.push_back(make_rollout_group(net, ep, sched, 4, 1, RewardKind::Latent,
                                            RewardWeights{}, seeds, 0, b));
        groups.back().advantages = group_advantages(groups.back().rewards);
    }
    const ObjectiveStats s = grpo_objective(groups, net, net, ClipConfig{0.2});
    CHECK(std::abs(s.value) < 1e-12);
    CHECK(s.ratio_mean == 1.0);
    CHECK(s.ratio_max == 1.0);
    CHECK(s.clip_fraction == 0.0);
}

TEST_CASE("clip cases: rho=1.5/A=1 -> 1.2 and rho=0.5/A=-1 -> -0.8") {
    // positive advantage, ratio above the clip window
    {
        std::vector<RolloutGroup> groups{crafted_group(2.0, 1.0)};
        AffineDenoiser up(0.0, 0.211);  // pushes the new mean toward the action
        const ObjectiveStats s = grpo_objective(groups, up, up, ClipConfig{0.2});
        CHECK(s.ratio_mean == doctest::Approx(1.5).epsilon(2e-3));
        CHECK(s.ratio_mean > 1.2);
        CHECK(s.value == 1.2);  // clip binds exactly
        CHECK(s.clip_fraction == 1.0);
    }
    // negative advantage, ratio below the clip window
    {
        std::vector<RolloutGroup> groups{crafted_group(2.0, -1.0)};
        AffineDenoiser down(0.0, -0.5);
        const ObjectiveStats s = grpo_objective(groups, down, down, ClipConfig{0.2});
        CHECK(s.ratio_mean < 0.8);
        CHECK(s.value == -0.8);
    }
    // missing advantages are a precondition error
    {
        std::vector<RolloutGroup> groups{crafted_group(2.0, 1.0)};
        groups[0].advantages.clear();
        AffineDenoiser net(0.0, 0.0);
        CHECK_THROWS_AS(grpo_objective(groups, net, net, ClipConfig{0.2}), std::logic_error);
    }
}

TEST_CASE("clipped terms respect the clip bound for random ratios and advantages") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const double rho = std::exp(rng.uniform(-1.0, 1.0));
        const double adv = rng.normal();
        const double eps_c = 0.2;
        ad::Tape t(true);
        ad::NodeId r = t.constant(Tensor::scalar(rho));
        ad::NodeId term =
            t.minimum(t.scale(r, adv), t.scale(t.clamp(r, 1.0 - eps_c, 1.0 + eps_c), adv));
        const double v = t.val(term).item();
        const double clipped = std::clamp(rho, 1.0 - eps_c, 1.0 + eps_c) * adv;
        CHECK(v == std::min(rho * adv, clipped));
        CHECK(std::abs(v) <= std::max(std::abs(rho * adv), (1.0 + eps_c) * std::abs(adv)) + 1e-15);
    }
}

TEST_CASE("objective gradient matches central differences on a two-parameter policy") {
    // trajectories frozen under the snapshot; J depends on theta only via rho
    const NoiseSchedule sched = karras_schedule(4, 0.1, 3.0, 7.0);
    AffineDenoiser policy_old(0.3, -0.1);
    WorldConfig wc = tiny_world();
    const Episode ep = gen_episode(3, 0, wc);
    const SeedSplitter seeds(9);
    std::vector<RolloutGroup> groups;
    groups.push_back(make_rollout_group(policy_old, ep, sched, 4, 1, RewardKind::Latent,
                                        RewardWeights{}, seeds, 0, 0));
    groups[0].advantages = group_advantages(groups[0].rewards);

    AffineDenoiser policy(0.3, -0.1);
    auto loss = [&](bool with_grad) {
        if (with_grad) {
            policy.params().zero_grads();
            ad::Tape t(true);
            ad::NodeId j = grpo_objective_node(t, groups, policy, ClipConfig{0.2}, true);
            t.backward_scalar(j);
            return t.val(j).item();
        }
        ad::Tape t(false);
        return t.val(grpo_objective_node(t, groups, policy, ClipConfig{0.2}, false)).item();
    };
    Rng rng(33);
    CHECK(grad_check(loss, policy.params(), 1e-5, 2, rng) < 1e-3);
}

TEST_CASE("ddpo centering: converged baseline zeroes the gradient, grpo differs when std != 1") {
    std::vector<RolloutGroup> groups{crafted_group(2.0, 0.0)};
    groups[0].trajectories.push_back(crafted_trajectory(-1.0));
    const StochasticStep& st = groups[0].trajectories[1].stochastic[0];
    groups[0].old_logps.push_back({gaussian_log_prob(st.action, {st.mean, st.sigma_up})});
    groups[0].advantages.clear();

    AffineDenoiser net(0.0, 0.0);

    // constant rewards with a converged baseline: zero advantages, zero gradient
    groups[0].rewards = {0.5, 0.5};
    const ObjectiveStats s0 = ddpo_objective(groups, net, net, 0.5, ClipConfig{0.2});
    CHECK(s0.value == 0.0);
    net.params().zero_grads();
    ad::Tape t(true);
    ad::NodeId j = ddpo_objective_node(t, groups, net, 0.5, ClipConfig{0.2}, true);
    t.backward_scalar(j);
    CHECK(net.params().grad("w")[0] == 0.0);
    CHECK(net.params().grad("b")[0] == 0.0);

    // on-policy: ddpo objective equals the mean centered reward
    groups[0].rewards = {0.0, 1.0};
    const ObjectiveStats sd = ddpo_objective(groups, net, net, 0.25, ClipConfig{0.2});
    CHECK(sd.value == doctest::Approx((0.0 - 0.25 + 1.0 - 0.25) / 2.0).epsilon(1e-12));

    // same rollouts, evaluated off-policy so the ratios bite:
    // population std 1 ({0,2} with baseline 1) -> identical objectives,
    // std != 1 ({0,1} with baseline 0.5) -> they differ
    AffineDenoiser moved(0.0, 0.2);
    groups[0].rewards = {0.0, 2.0};
    groups[0].advantages = group_advantages(groups[0].rewards);
    const ObjectiveStats g1 = grpo_objective(groups, moved, net, ClipConfig{0.2});
    const ObjectiveStats d1 = ddpo_objective(groups, moved, net, 1.0, ClipConfig{0.2});
    CHECK(g1.value == doctest::Approx(d1.value).epsilon(1e-12));
    CHECK(g1.value != 0.0);

    groups[0].rewards = {0.0, 1.0};
    groups[0].advantages = group_advantages(groups[0].rewards);
    const ObjectiveStats g2 = grpo_objective(groups, moved, net, ClipConfig{0.2});
    const ObjectiveStats d2 = ddpo_objective(groups, moved, net, 0.5, ClipConfig{0.2});
    CHECK(g2.value != doctest::Approx(d2.value).epsilon(1e-9));
}

TEST_CASE("train step: defaults, zero-lr stability, determinism") {
    PosttrainConfig defaults;
    CHECK(defaults.group_size == 8);
    CHECK(defaults.epsilon_c == 0.2);
    CHECK(defaults.lr == 1e-6);
    CHECK(defaults.batch_size == 8);
    CHECK(defaults.weights.lambda_l1 == 1.0);
    CHECK(defaults.weights.lambda_cos == 1.0);

    const WorldConfig wc = tiny_world();
    const Dataset ds = make_dataset(4, 44, wc);
    const NoiseSchedule sched = karras_schedule(4, 0.05, 4.0, 7.0);
    PosttrainConfig cfg;
    cfg.group_size = 4;
    cfg.batch_size = 2;
    cfg.lr = 0.0;
    cfg.steps = 1;

    MlpDenoiser net = make_net(wc, 3);
    const Tensor w_before = net.params().value("w_out");
    AdamConfig ac;
    ac.lr = cfg.lr;
    AdamState adam(net.params(), ac);
    const SeedSplitter seeds(5);
    const GrpoStepStats s1 =
        grpo_train_step(net, net, ds, sched, cfg, adam, seeds, 0, nullptr);
    CHECK(std::isfinite(s1.mean_reward));
    CHECK(s1.ratio_mean == 1.0);
    for (std::int64_t i = 0; i < w_before.size(); ++i)
        CHECK(net.params().value("w_out")[i] == w_before[i]);

    AdamState adam2(net.params(), ac);
    const GrpoStepStats s2 =
        grpo_train_step(net, net, ds, sched, cfg, adam2, seeds, 0, nullptr);
    CHECK(s1.mean_reward == s2.mean_reward);
    CHECK(s1.mean_abs_adv == s2.mean_abs_adv);
    CHECK(s1.objective == s2.objective);
}

TEST_CASE("rollout groups share the initial noise across a group") {
    const WorldConfig wc = tiny_world();
    MlpDenoiser net = make_net(wc);
    const Episode ep = gen_episode(2, 0, wc);
    const NoiseSchedule sched = karras_schedule(4, 0.05, 4.0, 7.0);
    const RolloutGroup g = make_rollout_group(net, ep, sched, 3, 1, RewardKind::Latent,
                                              RewardWeights{}, SeedSplitter(6), 1, 0);
    for (const DenoiseTrajectory& traj : g.trajectories)
        for (std::int64_t i = 0; i < g.initial_noise.size(); ++i)
            CHECK(traj.initial_noise[i] == g.initial_noise[i]);
    // threaded rollouts produce the same group bit-for-bit
    const RolloutGroup g2 = make_rollout_group(net, ep, sched, 3, 1, RewardKind::Latent,
                                               RewardWeights{}, SeedSplitter(6), 1, 0, 2);
    for (std::size_t k = 0; k < g.trajectories.size(); ++k) {
        CHECK(g.rewards[k] == g2.rewards[k]);
        for (std::int64_t i = 0; i < g.trajectories[k].final_latent.size(); ++i)
            CHECK(g.trajectories[k].final_latent[i] == g2.trajectories[k].final_latent[i]);
    }
}

TEST_CASE("trajectories emit the reward exactly once, at the terminal step") {
    const WorldConfig wc = tiny_world();
    MlpDenoiser net = make_net(wc);
    const Episode ep = gen_episode(8, 1, wc);
    const NoiseSchedule sched = karras_schedule(6, 0.05, 4.0, 7.0);
    Rng rng(2);
    Rng nrng(3);
    const Tensor init = ops::scale(nrng.normal_tensor(ep.expert_latent.shape()), sched.sigma_max());
    const DenoiseTrajectory traj = rollout_hybrid(net, ep.condition, init, sched, rng, 1);
    const double reward = latent_reward(traj.final_latent, ep.expert_latent, RewardWeights{});
    const std::vector<MdpStep> steps = trajectory_mdp_steps(traj, reward);
    REQUIRE(steps.size() == 6);
    int terminal = 0;
    double reward_sum = 0.0;
    for (const MdpStep& s : steps) {
        if (s.terminal) ++terminal;
        if (!s.terminal) CHECK(s.reward == 0.0);
        reward_sum += s.reward;
    }
    CHECK(terminal == 1);
    CHECK(steps.back().terminal);
    CHECK(reward_sum == reward);
}

TEST_CASE("short posttrain loop emits well-formed metrics rows") {
    const WorldConfig wc = tiny_world();
    const Dataset ds = make_dataset(4, 50, wc);
    MlpDenoiser net = make_net(wc, 7);
    const NoiseSchedule sched = karras_schedule(4, 0.05, 4.0, 7.0);
    PosttrainConfig cfg;
    cfg.group_size = 4;
    cfg.batch_size = 2;
    cfg.steps = 3;
    cfg.lr = 1e-4;
    cfg.eval_interval = 2;
    const SeedSplitter seeds(8);
    const PosttrainResult res = posttrain(net, ds, ds, sched, cfg, seeds);
    REQUIRE(res.rows.size() == 3);
    for (const PosttrainRow& r : res.rows) {
        CHECK(std::isfinite(r.mean_reward));
        CHECK(std::isfinite(r.eval_l1));
        CHECK(r.ratio_max >= r.ratio_mean);
        CHECK(r.wallclock_s >= 0.0);
    }
    CHECK(std::isfinite(res.initial_eval_l1));
    CHECK(std::isfinite(res.final_eval_l1));
}
