#include "dyno/rl.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "dyno/metrics.hpp"
#include "dyno/ops.hpp"

namespace dyno {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kCosGuard = 1e-12;
constexpr double kStdFloor = 1e-8;

double reward_formula(const Tensor& x_pred, const Tensor& x0, const RewardWeights& w) {
    ops::check_same_shape(x_pred, x0, "reward");
    if (!(w.lambda_l1 > 0.0 || w.lambda_cos > 0.0))
        throw std::invalid_argument("reward: weights must not both be zero");
    const double n0 = ops::l2_norm(x0);
    if (n0 == 0.0) throw std::invalid_argument("reward: expert latent is all-zero");
    const double l1 = ops::mean_abs(ops::sub(x_pred, x0));
    const double cosine = ops::dot(x_pred, x0) / (ops::l2_norm(x_pred) * n0 + kCosGuard);
    return -w.lambda_l1 * l1 + w.lambda_cos * cosine;
}

/// Deterministic mean of the stochastic transition recomputed under `net`,
/// with the exact arithmetic of euler_ancestral_step.
Tensor recompute_mean(const Denoiser& net, const DenoiseTrajectory& traj, int s) {
    const StochasticStep& st = traj.stochastic[static_cast<std::size_t>(s)];
    const Tensor denoised = net.denoise(st.state, st.sigma_i, traj.condition).x0_pred;
    const AncestralCoeffs c = ancestral_coeffs(st.sigma_i, st.sigma_im1);
    const double coef = (c.sigma_down - st.sigma_i) / st.sigma_i;
    Tensor mean(st.state.shape());
    for (std::int64_t k = 0; k < mean.size(); ++k)
        mean[k] = st.state[k] + coef * (st.state[k] - denoised[k]);
    return mean;
}

struct ObjectiveBuild {
    ad::NodeId j;
    std::vector<double> ratios;
};

/// J built on the tape; per-term ratios are read back from node values.
/// Requires populated advantages.
ObjectiveBuild build_clipped_objective(ad::Tape& t, const std::vector<RolloutGroup>& groups,
                                       DifferentiableDenoiser& net, const ClipConfig& clip,
                                       bool bind_params) {
    if (groups.empty()) throw std::invalid_argument("objective: no rollout groups");
    if (!(clip.epsilon_c > 0.0 && clip.epsilon_c < 1.0))
        throw std::invalid_argument("objective: epsilon_c must be in (0,1)");
    ObjectiveBuild out;
    ad::NodeId total = t.constant(Tensor::scalar(0.0));
    for (const RolloutGroup& group : groups) {
        if (group.advantages.size() != group.trajectories.size())
            throw std::logic_error("objective: advantages not populated");
        ad::NodeId gsum = t.constant(Tensor::scalar(0.0));
        for (std::size_t g = 0; g < group.trajectories.size(); ++g) {
            const DenoiseTrajectory& traj = group.trajectories[g];
            const double adv = group.advantages[g];
            const int steps = traj.stochastic_count();
            if (steps < 1) throw std::logic_error("objective: trajectory has no stochastic step");
            ad::NodeId tsum = t.constant(Tensor::scalar(0.0));
            for (int s = 0; s < steps; ++s) {
                const StochasticStep& st = traj.stochastic[static_cast<std::size_t>(s)];
                ad::NodeId pred =
                    net.denoise_node(t, st.state, st.sigma_i, traj.condition, bind_params);
                const AncestralCoeffs c = ancestral_coeffs(st.sigma_i, st.sigma_im1);
                const double coef = (c.sigma_down - st.sigma_i) / st.sigma_i;
                ad::NodeId state = t.constant(st.state);
                ad::NodeId mean = t.axpy(state, t.sub(state, pred), coef);
                const double var = st.sigma_up * st.sigma_up;
                const double d = static_cast<double>(st.state.size());
                ad::NodeId logp = t.add_const(
                    t.scale(t.sum_sq(t.sub(t.constant(st.action), mean)), -1.0 / (2.0 * var)),
                    -0.5 * d * (kLog2Pi + std::log(var)));
                const double old_logp = group.old_logps[g][static_cast<std::size_t>(s)];
                ad::NodeId rho = t.exp_(t.add_const(logp, -old_logp));
                out.ratios.push_back(t.val(rho).item());
                ad::NodeId term = t.minimum(
                    t.scale(rho, adv),
                    t.scale(t.clamp(rho, 1.0 - clip.epsilon_c, 1.0 + clip.epsilon_c), adv));
                tsum = t.add(tsum, term);
            }
            gsum = t.add(gsum, t.scale(tsum, 1.0 / steps));
        }
        total = t.add(total, t.scale(gsum, 1.0 / static_cast<double>(group.trajectories.size())));
    }
    out.j = t.scale(total, 1.0 / static_cast<double>(groups.size()));
    return out;
}

ObjectiveStats stats_from(const ObjectiveBuild& b, double j_value, const ClipConfig& clip) {
    ObjectiveStats s;
    s.value = j_value;
    double acc = 0.0, mx = 0.0;
    int clipped = 0;
    for (double r : b.ratios) {
        acc += r;
        mx = std::max(mx, r);
        if (r < 1.0 - clip.epsilon_c || r > 1.0 + clip.epsilon_c) ++clipped;
    }
    const double n = static_cast<double>(b.ratios.size());
    s.ratio_mean = acc / n;
    s.ratio_max = mx;
    s.clip_fraction = clipped / n;
    return s;
}

}  // namespace

double latent_reward(const Tensor& x_pred, const Tensor& x0, const RewardWeights& weights) {
    return reward_formula(x_pred, x0, weights);
}

double pixel_reward(const Tensor& x_pred, const Tensor& x0, const RewardWeights& weights) {
    return reward_formula(decode_latent(x_pred), decode_latent(x0), weights);
}

std::vector<double> group_advantages(const std::vector<double>& rewards) {
    const std::size_t g = rewards.size();
    if (g < 2) throw std::invalid_argument("group_advantages: need at least 2 rewards");
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(g);
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(g);  // population variance
    const double std = std::sqrt(var);
    std::vector<double> adv(g, 0.0);
    if (std < kStdFloor) return adv;  // degenerate group: skip update
    for (std::size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / std;
    return adv;
}

RolloutGroup make_rollout_group(const Denoiser& policy, const Episode& episode,
                                const NoiseSchedule& schedule, int group_size, int sde_steps,
                                RewardKind reward_kind, const RewardWeights& weights,
                                const SeedSplitter& seeds, std::uint64_t iter,
                                std::uint64_t cond_index, int threads) {
    if (group_size < 2) throw std::invalid_argument("make_rollout_group: group_size must be >= 2");
    RolloutGroup group;
    group.condition = episode.condition;
    group.x0 = episode.expert_latent;
    Rng noise_rng(seeds.derive("post.noise", iter, cond_index));
    group.initial_noise =
        ops::scale(noise_rng.normal_tensor(episode.expert_latent.shape()), schedule.sigma_max());

    group.trajectories.resize(static_cast<std::size_t>(group_size));
    auto roll = [&](int g) {
        Rng rng(seeds.derive("post.rollout", iter, cond_index, static_cast<std::uint64_t>(g)));
        group.trajectories[static_cast<std::size_t>(g)] = rollout_hybrid(
            policy, group.condition, group.initial_noise, schedule, rng, sde_steps);
    };
    if (threads > 1 && group_size > 1) {
        std::vector<std::thread> pool;
        const int nt = std::min(threads, group_size);
        for (int w = 0; w < nt; ++w)
            pool.emplace_back([&, w]() {
                for (int g = w; g < group_size; g += nt) roll(g);
            });
        for (auto& th : pool) th.join();
    } else {
        for (int g = 0; g < group_size; ++g) roll(g);
    }

    group.rewards.reserve(group.trajectories.size());
    group.old_logps.reserve(group.trajectories.size());
    for (const DenoiseTrajectory& traj : group.trajectories) {
        group.rewards.push_back(reward_kind == RewardKind::Latent
                                    ? latent_reward(traj.final_latent, group.x0, weights)
                                    : pixel_reward(traj.final_latent, group.x0, weights));
        std::vector<double> lps;
        for (const StochasticStep& st : traj.stochastic)
            lps.push_back(gaussian_log_prob(st.action, {st.mean, st.sigma_up}));
        group.old_logps.push_back(std::move(lps));
    }
    return group;
}

double importance_ratio(const DenoiseTrajectory& traj, const Denoiser& net_theta,
                        const Denoiser& net_theta_old, int stochastic_index) {
    if (stochastic_index < 0 || stochastic_index >= traj.stochastic_count())
        throw std::invalid_argument("importance_ratio: no such stochastic step");
    const StochasticStep& st = traj.stochastic[static_cast<std::size_t>(stochastic_index)];
    if (!(st.sigma_up > 0.0)) throw std::domain_error("importance_ratio: degenerate transition");
    const Tensor mean_new = recompute_mean(net_theta, traj, stochastic_index);
    const Tensor mean_old = recompute_mean(net_theta_old, traj, stochastic_index);
    const double lp_new = gaussian_log_prob(st.action, {mean_new, st.sigma_up});
    const double lp_old = gaussian_log_prob(st.action, {mean_old, st.sigma_up});
    return std::exp(lp_new - lp_old);
}

std::vector<MdpStep> trajectory_mdp_steps(const DenoiseTrajectory& traj, double terminal_reward) {
    std::vector<MdpStep> steps;
    const int n = static_cast<int>(traj.sigmas.size()) - 1;
    for (int p = 0; p < n; ++p) {
        MdpStep s;
        s.sigma_i = traj.sigmas[static_cast<std::size_t>(p)];
        s.sigma_im1 = traj.sigmas[static_cast<std::size_t>(p + 1)];
        s.stochastic = traj.step_stochastic[static_cast<std::size_t>(p)];
        s.terminal = s.sigma_im1 == 0.0;
        s.reward = s.terminal ? terminal_reward : 0.0;
        steps.push_back(s);
    }
    return steps;
}

ad::NodeId grpo_objective_node(ad::Tape& tape, const std::vector<RolloutGroup>& groups,
                               DifferentiableDenoiser& net_theta, const ClipConfig& clip,
                               bool bind_params) {
    return build_clipped_objective(tape, groups, net_theta, clip, bind_params).j;
}

ad::NodeId ddpo_objective_node(ad::Tape& tape, const std::vector<RolloutGroup>& groups,
                               DifferentiableDenoiser& net_theta, double baseline,
                               const ClipConfig& clip, bool bind_params) {
    std::vector<RolloutGroup> centered = groups;
    for (RolloutGroup& g : centered) {
        g.advantages.clear();
        for (double r : g.rewards) g.advantages.push_back(r - baseline);
    }
    return build_clipped_objective(tape, centered, net_theta, clip, bind_params).j;
}

ObjectiveStats grpo_objective(std::vector<RolloutGroup>& groups,
                              DifferentiableDenoiser& net_theta, const Denoiser& /*net_old*/,
                              const ClipConfig& clip) {
    for (RolloutGroup& g : groups)
        if (g.advantages.empty()) throw std::logic_error("grpo_objective: advantages not populated");
    ad::Tape t(false);
    ObjectiveBuild b = build_clipped_objective(t, groups, net_theta, clip, false);
    return stats_from(b, t.val(b.j).item(), clip);
}

ObjectiveStats grpo_objective(RolloutGroup& group, DifferentiableDenoiser& net_theta,
                              const Denoiser& net_old, const ClipConfig& clip) {
    std::vector<RolloutGroup> groups{group};
    return grpo_objective(groups, net_theta, net_old, clip);
}

ObjectiveStats ddpo_objective(std::vector<RolloutGroup>& groups,
                              DifferentiableDenoiser& net_theta, const Denoiser& /*net_old*/,
                              double baseline, const ClipConfig& clip) {
    for (RolloutGroup& g : groups) {
        g.advantages.clear();
        for (double r : g.rewards) g.advantages.push_back(r - baseline);
    }
    ad::Tape t(false);
    ObjectiveBuild b = build_clipped_objective(t, groups, net_theta, clip, false);
    return stats_from(b, t.val(b.j).item(), clip);
}

GrpoStepStats grpo_train_step(MlpDenoiser& net, const MlpDenoiser& net_old,
                              const Dataset& train, const NoiseSchedule& schedule,
                              const PosttrainConfig& cfg, AdamState& adam,
                              const SeedSplitter& seeds, std::uint64_t iter,
                              double* ddpo_baseline) {
    if (train.episodes.empty()) throw std::invalid_argument("grpo_train_step: empty dataset");
    Rng batch_rng(seeds.derive("post.batch", iter));
    std::vector<RolloutGroup> groups;
    groups.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
        const Episode& ep = train.episodes[batch_rng.index(train.episodes.size())];
        groups.push_back(make_rollout_group(net_old, ep, schedule, cfg.group_size, cfg.sde_steps,
                                            cfg.reward, cfg.weights, seeds, iter,
                                            static_cast<std::uint64_t>(b), cfg.threads));
    }

    GrpoStepStats stats;
    double reward_acc = 0.0;
    int reward_n = 0;
    for (const RolloutGroup& g : groups)
        for (double r : g.rewards) {
            reward_acc += r;
            ++reward_n;
        }
    stats.mean_reward = reward_acc / reward_n;

    if (cfg.algorithm == Algorithm::Grpo) {
        for (RolloutGroup& g : groups) g.advantages = group_advantages(g.rewards);
    } else {
        if (ddpo_baseline == nullptr)
            throw std::invalid_argument("grpo_train_step: ddpo requires a baseline slot");
        if (iter == 0) *ddpo_baseline = stats.mean_reward;
        for (RolloutGroup& g : groups) {
            g.advantages.clear();
            for (double r : g.rewards) g.advantages.push_back(r - *ddpo_baseline);
        }
        *ddpo_baseline = cfg.ddpo_baseline_decay * (*ddpo_baseline) +
                         (1.0 - cfg.ddpo_baseline_decay) * stats.mean_reward;
    }

    double adv_acc = 0.0;
    int adv_n = 0;
    for (const RolloutGroup& g : groups)
        for (double a : g.advantages) {
            adv_acc += std::abs(a);
            ++adv_n;
        }
    stats.mean_abs_adv = adv_acc / adv_n;

    ad::Tape t(true);
    ClipConfig clip{cfg.epsilon_c};
    ObjectiveBuild b = build_clipped_objective(t, groups, net, clip, true);
    const double j = t.val(b.j).item();
    if (!std::isfinite(j))
        throw std::runtime_error("grpo_train_step: non-finite objective at iteration " +
                                 std::to_string(iter));
    const ObjectiveStats os = stats_from(b, j, clip);
    stats.objective = os.value;
    stats.clip_frac = os.clip_fraction;
    stats.ratio_mean = os.ratio_mean;
    stats.ratio_max = os.ratio_max;

    if (cfg.lr != 0.0) {
        net.params().zero_grads();
        t.backward(b.j, Tensor::scalar(-1.0));  // ascend J
        adam.step(net.params());
    }
    return stats;
}

PosttrainResult posttrain(MlpDenoiser& net, const Dataset& train, const Dataset& eval,
                          const NoiseSchedule& schedule, const PosttrainConfig& cfg,
                          const SeedSplitter& seeds,
                          const std::function<void(const PosttrainRow&)>& on_row) {
    if (cfg.refresh_every < 1) throw std::invalid_argument("posttrain: refresh_every must be >= 1");
    AdamConfig ac;
    ac.lr = cfg.lr;
    ac.eps = cfg.adam_eps;
    AdamState adam(net.params(), ac);

    PosttrainResult result;
    result.initial_eval_l1 = l1_eval(net, eval, schedule, seeds);

    const auto t0 = std::chrono::steady_clock::now();
    MlpDenoiser net_old = net.snapshot();
    double baseline = 0.0;
    double last_eval = result.initial_eval_l1;
    for (int step = 0; step < cfg.steps; ++step) {
        if (step % cfg.refresh_every == 0) net_old = net.snapshot();
        const GrpoStepStats s =
            grpo_train_step(net, net_old, train, schedule, cfg, adam, seeds,
                            static_cast<std::uint64_t>(step), &baseline);
        if ((step + 1) % cfg.eval_interval == 0 || step == cfg.steps - 1)
            last_eval = l1_eval(net, eval, schedule, seeds);
        PosttrainRow row;
        row.step = step;
        row.mean_reward = s.mean_reward;
        row.mean_abs_adv = s.mean_abs_adv;
        row.clip_frac = s.clip_frac;
        row.ratio_mean = s.ratio_mean;
        row.ratio_max = s.ratio_max;
        row.eval_l1 = last_eval;
        row.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.rows.push_back(row);
        if (on_row) on_row(row);
    }
    result.final_eval_l1 = l1_eval(net, eval, schedule, seeds);
    return result;
}

}  // namespace dyno
