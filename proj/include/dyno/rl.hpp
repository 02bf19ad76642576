#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dyno/denoiser.hpp"
#include "dyno/samplers.hpp"
#include "dyno/schedule.hpp"
#include "dyno/world.hpp"

namespace dyno {

struct RewardWeights {
    double lambda_l1 = 1.0;
    double lambda_cos = 1.0;
};

/// r = -lambda_l1 * meanAbs(x_pred - x0)
///     + lambda_cos * (x_pred . x0) / (|x_pred| |x0| + 1e-12).
double latent_reward(const Tensor& x_pred, const Tensor& x0, const RewardWeights& weights);

/// Same score computed after decoding both latents to pixel space.
double pixel_reward(const Tensor& x_pred, const Tensor& x0, const RewardWeights& weights);

/// Group-normalized advantages: (r - mean) / max(popstd, 1e-8); all zeros for
/// a degenerate group (skip-update convention). Requires G >= 2.
std::vector<double> group_advantages(const std::vector<double>& rewards);

enum class RewardKind { Latent, Pixel };
enum class Algorithm { Grpo, Ddpo };

struct ClipConfig {
    double epsilon_c = 0.2;
};

/// G trajectories sharing one condition and one initial noise.
struct RolloutGroup {
    Condition condition;
    Tensor initial_noise;
    Tensor x0;  // expert future latent
    std::vector<DenoiseTrajectory> trajectories;
    std::vector<double> rewards;
    std::vector<double> advantages;
    std::vector<std::vector<double>> old_logps;  // per trajectory, per stochastic step
};

/// Rolls out G hybrid trajectories under `policy` with shared initial noise,
/// scores them, and fills old-policy log-probs. Rollouts use per-trajectory
/// rng streams so the result is independent of `threads`.
RolloutGroup make_rollout_group(const Denoiser& policy, const Episode& episode,
                                const NoiseSchedule& schedule, int group_size, int sde_steps,
                                RewardKind reward_kind, const RewardWeights& weights,
                                const SeedSplitter& seeds, std::uint64_t iter,
                                std::uint64_t cond_index, int threads = 1);

/// rho = exp(logp_theta(a|s) - logp_theta_old(a|s)) at one stochastic step,
/// both means recomputed under the respective parameters.
double importance_ratio(const DenoiseTrajectory& traj, const Denoiser& net_theta,
                        const Denoiser& net_theta_old, int stochastic_index = 0);

/// Decision-process view of a trajectory: one step per denoising transition,
/// reward attached only at the terminal step (sigma reaches 0).
struct MdpStep {
    double sigma_i;
    double sigma_im1;
    bool stochastic;
    bool terminal;
    double reward;  // nonzero only when terminal
};

std::vector<MdpStep> trajectory_mdp_steps(const DenoiseTrajectory& traj, double terminal_reward);

struct ObjectiveStats {
    double value = 0.0;
    double clip_fraction = 0.0;
    double ratio_mean = 1.0;
    double ratio_max = 1.0;
};

/// Clipped surrogate, group-normalized advantages:
///   J = mean_groups (1/G) sum_g mean_steps min(rho A, clip(rho, 1-e, 1+e) A).
/// Differentiable w.r.t. theta through rho only.
ObjectiveStats grpo_objective(RolloutGroup& group_check_aid, DifferentiableDenoiser& net_theta,
                              const Denoiser& net_theta_old, const ClipConfig& clip);
ObjectiveStats grpo_objective(std::vector<RolloutGroup>& groups,
                              DifferentiableDenoiser& net_theta, const Denoiser& net_theta_old,
                              const ClipConfig& clip);

/// Same surrogate with per-sample advantages r_g - baseline (no group
/// normalization); baseline is an EMA maintained by the caller.
ObjectiveStats ddpo_objective(std::vector<RolloutGroup>& groups,
                              DifferentiableDenoiser& net_theta, const Denoiser& net_theta_old,
                              double baseline, const ClipConfig& clip);

/// Tape-building versions used for the parameter update (and gradient checks).
ad::NodeId grpo_objective_node(ad::Tape& tape, const std::vector<RolloutGroup>& groups,
                               DifferentiableDenoiser& net_theta, const ClipConfig& clip,
                               bool bind_params);
ad::NodeId ddpo_objective_node(ad::Tape& tape, const std::vector<RolloutGroup>& groups,
                               DifferentiableDenoiser& net_theta, double baseline,
                               const ClipConfig& clip, bool bind_params);

struct PosttrainConfig {
    Algorithm algorithm = Algorithm::Grpo;
    int sde_steps = 1;             // 1 = hybrid main configuration, 5 = ablation
    RewardKind reward = RewardKind::Latent;
    int group_size = 8;            // G
    int batch_size = 8;            // conditions per step
    double epsilon_c = 0.2;        // clip threshold
    double lr = 1e-6;              // post-training default
    double adam_eps = 1e-8;        // larger values make updates scale with the
                                   // gradient, damping drift from noisy steps
    int steps = 200;               // T (desk-scale analog of the 1.5k-step run)
    int refresh_every = 1;         // K, snapshot cadence for theta_old
    RewardWeights weights;
    double ddpo_baseline_decay = 0.99;
    int eval_interval = 25;
    int threads = 1;
};

struct PosttrainRow {
    int step;
    double mean_reward;
    double mean_abs_adv;
    double clip_frac;
    double ratio_mean;
    double ratio_max;
    double eval_l1;
    double wallclock_s;
};

struct GrpoStepStats {
    double mean_reward = 0.0;
    double mean_abs_adv = 0.0;
    double clip_frac = 0.0;
    double ratio_mean = 1.0;
    double ratio_max = 1.0;
    double objective = 0.0;
};

class AdamState;

/// One policy-optimization step: sample conditions, roll out groups under the
/// frozen snapshot, normalize advantages, ascend the clipped objective.
GrpoStepStats grpo_train_step(MlpDenoiser& net, const MlpDenoiser& net_old,
                              const Dataset& train, const NoiseSchedule& schedule,
                              const PosttrainConfig& cfg, AdamState& adam,
                              const SeedSplitter& seeds, std::uint64_t iter,
                              double* ddpo_baseline);

struct PosttrainResult {
    std::vector<PosttrainRow> rows;
    double initial_eval_l1 = 0.0;
    double final_eval_l1 = 0.0;
};

/// Policy-optimization loop: refreshes the snapshot every `refresh_every`
/// steps and periodically evaluates the deterministic-rollout latent error.
PosttrainResult posttrain(MlpDenoiser& net, const Dataset& train, const Dataset& eval,
                          const NoiseSchedule& schedule, const PosttrainConfig& cfg,
                          const SeedSplitter& seeds,
                          const std::function<void(const PosttrainRow&)>& on_row = nullptr);

}  // namespace dyno
