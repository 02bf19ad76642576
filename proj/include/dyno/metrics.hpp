#pragma once

#include <vector>

#include "dyno/action_model.hpp"
#include "dyno/denoiser.hpp"
#include "dyno/samplers.hpp"
#include "dyno/schedule.hpp"
#include "dyno/world.hpp"

namespace dyno {

/// Mean over episodes of meanAbs(deterministic rollout - expert latent),
/// with per-episode fixed initial noise from the "eval" stream.
double l1_eval(const Denoiser& vpm, const Dataset& dataset, const NoiseSchedule& schedule,
               const SeedSplitter& seeds);

enum class JacobianMode { FiniteDifference, ReverseMode };

/// J = d(flattened action)/d(feature) of the frozen-noise DDIM sampler,
/// shape [action_size, hidden_dim].
Tensor action_jacobian(DifferentiableActionDenoiser& agm, const Tensor& hidden,
                       const Tensor& instruction, const ActionNoiseSchedule& schedule,
                       int ddim_steps, const Tensor& eps, JacobianMode mode,
                       double fd_eta = 1e-4);

/// Singular values (descending, length min(m,n)) via one-sided Jacobi
/// row orthogonalization.
std::vector<double> svd_values(const Tensor& matrix);

/// ER(spectrum) = (sum sigma)^2 / sum sigma^2.
double effective_rank(const std::vector<double>& spectrum);

struct ErReport {
    double avg_er = 0.0;
    double avg_err = 0.0;  // avg_er / min(d_a, d_v)
    int d_a = 0;
    int d_v = 0;
    std::vector<double> per_episode_er;
    std::vector<double> mean_spectrum;  // averaged singular values, descending
};

/// Per-episode effective rank of the vision-to-action Jacobian over the eval
/// set (reverse-mode, DDIM noise frozen per episode), averaged.
ErReport er_report(DifferentiableActionDenoiser& agm, const Denoiser& vpm, const Dataset& eval,
                   const NoiseSchedule& vpm_schedule, const ActionNoiseSchedule& action_schedule,
                   int ddim_steps, const SeedSplitter& seeds);

}  // namespace dyno
