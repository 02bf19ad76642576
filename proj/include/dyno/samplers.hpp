#pragma once

#include <vector>

#include "dyno/denoiser_iface.hpp"
#include "dyno/rng.hpp"
#include "dyno/schedule.hpp"
#include "dyno/tensor.hpp"

namespace dyno {

/// x_sigma = x0 + sigma * eps.
Tensor add_noise(const Tensor& x0, double sigma, const Tensor& eps);

/// Deterministic probability-flow step from sigma_i to sigma_im1:
///   x' = x + (sigma_im1 - sigma_i) * (x - denoised) / sigma_i.
Tensor euler_discrete_step(const Tensor& x_sigma_i, double sigma_i, double sigma_im1,
                           const Tensor& denoised);

struct AncestralCoeffs {
    double sigma_up;
    double sigma_down;
};

/// Split of sigma_im1 into injected-noise and deterministic parts:
///   sigma_up   = sqrt(sigma_im1^2 * (sigma_i^2 - sigma_im1^2) / sigma_i^2)
///   sigma_down = sqrt(sigma_im1^2 - sigma_up^2)
AncestralCoeffs ancestral_coeffs(double sigma_i, double sigma_im1);

struct TransitionGaussian {
    Tensor mean;  // deterministic component x^det
    double std;   // sigma_up
};

struct AncestralStepResult {
    Tensor sample;
    TransitionGaussian transition;
};

/// Stochastic step: mean = x + (sigma_down - sigma_i)*(x - denoised)/sigma_i,
/// sample = mean + sigma_up * eps, with coefficients from ancestral_coeffs.
AncestralStepResult euler_ancestral_step(const Tensor& x_sigma_i, double sigma_i,
                                         double sigma_im1, const Tensor& denoised,
                                         const Tensor& eps);

/// Variant with explicit coefficients (substituting sigma_up = 0,
/// sigma_down = sigma_im1 reproduces euler_discrete_step bit-exactly).
AncestralStepResult euler_ancestral_step_with(const Tensor& x_sigma_i, double sigma_i,
                                              const Tensor& denoised, const Tensor& eps,
                                              AncestralCoeffs coeffs);

/// log N(x; mean, std^2 I). Throws on std == 0 (degenerate density).
double gaussian_log_prob(const Tensor& x, const TransitionGaussian& transition);

/// One recorded stochastic transition of a rollout.
struct StochasticStep {
    int position;      // index into the schedule (0 = first denoising step)
    double sigma_i;
    double sigma_im1;
    double sigma_up;
    Tensor state;      // x at sigma_i
    Tensor mean;       // deterministic component under the rollout policy
    Tensor action;     // sampled x at sigma_im1
};

struct DenoiseTrajectory {
    Condition condition;
    Tensor initial_noise;
    std::vector<double> sigmas;
    std::vector<StochasticStep> stochastic;   // ordered by position
    std::vector<bool> step_stochastic;        // per denoising step
    std::vector<double> latent_norms;         // per schedule level, debug aid
    Tensor hidden;                            // captured at the first denoiser call
    Tensor final_latent;                      // x at sigma_0

    const StochasticStep& first_step() const { return stochastic.front(); }
    const Tensor& first_action() const { return stochastic.front().action; }
    TransitionGaussian first_transition() const {
        return {stochastic.front().mean, stochastic.front().sigma_up};
    }
    int stochastic_count() const { return static_cast<int>(stochastic.size()); }
};

/// Hybrid rollout: the first `sde_steps` transitions are Euler-Ancestral
/// (noise from `rng`), the remainder Euler Discrete. The hidden feature is
/// captured from the first denoiser call, before noise injection.
DenoiseTrajectory rollout_hybrid(const Denoiser& denoiser, const Condition& cond,
                                 const Tensor& initial_noise, const NoiseSchedule& schedule,
                                 Rng& rng, int sde_steps = 1);

struct OdeRollout {
    Tensor final_latent;
    Tensor hidden;
};

/// Fully deterministic rollout (Euler Discrete at every step).
OdeRollout rollout_ode(const Denoiser& denoiser, const Condition& cond,
                       const Tensor& initial_noise, const NoiseSchedule& schedule);

/// Replays the deterministic tail of a trajectory: x is the latent at
/// schedule position `start_pos`, the result is x at sigma_0.
Tensor replay_ode_from(const Denoiser& denoiser, const Condition& cond, Tensor x,
                       const NoiseSchedule& schedule, int start_pos);

}  // namespace dyno
