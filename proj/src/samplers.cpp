#include "dyno/samplers.hpp"

#include <cmath>
#include <stdexcept>

#include "dyno/ops.hpp"

namespace dyno {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
}

Tensor add_noise(const Tensor& x0, double sigma, const Tensor& eps) {
    ops::check_same_shape(x0, eps, "add_noise");
    return ops::axpy(x0, eps, sigma);
}

Tensor euler_discrete_step(const Tensor& x_sigma_i, double sigma_i, double sigma_im1,
                           const Tensor& denoised) {
    if (sigma_i <= 0.0) throw std::invalid_argument("euler_discrete_step: sigma_i must be > 0");
    if (!(sigma_im1 < sigma_i))
        throw std::invalid_argument("euler_discrete_step: sigma_im1 must be < sigma_i");
    ops::check_same_shape(x_sigma_i, denoised, "euler_discrete_step");
    const double coef = (sigma_im1 - sigma_i) / sigma_i;
    Tensor out(x_sigma_i.shape());
    for (std::int64_t k = 0; k < out.size(); ++k)
        out[k] = x_sigma_i[k] + coef * (x_sigma_i[k] - denoised[k]);
    return out;
}

AncestralCoeffs ancestral_coeffs(double sigma_i, double sigma_im1) {
    if (sigma_i <= 0.0) throw std::invalid_argument("ancestral_coeffs: sigma_i must be > 0");
    if (!(sigma_im1 >= 0.0 && sigma_im1 < sigma_i))
        throw std::invalid_argument("ancestral_coeffs: require 0 <= sigma_im1 < sigma_i");
    const double up2 = sigma_im1 * sigma_im1 * (sigma_i * sigma_i - sigma_im1 * sigma_im1) /
                       (sigma_i * sigma_i);
    const double up = std::sqrt(up2);
    const double down = std::sqrt(sigma_im1 * sigma_im1 - up2);
    return {up, down};
}

AncestralStepResult euler_ancestral_step_with(const Tensor& x_sigma_i, double sigma_i,
                                              const Tensor& denoised, const Tensor& eps,
                                              AncestralCoeffs coeffs) {
    if (sigma_i <= 0.0) throw std::invalid_argument("euler_ancestral_step: sigma_i must be > 0");
    ops::check_same_shape(x_sigma_i, denoised, "euler_ancestral_step");
    ops::check_same_shape(x_sigma_i, eps, "euler_ancestral_step eps");
    const double coef = (coeffs.sigma_down - sigma_i) / sigma_i;
    Tensor mean(x_sigma_i.shape());
    for (std::int64_t k = 0; k < mean.size(); ++k)
        mean[k] = x_sigma_i[k] + coef * (x_sigma_i[k] - denoised[k]);
    Tensor sample(x_sigma_i.shape());
    for (std::int64_t k = 0; k < sample.size(); ++k)
        sample[k] = mean[k] + coeffs.sigma_up * eps[k];
    return {std::move(sample), {std::move(mean), coeffs.sigma_up}};
}

AncestralStepResult euler_ancestral_step(const Tensor& x_sigma_i, double sigma_i,
                                         double sigma_im1, const Tensor& denoised,
                                         const Tensor& eps) {
    return euler_ancestral_step_with(x_sigma_i, sigma_i, denoised, eps,
                                     ancestral_coeffs(sigma_i, sigma_im1));
}

double gaussian_log_prob(const Tensor& x, const TransitionGaussian& transition) {
    if (!(transition.std > 0.0))
        throw std::domain_error("gaussian_log_prob: degenerate density (std == 0)");
    ops::check_same_shape(x, transition.mean, "gaussian_log_prob");
    const double d = static_cast<double>(x.size());
    const double var = transition.std * transition.std;
    double sq = 0.0;
    for (std::int64_t k = 0; k < x.size(); ++k) {
        const double r = x[k] - transition.mean[k];
        sq += r * r;
    }
    // kept in this exact form so the tape-built log-density (scale of a
    // sum of squares plus a constant) reproduces it bit-for-bit
    return sq * (-1.0 / (2.0 * var)) + (-0.5 * d * (kLog2Pi + std::log(var)));
}

DenoiseTrajectory rollout_hybrid(const Denoiser& denoiser, const Condition& cond,
                                 const Tensor& initial_noise, const NoiseSchedule& schedule,
                                 Rng& rng, int sde_steps) {
    if (sde_steps < 1) throw std::invalid_argument("rollout_hybrid: sde_steps must be >= 1");
    DenoiseTrajectory traj;
    traj.condition = cond;
    traj.initial_noise = initial_noise;
    traj.sigmas = schedule.sigmas();
    const int steps = schedule.steps();
    traj.step_stochastic.resize(static_cast<std::size_t>(steps), false);
    traj.latent_norms.reserve(static_cast<std::size_t>(steps) + 1);

    Tensor x = initial_noise;
    traj.latent_norms.push_back(ops::l2_norm(x));
    for (int p = 0; p < steps; ++p) {
        const double si = schedule[p];
        const double sj = schedule[p + 1];
        DenoiseResult d = denoiser.denoise(x, si, cond);
        if (p == 0) traj.hidden = d.hidden;
        // the terminal step targets sigma_0 = 0, where the transition is a
        // Dirac; it always runs the deterministic update
        if (p < sde_steps && sj > 0.0) {
            Tensor eps = rng.normal_tensor(x.shape());
            AncestralStepResult r = euler_ancestral_step(x, si, sj, d.x0_pred, eps);
            StochasticStep step;
            step.position = p;
            step.sigma_i = si;
            step.sigma_im1 = sj;
            step.sigma_up = r.transition.std;
            step.state = x;
            step.mean = r.transition.mean;
            step.action = r.sample;
            traj.stochastic.push_back(std::move(step));
            traj.step_stochastic[static_cast<std::size_t>(p)] = true;
            x = traj.stochastic.back().action;
        } else {
            x = euler_discrete_step(x, si, sj, d.x0_pred);
        }
        traj.latent_norms.push_back(ops::l2_norm(x));
    }
    traj.final_latent = std::move(x);
    return traj;
}

OdeRollout rollout_ode(const Denoiser& denoiser, const Condition& cond,
                       const Tensor& initial_noise, const NoiseSchedule& schedule) {
    Tensor x = initial_noise;
    Tensor hidden;
    for (int p = 0; p < schedule.steps(); ++p) {
        DenoiseResult d = denoiser.denoise(x, schedule[p], cond);
        if (p == 0) hidden = std::move(d.hidden);
        x = euler_discrete_step(x, schedule[p], schedule[p + 1], d.x0_pred);
    }
    return {std::move(x), std::move(hidden)};
}

Tensor replay_ode_from(const Denoiser& denoiser, const Condition& cond, Tensor x,
                       const NoiseSchedule& schedule, int start_pos) {
    if (start_pos < 0 || start_pos > schedule.steps())
        throw std::invalid_argument("replay_ode_from: start_pos out of range");
    for (int p = start_pos; p < schedule.steps(); ++p) {
        DenoiseResult d = denoiser.denoise(x, schedule[p], cond);
        x = euler_discrete_step(x, schedule[p], schedule[p + 1], d.x0_pred);
    }
    return x;
}

}  // namespace dyno
