#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace dyno {

/// Decreasing noise levels sigma[0]=sigma_max > ... > sigma[I]=0.
/// Index convention: sigmas[p] is the level before step p+1, i.e. the
/// schedule runs sigma_I, ..., sigma_1, sigma_0 with sigma_0 = 0 last.
class NoiseSchedule {
public:
    explicit NoiseSchedule(std::vector<double> sigmas) : sigmas_(std::move(sigmas)) {
        if (sigmas_.size() < 2) throw std::invalid_argument("NoiseSchedule: need at least 2 levels");
        if (sigmas_.back() != 0.0) throw std::invalid_argument("NoiseSchedule: last level must be 0");
        for (std::size_t i = 0; i + 1 < sigmas_.size(); ++i) {
            if (!(std::isfinite(sigmas_[i]) && sigmas_[i] > sigmas_[i + 1]))
                throw std::invalid_argument("NoiseSchedule: levels must be finite and strictly decreasing");
        }
    }

    const std::vector<double>& sigmas() const { return sigmas_; }
    double sigma_max() const { return sigmas_.front(); }
    /// Number of denoising steps I (one less than the level count).
    int steps() const { return static_cast<int>(sigmas_.size()) - 1; }
    double operator[](int i) const { return sigmas_[static_cast<std::size_t>(i)]; }

private:
    std::vector<double> sigmas_;
};

/// Karras ramp: I levels from sigma_max down to sigma_min spaced uniformly in
/// sigma^(1/rho), plus the terminal 0. I=1 degenerates to [sigma_max, 0].
inline NoiseSchedule karras_schedule(int steps, double sigma_min, double sigma_max, double rho) {
    if (steps < 1) throw std::invalid_argument("karras_schedule: steps must be >= 1");
    if (!(sigma_min > 0.0 && sigma_min < sigma_max))
        throw std::invalid_argument("karras_schedule: require 0 < sigma_min < sigma_max");
    if (!(rho > 0.0)) throw std::invalid_argument("karras_schedule: rho must be > 0");
    std::vector<double> sigmas(static_cast<std::size_t>(steps) + 1, 0.0);
    if (steps == 1) {
        sigmas[0] = sigma_max;
        return NoiseSchedule(std::move(sigmas));
    }
    const double max_inv_rho = std::pow(sigma_max, 1.0 / rho);
    const double min_inv_rho = std::pow(sigma_min, 1.0 / rho);
    for (int p = 0; p < steps; ++p) {
        const double ramp = static_cast<double>(p) / static_cast<double>(steps - 1);
        sigmas[static_cast<std::size_t>(p)] =
            std::pow(max_inv_rho + ramp * (min_inv_rho - max_inv_rho), rho);
    }
    sigmas[0] = sigma_max;  // make the endpoint exact, pow round-trip can drift 1 ulp
    return NoiseSchedule(std::move(sigmas));
}

}  // namespace dyno
