#pragma once

#include "dyno/denoiser_iface.hpp"

namespace dyno::testing {

/// Elementwise affine denoiser D(x) = w*x + b with two scalar parameters.
/// Small enough to finite-difference the policy objective exactly.
class AffineDenoiser final : public DifferentiableDenoiser {
public:
    AffineDenoiser(double w, double b) {
        params_.add("w", Tensor({1, 1}, {w}));
        params_.add("b", Tensor({1}, {b}));
    }

    DenoiseResult denoise(const Tensor& x_sigma, double sigma,
                          const Condition& cond) const override {
        ad::Tape t(false);
        const ad::NodeId out =
            const_cast<AffineDenoiser*>(this)->denoise_node(t, x_sigma, sigma, cond, false);
        return {t.val(out), Tensor({1})};
    }

    ad::NodeId denoise_node(ad::Tape& t, const Tensor& x_sigma, double /*sigma*/,
                            const Condition& /*cond*/, bool bind_params) override {
        const int n = static_cast<int>(x_sigma.size());
        auto P = [&](const char* name) {
            return bind_params ? t.param(params_, name) : t.param_value(params_, name);
        };
        ad::NodeId x = t.constant(x_sigma.reshaped({n, 1}));
        ad::NodeId out = t.add_rowvec(t.matmul(x, P("w")), P("b"));
        return t.reshape(out, x_sigma.shape());
    }

    ParamSet& params() override { return params_; }
    const ParamSet& params() const override { return params_; }

private:
    ParamSet params_;
};

}  // namespace dyno::testing
