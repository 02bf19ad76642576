#pragma once

#include "dyno/autodiff.hpp"
#include "dyno/tensor.hpp"
#include "dyno/world.hpp"

namespace dyno {

struct DenoiseResult {
    Tensor x0_pred;  // same shape as the input latent
    Tensor hidden;   // captured feature vector (may be empty for test doubles)
};

/// Conditional denoiser interface used by the samplers. Implementations must
/// be pure functions of (parameters, inputs) and safe for concurrent
/// read-only use.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual DenoiseResult denoise(const Tensor& x_sigma, double sigma,
                                  const Condition& cond) const = 0;
};

/// Denoiser whose prediction can be built on an autodiff tape. The node must
/// evaluate to exactly the same values as denoise().
class DifferentiableDenoiser : public Denoiser {
public:
    virtual ad::NodeId denoise_node(ad::Tape& tape, const Tensor& x_sigma, double sigma,
                                    const Condition& cond, bool bind_params) = 0;
    virtual ParamSet& params() = 0;
    virtual const ParamSet& params() const = 0;
};

}  // namespace dyno
