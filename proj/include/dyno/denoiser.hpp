#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dyno/denoiser_iface.hpp"
#include "dyno/params.hpp"
#include "dyno/rng.hpp"
#include "dyno/samplers.hpp"
#include "dyno/schedule.hpp"
#include "dyno/world.hpp"

namespace dyno {

/// Architecture descriptor for the latent denoiser. Serialized as JSON next
/// to checkpoints so they are self-describing.
struct DenoiserArch {
    int frames = 16;
    int frame_dim = 256;  // C*h*w per frame
    int obs_dim = 256;
    int instr_dim = 4;
    int sigma_emb_dim = 16;
    int cond_hidden = 32;
    int frame_hidden = 64;
    int mix_hidden = 32;
    double sigma_data = 0.5;
    // which activations form the captured feature: "mix", "frame", or both
    std::vector<std::string> hidden_capture = {"mix"};

    static DenoiserArch for_world(const WorldConfig& wc) {
        DenoiserArch a;
        a.frames = wc.frames;
        a.frame_dim = 4 * wc.latent_hw() * wc.latent_hw();
        a.obs_dim = wc.obs_dim();
        a.instr_dim = wc.modes;
        return a;
    }

    int hidden_dim() const {
        int d = 0;
        for (const auto& l : hidden_capture) {
            if (l == "mix") d += frames * mix_hidden;
            else if (l == "frame") d += frames * frame_hidden;
            else throw std::invalid_argument("DenoiserArch: unknown capture layer " + l);
        }
        return d;
    }

    std::vector<int> latent_shape(int channels, int hw) const { return {frames, channels, hw, hw}; }
};

/// 16-dim sinusoidal embedding of log(sigma); sigma is floored so the
/// embedding stays finite at sigma = 0 (where the output gate is closed).
Tensor sigma_embedding(double sigma, int dim);

/// Conditioned per-frame MLP with one temporal mixing layer, wrapped in EDM
/// preconditioning: pred = c_skip(s)*x + c_out(s)*F(c_in(s)*x, emb(s), cond).
class MlpDenoiser final : public DifferentiableDenoiser {
public:
    explicit MlpDenoiser(DenoiserArch arch);

    void init_params(Rng& rng);

    DenoiseResult denoise(const Tensor& x_sigma, double sigma,
                          const Condition& cond) const override;

    ad::NodeId denoise_node(ad::Tape& tape, const Tensor& x_sigma, double sigma,
                            const Condition& cond, bool bind_params) override;

    ParamSet& params() override { return params_; }
    const ParamSet& params() const override { return params_; }
    const DenoiserArch& arch() const { return arch_; }

    MlpDenoiser snapshot() const { return *this; }

private:
    DenoiserArch arch_;
    ParamSet params_;
};

/// Test double: always predicts a fixed clean latent.
class ConstantDenoiser final : public Denoiser {
public:
    explicit ConstantDenoiser(Tensor x0, int hidden_dim = 4)
        : x0_(std::move(x0)), hidden_dim_(hidden_dim) {}
    DenoiseResult denoise(const Tensor&, double, const Condition&) const override {
        return {x0_, Tensor({hidden_dim_})};
    }

private:
    Tensor x0_;
    int hidden_dim_;
};

struct SftItem {
    const Episode* episode;
    double sigma;
    Tensor eps;
};

using SftBatch = std::vector<SftItem>;

SftBatch sample_sft_batch(const Dataset& data, int batch_size, double sigma_min,
                          double sigma_max, Rng& rng);

/// Mean over the batch of mean-square denoising error (mean reduction over
/// elements and batch).
double sft_loss(const Denoiser& net, const SftBatch& batch);

/// Same loss built on a recording tape; backward populates parameter grads.
ad::NodeId sft_loss_node(ad::Tape& tape, MlpDenoiser& net, const SftBatch& batch);

struct SftConfig {
    int steps = 2000;
    int batch_size = 8;
    double lr = 1e-4;         // supervised fine-tuning default
    int eval_interval = 100;
    double sigma_min = 0.02;
    double sigma_max = 10.0;
    double grad_check_tol = 1e-4;
};

struct SftMetricsRow {
    int step;
    double train_loss;
    double eval_loss;
};

struct SftResult {
    std::vector<SftMetricsRow> metrics;
    double initial_eval_loss;
    double final_eval_loss;
};

/// Minibatch Adam on sft_loss. Verifies grad_check at initialization, logs
/// train/eval losses, throws on non-finite loss.
SftResult train_sft(MlpDenoiser& net, const Dataset& train, const Dataset& eval,
                    const SftConfig& cfg, const SeedSplitter& seeds,
                    const std::function<void(const SftMetricsRow&)>& on_row = nullptr);

/// Hidden feature from the first denoising call of a rollout; identical to
/// the hidden captured by rollout_ode / rollout_hybrid at step one.
Tensor extract_representation(const Denoiser& net, const Condition& cond,
                              const Tensor& initial_noise, const NoiseSchedule& schedule);

}  // namespace dyno
