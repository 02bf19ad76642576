#pragma once

#include <functional>
#include <vector>

#include "dyno/autodiff.hpp"
#include "dyno/denoiser.hpp"
#include "dyno/params.hpp"
#include "dyno/rng.hpp"
#include "dyno/world.hpp"

namespace dyno {

/// Cumulative signal coefficients beta_bar[0..K]: beta_bar[0] = 1 (clean),
/// strictly decreasing, beta_bar[K] near 0 (pure noise).
class ActionNoiseSchedule {
public:
    explicit ActionNoiseSchedule(std::vector<double> beta_bar);

    /// Per-step decay factors linear in k, composed via cumulative product.
    static ActionNoiseSchedule linear(int k_max, double decay_start = 0.02,
                                      double decay_end = 0.5);

    double beta_bar(int k) const {
        if (k < 0 || k > max_step())
            throw std::invalid_argument("ActionNoiseSchedule: step out of range");
        return beta_bar_[static_cast<std::size_t>(k)];
    }
    int max_step() const { return static_cast<int>(beta_bar_.size()) - 1; }
    const std::vector<double>& values() const { return beta_bar_; }

private:
    std::vector<double> beta_bar_;
};

/// a_k = sqrt(beta_bar_k) * a0 + sqrt(1 - beta_bar_k) * eps.
Tensor noise_actions(const Tensor& a0, int k, const Tensor& eps,
                     const ActionNoiseSchedule& schedule);

/// Denoiser over action sequences, conditioned on (hidden feature, instruction).
class ActionDenoiser {
public:
    virtual ~ActionDenoiser() = default;
    virtual Tensor predict_clean(const Tensor& a_k, int k, const Tensor& hidden,
                                 const Tensor& instruction) const = 0;
};

class DifferentiableActionDenoiser : public ActionDenoiser {
public:
    /// a_flat and hidden are [1,n] tape nodes; returns a [1, horizon*dim] node.
    virtual ad::NodeId predict_clean_node(ad::Tape& tape, ad::NodeId a_flat, int k,
                                          ad::NodeId hidden, const Tensor& instruction,
                                          bool bind_params) = 0;
    virtual ParamSet& params() = 0;
    virtual const ParamSet& params() const = 0;
};

struct ActionArch {
    int horizon = 10;
    int action_dim = 2;
    int hidden_dim = 512;  // conditioning feature width (from the video model)
    int instr_dim = 4;
    int k_emb_dim = 16;
    int h1 = 128;
    int h2 = 64;
    int k_max = 20;

    int action_size() const { return horizon * action_dim; }
};

/// Three-layer MLP over [noisy action, step embedding, feature, instruction].
class ActionMlp final : public DifferentiableActionDenoiser {
public:
    explicit ActionMlp(ActionArch arch);
    void init_params(Rng& rng);

    Tensor predict_clean(const Tensor& a_k, int k, const Tensor& hidden,
                         const Tensor& instruction) const override;
    ad::NodeId predict_clean_node(ad::Tape& tape, ad::NodeId a_flat, int k, ad::NodeId hidden,
                                  const Tensor& instruction, bool bind_params) override;

    ParamSet& params() override { return params_; }
    const ParamSet& params() const override { return params_; }
    const ActionArch& arch() const { return arch_; }

private:
    ActionArch arch_;
    ParamSet params_;
};

/// Test double that always predicts a fixed clean action sequence.
class OracleActionDenoiser final : public ActionDenoiser {
public:
    explicit OracleActionDenoiser(Tensor a0) : a0_(std::move(a0)) {}
    Tensor predict_clean(const Tensor&, int, const Tensor&, const Tensor&) const override {
        return a0_;
    }

private:
    Tensor a0_;
};

/// Strictly decreasing sub-schedule K = k_0 > k_1 > ... > k_S = 0.
std::vector<int> ddim_step_indices(int k_max, int steps);

/// Deterministic DDIM recursion from a_K = eps down to k = 0.
Tensor ddim_sample(const ActionDenoiser& net, const Tensor& hidden, const Tensor& instruction,
                   const ActionNoiseSchedule& schedule, int steps, const Tensor& eps);

/// Same recursion on a tape, with the hidden feature as a differentiable
/// input; used for the vision-to-action Jacobian.
ad::NodeId ddim_sample_node(ad::Tape& tape, DifferentiableActionDenoiser& net,
                            ad::NodeId hidden, const Tensor& instruction,
                            const ActionNoiseSchedule& schedule, int steps, const Tensor& eps,
                            bool bind_params);

struct AgmItem {
    Tensor actions;      // [horizon, dim]
    Tensor hidden;       // conditioning feature
    Tensor instruction;  // one-hot
    int mode;
};

/// Mean over the batch of mean-square reconstruction error of the clean
/// actions, with (k, eps) sampled per item.
double action_loss(const ActionDenoiser& net, const std::vector<AgmItem>& items,
                   const std::vector<int>& ks, const std::vector<Tensor>& eps,
                   const ActionNoiseSchedule& schedule);

ad::NodeId action_loss_node(ad::Tape& tape, ActionMlp& net, const std::vector<AgmItem>& items,
                            const std::vector<int>& ks, const std::vector<Tensor>& eps,
                            const ActionNoiseSchedule& schedule);

struct AgmConfig {
    int epochs = 10;
    int batch_size = 8;
    double lr = 1e-4;
    int ddim_steps = 10;
    double grad_check_tol = 1e-4;
    bool freeze = false;       // skip optimization (evaluate-only mode)
    double action_scale = 0.0; // diffusion runs on actions / scale; 0 = rms of train actions
};

/// Root-mean-square of the expert actions, the default normalization scale.
double action_rms(const Dataset& data);

struct AgmMetricsRow {
    int epoch;
    double train_loss;
    double eval_action_mse;
};

struct AgmEval {
    double action_mse = 0.0;
    std::vector<double> per_mode_mse;  // indexed by mode; NaN when a mode is absent
};

/// Builds the training items (extracting features from the video model with
/// per-episode fixed noise) and runs Adam on action_loss.
struct AgmResult {
    std::vector<AgmMetricsRow> metrics;
    AgmEval final_eval;
    double action_scale = 1.0;  // resolved normalization, recorded in checkpoints
};

AgmResult train_agm(ActionMlp& net, const Dataset& train, const Dataset& eval,
                    const Denoiser& vpm, const NoiseSchedule& vpm_schedule,
                    const ActionNoiseSchedule& schedule, const AgmConfig& cfg,
                    const SeedSplitter& seeds,
                    const std::function<void(const AgmMetricsRow&)>& on_row = nullptr);

/// Mean squared error of generated vs expert actions plus per-mode breakdown.
/// DDIM noise and feature-extraction noise are frozen per episode; the
/// denoiser operates on actions / action_scale.
AgmEval eval_actions(const ActionDenoiser& agm, const Denoiser& vpm, const Dataset& eval,
                     const NoiseSchedule& vpm_schedule, const ActionNoiseSchedule& schedule,
                     int ddim_steps, const SeedSplitter& seeds, double action_scale = 1.0);

/// Per-episode feature used to condition the action model (fixed noise draw
/// from the named stream `tag`).
Tensor episode_representation(const Denoiser& vpm, const Episode& ep,
                              const NoiseSchedule& schedule, const SeedSplitter& seeds,
                              const char* tag, std::uint64_t index);

}  // namespace dyno
