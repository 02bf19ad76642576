#include "dyno/action_model.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dyno {

namespace {

Tensor step_embedding(int k, int k_max, int dim) {
    // sinusoidal embedding of the normalized diffusion step
    const double u = static_cast<double>(k) / static_cast<double>(k_max);
    Tensor emb({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(20.0, static_cast<double>(i) / std::max(1, half - 1));
        emb[2 * i] = std::sin(u * freq);
        emb[2 * i + 1] = std::cos(u * freq);
    }
    return emb;
}

Tensor glorot(Rng& rng, int fan_in, int fan_out) {
    const double s = std::sqrt(2.0 / (fan_in + fan_out));
    Tensor t({fan_in, fan_out});
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = s * rng.normal();
    return t;
}

}  // namespace

ActionNoiseSchedule::ActionNoiseSchedule(std::vector<double> beta_bar)
    : beta_bar_(std::move(beta_bar)) {
    if (beta_bar_.size() < 2)
        throw std::invalid_argument("ActionNoiseSchedule: need at least 2 levels");
    if (beta_bar_.front() != 1.0)
        throw std::invalid_argument("ActionNoiseSchedule: beta_bar[0] must be 1");
    for (std::size_t i = 0; i + 1 < beta_bar_.size(); ++i)
        if (!(beta_bar_[i] > beta_bar_[i + 1] && beta_bar_[i + 1] >= 0.0))
            throw std::invalid_argument(
                "ActionNoiseSchedule: beta_bar must decrease strictly to >= 0");
}

ActionNoiseSchedule ActionNoiseSchedule::linear(int k_max, double decay_start, double decay_end) {
    if (k_max < 1) throw std::invalid_argument("ActionNoiseSchedule: k_max must be >= 1");
    if (!(decay_start > 0.0 && decay_end < 1.0 && decay_start <= decay_end))
        throw std::invalid_argument("ActionNoiseSchedule: bad decay range");
    std::vector<double> bb(static_cast<std::size_t>(k_max) + 1);
    bb[0] = 1.0;
    double acc = 1.0;
    for (int k = 1; k <= k_max; ++k) {
        const double frac = k_max > 1 ? static_cast<double>(k - 1) / (k_max - 1) : 0.0;
        const double decay = decay_start + frac * (decay_end - decay_start);
        acc *= 1.0 - decay;
        bb[static_cast<std::size_t>(k)] = acc;
    }
    return ActionNoiseSchedule(std::move(bb));
}

Tensor noise_actions(const Tensor& a0, int k, const Tensor& eps,
                     const ActionNoiseSchedule& schedule) {
    ops::check_same_shape(a0, eps, "noise_actions");
    const double bb = schedule.beta_bar(k);
    const double cs = std::sqrt(bb);
    const double cn = std::sqrt(1.0 - bb);
    Tensor out(a0.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = cs * a0[i] + cn * eps[i];
    return out;
}

ActionMlp::ActionMlp(ActionArch arch) : arch_(arch) {
    const int d_in = arch_.action_size() + arch_.k_emb_dim + arch_.hidden_dim + arch_.instr_dim;
    params_.add("w1", Tensor({d_in, arch_.h1}));
    params_.add("b1", Tensor({arch_.h1}));
    params_.add("w2", Tensor({arch_.h1, arch_.h2}));
    params_.add("b2", Tensor({arch_.h2}));
    params_.add("w3", Tensor({arch_.h2, arch_.action_size()}));
    params_.add("b3", Tensor({arch_.action_size()}));
}

void ActionMlp::init_params(Rng& rng) {
    const int d_in = arch_.action_size() + arch_.k_emb_dim + arch_.hidden_dim + arch_.instr_dim;
    params_.value("w1") = glorot(rng, d_in, arch_.h1);
    params_.value("w2") = glorot(rng, arch_.h1, arch_.h2);
    params_.value("w3") = glorot(rng, arch_.h2, arch_.action_size());
}

namespace {

ad::NodeId action_forward(ad::Tape& t, const ActionArch& arch, const ParamSet& ps,
                          ParamSet* bind, ad::NodeId a_flat, int k, ad::NodeId hidden,
                          const Tensor& instruction) {
    if (t.val(hidden).size() != arch.hidden_dim)
        throw std::invalid_argument("ActionMlp: feature size does not match architecture");
    if (instruction.size() != arch.instr_dim)
        throw std::invalid_argument("ActionMlp: instruction size does not match architecture");
    auto P = [&](const char* name) {
        return bind ? t.param(*bind, name) : t.param_value(ps, name);
    };
    ad::NodeId kemb = t.constant(step_embedding(k, arch.k_max, arch.k_emb_dim).reshaped({1, arch.k_emb_dim}));
    ad::NodeId instr = t.constant(instruction.reshaped({1, arch.instr_dim}));
    ad::NodeId in = t.concat_cols({a_flat, kemb, hidden, instr});
    ad::NodeId h1 = t.tanh_(t.add_rowvec(t.matmul(in, P("w1")), P("b1")));
    ad::NodeId h2 = t.tanh_(t.add_rowvec(t.matmul(h1, P("w2")), P("b2")));
    return t.add_rowvec(t.matmul(h2, P("w3")), P("b3"));
}

}  // namespace

Tensor ActionMlp::predict_clean(const Tensor& a_k, int k, const Tensor& hidden,
                                const Tensor& instruction) const {
    ad::Tape t(false);
    ad::NodeId a = t.constant(a_k.reshaped({1, arch_.action_size()}));
    ad::NodeId h = t.constant(hidden.reshaped({1, arch_.hidden_dim}));
    ad::NodeId out = action_forward(t, arch_, params_, nullptr, a, k, h, instruction);
    return t.val(out).reshaped({arch_.horizon, arch_.action_dim});
}

ad::NodeId ActionMlp::predict_clean_node(ad::Tape& tape, ad::NodeId a_flat, int k,
                                         ad::NodeId hidden, const Tensor& instruction,
                                         bool bind_params) {
    return action_forward(tape, arch_, params_, bind_params ? &params_ : nullptr, a_flat, k,
                          hidden, instruction);
}

std::vector<int> ddim_step_indices(int k_max, int steps) {
    if (steps < 1) throw std::invalid_argument("ddim_step_indices: steps must be >= 1");
    std::vector<int> ks;
    ks.push_back(k_max);
    for (int j = 1; j <= steps; ++j) {
        const int k = static_cast<int>(std::llround(
            static_cast<double>(k_max) * (1.0 - static_cast<double>(j) / steps)));
        if (k < ks.back()) ks.push_back(k);
    }
    if (ks.back() != 0) ks.push_back(0);
    return ks;
}

Tensor ddim_sample(const ActionDenoiser& net, const Tensor& hidden, const Tensor& instruction,
                   const ActionNoiseSchedule& schedule, int steps, const Tensor& eps) {
    const std::vector<int> ks = ddim_step_indices(schedule.max_step(), steps);
    Tensor a = eps;
    for (std::size_t j = 0; j + 1 < ks.size(); ++j) {
        const int k = ks[j], kn = ks[j + 1];
        const Tensor a0_hat = net.predict_clean(a, k, hidden, instruction);
        ops::check_same_shape(a, a0_hat, "ddim_sample");
        const double bbk = schedule.beta_bar(k);
        const double bbn = schedule.beta_bar(kn);
        // a' = sqrt(bb_kn)*a0 + sqrt(1-bb_kn) * (a - sqrt(bb_k)*a0) / sqrt(1-bb_k)
        const double dir = std::sqrt(1.0 - bbn) / std::sqrt(1.0 - bbk);
        const double sig = std::sqrt(bbn) - dir * std::sqrt(bbk);
        Tensor next(a.shape());
        for (std::int64_t i = 0; i < a.size(); ++i) next[i] = sig * a0_hat[i] + dir * a[i];
        a = std::move(next);
    }
    return a;
}

ad::NodeId ddim_sample_node(ad::Tape& t, DifferentiableActionDenoiser& net, ad::NodeId hidden,
                            const Tensor& instruction, const ActionNoiseSchedule& schedule,
                            int steps, const Tensor& eps, bool bind_params) {
    const std::vector<int> ks = ddim_step_indices(schedule.max_step(), steps);
    const std::int64_t n = eps.size();
    ad::NodeId a = t.constant(eps.reshaped({1, static_cast<int>(n)}));
    for (std::size_t j = 0; j + 1 < ks.size(); ++j) {
        const int k = ks[j], kn = ks[j + 1];
        ad::NodeId a0_hat = net.predict_clean_node(t, a, k, hidden, instruction, bind_params);
        const double bbk = schedule.beta_bar(k);
        const double bbn = schedule.beta_bar(kn);
        const double dir = std::sqrt(1.0 - bbn) / std::sqrt(1.0 - bbk);
        const double sig = std::sqrt(bbn) - dir * std::sqrt(bbk);
        a = t.axpy(t.scale(a, dir), a0_hat, sig);
    }
    return a;
}

double action_loss(const ActionDenoiser& net, const std::vector<AgmItem>& items,
                   const std::vector<int>& ks, const std::vector<Tensor>& eps,
                   const ActionNoiseSchedule& schedule) {
    if (items.empty()) throw std::invalid_argument("action_loss: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const Tensor a_k = noise_actions(items[i].actions, ks[i], eps[i], schedule);
        const Tensor pred =
            net.predict_clean(a_k, ks[i], items[i].hidden, items[i].instruction);
        const Tensor diff = ops::sub(pred, items[i].actions);
        acc += ops::sum_sq(diff) / static_cast<double>(diff.size());
    }
    return acc / static_cast<double>(items.size());
}

ad::NodeId action_loss_node(ad::Tape& t, ActionMlp& net, const std::vector<AgmItem>& items,
                            const std::vector<int>& ks, const std::vector<Tensor>& eps,
                            const ActionNoiseSchedule& schedule) {
    if (items.empty()) throw std::invalid_argument("action_loss_node: empty batch");
    const int asz = net.arch().action_size();
    ad::NodeId total = t.constant(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < items.size(); ++i) {
        const Tensor a_k = noise_actions(items[i].actions, ks[i], eps[i], schedule);
        ad::NodeId a = t.constant(a_k.reshaped({1, asz}));
        ad::NodeId h = t.constant(items[i].hidden.reshaped({1, net.arch().hidden_dim}));
        ad::NodeId pred = net.predict_clean_node(t, a, ks[i], h, items[i].instruction, true);
        total = t.add(total, t.mse(pred, t.constant(items[i].actions.reshaped({1, asz}))));
    }
    return t.scale(total, 1.0 / static_cast<double>(items.size()));
}

Tensor episode_representation(const Denoiser& vpm, const Episode& ep,
                              const NoiseSchedule& schedule, const SeedSplitter& seeds,
                              const char* tag, std::uint64_t index) {
    Rng rng(seeds.derive(tag, index));
    Tensor noise = ops::scale(rng.normal_tensor(ep.expert_latent.shape()), schedule.sigma_max());
    return extract_representation(vpm, ep.condition, noise, schedule);
}

double action_rms(const Dataset& data) {
    if (data.episodes.empty()) throw std::invalid_argument("action_rms: empty dataset");
    double acc = 0.0;
    std::int64_t n = 0;
    for (const Episode& ep : data.episodes) {
        acc += ops::sum_sq(ep.expert_actions);
        n += ep.expert_actions.size();
    }
    const double rms = std::sqrt(acc / static_cast<double>(n));
    if (!(rms > 0.0)) throw std::invalid_argument("action_rms: zero-energy actions");
    return rms;
}

namespace {

std::vector<AgmItem> build_items(const Dataset& data, const Denoiser& vpm,
                                 const NoiseSchedule& schedule, const SeedSplitter& seeds,
                                 const char* tag, double action_scale) {
    std::vector<AgmItem> items;
    items.reserve(data.episodes.size());
    for (std::size_t i = 0; i < data.episodes.size(); ++i) {
        const Episode& ep = data.episodes[i];
        AgmItem it;
        it.actions = ops::scale(ep.expert_actions, 1.0 / action_scale);
        it.hidden = episode_representation(vpm, ep, schedule, seeds, tag, i);
        it.instruction = ep.condition.instruction;
        it.mode = ep.condition.mode;
        items.push_back(std::move(it));
    }
    return items;
}

}  // namespace

AgmResult train_agm(ActionMlp& net, const Dataset& train, const Dataset& eval,
                    const Denoiser& vpm, const NoiseSchedule& vpm_schedule,
                    const ActionNoiseSchedule& schedule, const AgmConfig& cfg,
                    const SeedSplitter& seeds,
                    const std::function<void(const AgmMetricsRow&)>& on_row) {
    if (train.episodes.empty()) throw std::invalid_argument("train_agm: empty dataset");
    AgmResult result;
    result.action_scale = cfg.action_scale > 0.0 ? cfg.action_scale : action_rms(train);
    if (cfg.freeze) {
        result.final_eval = eval_actions(net, vpm, eval, vpm_schedule, schedule,
                                         cfg.ddim_steps, seeds, result.action_scale);
        return result;
    }

    const std::vector<AgmItem> items =
        build_items(train, vpm, vpm_schedule, seeds, "repr.train", result.action_scale);
    Rng rng(seeds.derive("agm.batch"));
    Rng check_rng(seeds.derive("agm.gradcheck"));
    const int k_max = schedule.max_step();

    auto draw = [&](Rng& r, std::size_t count, std::vector<const AgmItem*>& batch,
                    std::vector<int>& ks, std::vector<Tensor>& eps) {
        batch.clear();
        ks.clear();
        eps.clear();
        for (std::size_t i = 0; i < count; ++i) {
            batch.push_back(&items[r.index(items.size())]);
            ks.push_back(1 + static_cast<int>(r.index(static_cast<std::uint64_t>(k_max))));
            eps.push_back(r.normal_tensor(batch.back()->actions.shape()));
        }
    };

    // gradient quality gate
    {
        std::vector<const AgmItem*> bptr;
        std::vector<int> ks;
        std::vector<Tensor> eps;
        draw(check_rng, 2, bptr, ks, eps);
        std::vector<AgmItem> probe;
        for (auto* p : bptr) probe.push_back(*p);
        auto loss_fn = [&](bool with_grad) {
            if (with_grad) {
                net.params().zero_grads();
                ad::Tape t(true);
                ad::NodeId l = action_loss_node(t, net, probe, ks, eps, schedule);
                t.backward_scalar(l);
                return t.val(l).item();
            }
            return action_loss(net, probe, ks, eps, schedule);
        };
        const double err = grad_check(loss_fn, net.params(), 1e-5, 24, check_rng);
        if (err > cfg.grad_check_tol)
            throw std::runtime_error("train_agm: gradient check failed, max rel. error " +
                                     std::to_string(err));
        net.params().zero_grads();
    }

    AdamConfig ac;
    ac.lr = cfg.lr;
    AdamState adam(net.params(), ac);

    const int steps_per_epoch =
        std::max<int>(1, static_cast<int>(items.size()) / cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int s = 0; s < steps_per_epoch; ++s) {
            std::vector<const AgmItem*> bptr;
            std::vector<int> ks;
            std::vector<Tensor> eps;
            draw(rng, static_cast<std::size_t>(cfg.batch_size), bptr, ks, eps);
            std::vector<AgmItem> batch;
            batch.reserve(bptr.size());
            for (auto* p : bptr) batch.push_back(*p);
            ad::Tape t(true);
            ad::NodeId l = action_loss_node(t, net, batch, ks, eps, schedule);
            const double lv = t.val(l).item();
            if (!std::isfinite(lv))
                throw std::runtime_error("train_agm: non-finite loss at epoch " +
                                         std::to_string(epoch));
            epoch_loss += lv;
            t.backward_scalar(l);
            adam.step(net.params());
        }
        AgmMetricsRow row;
        row.epoch = epoch;
        row.train_loss = epoch_loss / steps_per_epoch;
        row.eval_action_mse = eval_actions(net, vpm, eval, vpm_schedule, schedule,
                                           cfg.ddim_steps, seeds, result.action_scale)
                                  .action_mse;
        result.metrics.push_back(row);
        if (on_row) on_row(row);
    }
    result.final_eval = eval_actions(net, vpm, eval, vpm_schedule, schedule, cfg.ddim_steps,
                                     seeds, result.action_scale);
    return result;
}

AgmEval eval_actions(const ActionDenoiser& agm, const Denoiser& vpm, const Dataset& eval,
                     const NoiseSchedule& vpm_schedule, const ActionNoiseSchedule& schedule,
                     int ddim_steps, const SeedSplitter& seeds, double action_scale) {
    if (eval.episodes.empty()) throw std::invalid_argument("eval_actions: empty dataset");
    if (!(action_scale > 0.0)) throw std::invalid_argument("eval_actions: bad action scale");
    AgmEval out;
    std::vector<double> mode_acc(static_cast<std::size_t>(eval.config.modes), 0.0);
    std::vector<int> mode_n(static_cast<std::size_t>(eval.config.modes), 0);
    double acc = 0.0;
    for (std::size_t i = 0; i < eval.episodes.size(); ++i) {
        const Episode& ep = eval.episodes[i];
        const Tensor h = episode_representation(vpm, ep, vpm_schedule, seeds, "repr.eval", i);
        Rng ddim_rng(seeds.derive("ddim", i));
        const Tensor eps = ddim_rng.normal_tensor(ep.expert_actions.shape());
        const Tensor gen = ops::scale(
            ddim_sample(agm, h, ep.condition.instruction, schedule, ddim_steps, eps),
            action_scale);
        const Tensor diff = ops::sub(gen.reshaped(ep.expert_actions.shape()), ep.expert_actions);
        const double mse = ops::sum_sq(diff) / static_cast<double>(diff.size());
        acc += mse;
        mode_acc[static_cast<std::size_t>(ep.condition.mode)] += mse;
        mode_n[static_cast<std::size_t>(ep.condition.mode)] += 1;
    }
    out.action_mse = acc / static_cast<double>(eval.episodes.size());
    out.per_mode_mse.resize(mode_acc.size());
    for (std::size_t m = 0; m < mode_acc.size(); ++m)
        out.per_mode_mse[m] = mode_n[m] > 0 ? mode_acc[m] / mode_n[m]
                                            : std::numeric_limits<double>::quiet_NaN();
    return out;
}

}  // namespace dyno
