#include "dyno/denoiser.hpp"

#include <cmath>
#include <stdexcept>

namespace dyno {

Tensor sigma_embedding(double sigma, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("sigma_embedding: dim must be even");
    const double ls = std::log(std::max(sigma, 1e-12));
    Tensor emb({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        // frequencies spaced geometrically over roughly [0.1, 10]
        const double freq = std::pow(10.0, -1.0 + 2.0 * i / std::max(1, half - 1));
        emb[2 * i] = std::sin(ls * freq);
        emb[2 * i + 1] = std::cos(ls * freq);
    }
    return emb;
}

namespace {

struct Precond {
    double c_skip, c_out, c_in;
};

Precond edm_precond(double sigma, double sigma_data) {
    const double s2 = sigma * sigma;
    const double d2 = sigma_data * sigma_data;
    Precond p;
    p.c_skip = d2 / (s2 + d2);
    p.c_out = sigma * sigma_data / std::sqrt(s2 + d2);
    p.c_in = 1.0 / std::sqrt(s2 + d2);
    return p;
}

struct BuildOut {
    ad::NodeId pred;         // latent-shaped prediction
    ad::NodeId hidden_frame; // [F, frame_hidden]
    ad::NodeId hidden_mix;   // [F, mix_hidden]
};

/// Single forward definition used by both the value path and the recording
/// path, so the two are bit-identical. `bind` is null for read-only use.
BuildOut build_forward(const DenoiserArch& arch, const ParamSet& ps, ParamSet* bind,
                       ad::Tape& t, const Tensor& x_sigma, double sigma,
                       const Condition& cond) {
    if (x_sigma.size() != static_cast<std::int64_t>(arch.frames) * arch.frame_dim)
        throw std::invalid_argument("denoise: latent size does not match architecture");
    if (cond.observation.size() != arch.obs_dim || cond.instruction.size() != arch.instr_dim)
        throw std::invalid_argument("denoise: condition size does not match architecture");

    auto P = [&](const char* name) {
        return bind ? t.param(*bind, name) : t.param_value(ps, name);
    };

    const Precond pc = edm_precond(sigma, arch.sigma_data);
    const int f = arch.frames;

    // conditioning trunk
    Tensor oi({1, arch.obs_dim + arch.instr_dim});
    for (int i = 0; i < arch.obs_dim; ++i) oi[i] = cond.observation[i];
    for (int i = 0; i < arch.instr_dim; ++i) oi[arch.obs_dim + i] = cond.instruction[i];
    ad::NodeId cond_feat = t.tanh_(t.add_rowvec(t.matmul(t.constant(std::move(oi)), P("w_cond")), P("b_cond")));
    ad::NodeId cond_rows = t.broadcast_row(t.reshape(cond_feat, {arch.cond_hidden}), f);

    // per-frame trunk with shared weights
    ad::NodeId x = t.constant(x_sigma.reshaped({f, arch.frame_dim}));
    ad::NodeId x_in = t.scale(x, pc.c_in);
    ad::NodeId semb = t.broadcast_row(t.constant(sigma_embedding(sigma, arch.sigma_emb_dim)), f);
    ad::NodeId h1 = t.tanh_(t.add_rowvec(t.matmul(t.concat_cols({x_in, semb, cond_rows}), P("w_in")), P("b_in")));

    // temporal mixing: frame features + pooled context + frame embedding
    ad::NodeId pooled = t.reshape(t.mean_rows(h1), {1, arch.frame_hidden});
    ad::NodeId mix_in = t.add(t.matmul(h1, P("w_mix")),
                              t.broadcast_row(t.reshape(t.matmul(pooled, P("w_pool")), {arch.mix_hidden}), f));
    ad::NodeId v = t.tanh_(t.add_rowvec(t.add(mix_in, P("t_frame")), P("b_mix")));

    ad::NodeId out = t.add_rowvec(t.matmul(v, P("w_out")), P("b_out"));
    ad::NodeId pred = t.reshape(t.axpy(t.scale(x, pc.c_skip), out, pc.c_out), x_sigma.shape());
    return {pred, h1, v};
}

Tensor capture_hidden(const DenoiserArch& arch, ad::Tape& t, const BuildOut& b) {
    Tensor h({arch.hidden_dim()});
    std::int64_t at = 0;
    for (const auto& layer : arch.hidden_capture) {
        const Tensor& src = layer == "mix" ? t.val(b.hidden_mix) : t.val(b.hidden_frame);
        for (std::int64_t i = 0; i < src.size(); ++i) h[at++] = src[i];
    }
    return h;
}

Tensor glorot(Rng& rng, int fan_in, int fan_out, std::vector<int> shape) {
    const double s = std::sqrt(2.0 / (fan_in + fan_out));
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = s * rng.normal();
    return t;
}

}  // namespace

MlpDenoiser::MlpDenoiser(DenoiserArch arch) : arch_(arch) {
    const int d_in = arch_.frame_dim + arch_.sigma_emb_dim + arch_.cond_hidden;
    params_.add("w_cond", Tensor({arch_.obs_dim + arch_.instr_dim, arch_.cond_hidden}));
    params_.add("b_cond", Tensor({arch_.cond_hidden}));
    params_.add("w_in", Tensor({d_in, arch_.frame_hidden}));
    params_.add("b_in", Tensor({arch_.frame_hidden}));
    params_.add("w_mix", Tensor({arch_.frame_hidden, arch_.mix_hidden}));
    params_.add("w_pool", Tensor({arch_.frame_hidden, arch_.mix_hidden}));
    params_.add("t_frame", Tensor({arch_.frames, arch_.mix_hidden}));
    params_.add("b_mix", Tensor({arch_.mix_hidden}));
    params_.add("w_out", Tensor({arch_.mix_hidden, arch_.frame_dim}));
    params_.add("b_out", Tensor({arch_.frame_dim}));
}

void MlpDenoiser::init_params(Rng& rng) {
    const int d_in = arch_.frame_dim + arch_.sigma_emb_dim + arch_.cond_hidden;
    params_.value("w_cond") = glorot(rng, arch_.obs_dim + arch_.instr_dim, arch_.cond_hidden,
                                     {arch_.obs_dim + arch_.instr_dim, arch_.cond_hidden});
    params_.value("w_in") = glorot(rng, d_in, arch_.frame_hidden, {d_in, arch_.frame_hidden});
    params_.value("w_mix") = glorot(rng, arch_.frame_hidden, arch_.mix_hidden,
                                    {arch_.frame_hidden, arch_.mix_hidden});
    params_.value("w_pool") = glorot(rng, arch_.frame_hidden, arch_.mix_hidden,
                                     {arch_.frame_hidden, arch_.mix_hidden});
    params_.value("t_frame") = glorot(rng, arch_.frames, arch_.mix_hidden,
                                      {arch_.frames, arch_.mix_hidden});
    params_.value("w_out") = glorot(rng, arch_.mix_hidden, arch_.frame_dim,
                                    {arch_.mix_hidden, arch_.frame_dim});
}

DenoiseResult MlpDenoiser::denoise(const Tensor& x_sigma, double sigma,
                                   const Condition& cond) const {
    ad::Tape t(false);
    BuildOut b = build_forward(arch_, params_, nullptr, t, x_sigma, sigma, cond);
    return {t.val(b.pred), capture_hidden(arch_, t, b)};
}

ad::NodeId MlpDenoiser::denoise_node(ad::Tape& tape, const Tensor& x_sigma, double sigma,
                                     const Condition& cond, bool bind_params) {
    BuildOut b = build_forward(arch_, params_, bind_params ? &params_ : nullptr, tape,
                               x_sigma, sigma, cond);
    return b.pred;
}

SftBatch sample_sft_batch(const Dataset& data, int batch_size, double sigma_min,
                          double sigma_max, Rng& rng) {
    if (data.episodes.empty()) throw std::invalid_argument("sample_sft_batch: empty dataset");
    SftBatch batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    const double lmin = std::log(sigma_min), lmax = std::log(sigma_max);
    for (int i = 0; i < batch_size; ++i) {
        SftItem item;
        item.episode = &data.episodes[rng.index(data.episodes.size())];
        item.sigma = std::exp(rng.uniform(lmin, lmax));  // log-uniform draw
        item.eps = rng.normal_tensor(item.episode->expert_latent.shape());
        batch.push_back(std::move(item));
    }
    return batch;
}

double sft_loss(const Denoiser& net, const SftBatch& batch) {
    if (batch.empty()) throw std::invalid_argument("sft_loss: empty batch");
    double acc = 0.0;
    for (const SftItem& it : batch) {
        const Tensor noisy = add_noise(it.episode->expert_latent, it.sigma, it.eps);
        const Tensor pred = net.denoise(noisy, it.sigma, it.episode->condition).x0_pred;
        const Tensor diff = ops::sub(pred, it.episode->expert_latent);
        acc += ops::sum_sq(diff) / static_cast<double>(diff.size());
    }
    return acc / static_cast<double>(batch.size());
}

ad::NodeId sft_loss_node(ad::Tape& tape, MlpDenoiser& net, const SftBatch& batch) {
    if (batch.empty()) throw std::invalid_argument("sft_loss_node: empty batch");
    ad::NodeId total = tape.constant(Tensor::scalar(0.0));
    for (const SftItem& it : batch) {
        const Tensor noisy = add_noise(it.episode->expert_latent, it.sigma, it.eps);
        ad::NodeId pred = net.denoise_node(tape, noisy, it.sigma, it.episode->condition, true);
        total = tape.add(total, tape.mse(pred, tape.constant(it.episode->expert_latent)));
    }
    return tape.scale(total, 1.0 / static_cast<double>(batch.size()));
}

SftResult train_sft(MlpDenoiser& net, const Dataset& train, const Dataset& eval,
                    const SftConfig& cfg, const SeedSplitter& seeds,
                    const std::function<void(const SftMetricsRow&)>& on_row) {
    if (train.episodes.empty()) throw std::invalid_argument("train_sft: empty dataset");

    Rng batch_rng(seeds.derive("sft.batch"));
    Rng check_rng(seeds.derive("sft.gradcheck"));

    auto eval_loss = [&]() {
        // fixed draws per call so the eval series is comparable across steps
        Rng eval_rng(seeds.derive("sft.eval"));
        const int n = std::min<int>(static_cast<int>(eval.episodes.size()), 32);
        SftBatch b;
        const double lmin = std::log(cfg.sigma_min), lmax = std::log(cfg.sigma_max);
        for (int i = 0; i < n; ++i) {
            SftItem it;
            it.episode = &eval.episodes[static_cast<std::size_t>(i)];
            it.sigma = std::exp(eval_rng.uniform(lmin, lmax));
            it.eps = eval_rng.normal_tensor(it.episode->expert_latent.shape());
            b.push_back(std::move(it));
        }
        return sft_loss(net, b);
    };

    // gradient quality gate on a small probe batch
    {
        SftBatch probe = sample_sft_batch(train, 2, cfg.sigma_min, cfg.sigma_max, check_rng);
        auto loss_fn = [&](bool with_grad) {
            if (with_grad) {
                net.params().zero_grads();
                ad::Tape t(true);
                ad::NodeId l = sft_loss_node(t, net, probe);
                t.backward_scalar(l);
                return t.val(l).item();
            }
            return sft_loss(net, probe);
        };
        const double err = grad_check(loss_fn, net.params(), 1e-5, 24, check_rng);
        if (err > cfg.grad_check_tol)
            throw std::runtime_error("train_sft: gradient check failed, max rel. error " +
                                     std::to_string(err));
        net.params().zero_grads();
    }

    AdamConfig ac;
    ac.lr = cfg.lr;
    AdamState adam(net.params(), ac);

    SftResult result;
    result.initial_eval_loss = eval_loss();
    double last_train = 0.0;
    for (int step = 0; step < cfg.steps; ++step) {
        SftBatch batch = sample_sft_batch(train, cfg.batch_size, cfg.sigma_min,
                                          cfg.sigma_max, batch_rng);
        ad::Tape t(true);
        ad::NodeId l = sft_loss_node(t, net, batch);
        last_train = t.val(l).item();
        if (!std::isfinite(last_train))
            throw std::runtime_error("train_sft: non-finite loss at step " + std::to_string(step));
        t.backward_scalar(l);
        adam.step(net.params());

        if (step % cfg.eval_interval == 0 || step == cfg.steps - 1) {
            SftMetricsRow row{step, last_train, eval_loss()};
            result.metrics.push_back(row);
            if (on_row) on_row(row);
        }
    }
    result.final_eval_loss = eval_loss();
    return result;
}

Tensor extract_representation(const Denoiser& net, const Condition& cond,
                              const Tensor& initial_noise, const NoiseSchedule& schedule) {
    return net.denoise(initial_noise, schedule.sigma_max(), cond).hidden;
}

}  // namespace dyno
