#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dyno/ops.hpp"
#include "dyno/rng.hpp"
#include "dyno/tensor.hpp"

namespace dyno {

struct ParamEntry {
    std::string name;
    Tensor value;
    Tensor grad;
};

/// Named flat parameter arrays with matching gradient slots. Entry order is
/// insertion order and fixed thereafter; every consumer iterates in that
/// order so updates and checks are deterministic.
class ParamSet {
public:
    Tensor& add(const std::string& name, Tensor init) {
        if (index_.count(name)) throw std::invalid_argument("ParamSet: duplicate name " + name);
        index_[name] = static_cast<int>(entries_.size());
        ParamEntry e;
        e.name = name;
        e.grad = Tensor(init.shape());
        e.value = std::move(init);
        entries_.push_back(std::move(e));
        return entries_.back().value;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    ParamEntry& entry(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("ParamSet: unknown name " + name);
        return entries_[static_cast<std::size_t>(it->second)];
    }
    const ParamEntry& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("ParamSet: unknown name " + name);
        return entries_[static_cast<std::size_t>(it->second)];
    }

    Tensor& value(const std::string& name) { return entry(name).value; }
    const Tensor& value(const std::string& name) const { return entry(name).value; }
    Tensor& grad(const std::string& name) { return entry(name).grad; }

    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }

    void zero_grads() {
        for (auto& e : entries_)
            std::fill(e.grad.raw().begin(), e.grad.raw().end(), 0.0);
    }

    std::int64_t total_size() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, int> index_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Per-parameter Adam moments plus step counter.
class AdamState {
public:
    AdamState(const ParamSet& params, AdamConfig cfg) : cfg_(cfg) {
        for (const auto& e : params.entries()) {
            m_.emplace_back(e.value.shape());
            v_.emplace_back(e.value.shape());
        }
    }

    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    std::int64_t step_count() const { return step_; }

    /// Standard bias-corrected Adam update; zeroes gradients afterward.
    void step(ParamSet& params) {
        auto& entries = params.entries();
        if (entries.size() != m_.size())
            throw std::invalid_argument("AdamState: parameter set changed size");
        for (auto& e : entries)
            if (!ops::all_finite(e.grad))
                throw std::runtime_error("adam_step: non-finite gradient in '" + e.name + "'");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t p = 0; p < entries.size(); ++p) {
            Tensor& val = entries[p].value;
            Tensor& g = entries[p].grad;
            Tensor& m = m_[p];
            Tensor& v = v_[p];
            for (std::int64_t i = 0; i < val.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                val[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
        params.zero_grads();
    }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t step_ = 0;
};

/// Compares analytic gradients with central finite differences on sampled
/// coordinates. `loss(true)` must zero grads, run forward+backward and return
/// the loss; `loss(false)` must return the loss without touching grads.
/// Returns max over sampled coordinates of
///   |analytic - fd| / (|analytic| + |fd| + 1e-12).
/// Coordinates are sampled among those carrying at least 1e-3 of the largest
/// gradient magnitude; below that the finite difference is dominated by
/// floating-point cancellation and the ratio measures noise, not gradient
/// quality.
inline double grad_check(const std::function<double(bool)>& loss, ParamSet& params,
                         double epsilon, int max_coords, Rng& rng) {
    if (!(epsilon >= 1e-6 && epsilon <= 1e-3))
        throw std::invalid_argument("grad_check: epsilon outside [1e-6, 1e-3]");
    loss(true);
    double max_grad = 0.0;
    for (const auto& e : params.entries())
        max_grad = std::max(max_grad, ops::max_abs(e.grad));
    const double floor = 1e-3 * max_grad;
    std::vector<std::pair<std::size_t, std::int64_t>> coords;
    for (std::size_t p = 0; p < params.entries().size(); ++p)
        for (std::int64_t i = 0; i < params.entries()[p].value.size(); ++i)
            if (std::abs(params.entries()[p].grad[i]) >= floor) coords.emplace_back(p, i);
    if (coords.empty()) return 0.0;  // constant loss: nothing to compare
    // Fisher-Yates prefix shuffle picks the sample without replacement.
    const int n = static_cast<int>(coords.size());
    const int take = std::min(max_coords, n);
    for (int i = 0; i < take; ++i) {
        const int j = i + static_cast<int>(rng.index(static_cast<std::uint64_t>(n - i)));
        std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
    }
    double worst = 0.0;
    for (int s = 0; s < take; ++s) {
        auto [p, i] = coords[static_cast<std::size_t>(s)];
        ParamEntry& e = params.entries()[p];
        const double analytic = e.grad[i];
        const double orig = e.value[i];
        e.value[i] = orig + epsilon;
        const double lp = loss(false);
        e.value[i] = orig - epsilon;
        const double lm = loss(false);
        e.value[i] = orig;
        const double fd = (lp - lm) / (2.0 * epsilon);
        const double rel = std::abs(analytic - fd) / (std::abs(analytic) + std::abs(fd) + 1e-12);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace dyno
