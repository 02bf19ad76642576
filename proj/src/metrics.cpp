#include "dyno/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dyno/ops.hpp"

namespace dyno {

double l1_eval(const Denoiser& vpm, const Dataset& dataset, const NoiseSchedule& schedule,
               const SeedSplitter& seeds) {
    if (dataset.episodes.empty()) throw std::invalid_argument("l1_eval: empty dataset");
    double acc = 0.0;
    for (std::size_t i = 0; i < dataset.episodes.size(); ++i) {
        const Episode& ep = dataset.episodes[i];
        Rng rng(seeds.derive("eval", i));
        const Tensor noise =
            ops::scale(rng.normal_tensor(ep.expert_latent.shape()), schedule.sigma_max());
        const OdeRollout r = rollout_ode(vpm, ep.condition, noise, schedule);
        acc += ops::mean_abs(ops::sub(r.final_latent, ep.expert_latent));
    }
    return acc / static_cast<double>(dataset.episodes.size());
}

Tensor action_jacobian(DifferentiableActionDenoiser& agm, const Tensor& hidden,
                       const Tensor& instruction, const ActionNoiseSchedule& schedule,
                       int ddim_steps, const Tensor& eps, JacobianMode mode, double fd_eta) {
    const int d_v = static_cast<int>(hidden.size());
    const int d_a = static_cast<int>(eps.size());
    Tensor jac({d_a, d_v});

    if (mode == JacobianMode::FiniteDifference) {
        if (!(fd_eta > 0.0)) throw std::invalid_argument("action_jacobian: eta must be > 0");
        Tensor h = hidden;
        for (int v = 0; v < d_v; ++v) {
            const double orig = h[v];
            h[v] = orig + fd_eta;
            const Tensor ap = ddim_sample(agm, h, instruction, schedule, ddim_steps, eps);
            h[v] = orig - fd_eta;
            const Tensor am = ddim_sample(agm, h, instruction, schedule, ddim_steps, eps);
            h[v] = orig;
            for (int a = 0; a < d_a; ++a)
                jac[static_cast<std::int64_t>(a) * d_v + v] = (ap[a] - am[a]) / (2.0 * fd_eta);
        }
        return jac;
    }

    ad::Tape t(true);
    ad::NodeId h = t.leaf(hidden.reshaped({1, d_v}));
    ad::NodeId out = ddim_sample_node(t, agm, h, instruction, schedule, ddim_steps, eps, false);
    if (t.val(out).size() != d_a) throw std::logic_error("action_jacobian: output size mismatch");
    for (int a = 0; a < d_a; ++a) {
        Tensor seed({1, d_a});
        seed[a] = 1.0;
        t.backward(out, seed);
        const Tensor& gh = t.grad(h);
        for (int v = 0; v < d_v; ++v) jac[static_cast<std::int64_t>(a) * d_v + v] = gh[v];
    }
    return jac;
}

std::vector<double> svd_values(const Tensor& matrix) {
    if (matrix.rank() != 2) throw std::invalid_argument("svd_values: rank-2 input required");
    if (!ops::all_finite(matrix)) throw std::invalid_argument("svd_values: non-finite entries");
    int m = matrix.dim(0), n = matrix.dim(1);
    // operate on the smaller side; singular values are transpose-invariant
    std::vector<std::vector<double>> rows;
    if (m <= n) {
        rows.assign(static_cast<std::size_t>(m), std::vector<double>(static_cast<std::size_t>(n)));
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    matrix[static_cast<std::int64_t>(i) * n + j];
    } else {
        rows.assign(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(m)));
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
                    matrix[static_cast<std::int64_t>(i) * n + j];
        std::swap(m, n);
    }

    // Hestenes one-sided Jacobi: rotate row pairs until mutually orthogonal.
    const int max_sweeps = 64;
    const double tol = 1e-28;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < m - 1; ++i) {
            for (int j = i + 1; j < m; ++j) {
                double a = 0.0, b = 0.0, c = 0.0;
                for (int k = 0; k < n; ++k) {
                    a += rows[i][k] * rows[i][k];
                    b += rows[j][k] * rows[j][k];
                    c += rows[i][k] * rows[j][k];
                }
                if (c * c <= tol * a * b || c == 0.0) continue;
                off = std::max(off, c * c / (a * b + 1e-300));
                const double theta = 0.5 * std::atan2(2.0 * c, a - b);
                const double cs = std::cos(theta), sn = std::sin(theta);
                for (int k = 0; k < n; ++k) {
                    const double ri = rows[i][k], rj = rows[j][k];
                    rows[i][k] = cs * ri + sn * rj;
                    rows[j][k] = -sn * ri + cs * rj;
                }
            }
        }
        if (off <= tol) break;
    }

    std::vector<double> sv(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        double a = 0.0;
        for (int k = 0; k < n; ++k) a += rows[i][k] * rows[i][k];
        sv[static_cast<std::size_t>(i)] = std::sqrt(a);
    }
    std::sort(sv.begin(), sv.end(), std::greater<double>());
    return sv;
}

double effective_rank(const std::vector<double>& spectrum) {
    double s1 = 0.0, s2 = 0.0;
    for (double s : spectrum) {
        if (s < 0.0) throw std::invalid_argument("effective_rank: negative singular value");
        s1 += s;
        s2 += s * s;
    }
    if (s2 == 0.0) throw std::invalid_argument("effective_rank: all-zero spectrum");
    return s1 * s1 / s2;
}

ErReport er_report(DifferentiableActionDenoiser& agm, const Denoiser& vpm, const Dataset& eval,
                   const NoiseSchedule& vpm_schedule, const ActionNoiseSchedule& action_schedule,
                   int ddim_steps, const SeedSplitter& seeds) {
    if (eval.episodes.empty()) throw std::invalid_argument("er_report: empty dataset");
    ErReport report;
    std::vector<double> spectrum_acc;
    for (std::size_t i = 0; i < eval.episodes.size(); ++i) {
        const Episode& ep = eval.episodes[i];
        const Tensor h = episode_representation(vpm, ep, vpm_schedule, seeds, "repr.eval", i);
        Rng ddim_rng(seeds.derive("ddim", i));
        const Tensor eps = ddim_rng.normal_tensor(ep.expert_actions.shape());
        const Tensor jac = action_jacobian(agm, h, ep.condition.instruction, action_schedule,
                                           ddim_steps, eps, JacobianMode::ReverseMode);
        const std::vector<double> sv = svd_values(jac);
        if (spectrum_acc.empty()) spectrum_acc.assign(sv.size(), 0.0);
        for (std::size_t k = 0; k < sv.size(); ++k) spectrum_acc[k] += sv[k];
        report.per_episode_er.push_back(effective_rank(sv));
        if (report.d_a == 0) {
            report.d_a = jac.dim(0);
            report.d_v = jac.dim(1);
        }
    }
    double acc = 0.0;
    for (double er : report.per_episode_er) acc += er;
    report.avg_er = acc / static_cast<double>(report.per_episode_er.size());
    report.avg_err = report.avg_er / std::min(report.d_a, report.d_v);
    report.mean_spectrum.resize(spectrum_acc.size());
    for (std::size_t k = 0; k < spectrum_acc.size(); ++k)
        report.mean_spectrum[k] = spectrum_acc[k] / static_cast<double>(eval.episodes.size());
    return report;
}

}  // namespace dyno
