#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dyno/ops.hpp"
#include "dyno/params.hpp"
#include "dyno/tensor.hpp"

namespace dyno::ad {

using NodeId = int;

/// Define-by-run reverse-mode tape. Ops compute values through the same
/// dyno::ops kernels whether or not gradients are recorded, so a recording
/// tape and a value-only tape produce bit-identical forward results.
///
/// backward() zeroes the per-node scratch gradients, seeds the output, walks
/// nodes in reverse creation order (a valid reverse topological order) exactly
/// once, then accumulates the gradients of bound parameter leaves into their
/// ParamSet slots. Calling backward() repeatedly accumulates into the
/// ParamSet; node gradients themselves are per-call scratch.
class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}

    bool recording() const { return record_; }
    int size() const { return static_cast<int>(nodes_.size()); }

    NodeId constant(Tensor v) { return push(std::move(v), nullptr); }

    /// Differentiable input leaf (gradient readable after backward()).
    NodeId leaf(Tensor v) { return push(std::move(v), nullptr); }

    /// Parameter leaf bound for gradient accumulation.
    NodeId param(ParamSet& ps, const std::string& name) {
        ParamEntry& e = ps.entry(name);
        const NodeId id = push(e.value, nullptr);
        if (record_) bound_.emplace_back(id, &e);
        return id;
    }

    /// Read-only parameter leaf (no gradient accumulation), e.g. for frozen
    /// networks or Jacobians with respect to inputs.
    NodeId param_value(const ParamSet& ps, const std::string& name) {
        return push(ps.entry(name).value, nullptr);
    }

    NodeId add(NodeId a, NodeId b) {
        return push(ops::add(val(a), val(b)), [a, b](Tape& t, const Tensor& g) {
            t.accum(a, g);
            t.accum(b, g);
        });
    }

    NodeId sub(NodeId a, NodeId b) {
        return push(ops::sub(val(a), val(b)), [a, b](Tape& t, const Tensor& g) {
            t.accum(a, g);
            t.accum_scaled(b, g, -1.0);
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        return push(ops::mul(val(a), val(b)), [a, b](Tape& t, const Tensor& g) {
            t.accum(a, ops::mul(g, t.val(b)));
            t.accum(b, ops::mul(g, t.val(a)));
        });
    }

    NodeId scale(NodeId a, double s) {
        return push(ops::scale(val(a), s), [a, s](Tape& t, const Tensor& g) {
            t.accum_scaled(a, g, s);
        });
    }

    NodeId add_const(NodeId a, double c) {
        Tensor v = val(a);
        for (std::int64_t i = 0; i < v.size(); ++i) v[i] += c;
        return push(std::move(v), [a](Tape& t, const Tensor& g) { t.accum(a, g); });
    }

    /// a + s*b
    NodeId axpy(NodeId a, NodeId b, double s) {
        return push(ops::axpy(val(a), val(b), s), [a, b, s](Tape& t, const Tensor& g) {
            t.accum(a, g);
            t.accum_scaled(b, g, s);
        });
    }

    NodeId matmul(NodeId a, NodeId b) {
        return push(ops::matmul(val(a), val(b)), [a, b](Tape& t, const Tensor& g) {
            t.accum(a, ops::matmul_a_bt(g, t.val(b)));
            t.accum(b, ops::matmul_at_b(t.val(a), g));
        });
    }

    NodeId add_rowvec(NodeId m, NodeId v) {
        return push(ops::add_rowvec(val(m), val(v)), [m, v](Tape& t, const Tensor& g) {
            t.accum(m, g);
            const int r = g.dim(0), n = g.dim(1);
            Tensor gv({n});
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < n; ++j) gv[j] += g[static_cast<std::int64_t>(i) * n + j];
            t.accum(v, gv);
        });
    }

    NodeId broadcast_row(NodeId v, int rows) {
        return push(ops::broadcast_row(val(v), rows), [v, rows](Tape& t, const Tensor& g) {
            const int n = g.dim(1);
            Tensor gv({n});
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < n; ++j) gv[j] += g[static_cast<std::int64_t>(i) * n + j];
            t.accum(v, gv);
        });
    }

    NodeId mean_rows(NodeId m) {
        const int r = val(m).dim(0);
        return push(ops::mean_rows(val(m)), [m, r](Tape& t, const Tensor& g) {
            const int n = static_cast<int>(g.size());
            Tensor gm({r, n});
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < n; ++j) gm[static_cast<std::int64_t>(i) * n + j] = g[j] / r;
            t.accum(m, gm);
        });
    }

    NodeId concat_cols(const std::vector<NodeId>& parts) {
        std::vector<const Tensor*> vs;
        vs.reserve(parts.size());
        for (NodeId p : parts) vs.push_back(&val(p));
        std::vector<int> widths;
        for (const Tensor* v : vs) widths.push_back(v->dim(1));
        return push(ops::concat_cols(vs), [parts, widths](Tape& t, const Tensor& g) {
            const int r = g.dim(0), n = g.dim(1);
            int col = 0;
            for (std::size_t p = 0; p < parts.size(); ++p) {
                const int w = widths[p];
                Tensor gp({r, w});
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < w; ++j)
                        gp[static_cast<std::int64_t>(i) * w + j] =
                            g[static_cast<std::int64_t>(i) * n + col + j];
                t.accum(parts[p], gp);
                col += w;
            }
        });
    }

    NodeId tanh_(NodeId a) {
        const NodeId id = push(ops::tanh_map(val(a)), nullptr);
        if (record_)
            nodes_[static_cast<std::size_t>(id)].back = [a, id](Tape& t, const Tensor& g) {
                const Tensor& y = t.val(id);
                Tensor ga(g.shape());
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (1.0 - y[i] * y[i]);
                t.accum(a, ga);
            };
        return id;
    }

    NodeId exp_(NodeId a) {
        Tensor v(val(a).shape());
        for (std::int64_t i = 0; i < v.size(); ++i) v[i] = std::exp(val(a)[i]);
        const NodeId id = push(std::move(v), nullptr);
        if (record_)
            nodes_[static_cast<std::size_t>(id)].back = [a, id](Tape& t, const Tensor& g) {
                t.accum(a, ops::mul(g, t.val(id)));
            };
        return id;
    }

    /// Elementwise min; gradient routes to the smaller input (ties -> a).
    NodeId minimum(NodeId a, NodeId b) {
        ops::check_same_shape(val(a), val(b), "minimum");
        Tensor v(val(a).shape());
        for (std::int64_t i = 0; i < v.size(); ++i) v[i] = std::min(val(a)[i], val(b)[i]);
        return push(std::move(v), [a, b](Tape& t, const Tensor& g) {
            const Tensor& va = t.val(a);
            const Tensor& vb = t.val(b);
            Tensor ga(g.shape()), gb(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) {
                if (va[i] <= vb[i])
                    ga[i] = g[i];
                else
                    gb[i] = g[i];
            }
            t.accum(a, ga);
            t.accum(b, gb);
        });
    }

    /// Elementwise clamp; gradient passes where the input is inside [lo, hi].
    NodeId clamp(NodeId a, double lo, double hi) {
        Tensor v(val(a).shape());
        for (std::int64_t i = 0; i < v.size(); ++i) v[i] = std::clamp(val(a)[i], lo, hi);
        return push(std::move(v), [a, lo, hi](Tape& t, const Tensor& g) {
            const Tensor& va = t.val(a);
            Tensor ga(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i)
                if (va[i] >= lo && va[i] <= hi) ga[i] = g[i];
            t.accum(a, ga);
        });
    }

    NodeId sum(NodeId a) {
        return push(Tensor::scalar(ops::sum(val(a))), [a](Tape& t, const Tensor& g) {
            t.accum(a, Tensor::full(t.val(a).shape(), g.item()));
        });
    }

    NodeId sum_sq(NodeId a) {
        return push(Tensor::scalar(ops::sum_sq(val(a))), [a](Tape& t, const Tensor& g) {
            t.accum(a, ops::scale(t.val(a), 2.0 * g.item()));
        });
    }

    /// mean((a-b)^2) over all elements.
    NodeId mse(NodeId a, NodeId b) {
        const double n = static_cast<double>(val(a).size());
        return scale(sum_sq(sub(a, b)), 1.0 / n);
    }

    NodeId reshape(NodeId a, std::vector<int> shape) {
        Tensor v = val(a).reshaped(shape);
        return push(std::move(v), [a](Tape& t, const Tensor& g) {
            t.accum(a, g.reshaped(t.val(a).shape()));
        });
    }

    const Tensor& val(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    /// Scratch gradient of a node after the most recent backward().
    const Tensor& grad(NodeId id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.size() != n.value.size())
            throw std::runtime_error("Tape::grad: no gradient recorded for node");
        return n.grad;
    }

    void backward(NodeId out, const Tensor& out_grad) {
        if (!record_) throw std::runtime_error("Tape::backward: tape built without recording");
        if (out < 0 || out >= size()) throw std::invalid_argument("Tape::backward: bad node id");
        ops::check_same_shape(val(out), out_grad, "backward seed");
        for (auto& n : nodes_) {
            if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
            else std::fill(n.grad.raw().begin(), n.grad.raw().end(), 0.0);
        }
        nodes_[static_cast<std::size_t>(out)].grad = out_grad;
        for (NodeId id = out; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.back) n.back(*this, n.grad);
        }
        for (auto& [id, entry] : bound_) {
            Tensor& g = nodes_[static_cast<std::size_t>(id)].grad;
            for (std::int64_t i = 0; i < g.size(); ++i) entry->grad[i] += g[i];
        }
    }

    /// Backward from a scalar output with seed 1.
    void backward_scalar(NodeId out) { backward(out, Tensor::scalar(1.0)); }

private:
    using BackFn = std::function<void(Tape&, const Tensor&)>;

    struct Node {
        Tensor value;
        Tensor grad;
        BackFn back;
    };

    NodeId push(Tensor v, BackFn back) {
        Node n;
        n.value = std::move(v);
        if (record_) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void accum(NodeId id, const Tensor& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        for (std::int64_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }

    void accum_scaled(NodeId id, const Tensor& g, double s) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        for (std::int64_t i = 0; i < g.size(); ++i) n.grad[i] += s * g[i];
    }

    bool record_;
    std::vector<Node> nodes_;
    std::vector<std::pair<NodeId, ParamEntry*>> bound_;
};

}  // namespace dyno::ad
