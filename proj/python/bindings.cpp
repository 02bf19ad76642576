#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dyno/action_model.hpp"
#include "dyno/denoiser.hpp"
#include "dyno/metrics.hpp"
#include "dyno/rl.hpp"
#include "dyno/samplers.hpp"
#include "dyno/schedule.hpp"
#include "dyno/world.hpp"

namespace py = pybind11;
using namespace dyno;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (int d : t.shape()) shape.push_back(d);
    if (shape.empty()) shape.push_back(1);
    py::array_t<double> a(shape);
    std::copy(t.data(), t.data() + t.size(), a.mutable_data());
    return a;
}

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

}  // namespace

PYBIND11_MODULE(_dyno, m) {
    m.doc() = "Latent video dynamics lab: samplers, rewards, policy-optimization algebra";

    m.def(
        "karras_schedule",
        [](int steps, double sigma_min, double sigma_max, double rho) {
            return karras_schedule(steps, sigma_min, sigma_max, rho).sigmas();
        },
        py::arg("steps"), py::arg("sigma_min") = 0.02, py::arg("sigma_max") = 10.0,
        py::arg("rho") = 7.0, "Noise levels sigma_max > ... > sigma_min, then 0");

    m.def(
        "add_noise",
        [](const Arr& x0, double sigma, const Arr& eps) {
            return array_from_tensor(add_noise(tensor_from_array(x0), sigma, tensor_from_array(eps)));
        },
        py::arg("x0"), py::arg("sigma"), py::arg("eps"));

    m.def(
        "euler_discrete_step",
        [](const Arr& x, double sigma_i, double sigma_im1, const Arr& denoised) {
            return array_from_tensor(euler_discrete_step(tensor_from_array(x), sigma_i, sigma_im1,
                                                         tensor_from_array(denoised)));
        },
        py::arg("x"), py::arg("sigma_i"), py::arg("sigma_im1"), py::arg("denoised"));

    m.def(
        "ancestral_coeffs",
        [](double sigma_i, double sigma_im1) {
            const AncestralCoeffs c = ancestral_coeffs(sigma_i, sigma_im1);
            return py::make_tuple(c.sigma_up, c.sigma_down);
        },
        py::arg("sigma_i"), py::arg("sigma_im1"), "Returns (sigma_up, sigma_down)");

    m.def(
        "euler_ancestral_step",
        [](const Arr& x, double sigma_i, double sigma_im1, const Arr& denoised, const Arr& eps) {
            AncestralStepResult r =
                euler_ancestral_step(tensor_from_array(x), sigma_i, sigma_im1,
                                     tensor_from_array(denoised), tensor_from_array(eps));
            return py::make_tuple(array_from_tensor(r.sample),
                                  array_from_tensor(r.transition.mean), r.transition.std);
        },
        py::arg("x"), py::arg("sigma_i"), py::arg("sigma_im1"), py::arg("denoised"),
        py::arg("eps"), "Returns (sample, mean, sigma_up)");

    m.def(
        "gaussian_log_prob",
        [](const Arr& x, const Arr& mean, double std) {
            return gaussian_log_prob(tensor_from_array(x),
                                     TransitionGaussian{tensor_from_array(mean), std});
        },
        py::arg("x"), py::arg("mean"), py::arg("std"));

    m.def(
        "latent_reward",
        [](const Arr& x_pred, const Arr& x0, double lambda_l1, double lambda_cos) {
            return latent_reward(tensor_from_array(x_pred), tensor_from_array(x0),
                                 RewardWeights{lambda_l1, lambda_cos});
        },
        py::arg("x_pred"), py::arg("x0"), py::arg("lambda_l1") = 1.0, py::arg("lambda_cos") = 1.0);

    m.def(
        "pixel_reward",
        [](const Arr& x_pred, const Arr& x0, double lambda_l1, double lambda_cos) {
            return pixel_reward(tensor_from_array(x_pred), tensor_from_array(x0),
                                RewardWeights{lambda_l1, lambda_cos});
        },
        py::arg("x_pred"), py::arg("x0"), py::arg("lambda_l1") = 1.0, py::arg("lambda_cos") = 1.0);

    m.def("group_advantages", &group_advantages, py::arg("rewards"));

    m.def("effective_rank", &effective_rank, py::arg("spectrum"));

    m.def(
        "svd_values", [](const Arr& m_) { return svd_values(tensor_from_array(m_)); },
        py::arg("matrix"));

    m.def(
        "encode_frames",
        [](const Arr& frames) { return array_from_tensor(encode_frames(tensor_from_array(frames))); },
        py::arg("frames"), "[F,H,W] frames -> [F,4,H/2,W/2] latent");

    m.def(
        "decode_latent",
        [](const Arr& latent) { return array_from_tensor(decode_latent(tensor_from_array(latent))); },
        py::arg("latent"));

    m.def(
        "gen_episode",
        [](std::uint64_t seed, int mode, int frames, int frame_size, int modes, int horizon) {
            WorldConfig cfg;
            cfg.frames = frames;
            cfg.frame_size = frame_size;
            cfg.modes = modes;
            cfg.horizon = horizon;
            const Episode ep = gen_episode(seed, mode, cfg);
            py::dict d;
            d["frames"] = array_from_tensor(ep.frames);
            d["latent"] = array_from_tensor(ep.expert_latent);
            d["actions"] = array_from_tensor(ep.expert_actions);
            d["observation"] = array_from_tensor(ep.condition.observation);
            d["instruction"] = array_from_tensor(ep.condition.instruction);
            d["mode"] = ep.condition.mode;
            return d;
        },
        py::arg("seed"), py::arg("mode"), py::arg("frames") = 16, py::arg("frame_size") = 16,
        py::arg("modes") = 4, py::arg("horizon") = 10);

    m.def(
        "ddim_sample_oracle",
        [](const Arr& a0, int steps, int k_max, const Arr& eps) {
            const Tensor a0t = tensor_from_array(a0);
            const OracleActionDenoiser oracle(a0t);
            const ActionNoiseSchedule sched = ActionNoiseSchedule::linear(k_max);
            return array_from_tensor(ddim_sample(oracle, Tensor({1}), Tensor({1}), sched, steps,
                                                 tensor_from_array(eps)));
        },
        py::arg("a0"), py::arg("steps"), py::arg("k_max"), py::arg("eps"),
        "DDIM recursion driven by an oracle clean-action predictor");

    m.attr("__version__") = "0.1.0";
}
