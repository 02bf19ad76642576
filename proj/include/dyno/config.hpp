#pragma once

#include <string>

#include <json.hpp>

#include "dyno/action_model.hpp"
#include "dyno/denoiser.hpp"
#include "dyno/rl.hpp"
#include "dyno/world.hpp"

namespace dyno {

struct DataConfig {
    int episodes = 320;
    double eval_fraction = 0.2;
};

struct ScheduleConfig {
    int steps = 10;         // sampling steps I
    double sigma_min = 0.02;
    double sigma_max = 10.0;
    double rho = 7.0;

    NoiseSchedule build() const { return karras_schedule(steps, sigma_min, sigma_max, rho); }
};

struct ModelConfig {
    int cond_hidden = 32;
    int frame_hidden = 64;
    int mix_hidden = 32;
    double sigma_data = 0.5;
    std::vector<std::string> hidden_capture = {"mix"};

    DenoiserArch arch_for(const WorldConfig& wc) const {
        DenoiserArch a = DenoiserArch::for_world(wc);
        a.cond_hidden = cond_hidden;
        a.frame_hidden = frame_hidden;
        a.mix_hidden = mix_hidden;
        a.sigma_data = sigma_data;
        a.hidden_capture = hidden_capture;
        return a;
    }
};

struct AgmModelConfig {
    int h1 = 128;
    int h2 = 64;
    int k_max = 20;
    double decay_start = 0.02;
    double decay_end = 0.5;

    ActionArch arch_for(const WorldConfig& wc, int hidden_dim) const {
        ActionArch a;
        a.horizon = wc.horizon;
        a.action_dim = wc.action_dim;
        a.hidden_dim = hidden_dim;
        a.instr_dim = wc.modes;
        a.h1 = h1;
        a.h2 = h2;
        a.k_max = k_max;
        return a;
    }
};

struct EvalConfig {
    int ddim_steps = 10;
};

/// Whole-run configuration. JSON schema is strict: unknown keys are rejected.
struct RunConfig {
    WorldConfig world;
    DataConfig data;
    ModelConfig model;
    ScheduleConfig schedule;
    SftConfig sft;
    PosttrainConfig posttrain;
    AgmConfig agm;
    AgmModelConfig agm_model;
    EvalConfig eval;
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";
    int threads = 1;

    void validate() const;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::string& path);

/// Canonical content hash of a config (stable key order).
std::string config_hash(const RunConfig& cfg);

nlohmann::json denoiser_arch_to_json(const DenoiserArch& a);
DenoiserArch denoiser_arch_from_json(const nlohmann::json& j);
nlohmann::json action_arch_to_json(const ActionArch& a, const AgmModelConfig& sched);
ActionArch action_arch_from_json(const nlohmann::json& j);

}  // namespace dyno
