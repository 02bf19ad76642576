#include "dyno/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "dyno/io.hpp"

namespace dyno {

namespace {

using nlohmann::json;

[[noreturn]] void bad_key(const std::string& section, const std::string& key) {
    throw std::invalid_argument("config: unknown key \"" + key + "\" in section \"" + section +
                                "\"");
}

void check_keys(const json& j, const std::string& section, const std::set<std::string>& known) {
    if (!j.is_object()) throw std::invalid_argument("config: section \"" + section + "\" must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) bad_key(section, it.key());
}

template <typename T>
void get(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
    world.validate();
    if (data.episodes < 2) throw std::invalid_argument("config: data.episodes must be >= 2");
    if (!(data.eval_fraction > 0.0 && data.eval_fraction < 1.0))
        throw std::invalid_argument("config: data.eval_fraction must be in (0,1)");
    if (schedule.steps < 1) throw std::invalid_argument("config: schedule.steps must be >= 1");
    if (!(schedule.sigma_min > 0.0 && schedule.sigma_min < schedule.sigma_max))
        throw std::invalid_argument("config: schedule sigma bounds invalid");
    if (sft.steps < 0 || sft.batch_size < 1)
        throw std::invalid_argument("config: sft steps/batch invalid");
    if (posttrain.group_size < 2)
        throw std::invalid_argument("config: posttrain.group_size must be >= 2");
    if (!(posttrain.epsilon_c > 0.0 && posttrain.epsilon_c < 1.0))
        throw std::invalid_argument("config: posttrain.epsilon_c must be in (0,1)");
    if (posttrain.sde_steps < 1 || posttrain.sde_steps > schedule.steps)
        throw std::invalid_argument("config: posttrain.sde_steps out of range");
    if (!(posttrain.weights.lambda_l1 > 0.0 || posttrain.weights.lambda_cos > 0.0))
        throw std::invalid_argument("config: reward weights must not both be zero");
    if (agm.epochs < 0 || agm.batch_size < 1)
        throw std::invalid_argument("config: agm epochs/batch invalid");
    if (agm_model.k_max < 1) throw std::invalid_argument("config: agm_model.k_max must be >= 1");
    if (eval.ddim_steps < 1) throw std::invalid_argument("config: eval.ddim_steps must be >= 1");
    if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    check_keys(j, "<root>",
               {"world", "data", "model", "schedule", "sft", "posttrain", "agm", "agm_model",
                "eval", "seed", "out_dir", "threads"});
    if (j.contains("world")) {
        const json& w = j.at("world");
        check_keys(w, "world",
                   {"frames", "frame_size", "modes", "horizon", "action_dim", "speed",
                    "speed_jitter", "blob_sigma", "max_episodes"});
        get(w, "frames", c.world.frames);
        get(w, "frame_size", c.world.frame_size);
        get(w, "modes", c.world.modes);
        get(w, "horizon", c.world.horizon);
        get(w, "action_dim", c.world.action_dim);
        get(w, "speed", c.world.speed);
        get(w, "speed_jitter", c.world.speed_jitter);
        get(w, "blob_sigma", c.world.blob_sigma);
        get(w, "max_episodes", c.world.max_episodes);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, "data", {"episodes", "eval_fraction"});
        get(d, "episodes", c.data.episodes);
        get(d, "eval_fraction", c.data.eval_fraction);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, "model",
                   {"cond_hidden", "frame_hidden", "mix_hidden", "sigma_data", "hidden_capture"});
        get(m, "cond_hidden", c.model.cond_hidden);
        get(m, "frame_hidden", c.model.frame_hidden);
        get(m, "mix_hidden", c.model.mix_hidden);
        get(m, "sigma_data", c.model.sigma_data);
        get(m, "hidden_capture", c.model.hidden_capture);
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        check_keys(s, "schedule", {"steps", "sigma_min", "sigma_max", "rho"});
        get(s, "steps", c.schedule.steps);
        get(s, "sigma_min", c.schedule.sigma_min);
        get(s, "sigma_max", c.schedule.sigma_max);
        get(s, "rho", c.schedule.rho);
    }
    if (j.contains("sft")) {
        const json& s = j.at("sft");
        check_keys(s, "sft", {"steps", "batch_size", "lr", "eval_interval"});
        get(s, "steps", c.sft.steps);
        get(s, "batch_size", c.sft.batch_size);
        get(s, "lr", c.sft.lr);
        get(s, "eval_interval", c.sft.eval_interval);
    }
    if (j.contains("posttrain")) {
        const json& p = j.at("posttrain");
        check_keys(p, "posttrain",
                   {"algorithm", "sde_steps", "reward", "group_size", "batch_size", "epsilon_c",
                    "lr", "adam_eps", "steps", "refresh_every", "lambda_l1", "lambda_cos",
                    "eval_interval"});
        std::string algorithm = "grpo", reward = "latent";
        get(p, "algorithm", algorithm);
        get(p, "reward", reward);
        if (algorithm == "grpo") c.posttrain.algorithm = Algorithm::Grpo;
        else if (algorithm == "ddpo") c.posttrain.algorithm = Algorithm::Ddpo;
        else throw std::invalid_argument("config: posttrain.algorithm must be grpo|ddpo");
        if (reward == "latent") c.posttrain.reward = RewardKind::Latent;
        else if (reward == "pixel") c.posttrain.reward = RewardKind::Pixel;
        else throw std::invalid_argument("config: posttrain.reward must be latent|pixel");
        get(p, "sde_steps", c.posttrain.sde_steps);
        get(p, "group_size", c.posttrain.group_size);
        get(p, "batch_size", c.posttrain.batch_size);
        get(p, "epsilon_c", c.posttrain.epsilon_c);
        get(p, "lr", c.posttrain.lr);
        get(p, "adam_eps", c.posttrain.adam_eps);
        get(p, "steps", c.posttrain.steps);
        get(p, "refresh_every", c.posttrain.refresh_every);
        get(p, "lambda_l1", c.posttrain.weights.lambda_l1);
        get(p, "lambda_cos", c.posttrain.weights.lambda_cos);
        get(p, "eval_interval", c.posttrain.eval_interval);
    }
    if (j.contains("agm")) {
        const json& a = j.at("agm");
        check_keys(a, "agm", {"epochs", "batch_size", "lr", "ddim_steps"});
        get(a, "epochs", c.agm.epochs);
        get(a, "batch_size", c.agm.batch_size);
        get(a, "lr", c.agm.lr);
        get(a, "ddim_steps", c.agm.ddim_steps);
    }
    if (j.contains("agm_model")) {
        const json& a = j.at("agm_model");
        check_keys(a, "agm_model", {"h1", "h2", "k_max", "decay_start", "decay_end"});
        get(a, "h1", c.agm_model.h1);
        get(a, "h2", c.agm_model.h2);
        get(a, "k_max", c.agm_model.k_max);
        get(a, "decay_start", c.agm_model.decay_start);
        get(a, "decay_end", c.agm_model.decay_end);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, "eval", {"ddim_steps"});
        get(e, "ddim_steps", c.eval.ddim_steps);
    }
    get(j, "seed", c.seed);
    get(j, "out_dir", c.out_dir);
    get(j, "threads", c.threads);
    c.posttrain.threads = c.threads;
    c.validate();
    return c;
}

json config_to_json(const RunConfig& c) {
    json j;
    j["world"] = {{"frames", c.world.frames},
                  {"frame_size", c.world.frame_size},
                  {"modes", c.world.modes},
                  {"horizon", c.world.horizon},
                  {"action_dim", c.world.action_dim},
                  {"speed", c.world.speed},
                  {"speed_jitter", c.world.speed_jitter},
                  {"blob_sigma", c.world.blob_sigma},
                  {"max_episodes", c.world.max_episodes}};
    j["data"] = {{"episodes", c.data.episodes}, {"eval_fraction", c.data.eval_fraction}};
    j["model"] = {{"cond_hidden", c.model.cond_hidden},
                  {"frame_hidden", c.model.frame_hidden},
                  {"mix_hidden", c.model.mix_hidden},
                  {"sigma_data", c.model.sigma_data},
                  {"hidden_capture", c.model.hidden_capture}};
    j["schedule"] = {{"steps", c.schedule.steps},
                     {"sigma_min", c.schedule.sigma_min},
                     {"sigma_max", c.schedule.sigma_max},
                     {"rho", c.schedule.rho}};
    j["sft"] = {{"steps", c.sft.steps},
                {"batch_size", c.sft.batch_size},
                {"lr", c.sft.lr},
                {"eval_interval", c.sft.eval_interval}};
    j["posttrain"] = {
        {"algorithm", c.posttrain.algorithm == Algorithm::Grpo ? "grpo" : "ddpo"},
        {"sde_steps", c.posttrain.sde_steps},
        {"reward", c.posttrain.reward == RewardKind::Latent ? "latent" : "pixel"},
        {"group_size", c.posttrain.group_size},
        {"batch_size", c.posttrain.batch_size},
        {"epsilon_c", c.posttrain.epsilon_c},
        {"lr", c.posttrain.lr},
        {"adam_eps", c.posttrain.adam_eps},
        {"steps", c.posttrain.steps},
        {"refresh_every", c.posttrain.refresh_every},
        {"lambda_l1", c.posttrain.weights.lambda_l1},
        {"lambda_cos", c.posttrain.weights.lambda_cos},
        {"eval_interval", c.posttrain.eval_interval}};
    j["agm"] = {{"epochs", c.agm.epochs},
                {"batch_size", c.agm.batch_size},
                {"lr", c.agm.lr},
                {"ddim_steps", c.agm.ddim_steps}};
    j["agm_model"] = {{"h1", c.agm_model.h1},
                      {"h2", c.agm_model.h2},
                      {"k_max", c.agm_model.k_max},
                      {"decay_start", c.agm_model.decay_start},
                      {"decay_end", c.agm_model.decay_end}};
    j["eval"] = {{"ddim_steps", c.eval.ddim_steps}};
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["threads"] = c.threads;
    return j;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config " + path + ": " + e.what());
    }
    return config_from_json(j);
}

std::string config_hash(const RunConfig& cfg) {
    json j = config_to_json(cfg);
    // location and execution-layout fields do not change results
    j.erase("out_dir");
    j.erase("threads");
    return content_hash(j.dump());
}

json denoiser_arch_to_json(const DenoiserArch& a) {
    return json{{"frames", a.frames},
                {"frame_dim", a.frame_dim},
                {"obs_dim", a.obs_dim},
                {"instr_dim", a.instr_dim},
                {"sigma_emb_dim", a.sigma_emb_dim},
                {"cond_hidden", a.cond_hidden},
                {"frame_hidden", a.frame_hidden},
                {"mix_hidden", a.mix_hidden},
                {"sigma_data", a.sigma_data},
                {"hidden_capture", a.hidden_capture}};
}

DenoiserArch denoiser_arch_from_json(const json& j) {
    DenoiserArch a;
    a.frames = j.at("frames").get<int>();
    a.frame_dim = j.at("frame_dim").get<int>();
    a.obs_dim = j.at("obs_dim").get<int>();
    a.instr_dim = j.at("instr_dim").get<int>();
    a.sigma_emb_dim = j.at("sigma_emb_dim").get<int>();
    a.cond_hidden = j.at("cond_hidden").get<int>();
    a.frame_hidden = j.at("frame_hidden").get<int>();
    a.mix_hidden = j.at("mix_hidden").get<int>();
    a.sigma_data = j.at("sigma_data").get<double>();
    a.hidden_capture = j.at("hidden_capture").get<std::vector<std::string>>();
    return a;
}

json action_arch_to_json(const ActionArch& a, const AgmModelConfig& sched) {
    return json{{"horizon", a.horizon},
                {"action_dim", a.action_dim},
                {"hidden_dim", a.hidden_dim},
                {"instr_dim", a.instr_dim},
                {"k_emb_dim", a.k_emb_dim},
                {"h1", a.h1},
                {"h2", a.h2},
                {"k_max", a.k_max},
                {"decay_start", sched.decay_start},
                {"decay_end", sched.decay_end}};
}

ActionArch action_arch_from_json(const json& j) {
    ActionArch a;
    a.horizon = j.at("horizon").get<int>();
    a.action_dim = j.at("action_dim").get<int>();
    a.hidden_dim = j.at("hidden_dim").get<int>();
    a.instr_dim = j.at("instr_dim").get<int>();
    a.k_emb_dim = j.at("k_emb_dim").get<int>();
    a.h1 = j.at("h1").get<int>();
    a.h2 = j.at("h2").get<int>();
    a.k_max = j.at("k_max").get<int>();
    return a;
}

}  // namespace dyno
