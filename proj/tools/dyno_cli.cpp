#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dyno/config.hpp"
#include "dyno/io.hpp"
#include "dyno/metrics.hpp"
#include "dyno/rl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
    dyno::RunConfig cfg;
    std::string out;
    std::string hash;
    dyno::SeedSplitter seeds{0};
};

Context make_context(const std::string& config_path, std::uint64_t seed_override,
                     bool has_seed_override, const std::string& out_override, int threads) {
    Context ctx;
    ctx.cfg = dyno::load_config(config_path);
    if (has_seed_override) ctx.cfg.seed = seed_override;
    if (!out_override.empty()) ctx.cfg.out_dir = out_override;
    if (threads > 0) {
        ctx.cfg.threads = threads;
        ctx.cfg.posttrain.threads = threads;
    }
    fs::path out = ctx.cfg.out_dir;
    if (const char* root = std::getenv("DYNO_OUT"); root && *root && out.is_relative())
        out = fs::path(root) / out;
    ctx.out = out.string();
    fs::create_directories(out);
    ctx.hash = dyno::config_hash(ctx.cfg);
    ctx.seeds = dyno::SeedSplitter(ctx.cfg.seed);
    return ctx;
}

std::string join(const Context& ctx, const std::string& name) {
    return (fs::path(ctx.out) / name).string();
}

void write_manifest(const Context& ctx, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& artifacts,
                    double wallclock_s) {
    json m;
    m["command"] = command;
    m["config_hash"] = ctx.hash;
    m["seed"] = ctx.cfg.seed;
    json arts;
    for (const auto& [name, path] : artifacts) {
        // paths relative to the run directory keep manifests relocatable
        std::error_code ec;
        fs::path rel = fs::relative(path, ctx.out, ec);
        arts[name] = {{"path", ec || rel.empty() ? path : rel.string()},
                      {"hash", dyno::content_hash(dyno::wallclock_masked(path))}};
    }
    m["artifacts"] = std::move(arts);
    m["wallclock_s"] = wallclock_s;
    dyno::write_text_atomic(join(ctx, command + "_manifest.json"), m.dump(2) + "\n");
}

void check_hash(const Context& ctx, const json& descriptor, const std::string& what, bool force) {
    if (!descriptor.contains("config_hash")) return;
    const std::string h = descriptor.at("config_hash").get<std::string>();
    if (h != ctx.hash && !force)
        throw std::runtime_error(what + " was produced under config hash " + h +
                                 " but the current config hashes to " + ctx.hash +
                                 " (pass --force to evaluate anyway)");
}

dyno::MlpDenoiser load_vpm(const std::string& path, const Context& ctx, bool force) {
    dyno::Checkpoint ck = dyno::load_checkpoint(path);
    if (ck.component != "vpm")
        throw std::runtime_error(path + ": expected a vpm checkpoint, found " + ck.component);
    check_hash(ctx, ck.descriptor, path, force);
    dyno::MlpDenoiser net(dyno::denoiser_arch_from_json(ck.descriptor.at("arch")));
    for (auto& e : net.params().entries()) e.value = ck.params.value(e.name);
    return net;
}

dyno::ActionMlp load_agm(const std::string& path, const Context& ctx, bool force) {
    dyno::Checkpoint ck = dyno::load_checkpoint(path);
    if (ck.component != "agm")
        throw std::runtime_error(path + ": expected an agm checkpoint, found " + ck.component);
    check_hash(ctx, ck.descriptor, path, force);
    dyno::ActionMlp net(dyno::action_arch_from_json(ck.descriptor.at("arch")));
    for (auto& e : net.params().entries()) e.value = ck.params.value(e.name);
    return net;
}

double secs_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_gen_data(const Context& ctx, const std::string& format) {
    const auto t0 = std::chrono::steady_clock::now();
    dyno::Dataset all = dyno::make_dataset(ctx.cfg.data.episodes,
                                           ctx.seeds.derive("data"), ctx.cfg.world);
    auto [train, eval] = dyno::split_dataset(all, ctx.cfg.data.eval_fraction);
    const std::string train_path = join(ctx, "train.dyno");
    const std::string eval_path = join(ctx, "eval.dyno");
    dyno::save_dataset(train, train_path);
    dyno::save_dataset(eval, eval_path);
    std::vector<std::pair<std::string, std::string>> arts = {{"train", train_path},
                                                             {"eval", eval_path}};
    if (format == "json") {
        const std::string jpath = join(ctx, "dataset.json");
        json j;
        j["train"] = dyno::dataset_to_json(train);
        j["eval"] = dyno::dataset_to_json(eval);
        dyno::write_text_atomic(jpath, j.dump() + "\n");
        arts.emplace_back("json", jpath);
    }
    write_manifest(ctx, "gen-data", arts, secs_since(t0));
    std::cout << "wrote " << train.size() << " train / " << eval.size() << " eval episodes to "
              << ctx.out << "\n";
    return 0;
}

int cmd_train_sft(const Context& ctx, const std::string& train_path,
                  const std::string& eval_path) {
    const auto t0 = std::chrono::steady_clock::now();
    dyno::Dataset train = dyno::load_dataset(train_path.empty() ? join(ctx, "train.dyno") : train_path);
    dyno::Dataset eval = dyno::load_dataset(eval_path.empty() ? join(ctx, "eval.dyno") : eval_path);

    dyno::DenoiserArch arch = ctx.cfg.model.arch_for(ctx.cfg.world);
    dyno::MlpDenoiser net(arch);
    dyno::Rng init_rng(ctx.seeds.derive("init.vpm"));
    net.init_params(init_rng);

    dyno::SftConfig sft = ctx.cfg.sft;
    sft.sigma_min = ctx.cfg.schedule.sigma_min;
    sft.sigma_max = ctx.cfg.schedule.sigma_max;

    dyno::CsvWriter csv(join(ctx, "sft_metrics.csv"), {"step", "train_loss", "eval_loss"});
    dyno::SftResult res = dyno::train_sft(net, train, eval, sft, ctx.seeds,
                                          [&](const dyno::SftMetricsRow& r) {
                                              csv.row({static_cast<double>(r.step), r.train_loss,
                                                       r.eval_loss});
                                          });
    csv.close();

    json desc;
    desc["arch"] = dyno::denoiser_arch_to_json(net.arch());
    desc["config_hash"] = ctx.hash;
    desc["seed"] = ctx.cfg.seed;
    desc["stage"] = "sft";
    desc["hidden_capture"] = net.arch().hidden_capture;
    const std::string ckpt = join(ctx, "vpm_sft.dynp");
    dyno::save_checkpoint(ckpt, net.params(), "vpm", desc);
    write_manifest(ctx, "train-sft",
                   {{"checkpoint", ckpt}, {"metrics", join(ctx, "sft_metrics.csv")}},
                   secs_since(t0));
    std::cout << "sft eval loss " << res.initial_eval_loss << " -> " << res.final_eval_loss
              << "\n";
    return 0;
}

int cmd_posttrain(const Context& ctx, const std::string& init_path,
                  const std::string& train_path, const std::string& eval_path, bool force,
                  int dump_trajectories) {
    const auto t0 = std::chrono::steady_clock::now();
    dyno::Dataset train = dyno::load_dataset(train_path.empty() ? join(ctx, "train.dyno") : train_path);
    dyno::Dataset eval = dyno::load_dataset(eval_path.empty() ? join(ctx, "eval.dyno") : eval_path);
    dyno::MlpDenoiser net =
        load_vpm(init_path.empty() ? join(ctx, "vpm_sft.dynp") : init_path, ctx, force);

    const dyno::NoiseSchedule schedule = ctx.cfg.schedule.build();
    dyno::CsvWriter csv(join(ctx, "post_metrics.csv"),
                        {"step", "mean_reward", "mean_abs_adv", "clip_frac", "ratio_mean",
                         "ratio_max", "eval_l1", "wallclock_s"});
    dyno::PosttrainResult res =
        dyno::posttrain(net, train, eval, schedule, ctx.cfg.posttrain, ctx.seeds,
                        [&](const dyno::PosttrainRow& r) {
                            csv.row({static_cast<double>(r.step), r.mean_reward, r.mean_abs_adv,
                                     r.clip_frac, r.ratio_mean, r.ratio_max, r.eval_l1,
                                     r.wallclock_s});
                        });
    csv.close();

    json desc;
    desc["arch"] = dyno::denoiser_arch_to_json(net.arch());
    desc["config_hash"] = ctx.hash;
    desc["seed"] = ctx.cfg.seed;
    desc["stage"] = "posttrain";
    desc["hidden_capture"] = net.arch().hidden_capture;
    const std::string ckpt = join(ctx, "vpm_post.dynp");
    dyno::save_checkpoint(ckpt, net.params(), "vpm", desc);

    json stats;
    stats["initial_eval_l1"] = res.initial_eval_l1;
    stats["final_eval_l1"] = res.final_eval_l1;
    stats["steps"] = ctx.cfg.posttrain.steps;
    stats["algorithm"] = ctx.cfg.posttrain.algorithm == dyno::Algorithm::Grpo ? "grpo" : "ddpo";
    stats["config_hash"] = ctx.hash;
    dyno::write_text_atomic(join(ctx, "post_stats.json"), stats.dump(2) + "\n");

    if (dump_trajectories > 0) {
        json dump = json::array();
        const int n = std::min<int>(dump_trajectories, static_cast<int>(eval.episodes.size()));
        for (int i = 0; i < n; ++i) {
            const dyno::Episode& ep = eval.episodes[static_cast<std::size_t>(i)];
            dyno::Rng nrng(ctx.seeds.derive("dump.noise", static_cast<std::uint64_t>(i)));
            dyno::Rng rrng(ctx.seeds.derive("dump.rollout", static_cast<std::uint64_t>(i)));
            const dyno::Tensor noise = dyno::ops::scale(
                nrng.normal_tensor(ep.expert_latent.shape()), schedule.sigma_max());
            dump.push_back(dyno::trajectory_to_json(dyno::rollout_hybrid(
                net, ep.condition, noise, schedule, rrng, ctx.cfg.posttrain.sde_steps)));
        }
        dyno::write_text_atomic(join(ctx, "trajectories.json"), dump.dump(2) + "\n");
    }

    write_manifest(ctx, "posttrain",
                   {{"checkpoint", ckpt},
                    {"metrics", join(ctx, "post_metrics.csv")},
                    {"stats", join(ctx, "post_stats.json")}},
                   secs_since(t0));
    std::cout << "posttrain eval L1 " << res.initial_eval_l1 << " -> " << res.final_eval_l1
              << "\n";
    return 0;
}

int cmd_train_agm(const Context& ctx, const std::string& vpm_path, const std::string& init_agm,
                  const std::string& out_name, bool freeze, const std::string& train_path,
                  const std::string& eval_path, bool force) {
    const auto t0 = std::chrono::steady_clock::now();
    dyno::Dataset train = dyno::load_dataset(train_path.empty() ? join(ctx, "train.dyno") : train_path);
    dyno::Dataset eval = dyno::load_dataset(eval_path.empty() ? join(ctx, "eval.dyno") : eval_path);
    dyno::MlpDenoiser vpm =
        load_vpm(vpm_path.empty() ? join(ctx, "vpm_post.dynp") : vpm_path, ctx, force);

    dyno::ActionArch arch = ctx.cfg.agm_model.arch_for(ctx.cfg.world, vpm.arch().hidden_dim());
    dyno::ActionMlp agm(arch);
    if (!init_agm.empty()) {
        agm = load_agm(init_agm, ctx, force);
    } else {
        dyno::Rng init_rng(ctx.seeds.derive("init.agm"));
        agm.init_params(init_rng);
    }

    const dyno::NoiseSchedule schedule = ctx.cfg.schedule.build();
    const dyno::ActionNoiseSchedule asched = dyno::ActionNoiseSchedule::linear(
        ctx.cfg.agm_model.k_max, ctx.cfg.agm_model.decay_start, ctx.cfg.agm_model.decay_end);
    dyno::AgmConfig acfg = ctx.cfg.agm;
    acfg.freeze = freeze;

    dyno::CsvWriter csv(join(ctx, "agm_metrics.csv"), {"epoch", "train_loss", "eval_action_mse"});
    dyno::AgmResult res = dyno::train_agm(agm, train, eval, vpm, schedule, asched, acfg,
                                          ctx.seeds, [&](const dyno::AgmMetricsRow& r) {
                                              csv.row({static_cast<double>(r.epoch), r.train_loss,
                                                       r.eval_action_mse});
                                          });
    csv.close();

    json desc;
    desc["arch"] = dyno::action_arch_to_json(agm.arch(), ctx.cfg.agm_model);
    desc["config_hash"] = ctx.hash;
    desc["seed"] = ctx.cfg.seed;
    desc["frozen"] = freeze;
    desc["action_scale"] = res.action_scale;
    desc["vpm_checkpoint"] =
        fs::path(vpm_path.empty() ? join(ctx, "vpm_post.dynp") : vpm_path).filename().string();
    const std::string ckpt = join(ctx, out_name);
    dyno::save_checkpoint(ckpt, agm.params(), "agm", desc);
    write_manifest(ctx, "train-agm",
                   {{"checkpoint", ckpt}, {"metrics", join(ctx, "agm_metrics.csv")}},
                   secs_since(t0));
    std::cout << "agm eval action mse " << res.final_eval.action_mse << "\n";
    return 0;
}

int cmd_eval(const Context& ctx, const std::string& vpm_path, const std::string& agm_path,
             const std::string& eval_path, const std::string& report_name, bool force) {
    const auto t0 = std::chrono::steady_clock::now();
    dyno::Dataset eval = dyno::load_dataset(eval_path.empty() ? join(ctx, "eval.dyno") : eval_path);
    dyno::MlpDenoiser vpm =
        load_vpm(vpm_path.empty() ? join(ctx, "vpm_post.dynp") : vpm_path, ctx, force);
    const dyno::NoiseSchedule schedule = ctx.cfg.schedule.build();

    json report;
    report["config_hash"] = ctx.hash;
    report["seed"] = ctx.cfg.seed;
    report["eval_l1"] = dyno::l1_eval(vpm, eval, schedule, ctx.seeds);
    if (!agm_path.empty()) {
        const dyno::Checkpoint ack = dyno::load_checkpoint(agm_path);
        dyno::ActionMlp agm = load_agm(agm_path, ctx, force);
        const double scale = ack.descriptor.value("action_scale", 1.0);
        const dyno::ActionNoiseSchedule asched = dyno::ActionNoiseSchedule::linear(
            ctx.cfg.agm_model.k_max, ctx.cfg.agm_model.decay_start, ctx.cfg.agm_model.decay_end);
        const dyno::AgmEval ae = dyno::eval_actions(agm, vpm, eval, schedule, asched,
                                                    ctx.cfg.eval.ddim_steps, ctx.seeds, scale);
        report["action_mse"] = ae.action_mse;
        report["per_mode_mse"] = ae.per_mode_mse;
        report["action_scale"] = scale;
    }
    const std::string rpath = join(ctx, report_name);
    dyno::write_text_atomic(rpath, report.dump(2) + "\n");
    write_manifest(ctx, "eval", {{"report", rpath}}, secs_since(t0));
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_er(const Context& ctx, const std::string& vpm_path, const std::string& agm_path,
           const std::string& eval_path, bool force) {
    const auto t0 = std::chrono::steady_clock::now();
    dyno::Dataset eval = dyno::load_dataset(eval_path.empty() ? join(ctx, "eval.dyno") : eval_path);
    dyno::MlpDenoiser vpm =
        load_vpm(vpm_path.empty() ? join(ctx, "vpm_post.dynp") : vpm_path, ctx, force);
    dyno::ActionMlp agm = load_agm(agm_path.empty() ? join(ctx, "agm.dynp") : agm_path, ctx, force);
    const dyno::NoiseSchedule schedule = ctx.cfg.schedule.build();
    const dyno::ActionNoiseSchedule asched = dyno::ActionNoiseSchedule::linear(
        ctx.cfg.agm_model.k_max, ctx.cfg.agm_model.decay_start, ctx.cfg.agm_model.decay_end);

    const dyno::ErReport er = dyno::er_report(agm, vpm, eval, schedule, asched,
                                              ctx.cfg.eval.ddim_steps, ctx.seeds);
    json j;
    j["avg_er"] = er.avg_er;
    j["avg_err"] = er.avg_err;
    j["d_a"] = er.d_a;
    j["d_v"] = er.d_v;
    j["per_episode"] = er.per_episode_er;
    j["config_hash"] = ctx.hash;
    const std::string rpath = join(ctx, "er_report.json");
    dyno::write_text_atomic(rpath, j.dump(2) + "\n");

    dyno::CsvWriter csv(join(ctx, "spectrum.csv"), {"index", "singular_value", "cumulative_fraction"});
    double total = 0.0;
    for (double s : er.mean_spectrum) total += s;
    double acc = 0.0;
    for (std::size_t i = 0; i < er.mean_spectrum.size(); ++i) {
        acc += er.mean_spectrum[i];
        csv.row({static_cast<double>(i), er.mean_spectrum[i], total > 0 ? acc / total : 0.0});
    }
    csv.close();
    write_manifest(ctx, "er", {{"report", rpath}, {"spectrum", join(ctx, "spectrum.csv")}},
                   secs_since(t0));
    std::cout << "avg_er " << er.avg_er << " avg_err " << er.avg_err << "\n";
    return 0;
}

int cmd_plot(const Context& ctx, const std::string& metrics_path, const std::string& x_col,
             const std::string& y_cols, const std::string& out_name) {
    const dyno::CsvTable t =
        dyno::read_csv(metrics_path.empty() ? join(ctx, "post_metrics.csv") : metrics_path);
    const int xi = t.column_index(x_col);
    std::vector<dyno::SvgSeries> series;
    std::istringstream ys(y_cols);
    std::string col;
    while (std::getline(ys, col, ',')) {
        const int yi = t.column_index(col);
        dyno::SvgSeries s;
        s.label = col;
        for (const auto& row : t.rows) {
            s.x.push_back(row[static_cast<std::size_t>(xi)]);
            s.y.push_back(row[static_cast<std::size_t>(yi)]);
        }
        series.push_back(std::move(s));
    }
    const std::string out = join(ctx, out_name);
    dyno::write_svg_chart(out, y_cols + " vs " + x_col, x_col, y_cols, series);
    std::cout << "wrote " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dyno: latent video dynamics lab (data, training, policy optimization, metrics)"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::uint64_t seed_override = 0;
    bool has_seed = false;
    std::string out_override;
    int threads = 0;
    app.add_option("--config", config_path, "run configuration (json)")->required();
    auto* seed_opt = app.add_option("--seed", seed_override, "override master seed");
    app.add_option("--out", out_override, "override output directory");
    app.add_option("--threads", threads, "worker threads for rollouts (default from config)");

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset and split");
    std::string format = "binary";
    gen->add_option("--format", format, "binary|json (json adds an inspection export)");

    auto* sft = app.add_subcommand("train-sft", "supervised pretraining of the latent predictor");
    std::string train_path, eval_path;
    sft->add_option("--train", train_path, "train dataset path");
    sft->add_option("--eval", eval_path, "eval dataset path");

    auto* post = app.add_subcommand("posttrain", "policy-gradient post-training");
    std::string init_path;
    bool force = false;
    post->add_option("--init", init_path, "initial vpm checkpoint (default <out>/vpm_sft.dynp)");
    post->add_option("--train", train_path, "train dataset path");
    post->add_option("--eval", eval_path, "eval dataset path");
    std::string algorithm, reward;
    int sde_steps = 0;
    post->add_option("--algorithm", algorithm, "grpo|ddpo (overrides config)");
    post->add_option("--sde-steps", sde_steps, "stochastic steps per rollout (overrides config)");
    post->add_option("--reward", reward, "latent|pixel (overrides config)");
    int dump_trajectories = 0;
    post->add_option("--dump-trajectories", dump_trajectories,
                     "write a rollout debug json for N eval episodes");

    auto* agm = app.add_subcommand("train-agm", "train the action head on extracted features");
    std::string vpm_path, init_agm, out_name = "agm.dynp";
    bool freeze = false;
    agm->add_option("--vpm", vpm_path, "vpm checkpoint (default <out>/vpm_post.dynp)");
    agm->add_option("--init-agm", init_agm, "initial agm checkpoint (for the frozen mode)");
    agm->add_option("--out-name", out_name, "checkpoint filename");
    agm->add_flag("--freeze", freeze, "skip optimization, evaluate the initial weights");

    auto* ev = app.add_subcommand("eval", "latent error and action error report");
    std::string agm_path, report_name = "eval_report.json";
    ev->add_option("--vpm", vpm_path, "vpm checkpoint (default <out>/vpm_post.dynp)");
    ev->add_option("--agm", agm_path, "agm checkpoint (optional)");
    ev->add_option("--eval-data", eval_path, "eval dataset path");
    ev->add_option("--report-name", report_name, "report filename");

    auto* er = app.add_subcommand("er", "effective-rank report of the vision-action Jacobian");
    er->add_option("--vpm", vpm_path, "vpm checkpoint (default <out>/vpm_post.dynp)");
    er->add_option("--agm", agm_path, "agm checkpoint (default <out>/agm.dynp)");
    er->add_option("--eval-data", eval_path, "eval dataset path");

    auto* plot = app.add_subcommand("plot", "svg line chart from a metrics csv");
    std::string metrics_path, x_col = "step", y_cols = "eval_l1", plot_out = "plot.svg";
    plot->add_option("--metrics", metrics_path, "metrics csv (default <out>/post_metrics.csv)");
    plot->add_option("--x", x_col, "x column");
    plot->add_option("--y", y_cols, "comma-separated y columns");
    plot->add_option("--out-name", plot_out, "output filename");

    for (auto* sc : {post, agm, ev, er})
        sc->add_flag("--force", force, "skip config-hash verification");

    CLI11_PARSE(app, argc, argv);
    has_seed = seed_opt->count() > 0;

    try {
        Context ctx = make_context(config_path, seed_override, has_seed, out_override, threads);
        if (post->parsed()) {
            if (!algorithm.empty()) {
                if (algorithm != "grpo" && algorithm != "ddpo")
                    throw std::invalid_argument("--algorithm must be grpo|ddpo");
                ctx.cfg.posttrain.algorithm =
                    algorithm == "ddpo" ? dyno::Algorithm::Ddpo : dyno::Algorithm::Grpo;
            }
            if (!reward.empty()) {
                if (reward != "latent" && reward != "pixel")
                    throw std::invalid_argument("--reward must be latent|pixel");
                ctx.cfg.posttrain.reward =
                    reward == "pixel" ? dyno::RewardKind::Pixel : dyno::RewardKind::Latent;
            }
            if (sde_steps > 0) ctx.cfg.posttrain.sde_steps = sde_steps;
            ctx.cfg.validate();
            ctx.hash = dyno::config_hash(ctx.cfg);  // flags are part of the effective config
        }
        if (gen->parsed()) return cmd_gen_data(ctx, format);
        if (sft->parsed()) return cmd_train_sft(ctx, train_path, eval_path);
        if (post->parsed())
            return cmd_posttrain(ctx, init_path, train_path, eval_path, force,
                                  dump_trajectories);
        if (agm->parsed())
            return cmd_train_agm(ctx, vpm_path, init_agm, out_name, freeze, train_path,
                                 eval_path, force);
        if (ev->parsed()) return cmd_eval(ctx, vpm_path, agm_path, eval_path, report_name, force);
        if (er->parsed()) return cmd_er(ctx, vpm_path, agm_path, eval_path, force);
        if (plot->parsed()) return cmd_plot(ctx, metrics_path, x_col, y_cols, plot_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
