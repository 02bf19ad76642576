#include "dyno/world.hpp"

#include <cmath>
#include <stdexcept>

namespace dyno {

namespace {

struct OrbitParams {
    double radius;
    double angle;
    double omega;
};

void reflect_axis(double& p, double& v) {
    // elastic wall reflection keeps positions inside [0,1]
    while (p < 0.0 || p > 1.0) {
        if (p < 0.0) {
            p = -p;
            v = -v;
        } else {
            p = 2.0 - p;
            v = -v;
        }
    }
}

void advance(WorldState& s, OrbitParams& orbit) {
    if (s.mode == 2) {
        orbit.angle += orbit.omega;
        const double cx = 0.5, cy = 0.5;
        const double nx = cx + orbit.radius * std::cos(orbit.angle);
        const double ny = cy + orbit.radius * std::sin(orbit.angle);
        s.vel[0] = nx - s.pos[0];
        s.vel[1] = ny - s.pos[1];
        s.pos[0] = nx;
        s.pos[1] = ny;
        return;
    }
    s.pos[0] += s.vel[0];
    s.pos[1] += s.vel[1];
    reflect_axis(s.pos[0], s.vel[0]);
    reflect_axis(s.pos[1], s.vel[1]);
}

void render_frame(const WorldState& s, const WorldConfig& cfg, double* out) {
    const int n = cfg.frame_size;
    const double cx = s.pos[0] * n;
    const double cy = s.pos[1] * n;
    const double inv = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const double dx = (x + 0.5) - cx;
            const double dy = (y + 0.5) - cy;
            out[y * n + x] = std::exp(-(dx * dx + dy * dy) * inv);
        }
    }
}

}  // namespace

void WorldConfig::validate() const {
    if (frames < 2) throw std::invalid_argument("WorldConfig: frames must be >= 2");
    if (frame_size < 2 || frame_size % 2 != 0)
        throw std::invalid_argument("WorldConfig: frame_size must be even and >= 2");
    if (modes < 1 || modes > 4) throw std::invalid_argument("WorldConfig: modes must be in [1,4]");
    if (horizon < 1 || horizon > frames - 1)
        throw std::invalid_argument("WorldConfig: horizon must be in [1, frames-1]");
    if (action_dim != 2) throw std::invalid_argument("WorldConfig: action_dim must be 2");
    if (speed <= 0.0) throw std::invalid_argument("WorldConfig: speed must be > 0");
    if (max_episodes < 1) throw std::invalid_argument("WorldConfig: max_episodes must be >= 1");
}

Tensor instruction_one_hot(int mode, int modes) {
    Tensor t({modes});
    t[mode] = 1.0;
    return t;
}

namespace {

void init_state(std::uint64_t seed, int mode, const WorldConfig& cfg, WorldState& s,
                OrbitParams& orbit) {
    if (mode < 0 || mode >= cfg.modes)
        throw std::invalid_argument("gen_episode: mode " + std::to_string(mode) +
                                    " out of range [0," + std::to_string(cfg.modes) + ")");
    Rng rng(SeedSplitter::splitmix(seed));
    s = WorldState{};
    s.mode = mode;
    s.pos[0] = rng.uniform(0.25, 0.75);
    s.pos[1] = rng.uniform(0.25, 0.75);
    const double speed = cfg.speed * (1.0 + cfg.speed_jitter * (2.0 * rng.uniform() - 1.0));

    orbit = OrbitParams{0.0, 0.0, 0.0};
    switch (mode) {
        case 0:  // drift right
            s.vel[0] = speed;
            s.vel[1] = 0.0;
            break;
        case 1:  // drift up
            s.vel[0] = 0.0;
            s.vel[1] = speed;
            break;
        case 2: {  // orbit around the arena center
            const double dx = s.pos[0] - 0.5, dy = s.pos[1] - 0.5;
            orbit.radius = std::clamp(std::sqrt(dx * dx + dy * dy), 0.12, 0.32);
            orbit.angle = std::atan2(dy, dx);
            orbit.omega = speed / orbit.radius;
            s.pos[0] = 0.5 + orbit.radius * std::cos(orbit.angle);
            s.pos[1] = 0.5 + orbit.radius * std::sin(orbit.angle);
            s.vel[0] = s.vel[1] = 0.0;
            break;
        }
        case 3: {  // diagonal bounce; fixed heading keeps the future a
                   // function of the first frame
            const double d = speed / std::sqrt(2.0);
            s.vel[0] = d;
            s.vel[1] = d;
            break;
        }
        default:
            break;
    }
}

}  // namespace

Tensor simulate_positions(std::uint64_t seed, int mode, const WorldConfig& cfg) {
    cfg.validate();
    WorldState s;
    OrbitParams orbit;
    init_state(seed, mode, cfg, s, orbit);
    Tensor positions({cfg.frames, 2});
    for (int t = 0; t < cfg.frames; ++t) {
        positions[2 * t] = s.pos[0];
        positions[2 * t + 1] = s.pos[1];
        advance(s, orbit);
    }
    return positions;
}

Episode gen_episode(std::uint64_t seed, int mode, const WorldConfig& cfg) {
    cfg.validate();
    WorldState s;
    OrbitParams orbit;
    init_state(seed, mode, cfg, s, orbit);

    Episode ep;
    ep.frames = Tensor({cfg.frames, cfg.frame_size, cfg.frame_size});
    Tensor positions({cfg.frames, 2});
    const std::int64_t frame_elems =
        static_cast<std::int64_t>(cfg.frame_size) * cfg.frame_size;
    for (int t = 0; t < cfg.frames; ++t) {
        positions[2 * t] = s.pos[0];
        positions[2 * t + 1] = s.pos[1];
        render_frame(s, cfg, ep.frames.data() + t * frame_elems);
        advance(s, orbit);
    }

    ep.expert_actions = Tensor({cfg.horizon, cfg.action_dim});
    for (int t = 0; t < cfg.horizon; ++t) {
        ep.expert_actions[2 * t] = positions[2 * (t + 1)] - positions[2 * t];
        ep.expert_actions[2 * t + 1] = positions[2 * (t + 1) + 1] - positions[2 * t + 1];
    }

    ep.expert_latent = encode_frames(ep.frames);

    const int hw = cfg.latent_hw();
    const std::int64_t obs_n = static_cast<std::int64_t>(4) * hw * hw;
    Tensor obs({static_cast<int>(obs_n)});
    for (std::int64_t i = 0; i < obs_n; ++i) obs[i] = ep.expert_latent[i];
    ep.condition.observation = std::move(obs);
    ep.condition.instruction = instruction_one_hot(mode, cfg.modes);
    ep.condition.mode = mode;
    return ep;
}

Tensor encode_frames(const Tensor& frames) {
    if (frames.size() == 0 || frames.rank() != 3)
        throw std::invalid_argument("encode_frames: need a nonempty [F,H,W] tensor");
    const int f = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("encode_frames: frame size must be even");
    const int lh = h / 2, lw = w / 2;
    Tensor latent({f, 4, lh, lw});
    for (int t = 0; t < f; ++t) {
        const double* fr = frames.data() + static_cast<std::int64_t>(t) * h * w;
        double* lt = latent.data() + static_cast<std::int64_t>(t) * 4 * lh * lw;
        for (int y = 0; y < lh; ++y) {
            for (int x = 0; x < lw; ++x) {
                const double a = fr[(2 * y) * w + 2 * x];
                const double b = fr[(2 * y) * w + 2 * x + 1];
                const double c = fr[(2 * y + 1) * w + 2 * x];
                const double d = fr[(2 * y + 1) * w + 2 * x + 1];
                lt[0 * lh * lw + y * lw + x] = (a + b + c + d) * 0.25;
                lt[1 * lh * lw + y * lw + x] = (a - b + c - d) * 0.25;
                lt[2 * lh * lw + y * lw + x] = (a + b - c - d) * 0.25;
                lt[3 * lh * lw + y * lw + x] = (a - b - c + d) * 0.25;
            }
        }
    }
    return latent;
}

Tensor decode_latent(const Tensor& latent) {
    if (latent.rank() != 4 || latent.dim(1) != 4)
        throw std::invalid_argument("decode_latent: need a [F,4,h,w] tensor");
    const int f = latent.dim(0), lh = latent.dim(2), lw = latent.dim(3);
    const int h = 2 * lh, w = 2 * lw;
    Tensor frames({f, h, w});
    for (int t = 0; t < f; ++t) {
        const double* lt = latent.data() + static_cast<std::int64_t>(t) * 4 * lh * lw;
        double* fr = frames.data() + static_cast<std::int64_t>(t) * h * w;
        for (int y = 0; y < lh; ++y) {
            for (int x = 0; x < lw; ++x) {
                const double c0 = lt[0 * lh * lw + y * lw + x];
                const double c1 = lt[1 * lh * lw + y * lw + x];
                const double c2 = lt[2 * lh * lw + y * lw + x];
                const double c3 = lt[3 * lh * lw + y * lw + x];
                fr[(2 * y) * w + 2 * x] = c0 + c1 + c2 + c3;
                fr[(2 * y) * w + 2 * x + 1] = c0 - c1 + c2 - c3;
                fr[(2 * y + 1) * w + 2 * x] = c0 + c1 - c2 - c3;
                fr[(2 * y + 1) * w + 2 * x + 1] = c0 - c1 - c2 + c3;
            }
        }
    }
    return frames;
}

Dataset make_dataset(int n, std::uint64_t seed, const WorldConfig& cfg) {
    cfg.validate();
    if (n < 1) throw std::invalid_argument("make_dataset: n must be >= 1");
    if (n > cfg.max_episodes)
        throw std::runtime_error("make_dataset: " + std::to_string(n) +
                                 " episodes exceed the in-memory cap of " +
                                 std::to_string(cfg.max_episodes) +
                                 " (raise WorldConfig.max_episodes to override)");
    Dataset ds;
    ds.config = cfg;
    ds.episodes.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        ds.episodes.push_back(
            gen_episode(seed ^ static_cast<std::uint64_t>(i), i % cfg.modes, cfg));
    return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double eval_fraction) {
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0))
        throw std::invalid_argument("split_dataset: eval_fraction must be in (0,1)");
    const int n = static_cast<int>(dataset.size());
    if (n < 2) throw std::invalid_argument("split_dataset: need at least 2 episodes");
    int n_eval = static_cast<int>(std::llround(eval_fraction * n));
    n_eval = std::clamp(n_eval, 1, n - 1);
    Dataset train, eval;
    train.config = eval.config = dataset.config;
    train.episodes.assign(dataset.episodes.begin(), dataset.episodes.end() - n_eval);
    eval.episodes.assign(dataset.episodes.end() - n_eval, dataset.episodes.end());
    return {std::move(train), std::move(eval)};
}

}  // namespace dyno
