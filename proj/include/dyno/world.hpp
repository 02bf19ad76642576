#pragma once

#include <cstdint>
#include <vector>

#include "dyno/rng.hpp"
#include "dyno/tensor.hpp"

namespace dyno {

/// Full-scale training-split size, kept as a documented reference constant;
/// in-memory generation is capped well below it (see WorldConfig::max_episodes).
inline constexpr int kFullScaleTrainSamples = 129454;

struct WorldConfig {
    int frames = 16;           // video length F
    int frame_size = 16;       // square frame H = W, must be even
    int modes = 4;             // instruction count M
    int horizon = 10;          // action steps per episode
    int action_dim = 2;        // planar velocity commands
    double speed = 0.03;        // arena units per frame
    double speed_jitter = 0.0;  // relative speed noise; nonzero makes futures
                                // ambiguous given the first frame
    double blob_sigma = 1.6;   // blob radius in pixels
    int max_episodes = 20000;  // in-memory cap for make_dataset

    int latent_channels() const { return 4; }
    int latent_hw() const { return frame_size / 2; }
    std::vector<int> latent_shape() const { return {frames, 4, latent_hw(), latent_hw()}; }
    std::int64_t latent_size() const { return Tensor::count(latent_shape()); }
    int obs_dim() const { return 4 * latent_hw() * latent_hw(); }

    void validate() const;
};

struct WorldState {
    double pos[2];
    double vel[2];
    int mode;
};

/// Conditioning signal: first-frame latent slice plus instruction one-hot.
struct Condition {
    Tensor observation;  // [4*h*w]
    Tensor instruction;  // [M], one-hot
    int mode = 0;
};

struct Episode {
    Condition condition;
    Tensor frames;          // [F, H, W]; may be empty after deserialization
    Tensor expert_latent;   // [F, 4, h, w]
    Tensor expert_actions;  // [horizon, action_dim]
};

struct Dataset {
    WorldConfig config;
    std::vector<Episode> episodes;

    std::size_t size() const { return episodes.size(); }
};

/// Deterministic episode of the mode's dynamics law; expert actions are the
/// true per-frame displacements (ground-truth inverse dynamics).
Episode gen_episode(std::uint64_t seed, int mode, const WorldConfig& config);

/// The per-frame positions an episode is rendered from.
Tensor simulate_positions(std::uint64_t seed, int mode, const WorldConfig& config);

/// Fixed linear encoder: per-frame 2x2 Haar blocks stacked as 4 channels
/// (block mean and the three difference patterns). Exactly invertible.
Tensor encode_frames(const Tensor& frames);

/// Right-inverse of encode_frames.
Tensor decode_latent(const Tensor& latent);

/// Episodes i use derived seeds seed^i; modes cycle round-robin over 0..M-1.
Dataset make_dataset(int n, std::uint64_t seed, const WorldConfig& config);

/// Order-stable split; eval episodes are the trailing fraction.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double eval_fraction);

Tensor instruction_one_hot(int mode, int modes);

}  // namespace dyno
