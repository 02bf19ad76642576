#include <doctest.h>

#include <cmath>

#include "dyno/io.hpp"
#include "dyno/ops.hpp"
#include "dyno/world.hpp"

using namespace dyno;

namespace {

WorldConfig small_world() {
    WorldConfig cfg;
    cfg.frames = 8;
    cfg.frame_size = 8;
    cfg.modes = 4;
    cfg.horizon = 5;
    return cfg;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::int64_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("gen_episode is a pure function of (seed, mode, config)") {
    const WorldConfig cfg = small_world();
    const Episode a = gen_episode(7, 0, cfg);
    const Episode b = gen_episode(7, 0, cfg);
    CHECK(tensors_equal(a.frames, b.frames));
    CHECK(tensors_equal(a.expert_latent, b.expert_latent));
    CHECK(tensors_equal(a.expert_actions, b.expert_actions));
    CHECK(tensors_equal(a.condition.observation, b.condition.observation));
}

TEST_CASE("drift mode with zero speed jitter gives constant first differences") {
    WorldConfig cfg = small_world();
    cfg.speed = 0.01;  // small enough that no wall reflection occurs
    cfg.speed_jitter = 0.0;
    const Episode ep = gen_episode(3, 0, cfg);
    const double dx0 = ep.expert_actions[0];
    for (int t = 0; t < cfg.horizon; ++t) {
        CHECK(ep.expert_actions[2 * t] == doctest::Approx(dx0).epsilon(1e-12));
        CHECK(ep.expert_actions[2 * t + 1] == doctest::Approx(0.0).epsilon(1e-12));
    }
    CHECK(dx0 == doctest::Approx(0.01));
}

TEST_CASE("stored expert latent is exactly encode(frames)") {
    const Episode ep = gen_episode(11, 1, small_world());
    CHECK(tensors_equal(ep.expert_latent, encode_frames(ep.frames)));
}

TEST_CASE("mode out of range is rejected") {
    CHECK_THROWS_AS(gen_episode(0, 4, small_world()), std::invalid_argument);
    CHECK_THROWS_AS(gen_episode(0, -1, small_world()), std::invalid_argument);
}

TEST_CASE("encoder: zero frames give zero latent, repeated calls agree") {
    Tensor frames({3, 8, 8});
    const Tensor lat = encode_frames(frames);
    for (std::int64_t i = 0; i < lat.size(); ++i) CHECK(lat[i] == 0.0);
    CHECK(tensors_equal(encode_frames(frames), encode_frames(frames)));
}

TEST_CASE("encoder distinguishes blob positions one latent cell apart") {
    Tensor a({1, 8, 8}), b({1, 8, 8});
    a[0] = 1.0;       // pixel (0,0) -> latent cell (0,0)
    b[2] = 1.0;       // pixel (0,2) -> latent cell (0,1)
    const Tensor la = encode_frames(a);
    const Tensor lb = encode_frames(b);
    CHECK_FALSE(tensors_equal(la, lb));
}

TEST_CASE("encoder is linear") {
    Rng rng(42);
    Tensor f = rng.normal_tensor({2, 8, 8});
    const Tensor l1 = ops::scale(encode_frames(f), 0.5);
    const Tensor l2 = encode_frames(ops::scale(f, 0.5));
    CHECK(tensors_equal(l1, l2));  // exact for powers of two
    const Tensor l3 = ops::scale(encode_frames(f), 1.7);
    const Tensor l4 = encode_frames(ops::scale(f, 1.7));
    for (std::int64_t i = 0; i < l3.size(); ++i)
        CHECK(l3[i] == doctest::Approx(l4[i]).epsilon(1e-12));
}

TEST_CASE("decode_latent inverts encode_frames") {
    Rng rng(1);
    const Tensor f = rng.normal_tensor({2, 8, 8});
    const Tensor back = decode_latent(encode_frames(f));
    for (std::int64_t i = 0; i < f.size(); ++i)
        CHECK(back[i] == doctest::Approx(f[i]).epsilon(1e-12));
}

TEST_CASE("encoder rejects empty input") {
    CHECK_THROWS_AS(encode_frames(Tensor({0, 8, 8})), std::invalid_argument);
}

TEST_CASE("latents of rendered episodes stay within [-1, 1]") {
    const Episode ep = gen_episode(5, 3, small_world());
    CHECK(ops::max_abs(ep.expert_latent) <= 1.0);
}

TEST_CASE("orbit mode conserves the radius") {
    WorldConfig cfg = small_world();
    cfg.frames = 16;
    const Tensor pos = simulate_positions(9, 2, cfg);
    const double r0 = std::hypot(pos[0] - 0.5, pos[1] - 0.5);
    for (int t = 1; t < cfg.frames; ++t) {
        const double r = std::hypot(pos[2 * t] - 0.5, pos[2 * t + 1] - 0.5);
        CHECK(std::abs(r - r0) < 1e-9);
    }
}

TEST_CASE("make_dataset cycles modes round-robin and is deterministic") {
    WorldConfig cfg = small_world();
    cfg.modes = 2;
    const Dataset a = make_dataset(10, 123, cfg);
    const Dataset b = make_dataset(10, 123, cfg);
    int counts[2] = {0, 0};
    for (const Episode& ep : a.episodes) counts[ep.condition.mode]++;
    CHECK(counts[0] == 5);
    CHECK(counts[1] == 5);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(tensors_equal(a.episodes[i].expert_latent, b.episodes[i].expert_latent));
}

TEST_CASE("full-scale episode count exceeds the in-memory cap") {
    CHECK(kFullScaleTrainSamples == 129454);
    CHECK_THROWS_AS(make_dataset(kFullScaleTrainSamples, 1, small_world()), std::runtime_error);
}

TEST_CASE("split is order-stable, disjoint and exhaustive") {
    const Dataset ds = make_dataset(10, 77, small_world());
    auto [train, eval] = split_dataset(ds, 0.2);
    CHECK(train.size() == 8);
    CHECK(eval.size() == 2);
    for (std::size_t i = 0; i < train.size(); ++i)
        CHECK(tensors_equal(train.episodes[i].expert_latent, ds.episodes[i].expert_latent));
    for (std::size_t i = 0; i < eval.size(); ++i)
        CHECK(tensors_equal(eval.episodes[i].expert_latent,
                            ds.episodes[train.size() + i].expert_latent));
    // eval conditions never appear in train
    for (const Episode& e : eval.episodes)
        for (const Episode& t : train.episodes)
            CHECK_FALSE(tensors_equal(e.condition.observation, t.condition.observation));
    auto [train2, eval2] = split_dataset(ds, 0.2);
    CHECK(train2.size() == train.size());
    CHECK_THROWS_AS(split_dataset(ds, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(split_dataset(ds, 1.0), std::invalid_argument);
}

TEST_CASE("dataset serialization is byte-identical across runs") {
    const Dataset ds = make_dataset(4, 99, small_world());
    const std::string p1 = "/tmp/dyno_test_ds1.dyno";
    const std::string p2 = "/tmp/dyno_test_ds2.dyno";
    save_dataset(ds, p1);
    save_dataset(make_dataset(4, 99, small_world()), p2);
    CHECK(read_text(p1) == read_text(p2));
}
