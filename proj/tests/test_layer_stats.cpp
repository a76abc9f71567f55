#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "shapprune/layer_stats.hpp"
#include "shapprune/model.hpp"

using namespace shapprune;

namespace {

model_config tiny_config() {
    model_config cfg;
    cfg.vocab_size = 40;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 3;
    cfg.ffn_hidden = 24;
    cfg.max_seq_len = 32;
    cfg.seed = 7;
    return cfg;
}

void fill_inner(model_checkpoint& m, int layer, int inner, float value) {
    auto& w = m.layers[std::size_t(layer - 1)].inner(inner);
    std::fill(w.data.begin(), w.data.end(), value);
}

const magnitude_stats_entry& entry_of(const magnitude_stats& s, int layer, int inner) {
    for (const auto& e : s.entries) {
        if (e.layer == layer && e.inner == inner) return e;
    }
    REQUIRE(false);
    return s.entries.front();
}

} // namespace

TEST_CASE("stats cover every layer and inner matrix exactly once") {
    const model_config cfg = tiny_config();
    const auto s = compute_magnitude_stats(model_checkpoint::random_init(cfg));
    REQUIRE(s.entries.size() == std::size_t(cfg.n_layers) * inner_layer_count);
    std::size_t i = 0;
    for (int t = 1; t <= int(cfg.n_layers); ++t) {
        for (int inner = 1; inner <= inner_layer_count; ++inner, ++i) {
            CHECK(s.entries[i].layer == t);
            CHECK(s.entries[i].inner == inner);
            CHECK(s.entries[i].count > 0);
        }
    }
}

TEST_CASE("a constant matrix has mean |c| and zero spread") {
    const model_config cfg = tiny_config();
    model_checkpoint m = model_checkpoint::zeros(cfg);
    fill_inner(m, 2, 3, -2.5f);

    const auto s = compute_magnitude_stats(m);
    const auto& e = entry_of(s, 2, 3);
    CHECK(e.mean == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(e.std_dev == 0.0);
    CHECK(e.count == m.layers[1].inner(3).numel());

    const auto& zero_entry = entry_of(s, 1, 1);
    CHECK(zero_entry.mean == 0.0);
    CHECK(zero_entry.std_dev == 0.0);
}

TEST_CASE("half zeros, half twos: population statistics") {
    const model_config cfg = tiny_config();
    model_checkpoint m = model_checkpoint::zeros(cfg);
    auto& w = m.layers[0].inner(5);
    REQUIRE(w.numel() % 2 == 0);
    for (std::size_t i = 0; i < w.numel() / 2; ++i) w.data[i] = 2.0f;

    const auto& e = entry_of(compute_magnitude_stats(m), 1, 5);
    CHECK(e.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.std_dev == doctest::Approx(1.0).epsilon(1e-12));  // population std, not sample
}

TEST_CASE("statistics see magnitudes, so sign flips change nothing") {
    const model_config cfg = tiny_config();
    const model_checkpoint m = model_checkpoint::random_init(cfg);
    model_checkpoint flipped = m;
    for (auto& l : flipped.layers) {
        for (int inner = 1; inner <= inner_layer_count; ++inner) {
            for (auto& v : l.inner(inner).data) v = -v;
        }
    }

    const auto a = compute_magnitude_stats(m);
    const auto b = compute_magnitude_stats(flipped);
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].mean == b.entries[i].mean);
        CHECK(a.entries[i].std_dev == b.entries[i].std_dev);
    }
}

TEST_CASE("scaling all weights by c scales mean and std by |c|") {
    const model_config cfg = tiny_config();
    const model_checkpoint m = model_checkpoint::random_init(cfg);
    model_checkpoint scaled = m;
    for (auto& l : scaled.layers) {
        for (int inner = 1; inner <= inner_layer_count; ++inner) {
            for (auto& v : l.inner(inner).data) v *= -3.0f;
        }
    }

    const auto a = compute_magnitude_stats(m);
    const auto b = compute_magnitude_stats(scaled);
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(b.entries[i].mean == doctest::Approx(3.0 * a.entries[i].mean).epsilon(1e-6));
        CHECK(b.entries[i].std_dev == doctest::Approx(3.0 * a.entries[i].std_dev).epsilon(1e-6));
    }
}

TEST_CASE("stats CSV has a header and one row per matrix") {
    const model_config cfg = tiny_config();
    const auto s = compute_magnitude_stats(model_checkpoint::random_init(cfg));
    const std::string csv = s.to_csv();
    CHECK(csv.substr(0, 26) == "layer,inner,mean,std,count");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == cfg.n_layers * inner_layer_count + 1);
}
