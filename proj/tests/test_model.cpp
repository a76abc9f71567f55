#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "shapprune/errors.hpp"
#include "shapprune/model.hpp"
#include "shapprune/train.hpp"

using namespace shapprune;

namespace {

model_config tiny_config() {
    model_config cfg;
    cfg.vocab_size = 32;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.ffn_hidden = 16;
    cfg.max_seq_len = 16;
    cfg.seed = 3;
    return cfg;
}

std::vector<std::int32_t> ramp_tokens(int n, int vocab) {
    std::vector<std::int32_t> t(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = (i * 7 + 3) % vocab;
    return t;
}

} // namespace

TEST_CASE("model_config validation catches inconsistent dimensions") {
    model_config cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());

    model_config bad = cfg;
    bad.d_model = 9;  // not divisible by 2 heads
    CHECK_THROWS_AS(bad.validate(), invalid_parameter_error);

    bad = cfg;
    bad.n_heads = 8;  // head_dim 1, odd, breaks rotary pairs
    CHECK_THROWS_AS(bad.validate(), invalid_parameter_error);

    bad = cfg;
    bad.n_layers = 0;
    CHECK_THROWS_AS(bad.validate(), invalid_parameter_error);

    bad = cfg;
    bad.n_layers = 65;
    CHECK_THROWS_AS(bad.validate(), invalid_parameter_error);

    bad = cfg;
    bad.vocab_size = 0;
    CHECK_THROWS_AS(bad.validate(), invalid_parameter_error);
}

TEST_CASE("random_init is deterministic and shaped by the config") {
    const model_config cfg = tiny_config();
    const model_checkpoint a = model_checkpoint::random_init(cfg);
    const model_checkpoint b = model_checkpoint::random_init(cfg);
    CHECK(a.embedding.data == b.embedding.data);
    CHECK(a.head.data == b.head.data);
    for (std::size_t t = 0; t < a.layers.size(); ++t) {
        for (int inner = 1; inner <= inner_layer_count; ++inner) {
            CHECK(a.layers[t].inner(inner).data == b.layers[t].inner(inner).data);
        }
    }

    model_config other = cfg;
    other.seed = 4;
    const model_checkpoint c = model_checkpoint::random_init(other);
    CHECK(a.embedding.data != c.embedding.data);

    CHECK(a.embedding.rows == 32);
    CHECK(a.embedding.cols == 8);
    CHECK(a.layers.size() == 2);
    CHECK(a.layers[0].gate.rows == 16);
    CHECK(a.layers[0].gate.cols == 8);
    CHECK(a.layers[0].down.rows == 8);
    CHECK(a.layers[0].down.cols == 16);
    CHECK(a.layers[0].attn_gain.size() == 8);
    CHECK(a.final_gain.size() == 8);
}

TEST_CASE("forward produces correctly shaped logits and hidden captures") {
    const model_config cfg = tiny_config();
    const model_checkpoint m = model_checkpoint::random_init(cfg);
    const auto tokens = ramp_tokens(10, 32);
    forward_options opts;
    opts.capture_hidden = true;
    const forward_result<float> r = forward(m, tokens, layer_set::full(2), opts);
    CHECK(r.logits.rows == 10);
    CHECK(r.logits.cols == 32);
    REQUIRE(r.hidden.size() == 3);  // embedding state + one per layer
    for (const auto& h : r.hidden) {
        CHECK(h.rows == 10);
        CHECK(h.cols == 8);
    }
}

TEST_CASE("forward rejects bad tokens, lengths, and population mismatches") {
    const model_config cfg = tiny_config();
    const model_checkpoint m = model_checkpoint::random_init(cfg);

    CHECK_THROWS_AS(forward(m, {}, layer_set::full(2)), invalid_input_error);
    CHECK_THROWS_AS(forward(m, ramp_tokens(17, 32), layer_set::full(2)), invalid_input_error);
    CHECK_THROWS_AS(forward(m, {1, 2, 32}, layer_set::full(2)), invalid_input_error);
    CHECK_THROWS_AS(forward(m, {1, -1}, layer_set::full(2)), invalid_input_error);
    CHECK_THROWS_AS(forward(m, {1, 2}, layer_set::full(3)), invalid_input_error);
}

TEST_CASE("forward flags non-finite intermediates with the layer index") {
    const model_config cfg = tiny_config();
    model_checkpoint m = model_checkpoint::random_init(cfg);
    m.layers[1].o.data[3] = std::numeric_limits<float>::infinity();
    try {
        forward(m, ramp_tokens(4, 32), layer_set::full(2));
        FAIL("expected numeric_error");
    } catch (const numeric_error& e) {
        CHECK(std::string(e.what()).find("layer 2") != std::string::npos);
    }
}

TEST_CASE("a zeroed layer is bit-identical to a masked layer") {
    const model_config cfg = tiny_config();
    model_checkpoint m = model_checkpoint::random_init(cfg);
    for (int inner = 1; inner <= inner_layer_count; ++inner) {
        auto& w = m.layers[0].inner(inner);
        std::fill(w.data.begin(), w.data.end(), 0.0f);
    }
    const auto tokens = ramp_tokens(12, 32);
    const auto with_layer = forward(m, tokens, layer_set::full(2));
    const auto without_layer = forward(m, tokens, layer_set::full(2).without(1));
    CHECK(with_layer.logits.data == without_layer.logits.data);
}

TEST_CASE("masking any layer changes nothing upstream of it") {
    const model_config cfg = tiny_config();
    const model_checkpoint m = model_checkpoint::random_init(cfg);
    const auto tokens = ramp_tokens(6, 32);
    forward_options opts;
    opts.capture_hidden = true;
    const auto full_run = forward(m, tokens, layer_set::full(2), opts);
    const auto masked_run = forward(m, tokens, layer_set::full(2).without(2), opts);
    // Hidden state after layer 1 is unaffected by masking layer 2, and the
    // masked layer passes its input through unchanged.
    CHECK(full_run.hidden[1].data == masked_run.hidden[1].data);
    CHECK(masked_run.hidden[2].data == masked_run.hidden[1].data);
}

TEST_CASE("empty active set reduces to head over normalized embeddings") {
    const model_config cfg = tiny_config();
    const model_checkpoint m = model_checkpoint::random_init(cfg);
    const auto tokens = ramp_tokens(5, 32);
    const auto r = forward(m, tokens, layer_set::empty(2));

    // Independent double-precision reference of the no-layer path.
    const int d = 8;
    for (std::size_t p = 0; p < tokens.size(); ++p) {
        const float* e = m.embedding.row(tokens[p]);
        double sumsq = 0.0;
        for (int j = 0; j < d; ++j) sumsq += static_cast<double>(e[j]) * e[j];
        const double inv = 1.0 / std::sqrt(sumsq / d + 1e-5);
        for (int v = 0; v < 32; ++v) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) {
                acc += static_cast<double>(m.head.at(v, j)) * (e[j] * inv *
                       static_cast<double>(m.final_gain[static_cast<std::size_t>(j)]));
            }
            CHECK(static_cast<double>(r.logits.at(static_cast<int>(p), v)) ==
                  doctest::Approx(acc).epsilon(1e-4));
        }
    }
}

TEST_CASE("forward is a pure function: repeated calls are bit-identical") {
    const model_config cfg = tiny_config();
    const model_checkpoint m = model_checkpoint::random_init(cfg);
    const auto tokens = ramp_tokens(9, 32);
    const auto a = forward(m, tokens, layer_set::full(2));
    const auto b = forward(m, tokens, layer_set::full(2));
    CHECK(a.logits.data == b.logits.data);
}

TEST_CASE("training forward agrees with the inference forward on the loss") {
    const model_config cfg = tiny_config();
    const model_checkpoint m = model_checkpoint::random_init(cfg);
    const auto tokens = ramp_tokens(12, 32);

    // Inference-path NLL over the same prediction positions.
    const auto r = forward(m, tokens, layer_set::full(2));
    double nll_sum = 0.0;
    for (std::size_t pos = 0; pos + 1 < tokens.size(); ++pos) {
        const float* row = r.logits.row(static_cast<int>(pos));
        double max_logit = -1e300;
        for (int v = 0; v < 32; ++v) max_logit = std::max(max_logit, (double)row[v]);
        double denom = 0.0;
        for (int v = 0; v < 32; ++v) denom += std::exp((double)row[v] - max_logit);
        nll_sum -= (double)row[tokens[pos + 1]] - max_logit - std::log(denom);
    }
    const double eval_loss = nll_sum / static_cast<double>(tokens.size() - 1);

    const std::vector<std::int32_t> inputs(tokens.begin(), tokens.end() - 1);
    const std::vector<std::int32_t> targets(tokens.begin() + 1, tokens.end());
    const double train_loss = training_loss(m, inputs, targets);
    CHECK(train_loss == doctest::Approx(eval_loss).epsilon(1e-4));
}

TEST_CASE("analytic gradients match central finite differences on the micro-model") {
    model_config cfg;
    cfg.vocab_size = 32;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.ffn_hidden = 16;
    cfg.max_seq_len = 8;
    cfg.seed = 11;
    const gradient_check_result r = gradient_check(cfg, 4, 17);
    INFO("worst block: ", r.worst_block, " rel err ", r.worst_relative_error);
    CHECK(r.worst_relative_error <= 1e-3);
    // Every parameter block individually, not just the worst.
    CHECK(r.per_block.size() == 3 + 2 * 9);  // embedding+final_gain+head, 9 blocks per layer
    for (const auto& [name, rel] : r.per_block) {
        INFO("block ", name);
        CHECK(rel <= 1e-3);
    }
}
