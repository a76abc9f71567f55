#include "shapprune/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "shapprune/errors.hpp"
#include "shapprune/rng.hpp"

namespace shapprune {

namespace {

constexpr double rmsnorm_epsilon = 1e-5;
constexpr double rope_base = 10000.0;

template <typename T>
bool all_finite(const T* values, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(values[i]))) return false;
    }
    return true;
}

// y[j] = x[j] * gain[j] / rms(x), rms accumulated in double.
template <typename T>
void rmsnorm_row(const T* x, const std::vector<T>& gain, int d, T* out) {
    double sumsq = 0.0;
    for (int j = 0; j < d; ++j) sumsq += static_cast<double>(x[j]) * static_cast<double>(x[j]);
    const double inv = 1.0 / std::sqrt(sumsq / d + rmsnorm_epsilon);
    for (int j = 0; j < d; ++j) {
        out[j] = static_cast<T>(static_cast<double>(x[j]) * inv * static_cast<double>(gain[j]));
    }
}

// y = W x with double accumulators; W is rows x cols, x has cols entries.
template <typename T>
void matvec(const matrix<T>& w, const T* x, T* y) {
    for (int r = 0; r < w.rows; ++r) {
        const T* row = w.row(r);
        double acc = 0.0;
        for (int c = 0; c < w.cols; ++c) {
            acc += static_cast<double>(row[c]) * static_cast<double>(x[c]);
        }
        y[r] = static_cast<T>(acc);
    }
}

// In-place rotary embedding over one head's slice at a given position.
template <typename T>
void apply_rope(T* head_slice, int head_dim, const double* cos_tab, const double* sin_tab) {
    for (int i = 0; i < head_dim / 2; ++i) {
        const double c = cos_tab[i];
        const double s = sin_tab[i];
        const double a = static_cast<double>(head_slice[2 * i]);
        const double b = static_cast<double>(head_slice[2 * i + 1]);
        head_slice[2 * i] = static_cast<T>(a * c - b * s);
        head_slice[2 * i + 1] = static_cast<T>(a * s + b * c);
    }
}

void accumulate_squares(std::vector<double>& sums, const float* x, int n) {
    for (int i = 0; i < n; ++i) {
        sums[static_cast<std::size_t>(i)] +=
            static_cast<double>(x[i]) * static_cast<double>(x[i]);
    }
}
void accumulate_squares(std::vector<double>& sums, const double* x, int n) {
    for (int i = 0; i < n; ++i) sums[static_cast<std::size_t>(i)] += x[i] * x[i];
}

} // namespace

void model_config::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_heads == 0 || ffn_hidden == 0 || max_seq_len == 0) {
        throw invalid_parameter_error("model config: all dimensions must be positive");
    }
    if (n_layers < 1 || n_layers > static_cast<std::uint32_t>(layer_set::max_population)) {
        throw invalid_parameter_error("model config: n_layers must be in 1..64");
    }
    if (d_model % n_heads != 0) {
        throw invalid_parameter_error("model config: d_model must be divisible by n_heads");
    }
    if ((d_model / n_heads) % 2 != 0) {
        throw invalid_parameter_error(
            "model config: head dimension must be even for rotary embeddings");
    }
}

const char* inner_layer_name(int inner) {
    switch (inner) {
        case 1: return "q";
        case 2: return "k";
        case 3: return "v";
        case 4: return "o";
        case 5: return "gate";
        case 6: return "up";
        case 7: return "down";
        default: throw invalid_parameter_error("inner index must be in 1..7");
    }
}

void activation_sq_accumulator::init(const model_config& config) {
    by_layer.assign(config.n_layers, {});
    for (auto& slots : by_layer) {
        slots[0].assign(config.d_model, 0.0);
        slots[1].assign(config.d_model, 0.0);
        slots[2].assign(config.d_model, 0.0);
        slots[3].assign(config.ffn_hidden, 0.0);
    }
    positions = 0;
}

template <typename T>
model<T> model<T>::zeros(const model_config& config) {
    config.validate();
    const int d = static_cast<int>(config.d_model);
    const int f = static_cast<int>(config.ffn_hidden);
    const int v = static_cast<int>(config.vocab_size);

    model<T> m;
    m.config = config;
    m.embedding = matrix<T>(v, d);
    m.layers.resize(config.n_layers);
    for (auto& l : m.layers) {
        l.q = matrix<T>(d, d);
        l.k = matrix<T>(d, d);
        l.v = matrix<T>(d, d);
        l.o = matrix<T>(d, d);
        l.gate = matrix<T>(f, d);
        l.up = matrix<T>(f, d);
        l.down = matrix<T>(d, f);
        l.attn_gain.assign(static_cast<std::size_t>(d), T(1));
        l.ffn_gain.assign(static_cast<std::size_t>(d), T(1));
    }
    m.final_gain.assign(static_cast<std::size_t>(d), T(1));
    m.head = matrix<T>(v, d);
    return m;
}

template <typename T>
model<T> model<T>::random_init(const model_config& config) {
    model<T> m = zeros(config);
    deterministic_rng rng(config.seed);

    auto fill = [&rng](matrix<T>& w, double sigma) {
        for (auto& x : w.data) x = static_cast<T>(rng.next_normal() * sigma);
    };

    const double proj_sigma = 1.0 / std::sqrt(static_cast<double>(config.d_model));
    const double ffn_sigma = 1.0 / std::sqrt(static_cast<double>(config.ffn_hidden));
    // Residual-writing projections shrink with depth so the stream's variance
    // stays bounded at initialization.
    const double depth_scale = 1.0 / std::sqrt(2.0 * config.n_layers);

    // Draw order mirrors the checkpoint layout: embedding, layers, head.
    fill(m.embedding, 0.05);
    for (auto& l : m.layers) {
        fill(l.q, proj_sigma);
        fill(l.k, proj_sigma);
        fill(l.v, proj_sigma);
        fill(l.o, proj_sigma * depth_scale);
        fill(l.gate, proj_sigma);
        fill(l.up, proj_sigma);
        fill(l.down, ffn_sigma * depth_scale);
    }
    // Small head keeps initial logits near zero: an untrained model scores
    // close to the uniform-predictor perplexity.
    fill(m.head, 0.02);
    return m;
}

template <typename T>
forward_result<T> forward(const model<T>& m, const std::vector<std::int32_t>& tokens,
                          const layer_set& active, const forward_options& options) {
    const model_config& cfg = m.config;
    cfg.validate();
    if (active.population() != static_cast<int>(cfg.n_layers)) {
        throw invalid_input_error("forward: active set covers " +
                                  std::to_string(active.population()) + " layers, model has " +
                                  std::to_string(cfg.n_layers));
    }
    const int seq_len = static_cast<int>(tokens.size());
    if (seq_len == 0) {
        throw invalid_input_error("forward: empty token sequence");
    }
    if (seq_len > static_cast<int>(cfg.max_seq_len)) {
        throw invalid_input_error("forward: sequence length " + std::to_string(seq_len) +
                                  " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    for (int p = 0; p < seq_len; ++p) {
        if (tokens[static_cast<std::size_t>(p)] < 0 ||
            tokens[static_cast<std::size_t>(p)] >= static_cast<std::int32_t>(cfg.vocab_size)) {
            throw invalid_input_error("forward: token " +
                                      std::to_string(tokens[static_cast<std::size_t>(p)]) +
                                      " at position " + std::to_string(p) +
                                      " is outside the vocabulary");
        }
    }

    const int d = static_cast<int>(cfg.d_model);
    const int n_heads = static_cast<int>(cfg.n_heads);
    const int head_dim = cfg.head_dim();
    const int ffn = static_cast<int>(cfg.ffn_hidden);
    const int n_layers = static_cast<int>(cfg.n_layers);
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    forward_result<T> result;

    matrix<T> x(seq_len, d);
    for (int p = 0; p < seq_len; ++p) {
        std::memcpy(x.row(p), m.embedding.row(tokens[static_cast<std::size_t>(p)]),
                    sizeof(T) * static_cast<std::size_t>(d));
    }
    if (!all_finite(x.data.data(), x.numel())) {
        throw numeric_error("forward: non-finite embedding output");
    }
    if (options.capture_hidden) result.hidden.push_back(x);

    // Rotary tables, one row per position over head_dim/2 frequency pairs.
    const int half = head_dim / 2;
    std::vector<double> cos_tab(static_cast<std::size_t>(seq_len) * half);
    std::vector<double> sin_tab(static_cast<std::size_t>(seq_len) * half);
    for (int p = 0; p < seq_len; ++p) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::pow(rope_base, -2.0 * i / head_dim);
            const double angle = p * freq;
            cos_tab[static_cast<std::size_t>(p) * half + i] = std::cos(angle);
            sin_tab[static_cast<std::size_t>(p) * half + i] = std::sin(angle);
        }
    }

    matrix<T> normed(seq_len, d);
    matrix<T> q_all(seq_len, d), k_all(seq_len, d), v_all(seq_len, d), ctx(seq_len, d);
    matrix<T> f_gate(seq_len, ffn), f_up(seq_len, ffn), f_act(seq_len, ffn);
    std::vector<T> tmp(static_cast<std::size_t>(std::max(d, ffn)));
    std::vector<double> probs(static_cast<std::size_t>(seq_len));

    for (int t = 1; t <= n_layers; ++t) {
        if (!active.contains(t)) {
            if (options.capture_hidden) result.hidden.push_back(x);
            continue;
        }
        const layer_weights<T>& lw = m.layers[static_cast<std::size_t>(t - 1)];
        auto* collector =
            options.norm_collector ? &options.norm_collector->by_layer[t - 1] : nullptr;

        // Attention sublayer.
        for (int p = 0; p < seq_len; ++p) {
            rmsnorm_row(x.row(p), lw.attn_gain, d, normed.row(p));
            if (collector) accumulate_squares((*collector)[0], normed.row(p), d);
            matvec(lw.q, normed.row(p), q_all.row(p));
            matvec(lw.k, normed.row(p), k_all.row(p));
            matvec(lw.v, normed.row(p), v_all.row(p));
            for (int h = 0; h < n_heads; ++h) {
                const double* ct = cos_tab.data() + static_cast<std::size_t>(p) * half;
                const double* st = sin_tab.data() + static_cast<std::size_t>(p) * half;
                apply_rope(q_all.row(p) + h * head_dim, head_dim, ct, st);
                apply_rope(k_all.row(p) + h * head_dim, head_dim, ct, st);
            }
        }
        for (int h = 0; h < n_heads; ++h) {
            const int off = h * head_dim;
            for (int i = 0; i < seq_len; ++i) {
                const T* qi = q_all.row(i) + off;
                double max_score = -1e300;
                for (int j = 0; j <= i; ++j) {
                    const T* kj = k_all.row(j) + off;
                    double s = 0.0;
                    for (int e = 0; e < head_dim; ++e) {
                        s += static_cast<double>(qi[e]) * static_cast<double>(kj[e]);
                    }
                    s *= attn_scale;
                    probs[static_cast<std::size_t>(j)] = s;
                    max_score = std::max(max_score, s);
                }
                double denom = 0.0;
                for (int j = 0; j <= i; ++j) {
                    probs[static_cast<std::size_t>(j)] =
                        std::exp(probs[static_cast<std::size_t>(j)] - max_score);
                    denom += probs[static_cast<std::size_t>(j)];
                }
                T* out = ctx.row(i) + off;
                for (int e = 0; e < head_dim; ++e) {
                    double acc = 0.0;
                    for (int j = 0; j <= i; ++j) {
                        acc += probs[static_cast<std::size_t>(j)] *
                               static_cast<double>(v_all.at(j, off + e));
                    }
                    out[e] = static_cast<T>(acc / denom);
                }
            }
        }
        for (int p = 0; p < seq_len; ++p) {
            if (collector) accumulate_squares((*collector)[1], ctx.row(p), d);
            matvec(lw.o, ctx.row(p), tmp.data());
            T* xr = x.row(p);
            for (int j = 0; j < d; ++j) xr[j] += tmp[static_cast<std::size_t>(j)];
        }
        if (!all_finite(x.data.data(), x.numel())) {
            throw numeric_error("forward: non-finite value after attention in layer " +
                                std::to_string(t));
        }

        // FFN sublayer: down( silu(gate x) * (up x) ).
        for (int p = 0; p < seq_len; ++p) {
            rmsnorm_row(x.row(p), lw.ffn_gain, d, normed.row(p));
            if (collector) accumulate_squares((*collector)[2], normed.row(p), d);
            matvec(lw.gate, normed.row(p), f_gate.row(p));
            matvec(lw.up, normed.row(p), f_up.row(p));
            T* act = f_act.row(p);
            for (int j = 0; j < ffn; ++j) {
                const double g = static_cast<double>(f_gate.at(p, j));
                const double silu = g / (1.0 + std::exp(-g));
                act[j] = static_cast<T>(silu * static_cast<double>(f_up.at(p, j)));
            }
            if (collector) accumulate_squares((*collector)[3], act, ffn);
            matvec(lw.down, act, tmp.data());
            T* xr = x.row(p);
            for (int j = 0; j < d; ++j) xr[j] += tmp[static_cast<std::size_t>(j)];
        }
        if (!all_finite(x.data.data(), x.numel())) {
            throw numeric_error("forward: non-finite value after FFN in layer " +
                                std::to_string(t));
        }
        if (options.capture_hidden) result.hidden.push_back(x);
    }

    result.logits = matrix<T>(seq_len, static_cast<int>(cfg.vocab_size));
    for (int p = 0; p < seq_len; ++p) {
        rmsnorm_row(x.row(p), m.final_gain, d, normed.row(p));
        matvec(m.head, normed.row(p), result.logits.row(p));
    }
    if (!all_finite(result.logits.data.data(), result.logits.numel())) {
        throw numeric_error("forward: non-finite logits at the output head");
    }
    if (options.norm_collector) {
        options.norm_collector->positions += static_cast<std::uint64_t>(seq_len);
    }
    return result;
}

template struct model<float>;
template struct model<double>;
template forward_result<float> forward(const model<float>&, const std::vector<std::int32_t>&,
                                       const layer_set&, const forward_options&);
template forward_result<double> forward(const model<double>&, const std::vector<std::int32_t>&,
                                        const layer_set&, const forward_options&);

} // namespace shapprune
