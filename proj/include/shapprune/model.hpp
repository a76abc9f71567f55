#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "shapprune/layer_set.hpp"
#include "shapprune/matrix.hpp"

namespace shapprune {

// Decoder-only byte-level transformer: pre-norm blocks with rotary position
// embeddings and a gated FFN, so each block holds exactly seven prunable
// matrices (q, k, v, o for attention; gate, up, down for the FFN).
struct model_config {
    std::uint32_t vocab_size = 256;
    std::uint32_t d_model = 64;
    std::uint32_t n_heads = 2;
    std::uint32_t n_layers = 6;
    std::uint32_t ffn_hidden = 128;
    std::uint32_t max_seq_len = 256;
    std::uint64_t seed = 1;

    int head_dim() const { return static_cast<int>(d_model / n_heads); }

    // Throws invalid_parameter_error on inconsistent dimensions.
    void validate() const;

    // Same shapes everywhere; the init seed may differ.
    bool same_architecture(const model_config& o) const {
        return vocab_size == o.vocab_size && d_model == o.d_model && n_heads == o.n_heads &&
               n_layers == o.n_layers && ffn_hidden == o.ffn_hidden &&
               max_seq_len == o.max_seq_len;
    }

    bool operator==(const model_config&) const = default;
};

constexpr int inner_layer_count = 7;

// Fixed inner ordering: indices 1..4 are the attention module, 5..7 the FFN.
const char* inner_layer_name(int inner);

template <typename T>
struct layer_weights {
    matrix<T> q, k, v, o;    // d_model x d_model
    matrix<T> gate, up;      // ffn_hidden x d_model
    matrix<T> down;          // d_model x ffn_hidden
    std::vector<T> attn_gain, ffn_gain;  // RMSNorm gains, d_model

    matrix<T>& inner(int idx) {
        switch (idx) {
            case 1: return q;
            case 2: return k;
            case 3: return v;
            case 4: return o;
            case 5: return gate;
            case 6: return up;
            case 7: return down;
            default: throw invalid_parameter_error("inner index must be in 1..7");
        }
    }
    const matrix<T>& inner(int idx) const {
        return const_cast<layer_weights*>(this)->inner(idx);
    }
};

template <typename T>
struct model {
    model_config config;
    matrix<T> embedding;                  // vocab_size x d_model
    std::vector<layer_weights<T>> layers; // n_layers entries
    std::vector<T> final_gain;            // d_model
    matrix<T> head;                       // vocab_size x d_model

    // Allocates all weights at their configured shapes, zero-filled.
    static model zeros(const model_config& config);

    // Deterministic random initialization from config.seed.
    static model random_init(const model_config& config);

    template <typename U>
    model<U> cast() const {
        model<U> out;
        out.config = config;
        out.embedding = embedding.template cast<U>();
        out.layers.reserve(layers.size());
        for (const auto& l : layers) {
            layer_weights<U> lw;
            lw.q = l.q.template cast<U>();
            lw.k = l.k.template cast<U>();
            lw.v = l.v.template cast<U>();
            lw.o = l.o.template cast<U>();
            lw.gate = l.gate.template cast<U>();
            lw.up = l.up.template cast<U>();
            lw.down = l.down.template cast<U>();
            lw.attn_gain.assign(l.attn_gain.begin(), l.attn_gain.end());
            lw.ffn_gain.assign(l.ffn_gain.begin(), l.ffn_gain.end());
            out.layers.push_back(std::move(lw));
        }
        out.final_gain.assign(final_gain.begin(), final_gain.end());
        out.head = head.template cast<U>();
        return out;
    }
};

using model_checkpoint = model<float>;

// Running per-input-feature sums of squares for the four distinct matrix
// inputs in a block, accumulated across every token position the forward
// pass visits. Pruning converts these into L2 norms.
struct activation_sq_accumulator {
    // Slot 0: attention-norm output (feeds q, k, v). Slot 1: attention
    // context (feeds o). Slot 2: FFN-norm output (feeds gate, up).
    // Slot 3: gated activation (feeds down).
    std::vector<std::array<std::vector<double>, 4>> by_layer;
    std::uint64_t positions = 0;

    void init(const model_config& config);
};

template <typename T>
struct forward_result {
    matrix<T> logits;                // seq_len x vocab_size
    std::vector<matrix<T>> hidden;   // n_layers + 1 states of seq_len x d_model, if captured
};

struct forward_options {
    bool capture_hidden = false;
    activation_sq_accumulator* norm_collector = nullptr;
};

// Masked forward pass. Layers present in `active` run attention + FFN with
// residual connections; absent layers pass the residual stream through
// unchanged. Throws invalid_input_error for out-of-vocabulary tokens or
// length violations and numeric_error (with the layer index) if any
// intermediate goes non-finite.
template <typename T>
forward_result<T> forward(const model<T>& m, const std::vector<std::int32_t>& tokens,
                          const layer_set& active, const forward_options& options = {});

extern template forward_result<float> forward(const model<float>&,
                                              const std::vector<std::int32_t>&, const layer_set&,
                                              const forward_options&);
extern template forward_result<double> forward(const model<double>&,
                                               const std::vector<std::int32_t>&, const layer_set&,
                                               const forward_options&);
extern template struct model<float>;
extern template struct model<double>;

} // namespace shapprune
