#include "shapprune/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "shapprune/errors.hpp"
#include "shapprune/evaluation.hpp"
#include "shapprune/rng.hpp"

namespace shapprune {

namespace {

constexpr double rmsnorm_epsilon = 1e-5;  // must match the inference forward
constexpr double rope_base = 10000.0;

// One named view into a model's parameters, for the optimizer and the
// finite-difference checker.
template <typename S>
struct param_block {
    S* data;
    std::size_t size;
    std::string name;
};

template <typename S>
std::vector<param_block<S>> param_blocks(model<S>& m) {
    std::vector<param_block<S>> blocks;
    blocks.push_back({m.embedding.data.data(), m.embedding.numel(), "embedding"});
    for (std::size_t t = 0; t < m.layers.size(); ++t) {
        auto& l = m.layers[t];
        const std::string p = "layer" + std::to_string(t + 1) + ".";
        blocks.push_back({l.q.data.data(), l.q.numel(), p + "q"});
        blocks.push_back({l.k.data.data(), l.k.numel(), p + "k"});
        blocks.push_back({l.v.data.data(), l.v.numel(), p + "v"});
        blocks.push_back({l.o.data.data(), l.o.numel(), p + "o"});
        blocks.push_back({l.gate.data.data(), l.gate.numel(), p + "gate"});
        blocks.push_back({l.up.data.data(), l.up.numel(), p + "up"});
        blocks.push_back({l.down.data.data(), l.down.numel(), p + "down"});
        blocks.push_back({l.attn_gain.data(), l.attn_gain.size(), p + "attn_gain"});
        blocks.push_back({l.ffn_gain.data(), l.ffn_gain.size(), p + "ffn_gain"});
    }
    blocks.push_back({m.final_gain.data(), m.final_gain.size(), "final_gain"});
    blocks.push_back({m.head.data.data(), m.head.numel(), "head"});
    return blocks;
}

template <typename S>
void zero_params(model<S>& m) {
    for (auto& b : param_blocks(m)) std::fill(b.data, b.data + b.size, S(0));
}

// ---- forward with tape ----------------------------------------------------

template <typename S>
struct layer_tape {
    matrix<S> x_in;                 // residual stream entering the layer
    matrix<S> n1;                   // attention-norm output
    std::vector<double> r1;         // inverse RMS per position
    matrix<S> q, k, v;              // q, k already rotated
    std::vector<matrix<S>> probs;   // per head: seq_len x seq_len, causal rows
    matrix<S> ctx;                  // attention context (heads concatenated)
    matrix<S> x_mid;                // after the attention residual add
    matrix<S> n2;                   // FFN-norm output
    std::vector<double> r2;
    matrix<S> gate_pre, up_pre, act;
};

template <typename S>
struct tape {
    std::vector<layer_tape<S>> layers;
    matrix<S> x_out;                // final residual stream
    matrix<S> nf;                   // final-norm output
    std::vector<double> rf;
    matrix<S> probs_out;            // softmax over logits, per position
};

template <typename S>
void rmsnorm_fwd(const matrix<S>& x, const std::vector<S>& gain, matrix<S>& out,
                 std::vector<double>& inv_rms) {
    const int d = x.cols;
    inv_rms.resize(static_cast<std::size_t>(x.rows));
    for (int p = 0; p < x.rows; ++p) {
        const S* xr = x.row(p);
        double sumsq = 0.0;
        for (int j = 0; j < d; ++j) {
            sumsq += static_cast<double>(xr[j]) * static_cast<double>(xr[j]);
        }
        const double inv = 1.0 / std::sqrt(sumsq / d + rmsnorm_epsilon);
        inv_rms[static_cast<std::size_t>(p)] = inv;
        S* o = out.row(p);
        for (int j = 0; j < d; ++j) {
            o[j] = static_cast<S>(static_cast<double>(xr[j]) * inv *
                                  static_cast<double>(gain[static_cast<std::size_t>(j)]));
        }
    }
}

// d(loss)/dx and d(loss)/dgain for y = x * inv_rms * gain.
template <typename S>
void rmsnorm_bwd(const matrix<S>& x, const std::vector<S>& gain,
                 const std::vector<double>& inv_rms, const matrix<S>& dy, matrix<S>& dx_out,
                 S* dgain) {
    const int d = x.cols;
    for (int p = 0; p < x.rows; ++p) {
        const S* xr = x.row(p);
        const S* dyr = dy.row(p);
        S* dxr = dx_out.row(p);
        const double r = inv_rms[static_cast<std::size_t>(p)];
        double weighted = 0.0;  // sum_j dy_j * gain_j * x_j
        for (int j = 0; j < d; ++j) {
            weighted += static_cast<double>(dyr[j]) *
                        static_cast<double>(gain[static_cast<std::size_t>(j)]) *
                        static_cast<double>(xr[j]);
        }
        const double r3_over_d = r * r * r / d;
        for (int j = 0; j < d; ++j) {
            const double g = static_cast<double>(gain[static_cast<std::size_t>(j)]);
            dxr[j] += static_cast<S>(static_cast<double>(dyr[j]) * g * r -
                                     static_cast<double>(xr[j]) * r3_over_d * weighted);
            dgain[j] += static_cast<S>(static_cast<double>(dyr[j]) *
                                       static_cast<double>(xr[j]) * r);
        }
    }
}

template <typename S>
void matvec_fwd(const matrix<S>& w, const S* x, S* y) {
    for (int r = 0; r < w.rows; ++r) {
        const S* row = w.row(r);
        double acc = 0.0;
        for (int c = 0; c < w.cols; ++c) {
            acc += static_cast<double>(row[c]) * static_cast<double>(x[c]);
        }
        y[r] = static_cast<S>(acc);
    }
}

// Accumulates dW += dy (outer) x and dx += W^T dy.
template <typename S>
void matvec_bwd(const matrix<S>& w, const S* x, const S* dy, matrix<S>& dw, S* dx) {
    for (int r = 0; r < w.rows; ++r) {
        const double dyr = static_cast<double>(dy[r]);
        const S* wrow = w.row(r);
        S* dwrow = dw.row(r);
        for (int c = 0; c < w.cols; ++c) {
            dwrow[c] += static_cast<S>(dyr * static_cast<double>(x[c]));
            dx[c] += static_cast<S>(dyr * static_cast<double>(wrow[c]));
        }
    }
}

struct rope_tables {
    int half = 0;
    std::vector<double> cos_tab, sin_tab;  // seq_len x half

    void build(int seq_len, int head_dim) {
        half = head_dim / 2;
        cos_tab.resize(static_cast<std::size_t>(seq_len) * half);
        sin_tab.resize(static_cast<std::size_t>(seq_len) * half);
        for (int p = 0; p < seq_len; ++p) {
            for (int i = 0; i < half; ++i) {
                const double freq = std::pow(rope_base, -2.0 * i / head_dim);
                cos_tab[static_cast<std::size_t>(p) * half + i] = std::cos(p * freq);
                sin_tab[static_cast<std::size_t>(p) * half + i] = std::sin(p * freq);
            }
        }
    }

    template <typename S>
    void rotate(S* slice, int pos) const {
        const double* ct = cos_tab.data() + static_cast<std::size_t>(pos) * half;
        const double* st = sin_tab.data() + static_cast<std::size_t>(pos) * half;
        for (int i = 0; i < half; ++i) {
            const double a = static_cast<double>(slice[2 * i]);
            const double b = static_cast<double>(slice[2 * i + 1]);
            slice[2 * i] = static_cast<S>(a * ct[i] - b * st[i]);
            slice[2 * i + 1] = static_cast<S>(a * st[i] + b * ct[i]);
        }
    }

    // Inverse rotation: the transpose of the forward map.
    template <typename S>
    void rotate_back(S* slice, int pos) const {
        const double* ct = cos_tab.data() + static_cast<std::size_t>(pos) * half;
        const double* st = sin_tab.data() + static_cast<std::size_t>(pos) * half;
        for (int i = 0; i < half; ++i) {
            const double a = static_cast<double>(slice[2 * i]);
            const double b = static_cast<double>(slice[2 * i + 1]);
            slice[2 * i] = static_cast<S>(a * ct[i] + b * st[i]);
            slice[2 * i + 1] = static_cast<S>(-a * st[i] + b * ct[i]);
        }
    }
};

// Forward pass over one sequence, recording everything backward needs.
// Returns the summed (not averaged) next-token cross-entropy.
template <typename S>
double tape_forward(const model<S>& m, const std::vector<std::int32_t>& inputs,
                    const std::vector<std::int32_t>& targets, const rope_tables& rope,
                    tape<S>& tp) {
    const model_config& cfg = m.config;
    const int seq_len = static_cast<int>(inputs.size());
    const int d = static_cast<int>(cfg.d_model);
    const int n_heads = static_cast<int>(cfg.n_heads);
    const int head_dim = cfg.head_dim();
    const int ffn = static_cast<int>(cfg.ffn_hidden);
    const int vocab = static_cast<int>(cfg.vocab_size);
    const int n_layers = static_cast<int>(cfg.n_layers);
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    tp.layers.resize(static_cast<std::size_t>(n_layers));

    matrix<S> x(seq_len, d);
    for (int p = 0; p < seq_len; ++p) {
        std::memcpy(x.row(p), m.embedding.row(inputs[static_cast<std::size_t>(p)]),
                    sizeof(S) * static_cast<std::size_t>(d));
    }

    for (int t = 0; t < n_layers; ++t) {
        layer_tape<S>& lt = tp.layers[static_cast<std::size_t>(t)];
        const layer_weights<S>& lw = m.layers[static_cast<std::size_t>(t)];
        lt.x_in = x;

        lt.n1 = matrix<S>(seq_len, d);
        rmsnorm_fwd(lt.x_in, lw.attn_gain, lt.n1, lt.r1);

        lt.q = matrix<S>(seq_len, d);
        lt.k = matrix<S>(seq_len, d);
        lt.v = matrix<S>(seq_len, d);
        for (int p = 0; p < seq_len; ++p) {
            matvec_fwd(lw.q, lt.n1.row(p), lt.q.row(p));
            matvec_fwd(lw.k, lt.n1.row(p), lt.k.row(p));
            matvec_fwd(lw.v, lt.n1.row(p), lt.v.row(p));
            for (int h = 0; h < n_heads; ++h) {
                rope.rotate(lt.q.row(p) + h * head_dim, p);
                rope.rotate(lt.k.row(p) + h * head_dim, p);
            }
        }

        lt.probs.assign(static_cast<std::size_t>(n_heads), matrix<S>(seq_len, seq_len));
        lt.ctx = matrix<S>(seq_len, d);
        std::vector<double> scores(static_cast<std::size_t>(seq_len));
        for (int h = 0; h < n_heads; ++h) {
            const int off = h * head_dim;
            matrix<S>& pr = lt.probs[static_cast<std::size_t>(h)];
            for (int i = 0; i < seq_len; ++i) {
                const S* qi = lt.q.row(i) + off;
                double max_score = -1e300;
                for (int j = 0; j <= i; ++j) {
                    const S* kj = lt.k.row(j) + off;
                    double s = 0.0;
                    for (int e = 0; e < head_dim; ++e) {
                        s += static_cast<double>(qi[e]) * static_cast<double>(kj[e]);
                    }
                    s *= attn_scale;
                    scores[static_cast<std::size_t>(j)] = s;
                    max_score = std::max(max_score, s);
                }
                double denom = 0.0;
                for (int j = 0; j <= i; ++j) {
                    scores[static_cast<std::size_t>(j)] =
                        std::exp(scores[static_cast<std::size_t>(j)] - max_score);
                    denom += scores[static_cast<std::size_t>(j)];
                }
                for (int j = 0; j <= i; ++j) {
                    pr.at(i, j) = static_cast<S>(scores[static_cast<std::size_t>(j)] / denom);
                }
                S* out = lt.ctx.row(i) + off;
                for (int e = 0; e < head_dim; ++e) {
                    double acc = 0.0;
                    for (int j = 0; j <= i; ++j) {
                        acc += static_cast<double>(pr.at(i, j)) *
                               static_cast<double>(lt.v.at(j, off + e));
                    }
                    out[e] = static_cast<S>(acc);
                }
            }
        }

        lt.x_mid = lt.x_in;
        std::vector<S> tmp(static_cast<std::size_t>(std::max(d, ffn)));
        for (int p = 0; p < seq_len; ++p) {
            matvec_fwd(lw.o, lt.ctx.row(p), tmp.data());
            S* xr = lt.x_mid.row(p);
            for (int j = 0; j < d; ++j) xr[j] += tmp[static_cast<std::size_t>(j)];
        }

        lt.n2 = matrix<S>(seq_len, d);
        rmsnorm_fwd(lt.x_mid, lw.ffn_gain, lt.n2, lt.r2);

        lt.gate_pre = matrix<S>(seq_len, ffn);
        lt.up_pre = matrix<S>(seq_len, ffn);
        lt.act = matrix<S>(seq_len, ffn);
        x = lt.x_mid;
        for (int p = 0; p < seq_len; ++p) {
            matvec_fwd(lw.gate, lt.n2.row(p), lt.gate_pre.row(p));
            matvec_fwd(lw.up, lt.n2.row(p), lt.up_pre.row(p));
            S* act = lt.act.row(p);
            for (int j = 0; j < ffn; ++j) {
                const double g = static_cast<double>(lt.gate_pre.at(p, j));
                const double silu = g / (1.0 + std::exp(-g));
                act[j] = static_cast<S>(silu * static_cast<double>(lt.up_pre.at(p, j)));
            }
            matvec_fwd(lw.down, act, tmp.data());
            S* xr = x.row(p);
            for (int j = 0; j < d; ++j) xr[j] += tmp[static_cast<std::size_t>(j)];
        }
    }

    tp.x_out = x;
    tp.nf = matrix<S>(seq_len, d);
    rmsnorm_fwd(tp.x_out, m.final_gain, tp.nf, tp.rf);

    tp.probs_out = matrix<S>(seq_len, vocab);
    std::vector<S> logits(static_cast<std::size_t>(vocab));
    double loss_sum = 0.0;
    for (int p = 0; p < seq_len; ++p) {
        matvec_fwd(m.head, tp.nf.row(p), logits.data());
        double max_logit = -1e300;
        for (int v = 0; v < vocab; ++v) {
            max_logit = std::max(max_logit, static_cast<double>(logits[static_cast<std::size_t>(v)]));
        }
        double denom = 0.0;
        for (int v = 0; v < vocab; ++v) {
            denom += std::exp(static_cast<double>(logits[static_cast<std::size_t>(v)]) - max_logit);
        }
        const double log_denom = std::log(denom);
        for (int v = 0; v < vocab; ++v) {
            tp.probs_out.at(p, v) = static_cast<S>(
                std::exp(static_cast<double>(logits[static_cast<std::size_t>(v)]) - max_logit -
                         log_denom));
        }
        const int target = targets[static_cast<std::size_t>(p)];
        loss_sum -= static_cast<double>(logits[static_cast<std::size_t>(target)]) - max_logit -
                    log_denom;
    }
    return loss_sum;
}

// Backward pass matching tape_forward; accumulates into grads, which must be
// shaped like the model. loss_scale multiplies the per-position CE gradient.
template <typename S>
void tape_backward(const model<S>& m, const std::vector<std::int32_t>& inputs,
                   const std::vector<std::int32_t>& targets, const rope_tables& rope,
                   const tape<S>& tp, double loss_scale, model<S>& grads) {
    const model_config& cfg = m.config;
    const int seq_len = static_cast<int>(inputs.size());
    const int d = static_cast<int>(cfg.d_model);
    const int n_heads = static_cast<int>(cfg.n_heads);
    const int head_dim = cfg.head_dim();
    const int ffn = static_cast<int>(cfg.ffn_hidden);
    const int vocab = static_cast<int>(cfg.vocab_size);
    const int n_layers = static_cast<int>(cfg.n_layers);
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    // Head and final norm.
    matrix<S> dx(seq_len, d);
    matrix<S> dnf(seq_len, d);
    std::vector<S> dlogits(static_cast<std::size_t>(vocab));
    for (int p = 0; p < seq_len; ++p) {
        for (int v = 0; v < vocab; ++v) {
            double g = static_cast<double>(tp.probs_out.at(p, v));
            if (v == targets[static_cast<std::size_t>(p)]) g -= 1.0;
            dlogits[static_cast<std::size_t>(v)] = static_cast<S>(g * loss_scale);
        }
        matvec_bwd(m.head, tp.nf.row(p), dlogits.data(), grads.head, dnf.row(p));
    }
    rmsnorm_bwd(tp.x_out, m.final_gain, tp.rf, dnf, dx, grads.final_gain.data());

    matrix<S> dn2(seq_len, d);
    matrix<S> dgate(seq_len, ffn), dup(seq_len, ffn), dact(seq_len, ffn);
    matrix<S> dxmid(seq_len, d);
    matrix<S> dctx(seq_len, d);
    matrix<S> dq(seq_len, d), dk(seq_len, d), dv(seq_len, d);
    matrix<S> dn1(seq_len, d);
    std::vector<double> dp(static_cast<std::size_t>(seq_len));

    for (int t = n_layers - 1; t >= 0; --t) {
        const layer_tape<S>& lt = tp.layers[static_cast<std::size_t>(t)];
        const layer_weights<S>& lw = m.layers[static_cast<std::size_t>(t)];
        layer_weights<S>& gw = grads.layers[static_cast<std::size_t>(t)];

        // FFN backward. x_out = x_mid + down(act), act = silu(gate n2) * (up n2).
        std::fill(dn2.data.begin(), dn2.data.end(), S(0));
        for (int p = 0; p < seq_len; ++p) {
            // dact = down^T dx
            std::fill(dact.row(p), dact.row(p) + ffn, S(0));
            matvec_bwd(lw.down, lt.act.row(p), dx.row(p), gw.down, dact.row(p));
            for (int j = 0; j < ffn; ++j) {
                const double g = static_cast<double>(lt.gate_pre.at(p, j));
                const double sig = 1.0 / (1.0 + std::exp(-g));
                const double silu = g * sig;
                const double dsilu = sig * (1.0 + g * (1.0 - sig));
                const double da = static_cast<double>(dact.at(p, j));
                dup.at(p, j) = static_cast<S>(da * silu);
                dgate.at(p, j) =
                    static_cast<S>(da * static_cast<double>(lt.up_pre.at(p, j)) * dsilu);
            }
            matvec_bwd(lw.gate, lt.n2.row(p), dgate.row(p), gw.gate, dn2.row(p));
            matvec_bwd(lw.up, lt.n2.row(p), dup.row(p), gw.up, dn2.row(p));
        }
        // dxmid = dx (residual) + rmsnorm backward of dn2.
        dxmid = dx;
        rmsnorm_bwd(lt.x_mid, lw.ffn_gain, lt.r2, dn2, dxmid, gw.ffn_gain.data());

        // Attention backward. x_mid = x_in + o(ctx).
        std::fill(dctx.data.begin(), dctx.data.end(), S(0));
        for (int p = 0; p < seq_len; ++p) {
            matvec_bwd(lw.o, lt.ctx.row(p), dxmid.row(p), gw.o, dctx.row(p));
        }

        std::fill(dq.data.begin(), dq.data.end(), S(0));
        std::fill(dk.data.begin(), dk.data.end(), S(0));
        std::fill(dv.data.begin(), dv.data.end(), S(0));
        for (int h = 0; h < n_heads; ++h) {
            const int off = h * head_dim;
            const matrix<S>& pr = lt.probs[static_cast<std::size_t>(h)];
            for (int i = 0; i < seq_len; ++i) {
                const S* dctx_i = dctx.row(i) + off;
                // dv_j += p_ij * dctx_i ; dp_ij = dctx_i . v_j
                double dp_dot = 0.0;
                for (int j = 0; j <= i; ++j) {
                    const double p_ij = static_cast<double>(pr.at(i, j));
                    double dot = 0.0;
                    S* dv_j = dv.row(j) + off;
                    const S* v_j = lt.v.row(j) + off;
                    for (int e = 0; e < head_dim; ++e) {
                        const double de = static_cast<double>(dctx_i[e]);
                        dv_j[e] += static_cast<S>(p_ij * de);
                        dot += de * static_cast<double>(v_j[e]);
                    }
                    dp[static_cast<std::size_t>(j)] = dot;
                    dp_dot += p_ij * dot;
                }
                // ds_ij = p_ij (dp_ij - sum_l p_il dp_il); dq, dk via scores.
                const S* qi = lt.q.row(i) + off;
                S* dqi = dq.row(i) + off;
                for (int j = 0; j <= i; ++j) {
                    const double p_ij = static_cast<double>(pr.at(i, j));
                    const double ds = p_ij * (dp[static_cast<std::size_t>(j)] - dp_dot) *
                                      attn_scale;
                    const S* kj = lt.k.row(j) + off;
                    S* dkj = dk.row(j) + off;
                    for (int e = 0; e < head_dim; ++e) {
                        dqi[e] += static_cast<S>(ds * static_cast<double>(kj[e]));
                        dkj[e] += static_cast<S>(ds * static_cast<double>(qi[e]));
                    }
                }
            }
        }

        std::fill(dn1.data.begin(), dn1.data.end(), S(0));
        for (int p = 0; p < seq_len; ++p) {
            for (int h = 0; h < n_heads; ++h) {
                rope.rotate_back(dq.row(p) + h * head_dim, p);
                rope.rotate_back(dk.row(p) + h * head_dim, p);
            }
            matvec_bwd(lw.q, lt.n1.row(p), dq.row(p), gw.q, dn1.row(p));
            matvec_bwd(lw.k, lt.n1.row(p), dk.row(p), gw.k, dn1.row(p));
            matvec_bwd(lw.v, lt.n1.row(p), dv.row(p), gw.v, dn1.row(p));
        }

        // dx_in = dxmid (residual) + rmsnorm backward of dn1.
        dx = dxmid;
        rmsnorm_bwd(lt.x_in, lw.attn_gain, lt.r1, dn1, dx, gw.attn_gain.data());
    }

    // Embedding scatter-add.
    for (int p = 0; p < seq_len; ++p) {
        S* erow = grads.embedding.row(inputs[static_cast<std::size_t>(p)]);
        const S* dxr = dx.row(p);
        for (int j = 0; j < d; ++j) erow[j] += dxr[j];
    }
}

// Mean cross-entropy for gradient checking; no tape retained beyond the call.
template <typename S>
double mean_loss(const model<S>& m, const std::vector<std::int32_t>& inputs,
                 const std::vector<std::int32_t>& targets, const rope_tables& rope) {
    tape<S> tp;
    const double sum = tape_forward(m, inputs, targets, rope, tp);
    return sum / static_cast<double>(inputs.size());
}

} // namespace

train_result train(const std::vector<std::uint8_t>& corpus, const model_config& config,
                   const train_options& options) {
    config.validate();
    if (options.steps < 1 || options.batch_size < 1 || options.seq_len < 2) {
        throw invalid_parameter_error("train: steps and batch_size must be >= 1, seq_len >= 2");
    }
    if (options.seq_len > static_cast<int>(config.max_seq_len)) {
        throw invalid_parameter_error("train: seq_len exceeds the model's max_seq_len");
    }
    if (!(options.learning_rate > 0.0) || !std::isfinite(options.learning_rate)) {
        throw invalid_parameter_error("train: learning_rate must be positive and finite");
    }
    if (!(options.held_out_fraction > 0.0) || options.held_out_fraction > 0.5) {
        throw invalid_parameter_error("train: held_out_fraction must be in (0, 0.5]");
    }
    if (corpus.size() < 64 * static_cast<std::size_t>(config.max_seq_len)) {
        throw invalid_input_error("train: corpus of " + std::to_string(corpus.size()) +
                                  " bytes is below the 64 * max_seq_len minimum");
    }

    const std::size_t held_out =
        static_cast<std::size_t>(options.held_out_fraction * static_cast<double>(corpus.size()));
    const std::size_t train_len = corpus.size() - held_out;
    const std::size_t seq_len = static_cast<std::size_t>(options.seq_len);
    if (train_len < seq_len + 2) {
        throw invalid_input_error("train: training split is shorter than one sequence");
    }

    using S = float;
    model<S> net = model<S>::random_init(config);
    model<S> grads = model<S>::zeros(config);
    model<S> adam_m = model<S>::zeros(config);
    model<S> adam_v = model<S>::zeros(config);
    zero_params(grads);
    zero_params(adam_m);
    zero_params(adam_v);

    auto net_blocks = param_blocks(net);
    auto grad_blocks = param_blocks(grads);
    auto m_blocks = param_blocks(adam_m);
    auto v_blocks = param_blocks(adam_v);

    rope_tables rope;
    rope.build(options.seq_len, config.head_dim());

    // Separate stream from random_init's so the draw orders stay independent.
    deterministic_rng data_rng(config.seed * 0x9E3779B97F4A7C15ULL + 1);

    const double scale = 1.0 / (static_cast<double>(options.batch_size) *
                                static_cast<double>(options.seq_len));
    std::vector<std::int32_t> inputs(seq_len), targets(seq_len);
    double last_loss = 0.0;

    for (int step = 0; step < options.steps; ++step) {
        for (auto& b : grad_blocks) std::fill(b.data, b.data + b.size, S(0));

        double loss_sum = 0.0;
        for (int b = 0; b < options.batch_size; ++b) {
            const std::uint64_t offset =
                data_rng.next_below(static_cast<std::uint64_t>(train_len - seq_len));
            for (std::size_t i = 0; i < seq_len; ++i) {
                inputs[i] = corpus[offset + i];
                targets[i] = corpus[offset + i + 1];
            }
            tape<S> tp;
            loss_sum += tape_forward(net, inputs, targets, rope, tp);
            tape_backward(net, inputs, targets, rope, tp, scale, grads);
        }
        last_loss = loss_sum * scale;
        if (!std::isfinite(last_loss)) {
            throw numeric_error("train: loss diverged to a non-finite value at step " +
                                std::to_string(step));
        }

        // Global-norm clipping.
        double sq_norm = 0.0;
        for (auto& b : grad_blocks) {
            for (std::size_t i = 0; i < b.size; ++i) {
                sq_norm += static_cast<double>(b.data[i]) * static_cast<double>(b.data[i]);
            }
        }
        const double norm = std::sqrt(sq_norm);
        // clip_norm <= 0 disables clipping.
        const double clip_scale =
            options.clip_norm > 0.0 && norm > options.clip_norm ? options.clip_norm / norm : 1.0;

        const double warm =
            std::min(1.0, static_cast<double>(step + 1) / std::max(1, options.warmup_steps));
        const double lr = options.learning_rate * warm;
        const double bias1 = 1.0 - std::pow(options.beta1, step + 1);
        const double bias2 = 1.0 - std::pow(options.beta2, step + 1);

        for (std::size_t blk = 0; blk < grad_blocks.size(); ++blk) {
            S* g = grad_blocks[blk].data;
            S* w = net_blocks[blk].data;
            S* ms = m_blocks[blk].data;
            S* vs = v_blocks[blk].data;
            const std::size_t n = grad_blocks[blk].size;
            for (std::size_t i = 0; i < n; ++i) {
                const double gi = static_cast<double>(g[i]) * clip_scale;
                const double mi =
                    options.beta1 * static_cast<double>(ms[i]) + (1.0 - options.beta1) * gi;
                const double vi = options.beta2 * static_cast<double>(vs[i]) +
                                  (1.0 - options.beta2) * gi * gi;
                ms[i] = static_cast<S>(mi);
                vs[i] = static_cast<S>(vi);
                const double step_size =
                    lr * (mi / bias1) / (std::sqrt(vi / bias2) + options.adam_epsilon);
                w[i] = static_cast<S>(static_cast<double>(w[i]) - step_size);
            }
        }
    }

    train_result result;
    result.checkpoint = net;
    result.final_loss = last_loss;

    // Held-out perplexity over non-overlapping windows from the corpus tail.
    const calibration_batch eval_batch = make_held_out(
        corpus, options.held_out_fraction, 32, static_cast<int>(config.max_seq_len));
    result.held_out_ppl =
        perplexity(result.checkpoint, layer_set::full(static_cast<int>(config.n_layers)),
                   eval_batch)
            .ppl;
    return result;
}

double training_loss(const model_checkpoint& m, const std::vector<std::int32_t>& inputs,
                     const std::vector<std::int32_t>& targets) {
    if (inputs.empty() || inputs.size() != targets.size()) {
        throw invalid_parameter_error("training_loss: inputs and targets must match, nonempty");
    }
    const model<double> net = m.cast<double>();
    rope_tables rope;
    rope.build(static_cast<int>(inputs.size()), net.config.head_dim());
    return mean_loss(net, inputs, targets, rope);
}

gradient_check_result gradient_check(const model_config& config, int seq_len,
                                     std::uint64_t seed) {
    config.validate();
    if (seq_len < 1 || seq_len > static_cast<int>(config.max_seq_len)) {
        throw invalid_parameter_error("gradient_check: seq_len out of range");
    }

    model<double> net = model<double>::random_init(config);
    deterministic_rng rng(seed);
    std::vector<std::int32_t> inputs(static_cast<std::size_t>(seq_len));
    std::vector<std::int32_t> targets(static_cast<std::size_t>(seq_len));
    for (auto& tok : inputs) {
        tok = static_cast<std::int32_t>(rng.next_below(config.vocab_size));
    }
    for (auto& tok : targets) {
        tok = static_cast<std::int32_t>(rng.next_below(config.vocab_size));
    }

    rope_tables rope;
    rope.build(seq_len, config.head_dim());

    model<double> grads = model<double>::zeros(config);
    zero_params(grads);
    tape<double> tp;
    tape_forward(net, inputs, targets, rope, tp);
    tape_backward(net, inputs, targets, rope, tp, 1.0 / seq_len, grads);

    auto net_blocks = param_blocks(net);
    auto grad_blocks = param_blocks(grads);

    gradient_check_result result;
    const double h = 1e-5;
    for (std::size_t blk = 0; blk < net_blocks.size(); ++blk) {
        double diff_sq = 0.0;
        double ref_sq = 0.0;
        for (std::size_t i = 0; i < net_blocks[blk].size; ++i) {
            double& w = net_blocks[blk].data[i];
            const double original = w;
            w = original + h;
            const double up = mean_loss(net, inputs, targets, rope);
            w = original - h;
            const double down = mean_loss(net, inputs, targets, rope);
            w = original;
            const double fd = (up - down) / (2.0 * h);
            const double an = grad_blocks[blk].data[i];
            diff_sq += (fd - an) * (fd - an);
            ref_sq += fd * fd;
        }
        const double rel = std::sqrt(diff_sq) / std::max(std::sqrt(ref_sq), 1e-12);
        result.per_block.emplace_back(net_blocks[blk].name, rel);
        if (rel > result.worst_relative_error) {
            result.worst_relative_error = rel;
            result.worst_block = net_blocks[blk].name;
        }
    }
    return result;
}

} // namespace shapprune
