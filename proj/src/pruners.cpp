#include "shapprune/pruners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "shapprune/errors.hpp"

namespace shapprune {

namespace {

void check_ratio(double ratio) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw invalid_parameter_error("prune: ratio must be in [0,1]");
    }
}

double zero_fraction(const matrix<float>& w) {
    if (w.numel() == 0) return 0.0;
    std::size_t zeros = 0;
    for (float x : w.data) {
        if (x == 0.0f) ++zeros;
    }
    return static_cast<double>(zeros) / static_cast<double>(w.numel());
}

} // namespace

prune_method parse_prune_method(const std::string& name) {
    if (name == "magnitude") return prune_method::magnitude;
    if (name == "wanda") return prune_method::wanda;
    throw invalid_parameter_error("prune: unknown method '" + name +
                                  "' (expected magnitude or wanda)");
}

const char* prune_method_name(prune_method method) {
    return method == prune_method::magnitude ? "magnitude" : "wanda";
}

matrix<float> magnitude_prune_matrix(const matrix<float>& w, double ratio) {
    check_ratio(ratio);
    for (float x : w.data) {
        if (std::isnan(x)) {
            throw invalid_input_error("magnitude prune: NaN weight");
        }
    }

    const std::size_t numel = w.numel();
    const std::size_t to_zero =
        static_cast<std::size_t>(std::floor(ratio * static_cast<double>(numel)));
    matrix<float> out = w;
    if (to_zero == 0) return out;

    std::vector<std::size_t> order(numel);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Partial ordering by (|w| ascending, flat index ascending): only the
    // boundary between pruned and kept needs to be exact.
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(to_zero - 1),
                     order.end(), [&w](std::size_t a, std::size_t b) {
                         const float ma = std::fabs(w.data[a]);
                         const float mb = std::fabs(w.data[b]);
                         if (ma != mb) return ma < mb;
                         return a < b;
                     });
    for (std::size_t i = 0; i < to_zero; ++i) out.data[order[i]] = 0.0f;
    return out;
}

matrix<float> wanda_prune_matrix(const matrix<float>& w,
                                 const std::vector<double>& input_norms, double ratio) {
    check_ratio(ratio);
    if (input_norms.size() != static_cast<std::size_t>(w.cols)) {
        throw invalid_input_error("wanda prune: " + std::to_string(input_norms.size()) +
                                  " input norms for " + std::to_string(w.cols) + " columns");
    }
    for (double n : input_norms) {
        if (!(n >= 0.0)) {
            throw invalid_input_error("wanda prune: input norms must be >= 0");
        }
    }
    for (float x : w.data) {
        if (std::isnan(x)) {
            throw invalid_input_error("wanda prune: NaN weight");
        }
    }

    const std::size_t per_row =
        static_cast<std::size_t>(std::floor(ratio * static_cast<double>(w.cols)));
    matrix<float> out = w;
    if (per_row == 0) return out;

    std::vector<int> order(static_cast<std::size_t>(w.cols));
    for (int r = 0; r < w.rows; ++r) {
        const float* row = w.row(r);
        std::iota(order.begin(), order.end(), 0);
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(per_row - 1),
                         order.end(), [row, &input_norms](int a, int b) {
                             const double sa = std::fabs(static_cast<double>(row[a])) *
                                               input_norms[static_cast<std::size_t>(a)];
                             const double sb = std::fabs(static_cast<double>(row[b])) *
                                               input_norms[static_cast<std::size_t>(b)];
                             if (sa != sb) return sa < sb;
                             return a < b;  // ascending flat index within the row
                         });
        for (std::size_t i = 0; i < per_row; ++i) out.at(r, order[i]) = 0.0f;
    }
    return out;
}

const std::vector<double>& layer_input_norms::for_inner(int inner) const {
    switch (inner) {
        case 1:
        case 2:
        case 3: return slots[0];  // q, k, v read the attention-norm output
        case 4: return slots[1];  // o reads the attention context
        case 5:
        case 6: return slots[2];  // gate, up read the FFN-norm output
        case 7: return slots[3];  // down reads the gated activation
        default: throw invalid_parameter_error("inner index must be in 1..7");
    }
}

std::vector<layer_input_norms> collect_input_norms(const model_checkpoint& m,
                                                   const calibration_batch& batch) {
    if (batch.sequences.empty()) {
        throw invalid_input_error("wanda prune: calibration batch is empty");
    }
    activation_sq_accumulator acc;
    acc.init(m.config);
    forward_options opts;
    opts.norm_collector = &acc;
    const layer_set full = layer_set::full(static_cast<int>(m.config.n_layers));
    for (const auto& tokens : batch.sequences) {
        forward(m, tokens, full, opts);
    }

    std::vector<layer_input_norms> norms(m.config.n_layers);
    for (std::size_t t = 0; t < norms.size(); ++t) {
        for (int slot = 0; slot < 4; ++slot) {
            const auto& sums = acc.by_layer[t][static_cast<std::size_t>(slot)];
            auto& out = norms[t].slots[static_cast<std::size_t>(slot)];
            out.resize(sums.size());
            for (std::size_t j = 0; j < sums.size(); ++j) out[j] = std::sqrt(sums[j]);
        }
    }
    return norms;
}

prune_result apply_plan(const model_checkpoint& m, const sparsity_plan& plan,
                        prune_method method, const calibration_batch& batch) {
    const int n_layers = static_cast<int>(m.config.n_layers);
    if (plan.ratios.size() != static_cast<std::size_t>(n_layers)) {
        throw invalid_input_error("apply_plan: plan has " + std::to_string(plan.ratios.size()) +
                                  " ratios, model has " + std::to_string(n_layers) + " layers");
    }
    for (double r : plan.ratios) {
        if (!(r >= 0.0 && r <= 1.0)) {
            throw invalid_input_error("apply_plan: plan ratio " + std::to_string(r) +
                                      " outside [0,1]");
        }
    }

    std::vector<layer_input_norms> norms;
    if (method == prune_method::wanda) {
        norms = collect_input_norms(m, batch);
    }

    prune_result result{m, {}};
    for (int t = 1; t <= n_layers; ++t) {
        const double ratio = plan.ratios[static_cast<std::size_t>(t - 1)];
        auto& layer = result.model.layers[static_cast<std::size_t>(t - 1)];
        for (int inner = 1; inner <= inner_layer_count; ++inner) {
            matrix<float>& w = layer.inner(inner);
            if (method == prune_method::magnitude) {
                w = magnitude_prune_matrix(w, ratio);
            } else {
                w = wanda_prune_matrix(w, norms[static_cast<std::size_t>(t - 1)].for_inner(inner),
                                       ratio);
            }
            result.report.entries.push_back({t, inner, ratio, zero_fraction(w), w.numel()});
        }
    }
    return result;
}

sparsity_report achieved_sparsity(const model_checkpoint& m) {
    sparsity_report report;
    for (int t = 1; t <= static_cast<int>(m.config.n_layers); ++t) {
        const auto& layer = m.layers[static_cast<std::size_t>(t - 1)];
        for (int inner = 1; inner <= inner_layer_count; ++inner) {
            const matrix<float>& w = layer.inner(inner);
            report.entries.push_back({t, inner, 0.0, zero_fraction(w), w.numel()});
        }
    }
    return report;
}

double sparsity_report::layer_achieved(int layer) const {
    double zeros = 0.0;
    double total = 0.0;
    for (const auto& e : entries) {
        if (e.layer == layer) {
            zeros += e.achieved * static_cast<double>(e.count);
            total += static_cast<double>(e.count);
        }
    }
    if (total == 0.0) {
        throw invalid_parameter_error("sparsity report: no entries for layer " +
                                      std::to_string(layer));
    }
    return zeros / total;
}

double sparsity_report::overall_achieved() const {
    double zeros = 0.0;
    double total = 0.0;
    for (const auto& e : entries) {
        zeros += e.achieved * static_cast<double>(e.count);
        total += static_cast<double>(e.count);
    }
    return total == 0.0 ? 0.0 : zeros / total;
}

std::string sparsity_report::to_csv() const {
    std::ostringstream out;
    out << "layer,inner,requested,achieved\n";
    out.precision(17);
    for (const auto& e : entries) {
        out << e.layer << "," << e.inner << "," << e.requested << "," << e.achieved << "\n";
    }
    return out.str();
}

} // namespace shapprune
