#include "shapprune/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "shapprune/errors.hpp"

namespace shapprune {

namespace {

struct sequence_nll {
    double nll_sum = 0.0;
    std::uint64_t positions = 0;
};

// Sum of next-token negative log-likelihoods for one sequence. Logits are
// float; the log-sum-exp and the loss run in double.
sequence_nll sequence_loss(const model_checkpoint& m, const layer_set& active,
                           const std::vector<std::int32_t>& tokens, std::size_t sequence_index) {
    if (tokens.size() < 2) {
        throw invalid_input_error("perplexity: sequence " + std::to_string(sequence_index) +
                                  " has fewer than 2 tokens, no prediction position");
    }
    const forward_result<float> fr = forward(m, tokens, active);

    sequence_nll out;
    const int vocab = fr.logits.cols;
    for (std::size_t pos = 0; pos + 1 < tokens.size(); ++pos) {
        const float* row = fr.logits.row(static_cast<int>(pos));
        double max_logit = -1e300;
        for (int v = 0; v < vocab; ++v) {
            max_logit = std::max(max_logit, static_cast<double>(row[v]));
        }
        double denom = 0.0;
        for (int v = 0; v < vocab; ++v) {
            denom += std::exp(static_cast<double>(row[v]) - max_logit);
        }
        const double target_logit = static_cast<double>(row[tokens[pos + 1]]);
        const double nll = -(target_logit - max_logit - std::log(denom));
        if (!std::isfinite(nll)) {
            throw numeric_error("perplexity: non-finite loss in sequence " +
                                std::to_string(sequence_index));
        }
        out.nll_sum += nll;
        out.positions += 1;
    }
    return out;
}

} // namespace

perplexity_result perplexity(const model_checkpoint& m, const layer_set& active,
                             const calibration_batch& batch, int threads) {
    if (threads < 1) {
        throw invalid_parameter_error("perplexity: threads must be >= 1");
    }
    if (batch.sequences.empty()) {
        throw invalid_input_error("perplexity: calibration batch is empty");
    }
    const std::size_t n = batch.sequences.size();
    std::vector<sequence_nll> partials(n);

    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            partials[i] = sequence_loss(m, active, batch.sequences[i], i);
        }
    } else {
        std::vector<std::pair<std::size_t, std::exception_ptr>> failures(
            static_cast<std::size_t>(workers));
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                failures[static_cast<std::size_t>(w)] = {n, nullptr};
                for (std::size_t i = static_cast<std::size_t>(w); i < n;
                     i += static_cast<std::size_t>(workers)) {
                    try {
                        partials[i] = sequence_loss(m, active, batch.sequences[i], i);
                    } catch (...) {
                        failures[static_cast<std::size_t>(w)] = {i, std::current_exception()};
                        return;
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        std::size_t first = n;
        std::exception_ptr error;
        for (const auto& [index, eptr] : failures) {
            if (eptr && index < first) {
                first = index;
                error = eptr;
            }
        }
        if (error) std::rethrow_exception(error);
    }

    // Fixed reduction order: sequence index ascending.
    double nll_sum = 0.0;
    std::uint64_t positions = 0;
    for (const auto& p : partials) {
        nll_sum += p.nll_sum;
        positions += p.positions;
    }

    perplexity_result result;
    result.token_count = positions;
    result.mean_nll = nll_sum / static_cast<double>(positions);
    result.ppl = std::exp(result.mean_nll);
    if (!std::isfinite(result.ppl)) {
        throw numeric_error("perplexity: non-finite perplexity");
    }
    return result;
}

double value_of(const model_checkpoint& m, const layer_set& active,
                const calibration_batch& batch, int threads) {
    if (active.is_empty()) return 0.0;
    return 1.0 / perplexity(m, active, batch, threads).ppl;
}

double perplexity_oracle::value(const layer_set& coalition) {
    if (coalition.is_empty()) return 0.0;
    evaluations_.fetch_add(1, std::memory_order_relaxed);
    return 1.0 / perplexity(model_, coalition, batch_, threads_).ppl;
}

std::string perplexity_result::to_json() const {
    nlohmann::ordered_json doc;
    doc["ppl"] = ppl;
    doc["token_count"] = token_count;
    doc["mean_nll"] = mean_nll;
    return doc.dump(2) + "\n";
}

similarity_profile activation_cosine(const model_checkpoint& dense,
                                     const model_checkpoint& pruned,
                                     const calibration_batch& batch) {
    if (!dense.config.same_architecture(pruned.config)) {
        throw invalid_input_error("activation_cosine: model architectures differ");
    }
    if (batch.sequences.empty()) {
        throw invalid_input_error("activation_cosine: calibration batch is empty");
    }
    const int n_layers = static_cast<int>(dense.config.n_layers);
    const layer_set full = layer_set::full(n_layers);

    similarity_profile profile;
    profile.similarity.assign(static_cast<std::size_t>(n_layers), 0.0);
    std::uint64_t positions = 0;

    forward_options opts;
    opts.capture_hidden = true;
    for (const auto& tokens : batch.sequences) {
        const forward_result<float> a = forward(dense, tokens, full, opts);
        const forward_result<float> b = forward(pruned, tokens, full, opts);
        const int seq_len = static_cast<int>(tokens.size());
        // hidden[0] is the embedding output; layer t's residual output is
        // hidden[t].
        for (int t = 1; t <= n_layers; ++t) {
            const matrix<float>& ha = a.hidden[static_cast<std::size_t>(t)];
            const matrix<float>& hb = b.hidden[static_cast<std::size_t>(t)];
            double layer_sum = 0.0;
            for (int p = 0; p < seq_len; ++p) {
                const float* xa = ha.row(p);
                const float* xb = hb.row(p);
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (int j = 0; j < ha.cols; ++j) {
                    dot += static_cast<double>(xa[j]) * static_cast<double>(xb[j]);
                    na += static_cast<double>(xa[j]) * static_cast<double>(xa[j]);
                    nb += static_cast<double>(xb[j]) * static_cast<double>(xb[j]);
                }
                if (na == 0.0 || nb == 0.0) {
                    profile.zero_vector_seen = true;
                    continue;  // contributes 0 to the sum
                }
                layer_sum += dot / std::sqrt(na * nb);
            }
            profile.similarity[static_cast<std::size_t>(t - 1)] += layer_sum;
        }
        positions += static_cast<std::uint64_t>(seq_len);
    }

    for (double& s : profile.similarity) s /= static_cast<double>(positions);
    return profile;
}

std::string similarity_profile::to_csv() const {
    std::ostringstream out;
    out << "layer,similarity\n";
    out.precision(17);
    for (std::size_t t = 0; t < similarity.size(); ++t) {
        out << (t + 1) << "," << similarity[t] << "\n";
    }
    return out.str();
}

} // namespace shapprune
