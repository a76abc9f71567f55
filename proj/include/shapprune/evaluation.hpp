#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "shapprune/calibration.hpp"
#include "shapprune/model.hpp"
#include "shapprune/shapley.hpp"

namespace shapprune {

struct perplexity_result {
    double ppl = 0.0;
    std::uint64_t token_count = 0;  // next-token prediction positions
    double mean_nll = 0.0;

    std::string to_json() const;
};

// exp(mean negative log-likelihood) over every next-token position in the
// batch, with log-sum-exp stabilization. Sequences may be evaluated in
// parallel; partial sums are reduced in sequence order, so the result is
// independent of the thread count.
perplexity_result perplexity(const model_checkpoint& m, const layer_set& active,
                             const calibration_batch& batch, int threads = 1);

// The coalition value function: 1/perplexity, except the empty coalition is
// 0 by definition and never runs a forward pass.
double value_of(const model_checkpoint& m, const layer_set& active,
                const calibration_batch& batch, int threads = 1);

// value_of bound to a fixed model and batch, with evaluation accounting.
class perplexity_oracle : public value_oracle {
public:
    perplexity_oracle(const model_checkpoint& m, const calibration_batch& batch, int threads = 1)
        : model_(m), batch_(batch), threads_(threads) {}

    double value(const layer_set& coalition) override;
    std::uint64_t evaluation_count() const override { return evaluations_.load(); }

private:
    const model_checkpoint& model_;
    const calibration_batch& batch_;
    int threads_;
    std::atomic<std::uint64_t> evaluations_{0};
};

struct similarity_profile {
    std::vector<double> similarity;  // one entry per transformer layer, in [-1, 1]
    bool zero_vector_seen = false;   // a zero hidden vector contributed cosine 0

    std::string to_csv() const;  // "layer,similarity" rows
};

// Mean per-position cosine similarity between the dense and pruned residual
// stream at each layer boundary, over every sequence in the batch.
similarity_profile activation_cosine(const model_checkpoint& dense,
                                     const model_checkpoint& pruned,
                                     const calibration_batch& batch);

} // namespace shapprune
