#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shapprune/model.hpp"

namespace shapprune {

struct train_options {
    int steps = 600;
    int batch_size = 8;
    int seq_len = 128;
    double learning_rate = 2e-3;
    int warmup_steps = 32;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_epsilon = 1e-9;
    double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
    double held_out_fraction = 0.1;  // corpus tail reserved for evaluation
};

struct train_result {
    model_checkpoint checkpoint;
    double final_loss = 0.0;    // mean next-token cross-entropy at the last step
    double held_out_ppl = 0.0;  // perplexity on the reserved corpus tail
};

// Next-token cross-entropy training with Adam on a fixed schedule.
// Single-threaded and deterministic: the same corpus, config, and options
// produce a bit-identical checkpoint. Throws invalid_input_error if the
// corpus is shorter than 64 * max_seq_len bytes and numeric_error if the
// loss goes non-finite.
train_result train(const std::vector<std::uint8_t>& corpus, const model_config& config,
                   const train_options& options = {});

// Mean next-token cross-entropy of the training-loop forward pass (run in
// double precision) on one explicit (inputs, targets) pair. Exists so tests
// can pin the training forward against the inference forward.
double training_loss(const model_checkpoint& m, const std::vector<std::int32_t>& inputs,
                     const std::vector<std::int32_t>& targets);

struct gradient_check_result {
    double worst_relative_error = 0.0;
    std::string worst_block;
    std::vector<std::pair<std::string, double>> per_block;  // relative L2 error per block
};

// Compares the analytic gradient of the training loss against central finite
// differences, parameter block by parameter block, in double precision.
gradient_check_result gradient_check(const model_config& config, int seq_len,
                                     std::uint64_t seed);

} // namespace shapprune
