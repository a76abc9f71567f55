#pragma once

#include <array>
#include <string>
#include <vector>

#include "shapprune/allocation.hpp"
#include "shapprune/calibration.hpp"
#include "shapprune/model.hpp"

namespace shapprune {

enum class prune_method { magnitude, wanda };

prune_method parse_prune_method(const std::string& name);
const char* prune_method_name(prune_method method);

// Per-(layer, inner-matrix) sparsity accounting. `requested` is 0 when the
// report audits an existing model rather than recording a pruning run.
struct sparsity_entry {
    int layer = 0;
    int inner = 0;  // 1..7, (q, k, v, o, gate, up, down)
    double requested = 0.0;
    double achieved = 0.0;
    std::size_t count = 0;  // matrix element count; not serialized
};

struct sparsity_report {
    std::vector<sparsity_entry> entries;  // n_layers x 7, layer-major

    // Zero fraction across the 7 inner matrices of one layer (1-based).
    double layer_achieved(int layer) const;
    // Zero fraction across all inner matrices.
    double overall_achieved() const;

    std::string to_csv() const;  // "layer,inner,requested,achieved" rows
};

// Zeroes the floor(ratio * numel) smallest-|w| entries of the whole matrix,
// ties broken by ascending flat index. Surviving entries are untouched.
matrix<float> magnitude_prune_matrix(const matrix<float>& w, double ratio);

// Wanda criterion: score |w_ij| * input_norms[j], pruned per output row.
// input_norms are per-input-feature L2 norms of calibration activations.
matrix<float> wanda_prune_matrix(const matrix<float>& w,
                                 const std::vector<double>& input_norms, double ratio);

// Per-feature L2 activation norms feeding each of the 7 inner matrices,
// collected in one dense forward pass over the calibration batch.
struct layer_input_norms {
    std::array<std::vector<double>, 4> slots;  // qkv input, o input, ffn input, down input

    const std::vector<double>& for_inner(int inner) const;
};

std::vector<layer_input_norms> collect_input_norms(const model_checkpoint& m,
                                                   const calibration_batch& batch);

struct prune_result {
    model_checkpoint model;
    sparsity_report report;
};

// Prunes all 7 inner matrices of layer t at plan.ratios[t-1]; embeddings,
// norm gains, and the head are untouched. The input model is not modified.
// The batch is only consulted for Wanda.
prune_result apply_plan(const model_checkpoint& m, const sparsity_plan& plan,
                        prune_method method, const calibration_batch& batch);

// Exact zero counts of the model as it stands (requested fields all 0).
sparsity_report achieved_sparsity(const model_checkpoint& m);

} // namespace shapprune
