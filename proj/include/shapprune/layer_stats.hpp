#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shapprune/model.hpp"

namespace shapprune {

// Mean and population standard deviation of absolute weight values, per
// (transformer layer, inner matrix) cell. Normalization gains, embeddings,
// and the head are excluded: only the 7 prunable matrices count.
struct magnitude_stats_entry {
    int layer = 0;
    int inner = 0;  // 1..7: indices 1-4 attention, 5-7 FFN
    double mean = 0.0;
    double std_dev = 0.0;
    std::uint64_t count = 0;
};

struct magnitude_stats {
    std::vector<magnitude_stats_entry> entries;  // n_layers x 7, layer-major

    std::string to_csv() const;  // "layer,inner,mean,std,count" rows
};

magnitude_stats compute_magnitude_stats(const model_checkpoint& m);

} // namespace shapprune
