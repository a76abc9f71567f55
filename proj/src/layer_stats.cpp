#include "shapprune/layer_stats.hpp"

#include <cmath>
#include <sstream>

namespace shapprune {

magnitude_stats compute_magnitude_stats(const model_checkpoint& m) {
    magnitude_stats stats;
    for (int t = 1; t <= static_cast<int>(m.config.n_layers); ++t) {
        const auto& layer = m.layers[static_cast<std::size_t>(t - 1)];
        for (int inner = 1; inner <= inner_layer_count; ++inner) {
            const matrix<float>& w = layer.inner(inner);
            const std::size_t n = w.numel();

            double sum = 0.0;
            for (float x : w.data) sum += std::fabs(static_cast<double>(x));
            const double mean = sum / static_cast<double>(n);

            double sq_dev = 0.0;
            for (float x : w.data) {
                const double d = std::fabs(static_cast<double>(x)) - mean;
                sq_dev += d * d;
            }
            // Population standard deviation: each matrix is the whole
            // population of interest, not a sample.
            const double std_dev = std::sqrt(sq_dev / static_cast<double>(n));

            stats.entries.push_back({t, inner, mean, std_dev, static_cast<std::uint64_t>(n)});
        }
    }
    return stats;
}

std::string magnitude_stats::to_csv() const {
    std::ostringstream out;
    out << "layer,inner,mean,std,count\n";
    out.precision(17);
    for (const auto& e : entries) {
        out << e.layer << "," << e.inner << "," << e.mean << "," << e.std_dev << "," << e.count
            << "\n";
    }
    return out.str();
}

} // namespace shapprune
