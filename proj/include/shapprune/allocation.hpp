#pragma once

#include <string>
#include <vector>

namespace shapprune {

// Per-layer pruning ratios derived from contribution estimates: layers that
// contribute more are pruned less, with deviation from the global ratio
// bounded by 2*lambda before clamping.
struct sparsity_plan {
    double rho = 0.0;             // global pruning ratio
    double lambda = 0.0;          // deviation bound
    std::vector<double> ratios;   // per-layer rho_t, clamped to [0,1]
    bool clamped = false;         // true if clamping changed any entry
    std::string source;           // identifier of the contribution report used

    std::string to_json() const;
    static sparsity_plan from_json(const std::string& text);
};

// a_t = 2*lambda * (phi_t - min phi) / (max phi - min phi), so the least
// contributing layer maps to 0 and the most to 2*lambda. When all
// contributions are equal the quotient is undefined; we take the center of
// the range, a_t = lambda, which makes every rho_t collapse to rho.
std::vector<double> normalize_contributions(const std::vector<double>& contributions,
                                            double lambda);

// rho_t = rho - a_t + mean(a), clamped into [0,1]. The mean-centering term
// keeps mean(rho_t) = rho whenever clamping does not trigger.
sparsity_plan allocate_ratios(const std::vector<double>& contributions, double rho,
                              double lambda, const std::string& source = "");

} // namespace shapprune
