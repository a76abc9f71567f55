#include "shapprune/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "shapprune/errors.hpp"

namespace shapprune {

namespace {

void check_contributions(const std::vector<double>& contributions) {
    if (contributions.empty()) {
        throw invalid_parameter_error("allocation: contribution list is empty");
    }
    for (std::size_t i = 0; i < contributions.size(); ++i) {
        if (!std::isfinite(contributions[i])) {
            throw invalid_input_error("allocation: contribution for layer " +
                                      std::to_string(i + 1) + " is not finite");
        }
    }
}

} // namespace

std::vector<double> normalize_contributions(const std::vector<double>& contributions,
                                            double lambda) {
    check_contributions(contributions);
    if (!std::isfinite(lambda) || lambda < 0.0) {
        throw invalid_parameter_error("allocation: lambda must be >= 0");
    }

    const auto [lo_it, hi_it] = std::minmax_element(contributions.begin(), contributions.end());
    const double lo = *lo_it;
    const double hi = *hi_it;

    std::vector<double> adjustments(contributions.size());
    if (lo == hi) {
        std::fill(adjustments.begin(), adjustments.end(), lambda);
        return adjustments;
    }
    const double span = hi - lo;
    for (std::size_t i = 0; i < contributions.size(); ++i) {
        adjustments[i] = 2.0 * lambda * (contributions[i] - lo) / span;
    }
    return adjustments;
}

sparsity_plan allocate_ratios(const std::vector<double>& contributions, double rho,
                              double lambda, const std::string& source) {
    if (!std::isfinite(rho) || rho < 0.0 || rho > 1.0) {
        throw invalid_parameter_error("allocation: rho must be in [0,1]");
    }
    const std::vector<double> adjustments = normalize_contributions(contributions, lambda);
    const double mean_adjustment =
        std::accumulate(adjustments.begin(), adjustments.end(), 0.0) /
        static_cast<double>(adjustments.size());

    sparsity_plan plan;
    plan.rho = rho;
    plan.lambda = lambda;
    plan.source = source;
    plan.ratios.resize(adjustments.size());
    for (std::size_t i = 0; i < adjustments.size(); ++i) {
        const double raw = rho - adjustments[i] + mean_adjustment;
        const double clamped = std::clamp(raw, 0.0, 1.0);
        if (clamped != raw) plan.clamped = true;
        plan.ratios[i] = clamped;
    }
    return plan;
}

std::string sparsity_plan::to_json() const {
    nlohmann::ordered_json doc;
    doc["rho"] = rho;
    doc["lambda"] = lambda;
    doc["ratios"] = ratios;
    doc["clamped"] = clamped;
    doc["source"] = source;
    return doc.dump(2) + "\n";
}

sparsity_plan sparsity_plan::from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw invalid_input_error(std::string("sparsity plan: invalid JSON: ") + e.what());
    }
    sparsity_plan plan;
    try {
        plan.rho = doc.at("rho").get<double>();
        plan.lambda = doc.at("lambda").get<double>();
        plan.ratios = doc.at("ratios").get<std::vector<double>>();
        plan.clamped = doc.at("clamped").get<bool>();
        plan.source = doc.at("source").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw invalid_input_error(std::string("sparsity plan: missing or mistyped field: ") +
                                  e.what());
    }
    if (plan.ratios.empty()) {
        throw invalid_input_error("sparsity plan: ratios list is empty");
    }
    for (double r : plan.ratios) {
        if (!std::isfinite(r) || r < 0.0 || r > 1.0) {
            throw invalid_input_error("sparsity plan: ratio outside [0,1]");
        }
    }
    return plan;
}

} // namespace shapprune
