#include "shapprune/shapley.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>
#include <thread>
#include <unordered_set>

#include <json.hpp>

#include "shapprune/errors.hpp"

namespace shapprune {

double coalition_cache::evaluate_cached(value_oracle& oracle, const layer_set& coalition) {
    const std::uint64_t key = coalition.bits();
    std::unique_lock<std::mutex> lock(mutex_);
    for (;;) {
        auto it = values_.find(key);
        if (it != values_.end()) {
            hits_.fetch_add(1, std::memory_order_relaxed);
            return it->second;
        }
        if (in_flight_.find(key) == in_flight_.end()) break;
        ready_.wait(lock);
    }
    in_flight_.insert(key);
    lock.unlock();

    double value = 0.0;
    try {
        value = oracle.value(coalition);
    } catch (...) {
        lock.lock();
        in_flight_.erase(key);
        ready_.notify_all();
        std::rethrow_exception(std::current_exception());
    }

    lock.lock();
    values_.emplace(key, value);
    in_flight_.erase(key);
    misses_.fetch_add(1, std::memory_order_relaxed);
    ready_.notify_all();
    return value;
}

bool coalition_cache::contains(const layer_set& coalition) const {
    std::lock_guard<std::mutex> lock(mutex_);
    return values_.find(coalition.bits()) != values_.end();
}

std::size_t coalition_cache::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return values_.size();
}

std::uint64_t binomial_u64(int n, int k) {
    if (n < 0 || k < 0 || k > n) {
        throw invalid_parameter_error("binomial_u64: need 0 <= k <= n");
    }
    if (k > n - k) k = n - k;
    unsigned __int128 result = 1;
    for (int i = 1; i <= k; ++i) {
        result = result * static_cast<unsigned>(n - k + i) / static_cast<unsigned>(i);
        if (result > ~std::uint64_t{0}) {
            throw invalid_parameter_error("binomial_u64: C(" + std::to_string(n) + "," +
                                          std::to_string(k) + ") overflows 64 bits");
        }
    }
    return static_cast<std::uint64_t>(result);
}

double shapley_weight(int coalition_size, int population) {
    if (population < 1) {
        throw invalid_parameter_error("shapley_weight: population must be >= 1");
    }
    if (coalition_size < 0 || coalition_size >= population) {
        throw invalid_parameter_error("shapley_weight: coalition size " +
                                      std::to_string(coalition_size) +
                                      " must be in 0.." + std::to_string(population - 1));
    }
    if (population <= 64) {
        // s!(n-s-1)!/n! == 1 / (n * C(n-1, s)), exact in integer arithmetic.
        const unsigned __int128 denom =
            static_cast<unsigned __int128>(population) *
            binomial_u64(population - 1, coalition_size);
        return static_cast<double>(1.0L / static_cast<long double>(denom));
    }
    return std::exp(std::lgamma(coalition_size + 1.0) +
                    std::lgamma(population - coalition_size + 0.0) -
                    std::lgamma(population + 1.0));
}

layer_set window_for_layer(int layer, int layer_count, int window_size) {
    if (layer_count < 1 || layer_count > layer_set::max_population) {
        throw invalid_parameter_error("window_for_layer: layer count must be in 1..64, got " +
                                      std::to_string(layer_count));
    }
    if (window_size < 1 || window_size > layer_count) {
        throw invalid_parameter_error("window_for_layer: window size " +
                                      std::to_string(window_size) + " must be in 1.." +
                                      std::to_string(layer_count));
    }
    if (window_size % 2 == 0) {
        throw invalid_parameter_error("window_for_layer: window size must be odd, got " +
                                      std::to_string(window_size));
    }
    if (layer < 1 || layer > layer_count) {
        throw invalid_parameter_error("window_for_layer: layer " + std::to_string(layer) +
                                      " out of range 1.." + std::to_string(layer_count));
    }

    // Centered when possible; at the boundaries the window shifts inward so
    // the first layer gains downstream neighbors and the last gains upstream.
    const int half = (window_size - 1) / 2;
    int start = layer - half;
    start = std::max(start, 1);
    start = std::min(start, layer_count - window_size + 1);

    layer_set window = layer_set::empty(layer_count);
    for (int i = start; i < start + window_size; ++i) {
        window = window.with(i);
    }
    return window;
}

namespace {

// Evaluates every coalition in `coalitions` through the cache, in parallel
// when threads > 1. Errors are rethrown in list order so failures are
// scheduling-independent.
void warm_cache(coalition_cache& cache, value_oracle& oracle,
                const std::vector<layer_set>& coalitions, int threads) {
    const std::size_t n = coalitions.size();
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (workers == 1) {
        for (const auto& coalition : coalitions) {
            cache.evaluate_cached(oracle, coalition);
        }
        return;
    }

    std::vector<std::pair<std::size_t, std::exception_ptr>> failures(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            failures[w] = {n, nullptr};
            for (std::size_t i = static_cast<std::size_t>(w); i < n;
                 i += static_cast<std::size_t>(workers)) {
                try {
                    cache.evaluate_cached(oracle, coalitions[i]);
                } catch (...) {
                    failures[w] = {i, std::current_exception()};
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

std::vector<double> weights_for_population(int population) {
    std::vector<double> weights(static_cast<std::size_t>(population));
    for (int s = 0; s < population; ++s) {
        weights[static_cast<std::size_t>(s)] = shapley_weight(s, population);
    }
    return weights;
}

} // namespace

shapley_report exact_shapley(value_oracle& oracle, int layer_count,
                             const shapley_options& options) {
    if (layer_count < 1 || layer_count > layer_set::max_population) {
        throw invalid_parameter_error("exact_shapley: layer count must be in 1..64");
    }
    if (layer_count > options.exact_ceiling) {
        throw invalid_parameter_error(
            "exact_shapley: T=" + std::to_string(layer_count) + " exceeds the exact-mode ceiling " +
            std::to_string(options.exact_ceiling) + " (2^T coalition evaluations); use swsv");
    }

    const std::uint64_t coalition_count = std::uint64_t{1} << layer_count;
    std::vector<layer_set> requests;
    requests.reserve(coalition_count);
    for (std::uint64_t mask = 0; mask < coalition_count; ++mask) {
        requests.emplace_back(layer_count, mask);
    }

    coalition_cache cache;
    warm_cache(cache, oracle, requests, options.threads);

    std::vector<double> values(coalition_count);
    for (std::uint64_t mask = 0; mask < coalition_count; ++mask) {
        values[mask] = cache.evaluate_cached(oracle, requests[mask]);
    }

    const std::vector<double> weights = weights_for_population(layer_count);
    shapley_report report;
    report.layer_count = layer_count;
    report.estimator = estimator_kind::exact;
    report.window_size = layer_count;
    report.contributions.assign(static_cast<std::size_t>(layer_count), 0.0);
    for (int t = 1; t <= layer_count; ++t) {
        const std::uint64_t bit = std::uint64_t{1} << (t - 1);
        double phi = 0.0;
        // Ascending canonical encoding fixes the floating summation order.
        for (std::uint64_t mask = 0; mask < coalition_count; ++mask) {
            if (mask & bit) continue;
            const int s = std::popcount(mask);
            phi += weights[static_cast<std::size_t>(s)] * (values[mask | bit] - values[mask]);
        }
        report.contributions[static_cast<std::size_t>(t - 1)] = phi;
    }
    report.oracle_evaluations = cache.misses();
    report.cache_hits = cache.hits();
    report.subset_enumerations_per_layer = std::uint64_t{1} << (layer_count - 1);
    return report;
}

shapley_report swsv(value_oracle& oracle, int layer_count, int window_size,
                    const shapley_options& options) {
    // Validates window_size and layer_count up front.
    window_for_layer(1, layer_count, window_size);

    struct layer_plan {
        std::uint64_t outside_bits = 0;           // T_t, layers held active
        std::uint64_t target_bit = 0;             // the layer under evaluation
        std::vector<std::uint64_t> member_bits;   // window members except t, ascending
    };

    const std::uint64_t subsets_per_layer = std::uint64_t{1} << (window_size - 1);
    std::vector<layer_plan> plans(static_cast<std::size_t>(layer_count));

    coalition_cache cache;
    std::vector<layer_set> unique_requests;
    unique_requests.reserve(static_cast<std::size_t>(layer_count) * subsets_per_layer);
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(unique_requests.capacity() * 2);

    // Dedupe in first-appearance order so the evaluation plan is deterministic.
    auto push_request = [&](std::uint64_t bits) {
        if (seen.insert(bits).second) {
            unique_requests.emplace_back(layer_count, bits);
        }
    };

    for (int t = 1; t <= layer_count; ++t) {
        const layer_set window = window_for_layer(t, layer_count, window_size);
        layer_plan& plan = plans[static_cast<std::size_t>(t - 1)];
        plan.outside_bits = window.complement().bits();
        plan.target_bit = std::uint64_t{1} << (t - 1);
        for (int i = 1; i <= layer_count; ++i) {
            if (i != t && window.contains(i)) {
                plan.member_bits.push_back(std::uint64_t{1} << (i - 1));
            }
        }
        // Algorithm order: the coalition including t first, then the one
        // without it, subsets in ascending canonical order.
        for (std::uint64_t subset = 0; subset < subsets_per_layer; ++subset) {
            std::uint64_t inside = 0;
            for (std::size_t j = 0; j < plan.member_bits.size(); ++j) {
                if (subset & (std::uint64_t{1} << j)) inside |= plan.member_bits[j];
            }
            const std::uint64_t base = inside | plan.outside_bits;
            push_request(base | plan.target_bit);
            push_request(base);
        }
    }

    warm_cache(cache, oracle, unique_requests, options.threads);

    const std::vector<double> weights = weights_for_population(window_size);
    shapley_report report;
    report.layer_count = layer_count;
    report.estimator = estimator_kind::windowed;
    report.window_size = window_size;
    report.contributions.assign(static_cast<std::size_t>(layer_count), 0.0);
    for (int t = 1; t <= layer_count; ++t) {
        const layer_plan& plan = plans[static_cast<std::size_t>(t - 1)];
        double phi = 0.0;
        for (std::uint64_t subset = 0; subset < subsets_per_layer; ++subset) {
            std::uint64_t inside = 0;
            for (std::size_t j = 0; j < plan.member_bits.size(); ++j) {
                if (subset & (std::uint64_t{1} << j)) inside |= plan.member_bits[j];
            }
            const std::uint64_t base = inside | plan.outside_bits;
            const double with_t =
                cache.evaluate_cached(oracle, layer_set(layer_count, base | plan.target_bit));
            const double without_t = cache.evaluate_cached(oracle, layer_set(layer_count, base));
            const int s = std::popcount(subset);
            phi += weights[static_cast<std::size_t>(s)] * (with_t - without_t);
        }
        report.contributions[static_cast<std::size_t>(t - 1)] = phi;
    }
    report.oracle_evaluations = cache.misses();
    report.cache_hits = cache.hits();
    report.subset_enumerations_per_layer = subsets_per_layer;
    return report;
}

std::string shapley_report::to_json() const {
    nlohmann::ordered_json doc;
    doc["T"] = layer_count;
    doc["estimator"] = estimator == estimator_kind::exact ? "exact" : "windowed";
    doc["window_size"] = window_size;
    doc["oracle_evaluations"] = oracle_evaluations;
    doc["contributions"] = contributions;
    return doc.dump(2) + "\n";
}

shapley_report shapley_report::from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw invalid_input_error(std::string("shapley report: invalid JSON: ") + e.what());
    }
    shapley_report report;
    try {
        report.layer_count = doc.at("T").get<int>();
        const std::string kind = doc.at("estimator").get<std::string>();
        if (kind == "exact") {
            report.estimator = estimator_kind::exact;
        } else if (kind == "windowed") {
            report.estimator = estimator_kind::windowed;
        } else {
            throw invalid_input_error("shapley report: unknown estimator '" + kind + "'");
        }
        report.window_size = doc.at("window_size").get<int>();
        report.oracle_evaluations = doc.at("oracle_evaluations").get<std::uint64_t>();
        report.contributions = doc.at("contributions").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw invalid_input_error(std::string("shapley report: missing or mistyped field: ") +
                                  e.what());
    }
    if (report.layer_count < 1 ||
        report.contributions.size() != static_cast<std::size_t>(report.layer_count)) {
        throw invalid_input_error("shapley report: contributions length does not match T");
    }
    return report;
}

} // namespace shapprune
