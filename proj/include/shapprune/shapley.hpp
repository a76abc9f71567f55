#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "shapprune/layer_set.hpp"

namespace shapprune {

// Coalition value function nu. Implementations must return the same value for
// the same coalition for the lifetime of the instance, return exactly 0 for
// the empty coalition, and tolerate concurrent calls.
class value_oracle {
public:
    virtual ~value_oracle() = default;

    // nu(coalition), >= 0.
    virtual double value(const layer_set& coalition) = 0;

    // Number of evaluations actually performed (implementations may exempt
    // short-circuited cases such as the empty coalition).
    virtual std::uint64_t evaluation_count() const = 0;
};

// Thrown when an oracle fails; carries the coalition that was being evaluated.
class oracle_failure : public std::runtime_error {
public:
    oracle_failure(const layer_set& coalition, const std::string& reason)
        : std::runtime_error("oracle failed on coalition " + coalition.to_string() + ": " + reason),
          coalition_(coalition) {}

    const layer_set& coalition() const { return coalition_; }

private:
    layer_set coalition_;
};

// Memoizes coalition values so each coalition reaches the oracle at most once
// per run. Keys are the canonical bit encodings of layer_set, so hit/miss
// counts are stable across runs. Safe for concurrent use: a coalition being
// evaluated on one thread is waited on by the others, never re-evaluated.
class coalition_cache {
public:
    coalition_cache() = default;

    // Cached value if present; otherwise evaluates the oracle once, stores the
    // result, and returns it. On oracle failure no entry is stored.
    double evaluate_cached(value_oracle& oracle, const layer_set& coalition);

    bool contains(const layer_set& coalition) const;

    std::uint64_t hits() const { return hits_.load(); }
    std::uint64_t misses() const { return misses_.load(); }
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::condition_variable ready_;
    std::unordered_map<std::uint64_t, double> values_;
    std::unordered_set<std::uint64_t> in_flight_;
    std::atomic<std::uint64_t> hits_{0};
    std::atomic<std::uint64_t> misses_{0};
};

enum class estimator_kind { exact, windowed };

// Per-layer contribution estimates plus estimator metadata.
struct shapley_report {
    int layer_count = 0;
    estimator_kind estimator = estimator_kind::exact;
    int window_size = 0;                   // N for windowed, T for exact
    std::uint64_t oracle_evaluations = 0;  // distinct coalitions evaluated
    std::vector<double> contributions;     // size layer_count

    // Not serialized; exposed for budget accounting.
    std::uint64_t cache_hits = 0;
    std::uint64_t subset_enumerations_per_layer = 0;

    std::string to_json() const;
    static shapley_report from_json(const std::string& text);
};

struct shapley_options {
    int threads = 1;           // parallelism for coalition evaluation
    int exact_ceiling = 20;    // refuse exact enumeration beyond this T
};

// Normalized Shapley kernel s!*(n-s-1)!/n!, exact via 1/(n*C(n-1,s)) for
// n <= 64, log-gamma beyond. Requires 0 <= s <= n-1.
double shapley_weight(int coalition_size, int population);

// C(n, k) in exact 64-bit arithmetic; requires the result to fit.
std::uint64_t binomial_u64(int n, int k);

// The contiguous run of window_size layers containing layer t, centered on t
// when possible and shifted inward at the boundaries so it always holds
// exactly window_size layers. window_size must be odd and <= layer_count.
layer_set window_for_layer(int layer, int layer_count, int window_size);

// Exact Shapley values over all 2^T coalitions.
shapley_report exact_shapley(value_oracle& oracle, int layer_count,
                             const shapley_options& options = {});

// Sliding-window approximation: each layer's coalition enumeration is
// restricted to its window, with every out-of-window layer held active.
// window_size = layer_count reproduces exact_shapley term for term.
shapley_report swsv(value_oracle& oracle, int layer_count, int window_size,
                    const shapley_options& options = {});

} // namespace shapprune
