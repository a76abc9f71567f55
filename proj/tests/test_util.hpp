#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "shapprune/shapley.hpp"

namespace shapprune::testing {

// Wraps a plain function as a value oracle and counts calls. The empty
// coalition is short-circuited to 0 without charging an evaluation, matching
// the perplexity oracle's contract.
class function_oracle : public value_oracle {
public:
    explicit function_oracle(std::function<double(const layer_set&)> fn) : fn_(std::move(fn)) {}

    double value(const layer_set& coalition) override {
        if (coalition.is_empty()) return 0.0;
        calls_.fetch_add(1, std::memory_order_relaxed);
        return fn_(coalition);
    }

    std::uint64_t evaluation_count() const override { return calls_.load(); }

private:
    std::function<double(const layer_set&)> fn_;
    std::atomic<std::uint64_t> calls_{0};
};

// Independent Shapley reference: averages marginal contributions over all n!
// player orderings. O(n! * n) evaluations of fn, so keep n small.
inline std::vector<double> shapley_by_permutations(
    int n, const std::function<double(const layer_set&)>& fn) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 1);

    std::vector<double> sums(static_cast<std::size_t>(n), 0.0);
    std::uint64_t permutations = 0;
    auto eval = [&](const layer_set& s) { return s.is_empty() ? 0.0 : fn(s); };
    do {
        layer_set built = layer_set::empty(n);
        double previous = eval(built);
        for (int player : order) {
            built = built.with(player);
            const double current = eval(built);
            sums[static_cast<std::size_t>(player - 1)] += current - previous;
            previous = current;
        }
        ++permutations;
    } while (std::next_permutation(order.begin(), order.end()));

    for (double& s : sums) s /= static_cast<double>(permutations);
    return sums;
}

// Exact rational on 128-bit integers, just enough for weight identities.
struct rational {
    __int128 num = 0;
    __int128 den = 1;

    static __int128 gcd128(__int128 a, __int128 b) {
        if (a < 0) a = -a;
        if (b < 0) b = -b;
        while (b != 0) {
            const __int128 r = a % b;
            a = b;
            b = r;
        }
        return a;
    }

    rational normalized() const {
        const __int128 g = gcd128(num, den);
        rational r{num / g, den / g};
        if (r.den < 0) {
            r.num = -r.num;
            r.den = -r.den;
        }
        return r;
    }

    rational operator+(const rational& o) const {
        return rational{num * o.den + o.num * den, den * o.den}.normalized();
    }

    bool operator==(const rational& o) const {
        const rational a = normalized();
        const rational b = o.normalized();
        return a.num == b.num && a.den == b.den;
    }
};

} // namespace shapprune::testing
