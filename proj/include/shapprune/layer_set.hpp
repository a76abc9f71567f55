#pragma once

#include <bit>
#include <cstdint>
#include <string>

#include "shapprune/errors.hpp"

namespace shapprune {

// A coalition of transformer layers: one bit per layer index in 1..T.
// Bit (i-1) of `bits` holds layer i, so the raw bit pattern doubles as the
// canonical little-endian-by-layer-index encoding used for cache keys and
// for the fixed subset enumeration order.
class layer_set {
public:
    static constexpr int max_population = 64;

    layer_set() = default;

    explicit layer_set(int population, std::uint64_t bits = 0)
        : population_(check_population(population)), bits_(bits) {
        if (population < max_population && (bits >> population) != 0) {
            throw invalid_parameter_error("layer_set: bits set beyond population " +
                                          std::to_string(population));
        }
    }

    static layer_set empty(int population) { return layer_set(population); }

    static layer_set full(int population) {
        check_population(population);
        const std::uint64_t bits =
            population == max_population ? ~std::uint64_t{0} : (std::uint64_t{1} << population) - 1;
        return layer_set(population, bits);
    }

    static layer_set single(int population, int layer) {
        return layer_set::empty(population).with(layer);
    }

    int population() const { return population_; }
    std::uint64_t bits() const { return bits_; }
    int count() const { return std::popcount(bits_); }
    bool is_empty() const { return bits_ == 0; }
    bool is_full() const { return bits_ == full(population_).bits_; }

    bool contains(int layer) const {
        check_layer(layer);
        return (bits_ >> (layer - 1)) & 1u;
    }

    layer_set with(int layer) const {
        check_layer(layer);
        return layer_set(population_, bits_ | (std::uint64_t{1} << (layer - 1)));
    }

    layer_set without(int layer) const {
        check_layer(layer);
        return layer_set(population_, bits_ & ~(std::uint64_t{1} << (layer - 1)));
    }

    layer_set union_with(const layer_set& other) const {
        check_same_population(other);
        return layer_set(population_, bits_ | other.bits_);
    }

    layer_set intersect(const layer_set& other) const {
        check_same_population(other);
        return layer_set(population_, bits_ & other.bits_);
    }

    layer_set difference(const layer_set& other) const {
        check_same_population(other);
        return layer_set(population_, bits_ & ~other.bits_);
    }

    layer_set complement() const {
        return layer_set(population_, full(population_).bits_ & ~bits_);
    }

    bool operator==(const layer_set& other) const {
        return population_ == other.population_ && bits_ == other.bits_;
    }
    bool operator!=(const layer_set& other) const { return !(*this == other); }

    // "{1,3,4}" ordered by layer index; for diagnostics.
    std::string to_string() const {
        std::string out = "{";
        bool first = true;
        for (int i = 1; i <= population_; ++i) {
            if (!contains(i)) continue;
            if (!first) out += ",";
            out += std::to_string(i);
            first = false;
        }
        out += "}";
        return out;
    }

private:
    static int check_population(int population) {
        if (population < 1 || population > max_population) {
            throw invalid_parameter_error("layer_set: population must be in 1..64, got " +
                                          std::to_string(population));
        }
        return population;
    }

    void check_layer(int layer) const {
        if (layer < 1 || layer > population_) {
            throw invalid_parameter_error("layer_set: layer index " + std::to_string(layer) +
                                          " out of range 1.." + std::to_string(population_));
        }
    }

    void check_same_population(const layer_set& other) const {
        if (population_ != other.population_) {
            throw invalid_parameter_error("layer_set: population mismatch (" +
                                          std::to_string(population_) + " vs " +
                                          std::to_string(other.population_) + ")");
        }
    }

    int population_ = 1;
    std::uint64_t bits_ = 0;
};

} // namespace shapprune
