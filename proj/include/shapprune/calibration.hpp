#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace shapprune {

// Fixed token segments drawn from a corpus, used both for value-function
// evaluation and for Wanda activation-norm collection. Same corpus, count,
// length, and seed always yield the same batch.
struct calibration_batch {
    std::vector<std::vector<std::int32_t>> sequences;  // count entries of fixed length
    std::string source;                                // corpus identifier
    std::uint64_t seed = 0;
};

// Reads a raw byte corpus; throws invalid_input_error if missing or empty.
std::vector<std::uint8_t> read_corpus(const std::string& path);

// Selects `count` random segments of `length` bytes (byte-level tokens).
calibration_batch make_calibration(const std::vector<std::uint8_t>& corpus, int count,
                                   int length, std::uint64_t seed,
                                   const std::string& source = "");

// Up to `count` non-overlapping windows of `length` bytes from the final
// `fraction` of the corpus, left to right. No randomness involved; this is
// the held-out protocol the trainer reports its perplexity on.
calibration_batch make_held_out(const std::vector<std::uint8_t>& corpus, double fraction,
                                int count, int length,
                                const std::string& source = "held-out");

} // namespace shapprune
