#include "shapprune/calibration.hpp"

#include <fstream>

#include "shapprune/errors.hpp"
#include "shapprune/rng.hpp"

namespace shapprune {

std::vector<std::uint8_t> read_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw invalid_input_error("corpus: cannot open " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.empty()) {
        throw invalid_input_error("corpus: " + path + " is empty");
    }
    return bytes;
}

calibration_batch make_calibration(const std::vector<std::uint8_t>& corpus, int count,
                                   int length, std::uint64_t seed, const std::string& source) {
    if (count < 1) {
        throw invalid_parameter_error("calibration: segment count must be >= 1");
    }
    if (length < 2) {
        throw invalid_parameter_error(
            "calibration: segment length must be >= 2 (one next-token prediction)");
    }
    if (corpus.size() < static_cast<std::size_t>(length)) {
        throw invalid_input_error("calibration: corpus of " + std::to_string(corpus.size()) +
                                  " bytes is shorter than one segment of " +
                                  std::to_string(length));
    }

    deterministic_rng rng(seed);
    const std::uint64_t max_start = static_cast<std::uint64_t>(corpus.size()) -
                                    static_cast<std::uint64_t>(length) + 1;

    calibration_batch batch;
    batch.source = source;
    batch.seed = seed;
    batch.sequences.reserve(static_cast<std::size_t>(count));
    for (int s = 0; s < count; ++s) {
        const std::uint64_t start = rng.next_below(max_start);
        std::vector<std::int32_t> tokens(static_cast<std::size_t>(length));
        for (int i = 0; i < length; ++i) {
            tokens[static_cast<std::size_t>(i)] =
                static_cast<std::int32_t>(corpus[start + static_cast<std::uint64_t>(i)]);
        }
        batch.sequences.push_back(std::move(tokens));
    }
    return batch;
}

calibration_batch make_held_out(const std::vector<std::uint8_t>& corpus, double fraction,
                                int count, int length, const std::string& source) {
    if (count < 1 || length < 2) {
        throw invalid_parameter_error("held-out: need count >= 1 and length >= 2");
    }
    if (fraction <= 0.0 || fraction > 0.5) {
        throw invalid_parameter_error("held-out: fraction must be in (0, 0.5]");
    }
    const std::size_t tail = static_cast<std::size_t>(fraction * static_cast<double>(corpus.size()));
    const std::size_t start = corpus.size() - tail;

    calibration_batch batch;
    batch.source = source;
    std::size_t cursor = start;
    while (cursor + static_cast<std::size_t>(length) <= corpus.size() &&
           batch.sequences.size() < static_cast<std::size_t>(count)) {
        std::vector<std::int32_t> tokens(static_cast<std::size_t>(length));
        for (int i = 0; i < length; ++i) {
            tokens[static_cast<std::size_t>(i)] =
                static_cast<std::int32_t>(corpus[cursor + static_cast<std::size_t>(i)]);
        }
        batch.sequences.push_back(std::move(tokens));
        cursor += static_cast<std::size_t>(length);
    }
    if (batch.sequences.empty()) {
        throw invalid_input_error("held-out: corpus tail is shorter than one window");
    }
    return batch;
}

} // namespace shapprune
