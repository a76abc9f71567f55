// Emits a deterministic synthetic English-like corpus for training and
// evaluating the bundled byte-level model. The committed data/corpus.txt is
// the seed-42 output of this program; regenerate it with:
//   gen_corpus --out data/corpus.txt --bytes 1048576 --seed 42

#include <cstdint>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace {

// Frequency-skewed vocabulary: earlier entries are drawn more often.
const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> words = {
        "the", "of", "and", "to", "a", "in", "that", "it", "was", "for",
        "on", "with", "as", "at", "by", "from", "this", "had", "not", "but",
        "what", "all", "were", "when", "there", "can", "an", "which", "their",
        "said", "if", "will", "each", "about", "how", "up", "out", "them",
        "then", "she", "many", "some", "would", "other", "into", "has", "more",
        "two", "like", "him", "see", "time", "could", "no", "make", "than",
        "first", "been", "its", "who", "now", "people", "my", "made", "over",
        "did", "down", "only", "way", "find", "use", "may", "water", "long",
        "little", "very", "after", "word", "called", "just", "where", "most",
        "know", "get", "through", "back", "much", "before", "go", "good",
        "new", "write", "our", "me", "man", "too", "any", "day", "same",
        "right", "look", "think", "also", "around", "another", "came", "come",
        "work", "three", "must", "because", "does", "part", "even", "place",
        "well", "such", "here", "take", "why", "help", "put", "different",
        "away", "again", "off", "went", "old", "number", "great", "tell",
        "men", "say", "small", "every", "found", "still", "between", "name",
        "should", "home", "big", "give", "air", "line", "set", "own", "under",
        "read", "last", "never", "us", "left", "end", "along", "while",
        "might", "next", "sound", "below", "saw", "something", "thought",
        "both", "few", "those", "always", "looked", "show", "large", "often",
        "together", "asked", "house", "world", "going", "want", "school",
        "important", "until", "form", "food", "keep", "children", "feet",
        "land", "side", "without", "boy", "once", "animal", "life", "enough",
        "took", "four", "head", "above", "kind", "began", "almost", "live",
        "page", "got", "earth", "need", "far", "hand", "high", "year",
        "mother", "light", "country", "father", "let", "night", "picture",
        "being", "study", "second", "soon", "story", "since", "white", "ever",
        "paper", "hard", "near", "sentence", "better", "best", "across",
        "during", "today", "however", "sure", "knew", "trying", "young",
        "sun", "thing", "whole", "hear", "example", "heard", "several",
        "change", "answer", "room", "sea", "against", "top", "turned",
        "learn", "point", "city", "play", "toward", "five", "himself",
        "usually", "money", "seen", "car", "morning", "given", "order",
        "red", "door", "voice", "close", "wind", "question", "tree",
    };
    return words;
}

class babbler {
public:
    explicit babbler(std::uint64_t seed) : rng_(seed) {}

    std::string paragraph() {
        std::string out;
        const int sentences = 3 + next_below(5);
        for (int s = 0; s < sentences; ++s) {
            if (s > 0) out += ' ';
            out += sentence();
        }
        out += '\n';
        return out;
    }

private:
    // Modulo reduction is biased but deterministic across platforms, which is
    // what matters for a regenerable fixture.
    int next_below(int n) { return static_cast<int>(rng_() % static_cast<std::uint64_t>(n)); }

    const std::string& pick_word() {
        const auto& words = vocabulary();
        // Skew toward the head of the list: min of two draws.
        const int a = next_below(static_cast<int>(words.size()));
        const int b = next_below(static_cast<int>(words.size()));
        return words[static_cast<std::size_t>(std::min(a, b))];
    }

    std::string sentence() {
        std::string out;
        const int length = 6 + next_below(10);
        const int comma_at = length > 8 ? 3 + next_below(length - 5) : -1;
        for (int w = 0; w < length; ++w) {
            std::string word = pick_word();
            if (w == 0) word[0] = static_cast<char>(std::toupper(word[0]));
            if (w > 0) out += ' ';
            out += word;
            if (w == comma_at) out += ',';
        }
        out += '.';
        return out;
    }

    std::mt19937_64 rng_;
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deterministic synthetic English-like corpus generator"};
    std::string out_path;
    std::uint64_t target_bytes = 1 << 20;
    std::uint64_t seed = 42;
    app.add_option("--out", out_path, "Output file")->required();
    app.add_option("--bytes", target_bytes, "Minimum size in bytes");
    app.add_option("--seed", seed, "RNG seed");
    CLI11_PARSE(app, argc, argv);

    std::ofstream out(out_path, std::ios::binary);
    if (!out) {
        std::cerr << "cannot open " << out_path << " for writing\n";
        return 3;
    }

    babbler gen(seed);
    std::uint64_t written = 0;
    while (written < target_bytes) {
        const std::string p = gen.paragraph();
        out << p;
        written += p.size();
    }
    if (!out.flush()) {
        std::cerr << "write failed on " << out_path << "\n";
        return 3;
    }
    std::cout << "wrote " << written << " bytes to " << out_path << "\n";
    return 0;
}
