#include "shapprune/checkpoint_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "shapprune/errors.hpp"

namespace shapprune {

namespace {

constexpr char checkpoint_magic[6] = {'S', 'V', 'N', 'U', 'P', '1'};
constexpr std::uint32_t checkpoint_version = 1;

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559,
              "checkpoint format requires IEEE-754 binary32");

class writer {
public:
    explicit writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) {
            throw invalid_input_error("checkpoint: cannot open " + path + " for writing");
        }
    }

    void bytes(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    }

    void u32(std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(b, 4);
    }

    void u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(b, 8);
    }

    void f32_block(const float* values, std::size_t count) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(values, count * 4);
        } else {
            for (std::size_t i = 0; i < count; ++i) {
                std::uint32_t bits;
                std::memcpy(&bits, &values[i], 4);
                u32(bits);
            }
        }
    }

    void finish(const std::string& path) {
        out_.flush();
        if (!out_) {
            throw invalid_input_error("checkpoint: write to " + path + " failed");
        }
    }

private:
    std::ofstream out_;
};

class reader {
public:
    explicit reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) {
            throw invalid_input_error("checkpoint: cannot open " + path);
        }
    }

    std::uint64_t offset() const { return offset_; }

    void bytes(void* data, std::size_t n, const std::string& what) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw format_error("checkpoint " + path_ + ": truncated while reading " + what,
                               offset_ + static_cast<std::uint64_t>(in_.gcount()));
        }
        offset_ += n;
    }

    std::uint32_t u32(const std::string& what) {
        unsigned char b[4];
        bytes(b, 4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    std::uint64_t u64(const std::string& what) {
        unsigned char b[8];
        bytes(b, 8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    void f32_block(float* values, std::size_t count, const std::string& what) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(values, count * 4, what);
        } else {
            for (std::size_t i = 0; i < count; ++i) {
                const std::uint32_t bits = u32(what);
                std::memcpy(&values[i], &bits, 4);
            }
        }
    }

    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

private:
    std::string path_;
    std::ifstream in_;
    std::uint64_t offset_ = 0;
};

void check_payload_finite(const float* values, std::size_t count, const std::string& what,
                          std::uint64_t block_start_offset) {
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(values[i])) {
            throw format_error("checkpoint: non-finite weight in " + what,
                               block_start_offset + i * 4);
        }
    }
}

} // namespace

void save_checkpoint(const model_checkpoint& m, const std::string& path) {
    m.config.validate();
    writer w(path);
    w.bytes(checkpoint_magic, sizeof(checkpoint_magic));
    w.u32(checkpoint_version);
    w.u32(m.config.vocab_size);
    w.u32(m.config.d_model);
    w.u32(m.config.n_heads);
    w.u32(m.config.n_layers);
    w.u32(m.config.ffn_hidden);
    w.u32(m.config.max_seq_len);
    w.u64(m.config.seed);

    w.f32_block(m.embedding.data.data(), m.embedding.numel());
    for (const auto& l : m.layers) {
        for (int inner = 1; inner <= inner_layer_count; ++inner) {
            const matrix<float>& w_in = l.inner(inner);
            w.f32_block(w_in.data.data(), w_in.numel());
        }
        w.f32_block(l.attn_gain.data(), l.attn_gain.size());
        w.f32_block(l.ffn_gain.data(), l.ffn_gain.size());
    }
    w.f32_block(m.final_gain.data(), m.final_gain.size());
    w.f32_block(m.head.data.data(), m.head.numel());
    w.finish(path);
}

model_checkpoint load_checkpoint(const std::string& path) {
    reader r(path);

    char magic[6];
    r.bytes(magic, sizeof(magic), "magic");
    if (std::memcmp(magic, checkpoint_magic, sizeof(magic)) != 0) {
        throw format_error("checkpoint " + path + ": bad magic, not a model checkpoint", 0);
    }
    const std::uint64_t version_offset = r.offset();
    const std::uint32_t version = r.u32("version");
    if (version != checkpoint_version) {
        throw format_error("checkpoint " + path + ": unsupported format version " +
                               std::to_string(version),
                           version_offset);
    }

    const std::uint64_t config_offset = r.offset();
    model_config cfg;
    cfg.vocab_size = r.u32("vocab_size");
    cfg.d_model = r.u32("d_model");
    cfg.n_heads = r.u32("n_heads");
    cfg.n_layers = r.u32("n_layers");
    cfg.ffn_hidden = r.u32("ffn_hidden");
    cfg.max_seq_len = r.u32("max_seq_len");
    cfg.seed = r.u64("seed");
    try {
        cfg.validate();
    } catch (const invalid_parameter_error& e) {
        throw format_error("checkpoint " + path + ": invalid config: " + e.what(),
                           config_offset);
    }

    model_checkpoint m = model_checkpoint::zeros(cfg);

    auto read_block = [&r](float* values, std::size_t count, const std::string& what) {
        const std::uint64_t start = r.offset();
        r.f32_block(values, count, what);
        check_payload_finite(values, count, what, start);
    };

    read_block(m.embedding.data.data(), m.embedding.numel(), "embedding");
    for (std::size_t t = 0; t < m.layers.size(); ++t) {
        auto& l = m.layers[t];
        const std::string prefix = "layer " + std::to_string(t + 1) + " ";
        for (int inner = 1; inner <= inner_layer_count; ++inner) {
            matrix<float>& w_in = l.inner(inner);
            read_block(w_in.data.data(), w_in.numel(), prefix + inner_layer_name(inner));
        }
        read_block(l.attn_gain.data(), l.attn_gain.size(), prefix + "attention norm gain");
        read_block(l.ffn_gain.data(), l.ffn_gain.size(), prefix + "ffn norm gain");
    }
    read_block(m.final_gain.data(), m.final_gain.size(), "final norm gain");
    read_block(m.head.data.data(), m.head.numel(), "output head");

    if (!r.at_eof()) {
        throw format_error("checkpoint " + path + ": trailing bytes after payload", r.offset());
    }
    return m;
}

} // namespace shapprune
