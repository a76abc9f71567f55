#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "shapprune/checkpoint_io.hpp"
#include "shapprune/errors.hpp"

using namespace shapprune;

namespace {

struct temp_dir {
    std::filesystem::path path;
    temp_dir() {
        path = std::filesystem::temp_directory_path() /
               ("shapprune-ckpt-" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~temp_dir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

model_config small_config() {
    model_config cfg;
    cfg.vocab_size = 48;
    cfg.d_model = 12;
    cfg.n_heads = 3;
    cfg.n_layers = 3;
    cfg.ffn_hidden = 20;
    cfg.max_seq_len = 24;
    cfg.seed = 99;
    return cfg;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
    temp_dir dir;
    const model_checkpoint m = model_checkpoint::random_init(small_config());
    const std::string path = dir.file("model.bin");
    save_checkpoint(m, path);
    const model_checkpoint back = load_checkpoint(path);

    CHECK(back.config == m.config);
    CHECK(back.embedding.data == m.embedding.data);
    CHECK(back.head.data == m.head.data);
    CHECK(back.final_gain == m.final_gain);
    for (std::size_t t = 0; t < m.layers.size(); ++t) {
        for (int inner = 1; inner <= inner_layer_count; ++inner) {
            CHECK(back.layers[t].inner(inner).data == m.layers[t].inner(inner).data);
        }
        CHECK(back.layers[t].attn_gain == m.layers[t].attn_gain);
        CHECK(back.layers[t].ffn_gain == m.layers[t].ffn_gain);
    }

    // Saving the loaded model reproduces the file byte for byte.
    const std::string path2 = dir.file("model2.bin");
    save_checkpoint(back, path2);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("checkpoint header is laid out as documented") {
    temp_dir dir;
    const model_checkpoint m = model_checkpoint::random_init(small_config());
    const std::string path = dir.file("model.bin");
    save_checkpoint(m, path);
    const std::vector<char> bytes = slurp(path);

    REQUIRE(bytes.size() > 42);
    CHECK(std::string(bytes.data(), 6) == "SVNUP1");
    // version 1, little-endian u32 at offset 6
    CHECK(bytes[6] == 1);
    CHECK(bytes[7] == 0);
    // vocab_size 48 at offset 10
    CHECK(static_cast<unsigned char>(bytes[10]) == 48);

    const std::size_t header = 6 + 4 + 6 * 4 + 8;
    std::size_t payload = m.embedding.numel() + m.head.numel() + m.final_gain.size();
    for (const auto& l : m.layers) {
        for (int inner = 1; inner <= inner_layer_count; ++inner) payload += l.inner(inner).numel();
        payload += l.attn_gain.size() + l.ffn_gain.size();
    }
    CHECK(bytes.size() == header + payload * 4);
}

TEST_CASE("foreign magic is rejected at offset 0") {
    temp_dir dir;
    const std::string path = dir.file("bogus.bin");
    spit(path, {'N', 'O', 'P', 'E', '0', '1', 0, 0, 0, 0});
    try {
        load_checkpoint(path);
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(e.byte_offset() == 0);
    }
}

TEST_CASE("unsupported version is rejected at its offset") {
    temp_dir dir;
    const model_checkpoint m = model_checkpoint::random_init(small_config());
    const std::string path = dir.file("model.bin");
    save_checkpoint(m, path);
    std::vector<char> bytes = slurp(path);
    bytes[6] = 9;
    spit(path, bytes);
    try {
        load_checkpoint(path);
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(e.byte_offset() == 6);
    }
}

TEST_CASE("truncated files report the failure offset") {
    temp_dir dir;
    const model_checkpoint m = model_checkpoint::random_init(small_config());
    const std::string path = dir.file("model.bin");
    save_checkpoint(m, path);
    std::vector<char> bytes = slurp(path);

    // Truncate in the middle of the payload.
    const std::size_t cut = bytes.size() / 2;
    bytes.resize(cut);
    spit(path, bytes);
    try {
        load_checkpoint(path);
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(e.byte_offset() == cut);
    }

    // Truncate inside the header.
    bytes.resize(8);
    spit(path, bytes);
    try {
        load_checkpoint(path);
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(e.byte_offset() == 8);
    }
}

TEST_CASE("trailing bytes after the payload are rejected") {
    temp_dir dir;
    const model_checkpoint m = model_checkpoint::random_init(small_config());
    const std::string path = dir.file("model.bin");
    save_checkpoint(m, path);
    std::vector<char> bytes = slurp(path);
    const std::size_t clean_size = bytes.size();
    bytes.push_back(0);
    spit(path, bytes);
    try {
        load_checkpoint(path);
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(e.byte_offset() == clean_size);
    }
}

TEST_CASE("an invalid stored config is a format error, not a crash") {
    temp_dir dir;
    const model_checkpoint m = model_checkpoint::random_init(small_config());
    const std::string path = dir.file("model.bin");
    save_checkpoint(m, path);
    std::vector<char> bytes = slurp(path);
    // d_model at offset 14: make it indivisible by n_heads.
    bytes[14] = 13;
    spit(path, bytes);
    try {
        load_checkpoint(path);
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(e.byte_offset() == 10);  // config block start
    }
}

TEST_CASE("non-finite payload values are rejected with their offset") {
    temp_dir dir;
    const model_checkpoint m = model_checkpoint::random_init(small_config());
    const std::string path = dir.file("model.bin");
    save_checkpoint(m, path);
    std::vector<char> bytes = slurp(path);
    const std::size_t header = 6 + 4 + 6 * 4 + 8;
    // Overwrite the third embedding float with +inf (0x7f800000 LE).
    const std::size_t target = header + 2 * 4;
    bytes[target + 0] = 0;
    bytes[target + 1] = 0;
    bytes[target + 2] = static_cast<char>(0x80);
    bytes[target + 3] = 0x7f;
    spit(path, bytes);
    try {
        load_checkpoint(path);
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(e.byte_offset() == target);
    }
}

TEST_CASE("missing checkpoint file raises an input error") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/model.bin"), invalid_input_error);
}
