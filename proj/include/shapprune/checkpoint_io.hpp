#pragma once

#include <string>

#include "shapprune/model.hpp"

namespace shapprune {

// Binary checkpoint layout, all integers and floats little-endian:
//   bytes 0..5   magic "SVNUP1"
//   u32          format version (currently 1)
//   u32 x 6      vocab_size, d_model, n_heads, n_layers, ffn_hidden, max_seq_len
//   u64          seed
//   f32 payload  embedding; per layer q, k, v, o, gate, up, down, attn_gain,
//                ffn_gain; final gain; head — each matrix row-major
// Save/load round-trips bit-exactly. Malformed files raise format_error
// carrying the byte offset of the violation.
void save_checkpoint(const model_checkpoint& m, const std::string& path);
model_checkpoint load_checkpoint(const std::string& path);

} // namespace shapprune
