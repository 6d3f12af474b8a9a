#pragma once

// VTW weight files.
//
//   bytes 0..3    magic "VTW1"
//   bytes 4..11   header_len, unsigned 64-bit little-endian
//   next header_len bytes   UTF-8 JSON object:
//       "config":     ViTConfig fields (image_size, patch_size, d_model, n_heads,
//                     n_blocks, d_mlp, n_classes, ln_eps, optional n_registers,
//                     optional tail_mode)
//       "preprocess": {"mean": [r, g, b], "std": [r, g, b]}
//       "<tensor>":   {"dtype": "f32", "shape": [...], "offset": <bytes into data>}
//   remainder     data section, raw little-endian float32 values
//
// Tensor names: patch_embed.{weight,bias}, pos_embed, cls_token,
// register_tokens (only with registers), block{i}.ln1.{gamma,beta},
// block{i}.attn.{wq,wk,wv,wo}.{weight,bias}, block{i}.ln2.{gamma,beta},
// block{i}.mlp.{fc1,fc2}.{weight,bias}, final_ln.{gamma,beta},
// head.{weight,bias} (absent when n_classes == 0).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdam/vit.hpp"

namespace cdam {

inline constexpr char kVtwMagic[4] = {'V', 'T', 'W', '1'};

// Serialises the model; tensors appear in lexicographic name order.
std::vector<std::uint8_t> encode_weights(const ViTModel& model);

// Errc::bad_magic, truncated, bad_header, missing_tensor, shape_mismatch,
// invalid_config (and numeric for non-finite weights).
ViTModel decode_weights(const std::vector<std::uint8_t>& bytes);

void write_weights(const ViTModel& model, const std::filesystem::path& path);
ViTModel load_weights(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace cdam
