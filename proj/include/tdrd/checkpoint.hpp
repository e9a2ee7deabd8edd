#pragma once

#include <filesystem>

#include "tdrd/detector.hpp"

namespace tdrd {

// Single-file model archive (all integers and floats little-endian):
//
//   "TDRDCKPT"                 8-byte magic
//   u32 version                currently 1
//   u64 length, bytes          canonical model.* key=value config text
//   u32 count                  number of parameter arrays, then per array:
//     u32 length, bytes        parameter name (e.g. backbone.stage1.down.weight)
//     i32 n, c, h, w           extents
//     f64 x n*c*h*w            values, row-major NCHW
void save_checkpoint(const std::filesystem::path& path, const Detector& model);

// Rebuilds the model from the stored config and loads every parameter.
// Throws SchemaError when names or extents disagree with the config.
Detector load_checkpoint(const std::filesystem::path& path);

ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace tdrd
