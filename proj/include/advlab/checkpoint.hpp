#pragma once

#include <filesystem>
#include <string>

#include "advlab/models.hpp"

namespace advlab {

// Binary checkpoint layout (all integers little-endian):
//
//   char[8]   magic "ADVLABCK"
//   u32       format version (1)
//   u32       scalar width in bytes (4 = float32, 8 = float64)
//   u64       architecture length N
//   char[N]   architecture as JSON text
//   u32       parameter count P
//   P times:  u32 name length, name bytes, u32 rank, u64 extents[rank],
//             raw scalars in row-major order
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path);

/// Loads a checkpoint written at either precision, converting to T.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

/// {"input_shape": [...], "num_classes": n, "layers": [{"type": "conv", ...}, ...]}
std::string architecture_json(const std::vector<Layer>& layers, const Shape& input_shape, std::size_t num_classes);

}  // namespace advlab
