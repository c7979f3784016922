#pragma once

#include <filesystem>

#include "gustcast/nn.hpp"

namespace gustcast::ad {

// Binary weight container: little-endian, versioned, named arrays with shape
// headers. Layout:
//   magic "GCKPT\n" | u32 version | u8 dtype (0=f64, 1=f32) | u64 count
//   repeated: u32 name_len | name | u32 rank | u64 dims[rank] | payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const StateViews<T>& views);

// Fills every view from the file, matching by name and validating shapes.
// Throws on missing or extra entries.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, const StateViews<T>& views);

extern template void save_checkpoint(const std::filesystem::path&, const StateViews<float>&);
extern template void save_checkpoint(const std::filesystem::path&, const StateViews<double>&);
extern template void load_checkpoint(const std::filesystem::path&, const StateViews<float>&);
extern template void load_checkpoint(const std::filesystem::path&, const StateViews<double>&);

}  // namespace gustcast::ad
