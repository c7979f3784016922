#include "gustcast/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace gustcast::ad {

namespace {

constexpr char kMagic[6] = {'G', 'C', 'K', 'P', 'T', '\n'};

template <typename U>
void write_le(std::ostream& os, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(U)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    os.write(bytes.data(), sizeof(U));
  } else {
    os.write(reinterpret_cast<const char*>(&value), sizeof(U));
  }
}

template <typename U>
U read_le(std::istream& is) {
  std::array<char, sizeof(U)> bytes;
  is.read(bytes.data(), sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, double> ? 0 : 1;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const StateViews<T>& views) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(os, kCheckpointVersion);
  write_le<std::uint8_t>(os, dtype_code<T>());
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(views.size()));
  for (const auto& v : views) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.name.size()));
    os.write(v.name.data(), static_cast<std::streamsize>(v.name.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.shape.size()));
    for (std::int64_t d : v.shape) write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    for (T x : v.data) write_le<T>(os, x);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, const StateViews<T>& views) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  const auto version = read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto dtype = read_le<std::uint8_t>(is);
  if (dtype != dtype_code<T>())
    throw std::runtime_error("checkpoint: dtype mismatch in " + path.string());
  const auto count = read_le<std::uint64_t>(is);

  std::map<std::string, const NamedView<T>*> by_name;
  for (const auto& v : views) by_name[v.name] = &v;
  std::size_t filled = 0;

  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = read_le<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = read_le<std::uint32_t>(is);
    Shape shape(rank);
    std::int64_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::int64_t>(read_le<std::uint64_t>(is));
      numel *= d;
    }
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: unexpected entry '" + name + "' in " + path.string());
    const NamedView<T>& view = *it->second;
    if (view.shape != shape)
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " + shape_str(shape) +
                               " vs model " + shape_str(view.shape));
    for (std::int64_t i = 0; i < numel; ++i) view.data[static_cast<std::size_t>(i)] = read_le<T>(is);
    ++filled;
    if (!is) throw std::runtime_error("checkpoint: truncated file " + path.string());
  }
  if (filled != views.size())
    throw std::runtime_error("checkpoint: file " + path.string() + " holds " + std::to_string(filled) +
                             " of " + std::to_string(views.size()) + " model arrays");
}

template void save_checkpoint(const std::filesystem::path&, const StateViews<float>&);
template void save_checkpoint(const std::filesystem::path&, const StateViews<double>&);
template void load_checkpoint(const std::filesystem::path&, const StateViews<float>&);
template void load_checkpoint(const std::filesystem::path&, const StateViews<double>&);

}  // namespace gustcast::ad
