#pragma once

// Binary model checkpoints.
//
// Layout (little-endian host order):
//   "SIMRESCK"            8 bytes
//   version               u32 (1)
//   scalar bytes          u32 (4 float, 8 double)
//   config length, text   u64, bytes (JSON describing how to rebuild the model)
//   array count           u64
//   per array: name length u32, name, rank u32, extents u64 x rank, raw values
//
// Arrays follow visit_state order; loading checks names and shapes.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "simres/errors.hpp"
#include "simres/tensor.hpp"
#include "simres/textio.hpp"

namespace simres {

inline constexpr std::string_view kCheckpointMagic = "SIMRESCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string get_string(std::size_t n) { return std::string(take(n), n); }
  const char* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw DataError(source_ + ": truncated checkpoint");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& source() const { return source_; }

 private:
  std::string bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

struct CheckpointHeader {
  std::uint32_t scalar_bytes = 0;
  std::string config;
};

inline CheckpointHeader read_header(ByteReader& in) {
  if (in.get_string(kCheckpointMagic.size()) != kCheckpointMagic) throw DataError(in.source() + ": not a checkpoint");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw DataError(in.source() + ": unsupported checkpoint version " + std::to_string(version));
  CheckpointHeader h;
  h.scalar_bytes = in.get<std::uint32_t>();
  h.config = in.get_string(static_cast<std::size_t>(in.get<std::uint64_t>()));
  return h;
}

}  // namespace detail

/// Serialises every parameter and running statistic of `model`.
template <typename Model>
void save_checkpoint(const std::filesystem::path& path, Model& model, std::string_view config) {
  using Scalar = typename Model::scalar_type;
  std::string out(kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, sizeof(Scalar));
  detail::put<std::uint64_t>(out, config.size());
  out.append(config);
  std::uint64_t count = 0;
  visit_state(model, [&](const std::string&, const Shape&, std::span<Scalar>, Tensor<Scalar>*) { ++count; });
  detail::put<std::uint64_t>(out, count);
  visit_state(model, [&](const std::string& name, const Shape& shape, std::span<Scalar> data, Tensor<Scalar>*) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t e : shape) detail::put<std::uint64_t>(out, e);
    out.append(reinterpret_cast<const char*>(data.data()), data.size_bytes());
  });
  write_binary_file(path, out);
}

/// The configuration text stored in a checkpoint.
inline std::string read_checkpoint_config(const std::filesystem::path& path) {
  detail::ByteReader in(read_file(path), path.string());
  return detail::read_header(in).config;
}

/// Overwrites the state of an already built `model`; returns the stored
/// configuration text.
template <typename Model>
std::string load_checkpoint(const std::filesystem::path& path, Model& model) {
  using Scalar = typename Model::scalar_type;
  detail::ByteReader in(read_file(path), path.string());
  const auto header = detail::read_header(in);
  if (header.scalar_bytes != sizeof(Scalar)) {
    throw DataError(path.string() + ": checkpoint stores " + std::to_string(header.scalar_bytes) + "-byte scalars, model uses " +
                    std::to_string(sizeof(Scalar)));
  }
  const auto count = in.get<std::uint64_t>();
  std::uint64_t seen = 0;
  visit_state(model, [&](const std::string& name, const Shape& shape, std::span<Scalar> data, Tensor<Scalar>*) {
    if (++seen > count) throw DataError(path.string() + ": checkpoint has fewer arrays than the model");
    const std::string stored = in.get_string(in.get<std::uint32_t>());
    if (stored != name) throw DataError(path.string() + ": expected array " + name + ", found " + stored);
    Shape stored_shape(in.get<std::uint32_t>());
    for (auto& e : stored_shape) e = static_cast<std::size_t>(in.get<std::uint64_t>());
    if (stored_shape != shape) {
      throw DataError(path.string() + ": array " + name + " has shape " + to_string(stored_shape) + ", model expects " + to_string(shape));
    }
    std::memcpy(data.data(), in.take(data.size_bytes()), data.size_bytes());
  });
  if (seen != count || !in.at_end()) throw DataError(path.string() + ": checkpoint has more arrays than the model");
  return header.config;
}

}  // namespace simres
