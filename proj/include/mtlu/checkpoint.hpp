#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "mtlu/errors.hpp"
#include "mtlu/networks.hpp"

// Checkpoint layout, all integers little-endian:
//
//   "MTLUCKPT"                     8 bytes
//   format version                 u16
//   metadata length                u32
//   metadata                       network spec, activation hyperparameters,
//                                  and a manifest of (name, element count)
//                                  for every parameter array and buffer
//   parameter arrays               f32, registry order
//   batchnorm buffers              f64, running mean then running variance
//                                  per batchnorm layer
//   CRC32                          u32 over everything after the version field
namespace mtlu {

inline constexpr char kCheckpointMagic[8] = {'M', 'T', 'L', 'U', 'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class ByteWriter {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    bytes_.insert(bytes_.end(), raw, raw + sizeof(U));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint16_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void append(const std::vector<unsigned char>& more) { bytes_.insert(bytes_.end(), more.begin(), more.end()); }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

// Bounds-checked reader; running past the end is a structural error.
class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  template <class U>
  U get() {
    need(sizeof(U));
    unsigned char raw[sizeof(U)];
    std::memcpy(raw, data_ + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, raw, sizeof(U));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint16_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw CheckpointStructureError("checkpoint metadata ends unexpectedly");
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline void write_spec(ByteWriter& w, const NetworkSpec& s) {
  w.put(static_cast<std::uint8_t>(s.arch));
  w.put(static_cast<std::uint8_t>(s.task));
  w.put(static_cast<std::uint32_t>(s.factor));
  w.put(static_cast<std::uint32_t>(s.depth));
  w.put(static_cast<std::uint32_t>(s.width));
  w.put(static_cast<std::uint32_t>(s.channels));
  w.put(static_cast<std::uint32_t>(s.kernel));
  w.put(static_cast<std::uint8_t>(s.bicubic_skip));
  w.put(static_cast<std::uint8_t>(s.denoise_target));
  const ActivationSpec& a = s.af;
  w.put(static_cast<std::uint8_t>(a.kind));
  w.put(static_cast<std::uint32_t>(a.bins));
  w.put(a.bin_width);
  w.put(static_cast<std::uint8_t>(a.left_edge.has_value()));
  w.put(a.left_edge.value_or(0.0));
  w.put(static_cast<std::uint8_t>(a.shared));
  w.put(static_cast<std::uint8_t>(a.grad_norm));
  w.put(static_cast<std::uint32_t>(a.apl_kernels));
  w.put(static_cast<std::uint32_t>(a.plf_segments));
  w.put(a.plf_interval);
  w.put(a.prelu_init);
}

template <class E>
E checked_enum(std::uint8_t v, std::uint8_t count, const char* what) {
  if (v >= count) throw CheckpointStructureError(std::string("checkpoint has an invalid ") + what);
  return static_cast<E>(v);
}

inline NetworkSpec read_spec(ByteReader& r) {
  NetworkSpec s;
  s.arch = checked_enum<Architecture>(r.get<std::uint8_t>(), 3, "architecture");
  s.task = checked_enum<Task>(r.get<std::uint8_t>(), 2, "task");
  s.factor = static_cast<int>(r.get<std::uint32_t>());
  s.depth = static_cast<int>(r.get<std::uint32_t>());
  s.width = static_cast<int>(r.get<std::uint32_t>());
  s.channels = static_cast<int>(r.get<std::uint32_t>());
  s.kernel = static_cast<int>(r.get<std::uint32_t>());
  s.bicubic_skip = r.get<std::uint8_t>() != 0;
  s.denoise_target = checked_enum<DenoiseTarget>(r.get<std::uint8_t>(), 2, "denoise target");
  ActivationSpec& a = s.af;
  a.kind = checked_enum<ActivationKind>(r.get<std::uint8_t>(), 6, "activation kind");
  a.bins = static_cast<int>(r.get<std::uint32_t>());
  a.bin_width = r.get<double>();
  const bool has_left = r.get<std::uint8_t>() != 0;
  const double left = r.get<double>();
  if (has_left) a.left_edge = left;
  a.shared = r.get<std::uint8_t>() != 0;
  a.grad_norm = checked_enum<GradNormalization>(r.get<std::uint8_t>(), 3, "gradient normalization");
  a.apl_kernels = static_cast<int>(r.get<std::uint32_t>());
  a.plf_segments = static_cast<int>(r.get<std::uint32_t>());
  a.plf_interval = r.get<double>();
  a.prelu_init = r.get<double>();
  return s;
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

template <class T>
std::vector<unsigned char> serialize_checkpoint(const Network<T>& net) {
  detail::ByteWriter meta;
  detail::write_spec(meta, net.spec());
  const auto& reg = net.registry();
  const auto bns = net.batchnorms();
  meta.put(static_cast<std::uint32_t>(reg.size()));
  for (const auto& g : reg) {
    meta.put_string(g.name);
    meta.put(static_cast<std::uint64_t>(g.tensor->size()));
  }
  meta.put(static_cast<std::uint32_t>(bns.size()));
  for (const auto* bn : bns) meta.put(static_cast<std::uint64_t>(bn->running_mean.size()));

  detail::ByteWriter body;
  body.put(static_cast<std::uint32_t>(meta.bytes().size()));
  body.append(meta.bytes());
  for (const auto& g : reg)
    for (T v : g.tensor->data()) body.put(static_cast<float>(v));
  for (const auto* bn : bns) {
    for (double v : bn->running_mean) body.put(v);
    for (double v : bn->running_var) body.put(v);
  }

  detail::ByteWriter file;
  for (char c : kCheckpointMagic) file.put(static_cast<std::uint8_t>(c));
  file.put(kCheckpointVersion);
  file.append(body.bytes());
  file.put(detail::crc32_of(body.bytes().data(), body.bytes().size()));
  return std::move(file.bytes());
}

template <class T>
Network<T> deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  constexpr std::size_t kHeader = sizeof(kCheckpointMagic) + sizeof(std::uint16_t);
  if (bytes.size() < kHeader) throw CheckpointTruncatedError("checkpoint is truncated (no header)");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointStructureError("not a checkpoint (bad magic bytes)");
  detail::ByteReader head(bytes.data() + sizeof(kCheckpointMagic), sizeof(std::uint16_t));
  const auto version = head.get<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) +
                                 " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  if (bytes.size() < kHeader + 2 * sizeof(std::uint32_t))
    throw CheckpointTruncatedError("checkpoint is truncated (no payload)");

  const unsigned char* body = bytes.data() + kHeader;
  const std::size_t body_size = bytes.size() - kHeader - sizeof(std::uint32_t);
  detail::ByteReader tail(body + body_size, sizeof(std::uint32_t));
  const auto stored = tail.get<std::uint32_t>();
  if (detail::crc32_of(body, body_size) != stored)
    throw CheckpointChecksumError("checkpoint checksum mismatch (file corrupted or truncated)");

  detail::ByteReader r(body, body_size);
  const auto meta_len = r.get<std::uint32_t>();
  if (meta_len > r.remaining()) throw CheckpointStructureError("checkpoint metadata length is out of range");
  detail::ByteReader meta(body + r.position(), meta_len);
  const NetworkSpec spec = detail::read_spec(meta);

  Rng rng(0);
  std::optional<Network<T>> built;
  try {
    built.emplace(spec, rng);
  } catch (const Error& e) {
    throw CheckpointStructureError(std::string("checkpoint describes an invalid network: ") + e.what());
  }
  Network<T>& net = *built;

  const auto& reg = net.registry();
  const auto groups = meta.get<std::uint32_t>();
  if (groups != reg.size())
    throw CheckpointStructureError("checkpoint has " + std::to_string(groups) +
                                   " parameter arrays, the network has " + std::to_string(reg.size()));
  for (const auto& g : reg) {
    const std::string name = meta.get_string();
    const auto count = meta.get<std::uint64_t>();
    if (name != g.name || count != g.tensor->size())
      throw CheckpointStructureError("parameter array '" + name + "' (" + std::to_string(count) +
                                     " values) does not match '" + g.name + "' (" +
                                     std::to_string(g.tensor->size()) + " values)");
  }
  auto bns = net.batchnorms();
  const auto nbn = meta.get<std::uint32_t>();
  if (nbn != bns.size()) throw CheckpointStructureError("batchnorm layer count mismatch");
  for (const auto* bn : bns)
    if (meta.get<std::uint64_t>() != bn->running_mean.size())
      throw CheckpointStructureError("batchnorm buffer length mismatch");
  if (meta.remaining() != 0) throw CheckpointStructureError("trailing bytes in checkpoint metadata");

  detail::ByteReader data(body + r.position() + meta_len, r.remaining() - meta_len);
  std::size_t expected = 0;
  for (const auto& g : reg) expected += g.tensor->size() * sizeof(float);
  for (const auto* bn : bns) expected += 2 * bn->running_mean.size() * sizeof(double);
  if (data.remaining() != expected)
    throw CheckpointStructureError("checkpoint payload has " + std::to_string(data.remaining()) +
                                   " bytes, expected " + std::to_string(expected));
  for (const auto& g : reg)
    for (auto& v : g.tensor->data()) v = static_cast<T>(data.get<float>());
  for (auto* bn : bns) {
    for (auto& v : bn->running_mean) v = data.get<double>();
    for (auto& v : bn->running_var) v = data.get<double>();
  }
  return std::move(net);
}

template <class T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

template <class T = float>
Network<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<T>(detail::read_file(path));
}

}  // namespace mtlu
