#include "kvq/kvt1.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "kvq/errors.hpp"

namespace kvq {
namespace {

static_assert(std::endian::native == std::endian::little, "KVT1 codec assumes a little-endian host");

constexpr std::uint8_t kMagic[4] = {'K', 'V', 'T', '1'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 2 * 8;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_kvt1(const Tensor2D& t) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + t.data().size_bytes());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, 2);
  put<std::uint64_t>(out, t.rows());
  put<std::uint64_t>(out, t.cols());
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.data().data());
  out.insert(out.end(), p, p + t.data().size_bytes());
  return out;
}

Tensor2D decode_kvt1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("KVT1: truncated magic", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("KVT1: bad magic", 0);
  if (bytes.size() < 8) throw FormatError("KVT1: truncated ndim", bytes.size());
  const auto ndim = get<std::uint32_t>(bytes, 4);
  if (ndim != 2) throw FormatError("KVT1: ndim must be 2, got " + std::to_string(ndim), 4);
  if (bytes.size() < kHeaderBytes) throw FormatError("KVT1: truncated dims", bytes.size());
  const auto rows = get<std::uint64_t>(bytes, 8);
  const auto cols = get<std::uint64_t>(bytes, 16);

  constexpr std::uint64_t kMaxElems = std::numeric_limits<std::uint64_t>::max() / sizeof(float);
  if (cols != 0 && rows > kMaxElems / cols) throw FormatError("KVT1: dimension overflow", 8);
  const std::uint64_t payload = rows * cols * sizeof(float);
  const std::uint64_t available = bytes.size() - kHeaderBytes;
  if (available < payload) {
    throw FormatError("KVT1: truncated payload, header declares " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " but only " +
                          std::to_string(available / sizeof(float)) + " floats present",
                      bytes.size());
  }
  if (available > payload) throw FormatError("KVT1: trailing bytes", kHeaderBytes + payload);

  std::vector<float> values(rows * cols);
  std::memcpy(values.data(), bytes.data() + kHeaderBytes, payload);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw FormatError("KVT1: non-finite value", kHeaderBytes + i * sizeof(float));
    }
  }
  return Tensor2D(rows, cols, values);
}

Tensor2D read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_kvt1(bytes);
}

void write_tensor(const std::filesystem::path& path, const Tensor2D& t) {
  const auto bytes = encode_kvt1(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace kvq
