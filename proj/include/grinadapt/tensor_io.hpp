#pragma once

// GRIT tensor files: "GRIT", u32 version (1), u32 ndim, u32 dims[ndim], then
// product(dims) little-endian float32 values in row-major order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "grinadapt/core.hpp"
#include "grinadapt/tiny_model.hpp"

namespace grinadapt::io {

inline constexpr std::array<char, 4> kTensorMagic{'G', 'R', 'I', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t elementCount() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t d) { return a * d; });
  }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

namespace detail {

inline void putU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t getU32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

}  // namespace detail

inline std::string encodeTensor(const Tensor& t) {
  if (t.data.size() != t.elementCount()) throw FormatError("tensor payload does not match its dims");
  std::string out(kTensorMagic.begin(), kTensorMagic.end());
  detail::putU32(out, kTensorVersion);
  detail::putU32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) detail::putU32(out, d);
  out.reserve(out.size() + 4 * t.data.size());
  for (float f : t.data) detail::putU32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline Tensor decodeTensor(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 12 || std::memcmp(p, kTensorMagic.data(), 4) != 0) throw FormatError("not a GRIT tensor (bad magic)");
  if (detail::getU32(p + 4) != kTensorVersion) throw FormatError("unsupported GRIT version");
  const std::uint32_t ndim = detail::getU32(p + 8);
  if (n < 12 + 4ull * ndim) throw FormatError("truncated GRIT header");
  Tensor t;
  for (std::uint32_t i = 0; i < ndim; ++i) t.dims.push_back(detail::getU32(p + 12 + 4 * i));
  const std::size_t offset = 12 + 4ull * ndim, count = t.elementCount();
  if (n - offset != 4 * count) throw FormatError("GRIT payload length does not match dims");
  t.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) t.data[i] = std::bit_cast<float>(detail::getU32(p + offset + 4 * i));
  return t;
}

inline void writeTensor(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  const auto bytes = encodeTensor(t);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed: " + path.string());
}

inline Tensor readTensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decodeTensor(bytes);
}

// Grids travel as [H, W, C], label maps as [H, W].

template <class Tag>
Tensor toTensor(const PixelGrid<Tag>& g) {
  Tensor t{{static_cast<std::uint32_t>(g.height()), static_cast<std::uint32_t>(g.width()),
            static_cast<std::uint32_t>(g.channels())},
           {}};
  t.data.reserve(g.values().size());
  for (double v : g.values()) t.data.push_back(static_cast<float>(v));
  return t;
}

template <class Grid>
Grid gridFromTensor(const Tensor& t) {
  if (t.dims.size() != 3) throw FormatError("expected a [H, W, C] tensor");
  Grid g(t.dims[0], t.dims[1], t.dims[2]);
  for (std::size_t i = 0; i < t.data.size(); ++i) g.values()[i] = t.data[i];
  return g;
}

inline Tensor toTensor(const LabelMap& m) {
  Tensor t{{static_cast<std::uint32_t>(m.height()), static_cast<std::uint32_t>(m.width())}, {}};
  for (auto v : m.values()) t.data.push_back(static_cast<float>(v));
  return t;
}

inline LabelMap labelsFromTensor(const Tensor& t) {
  if (t.dims.size() != 2) throw FormatError("expected a [H, W] label tensor");
  LabelMap m(t.dims[0], t.dims[1]);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    const float v = t.data[i];
    if (!(v >= 0.0f && v < 256.0f) || v != static_cast<float>(static_cast<int>(v)))
      throw FormatError("label tensor holds a non-integer class id");
    m[i] = static_cast<std::uint8_t>(v);
  }
  return m;
}

inline void saveTensor(const ProbabilityMap& map, const std::filesystem::path& path) {
  writeTensor(toTensor(map), path);
}

inline ProbabilityMap loadTensor(const std::filesystem::path& path) {
  return gridFromTensor<ProbabilityMap>(readTensor(path));
}

/// Model checkpoint: [classes, inputChannels * k * k + 1], one row per class, bias last.
inline Tensor toTensor(const TinyModel& m) {
  const std::size_t per = m.weightsPerClass();
  Tensor t{{static_cast<std::uint32_t>(m.classes()), static_cast<std::uint32_t>(per + 1)}, {}};
  for (std::size_t c = 0; c < m.classes(); ++c) {
    for (std::size_t i = 0; i < per; ++i) t.data.push_back(static_cast<float>(m.parameters()[c * per + i]));
    t.data.push_back(static_cast<float>(m.parameters()[m.biasIndex(c)]));
  }
  return t;
}

inline TinyModel modelFromTensor(const Tensor& t, std::size_t inputChannels) {
  if (t.dims.size() != 2 || inputChannels == 0) throw FormatError("expected a [classes, weights + 1] model tensor");
  const std::size_t per = t.dims[1] - 1;
  const auto k = static_cast<std::size_t>(std::lround(std::sqrt(double(per) / double(inputChannels))));
  if (k * k * inputChannels != per) throw FormatError("model tensor width does not match the input channels");
  TinyModel m(inputChannels, k, t.dims[0]);
  for (std::size_t c = 0; c < t.dims[0]; ++c) {
    for (std::size_t i = 0; i < per; ++i) m.parameters()[c * per + i] = t.data[c * (per + 1) + i];
    m.parameters()[m.biasIndex(c)] = t.data[c * (per + 1) + per];
  }
  return m;
}

}  // namespace grinadapt::io
