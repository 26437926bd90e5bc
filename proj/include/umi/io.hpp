#pragma once

// On-disk formats. All multi-byte fields are little-endian except the PGM
// payload, which is big-endian as the PGM format requires.
//
// Dataset (UMI1), 52-byte header then payload:
//   char[4] "UMI1" | u32 version | u32 nz | u32 nx | u32 nt | u64 config_hash
//   | f64 frame_rate | f64 center_frequency | f64 prf
//   payload: f32 re, f32 im per sample, frame-major, axial fastest within a frame.
//
// Model (U2M1), 40-byte header then K * (1 + d) f64:
//   char[4] "U2M1" | u32 version | u32 K | u32 d | u64 trained_pixels | u64 config_hash
//   | f64 epsilon
//   per layer: theta_lambda, theta_w[0..d-1] (unconstrained values).

#include "doppler_metrics.hpp"
#include "tensor_core.hpp"
#include "unfolded_net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace umi {

static_assert(std::endian::native == std::endian::little, "file I/O assumes a little-endian host");

struct DatasetMeta {
  double frame_rate = 1000.0;
  double center_frequency = 7.5e6;
  double prf = 5000.0;
  std::uint64_t config_hash = 0;
};

struct Dataset {
  FrameSequence frames;
  DatasetMeta meta;
};

inline constexpr std::uint32_t dataset_version = 1;
inline constexpr std::uint32_t model_version = 1;

namespace detail {

class ByteWriter {
public:
  template <typename T>
  void put(T v)
  {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf_.append(raw, sizeof(T));
  }
  void put_magic(char const (&m)[5]) { buf_.append(m, 4); }
  std::string const &bytes() const { return buf_; }
  void reserve(std::size_t n) { buf_.reserve(n); }

private:
  std::string buf_;
};

class ByteReader {
public:
  ByteReader(std::string data, std::string what)
    : data_{std::move(data)}
    , what_{std::move(what)}
  {
  }

  template <typename T>
  T get()
  {
    require(pos_ + sizeof(T) <= data_.size(), ErrorCode::format, what_ + ": truncated");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void expect_magic(char const (&m)[5])
  {
    require(data_.size() >= 4 && std::memcmp(data_.data(), m, 4) == 0, ErrorCode::format,
            what_ + ": bad magic (expected " + std::string(m, 4) + ")");
    pos_ = 4;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

private:
  std::string data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(std::filesystem::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  require(!in.bad(), ErrorCode::io, "read failed for " + path.string());
  return ss.str();
}

inline void write_file(std::filesystem::path const &path, std::string const &bytes)
{
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  require(!out.fail(), ErrorCode::io, "write failed for " + path.string());
}

} // namespace detail

inline std::string encode_dataset(FrameSequence const &seq, DatasetMeta const &meta)
{
  constexpr auto u32max = static_cast<Index>(std::numeric_limits<std::uint32_t>::max());
  require(seq.nz() <= u32max && seq.nx() <= u32max && seq.nt() <= u32max, ErrorCode::format,
          "dataset dimensions exceed the 32-bit header fields");
  detail::ByteWriter w;
  w.reserve(52 + seq.voxels().size() * 8);
  w.put_magic("UMI1");
  w.put<std::uint32_t>(dataset_version);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.nz()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.nx()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.nt()));
  w.put<std::uint64_t>(meta.config_hash);
  w.put<double>(meta.frame_rate);
  w.put<double>(meta.center_frequency);
  w.put<double>(meta.prf);
  for (Complex v : seq.voxels()) {
    w.put<float>(static_cast<float>(v.real()));
    w.put<float>(static_cast<float>(v.imag()));
  }
  return w.bytes();
}

inline Dataset decode_dataset(std::string bytes, std::string const &what = "dataset")
{
  detail::ByteReader r(std::move(bytes), what);
  r.expect_magic("UMI1");
  auto const version = r.get<std::uint32_t>();
  require(version == dataset_version, ErrorCode::format, what + ": unsupported version " + std::to_string(version));
  auto const nz = r.get<std::uint32_t>();
  auto const nx = r.get<std::uint32_t>();
  auto const nt = r.get<std::uint32_t>();
  Dataset ds;
  ds.meta.config_hash = r.get<std::uint64_t>();
  ds.meta.frame_rate = r.get<double>();
  ds.meta.center_frequency = r.get<double>();
  ds.meta.prf = r.get<double>();
  require(nz >= 1 && nx >= 1 && nt >= 1, ErrorCode::format, what + ": zero dimension in header");
  // 64-bit product of three 32-bit values cannot overflow before the size check below.
  unsigned __int128 const samples = static_cast<unsigned __int128>(nz) * nx * nt;
  require(samples * 8 == r.remaining(), ErrorCode::format,
          what + ": payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
            std::to_string(static_cast<std::uint64_t>(samples) * 8));
  std::vector<Complex> voxels(static_cast<std::size_t>(samples));
  for (auto &v : voxels) {
    float const re = r.get<float>();
    float const im = r.get<float>();
    v = Complex(re, im);
  }
  ds.frames = FrameSequence(nz, nx, nt, std::move(voxels));
  return ds;
}

inline void write_dataset(FrameSequence const &seq, DatasetMeta const &meta, std::filesystem::path const &path)
{
  detail::write_file(path, encode_dataset(seq, meta));
}

inline Dataset read_dataset(std::filesystem::path const &path)
{
  return decode_dataset(detail::read_file(path), path.string());
}

inline std::string encode_model(UnfoldedNetwork const &net, std::uint64_t config_hash = 0)
{
  net.validate();
  detail::ByteWriter w;
  w.put_magic("U2M1");
  w.put<std::uint32_t>(model_version);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(net.depth()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(net.d));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(net.trained_pixels));
  w.put<std::uint64_t>(config_hash);
  w.put<double>(net.epsilon);
  for (auto const &l : net.layers) {
    w.put<double>(l.theta_lambda);
    for (Index j = 0; j < net.d; ++j) { w.put<double>(l.theta_w(j)); }
  }
  return w.bytes();
}

struct LoadedModel {
  UnfoldedNetwork network;
  std::uint64_t config_hash = 0;
};

inline LoadedModel decode_model(std::string bytes, std::string const &what = "model")
{
  detail::ByteReader r(std::move(bytes), what);
  r.expect_magic("U2M1");
  auto const version = r.get<std::uint32_t>();
  require(version == model_version, ErrorCode::format, what + ": unsupported version " + std::to_string(version));
  auto const k = r.get<std::uint32_t>();
  auto const d = r.get<std::uint32_t>();
  LoadedModel m;
  m.network.trained_pixels = static_cast<Index>(r.get<std::uint64_t>());
  m.config_hash = r.get<std::uint64_t>();
  m.network.epsilon = r.get<double>();
  require(k >= 1 && d >= 1, ErrorCode::format, what + ": K and d must be positive");
  require(static_cast<std::uint64_t>(k) * (1 + static_cast<std::uint64_t>(d)) * 8 == r.remaining(), ErrorCode::format,
          what + ": parameter block size does not match K and d");
  m.network.d = d;
  m.network.layers.resize(k);
  for (auto &l : m.network.layers) {
    l.theta_lambda = r.get<double>();
    l.theta_w.resize(d);
    for (Index j = 0; j < static_cast<Index>(d); ++j) { l.theta_w(j) = r.get<double>(); }
  }
  return m;
}

inline void write_model(UnfoldedNetwork const &net, std::filesystem::path const &path, std::uint64_t config_hash = 0)
{
  detail::write_file(path, encode_model(net, config_hash));
}

inline LoadedModel read_model(std::filesystem::path const &path)
{
  return decode_model(detail::read_file(path), path.string());
}

enum class RenderMode { pgm, csv };

/// 16-bit binary PGM of the image in dB relative to its peak: 0 dB maps to 65535,
/// -dynamic_range_db (and below) to 0. Rows are image rows (depth).
inline std::string encode_pgm(RealMatrix const &image, double dynamic_range_db, std::uint64_t config_hash = 0)
{
  require(image.size() > 0 && all_finite(image), ErrorCode::non_finite, "render: image must be non-empty and finite");
  require((image.array() >= 0.0).all(), ErrorCode::domain, "render: PGM input must be non-negative power");
  RealMatrix const db = log_compress(image, dynamic_range_db);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(config_hash));
  std::string out = "P5\n# config_hash " + std::string(hex) + "\n" + std::to_string(image.cols()) + " " +
                    std::to_string(image.rows()) + "\n65535\n";
  for (Index i = 0; i < image.rows(); ++i) {
    for (Index j = 0; j < image.cols(); ++j) {
      double const level = std::round((db(i, j) + dynamic_range_db) / dynamic_range_db * 65535.0);
      auto const v = static_cast<std::uint16_t>(std::clamp(level, 0.0, 65535.0));
      out.push_back(static_cast<char>(v >> 8));
      out.push_back(static_cast<char>(v & 0xff));
    }
  }
  return out;
}

/// Row-major, comma separated, no header, shortest round-trip formatting.
inline std::string encode_csv(RealMatrix const &image)
{
  require(image.size() > 0 && all_finite(image), ErrorCode::non_finite, "render: image must be non-empty and finite");
  std::string out;
  char buf[32];
  for (Index i = 0; i < image.rows(); ++i) {
    for (Index j = 0; j < image.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", image(i, j));
      if (j > 0) { out.push_back(','); }
      out += buf;
    }
    out.push_back('\n');
  }
  return out;
}

inline RealMatrix parse_csv(std::string const &text)
{
  std::vector<std::vector<double>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) { continue; }
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      char *end = nullptr;
      double const v = std::strtod(cell.c_str(), &end);
      require(end != cell.c_str(), ErrorCode::format, "CSV cell is not a number: " + cell);
      row.push_back(v);
    }
    require(rows.empty() || row.size() == rows.front().size(), ErrorCode::format, "CSV rows differ in length");
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), ErrorCode::format, "CSV is empty");
  RealMatrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) { m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j]; }
  }
  return m;
}

inline void render(RealMatrix const &image, std::filesystem::path const &path, RenderMode mode,
                   double dynamic_range_db = 40.0, std::uint64_t config_hash = 0)
{
  detail::write_file(path, mode == RenderMode::pgm ? encode_pgm(image, dynamic_range_db, config_hash)
                                                   : encode_csv(image));
}

} // namespace umi
