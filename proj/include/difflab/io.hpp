// Artifact persistence: checkpoints (JSON header + little-endian float64
// parameter blob), sample dumps (binary or CSV with JSON sidecar), CSV
// formatting, and content hashing for sidecar provenance.
#pragma once

#include "difflab/common.hpp"
#include "difflab/denoiser.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace difflab {

// ---------------------------------------------------------------------------
// SHA-1 (for content-addressed checkpoint hashes in sidecars)
// ---------------------------------------------------------------------------
namespace detail {

class Sha1 {
 public:
  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    total_ += len;
    while (len > 0) {
      const std::size_t take = std::min(len, std::size_t(64) - fill_);
      std::memcpy(buf_.data() + fill_, p, take);
      fill_ += take;
      p += take;
      len -= take;
      if (fill_ == 64) {
        process(buf_.data());
        fill_ = 0;
      }
    }
  }

  std::string hex_digest() {
    const std::uint64_t bits = total_ * 8;
    unsigned char pad = 0x80;
    update(&pad, 1);
    const unsigned char zero = 0;
    while (fill_ != 56) update(&zero, 1);
    std::array<unsigned char, 8> len_be;
    for (int i = 0; i < 8; ++i) len_be[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(len_be.data(), 8);

    char out[41];
    for (int i = 0; i < 5; ++i) std::snprintf(out + 8 * i, 9, "%08x", h_[i]);
    return std::string(out, 40);
  }

 private:
  static std::uint32_t rol(std::uint32_t v, int s) { return (v << s) | (v >> (32 - s)); }

  void process(const unsigned char* block) {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(block[4 * i]) << 24) | (std::uint32_t(block[4 * i + 1]) << 16) |
             (std::uint32_t(block[4 * i + 2]) << 8) | std::uint32_t(block[4 * i + 3]);
    for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);

    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5A827999;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDC;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6;
      }
      const std::uint32_t tmp = rol(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = tmp;
    }
    h_[0] += a;
    h_[1] += b;
    h_[2] += c;
    h_[3] += d;
    h_[4] += e;
  }

  std::array<std::uint32_t, 5> h_ = {0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476,
                                     0xC3D2E1F0};
  std::array<unsigned char, 64> buf_{};
  std::size_t fill_ = 0;
  std::uint64_t total_ = 0;
};

}  // namespace detail

inline std::string sha1_hex(const void* data, std::size_t len) {
  detail::Sha1 h;
  h.update(data, len);
  return h.hex_digest();
}

inline std::string sha1_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file for hashing: " + path);
  detail::Sha1 h;
  char buf[8192];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  return h.hex_digest();
}

// ---------------------------------------------------------------------------
// CSV formatting: fixed "%.12g" so identical configs produce byte-identical
// bodies across runs.
// ---------------------------------------------------------------------------
inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << body;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read file: " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// Sample dumps: row-major float64 little-endian .bin plus a .json sidecar
// with shape/count/seed/config, or plain CSV rows of flattened tensors.
// ---------------------------------------------------------------------------
inline void save_sample_dump(const std::string& path_base, const Mat& samples,
                             nlohmann::json sidecar) {
  std::filesystem::path p(path_base);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  {
    std::ofstream out(path_base + ".bin", std::ios::binary);
    if (!out) throw ConfigError("cannot write dump: " + path_base + ".bin");
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
      const Vec row = samples.row(i).transpose();
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(sizeof(double) * row.size()));
    }
  }
  sidecar["shape"] = {samples.rows(), samples.cols()};
  sidecar["count"] = samples.rows();
  write_text_file(path_base + ".json", sidecar.dump(2) + "\n");
}

inline Mat load_sample_dump(const std::string& path_base, nlohmann::json* sidecar = nullptr) {
  const auto meta = nlohmann::json::parse(read_text_file(path_base + ".json"));
  const auto shape = meta.at("shape").get<std::vector<long>>();
  if (shape.size() != 2) throw ConfigError("dump sidecar: bad shape");
  Mat samples(shape[0], shape[1]);
  std::ifstream in(path_base + ".bin", std::ios::binary);
  if (!in) throw ConfigError("cannot read dump: " + path_base + ".bin");
  std::vector<double> row(static_cast<std::size_t>(shape[1]));
  for (long i = 0; i < shape[0]; ++i) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(sizeof(double) * row.size()));
    if (!in) throw ConfigError("dump truncated: " + path_base + ".bin");
    samples.row(i) = Eigen::Map<const Vec>(row.data(), shape[1]).transpose();
  }
  if (sidecar) *sidecar = meta;
  return samples;
}

inline void save_samples_csv(const std::string& path, const Mat& samples) {
  std::string body;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) {
      if (j) body += ',';
      body += csv_num(samples(i, j));
    }
    body += '\n';
  }
  write_text_file(path, body);
}

// ---------------------------------------------------------------------------
// Checkpoints: <base>.json header + <base>.bin float64 parameter blob.
// ---------------------------------------------------------------------------
inline void save_checkpoint(const std::string& path_base, const Denoiser& model,
                            long step) {
  std::filesystem::path p(path_base);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  nlohmann::json header;
  header["arch"] = {{"data_dim", model.arch().data_dim},
                    {"hidden", model.arch().hidden},
                    {"cond_dim", model.arch().cond_dim},
                    {"time_freqs", model.arch().time_freqs},
                    {"time_scale", model.arch().time_scale}};
  header["seed"] = model.seed();
  header["step"] = step;
  header["param_count"] = model.param_count();
  write_text_file(path_base + ".json", header.dump(2) + "\n");

  std::ofstream out(path_base + ".bin", std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint: " + path_base + ".bin");
  out.write(reinterpret_cast<const char*>(model.params().data()),
            static_cast<std::streamsize>(sizeof(double) * model.params().size()));
}

inline Denoiser load_checkpoint(const std::string& path_base, long* step = nullptr) {
  const auto header = nlohmann::json::parse(read_text_file(path_base + ".json"));
  DenoiserArch arch;
  const auto& a = header.at("arch");
  arch.data_dim = a.at("data_dim").get<int>();
  arch.hidden = a.at("hidden").get<std::vector<int>>();
  arch.cond_dim = a.at("cond_dim").get<int>();
  arch.time_freqs = a.at("time_freqs").get<int>();
  arch.time_scale = a.at("time_scale").get<int>();
  Denoiser model(header.at("seed").get<std::uint64_t>(), arch);

  const int n = header.at("param_count").get<int>();
  if (n != model.param_count()) throw ConfigError("checkpoint: parameter count mismatch");
  std::ifstream in(path_base + ".bin", std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint: " + path_base + ".bin");
  in.read(reinterpret_cast<char*>(model.mutable_params().data()),
          static_cast<std::streamsize>(sizeof(double) * n));
  if (!in) throw ConfigError("checkpoint truncated: " + path_base + ".bin");
  if (step) *step = header.at("step").get<long>();
  return model;
}

}  // namespace difflab
