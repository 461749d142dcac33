#pragma once

#include "csa/dictionary.hpp"
#include "csa/samplers.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>

namespace csa {

// Binary cache: 40-byte header then little-endian complex64 payload.
//   magic "CSAC" | u32 version | u32 kind | u32 reserved | u64 key | u32 rows | u32 cols | u32 extra | u32 reserved
// Gram payload: M (rows x cols), `extra` eigenvalues (real parts used), then
// the rows x extra eigenvector block. Bank payload: B (rows x cols).
// All matrices are column-major.
inline constexpr std::uint32_t kCacheVersion = 1;

enum class CacheKind : std::uint32_t { gram = 1, sampler_bank = 2 };

// FNV-1a, 64 bit.
class ContentHash {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      const unsigned char b = static_cast<unsigned char>(v >> (8 * i));
      bytes(&b, 1);
    }
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t content_key(const TemplateBank& bank) {
  ContentHash h;
  const GridConfig& g = bank.grid();
  for (int v : {g.users, g.doppler_half_width, g.delay_cells, g.delay_step_samples, g.shift_cells})
    h.u64(static_cast<std::uint64_t>(v));
  h.f64(g.sample_period);
  h.f64(g.doppler_step);
  for (const auto& p : bank.preambles()) {
    h.u64(static_cast<std::uint64_t>(p.user));
    h.u64(p.chips.size());
    for (int c : p.chips) h.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(c)));
    for (Eigen::Index m = 0; m < p.samples.size(); ++m) {
      h.f64(p.samples(m).real());
      h.f64(p.samples(m).imag());
    }
  }
  return h.value();
}

inline std::uint64_t bank_key(std::uint64_t gram_key, int channels, SamplerKind kind, std::uint64_t seed) {
  ContentHash h;
  h.u64(gram_key);
  h.u64(static_cast<std::uint64_t>(channels));
  h.u64(static_cast<std::uint64_t>(kind));
  h.u64(seed);
  return h.value();
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "cache I/O assumes a little-endian host");

struct CacheHeader {
  std::array<char, 4> magic{'C', 'S', 'A', 'C'};
  std::uint32_t version = kCacheVersion;
  std::uint32_t kind = 0;
  std::uint32_t reserved0 = 0;
  std::uint64_t key = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t extra = 0;
  std::uint32_t reserved1 = 0;
};
static_assert(sizeof(CacheHeader) == 40);

inline void write_block(std::ofstream& out, const CMat& m) {
  std::vector<float> buf(static_cast<std::size_t>(2 * m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    buf[2 * i] = static_cast<float>(m.data()[i].real());
    buf[2 * i + 1] = static_cast<float>(m.data()[i].imag());
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

inline CMat read_block(std::ifstream& in, Eigen::Index rows, Eigen::Index cols) {
  std::vector<float> buf(static_cast<std::size_t>(2 * rows * cols));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw std::runtime_error("cache payload is truncated");
  CMat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = {buf[2 * i], buf[2 * i + 1]};
  return m;
}

inline void write_header(std::ofstream& out, CacheKind kind, std::uint64_t key, Eigen::Index rows, Eigen::Index cols,
                         Eigen::Index extra) {
  CacheHeader h;
  h.kind = static_cast<std::uint32_t>(kind);
  h.key = key;
  h.rows = static_cast<std::uint32_t>(rows);
  h.cols = static_cast<std::uint32_t>(cols);
  h.extra = static_cast<std::uint32_t>(extra);
  out.write(reinterpret_cast<const char*>(&h), sizeof h);
}

// nullopt when the file is absent, stale (other key or version) or of another kind.
inline std::optional<CacheHeader> read_header(std::ifstream& in, CacheKind kind, std::uint64_t key) {
  CacheHeader h;
  in.read(reinterpret_cast<char*>(&h), sizeof h);
  if (!in) throw std::runtime_error("cache header is truncated");
  if (h.magic != CacheHeader{}.magic) throw std::runtime_error("not a cache file (bad magic)");
  if (h.version != kCacheVersion || h.kind != static_cast<std::uint32_t>(kind) || h.key != key) return std::nullopt;
  return h;
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write cache '" + path.string() + "'");
  return out;
}

}  // namespace detail

inline void save_gram(const std::filesystem::path& path, const GramMatrix& gram, std::uint64_t key) {
  auto out = detail::open_for_write(path);
  const RVec& values = gram.eigenvalues();
  detail::write_header(out, CacheKind::gram, key, gram.size(), gram.size(), values.size());
  detail::write_block(out, gram.matrix());
  detail::write_block(out, values.cast<cplx>());
  detail::write_block(out, gram.eigenvectors());
  if (!out) throw std::runtime_error("failed writing cache '" + path.string() + "'");
}

inline std::optional<GramMatrix> load_gram(const std::filesystem::path& path, std::uint64_t key) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  const auto h = detail::read_header(in, CacheKind::gram, key);
  if (!h) return std::nullopt;
  CMat m = detail::read_block(in, h->rows, h->cols);
  const RVec values = detail::read_block(in, h->extra, 1).real();
  CMat vectors = detail::read_block(in, h->rows, h->extra);
  return GramMatrix(std::move(m), values, std::move(vectors));
}

inline void save_bank(const std::filesystem::path& path, const SamplerBank& bank, std::uint64_t key) {
  auto out = detail::open_for_write(path);
  detail::write_header(out, CacheKind::sampler_bank, key, bank.channels(), bank.grid_size(),
                       static_cast<Eigen::Index>(bank.kind()));
  detail::write_block(out, bank.matrix());
  if (!out) throw std::runtime_error("failed writing cache '" + path.string() + "'");
}

inline std::optional<SamplerBank> load_bank(const std::filesystem::path& path, std::uint64_t key,
                                            const GramMatrix& gram) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  const auto h = detail::read_header(in, CacheKind::sampler_bank, key);
  if (!h) return std::nullopt;
  if (static_cast<int>(h->cols) != gram.size()) throw std::runtime_error("cached bank does not match the Gram size");
  return SamplerBank(detail::read_block(in, h->rows, h->cols), gram, static_cast<SamplerKind>(h->extra));
}

}  // namespace csa
