#pragma once

// Manifest and PPM ingestion, the synthetic corpus generator, splitting and
// the label co-occurrence adjacency.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "styledl/losses.hpp"
#include "styledl/optim.hpp"

namespace styledl {

struct DatasetRecord {
  std::string image_path;
  std::vector<double> distribution;
};

struct Manifest {
  std::vector<std::string> label_names;
  std::vector<DatasetRecord> records;
  std::filesystem::path base_dir;  // image paths are relative to this

  std::size_t label_count() const { return label_names.size(); }
  std::filesystem::path resolve(const DatasetRecord& r) const {
    std::filesystem::path p(r.image_path);
    return p.is_absolute() ? p : base_dir / p;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline constexpr double kManifestSumTolerance = 0.01;

/// Parses `#labels: a,b,c` then rows `path,p1,...,pC`. Rows whose sum lies
/// within [0.99, 1.01] are renormalized; others are rejected.
inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {}) {
  Manifest m;
  m.base_dir = base_dir;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view lv = detail::trim(line);
    if (!header) {
      constexpr std::string_view tag = "#labels:";
      if (lv.substr(0, tag.size()) != tag) throw ParseError("expected '#labels:' header", line_no);
      for (auto name : detail::split(lv.substr(tag.size()), ',')) {
        auto n = detail::trim(name);
        if (n.empty()) throw ParseError("empty label name", line_no);
        m.label_names.emplace_back(n);
      }
      header = true;
      continue;
    }
    if (lv.empty()) continue;
    auto fields = detail::split(lv, ',');
    if (fields.size() != m.label_names.size() + 1)
      throw ParseError("expected " + std::to_string(m.label_names.size() + 1) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    DatasetRecord r;
    r.image_path = std::string(detail::trim(fields[0]));
    if (r.image_path.empty()) throw ParseError("empty image path", line_no);
    double total = 0.0;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double v = 0.0;
      if (!detail::parse_double(fields[i], v)) throw ParseError("bad number '" + std::string(fields[i]) + "'", line_no);
      if (v < 0.0 || !std::isfinite(v))
        throw ValidationError("line " + std::to_string(line_no) + ": negative or non-finite probability");
      r.distribution.push_back(v);
      total += v;
    }
    if (std::abs(total - 1.0) > kManifestSumTolerance)
      throw ValidationError("line " + std::to_string(line_no) + ": distribution sums to " +
                            detail::format_double(total));
    for (auto& v : r.distribution) v /= total;
    m.records.push_back(std::move(r));
  }
  if (!header) throw ParseError("missing '#labels:' header", line_no + 1);
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

inline void write_manifest(std::ostream& out, const Manifest& m) {
  out << "#labels: ";
  for (std::size_t i = 0; i < m.label_names.size(); ++i) out << (i ? "," : "") << m.label_names[i];
  out << "\n";
  for (const auto& r : m.records) {
    out << r.image_path;
    for (double v : r.distribution) out << "," << detail::format_double(v);
    out << "\n";
  }
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  write_manifest(out, m);
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// PPM
// ---------------------------------------------------------------------------

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<unsigned char> rgb;  // row-major, interleaved
};

inline Image decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("ppm: malformed header");
    return std::stoul(bytes.substr(start, pos - start));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("ppm: not a binary P6 file");
  pos = 2;
  Image img;
  img.width = read_int();
  img.height = read_int();
  std::size_t maxval = read_int();
  if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported");
  if (img.width == 0 || img.height == 0) throw FormatError("ppm: zero extent");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError("ppm: missing separator before payload");
  ++pos;
  std::size_t need = img.width * img.height * 3;
  if (bytes.size() - pos < need) throw FormatError("ppm: truncated payload");
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.rgb.begin(), img.rgb.end());
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

/// Channel-major [3,H,W] floats in [0,1], nearest-resized to size x size
/// when `size` is nonzero.
inline Tensor image_to_tensor(const Image& img, std::size_t size = 0) {
  std::size_t oh = size ? size : img.height, ow = size ? size : img.width;
  std::vector<double> v(3 * oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t sy = y * img.height / oh, sx = x * img.width / ow;
      for (std::size_t c = 0; c < 3; ++c)
        v[(c * oh + y) * ow + x] = img.rgb[(sy * img.width + sx) * 3 + c] / 255.0;
    }
  return Tensor::from({3, oh, ow}, std::move(v));
}

inline Tensor load_ppm(const std::filesystem::path& path, std::size_t size = 0) {
  return image_to_tensor(decode_ppm(read_file(path)), size);
}

/// Mirrors the last axis.
inline Tensor hflip(const Tensor& x) {
  std::size_t w = x.dim(-1);
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t row = 0; row < v.size() / w; ++row) std::reverse(v.begin() + row * w, v.begin() + (row + 1) * w);
  return Tensor::from(x.shape(), std::move(v));
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

inline std::vector<std::string> default_label_names(std::size_t c) {
  static const char* const kEmotions[] = {"amusement", "contentment", "awe",     "excitement",
                                          "fear",      "sadness",     "disgust", "anger"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < c; ++i) names.push_back(c <= 8 ? kEmotions[i] : "label" + std::to_string(i));
  return names;
}

inline std::vector<double> sample_dirichlet(std::size_t c, double concentration, Rng& rng) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> p(c);
  double total = 0.0;
  for (auto& v : p) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0.0) {
    std::fill(p.begin(), p.end(), 0.0);
    p[std::uniform_int_distribution<std::size_t>(0, c - 1)(rng)] = 1.0;
    return p;
  }
  for (auto& v : p) v /= total;
  return p;
}

/// Label i owns a colour and an oriented sinusoidal texture; each image
/// mixes the label textures with weights equal to its target distribution.
inline Image render_style_mixture(std::span<const double> dist, std::size_t size, Rng& rng) {
  std::size_t c = dist.size();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> phase(c);
  for (auto& ph : phase) ph = 2.0 * std::numbers::pi * unit(rng);
  Image img;
  img.width = img.height = size;
  img.rgb.resize(size * size * 3);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      double rgb[3] = {0.0, 0.0, 0.0};
      for (std::size_t i = 0; i < c; ++i) {
        if (dist[i] == 0.0) continue;
        double hue = static_cast<double>(i) / static_cast<double>(c);
        double freq = 2.0 + 2.0 * static_cast<double>(i % 4);
        double theta = std::numbers::pi * static_cast<double>(i) / static_cast<double>(c);
        double u = (static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta)) /
                   static_cast<double>(size);
        double wave = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * u + phase[i]);
        for (int ch = 0; ch < 3; ++ch) {
          double colour = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * (hue - ch / 3.0));
          rgb[ch] += dist[i] * colour * wave;
        }
      }
      for (int ch = 0; ch < 3; ++ch) {
        double v = std::clamp(rgb[ch] + 0.04 * (unit(rng) - 0.5), 0.0, 1.0);
        img.rgb[(y * size + x) * 3 + static_cast<std::size_t>(ch)] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  return img;
}

/// Writes `n` PPM images plus `manifest.txt` into `out_dir`.
inline Manifest synth_generate(std::uint64_t seed, std::size_t n, std::size_t labels, std::size_t input_size,
                               const std::filesystem::path& out_dir, double concentration = 0.5) {
  if (labels < 2) throw ConfigError("synth: need at least two labels");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  Rng rng(seed);
  Manifest m;
  m.label_names = default_label_names(labels);
  m.base_dir = out_dir;
  for (std::size_t k = 0; k < n; ++k) {
    auto dist = sample_dirichlet(labels, concentration, rng);
    Image img = render_style_mixture(dist, input_size, rng);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05zu.ppm", k);
    write_file(out_dir / name, encode_ppm(img));
    m.records.push_back({name, dist});
  }
  save_manifest(out_dir / "manifest.txt", m);
  return m;
}

// ---------------------------------------------------------------------------
// Splitting and adjacency
// ---------------------------------------------------------------------------

inline std::pair<Manifest, Manifest> split_dataset(const Manifest& m, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split: ratio must lie in (0,1)");
  std::vector<std::size_t> idx(m.records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
  Manifest train{m.label_names, {}, m.base_dir}, test{m.label_names, {}, m.base_dir};
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_train ? train : test).records.push_back(m.records[idx[i]]);
  return {train, test};
}

struct AdjacencyOptions {
  double presence = 0.1;   // label counts as present when p_i >= this
  double threshold = 0.3;  // conditional co-occurrence binarization cut
};

/// Row-stochastic static adjacency [C,C] from conditional co-occurrence.
inline Tensor cooccurrence_adjacency(const Manifest& m, const AdjacencyOptions& opt = {},
                                     std::vector<std::string>* warnings = nullptr) {
  std::size_t c = m.label_count();
  require(c > 0, "adjacency: manifest has no labels");
  std::vector<double> counts(c * c, 0.0), present(c, 0.0);
  for (const auto& r : m.records) {
    if (r.distribution.size() != c)
      throw ContractViolation("adjacency: record has " + std::to_string(r.distribution.size()) + " labels, expected " +
                              std::to_string(c));
    for (std::size_t i = 0; i < c; ++i) {
      if (r.distribution[i] < opt.presence) continue;
      present[i] += 1.0;
      for (std::size_t j = 0; j < c; ++j)
        if (r.distribution[j] >= opt.presence) counts[i * c + j] += 1.0;
    }
  }
  if (m.records.empty() && warnings) warnings->push_back("adjacency: empty manifest, using identity");
  std::vector<double> a(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double cond = present[i] > 0.0 ? counts[i * c + j] / present[i] : 0.0;
      double v = i == j ? 1.0 : (cond >= opt.threshold ? 1.0 : 0.0);
      a[i * c + j] = v;
      row += v;
    }
    for (std::size_t j = 0; j < c; ++j) a[i * c + j] /= row;
  }
  return Tensor::from({c, c}, std::move(a));
}

}  // namespace styledl
