#pragma once

// Binary checkpoint: magic "SEDL1", a u32-prefixed header text (labels and
// config), u32 epoch, u32 entry count, then per entry a u32-prefixed key,
// u32 rank, u32 dims and f64 payload. All integers and doubles little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "styledl/model.hpp"

namespace styledl {

inline constexpr char kCheckpointMagic[] = "SEDL1";

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double d) {
    auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* s, std::size_t n) { out_.append(s, n); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& in) : in_(in) {}
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_++])) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_++])) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string str() {
    auto n = u32();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, const std::string& key, const Shape& shape, std::span<const double> data) {
  w.str(key);
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
  for (double v : data) w.f64(v);
}

}  // namespace detail

/// A trained model plus optimizer state.
struct TrainState {
  std::unique_ptr<StyleEdlModel> model;
  std::unique_ptr<Sgd> optimizer;
  std::uint32_t epoch = 0;
};

inline std::string checkpoint_header(const StyleEdlModel& model) {
  std::string labels;
  for (std::size_t i = 0; i < model.labels().size(); ++i) labels += (i ? "," : "") + model.labels()[i];
  return "labels=" + labels + "\n" + model.config().to_text();
}

inline std::string encode_checkpoint(const StyleEdlModel& model, const Sgd* opt, std::uint32_t epoch) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 5);
  w.str(checkpoint_header(model));
  w.u32(epoch);
  const auto& entries = model.params().entries();
  bool with_momentum = opt && opt->velocity().size() == entries.size();
  w.u32(static_cast<std::uint32_t>(1 + entries.size() * (with_momentum ? 2 : 1)));
  const Tensor& adj = model.static_adjacency();
  detail::write_tensor(w, "adjacency/static", adj.shape(), adj.data());
  for (const auto& e : entries) detail::write_tensor(w, "param/" + e.name, e.value.shape(), e.value.data());
  if (with_momentum)
    for (std::size_t k = 0; k < entries.size(); ++k)
      detail::write_tensor(w, "momentum/" + entries[k].name, entries[k].value.shape(), opt->velocity()[k]);
  return std::move(w.bytes());
}

inline TrainState decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(5) != std::string(kCheckpointMagic, 5)) throw FormatError("checkpoint: bad magic");
  std::string header = r.str();
  auto nl = header.find('\n');
  if (header.rfind("labels=", 0) != 0 || nl == std::string::npos) throw FormatError("checkpoint: missing label header");
  std::vector<std::string> labels;
  for (auto part : detail::split(std::string_view(header).substr(7, nl - 7), ',')) labels.emplace_back(part);
  TrainConfig cfg = parse_config_text(header.substr(nl + 1));

  TrainState st;
  st.epoch = r.u32();
  std::uint32_t n = r.u32();
  struct Raw {
    Shape shape;
    std::vector<double> data;
  };
  std::map<std::string, Raw> entries;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string key = r.str();
    Raw raw;
    auto rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) raw.shape.push_back(r.u32());
    raw.data.resize(shape_numel(raw.shape));
    for (auto& v : raw.data) v = r.f64();
    if (!entries.emplace(key, std::move(raw)).second) throw FormatError("checkpoint: duplicate key " + key);
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");

  auto adj = entries.find("adjacency/static");
  if (adj == entries.end()) throw FormatError("checkpoint: missing adjacency/static");
  st.model = std::make_unique<StyleEdlModel>(cfg, labels, Tensor::from(adj->second.shape, adj->second.data));
  st.optimizer = std::make_unique<Sgd>(cfg.momentum, cfg.weight_decay);
  const auto& params = st.model->params().entries();
  std::size_t momentum_found = 0;
  for (const auto& e : params) {
    auto it = entries.find("param/" + e.name);
    if (it == entries.end()) throw FormatError("checkpoint: missing param/" + e.name);
    if (it->second.shape != e.value.shape())
      throw FormatError("checkpoint: shape mismatch for " + e.name + ": " + shape_str(it->second.shape) + " vs " +
                        shape_str(e.value.shape()));
    std::copy(it->second.data.begin(), it->second.data.end(), Tensor(e.value).data_mut().begin());
    if (entries.count("momentum/" + e.name)) ++momentum_found;
  }
  if (momentum_found == params.size()) {
    for (const auto& e : params) st.optimizer->velocity().push_back(entries.at("momentum/" + e.name).data);
  } else if (momentum_found != 0) {
    throw FormatError("checkpoint: partial momentum buffers");
  }
  std::size_t expected = 1 + params.size() + momentum_found;
  if (entries.size() != expected) throw FormatError("checkpoint: unexpected extra entries");
  return st;
}

inline void save_checkpoint(const std::filesystem::path& path, const StyleEdlModel& model, const Sgd* opt,
                            std::uint32_t epoch) {
  write_file(path, encode_checkpoint(model, opt, epoch));
}

inline TrainState load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace styledl
