// SPDX-License-Identifier: Apache-2.0
#include "mcl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "mcl/errors.hpp"

MCL_BEGIN_NAMESPACE

namespace {

constexpr char kMagic[4] = {'M', 'C', 'L', '1'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u32(std::size_t v) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw FormatError("checkpoint field exceeds 32 bits");
    uint(static_cast<std::uint32_t>(v));
  }
  void u64(std::uint64_t v) { uint(v); }
  void text(const std::string& s) {
    u32(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<char>& buffer() { return out_; }

 private:
  std::vector<char> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& data) : data_(data) {}
  const char* take(std::size_t n) {
    if (n > data_.size() - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U>
  U uint() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(sizeof(U)));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
  }
  std::string text() {
    const auto n = uint<std::uint32_t>();
    const char* p = take(n);
    return std::string(p, n);
  }
  std::size_t position() const { return pos_; }
  std::size_t size() const { return data_.size(); }

 private:
  const std::vector<char>& data_;
  std::size_t pos_ = 0;
};

struct TableEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
};

}  // namespace

std::size_t ModelCheckpoint::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.values.size();
  return n;
}

ModelCheckpoint snapshot(const Model& model) {
  ModelCheckpoint ckpt;
  ckpt.config = model.config();
  for (const auto& [name, t] : model.named_parameters()) {
    NamedArray a{name, t.shape(), {}};
    a.values.reserve(t.numel());
    for (Real v : t.values()) a.values.push_back(static_cast<float>(v));
    ckpt.params.push_back(std::move(a));
  }
  return ckpt;
}

Model restore(const ModelCheckpoint& checkpoint) {
  Model model = Model::initialize(checkpoint.config, 0);
  auto params = model.named_parameters();
  if (params.size() != checkpoint.params.size()) {
    throw FormatError("checkpoint has " + std::to_string(checkpoint.params.size()) + " parameters, config needs " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedArray& src = checkpoint.params[i];
    Tensor& dst = params[i].second;
    if (src.name != params[i].first || src.shape != dst.shape() || src.values.size() != dst.numel()) {
      throw FormatError("checkpoint parameter '" + src.name + "' does not match '" + params[i].first + "' " +
                        shape_to_string(dst.shape()));
    }
    auto values = dst.mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) values[j] = static_cast<Real>(src.values[j]);
  }
  return model;
}

std::size_t checkpoint_header_size(const ModelCheckpoint& checkpoint) {
  std::size_t n = 4 + 8 + 4 + checkpoint.config.canonical().size() + 4;
  for (const auto& p : checkpoint.params) n += 4 + p.name.size() + 4 + 8 * p.shape.size() + 8;
  return n;
}

void save_checkpoint(const std::string& path, const ModelCheckpoint& checkpoint) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u64(checkpoint.config.digest());
  w.text(checkpoint.config.canonical());
  w.u32(checkpoint.params.size());
  std::uint64_t offset = 0;
  for (const auto& p : checkpoint.params) {
    if (shape_numel(p.shape) != p.values.size()) throw FormatError("parameter '" + p.name + "' size mismatch");
    w.text(p.name);
    w.u32(p.shape.size());
    for (std::size_t d : p.shape) w.u64(d);
    w.u64(offset);
    offset += 4 * p.values.size();
  }
  for (const auto& p : checkpoint.params) {
    for (float v : p.values) w.uint(std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint '" + path + "'");
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw InputError("failed writing checkpoint '" + path + "'");
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path + "'");
  const std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(data);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw FormatError("'" + path + "' is not an MCL1 checkpoint");
  const auto digest = r.uint<std::uint64_t>();
  ModelCheckpoint ckpt;
  ckpt.config = EncoderConfig::from_canonical(r.text());
  if (ckpt.config.digest() != digest) {
    throw DigestError("checkpoint '" + path + "': stored digest does not match its config");
  }
  const auto count = r.uint<std::uint32_t>();
  std::vector<TableEntry> table(count);
  for (auto& e : table) {
    e.name = r.text();
    const auto rank = r.uint<std::uint32_t>();
    if (rank > 8) throw FormatError("parameter '" + e.name + "' has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.uint<std::uint64_t>());
    e.offset = r.uint<std::uint64_t>();
  }
  std::uint64_t expected_offset = 0;
  for (const auto& e : table) {
    if (e.offset != expected_offset) throw FormatError("parameter '" + e.name + "' has a non-contiguous offset");
    const std::size_t n = shape_numel(e.shape);
    NamedArray a{e.name, e.shape, std::vector<float>(n)};
    for (std::size_t j = 0; j < n; ++j) a.values[j] = std::bit_cast<float>(r.uint<std::uint32_t>());
    expected_offset += 4 * n;
    ckpt.params.push_back(std::move(a));
  }
  if (r.position() != r.size()) {
    throw FormatError("checkpoint '" + path + "' has " + std::to_string(r.size() - r.position()) +
                      " trailing bytes");
  }
  return ckpt;
}

ModelCheckpoint load_checkpoint(const std::string& path, const EncoderConfig& expected) {
  ModelCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.config.digest() != expected.digest()) {
    throw DigestError("checkpoint '" + path + "' was written for a different encoder config (" +
                      ckpt.config.canonical() + ")");
  }
  return ckpt;
}

MCL_END_NAMESPACE
