// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "mudet/error.hpp"

namespace mudet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

namespace {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }

  template <class T>
  T get() {
    if (bytes_.size() - pos_ < sizeof(T)) throw ParseError("checkpoint truncated");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw ParseError("checkpoint truncated");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out = "MUDT";
  put<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
    for (double v : t.data()) put<double>(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_string(4) != "MUDT") throw ParseError("not a checkpoint (bad magic)");
  auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<NamedTensor> out;
  while (!r.done()) {
    std::string name = r.get_string(r.get<std::uint32_t>());
    auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw ParseError("checkpoint tensor '" + name + "' has rank " +
                                   std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::size_t n = shape_numel(shape);
    if (n > (bytes.size() / sizeof(double))) throw ParseError("checkpoint truncated");
    std::vector<double> values(n);
    for (auto& v : values) v = r.get<double>();
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(tensors);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

void assign_checkpoint(const std::vector<NamedTensor>& loaded, std::vector<NamedTensor>& targets) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : loaded) by_name[nt.name] = &nt.tensor;
  for (auto& [name, t] : targets) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " +
                       shape_str(it->second->shape()) + ", model expects " +
                       shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace mudet
