// Copyright 2026 The LOCA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Little-endian container: "LOCA", u32 version, 32-byte geometry hash,
// u32 tensor count, then per tensor: u32 name length, name bytes, u8 dtype,
// u32 rank, u64 dims, raw payload.

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "loca/errors.hpp"
#include "loca/trainer.hpp"

namespace loca {

namespace {

constexpr char kMagic[4] = {'L', 'O', 'C', 'A'};
constexpr std::uint32_t kVersion = 1;
enum DType : std::uint8_t { kF32 = 0, kU64 = 1 };

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float f) { le(std::bit_cast<std::uint32_t>(f)); }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string path) : buf_(std::move(data)), path_(std::move(path)) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) {
    if (buf_.size() - pos_ < n) fail(ErrorKind::kIo, path_ + ": truncated checkpoint");
  }
  std::vector<char> buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::uint8_t dtype = kF32;
  Shape shape;
  std::vector<float> f;
  std::vector<std::uint64_t> u;
};

void put_name(Writer& w, const std::string& name) {
  w.le(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
}

void put_tensor(Writer& w, const std::string& name, const Tensor& t) {
  put_name(w, name);
  w.le(static_cast<std::uint8_t>(kF32));
  w.le(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.le(static_cast<std::uint64_t>(d));
  for (float v : t.values()) w.f32(v);
}

void put_u64(Writer& w, const std::string& name, std::uint64_t v) {
  put_name(w, name);
  w.le(static_cast<std::uint8_t>(kU64));
  w.le(std::uint32_t{1});
  w.le(std::uint64_t{1});
  w.le(v);
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, path.string() + ": cannot open checkpoint");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CheckpointInfo read_header(Reader& r, const std::string& path) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) fail(ErrorKind::kIo, path + ": not a LOCA checkpoint");
  CheckpointInfo info;
  info.version = r.le<std::uint32_t>();
  if (info.version != kVersion)
    fail(ErrorKind::kIo, path + ": unsupported checkpoint version " + std::to_string(info.version));
  r.bytes(info.hash.data(), info.hash.size());
  info.tensors = r.le<std::uint32_t>();
  return info;
}

std::map<std::string, Entry> read_entries(Reader& r, std::size_t count, const std::string& path) {
  std::map<std::string, Entry> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = r.le<std::uint32_t>();
    if (len > 4096) fail(ErrorKind::kIo, path + ": corrupt tensor name");
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    Entry e;
    e.dtype = r.le<std::uint8_t>();
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) fail(ErrorKind::kIo, path + ": corrupt rank for " + name);
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      e.shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>()));
      n *= e.shape.back();
    }
    if (n > (std::size_t{1} << 32)) fail(ErrorKind::kIo, path + ": corrupt size for " + name);
    if (e.dtype == kF32) {
      e.f.resize(n);
      for (auto& v : e.f) v = r.f32();
    } else if (e.dtype == kU64) {
      e.u.resize(n);
      for (auto& v : e.u) v = r.le<std::uint64_t>();
    } else {
      fail(ErrorKind::kIo, path + ": unknown dtype for " + name);
    }
    if (!out.emplace(name, std::move(e)).second)
      fail(ErrorKind::kIo, path + ": duplicate tensor " + name);
  }
  if (!r.done()) fail(ErrorKind::kIo, path + ": trailing bytes");
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le(kVersion);
  const ConfigHash h = geometry_hash(state.cfg);
  w.bytes(h.data(), h.size());

  std::vector<std::pair<std::string, const Tensor*>> items;
  visit_model(state.student, [&](const std::string& n, const Tensor& t) {
    items.emplace_back("student." + n, &t);
  });
  visit_model(state.teacher, [&](const std::string& n, const Tensor& t) {
    items.emplace_back("teacher." + n, &t);
  });
  std::size_t i = 0;
  visit_model(state.student, [&](const std::string& n, const Tensor&) {
    items.emplace_back("opt.m." + n, &state.opt.m.at(i));
    items.emplace_back("opt.v." + n, &state.opt.v.at(i));
    ++i;
  });
  w.le(static_cast<std::uint32_t>(items.size() + 2));
  for (const auto& [name, t] : items) put_tensor(w, name, *t);
  put_u64(w, "meta.step", state.step);
  put_u64(w, "meta.opt_step", state.opt.step);

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, tmp.string() + ": cannot open for writing");
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) fail(ErrorKind::kIo, tmp.string() + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, path.string() + ": " + ec.message());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  Reader r(read_file(path), path.string());
  CheckpointInfo info = read_header(r, path.string());
  const auto entries = read_entries(r, info.tensors, path.string());
  auto it = entries.find("meta.step");
  if (it != entries.end() && it->second.u.size() == 1) info.step = it->second.u[0];
  return info;
}

TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, bool force) {
  const std::string p = path.string();
  Reader r(read_file(path), p);
  const CheckpointInfo info = read_header(r, p);
  const ConfigHash expected = geometry_hash(cfg);
  if (info.hash != expected && !force)
    fail(ErrorKind::kConfig, p + ": config hash mismatch (file " + hex(info.hash) + ", config " +
                                 hex(expected) + "); use --force to override");
  auto entries = read_entries(r, info.tensors, p);

  TrainState st;
  st.cfg = cfg;
  Rng rng(0);
  st.student = init_params<float>(cfg.model, rng);
  st.teacher = st.student;
  st.opt = init_optimizer(st.student);
  auto take = [&](const std::string& name, Tensor& t) {
    auto it = entries.find(name);
    if (it == entries.end()) fail(ErrorKind::kIo, p + ": missing tensor " + name);
    if (it->second.dtype != kF32 || it->second.shape != t.shape())
      fail(ErrorKind::kDimension, p + ": tensor " + name + " has shape " +
                                      shape_str(it->second.shape) + ", expected " +
                                      shape_str(t.shape()));
    std::copy(it->second.f.begin(), it->second.f.end(), t.values().begin());
    entries.erase(it);
  };
  auto take_u64 = [&](const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end() || it->second.dtype != kU64 || it->second.u.size() != 1)
      fail(ErrorKind::kIo, p + ": missing or malformed " + name);
    const auto v = it->second.u[0];
    entries.erase(it);
    return static_cast<std::size_t>(v);
  };
  visit_model(st.student, [&](const std::string& n, Tensor& t) { take("student." + n, t); });
  visit_model(st.teacher, [&](const std::string& n, Tensor& t) { take("teacher." + n, t); });
  std::size_t i = 0;
  visit_model(st.student, [&](const std::string& n, Tensor&) {
    take("opt.m." + n, st.opt.m[i]);
    take("opt.v." + n, st.opt.v[i]);
    ++i;
  });
  st.step = take_u64("meta.step");
  st.opt.step = take_u64("meta.opt_step");
  if (!entries.empty()) fail(ErrorKind::kIo, p + ": unexpected tensor " + entries.begin()->first);
  set_trainable(st.student, true);
  set_trainable(st.teacher, false);
  return st;
}

}  // namespace loca
