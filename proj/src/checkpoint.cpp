/* Copyright 2026 The AnonyPose Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "anonypose/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "anonypose/errors.hpp"

namespace anonypose {

namespace {

constexpr char kMagic[4] = {'A', 'N', 'P', 'K'};

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Writer {
  std::vector<std::uint8_t> out;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <class T>
  void pod(T v) {
    bytes(&v, sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
};

struct Reader {
  const std::vector<std::uint8_t>& in;
  std::size_t pos = 0;
  std::size_t end;
  void need(std::size_t n) const {
    if (n > end - pos) throw CheckpointError("corrupt archive: truncated");
  }
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, in.data() + pos, n);
    pos += n;
  }
  template <class T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in.data() + pos), n);
    pos += n;
    return s;
  }
};

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 1;
    case torch::kFloat64: return 2;
    case torch::kInt64: return 3;
    default: throw CheckpointError(fmt::format("unsupported tensor dtype {}", c10::toString(t)));
  }
}

torch::ScalarType dtype_from(std::uint8_t code) {
  switch (code) {
    case 1: return torch::kFloat32;
    case 2: return torch::kFloat64;
    case 3: return torch::kInt64;
    default: throw CheckpointError(fmt::format("corrupt archive: dtype code {}", code));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_archive(const Archive& archive) {
  Writer w;
  w.bytes(kMagic, 4);
  w.pod(kArchiveVersion);
  w.str(archive.manifest.dump());
  w.pod<std::uint64_t>(archive.tensors.size());
  for (const auto& [name, tensor] : archive.tensors) {
    const torch::Tensor t = tensor.detach().to(torch::kCPU).contiguous();
    w.str(name);
    w.pod(dtype_code(t.scalar_type()));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) w.pod<std::int64_t>(d);
    const std::size_t nbytes = t.numel() * t.element_size();
    w.pod<std::uint64_t>(nbytes);
    w.bytes(t.data_ptr(), nbytes);
  }
  w.pod(fnv1a(w.out.data(), w.out.size()));
  return std::move(w.out);
}

Archive decode_archive(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("corrupt archive: not an anonypose checkpoint");
  }
  Reader r{bytes, 4, bytes.size() - 8};
  const auto version = r.pod<std::uint32_t>();
  if (version != kArchiveVersion) {
    throw CheckpointError(fmt::format("checkpoint version mismatch: file has version {}, "
                                      "this build reads version {}", version, kArchiveVersion));
  }
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != fnv1a(bytes.data(), bytes.size() - 8)) {
    throw CheckpointError("corrupt archive: checksum mismatch (truncated or damaged file)");
  }
  Archive a;
  try {
    a.manifest = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(fmt::format("corrupt archive: manifest: {}", e.what()));
  }
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto dtype = dtype_from(r.pod<std::uint8_t>());
    const auto ndim = r.pod<std::uint32_t>();
    if (ndim > 8) throw CheckpointError("corrupt archive: tensor rank");
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = r.pod<std::int64_t>();
    torch::Tensor t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    const auto nbytes = r.pod<std::uint64_t>();
    if (nbytes != t.numel() * t.element_size()) {
      throw CheckpointError(fmt::format("corrupt archive: size of tensor '{}'", name));
    }
    r.bytes(t.data_ptr(), nbytes);
    a.tensors.emplace(std::move(name), std::move(t));
  }
  if (r.pos != r.end) throw CheckpointError("corrupt archive: trailing bytes");
  return a;
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  const auto bytes = encode_archive(archive);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(fmt::format("cannot write '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

void export_module(const torch::nn::Module& module, const std::string& prefix, Archive& archive) {
  for (const auto& p : module.named_parameters(true)) archive.tensors[prefix + p.key()] = p.value();
  for (const auto& b : module.named_buffers(true)) archive.tensors[prefix + b.key()] = b.value();
}

void import_module(torch::nn::Module& module, const std::string& prefix, const Archive& archive) {
  torch::NoGradGuard no_grad;
  auto load = [&](const std::string& key, torch::Tensor& dst) {
    const auto it = archive.tensors.find(prefix + key);
    if (it == archive.tensors.end()) {
      throw CheckpointError(fmt::format("checkpoint is missing tensor '{}{}'", prefix, key));
    }
    if (!it->second.sizes().equals(dst.sizes())) {
      throw CheckpointError(fmt::format("tensor '{}{}' has shape {}, expected {}", prefix, key,
                                        c10::str(it->second.sizes()), c10::str(dst.sizes())));
    }
    dst.copy_(it->second);
  };
  for (auto& p : module.named_parameters(true)) load(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) load(b.key(), b.value());
}

}  // namespace anonypose
