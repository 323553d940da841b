/*
 * Copyright (c) 2026 The mmkg-align Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "mmkg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mmkg/errors.hpp"

namespace mmkg {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'K', 'G', 'C', 'K', 'P', 'T'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

  template <class T>
  T get() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }
  void read(char* dst, std::size_t n) {
    if (!is_.read(dst, static_cast<std::streamsize>(n))) {
      throw ParseError(source_ + ": truncated checkpoint");
    }
  }
  std::string string(std::uint64_t limit) {
    const auto n = get<std::uint64_t>();
    if (n > limit) throw ParseError(source_ + ": implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

 private:
  std::istream& is_;
  std::string source_;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IngestError("cannot write " + path.string());
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, ckpt.config_json.size());
  os.write(ckpt.config_json.data(), static_cast<std::streamsize>(ckpt.config_json.size()));
  put<std::uint64_t>(os, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    put<std::uint64_t>(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(os, t.rank());
    for (auto e : t.shape()) put<std::uint64_t>(os, e);
    const auto data = t.data();
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!os) throw IngestError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestError("cannot open checkpoint " + path.string());
  Reader in(is, path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError(path.string() + ": not a checkpoint file");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_json = in.string(1 << 24);
  const auto count = in.get<std::uint64_t>();
  if (count > (1u << 20)) throw ParseError(path.string() + ": implausible tensor count");
  for (std::uint64_t k = 0; k < count; ++k) {
    auto name = in.string(4096);
    const auto rank = in.get<std::uint64_t>();
    if (rank == 0 || rank > 8) throw ParseError(path.string() + ": bad rank for " + name);
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& e : shape) {
      e = in.get<std::uint64_t>();
      if (e == 0 || e > (1ull << 32)) throw ParseError(path.string() + ": bad extent for " + name);
      n *= e;
    }
    if (n > (1ull << 32)) throw ParseError(path.string() + ": tensor " + name + " too large");
    std::vector<double> values(n);
    in.read(reinterpret_cast<char*>(values.data()), n * sizeof(double));
    ckpt.tensors.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(values), true));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw ParseError(path.string() + ": trailing bytes after checkpoint");
  }
  return ckpt;
}

}  // namespace mmkg
