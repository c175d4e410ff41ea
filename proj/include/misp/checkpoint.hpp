// Copyright (c) 2026 The misp authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstring>
#include <string>

#include <nlohmann/json.hpp>

#include "misp/io.hpp"
#include "misp/params.hpp"

namespace misp {

// Checkpoint container: magic "MCKP", u32le version, u64le header length,
// JSON header (tensor manifest, config snapshot, epoch, RNG state), then
// all tensors as one concatenated f32le blob in manifest order. The same
// model state always serializes to the same bytes.

struct CheckpointMeta {
  nlohmann::json config;
  int epoch = 0;
  std::string rng_state;
};

namespace detail {

inline void put_u64le(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

inline std::uint64_t get_u64le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store,
                     const CheckpointMeta& meta) {
  nlohmann::json header;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& e : store.manifest()) {
    manifest.push_back({{"name", e.name},
                        {"shape", {e.shape.n, e.shape.c, e.shape.h,
                                   e.shape.w}},
                        {"dtype", e.dtype},
                        {"offset", e.offset}});
  }
  header["manifest"] = manifest;
  header["config"] = meta.config;
  header["epoch"] = meta.epoch;
  header["rng"] = meta.rng_state;
  const std::string header_str = header.dump();

  std::vector<unsigned char> bytes;
  bytes.insert(bytes.end(), {'M', 'C', 'K', 'P'});
  detail::put_u32le(bytes, 1);
  detail::put_u64le(bytes, header_str.size());
  bytes.insert(bytes.end(), header_str.begin(), header_str.end());
  for (const auto& e : store.entries()) {
    for (const T v : e.var.val().data) detail::put_f32le(bytes, float(v));
  }
  detail::write_file_bytes(path, bytes);
}

// Reads just the JSON header, e.g. to recover the config snapshot before a
// model exists to load into.
inline nlohmann::json read_checkpoint_header(const std::string& path) {
  auto bytes = detail::read_file_bytes(path);
  check<LoadError>(bytes.size() >= 16 &&
                       std::memcmp(bytes.data(), "MCKP", 4) == 0,
                   "checkpoint '", path, "' has wrong magic or is truncated");
  const std::uint64_t hlen = detail::get_u64le(bytes.data() + 8);
  check<LoadError>(bytes.size() >= 16 + hlen, "checkpoint '", path,
                   "': truncated header");
  try {
    return nlohmann::json::parse(
        bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(strcat("checkpoint '", path, "': bad header JSON: ",
                           e.what()));
  }
}

// Loads a checkpoint into a store built from the same configuration. The
// manifest must match the store entry for entry (names, order, shapes);
// any mismatch is a LoadError naming the first offender.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<T>& store) {
  auto bytes = detail::read_file_bytes(path);
  check<LoadError>(bytes.size() >= 16 &&
                       std::memcmp(bytes.data(), "MCKP", 4) == 0,
                   "checkpoint '", path, "' has wrong magic or is truncated");
  const std::uint32_t version = detail::get_u32le(bytes.data() + 4);
  check<LoadError>(version == 1, "checkpoint '", path,
                   "': unsupported version ", version);
  const std::uint64_t hlen = detail::get_u64le(bytes.data() + 8);
  check<LoadError>(bytes.size() >= 16 + hlen, "checkpoint '", path,
                   "': truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16,
                                   bytes.begin() + 16 + std::ptrdiff_t(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(strcat("checkpoint '", path, "': bad header JSON: ",
                           e.what()));
  }

  const auto want = store.manifest();
  const auto& manifest = header.at("manifest");
  check<LoadError>(manifest.size() == want.size(), "checkpoint '", path,
                   "' holds ", manifest.size(), " tensors but the model has ",
                   want.size());
  std::uint64_t total = 0;
  for (size_t i = 0; i < want.size(); ++i) {
    const auto& m = manifest[i];
    const std::string name = m.at("name").get<std::string>();
    check<LoadError>(name == want[i].name, "checkpoint '", path,
                     "': tensor ", i, " is '", name, "', model expects '",
                     want[i].name, "'");
    const auto sh = m.at("shape").get<std::vector<int>>();
    const Shape ws = want[i].shape;
    check<LoadError>(sh.size() == 4 && sh[0] == ws.n && sh[1] == ws.c &&
                         sh[2] == ws.h && sh[3] == ws.w,
                     "checkpoint '", path, "': shape mismatch for '", name,
                     "'");
    check<LoadError>(m.at("dtype").get<std::string>() == "f32",
                     "checkpoint '", path, "': unsupported dtype for '", name,
                     "'");
    check<LoadError>(m.at("offset").get<std::uint64_t>() == want[i].offset,
                     "checkpoint '", path, "': offset mismatch for '", name,
                     "'");
    total += std::uint64_t(ws.numel()) * 4;
  }
  check<LoadError>(bytes.size() == 16 + hlen + total, "checkpoint '", path,
                   "': blob size mismatch");

  const unsigned char* blob = bytes.data() + 16 + hlen;
  for (const auto& e : store.entries()) {
    Tensor<T>& dst = e.var.mutable_val();
    const unsigned char* src = blob;
    blob += std::uint64_t(dst.numel()) * 4;
    for (size_t i = 0; i < dst.data.size(); ++i) {
      dst.data[i] = T(detail::get_f32le(src + i * 4));
    }
  }

  CheckpointMeta meta;
  meta.config = header.value("config", nlohmann::json::object());
  meta.epoch = header.value("epoch", 0);
  meta.rng_state = header.value("rng", std::string());
  return meta;
}

}  // namespace misp
