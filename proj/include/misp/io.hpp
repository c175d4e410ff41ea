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

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "misp/rawdata.hpp"
#include "misp/tensor.hpp"

namespace misp {

namespace detail {

inline void put_u16le(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}

inline void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

inline std::uint16_t get_u16le(const unsigned char* p) {
  return std::uint16_t(p[0] | (std::uint16_t(p[1]) << 8));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

inline void put_f32le(std::vector<unsigned char>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32le(out, bits);
}

inline float get_f32le(const unsigned char* p) {
  std::uint32_t bits = get_u32le(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check<LoadError>(bool(in), "cannot open '", path, "' for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::string& path,
                             const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check<LoadError>(bool(out), "cannot open '", path, "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  check<LoadError>(bool(out), "short write to '", path, "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PNG

// Reads any 8/16-bit gray/palette/RGB/RGBA PNG as (1, 3, H, W) floats in
// [0, 1] (v / 255 after conversion to 8-bit RGB).
inline Tensor<float> read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  check<LoadError>(fp != nullptr, "cannot open PNG '", path, "'");
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw LoadError("libpng initialization failed");
  }
  std::vector<png_bytep> rows;
  std::vector<unsigned char> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw LoadError(strcat("failed to decode PNG '", path, "'"));
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  pixels.resize(size_t(h) * w * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) {
    rows[y] = pixels.data() + size_t(y) * w * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  Tensor<float> out({1, 3, int(h), int(w)});
  for (int c = 0; c < 3; ++c) {
    float* dst = out.plane(0, c);
    for (size_t i = 0; i < size_t(h) * w; ++i) {
      dst[i] = float(pixels[i * 3 + size_t(c)]) / 255.f;
    }
  }
  return out;
}

// Writes (1, 3, H, W) floats as 8-bit RGB: round(v * 255), clamped.
inline void write_png(const std::string& path, const Tensor<float>& img) {
  check<DimensionError>(img.shape.n == 1 && img.shape.c == 3,
                        "write_png: expected (1,3,H,W), got ",
                        img.shape.str());
  const int H = img.shape.h, W = img.shape.w;
  std::vector<unsigned char> pixels(size_t(H) * W * 3);
  for (int c = 0; c < 3; ++c) {
    const float* src = img.plane(0, c);
    for (size_t i = 0; i < size_t(H) * W; ++i) {
      float v = src[i];
      v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      pixels[i * 3 + size_t(c)] =
          (unsigned char)(std::lround(double(v) * 255.0));
    }
  }

  FILE* fp = std::fopen(path.c_str(), "wb");
  check<LoadError>(fp != nullptr, "cannot open PNG '", path, "' for writing");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw LoadError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw LoadError(strcat("failed to encode PNG '", path, "'"));
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(W), png_uint_32(H), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < H; ++y) {
    png_write_row(png, pixels.data() + size_t(y) * W * 3);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// ---------------------------------------------------------------------------
// Raw container: magic "RAWP", version byte, u32le height/width, row-major
// u16le samples. Pattern and levels live in the JSON sidecar next to it.

inline std::string sidecar_path(const std::string& rawp_path) {
  std::filesystem::path p(rawp_path);
  p.replace_extension(".json");
  return p.string();
}

inline void write_rawp(const std::string& path, const RawFrame& raw,
                       const nlohmann::json& extra_sidecar = {}) {
  detail::check_raw(raw);
  const int H = raw.mosaic.shape.h, W = raw.mosaic.shape.w;
  std::vector<unsigned char> bytes;
  bytes.reserve(9 + size_t(H) * W * 2);
  bytes.insert(bytes.end(), {'R', 'A', 'W', 'P'});
  bytes.push_back(1);  // version
  detail::put_u32le(bytes, std::uint32_t(H));
  detail::put_u32le(bytes, std::uint32_t(W));
  const std::uint16_t* src = raw.mosaic.plane(0, 0);
  for (size_t i = 0; i < size_t(H) * W; ++i) detail::put_u16le(bytes, src[i]);
  detail::write_file_bytes(path, bytes);

  nlohmann::json side = extra_sidecar;
  side["bayer_pattern"] = bayer_pattern_name(raw.pattern);
  side["black_level"] = raw.black_level;
  side["white_level"] = raw.white_level;
  std::ofstream out(sidecar_path(path));
  check<LoadError>(bool(out), "cannot write sidecar for '", path, "'");
  out << side.dump(2) << "\n";
}

inline RawFrame read_rawp(const std::string& path,
                          nlohmann::json* sidecar_out = nullptr) {
  auto bytes = detail::read_file_bytes(path);
  check<MetadataError>(bytes.size() >= 13, "raw file '", path,
                       "' truncated header");
  check<MetadataError>(std::memcmp(bytes.data(), "RAWP", 4) == 0,
                       "raw file '", path, "' has wrong magic");
  check<MetadataError>(bytes[4] == 1, "raw file '", path,
                       "': unsupported version ", int(bytes[4]));
  const std::uint32_t H = detail::get_u32le(bytes.data() + 5);
  const std::uint32_t W = detail::get_u32le(bytes.data() + 9);
  check<MetadataError>(H > 0 && W > 0 && H < (1u << 20) && W < (1u << 20),
                       "raw file '", path, "': implausible dims ", H, "x", W);
  check<MetadataError>(bytes.size() == 13 + size_t(H) * W * 2, "raw file '",
                       path, "': payload size mismatch");

  const std::string side_path = sidecar_path(path);
  check<MetadataError>(std::filesystem::exists(side_path),
                       "missing sidecar '", side_path, "' for '", path, "'");
  nlohmann::json side;
  try {
    std::ifstream in(side_path);
    in >> side;
  } catch (const std::exception& e) {
    throw MetadataError(strcat("sidecar '", side_path,
                               "' is not valid JSON: ", e.what()));
  }
  check<MetadataError>(side.contains("bayer_pattern") &&
                           side.contains("black_level") &&
                           side.contains("white_level"),
                       "sidecar '", side_path,
                       "' must define bayer_pattern, black_level, "
                       "white_level");

  RawFrame raw;
  raw.pattern = parse_bayer_pattern(side["bayer_pattern"].get<std::string>());
  raw.black_level = side["black_level"].get<int>();
  raw.white_level = side["white_level"].get<int>();
  raw.mosaic = Tensor<std::uint16_t>({1, 1, int(H), int(W)});
  std::uint16_t* dst = raw.mosaic.plane(0, 0);
  for (size_t i = 0; i < size_t(H) * W; ++i) {
    dst[i] = detail::get_u16le(bytes.data() + 13 + i * 2);
  }
  if (sidecar_out) *sidecar_out = side;
  return raw;
}

// ---------------------------------------------------------------------------
// Flow file: magic "FLO2", u32le height/width, f32le (u, v) interleaved
// per pixel, row-major.

inline void write_flo2(const std::string& path, const Tensor<float>& flow) {
  check<DimensionError>(flow.shape.n == 1 && flow.shape.c == 2,
                        "write_flo2: expected (1,2,H,W), got ",
                        flow.shape.str());
  const int H = flow.shape.h, W = flow.shape.w;
  std::vector<unsigned char> bytes;
  bytes.reserve(12 + size_t(H) * W * 8);
  bytes.insert(bytes.end(), {'F', 'L', 'O', '2'});
  detail::put_u32le(bytes, std::uint32_t(H));
  detail::put_u32le(bytes, std::uint32_t(W));
  const float* u = flow.plane(0, 0);
  const float* v = flow.plane(0, 1);
  for (size_t i = 0; i < size_t(H) * W; ++i) {
    detail::put_f32le(bytes, u[i]);
    detail::put_f32le(bytes, v[i]);
  }
  detail::write_file_bytes(path, bytes);
}

inline Tensor<float> read_flo2(const std::string& path) {
  auto bytes = detail::read_file_bytes(path);
  check<MetadataError>(bytes.size() >= 12 &&
                           std::memcmp(bytes.data(), "FLO2", 4) == 0,
                       "flow file '", path, "' has wrong magic or is "
                       "truncated");
  const std::uint32_t H = detail::get_u32le(bytes.data() + 4);
  const std::uint32_t W = detail::get_u32le(bytes.data() + 8);
  check<MetadataError>(bytes.size() == 12 + size_t(H) * W * 8, "flow file '",
                       path, "': payload size mismatch");
  Tensor<float> flow({1, 2, int(H), int(W)});
  float* u = flow.plane(0, 0);
  float* v = flow.plane(0, 1);
  for (size_t i = 0; i < size_t(H) * W; ++i) {
    u[i] = detail::get_f32le(bytes.data() + 12 + i * 8);
    v[i] = detail::get_f32le(bytes.data() + 12 + i * 8 + 4);
  }
  return flow;
}

// ---------------------------------------------------------------------------
// Dataset directory layout: <dir>/pairs/NNNN.rawp / .json / .target.png /
// .gt.png / .flow.bin

inline nlohmann::json gen_params_to_json(const GenParams& gp) {
  nlohmann::json j;
  j["color_matrix"] = gp.color_matrix;
  j["gamma"] = gp.gamma;
  j["vignette"] = gp.vignette;
  j["shift_x"] = gp.shift_x;
  j["shift_y"] = gp.shift_y;
  j["noise_sigma"] = gp.noise_sigma;
  j["pattern"] = bayer_pattern_name(gp.pattern);
  j["noise_seed"] = gp.noise_seed;
  return j;
}

inline GenParams gen_params_from_json(const nlohmann::json& j) {
  GenParams gp;
  if (j.contains("color_matrix")) {
    auto v = j["color_matrix"].get<std::vector<double>>();
    check<MetadataError>(v.size() == 9, "gen_params: color_matrix must have "
                         "9 entries");
    std::copy(v.begin(), v.end(), gp.color_matrix.begin());
  }
  gp.gamma = j.value("gamma", gp.gamma);
  gp.vignette = j.value("vignette", gp.vignette);
  gp.shift_x = j.value("shift_x", gp.shift_x);
  gp.shift_y = j.value("shift_y", gp.shift_y);
  gp.noise_sigma = j.value("noise_sigma", gp.noise_sigma);
  if (j.contains("pattern")) {
    gp.pattern = parse_bayer_pattern(j["pattern"].get<std::string>());
  }
  gp.noise_seed = j.value("noise_seed", gp.noise_seed);
  return gp;
}

inline std::string pair_stem(const std::string& dir, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return (std::filesystem::path(dir) / "pairs" / buf).string();
}

inline void save_pair(const std::string& dir, int index,
                      const SyntheticPair& pair) {
  std::filesystem::create_directories(std::filesystem::path(dir) / "pairs");
  const std::string stem = pair_stem(dir, index);
  nlohmann::json extra;
  extra["gen_params"] = gen_params_to_json(pair.params);
  write_rawp(stem + ".rawp", pair.raw, extra);
  write_png(stem + ".target.png", pair.target);
  write_png(stem + ".gt.png", pair.aligned_gt);
  write_flo2(stem + ".flow.bin", pair.true_flow);
}

inline SyntheticPair load_pair(const std::string& dir, int index) {
  const std::string stem = pair_stem(dir, index);
  SyntheticPair pair;
  nlohmann::json side;
  pair.raw = read_rawp(stem + ".rawp", &side);
  if (side.contains("gen_params")) {
    pair.params = gen_params_from_json(side["gen_params"]);
  }
  pair.target = read_png(stem + ".target.png");
  pair.aligned_gt = read_png(stem + ".gt.png");
  pair.true_flow = read_flo2(stem + ".flow.bin");
  return pair;
}

inline int dataset_size(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path pairs = fs::path(dir) / "pairs";
  if (!fs::exists(pairs)) return 0;
  int count = 0;
  while (fs::exists(pair_stem(dir, count) + ".rawp")) ++count;
  return count;
}

inline std::vector<SyntheticPair> load_dataset(const std::string& dir) {
  const int n = dataset_size(dir);
  check<LoadError>(n > 0, "no pairs found under '", dir, "/pairs'");
  std::vector<SyntheticPair> out;
  out.reserve(size_t(n));
  for (int i = 0; i < n; ++i) out.push_back(load_pair(dir, i));
  return out;
}

// Deterministic 80/10/10 split of [0, n) by shuffled index.
struct SplitIndices {
  std::vector<int> train, val, test;
};

inline SplitIndices split_indices(int n, std::uint64_t seed) {
  check<ParameterError>(n >= 3, "split_indices: need at least 3 items, got ",
                        n);
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const int n_test = std::max(1, n / 10);
  const int n_val = std::max(1, n / 10);
  const int n_train = n - n_val - n_test;
  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

}  // namespace misp
