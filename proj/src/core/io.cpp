#include "patchguard/core/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "patchguard/core/errors.hpp"

namespace patchguard {

namespace {

static_assert(std::endian::native == std::endian::little, "SMAP and tensor containers assume a little-endian host");

struct RawPng {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  int bit_depth = 0;
  std::vector<std::uint16_t> samples;  // H*W*C codes
};

struct ReadCursor {
  const unsigned char* data;
  std::size_t size;
  std::size_t pos;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->size) png_error(png, "truncated PNG buffer");
  std::memcpy(out, cur->data + cur->pos, len);
  cur->pos += len;
}

void write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void flush_noop(png_structp) {}

[[noreturn]] void png_error_to_exception(png_structp, png_const_charp msg) { throw FormatError(std::string("png: ") + msg); }

void png_warning_ignore(png_structp, png_const_charp) {}

RawPng decode_raw(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_to_exception, png_warning_ignore);
  if (!png) throw FormatError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  ReadCursor cursor{bytes.data(), bytes.size(), 0};
  png_set_read_fn(png, &cursor, read_from_memory);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  if (width == 0 || height == 0) throw FormatError("zero-area image");
  if (bit_depth != 8 && bit_depth != 16 && color_type != PNG_COLOR_TYPE_PALETTE) {
    throw FormatError("unsupported bit depth " + std::to_string(bit_depth) + " (need 8 or 16)");
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
    bit_depth = 8;
  }
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // host order (little endian)
  png_read_update_info(png, info);

  RawPng raw;
  raw.width = width;
  raw.height = height;
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = bit_depth;
  if (raw.channels != 1 && raw.channels != 3) throw FormatError("unsupported channel count");

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buffer(rowbytes * height);
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());

  const std::size_t n = raw.width * raw.height * raw.channels;
  raw.samples.resize(n);
  if (bit_depth == 8) {
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t i = 0; i < raw.width * raw.channels; ++i)
        raw.samples[y * raw.width * raw.channels + i] = rows[y][i];
  } else {
    for (std::size_t y = 0; y < height; ++y) {
      const auto* row16 = reinterpret_cast<const std::uint16_t*>(rows[y]);
      std::copy(row16, row16 + raw.width * raw.channels, raw.samples.begin() + y * raw.width * raw.channels);
    }
  }
  return raw;
}

std::vector<unsigned char> encode_raw(std::size_t height, std::size_t width, std::size_t channels, int bit_depth,
                                      const std::vector<std::uint16_t>& samples) {
  if (bit_depth != 8 && bit_depth != 16) throw FormatError("bit depth must be 8 or 16");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_to_exception, png_warning_ignore);
  if (!png) throw FormatError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  std::vector<unsigned char> out;
  png_set_write_fn(png, &out, write_to_vector, flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);

  const std::size_t bytes_per_sample = bit_depth == 16 ? 2 : 1;
  const std::size_t rowbytes = width * channels * bytes_per_sample;
  std::vector<unsigned char> row(rowbytes);
  for (std::size_t y = 0; y < height; ++y) {
    const std::uint16_t* src = samples.data() + y * width * channels;
    if (bit_depth == 8) {
      for (std::size_t i = 0; i < width * channels; ++i) row[i] = static_cast<unsigned char>(src[i]);
    } else {
      std::memcpy(row.data(), src, rowbytes);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  return out;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::vector<unsigned char> encode_png(const ImageTensor& img, int bit_depth) {
  const float max_code = bit_depth == 16 ? 65535.0f : 255.0f;
  std::vector<std::uint16_t> samples(img.data().size());
  auto src = img.data();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const float v = std::clamp(src[i], 0.0f, 1.0f);
    samples[i] = static_cast<std::uint16_t>(std::lround(v * max_code));
  }
  return encode_raw(img.height(), img.width(), img.channels(), bit_depth, samples);
}

ImageTensor decode_png(const std::vector<unsigned char>& bytes) {
  RawPng raw = decode_raw(bytes);
  const float max_code = raw.bit_depth == 16 ? 65535.0f : 255.0f;
  std::vector<float> data(raw.samples.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(raw.samples[i]) / max_code;
  return ImageTensor(raw.height, raw.width, raw.channels, std::move(data));
}

std::vector<unsigned char> encode_mask_png(const BinaryMask& mask) {
  std::vector<std::uint16_t> samples(mask.pixels());
  auto src = mask.data();
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = src[i] ? 255 : 0;
  return encode_raw(mask.height(), mask.width(), 1, 8, samples);
}

BinaryMask decode_mask_png(const std::vector<unsigned char>& bytes) {
  RawPng raw = decode_raw(bytes);
  if (raw.channels != 1) throw FormatError("mask PNG must be single-channel");
  BinaryMask mask(raw.height, raw.width);
  auto dst = mask.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = raw.samples[i] != 0 ? 1 : 0;
  return mask;
}

ImageTensor load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing file " + path.string());
  return decode_png(read_file(path));
}

void save_image(const ImageTensor& img, const std::filesystem::path& path, int bit_depth) {
  auto bytes = encode_png(img, bit_depth);
  write_file(path, bytes.data(), bytes.size());
}

BinaryMask load_mask(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing file " + path.string());
  return decode_mask_png(read_file(path));
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  auto bytes = encode_mask_png(mask);
  write_file(path, bytes.data(), bytes.size());
}

std::vector<std::uint8_t> visualize_scoremap(const ScoreMap& map) {
  auto src = map.data();
  std::vector<std::uint8_t> out(src.size(), 0);
  if (src.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(src.begin(), src.end());
  const float lo = *lo_it;
  const float hi = *hi_it;
  if (!(hi > lo)) return out;
  const double span = static_cast<double>(hi) - lo;
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround((static_cast<double>(src[i]) - lo) / span * 255.0));
  }
  return out;
}

std::filesystem::path visualization_path(const std::filesystem::path& scoremap_path) {
  auto p = scoremap_path;
  if (p.extension() == ".png") throw IoError("score map container path must not end in .png");
  p.replace_extension(".png");
  return p;
}

void save_scoremap(const ScoreMap& map, const std::filesystem::path& path) {
  const auto png_path = visualization_path(path);
  std::vector<unsigned char> buf(16 + map.pixels() * sizeof(float));
  std::memcpy(buf.data(), "SMAP", 4);
  const std::array<std::uint32_t, 3> header{static_cast<std::uint32_t>(map.height()),
                                            static_cast<std::uint32_t>(map.width()), 0u};
  std::memcpy(buf.data() + 4, header.data(), 12);
  std::memcpy(buf.data() + 16, map.data().data(), map.pixels() * sizeof(float));
  write_file(path, buf.data(), buf.size());

  auto viz = visualize_scoremap(map);
  std::vector<std::uint16_t> samples(viz.begin(), viz.end());
  auto png = encode_raw(map.height(), map.width(), 1, 8, samples);
  write_file(png_path, png.data(), png.size());
}

ScoreMap load_scoremap(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "SMAP", 4) != 0) throw FormatError("not a SMAP container");
  std::array<std::uint32_t, 3> header{};
  std::memcpy(header.data(), bytes.data() + 4, 12);
  const std::size_t h = header[0];
  const std::size_t w = header[1];
  if (bytes.size() != 16 + h * w * sizeof(float)) throw FormatError("SMAP payload size mismatch");
  std::vector<float> data(h * w);
  std::memcpy(data.data(), bytes.data() + 16, data.size() * sizeof(float));
  return ScoreMap(h, w, std::move(data));
}

}  // namespace patchguard
