#pragma once

// 8-bit grayscale PNG (libpng) and ASCII PGM (P2) codecs.

#include <png.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "agvlab/image.hpp"

namespace agvlab {

namespace detail {

struct PngWriteBuffer {
  std::vector<std::uint8_t>* out;
};

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* buf = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  buf->out->insert(buf->out->end(), data, data + len);
}

inline void png_flush_noop(png_structp) {}

struct PngReadCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_read_from_span(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->size) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->data + cur->pos, len);
  cur->pos += len;
}

[[noreturn]] inline void png_throw(png_structp, png_const_charp msg) { throw ParseError(msg); }
inline void png_warn_silent(png_structp, png_const_charp) {}

}  // namespace detail

/// Encodes an 8-bit grayscale PNG. Output is a pure function of the pixels
/// and the optional text chunks, so identical images give identical bytes.
inline std::vector<std::uint8_t> encode_png(
    const GrayImage& img, const std::vector<std::pair<std::string, std::string>>& text = {}) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_throw,
                                            detail::png_warn_silent);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  detail::PngWriteBuffer buf{&out};
  try {
    png_set_write_fn(png, &buf, detail::png_write_to_vector, detail::png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
                 static_cast<png_uint_32>(img.height()), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_text> chunks(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
      chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
      chunks[i].key = const_cast<char*>(text[i].first.c_str());
      chunks[i].text = const_cast<char*>(text[i].second.c_str());
    }
    if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
    png_write_info(png, info);
    for (int y = 0; y < img.height(); ++y)
      png_write_row(png, const_cast<png_bytep>(img.row(y).data()));
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

/// Decodes any PNG to 8-bit gray (color inputs are reduced with libpng's
/// luma conversion, alpha is dropped).
inline GrayImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    throw ParseError("not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_throw,
                                           detail::png_warn_silent);
  if (!png) throw Error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png_create_info_struct failed");
  }
  detail::PngReadCursor cur{bytes.data(), bytes.size(), 0};
  GrayImage out;
  try {
    png_set_read_fn(png, &cur, detail::png_read_from_span);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<png_size_t>(w))
      throw ParseError("unsupported PNG pixel layout");
    out = GrayImage(w, h);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = &out.at(0, y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline GrayImage load_png(const std::string& path) { return decode_png(read_file_bytes(path)); }

inline void save_png(const std::string& path, const GrayImage& img) {
  write_file_bytes(path, encode_png(img));
}

inline GrayImage binary_to_gray(const BinaryImage& bin) {
  GrayImage g(bin.width(), bin.height());
  auto s = bin.pixels();
  auto d = g.pixels();
  for (std::size_t i = 0; i < s.size(); ++i) d[i] = s[i] ? 255 : 0;
  return g;
}

// ASCII PGM, one image row per text line.
inline std::string encode_pgm(const GrayImage& img) {
  std::ostringstream os;
  os << "P2\n" << img.width() << ' ' << img.height() << "\n255\n";
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (x) os << ' ';
      os << static_cast<int>(img.at(x, y));
    }
    os << '\n';
  }
  return os.str();
}

inline GrayImage decode_pgm(const std::string& text) {
  std::istringstream is(text);
  auto next_token = [&]() -> std::string {
    std::string tok;
    while (is >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return tok;
    }
    throw ParseError("truncated PGM");
  };
  if (next_token() != "P2") throw ParseError("not an ASCII PGM (P2)");
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval <= 0 || maxval > 255) throw ParseError("unsupported PGM maxval");
  GrayImage img(w, h);
  for (auto& p : img.pixels()) {
    const int v = std::stoi(next_token());
    if (v < 0 || v > maxval) throw ParseError("PGM sample out of range");
    p = static_cast<std::uint8_t>(v * 255 / maxval);
  }
  return img;
}

}  // namespace agvlab
