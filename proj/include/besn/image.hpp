#pragma once

// Raster output of grid fields: grayscale for binary states (1 = black),
// a viridis-style colormap for probabilities, small multiples over time.

#include <Eigen/Dense>
#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "besn/error.hpp"
#include "besn/grid.hpp"
#include "besn/io.hpp"

namespace besn {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Sampled viridis anchors at 0, 1/8, ..., 1.
inline Rgb colormap(double v) {
  static constexpr std::array<std::array<double, 3>, 9> anchors{{{68, 1, 84},
                                                                 {71, 44, 122},
                                                                 {59, 81, 139},
                                                                 {44, 113, 142},
                                                                 {33, 144, 141},
                                                                 {39, 173, 129},
                                                                 {92, 200, 99},
                                                                 {170, 220, 50},
                                                                 {253, 231, 37}}};
  v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
  const double pos = v * 8.0;
  const auto lo = std::min<std::size_t>(static_cast<std::size_t>(pos), 7);
  const double f = pos - static_cast<double>(lo);
  auto mix = [&](int c) {
    return static_cast<std::uint8_t>(std::lround(anchors[lo][c] + f * (anchors[lo + 1][c] - anchors[lo][c])));
  };
  return {mix(0), mix(1), mix(2)};
}

enum class FieldKind { State, Probability };

inline constexpr Rgb kInactiveColor{160, 160, 160};
inline constexpr Rgb kBackground{255, 255, 255};

/// RGB raster with the origin at the top-left.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;

  Raster(int w, int h, Rgb fill = kBackground) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
  Rgb& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const Rgb& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

inline Rgb cell_color(double v, FieldKind kind) {
  if (kind == FieldKind::State) return v != 0.0 ? Rgb{0, 0, 0} : Rgb{255, 255, 255};
  return colormap(v);
}

inline void validate_field(const Eigen::VectorXd& values, const GridSpec& grid, FieldKind kind) {
  detail::require_dims(values.size() == grid.size(), "field length does not match grid");
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double v = values(i);
    if (kind == FieldKind::State && v != 0.0 && v != 1.0) throw DimensionError("state field values must be 0 or 1");
    if (kind == FieldKind::Probability && !(v >= 0.0 && v <= 1.0))
      throw DimensionError("probability field values must lie in [0, 1]");
  }
}

inline void draw_field(Raster& img, int x0, int y0, const Eigen::VectorXd& values, const GridSpec& grid,
                       FieldKind kind, int cell_px) {
  for (int i = 0; i < grid.size(); ++i) {
    const Rgb c = grid.is_active(i) ? cell_color(values(i), kind) : kInactiveColor;
    const int cx = x0 + grid.col_of(i) * cell_px;
    const int cy = y0 + grid.row_of(i) * cell_px;
    for (int dy = 0; dy < cell_px; ++dy)
      for (int dx = 0; dx < cell_px; ++dx) img.at(cx + dx, cy + dy) = c;
  }
}

/// Small multiples laid out `per_row` to a row with `gap` pixels between panels.
inline Raster render_panels(const std::vector<Eigen::VectorXd>& fields, const GridSpec& grid, FieldKind kind,
                            int cell_px = 12, int per_row = 4, int gap = 4) {
  if (fields.empty()) throw EmptyInputError("no fields to render");
  if (cell_px < 1 || per_row < 1 || gap < 0) throw ConfigError("invalid panel layout");
  for (const auto& f : fields) validate_field(f, grid, kind);
  const int n = static_cast<int>(fields.size());
  const int cols = std::min(per_row, n);
  const int rows = (n + per_row - 1) / per_row;
  const int pw = grid.cols() * cell_px;
  const int ph = grid.rows() * cell_px;
  Raster img(cols * pw + (cols - 1) * gap, rows * ph + (rows - 1) * gap);
  for (int k = 0; k < n; ++k)
    draw_field(img, (k % per_row) * (pw + gap), (k / per_row) * (ph + gap), fields[k], grid, kind, cell_px);
  return img;
}

inline Raster render_field(const Eigen::VectorXd& values, const GridSpec& grid, FieldKind kind, int cell_px = 12) {
  return render_panels({values}, grid, kind, cell_px, 1, 0);
}

namespace detail {

inline void png_append(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

inline void png_flush_noop(png_structp) {}

}  // namespace detail

/// PNG bytes for an RGB raster with optional tEXt entries.
inline std::string encode_png(const Raster& img, const std::map<std::string, std::string>& text = {}) {
  if (img.width <= 0 || img.height <= 0) throw DimensionError("empty raster");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::string out;
  std::vector<png_byte> row(static_cast<std::size_t>(img.width) * 3);
  std::vector<std::string> keys, values;
  std::vector<png_text> entries;
  for (const auto& [k, v] : text) {
    keys.push_back(k);
    values.push_back(v);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, detail::png_append, detail::png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    png_text t{};
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = keys[i].data();
    t.text = values[i].data();
    t.text_length = values[i].size();
    entries.push_back(t);
  }
  if (!entries.empty()) png_set_text(png, info, entries.data(), static_cast<int>(entries.size()));
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const Rgb& c = img.at(x, y);
      row[3 * x] = c.r;
      row[3 * x + 1] = c.g;
      row[3 * x + 2] = c.b;
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

/// Decodes an 8-bit RGB PNG (as written by encode_png) for pixel probes.
inline Raster decode_png(const std::string& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) throw IoError("not a PNG");
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("PNG decode failed");
  }
  Raster img(static_cast<int>(image.width), static_cast<int>(image.height));
  for (std::size_t k = 0; k < img.pixels.size(); ++k) img.pixels[k] = {buf[3 * k], buf[3 * k + 1], buf[3 * k + 2]};
  return img;
}

inline void write_png(const fs::path& path, const Raster& img, const std::string& config_hash = {}) {
  std::map<std::string, std::string> text;
  if (!config_hash.empty()) text["config_hash"] = config_hash;
  write_file(path, encode_png(img, text));
}

}  // namespace besn
