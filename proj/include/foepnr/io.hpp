#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "foepnr/errors.hpp"
#include "foepnr/foe.hpp"
#include "foepnr/image.hpp"

namespace foepnr::io {

namespace detail {

inline std::string lower_extension(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

inline void skip_pnm_space(std::istream& is) {
  for (;;) {
    const int c = is.peek();
    if (c == '#') {
      std::string dummy;
      std::getline(is, dummy);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& is, const std::string& path) {
  skip_pnm_space(is);
  int v = -1;
  if (!(is >> v) || v < 0) throw DataError("'" + path + "': malformed PGM header");
  return v;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// Binary (P5) or ASCII (P2) PGM, maxval up to 65535. Values are returned as
// stored (no rescaling).
inline Image read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  char magic[2] = {0, 0};
  is.read(magic, 2);
  if (!is || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '2')) throw DataError("'" + path + "' is not a PGM file");
  const int w = detail::read_pnm_int(is, path);
  const int h = detail::read_pnm_int(is, path);
  const int maxval = detail::read_pnm_int(is, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw DataError("'" + path + "': unsupported PGM header");
  Image img(w, h);
  if (magic[1] == '2') {
    for (auto& v : img) {
      int x = 0;
      if (!(is >> x)) throw DataError("'" + path + "': truncated PGM data");
      v = x;
    }
    return img;
  }
  is.get();  // single whitespace after maxval
  const int bytes = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> buf(img.size() * bytes);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw DataError("'" + path + "': truncated PGM data");
  for (std::size_t i = 0; i < img.size(); ++i)
    img[i] = bytes == 1 ? buf[i] : (buf[2 * i] << 8) | buf[2 * i + 1];
  return img;
}

// Pixels are rounded and clamped to [0, 65535]; 8-bit output when every value
// fits in [0, 255].
inline void write_pgm(const std::string& path, const Image& img) {
  std::vector<std::uint16_t> q(img.size());
  std::uint16_t mx = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(std::round(img[i]), 0.0, 65535.0);
    q[i] = static_cast<std::uint16_t>(v);
    mx = std::max(mx, q[i]);
  }
  const bool wide = mx > 255;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path + "'");
  os << "P5\n" << img.width() << ' ' << img.height() << '\n' << (wide ? 65535 : 255) << '\n';
  std::vector<unsigned char> buf;
  buf.reserve(q.size() * (wide ? 2 : 1));
  for (auto v : q) {
    if (wide) buf.push_back(static_cast<unsigned char>(v >> 8));
    buf.push_back(static_cast<unsigned char>(v & 0xFF));
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("failed writing '" + path + "'");
}

// PNG of any colour type, converted to one gray channel; 16-bit samples are
// kept at full precision.
inline Image read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open '" + path + "'");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw DataError("'" + path + "' is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng: out of memory");
  }
  std::vector<std::vector<unsigned char>> rows;
  int width = 0, height = 0, depth = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("'" + path + "': corrupt PNG data");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  rows.assign(height, std::vector<unsigned char>(rowbytes));
  std::vector<png_bytep> ptrs(height);
  for (int y = 0; y < height; ++y) ptrs[y] = rows[y].data();
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      img.at(y, x) = depth == 16 ? (rows[y][2 * x] << 8) | rows[y][2 * x + 1] : rows[y][x];
  return img;
}

inline void write_png(const std::string& path, const Image& img) {
  std::vector<std::uint16_t> q(img.size());
  std::uint16_t mx = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    q[i] = static_cast<std::uint16_t>(std::clamp(std::round(img[i]), 0.0, 65535.0));
    mx = std::max(mx, q[i]);
  }
  const int depth = mx > 255 ? 16 : 8;
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot write '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng: out of memory");
  }
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width()) * (depth / 8));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width(), img.height(), depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto v = q[static_cast<std::size_t>(y) * img.width() + x];
      if (depth == 16) {
        row[2 * x] = static_cast<unsigned char>(v >> 8);
        row[2 * x + 1] = static_cast<unsigned char>(v & 0xFF);
      } else {
        row[x] = static_cast<unsigned char>(v);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Float image: one text line "FOEF32 <width> <height>" followed by
// width*height little-endian IEEE-754 binary32 values, row-major.
inline void write_float_image(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path + "'");
  os << "FOEF32 " << img.width() << ' ' << img.height() << '\n';
  std::vector<unsigned char> buf(img.size() * 4);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float f = static_cast<float>(img[i]);
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, 4);
    for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("failed writing '" + path + "'");
}

inline Image read_float_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::string line;
  std::getline(is, line);
  std::istringstream hs(line);
  std::string tag;
  int w = 0, h = 0;
  if (!(hs >> tag >> w >> h) || tag != "FOEF32" || w <= 0 || h <= 0) throw DataError("'" + path + "': bad float image header");
  Image img(w, h);
  std::vector<unsigned char> buf(img.size() * 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw DataError("'" + path + "': truncated float image");
  for (std::size_t i = 0; i < img.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[4 * i + b]) << (8 * b);
    float f = 0.0f;
    std::memcpy(&f, &bits, 4);
    img[i] = f;
  }
  return img;
}

inline bool is_float_path(const std::string& path) {
  const auto ext = detail::lower_extension(path);
  return ext == ".f32" || ext == ".flt";
}

// Dispatch on extension: .pgm, .png, .f32/.flt.
inline Image read_image(const std::string& path) {
  const auto ext = detail::lower_extension(path);
  if (ext == ".pgm" || ext == ".pnm") return read_pgm(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".f32" || ext == ".flt") return read_float_image(path);
  throw DataError("'" + path + "': unsupported image format (use .pgm, .png or .f32)");
}

inline void write_image(const std::string& path, const Image& img) {
  const auto ext = detail::lower_extension(path);
  if (ext == ".pgm" || ext == ".pnm") return write_pgm(path, img);
  if (ext == ".png") return write_png(path, img);
  if (ext == ".f32" || ext == ".flt") return write_float_image(path, img);
  throw DataError("'" + path + "': unsupported image format (use .pgm, .png or .f32)");
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Model file:
//   FOE 1
//   <domain> <num_filters> <filter_size> <basis_id> <boundary>
//   <alpha_i> <beta_i1> ... <beta_iNb>        (one line per filter)
inline void write_model(std::ostream& os, const FoEModel& model) {
  model.validate();
  os << "FOE 1\n";
  os << to_string(model.domain) << ' ' << model.num_filters() << ' ' << model.filter_size() << ' ' << model.basis_id
     << ' ' << to_string(model.boundary) << '\n';
  for (std::size_t i = 0; i < model.num_filters(); ++i) {
    os << format_double(model.weights[i]);
    for (double b : model.betas[i]) os << ' ' << format_double(b);
    os << '\n';
  }
}

inline FoEModel read_model(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("FOE 1", 0) != 0) throw DataError("model file: missing 'FOE 1' header");
  if (!std::getline(is, line)) throw DataError("model file: missing description line");
  std::istringstream ds(line);
  std::string domain, basis_id, boundary;
  int nf = 0, m = 0;
  if (!(ds >> domain >> nf >> m >> basis_id >> boundary) || nf <= 0 || m <= 0)
    throw DataError("model file: malformed description line '" + line + "'");
  FoEModel model;
  try {
    model.domain = domain_from_string(domain);
    model.boundary = boundary_from_string(boundary);
    model.basis_id = basis_id;
    model.basis = make_basis(basis_id, m);
  } catch (const InvalidInput& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
  const std::size_t nb = model.basis.size();
  for (int i = 0; i < nf; ++i) {
    if (!std::getline(is, line)) throw DataError("model file: expected " + std::to_string(nf) + " filter lines");
    std::istringstream fs(line);
    double w = 0.0;
    if (!(fs >> w) || !(w > 0.0)) throw DataError("model file: bad weight on filter line " + std::to_string(i + 1));
    std::vector<double> beta(nb);
    for (auto& b : beta)
      if (!(fs >> b)) throw DataError("model file: filter line " + std::to_string(i + 1) + " has too few coefficients");
    std::string extra;
    if (fs >> extra) throw DataError("model file: filter line " + std::to_string(i + 1) + " has too many coefficients");
    model.weights.push_back(w);
    model.betas.push_back(std::move(beta));
  }
  return model;
}

inline void save_model(const std::string& path, const FoEModel& model) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write model '" + path + "'");
  write_model(os, model);
  if (!os) throw DataError("failed writing model '" + path + "'");
}

inline FoEModel load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open model '" + path + "'");
  return read_model(is);
}

// Flat key=value text; '#' starts a comment, blank lines are ignored.
using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::istream& is, const std::string& origin = "config") {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path + "'");
  return parse_key_values(is, path);
}

inline void write_key_values(const std::string& path, const KeyValues& kv) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write '" + path + "'");
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
}

}  // namespace foepnr::io
