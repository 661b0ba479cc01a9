#include "rawdrift/raw_io.hpp"

#include <png.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <fstream>
#include <sstream>

#include "rawdrift/error.hpp"

namespace fs = std::filesystem;

namespace rawdrift {

CfaLayout::CfaLayout(std::array<Channel, 4> sites) : sites_(sites) {
  const auto r = std::count(sites.begin(), sites.end(), Channel::R);
  const auto g = std::count(sites.begin(), sites.end(), Channel::G);
  const auto b = std::count(sites.begin(), sites.end(), Channel::B);
  if (r != 1 || g != 2 || b != 1) {
    fail(ErrorCode::Config, "CFA cell must hold one R, one B and two G");
  }
}

CfaLayout CfaLayout::bggr() { return CfaLayout({Channel::B, Channel::G, Channel::G, Channel::R}); }
CfaLayout CfaLayout::rggb() { return CfaLayout({Channel::R, Channel::G, Channel::G, Channel::B}); }
CfaLayout CfaLayout::grbg() { return CfaLayout({Channel::G, Channel::R, Channel::B, Channel::G}); }
CfaLayout CfaLayout::gbrg() { return CfaLayout({Channel::G, Channel::B, Channel::R, Channel::G}); }

CfaLayout CfaLayout::parse(std::string_view name) {
  if (name.size() != 4) fail(ErrorCode::Config, "CFA pattern must have four letters: " + std::string(name));
  std::array<Channel, 4> sites{};
  for (std::size_t i = 0; i < 4; ++i) {
    switch (name[i]) {
      case 'R': case 'r': sites[i] = Channel::R; break;
      case 'G': case 'g': sites[i] = Channel::G; break;
      case 'B': case 'b': sites[i] = Channel::B; break;
      default: fail(ErrorCode::Config, "bad CFA letter in " + std::string(name));
    }
  }
  return CfaLayout(sites);
}

std::array<int, 4> CfaLayout::site_channels() const {
  std::array<int, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) out[i] = static_cast<int>(sites_[i]);
  return out;
}

std::string CfaLayout::name() const {
  std::string s;
  for (Channel c : sites_) s += "RGB"[static_cast<int>(c)];
  return s;
}

void RawImage::validate() const {
  if (data.rank() != 2) fail(ErrorCode::Shape, "raw image must be H×W, got " + shape_string(data.shape()));
  if (height() % 2 || width() % 2) {
    fail(ErrorCode::FormatOddDimensions, "raw image sides must be even, got " + shape_string(data.shape()));
  }
  for (double v : data.values()) {
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::Domain, "raw values must lie in [0, 1]");
  }
}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::BlackLevel: return "black_level";
    case Stage::Demosaic: return "demosaic";
    case Stage::WhiteBalance: return "white_balance";
    case Stage::ColorCorrect: return "color_correct";
    case Stage::Yuv: return "yuv";
    case Stage::Sharpen: return "sharpen";
    case Stage::Denoise: return "denoise";
    case Stage::Gamma: return "gamma";
    case Stage::Standardized: return "standardized";
    case Stage::External: return "external";
  }
  return "unknown";
}

std::uint16_t quantize16(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint16_t>(std::floor(c * 65535.0 + 0.5));
}

fs::path sidecar_path(const fs::path& raw_path) {
  fs::path p = raw_path;
  p.replace_extension(".yaml");
  return p;
}

namespace {

fs::path mask_path_for(const fs::path& raw_path) {
  fs::path p = raw_path;
  p.replace_filename(raw_path.stem().string() + "_mask.png");
  return p;
}

// PGM header token reader: skips whitespace and '#' comments.
std::string next_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(start, pos - start);
}

std::size_t parse_dim(const std::string& tok, const fs::path& path) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit)) {
    fail(ErrorCode::FormatMagic, "malformed PGM header in " + path.string());
  }
  return static_cast<std::size_t>(std::stoull(tok));
}

struct PngWriteState {
  std::string bytes;
};

void png_write_to_string(png_structp png, png_bytep data, png_size_t len) {
  auto* state = static_cast<PngWriteState*>(png_get_io_ptr(png));
  state->bytes.append(reinterpret_cast<const char*>(data), len);
}

void png_flush_noop(png_structp) {}

// Encodes interleaved rows; bit_depth 8 or 16, channels 1 or 3.
std::string encode_png(const std::vector<std::uint8_t>& rows, std::size_t width, std::size_t height,
                       int bit_depth, int channels) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Io, "libpng initialisation failed");
  }
  PngWriteState state;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Io, "PNG encoding failed");
  }
  png_set_write_fn(png, &state, png_write_to_string, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = width * static_cast<std::size_t>(channels) * (bit_depth / 8);
  for (std::size_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(rows.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return std::move(state.bytes);
}

struct DecodedPng {
  std::size_t width = 0, height = 0;
  int bit_depth = 0, channels = 0;
  std::vector<std::uint8_t> rows;  // big-endian samples for 16-bit
};

DecodedPng decode_png(const fs::path& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) fail(ErrorCode::Io, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    fail(ErrorCode::Io, "libpng initialisation failed");
  }
  DecodedPng out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    fail(ErrorCode::FormatMagic, "not a readable PNG: " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    fail(ErrorCode::FormatMagic, "unsupported PNG colour type in " + path.string());
  }
  out.channels = color == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t stride = png_get_rowbytes(png, info);
  out.rows.resize(stride * out.height);
  for (std::size_t y = 0; y < out.height; ++y) png_read_row(png, out.rows.data() + y * stride, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return out;
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::Io, "short write to " + path.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::Io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

RawImage load_raw(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  if (next_token(bytes, pos) != "P5") fail(ErrorCode::FormatMagic, "not a binary PGM: " + path.string());
  const std::size_t width = parse_dim(next_token(bytes, pos), path);
  const std::size_t height = parse_dim(next_token(bytes, pos), path);
  const std::size_t maxval = parse_dim(next_token(bytes, pos), path);
  if (maxval != 65535) {
    fail(ErrorCode::FormatMaxval, "PGM maxval must be 65535, got " + std::to_string(maxval));
  }
  if (width % 2 || height % 2 || width == 0 || height == 0) {
    fail(ErrorCode::FormatOddDimensions, "raw dimensions must be even and non-zero, got " +
                                             std::to_string(width) + "x" + std::to_string(height));
  }
  ++pos;  // single whitespace byte after maxval
  if (bytes.size() < pos + width * height * 2) {
    fail(ErrorCode::FormatTruncated, "PGM pixel data truncated in " + path.string());
  }
  Tensor data(Shape{height, width});
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t i = 0; i < width * height; ++i) {
    const unsigned stored = (static_cast<unsigned>(px[2 * i]) << 8) | px[2 * i + 1];
    data[i] = static_cast<double>(stored) / 65535.0;
  }

  const fs::path side = sidecar_path(path);
  if (!fs::exists(side)) fail(ErrorCode::MissingSidecar, "missing sidecar " + side.string());
  RawImage image{std::move(data), CfaLayout::bggr(), {}};
  try {
    const YAML::Node doc = YAML::LoadFile(side.string());
    for (const auto& kv : doc) {
      const auto key = kv.first.as<std::string>();
      if (key != "schema" && key != "cfa" && key != "label" && key != "provenance") {
        fail(ErrorCode::Sidecar, "unknown sidecar key '" + key + "' in " + side.string());
      }
    }
    if (doc["schema"] && doc["schema"].as<std::string>() != "rawdrift.raw_sidecar/1") {
      fail(ErrorCode::Sidecar, "unsupported sidecar schema in " + side.string());
    }
    if (!doc["cfa"]) fail(ErrorCode::Sidecar, "sidecar lacks cfa: " + side.string());
    image.cfa = CfaLayout::parse(doc["cfa"].as<std::string>());
    if (const YAML::Node label = doc["label"]) {
      if (label["class"]) image.label.class_id = label["class"].as<int>();
      if (label["mask"]) {
        Tensor mask = load_mask(side.parent_path() / label["mask"].as<std::string>());
        if (mask.shape() != image.data.shape()) fail(ErrorCode::Sidecar, "mask shape differs from raw");
        image.label.mask = std::move(mask);
      }
    }
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::Sidecar, "malformed sidecar " + side.string() + ": " + e.what());
  }
  return image;
}

void write_raw(const RawImage& image, const fs::path& path, std::string_view provenance) {
  image.validate();
  std::string bytes = "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) +
                      "\n65535\n";
  bytes.reserve(bytes.size() + image.data.size() * 2);
  for (double v : image.data.values()) {
    const std::uint16_t q = quantize16(v);
    bytes.push_back(static_cast<char>(q >> 8));
    bytes.push_back(static_cast<char>(q & 0xff));
  }
  write_file_atomic(path, bytes);

  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "schema" << YAML::Value << "rawdrift.raw_sidecar/1";
  out << YAML::Key << "cfa" << YAML::Value << image.cfa.name();
  if (image.label.class_id || image.label.mask) {
    out << YAML::Key << "label" << YAML::Value << YAML::BeginMap;
    if (image.label.class_id) out << YAML::Key << "class" << YAML::Value << *image.label.class_id;
    if (image.label.mask) {
      const fs::path mp = mask_path_for(path);
      write_mask(*image.label.mask, mp);
      out << YAML::Key << "mask" << YAML::Value << mp.filename().string();
    }
    out << YAML::EndMap;
  }
  if (!provenance.empty()) out << YAML::Key << "provenance" << YAML::Value << std::string(provenance);
  out << YAML::EndMap;
  write_file_atomic(sidecar_path(path), std::string(out.c_str()) + "\n");
}

void write_rgb(const RgbImage& image, const fs::path& path) {
  const Tensor& d = image.data;
  if (d.rank() != 3 || d.dim(0) != 3) fail(ErrorCode::Shape, "write_rgb needs 3×H×W");
  const std::size_t h = d.dim(1), w = d.dim(2), plane = h * w;
  std::vector<std::uint8_t> rows(plane * 6);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::uint16_t q = quantize16(d[c * plane + i]);
      rows[i * 6 + c * 2] = static_cast<std::uint8_t>(q >> 8);
      rows[i * 6 + c * 2 + 1] = static_cast<std::uint8_t>(q & 0xff);
    }
  }
  write_file_atomic(path, encode_png(rows, w, h, 16, 3));
}

RgbImage load_rgb(const fs::path& path) {
  const DecodedPng png = decode_png(path);
  if (png.bit_depth != 16 || png.channels != 3) {
    fail(ErrorCode::FormatMagic, "expected a 16-bit RGB PNG: " + path.string());
  }
  const std::size_t plane = png.width * png.height;
  Tensor data(Shape{3, png.height, png.width});
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const unsigned q = (static_cast<unsigned>(png.rows[i * 6 + c * 2]) << 8) | png.rows[i * 6 + c * 2 + 1];
      data[c * plane + i] = static_cast<double>(q) / 65535.0;
    }
  }
  return RgbImage{std::move(data), Stage::External};
}

void write_mask(const Tensor& mask, const fs::path& path) {
  if (mask.rank() != 2) fail(ErrorCode::Shape, "mask must be H×W");
  std::vector<std::uint8_t> rows(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) rows[i] = mask[i] >= 0.5 ? 255 : 0;
  write_file_atomic(path, encode_png(rows, mask.dim(1), mask.dim(0), 8, 1));
}

Tensor load_mask(const fs::path& path) {
  const DecodedPng png = decode_png(path);
  if (png.bit_depth != 8 || png.channels != 1) {
    fail(ErrorCode::FormatMagic, "expected an 8-bit grayscale mask PNG: " + path.string());
  }
  Tensor mask(Shape{png.height, png.width});
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = png.rows[i] >= 128 ? 1.0 : 0.0;
  return mask;
}

RawImage mosaic(const RgbImage& image, const CfaLayout& cfa) {
  const Tensor& d = image.data;
  if (d.rank() != 3 || d.dim(0) != 3) fail(ErrorCode::Shape, "mosaic needs 3×H×W");
  const std::size_t h = d.dim(1), w = d.dim(2);
  if (h % 2 || w % 2) fail(ErrorCode::FormatOddDimensions, "mosaic needs even sides");
  Tensor raw(Shape{h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      raw[y * w + x] = d[(static_cast<std::size_t>(cfa.at(y, x)) * h + y) * w + x];
    }
  }
  return RawImage{std::move(raw), cfa, {}};
}

}  // namespace rawdrift
