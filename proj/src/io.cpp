#include "edfusion/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "edfusion/error.hpp"

namespace edfusion::io {

namespace {

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

[[noreturn]] void malformed(const fs::path& path, const std::string& what) {
  throw Error(ErrorCode::MalformedInput, path.string() + ": " + what);
}

// Next whitespace-delimited PNM header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

struct PnmHeader {
  int width = 0, height = 0, maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const fs::path& path, const char* magic) {
  if (pnm_token(in) != magic) malformed(path, std::string("expected ") + magic + " header");
  PnmHeader h;
  try {
    h.width = std::stoi(pnm_token(in));
    h.height = std::stoi(pnm_token(in));
    h.maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    malformed(path, "bad header fields");
  }
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) malformed(path, "bad header values");
  return h;
}

template <typename T>
void put_le(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const fs::path& path) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) malformed(path, "unexpected end of data");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

DepthImage read_depth_pgm(const fs::path& path) {
  auto in = open_in(path);
  const PnmHeader h = read_pnm_header(in, path, "P5");
  const bool wide = h.maxval > 255;
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  std::vector<unsigned char> raw(n * (wide ? 2 : 1));
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    malformed(path, "truncated pixel data");
  DepthImage d(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = wide ? (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1] : raw[i];
    d[i] = v * 0.01;
  }
  return d;
}

void write_depth_pgm(const fs::path& path, const DepthImage& depth) {
  auto out = open_out(path);
  out << "P5\n" << depth.width() << ' ' << depth.height() << "\n65535\n";
  std::vector<unsigned char> raw(depth.size() * 2);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double units = std::round(depth[i] * 100.0);
    const auto v = static_cast<std::uint16_t>(std::clamp(std::isfinite(units) ? units : 0.0, 0.0, 65535.0));
    raw[2 * i] = static_cast<unsigned char>(v >> 8);
    raw[2 * i + 1] = static_cast<unsigned char>(v & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

DepthImage read_depth_raw(const fs::path& path) {
  fs::path hdr = path;
  hdr += ".hdr";
  auto hin = open_in(hdr);
  int w = 0, h = 0;
  std::string key;
  int value;
  while (hin >> key >> value) {
    if (key == "width") w = value;
    else if (key == "height") h = value;
  }
  if (w <= 0 || h <= 0) malformed(hdr, "missing width/height");
  auto in = open_in(path);
  DepthImage d(w, h);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const float v = get_le<float>(in, path);
    d[i] = std::isfinite(v) && v > 0.0f ? double(v) : 0.0;
  }
  return d;
}

void write_depth_raw(const fs::path& path, const DepthImage& depth) {
  fs::path hdr = path;
  hdr += ".hdr";
  auto hout = open_out(hdr);
  hout << "width " << depth.width() << "\nheight " << depth.height() << "\n";
  auto out = open_out(path);
  for (std::size_t i = 0; i < depth.size(); ++i) put_le<float>(out, static_cast<float>(depth[i]));
}

RgbImage read_ppm(const fs::path& path) {
  auto in = open_in(path);
  const PnmHeader h = read_pnm_header(in, path, "P6");
  if (h.maxval != 255) malformed(path, "only maxval 255 is supported");
  RgbImage img(h.width, h.height);
  if (!in.read(reinterpret_cast<char*>(img.data().data()), static_cast<std::streamsize>(img.size() * 3)))
    malformed(path, "truncated pixel data");
  return img;
}

void write_ppm(const fs::path& path, const RgbImage& rgb) {
  auto out = open_out(path);
  out << "P6\n" << rgb.width() << ' ' << rgb.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data().data()), static_cast<std::streamsize>(rgb.size() * 3));
}

CameraIntrinsics read_intrinsics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedInput, "missing intrinsics file " + path.string());
  CameraIntrinsics intr;
  if (!(in >> intr.fx >> intr.fy >> intr.cx >> intr.cy >> intr.width >> intr.height))
    malformed(path, "expected \"fx fy cx cy width height\"");
  try {
    intr.validate();
  } catch (const Error& e) {
    malformed(path, e.what());
  }
  return intr;
}

void write_intrinsics(const fs::path& path, const CameraIntrinsics& intr) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.precision(17);
  out << intr.fx << ' ' << intr.fy << ' ' << intr.cx << ' ' << intr.cy << ' ' << intr.width << ' ' << intr.height
      << '\n';
}

void write_ply(const fs::path& path, const SurfelCloud& cloud, PlyFormat format) {
  auto out = open_out(path);
  const bool ascii = format == PlyFormat::Ascii;
  out << "ply\nformat " << (ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property float nx\nproperty float ny\nproperty float nz\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "property float weight\nend_header\n";
  if (ascii) {
    out.precision(9);
    for (const Surfel& s : cloud.surfels()) {
      out << float(s.position.x()) << ' ' << float(s.position.y()) << ' ' << float(s.position.z()) << ' '
          << float(s.normal.x()) << ' ' << float(s.normal.y()) << ' ' << float(s.normal.z()) << ' ' << int(s.color[0])
          << ' ' << int(s.color[1]) << ' ' << int(s.color[2]) << ' ' << float(s.weight) << '\n';
    }
    return;
  }
  for (const Surfel& s : cloud.surfels()) {
    for (int k = 0; k < 3; ++k) put_le<float>(out, static_cast<float>(s.position[k]));
    for (int k = 0; k < 3; ++k) put_le<float>(out, static_cast<float>(s.normal[k]));
    for (int k = 0; k < 3; ++k) out.put(static_cast<char>(s.color[k]));
    put_le<float>(out, static_cast<float>(s.weight));
  }
}

void write_mesh_ply(const fs::path& path, std::span<const Vec3> vertices, std::span<const std::array<int, 3>> faces) {
  auto out = open_out(path);
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << vertices.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nelement face " << faces.size()
      << "\nproperty list uchar int vertex_indices\nend_header\n";
  for (const Vec3& v : vertices)
    for (int k = 0; k < 3; ++k) put_le<double>(out, v[k]);
  for (const auto& f : faces) {
    out.put(3);
    for (int v : f) put_le<std::int32_t>(out, v);
  }
}

namespace {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType ply_type(const std::string& name, const fs::path& path) {
  static const std::map<std::string, PlyType> types = {
      {"char", PlyType::Int8},     {"int8", PlyType::Int8},       {"uchar", PlyType::UInt8},
      {"uint8", PlyType::UInt8},   {"short", PlyType::Int16},     {"int16", PlyType::Int16},
      {"ushort", PlyType::UInt16}, {"uint16", PlyType::UInt16},   {"int", PlyType::Int32},
      {"int32", PlyType::Int32},   {"uint", PlyType::UInt32},     {"uint32", PlyType::UInt32},
      {"float", PlyType::Float32}, {"float32", PlyType::Float32}, {"double", PlyType::Float64},
      {"float64", PlyType::Float64}};
  const auto it = types.find(name);
  if (it == types.end()) malformed(path, "unknown property type " + name);
  return it->second;
}

double read_binary(std::istream& in, PlyType t, const fs::path& path) {
  switch (t) {
    case PlyType::Int8: return get_le<std::int8_t>(in, path);
    case PlyType::UInt8: return get_le<std::uint8_t>(in, path);
    case PlyType::Int16: return get_le<std::int16_t>(in, path);
    case PlyType::UInt16: return get_le<std::uint16_t>(in, path);
    case PlyType::Int32: return get_le<std::int32_t>(in, path);
    case PlyType::UInt32: return get_le<std::uint32_t>(in, path);
    case PlyType::Float32: return get_le<float>(in, path);
    case PlyType::Float64: return get_le<double>(in, path);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

}  // namespace

PlyData read_ply(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply") malformed(path, "missing ply magic");
  bool ascii = false;
  std::vector<PlyElement> elements;
  bool ended = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") ascii = true;
      else if (fmt != "binary_little_endian") malformed(path, "unsupported format " + fmt);
    } else if (kw == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      if (!ls) malformed(path, "bad element line");
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) malformed(path, "property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = ply_type(ct, path);
        p.type = ply_type(it, path);
      } else {
        p.type = ply_type(t, path);
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (kw == "end_header") {
      ended = true;
      break;
    }
  }
  if (!ended) malformed(path, "missing end_header");

  auto read_value = [&](PlyType t) -> double {
    if (!ascii) return read_binary(in, t, path);
    double v;
    if (!(in >> v)) malformed(path, "unexpected end of data");
    return v;
  };

  PlyData data;
  for (const PlyElement& e : elements) {
    for (std::size_t i = 0; i < e.count; ++i) {
      Surfel s;
      std::vector<int> polygon;
      for (const PlyProperty& p : e.props) {
        if (p.is_list) {
          const auto n = static_cast<long>(read_value(p.count_type));
          if (n < 0) malformed(path, "negative list length");
          std::vector<int> items;
          for (long k = 0; k < n; ++k) items.push_back(static_cast<int>(read_value(p.type)));
          if (p.name == "vertex_indices" || p.name == "vertex_index") polygon = std::move(items);
          continue;
        }
        const double v = read_value(p.type);
        if (e.name != "vertex") continue;
        if (p.name == "x") s.position.x() = v;
        else if (p.name == "y") s.position.y() = v;
        else if (p.name == "z") s.position.z() = v;
        else if (p.name == "nx") s.normal.x() = v;
        else if (p.name == "ny") s.normal.y() = v;
        else if (p.name == "nz") s.normal.z() = v;
        else if (p.name == "red") s.color[0] = static_cast<std::uint8_t>(v);
        else if (p.name == "green") s.color[1] = static_cast<std::uint8_t>(v);
        else if (p.name == "blue") s.color[2] = static_cast<std::uint8_t>(v);
        else if (p.name == "weight") s.weight = v;
      }
      if (e.name == "vertex") {
        if (!s.position.allFinite()) malformed(path, "non-finite vertex");
        data.cloud.push_back(s);
      } else if (e.name == "face" && polygon.size() >= 3) {
        for (std::size_t k = 1; k + 1 < polygon.size(); ++k) data.faces.push_back({polygon[0], polygon[k], polygon[k + 1]});
      }
    }
  }
  const int nv = static_cast<int>(data.cloud.size());
  for (const auto& f : data.faces)
    for (int v : f)
      if (v < 0 || v >= nv) malformed(path, "face index out of range");
  return data;
}

fs::path depth_path(const fs::path& dir, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%06d.depth.pgm", index);
  return dir / buf;
}

fs::path rgb_path(const fs::path& dir, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%06d.rgb.ppm", index);
  return dir / buf;
}

void write_frame(const fs::path& dir, const DepthFrame& frame) {
  fs::create_directories(dir);
  write_depth_pgm(depth_path(dir, frame.frame_index), frame.depth);
  write_ppm(rgb_path(dir, frame.frame_index), frame.rgb);
  if (!fs::exists(dir / kIntrinsicsFile)) write_intrinsics(dir / kIntrinsicsFile, frame.intrinsics);
}

FrameDirectory::FrameDirectory(fs::path dir) : dir_(std::move(dir)) {
  if (!fs::is_directory(dir_)) throw Error(ErrorCode::Io, "not a directory: " + dir_.string());
  const std::regex pattern(R"(frame_(\d{6})\.depth\.(pgm|raw))");
  for (const auto& entry : fs::directory_iterator(dir_)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) indices_.push_back(std::stoi(m[1].str()));
  }
  std::sort(indices_.begin(), indices_.end());
  indices_.erase(std::unique(indices_.begin(), indices_.end()), indices_.end());
  if (!indices_.empty()) intrinsics_ = read_intrinsics(dir_ / kIntrinsicsFile);
}

DepthFrame FrameDirectory::load(int index) const {
  DepthFrame f;
  const fs::path pgm = depth_path(dir_, index);
  if (fs::exists(pgm)) {
    f.depth = read_depth_pgm(pgm);
  } else {
    fs::path raw = pgm;
    raw.replace_extension(".raw");
    f.depth = read_depth_raw(raw);
  }
  const fs::path ppm = rgb_path(dir_, index);
  if (!fs::exists(ppm)) throw Error(ErrorCode::MalformedInput, "missing color image " + ppm.string());
  f.rgb = read_ppm(ppm);
  f.intrinsics = intrinsics_;
  f.frame_index = index;
  try {
    f.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedInput, "frame " + std::to_string(index) + ": " + e.what());
  }
  return f;
}

}  // namespace edfusion::io
