#include "edfusion/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "edfusion/error.hpp"
#include "edfusion/io.hpp"
#include "edfusion/parallel.hpp"

namespace edfusion::sim {

namespace fs = std::filesystem;

void SceneSpec::validate() const {
  if (!(extent_x > 0.0) || !(extent_y > 0.0) || !(distance > 0.0) || !(mesh_spacing > 0.0))
    throw Error(ErrorCode::InvalidArgument, "scene extents, distance and mesh spacing must be > 0");
  if (frames < 1) throw Error(ErrorCode::InvalidArgument, "scene needs at least one frame");
  if (!(control_spacing > 0.0) || !(noise_sigma >= 0.0) || !(displacement_min >= 0.0) ||
      !(displacement_max >= displacement_min))
    throw Error(ErrorCode::InvalidArgument, "invalid control spacing, noise or displacement range");
  if (surface == SurfaceKind::HalfCylinder && !(cylinder_radius > 0.0))
    throw Error(ErrorCode::InvalidArgument, "cylinder radius must be > 0");
  if (texture == TextureKind::Checker && !(checker_cell > 0.0))
    throw Error(ErrorCode::InvalidArgument, "checker cell must be > 0");
  if (texture == TextureKind::Noise && !(noise_scale > 0.0))
    throw Error(ErrorCode::InvalidArgument, "noise scale must be > 0");
  for (const auto& e : events)
    if (!e.displacement.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite scripted displacement");
  intrinsics.validate();
}

// ---------------------------------------------------------------------------
// Scene files

namespace {

using nlohmann::json;

Vec3 vec3_of(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::MalformedInput, "'" + key + "' must be [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

RigidTransform pose_of(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 6)
    throw Error(ErrorCode::MalformedInput, "'" + key + "' must be [rx_deg, ry_deg, rz_deg, tx, ty, tz]");
  return rigid_from_euler_deg(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                              Vec3(j[3].get<double>(), j[4].get<double>(), j[5].get<double>()));
}

template <typename E>
E enum_of(const json& j, const std::string& key, std::initializer_list<std::pair<const char*, E>> names) {
  const std::string s = j.get<std::string>();
  for (const auto& [name, value] : names)
    if (s == name) return value;
  throw Error(ErrorCode::MalformedInput, "unknown value '" + s + "' for '" + key + "'");
}

}  // namespace

SceneSpec parse_scene(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedInput, std::string("scene is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::MalformedInput, "scene must be a JSON object");
  SceneSpec s;
  auto path_of = [&](const json& v) {
    fs::path p = v.get<std::string>();
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "surface")
        s.surface = enum_of<SurfaceKind>(v, key, {{"plane", SurfaceKind::Plane},
                                                  {"sinusoid", SurfaceKind::Sinusoid},
                                                  {"half_cylinder", SurfaceKind::HalfCylinder},
                                                  {"mesh", SurfaceKind::Mesh}});
      else if (key == "mesh_path") s.mesh_path = path_of(v);
      else if (key == "extent_mm") {
        if (!v.is_array() || v.size() != 2) throw Error(ErrorCode::MalformedInput, "'extent_mm' must be [x, y]");
        s.extent_x = v[0].get<double>();
        s.extent_y = v[1].get<double>();
      } else if (key == "distance_mm") s.distance = v.get<double>();
      else if (key == "mesh_spacing_mm") s.mesh_spacing = v.get<double>();
      else if (key == "bump_amplitude_mm") s.bump_amplitude = v.get<double>();
      else if (key == "bump_wavelength_mm") s.bump_wavelength = v.get<double>();
      else if (key == "cylinder_radius_mm") s.cylinder_radius = v.get<double>();
      else if (key == "texture")
        s.texture = enum_of<TextureKind>(
            v, key, {{"checker", TextureKind::Checker}, {"noise", TextureKind::Noise}, {"image", TextureKind::Image}});
      else if (key == "texture_path") s.texture_path = path_of(v);
      else if (key == "checker_cell_mm") s.checker_cell = v.get<double>();
      else if (key == "noise_scale_mm") s.noise_scale = v.get<double>();
      else if (key == "texture_contrast") s.texture_contrast = v.get<double>();
      else if (key == "frames") s.frames = v.get<int>();
      else if (key == "intrinsics") {
        if (!v.is_array() || v.size() != 6)
          throw Error(ErrorCode::MalformedInput, "'intrinsics' must be [fx, fy, cx, cy, width, height]");
        s.intrinsics = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>(),
                        v[3].get<double>(), v[4].get<int>(),    v[5].get<int>()};
      } else if (key == "noise_sigma_mm") s.noise_sigma = v.get<double>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else if (key == "deformation")
        s.deformation = enum_of<DeformationKind>(
            v, key,
            {{"none", DeformationKind::None}, {"random", DeformationKind::Random}, {"scripted", DeformationKind::Scripted}});
      else if (key == "control_spacing_mm") s.control_spacing = v.get<double>();
      else if (key == "displacement_min_mm") s.displacement_min = v.get<double>();
      else if (key == "displacement_max_mm") s.displacement_max = v.get<double>();
      else if (key == "events") {
        for (const auto& e : v) {
          DeformationEvent ev;
          ev.frame = e.at("frame").get<int>();
          ev.control = e.at("control").get<int>();
          ev.displacement = vec3_of(e.at("displacement"), "displacement");
          s.events.push_back(ev);
        }
      } else if (key == "camera_poses") {
        for (const auto& p : v) s.camera_poses.push_back(pose_of(p, key));
      } else if (key == "camera_step") s.camera_step = pose_of(v, key);
      else throw Error(ErrorCode::MalformedInput, "unknown scene key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("bad scene value: ") + e.what());
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedInput, e.what());
  }
  return s;
}

SceneSpec load_scene(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedInput, "cannot read scene " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str(), path.parent_path());
}

// ---------------------------------------------------------------------------
// Geometry and texture

double falloff(double r, double radius) {
  const double s = r / radius;
  if (!(s < 1.0)) return 0.0;
  const double a = 1.0 - s * s;
  return a * a * a;
}

namespace {

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Vec2> texcoords;  // mm in the surface's parameter plane
  std::vector<std::array<int, 3>> triangles;
};

Mesh build_mesh(const SceneSpec& spec) {
  Mesh m;
  if (spec.surface == SurfaceKind::Mesh) {
    io::PlyData ply = io::read_ply(spec.mesh_path);
    if (ply.faces.empty()) throw Error(ErrorCode::MalformedInput, "mesh has no faces: " + spec.mesh_path.string());
    for (const Surfel& s : ply.cloud.surfels()) {
      m.vertices.push_back(s.position);
      m.texcoords.emplace_back(s.position.x(), s.position.y());
    }
    m.triangles = ply.faces;
    return m;
  }
  const int nx = std::max(1, static_cast<int>(std::lround(spec.extent_x / spec.mesh_spacing)));
  const int ny = std::max(1, static_cast<int>(std::lround(spec.extent_y / spec.mesh_spacing)));
  const double theta_max = std::min(spec.extent_x / (2.0 * spec.cylinder_radius), 80.0 * double(EIGEN_PI) / 180.0);
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      const double u = -0.5 * spec.extent_x + spec.extent_x * i / nx;
      const double v = -0.5 * spec.extent_y + spec.extent_y * j / ny;
      Vec3 p;
      Vec2 tc(u, v);
      switch (spec.surface) {
        case SurfaceKind::Plane: p = {u, v, spec.distance}; break;
        case SurfaceKind::Sinusoid: {
          const double k = 2.0 * EIGEN_PI / spec.bump_wavelength;
          p = {u, v, spec.distance - spec.bump_amplitude * std::cos(k * u) * std::cos(k * v)};
          break;
        }
        case SurfaceKind::HalfCylinder: {
          const double theta = -theta_max + 2.0 * theta_max * i / nx;
          const double r = spec.cylinder_radius;
          p = {r * std::sin(theta), v, spec.distance + r - r * std::cos(theta)};
          tc.x() = r * theta;
          break;
        }
        case SurfaceKind::Mesh: break;
      }
      m.vertices.push_back(p);
      m.texcoords.push_back(tc);
    }
  }
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int a = j * (nx + 1) + i, b = a + 1, c = a + nx + 1, d = c + 1;
      m.triangles.push_back({a, b, d});
      m.triangles.push_back({a, d, c});
    }
  return m;
}

std::vector<int> control_vertices(const std::vector<Vec3>& vertices, double spacing) {
  std::vector<int> out;
  for (const auto& group : voxel_groups(vertices, spacing)) out.push_back(group.front());
  return out;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class Texture {
 public:
  explicit Texture(const SceneSpec& spec) : spec_(spec) {
    if (spec.texture == TextureKind::Image) image_ = io::read_ppm(spec.texture_path);
  }

  Rgb8 operator()(const Vec2& tc) const {
    switch (spec_.texture) {
      case TextureKind::Checker: {
        const auto cu = static_cast<long long>(std::floor(tc.x() / spec_.checker_cell));
        const auto cv = static_cast<long long>(std::floor(tc.y() / spec_.checker_cell));
        return tint(((cu + cv) & 1) ? 0.0 : 1.0);
      }
      case TextureKind::Noise: return tint(fractal(tc));
      case TextureKind::Image: {
        const double fx = (tc.x() / spec_.extent_x + 0.5) * image_.width();
        const double fy = (tc.y() / spec_.extent_y + 0.5) * image_.height();
        const int x = ((static_cast<int>(std::floor(fx)) % image_.width()) + image_.width()) % image_.width();
        const int y = ((static_cast<int>(std::floor(fy)) % image_.height()) + image_.height()) % image_.height();
        return image_(x, y);
      }
    }
    return {0, 0, 0};
  }

 private:
  // Tissue-like palette; g in [0, 1] is scaled about 0.5 by the contrast.
  Rgb8 tint(double g) const {
    g = std::clamp(0.5 + spec_.texture_contrast * (g - 0.5), 0.0, 1.0);
    auto c = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); };
    return {c(70.0 + 180.0 * g), c(30.0 + 150.0 * g), c(35.0 + 130.0 * g)};
  }

  double lattice(long long x, long long y, int octave) const {
    std::uint64_t h = mix(spec_.seed ^ mix(static_cast<std::uint64_t>(x) * 0x100000001B3ull ^
                                           mix(static_cast<std::uint64_t>(y) + 0x632BE59BD9B4E019ull * (octave + 1))));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  }

  double value_noise(const Vec2& p, int octave) const {
    const double fx = std::floor(p.x()), fy = std::floor(p.y());
    const auto ix = static_cast<long long>(fx), iy = static_cast<long long>(fy);
    auto smooth = [](double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); };
    const double tx = smooth(p.x() - fx), ty = smooth(p.y() - fy);
    const double a = lattice(ix, iy, octave), b = lattice(ix + 1, iy, octave);
    const double c = lattice(ix, iy + 1, octave), d = lattice(ix + 1, iy + 1, octave);
    return (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
  }

  double fractal(const Vec2& tc) const {
    constexpr double amp[3] = {0.5, 0.3, 0.2};
    double v = 0.0;
    for (int o = 0; o < 3; ++o) v += amp[o] * value_noise(tc / (spec_.noise_scale * (4 >> o)), o);
    // Sums of lattice noise cluster around 0.5; stretch toward the full range.
    return std::clamp(0.5 + 1.8 * (v - 0.5), 0.0, 1.0);
  }

  const SceneSpec& spec_;
  RgbImage image_;
};

struct Render {
  DepthImage depth;
  RgbImage rgb;
  MaterialMap material;
};

Render rasterize(const std::vector<Vec3>& world, const Mesh& mesh, const RigidTransform& pose,
                 const CameraIntrinsics& intr, const Texture& texture) {
  const int w = intr.width, h = intr.height;
  Render out;
  out.depth = DepthImage(w, h, 0.0);
  out.rgb = RgbImage(w, h, Rgb8{0, 0, 0});
  out.material.triangle = Image<int>(w, h, -1);
  out.material.barycentric = Image<Vec3>(w, h, Vec3::Zero());

  const RigidTransform to_cam = pose.inverse();
  std::vector<Vec3> cam(world.size());
  for (std::size_t i = 0; i < world.size(); ++i) cam[i] = to_cam(world[i]);

  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Vec3& p0 = cam[tri[0]];
    const Vec3& p1 = cam[tri[1]];
    const Vec3& p2 = cam[tri[2]];
    if (p0.z() <= 1e-6 || p1.z() <= 1e-6 || p2.z() <= 1e-6) continue;
    const Vec2 s0 = project_unchecked(intr, p0), s1 = project_unchecked(intr, p1), s2 = project_unchecked(intr, p2);
    const double area = (s1 - s0).x() * (s2 - s0).y() - (s1 - s0).y() * (s2 - s0).x();
    if (std::abs(area) < 1e-12) continue;
    const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({s0.x(), s1.x(), s2.x()}))));
    const int x1 = std::min(w - 1, static_cast<int>(std::floor(std::max({s0.x(), s1.x(), s2.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({s0.y(), s1.y(), s2.y()}))));
    const int y1 = std::min(h - 1, static_cast<int>(std::floor(std::max({s0.y(), s1.y(), s2.y()}))));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Vec2 q(x, y);
        auto edge = [&](const Vec2& a, const Vec2& b) {
          return ((b - a).x() * (q - a).y() - (b - a).y() * (q - a).x()) / area;
        };
        const double b0 = edge(s1, s2), b1 = edge(s2, s0), b2 = edge(s0, s1);
        constexpr double kTol = -1e-9;
        if (b0 < kTol || b1 < kTol || b2 < kTol) continue;
        // Perspective-correct interpolation: 1/z is affine in screen space.
        const double q0 = b0 / p0.z(), q1 = b1 / p1.z(), q2 = b2 / p2.z();
        const double z = 1.0 / (q0 + q1 + q2);
        double& zb = out.depth(x, y);
        if (zb != 0.0 && !(z < zb)) continue;
        zb = z;
        const Vec3 bary(q0 * z, q1 * z, q2 * z);
        out.material.triangle(x, y) = static_cast<int>(t);
        out.material.barycentric(x, y) = bary;
        const Vec2 tc = bary[0] * mesh.texcoords[tri[0]] + bary[1] * mesh.texcoords[tri[1]] +
                        bary[2] * mesh.texcoords[tri[2]];
        out.rgb(x, y) = texture(tc);
      }
    }
  }
  return out;
}

bool in_view(const Vec3& world, const RigidTransform& pose, const CameraIntrinsics& intr, double margin) {
  const Vec3 c = pose.inverse()(world);
  if (!(c.z() > 0.0)) return false;
  const Vec2 uv = project_unchecked(intr, c);
  return uv.x() >= margin * intr.width && uv.x() <= (1.0 - margin) * intr.width - 1 &&
         uv.y() >= margin * intr.height && uv.y() <= (1.0 - margin) * intr.height - 1;
}

}  // namespace

Sequence generate(const SceneSpec& spec) {
  spec.validate();
  const Mesh mesh = build_mesh(spec);
  const Texture texture(spec);
  Sequence seq;
  GroundTruth& truth = seq.truth;
  truth.triangles = mesh.triangles;
  truth.control_vertices = control_vertices(mesh.vertices, spec.control_spacing);
  const double radius = 3.0 * spec.control_spacing;

  std::mt19937_64 script_rng(mix(spec.seed ^ 0x5C819B7Dull));
  std::vector<Vec3> current = mesh.vertices;
  RigidTransform pose;
  for (int f = 0; f < spec.frames; ++f) {
    if (f < static_cast<int>(spec.camera_poses.size())) pose = spec.camera_poses[static_cast<std::size_t>(f)];
    else if (f > 0) pose = pose * spec.camera_step;

    std::vector<DeformationEvent> events;
    if (spec.deformation == DeformationKind::Scripted) {
      for (const auto& e : spec.events)
        if (e.frame == f) events.push_back(e);
    } else if (spec.deformation == DeformationKind::Random && f > 0) {
      std::vector<int> candidates;
      for (std::size_t c = 0; c < truth.control_vertices.size(); ++c)
        if (in_view(current[truth.control_vertices[c]], pose, spec.intrinsics, 0.2)) candidates.push_back(int(c));
      if (candidates.empty())
        for (std::size_t c = 0; c < truth.control_vertices.size(); ++c) candidates.push_back(int(c));
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::uniform_real_distribution<double> magnitude(spec.displacement_min, spec.displacement_max);
      DeformationEvent e;
      e.frame = f;
      e.control = candidates[pick(script_rng)];
      Vec3 dir;
      do {
        dir = Vec3(gauss(script_rng), gauss(script_rng), gauss(script_rng));
      } while (dir.norm() < 1e-6);
      e.displacement = dir.normalized() * magnitude(script_rng);
      events.push_back(e);
    }
    for (const auto& e : events) {
      if (e.control < 0 || e.control >= static_cast<int>(truth.control_vertices.size()))
        throw Error(ErrorCode::InvalidArgument, "deformation event names an unknown control vertex");
      const Vec3 center = current[truth.control_vertices[e.control]];
      for (Vec3& v : current) v += falloff((v - center).norm(), radius) * e.displacement;
      truth.events.push_back(e);
    }

    Render r = rasterize(current, mesh, pose, spec.intrinsics, texture);
    if (std::none_of(r.depth.data().begin(), r.depth.data().end(), [](double d) { return d > 0.0; }))
      throw Error(ErrorCode::EmptyRender, "camera sees no surface at frame " + std::to_string(f));

    DepthFrame frame;
    frame.intrinsics = spec.intrinsics;
    frame.frame_index = f;
    frame.rgb = r.rgb;
    frame.depth = r.depth;
    if (spec.noise_sigma > 0.0) {
      std::mt19937_64 noise_rng(mix(spec.seed ^ mix(static_cast<std::uint64_t>(f) + 1)));
      std::normal_distribution<double> noise(0.0, spec.noise_sigma);
      for (double& d : frame.depth.data())
        if (d > 0.0) d = std::max(d + noise(noise_rng), 1e-3);
    }
    seq.frames.push_back(std::move(frame));
    truth.vertices.push_back(current);
    truth.poses.push_back(pose);
    truth.material.push_back(std::move(r.material));
    truth.clean_depth.push_back(std::move(r.depth));
  }
  return seq;
}

std::optional<Vec3> GroundTruth::material_point(int seen, PixelIndex pixel, int at) const {
  if (seen < 0 || at < 0 || seen >= static_cast<int>(material.size()) || at >= static_cast<int>(vertices.size()))
    return std::nullopt;
  const MaterialMap& m = material[static_cast<std::size_t>(seen)];
  if (!m.triangle.in_bounds(pixel.x, pixel.y)) return std::nullopt;
  const int t = m.triangle(pixel.x, pixel.y);
  if (t < 0) return std::nullopt;
  const Vec3& b = m.barycentric(pixel.x, pixel.y);
  const auto& tri = triangles[static_cast<std::size_t>(t)];
  const auto& v = vertices[static_cast<std::size_t>(at)];
  return b[0] * v[tri[0]] + b[1] * v[tri[1]] + b[2] * v[tri[2]];
}

std::optional<Vec3> GroundTruth::track(int seen, PixelIndex pixel, int at) const {
  const auto p = material_point(seen, pixel, at);
  if (!p) return std::nullopt;
  return poses[static_cast<std::size_t>(at)].inverse()(*p);
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

// Closest point on triangle abc to p.
Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

Metrics summarize(std::vector<double> d) {
  Metrics m;
  m.count = d.size();
  if (d.empty()) return m;
  double sum = 0.0;
  for (double v : d) {
    sum += v;
    m.max = std::max(m.max, v);
  }
  m.mean = sum / static_cast<double>(d.size());
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  m.median = d[mid];
  if (d.size() % 2 == 0) m.median = 0.5 * (m.median + *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid)));
  return m;
}

}  // namespace

Metrics evaluate(const SurfelCloud& model, const GroundTruth& truth, int frame) {
  if (model.empty()) throw Error(ErrorCode::EmptyModel, "cannot evaluate an empty model");
  if (frame < 0 || frame >= static_cast<int>(truth.num_frames()))
    throw Error(ErrorCode::InvalidArgument, "frame " + std::to_string(frame) + " is not in the ground truth");
  const auto& verts = truth.vertices[static_cast<std::size_t>(frame)];
  const RigidTransform& pose = truth.poses[static_cast<std::size_t>(frame)];
  std::vector<std::vector<int>> incident(verts.size());
  for (std::size_t t = 0; t < truth.triangles.size(); ++t)
    for (int v : truth.triangles[t]) incident[static_cast<std::size_t>(v)].push_back(static_cast<int>(t));
  double edge = 0.0;
  for (const auto& t : truth.triangles) edge = std::max(edge, (verts[t[0]] - verts[t[1]]).norm());
  const VoxelHash index(std::max(edge, 1e-3), verts);

  std::vector<double> dist(model.size());
  parallel_for(0, model.size(), [&](std::size_t i) {
    const Vec3 p = pose(model[i].position);
    double best = std::numeric_limits<double>::infinity();
    for (const Neighbor& nb : index.knn(p, 6))
      for (int t : incident[static_cast<std::size_t>(nb.index)]) {
        const auto& tri = truth.triangles[static_cast<std::size_t>(t)];
        best = std::min(best, (p - closest_on_triangle(p, verts[tri[0]], verts[tri[1]], verts[tri[2]])).norm());
      }
    dist[i] = best;
  });
  return summarize(std::move(dist));
}

Metrics evaluate_tracked(const SurfelCloud& model, std::span<const Provenance> origins, const GroundTruth& truth,
                         int frame) {
  if (origins.size() != model.size()) throw Error(ErrorCode::InvalidArgument, "provenance does not cover the model");
  std::vector<double> d;
  for (std::size_t i = 0; i < model.size(); ++i) {
    if (origins[i].frame < 0) continue;
    const auto p = truth.track(origins[i].frame, origins[i].pixel, frame);
    if (p) d.push_back((model[i].position - *p).norm());
  }
  return summarize(std::move(d));
}

// ---------------------------------------------------------------------------
// Files

void write_sequence(const fs::path& dir, const Sequence& seq) {
  fs::create_directories(dir / "truth");
  for (const auto& f : seq.frames) io::write_frame(dir, f);
  std::ofstream poses(dir / "truth" / "poses.txt");
  if (!poses) throw Error(ErrorCode::Io, "cannot write " + (dir / "truth" / "poses.txt").string());
  poses.precision(17);
  for (std::size_t f = 0; f < seq.truth.num_frames(); ++f) {
    char name[64];
    std::snprintf(name, sizeof name, "mesh_%06zu.ply", f);
    io::write_mesh_ply(dir / "truth" / name, seq.truth.vertices[f], seq.truth.triangles);
    const RigidTransform& p = seq.truth.poses[f];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) poses << p.rotation(r, c) << ' ';
    poses << p.translation.x() << ' ' << p.translation.y() << ' ' << p.translation.z() << '\n';
  }
}

GroundTruth load_truth(const fs::path& dir) {
  const fs::path tdir = dir / "truth";
  std::ifstream poses(tdir / "poses.txt");
  if (!poses) throw Error(ErrorCode::MalformedInput, "missing ground truth poses " + (tdir / "poses.txt").string());
  GroundTruth truth;
  std::string line;
  while (std::getline(poses, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    RigidTransform p;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) ls >> p.rotation(r, c);
    ls >> p.translation.x() >> p.translation.y() >> p.translation.z();
    if (!ls) throw Error(ErrorCode::MalformedInput, "bad pose line in " + (tdir / "poses.txt").string());
    truth.poses.push_back(p);
  }
  for (std::size_t f = 0; f < truth.poses.size(); ++f) {
    char name[64];
    std::snprintf(name, sizeof name, "mesh_%06zu.ply", f);
    const fs::path mp = tdir / name;
    if (!fs::exists(mp)) throw Error(ErrorCode::MalformedInput, "missing ground truth mesh " + mp.string());
    io::PlyData ply = io::read_ply(mp);
    if (f == 0) truth.triangles = ply.faces;
    truth.vertices.push_back(ply.cloud.positions());
  }
  return truth;
}

// ---------------------------------------------------------------------------

CorrespondenceSet GroundTruthProvider::find(const ModelView& view, const DepthFrame& frame) const {
  CorrespondenceSet out;
  const int seen = view.frame_index, at = frame.frame_index;
  if (seen < 0 || at < 0 || at >= static_cast<int>(truth_->clean_depth.size())) return out;
  const DepthImage& clean = truth_->clean_depth[static_cast<std::size_t>(at)];
  for (int y = 0; y < view.depth.height(); y += stride_) {
    for (int x = 0; x < view.depth.width(); x += stride_) {
      const double d = view.depth(x, y);
      if (!(d > 0.0)) continue;
      std::optional<Vec3> src, dst;
      if (model_ != nullptr) {
        const int id = view.surfel(x, y);
        if (id < 0 || static_cast<std::size_t>(id) >= origins_->size() || static_cast<std::size_t>(id) >= model_->size())
          continue;
        const Provenance& o = (*origins_)[static_cast<std::size_t>(id)];
        src = model_->surfels()[static_cast<std::size_t>(id)].position;
        dst = truth_->track(o.frame, o.pixel, at);
      } else {
        src = back_project(view.intrinsics, PixelCoord{double(x), double(y)}, d);
        dst = truth_->track(seen, {x, y}, at);
      }
      if (!dst) continue;
      const auto uv = project(frame.intrinsics, *dst);
      if (!uv) continue;
      const PixelIndex px = nearest_pixel(*uv);
      if (!(clean(px.x, px.y) > 0.0) || std::abs(clean(px.x, px.y) - dst->z()) > 0.5) continue;
      out.add({*src, *dst, 1.0});
    }
  }
  return out;
}

}  // namespace edfusion::sim
