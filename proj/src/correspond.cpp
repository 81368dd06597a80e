#include "edfusion/correspond.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "edfusion/error.hpp"
#include "edfusion/parallel.hpp"

namespace edfusion {

std::size_t CorrespondenceSet::inlier_count() const {
  return static_cast<std::size_t>(std::count(inlier_mask.begin(), inlier_mask.end(), 1));
}

std::vector<Correspondence> CorrespondenceSet::inliers() const {
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (inlier_mask[i]) out.push_back(pairs[i]);
  return out;
}

void MatcherConfig::validate() const {
  if (stride < 1 || patch < 3 || patch % 2 == 0 || search_radius < 0 || refine_radius < 0 || !(ratio_test > 0.0))
    throw Error(ErrorCode::InvalidArgument, "matcher requires stride >= 1, an odd patch >= 3 and non-negative radii");
}

void RansacConfig::validate() const {
  if (!(inlier_threshold > 0.0) || max_iters < 1 || refine_rounds < 0)
    throw Error(ErrorCode::InvalidArgument, "ransac requires threshold > 0 and max_iters >= 1");
}

std::vector<int> facing_surfels(const SurfelCloud& cloud, const CameraIntrinsics& intr) {
  std::vector<int> out;
  const auto& s = cloud.surfels();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!project(intr, s[i].position)) continue;
    if (s[i].normal.dot(s[i].position) >= 0.0) continue;
    out.push_back(static_cast<int>(i));
  }
  return out;
}

namespace {

// Depth where the ray through the pixel center meets the surfel's tangent
// plane; the surfel's own depth for grazing views or far-off intersections.
double splat_depth(const CameraIntrinsics& intr, const Surfel& s, PixelIndex p) {
  const Vec3 ray = back_project(intr, PixelCoord{double(p.x), double(p.y)}, 1.0);
  const double nr = s.normal.dot(ray);
  if (std::abs(nr) < kMinSplatCosine * ray.norm()) return s.position.z();
  const double z = s.normal.dot(s.position) / nr;
  return std::abs(z - s.position.z()) < kViewSheetDepth ? z : s.position.z();
}

}  // namespace

ModelView render_model_view(const SurfelCloud& cloud, const CameraIntrinsics& intr, std::span<const int> visible,
                            int frame_index) {
  ModelView view;
  view.intrinsics = intr;
  view.frame_index = frame_index;
  view.rgb = RgbImage(intr.width, intr.height, Rgb8{0, 0, 0});
  view.depth = DepthImage(intr.width, intr.height, 0.0);
  view.surfel = Image<int>(intr.width, intr.height, -1);
  view.point = Image<Vec3>(intr.width, intr.height, Vec3::Zero());
  std::vector<int> order(visible.begin(), visible.end());
  std::sort(order.begin(), order.end());
  for (int i : order) {
    const Surfel& s = cloud[static_cast<std::size_t>(i)];
    const auto uv = project(intr, s.position);
    if (!uv) continue;
    const PixelIndex p = nearest_pixel(*uv);
    double& z = view.depth(p.x, p.y);
    const double zs = splat_depth(intr, s, p);
    if (z == 0.0 || zs < z) {
      z = zs;
      view.rgb(p.x, p.y) = s.color;
      view.surfel(p.x, p.y) = i;
    }
  }
  // Box-filter the color over every surfel on the front sheet of its pixel.
  Image<Vec3> color_sum(intr.width, intr.height, Vec3::Zero());
  Image<Vec3> point_sum(intr.width, intr.height, Vec3::Zero());
  Image<int> count(intr.width, intr.height, 0);
  for (int i : order) {
    const Surfel& s = cloud[static_cast<std::size_t>(i)];
    const auto uv = project(intr, s.position);
    if (!uv) continue;
    const PixelIndex p = nearest_pixel(*uv);
    if (splat_depth(intr, s, p) > view.depth(p.x, p.y) + kViewSheetDepth) continue;
    color_sum(p.x, p.y) += Vec3(s.color[0], s.color[1], s.color[2]);
    point_sum(p.x, p.y) += s.position;
    ++count(p.x, p.y);
  }
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x) {
      const int n = count(x, y);
      if (n == 0) continue;
      view.point(x, y) = point_sum(x, y) / n;
      if (n > 1)
        for (int ch = 0; ch < 3; ++ch)
          view.rgb(x, y)[ch] = static_cast<std::uint8_t>(std::lround(color_sum(x, y)[ch] / n));
    }
  return view;
}

namespace {

// Sums over a rectangle via a (w+1) x (h+1) integral image.
struct Integral {
  int w = 0, h = 0;
  std::vector<double> sum, sq;

  explicit Integral(const GrayImage& img) : w(img.width()), h(img.height()) {
    sum.assign(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);
    sq = sum;
    for (int y = 0; y < h; ++y) {
      double rs = 0.0, rq = 0.0;
      for (int x = 0; x < w; ++x) {
        const double v = img(x, y);
        rs += v;
        rq += v * v;
        sum[idx(x + 1, y + 1)] = sum[idx(x + 1, y)] + rs;
        sq[idx(x + 1, y + 1)] = sq[idx(x + 1, y)] + rq;
      }
    }
  }
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * (w + 1) + x; }
  double box(const std::vector<double>& t, int x0, int y0, int x1, int y1) const {
    return t[idx(x1, y1)] - t[idx(x0, y1)] - t[idx(x1, y0)] + t[idx(x0, y0)];
  }
};

std::optional<double> sample_depth(const DepthImage& depth, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  if (depth.in_bounds(x0, y0) && depth.in_bounds(x0 + 1, y0 + 1)) {
    const double d00 = depth(x0, y0), d10 = depth(x0 + 1, y0), d01 = depth(x0, y0 + 1), d11 = depth(x0 + 1, y0 + 1);
    if (d00 > 0 && d10 > 0 && d01 > 0 && d11 > 0)
      return (1 - fy) * ((1 - fx) * d00 + fx * d10) + fy * ((1 - fx) * d01 + fx * d11);
  }
  const int xn = static_cast<int>(std::floor(x + 0.5)), yn = static_cast<int>(std::floor(y + 0.5));
  if (depth.in_bounds(xn, yn) && depth(xn, yn) > 0) return depth(xn, yn);
  return std::nullopt;
}

float bilinear(const GrayImage& img, double x, double y) {
  x = std::clamp(x, 0.0, img.width() - 1.0);
  y = std::clamp(y, 0.0, img.height() - 1.0);
  const int x0 = std::min(static_cast<int>(x), std::max(img.width() - 2, 0));
  const int y0 = std::min(static_cast<int>(y), std::max(img.height() - 2, 0));
  const double fx = x - x0, fy = y - y0;
  const int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  return static_cast<float>((1 - fy) * ((1 - fx) * img(x0, y0) + fx * img(x1, y0)) +
                            fy * ((1 - fx) * img(x0, y1) + fx * img(x1, y1)));
}

/// Sub-pixel offset of the zero-mean template `tmpl` centred at (cx, cy) in
/// `img`: Gauss-Newton on alpha I(u + s) + beta - T over shift s, gain alpha
/// and bias beta. An exact match is a fixed point. Returns nothing if the
/// shift leaves the pixel around the start.
std::optional<Eigen::Vector2d> align_patch(const GrayImage& img, const std::vector<float>& tmpl, int half, double cx,
                                           double cy) {
  constexpr int kIters = 8;
  Eigen::Vector4d p(0.0, 0.0, 1.0, 0.0);  // sx, sy, alpha, beta
  double mean = 0.0, sq = 0.0;
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx) {
      const double v = img(static_cast<int>(cx) + dx, static_cast<int>(cy) + dy);
      mean += v;
      sq += v * v;
    }
  const double n = static_cast<double>(tmpl.size());
  mean /= n;
  double tvar = 0.0;
  for (float t : tmpl) tvar += double(t) * t;
  const double ivar = sq / n - mean * mean;
  if (!(ivar > 0.0)) return std::nullopt;
  p[2] = std::sqrt(tvar / n / ivar);
  p[3] = -p[2] * mean;
  for (int it = 0; it < kIters; ++it) {
    Eigen::Matrix4d h = Eigen::Matrix4d::Zero();
    Eigen::Vector4d g = Eigen::Vector4d::Zero();
    std::size_t k = 0;
    for (int dy = -half; dy <= half; ++dy)
      for (int dx = -half; dx <= half; ++dx) {
        const double x = cx + p[0] + dx, y = cy + p[1] + dy;
        const double v = bilinear(img, x, y);
        const double ix = bilinear(img, x + 0.5, y) - bilinear(img, x - 0.5, y);
        const double iy = bilinear(img, x, y + 0.5) - bilinear(img, x, y - 0.5);
        const Eigen::Vector4d j(p[2] * ix, p[2] * iy, v, 1.0);
        const double r = p[2] * v + p[3] - tmpl[k++];
        h += j * j.transpose();
        g += j * r;
      }
    const Eigen::Vector4d step = h.ldlt().solve(-g);
    if (!step.allFinite()) return std::nullopt;
    p += step;
    if (std::abs(p[0]) > 1.0 || std::abs(p[1]) > 1.0) return std::nullopt;
    if (step.head<2>().norm() < 1e-4) break;
  }
  return Eigen::Vector2d(p[0], p[1]);
}

}  // namespace

void close_view_holes(ModelView& view) {
  constexpr int kPasses = 3;
  constexpr int kOff[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (int pass = 0; pass < kPasses; ++pass) {
    const DepthImage depth = view.depth;
    const RgbImage rgb = view.rgb;
    const Image<Vec3> point = view.point;
    auto valid = [&](int u, int v) { return depth.in_bounds(u, v) && depth(u, v) > 0.0; };
    bool changed = false;
    for (int y = 0; y < depth.height(); ++y)
      for (int x = 0; x < depth.width(); ++x) {
        if (depth(x, y) > 0.0) continue;
        int n = 0;
        for (const auto& o : kOff) n += valid(x + o[0], y + o[1]);
        if (n < 2 || (n == 2 && !(valid(x - 1, y) && valid(x + 1, y)) && !(valid(x, y - 1) && valid(x, y + 1)) &&
                      pass == 0))
          continue;
        double d = 0.0;
        std::array<double, 3> c{};
        Vec3 q = Vec3::Zero();
        for (const auto& o : kOff) {
          if (!valid(x + o[0], y + o[1])) continue;
          d += depth(x + o[0], y + o[1]);
          q += point(x + o[0], y + o[1]);
          for (int ch = 0; ch < 3; ++ch) c[ch] += rgb(x + o[0], y + o[1])[ch];
        }
        view.depth(x, y) = d / n;
        view.point(x, y) = q / n;
        for (int ch = 0; ch < 3; ++ch) view.rgb(x, y)[ch] = static_cast<std::uint8_t>(std::lround(c[ch] / n));
        changed = true;
      }
    if (!changed) break;
  }
}

CorrespondenceSet match_dense(const ModelView& view, const DepthFrame& frame, const MatcherConfig& cfg) {
  cfg.validate();
  const GrayImage gm = to_gray(view.rgb);
  const GrayImage gf = to_gray(frame.rgb);
  const Integral fint(gf);
  const int half = cfg.patch / 2;
  const int R = cfg.search_radius;
  const int side = 2 * R + 1;
  const double n = static_cast<double>(cfg.patch) * cfg.patch;
  const int wm = gm.width(), hm = gm.height(), wf = gf.width(), hf = gf.height();

  std::vector<PixelIndex> grid;
  for (int y = half; y + half < hm; y += cfg.stride)
    for (int x = half; x + half < wm; x += cfg.stride) grid.push_back({x, y});

  std::vector<std::optional<Correspondence>> found(grid.size());
  parallel_for(0, grid.size(), [&](std::size_t gi) {
    const PixelIndex c = grid[gi];
    std::vector<float> a(static_cast<std::size_t>(n));
    double mean = 0.0;
    for (int dy = -half; dy <= half; ++dy)
      for (int dx = -half; dx <= half; ++dx) {
        if (view.depth(c.x + dx, c.y + dy) <= 0.0) return;
        mean += gm(c.x + dx, c.y + dy);
      }
    mean /= n;
    double var = 0.0;
    std::size_t k = 0;
    for (int dy = -half; dy <= half; ++dy)
      for (int dx = -half; dx <= half; ++dx) {
        const double v = gm(c.x + dx, c.y + dy) - mean;
        a[k++] = static_cast<float>(v);
        var += v * v;
      }
    const double std_a = std::sqrt(var / n);
    if (std_a < cfg.min_patch_std) return;

    constexpr float kInvalid = -std::numeric_limits<float>::infinity();
    std::vector<float> score(static_cast<std::size_t>(side) * side, kInvalid);
    for (int oy = -R; oy <= R; ++oy) {
      const int fy = c.y + oy;
      if (fy - half < 0 || fy + half >= hf) continue;
      for (int ox = -R; ox <= R; ++ox) {
        const int fx = c.x + ox;
        if (fx - half < 0 || fx + half >= wf) continue;
        const double s = fint.box(fint.sum, fx - half, fy - half, fx + half + 1, fy + half + 1);
        const double q = fint.box(fint.sq, fx - half, fy - half, fx + half + 1, fy + half + 1);
        const double var_b = q / n - (s / n) * (s / n);
        if (!(var_b > 1e-6)) continue;
        double dot = 0.0;
        std::size_t kk = 0;
        for (int dy = -half; dy <= half; ++dy) {
          const float* row = &gf(fx - half, fy + dy);
          for (int dx = 0; dx < cfg.patch; ++dx) dot += static_cast<double>(a[kk++]) * row[dx];
        }
        score[static_cast<std::size_t>(oy + R) * side + (ox + R)] =
            static_cast<float>(dot / (n * std_a * std::sqrt(var_b)));
      }
    }

    auto at = [&](int ox, int oy) -> float {
      if (ox < -R || ox > R || oy < -R || oy > R) return kInvalid;
      return score[static_cast<std::size_t>(oy + R) * side + (ox + R)];
    };
    int bx = 0, by = 0;
    float best = kInvalid;
    for (int oy = -R; oy <= R; ++oy)
      for (int ox = -R; ox <= R; ++ox)
        if (at(ox, oy) > best) {
          best = at(ox, oy);
          bx = ox;
          by = oy;
        }
    if (best == kInvalid) return;
    // Second-best correlation peak: highest 8-neighborhood local maximum other than the best.
    float second = -1.0f;
    for (int oy = -R; oy <= R; ++oy)
      for (int ox = -R; ox <= R; ++ox) {
        const float v = at(ox, oy);
        if (v == kInvalid || (ox == bx && oy == by) || v <= second) continue;
        bool is_max = true;
        for (int ny = -1; ny <= 1 && is_max; ++ny)
          for (int nx = -1; nx <= 1; ++nx)
            if ((nx || ny) && at(ox + nx, oy + ny) > v) {
              is_max = false;
              break;
            }
        if (is_max) second = v;
      }
    const double d_best = 1.0 - best;
    const double d_second = 1.0 - std::max(second, -1.0f);
    if (d_best > cfg.max_descriptor_dist) return;
    if (!(d_best < cfg.ratio_test * d_second)) return;

    const auto sub = align_patch(gf, a, half, c.x + bx, c.y + by);
    const double sx = bx + (sub ? (*sub)[0] : 0.0), sy = by + (sub ? (*sub)[1] : 0.0);
    const double mx = c.x + sx, my = c.y + sy;
    const auto d = sample_depth(frame.depth, mx, my);
    if (!d) return;
    Correspondence corr;
    corr.src = view.point(c.x, c.y);
    corr.dst = back_project(frame.intrinsics, PixelCoord{mx, my}, *d);
    corr.score = best;
    found[gi] = corr;
  });

  CorrespondenceSet out;
  for (const auto& f : found)
    if (f) out.add(*f);
  return out;
}

RigidTransform fit_rigid(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size() || src.size() < 3)
    throw Error(ErrorCode::InvalidArgument, "rigid fit needs at least 3 matched pairs");
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(src.size());
  cd /= static_cast<double>(dst.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 fix = Mat3::Identity();
  fix(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = v * fix * u.transpose();
  t.translation = cd - t.rotation * cs;
  return t;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Marks pairs within threshold and returns their count. `cost` receives the
/// truncated quadratic loss sum(min(e^2, threshold^2)).
std::size_t classify(const std::vector<Correspondence>& pairs, const RigidTransform& t, double threshold,
                     std::vector<char>& mask, double* cost = nullptr) {
  mask.assign(pairs.size(), 0);
  std::size_t count = 0;
  double loss = 0.0;
  const double cap = threshold * threshold;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double e2 = (t(pairs[i].src) - pairs[i].dst).squaredNorm();
    loss += std::min(e2, cap);
    if (e2 < cap) {
      mask[i] = 1;
      ++count;
    }
  }
  if (cost) *cost = loss;
  return count;
}

RigidTransform fit_masked(const std::vector<Correspondence>& pairs, const std::vector<char>& mask) {
  std::vector<Vec3> s, d;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (mask[i]) {
      s.push_back(pairs[i].src);
      d.push_back(pairs[i].dst);
    }
  return fit_rigid(s, d);
}

}  // namespace

RansacResult ransac_rigid(const CorrespondenceSet& corrs, const RansacConfig& cfg) {
  cfg.validate();
  const auto& pairs = corrs.pairs;
  const std::size_t n = pairs.size();
  if (n < 3) throw Error(ErrorCode::PoseInitFailed, "rigid initialization needs at least 3 correspondences");

  // Hypotheses are ranked by truncated quadratic loss rather than raw inlier
  // count, so a loose fit that happens to catch a stray outlier does not beat
  // a tight one.
  RansacResult best;
  bool have = false;
  double best_cost = 0.0;
  std::vector<char> mask;
  for (int it = 0; it < cfg.max_iters; ++it) {
    std::mt19937_64 rng(splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(it))));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::size_t i0 = pick(rng), i1 = pick(rng), i2 = pick(rng);
    if (i0 == i1 || i0 == i2 || i1 == i2) continue;
    const Vec3 s[3] = {pairs[i0].src, pairs[i1].src, pairs[i2].src};
    const Vec3 d[3] = {pairs[i0].dst, pairs[i1].dst, pairs[i2].dst};
    if ((s[1] - s[0]).cross(s[2] - s[0]).norm() < 1e-6 || (d[1] - d[0]).cross(d[2] - d[0]).norm() < 1e-6) continue;
    const RigidTransform t = fit_rigid(s, d);
    double cost = 0.0;
    const std::size_t count = classify(pairs, t, cfg.inlier_threshold, mask, &cost);
    if (!have || cost < best_cost) {
      best.transform = t;
      best.inlier_mask = mask;
      best.inliers = count;
      best_cost = cost;
      have = true;
    }
  }
  if (!have || best.inliers < 3) throw Error(ErrorCode::PoseInitFailed, "no consistent rigid hypothesis found");
  best.minimal_sample_inliers = best.inliers;

  for (int round = 0; round < cfg.refine_rounds; ++round) {
    const RigidTransform t = fit_masked(pairs, best.inlier_mask);
    const std::size_t count = classify(pairs, t, cfg.inlier_threshold, mask);
    if (count < best.inliers) break;
    best.transform = t;
    best.inlier_mask = mask;
    best.inliers = count;
  }
  if (best.inliers < static_cast<std::size_t>(std::max(cfg.min_inliers, 3)))
    throw Error(ErrorCode::PoseInitFailed, "rigid initialization found too few inliers");
  return best;
}

}  // namespace edfusion
