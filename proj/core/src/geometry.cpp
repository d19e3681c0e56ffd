#include "hgm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hgm {

double Point3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Point3 Point3::normalized() const {
  double n = norm();
  if (n < 1e-12) throw Error("degenerate-vector", "cannot normalize near-zero vector");
  return {x / n, y / n, z / n};
}

double distance(const Point3& a, const Point3& b) { return (a - b).norm(); }

double Rotation3::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Rotation3 Rotation3::normalized() const {
  double n = norm();
  if (n < 1e-12) throw Error("degenerate-rotation", "zero quaternion");
  return {w / n, x / n, y / n, z / n};
}

Rotation3 Rotation3::from_axis_angle(const Point3& axis, double angle) {
  Point3 a = axis.normalized();
  double s = std::sin(angle / 2.0);
  return Rotation3{std::cos(angle / 2.0), a.x * s, a.y * s, a.z * s}.normalized();
}

Rotation3 Rotation3::compose(const Rotation3& r) const {
  return Rotation3{
      w * r.w - x * r.x - y * r.y - z * r.z,
      w * r.x + x * r.w + y * r.z - z * r.y,
      w * r.y - x * r.z + y * r.w + z * r.x,
      w * r.z + x * r.y - y * r.x + z * r.w,
  };
}

Point3 Rotation3::rotate(const Point3& p) const {
  // q p q^-1 via the cross-product expansion.
  Point3 u{x, y, z};
  Point3 t = u.cross(p) * 2.0;
  return p + t * w + u.cross(t);
}

double Rotation3::angle_to(const Rotation3& other) const {
  Rotation3 d = inverse().compose(other);
  double c = std::clamp(std::abs(d.w), 0.0, 1.0);
  return 2.0 * std::acos(c);
}

const Matrix& PointCloud::payload(const std::string& name) const {
  auto it = payloads.find(name);
  if (it == payloads.end()) throw Error("no-payload", name);
  return it->second;
}

void PointCloud::set_payload(const std::string& name, Matrix m) {
  if (m.rows != size()) throw Error("payload-size", name);
  payloads[name] = std::move(m);
}

void PointCloud::validate() const {
  for (const auto& [name, m] : payloads)
    if (m.rows != size()) throw Error("payload-size", name);
}

double cosine_similarity(const float* a, const float* b, int n) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < n; ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;  // zero rows degrade gracefully
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size() || a.empty()) throw Error("dim-mismatch", "cosine_similarity");
  return cosine_similarity(a.data(), b.data(), static_cast<int>(a.size()));
}

Rotation3 rotation_between(const Point3& u, const Point3& v) {
  if (u.norm() <= 1e-9 || v.norm() <= 1e-9)
    throw Error("degenerate-vector", "rotation_between");
  Point3 a = u.normalized();
  Point3 b = v.normalized();
  double d = a.dot(b);
  if (d < -1.0 + 1e-9) {
    // Antiparallel: 180 degrees about the coordinate axis least aligned
    // with a (smallest index on ties), projected orthogonal to a.
    double ax[3] = {std::abs(a.x), std::abs(a.y), std::abs(a.z)};
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (ax[i] < ax[best]) best = i;
    Point3 e = best == 0 ? Point3{1, 0, 0} : best == 1 ? Point3{0, 1, 0} : Point3{0, 0, 1};
    Point3 axis = (e - a * a.dot(e)).normalized();
    return Rotation3{0.0, axis.x, axis.y, axis.z}.normalized();
  }
  Point3 c = a.cross(b);
  return Rotation3{1.0 + d, c.x, c.y, c.z}.normalized();
}

PointCloud apply_transform(const PointCloud& cloud, const Rotation3& rotation,
                           const Point3& translation) {
  PointCloud out;
  out.points.reserve(cloud.points.size());
  Rotation3 r = rotation.normalized();
  for (const auto& p : cloud.points) out.points.push_back(r.rotate(p) + translation);
  out.payloads = cloud.payloads;
  return out;
}

std::vector<int> fps_indices(const PointCloud& cloud, int m, std::uint64_t seed) {
  const int n = cloud.size();
  if (n == 0) throw Error("empty-cloud", "fps_indices");
  if (m >= n) {
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  Rng rng(seed);
  std::vector<int> sel;
  sel.reserve(m);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  int cur = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(n)));
  sel.push_back(cur);
  for (int k = 1; k < m; ++k) {
    int far = 0;
    double far_d = -1.0;
    for (int i = 0; i < n; ++i) {
      double d = distance(cloud.points[i], cloud.points[cur]);
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > far_d) {
        far_d = dist[i];
        far = i;
      }
    }
    cur = far;
    sel.push_back(cur);
  }
  return sel;
}

PointCloud select_points(const PointCloud& cloud, const std::vector<int>& indices) {
  PointCloud out;
  out.points.reserve(indices.size());
  for (int i : indices) out.points.push_back(cloud.points.at(i));
  for (const auto& [name, m] : cloud.payloads) {
    Matrix sub(static_cast<int>(indices.size()), m.cols);
    for (int r = 0; r < sub.rows; ++r)
      std::copy(m.row(indices[r]), m.row(indices[r]) + m.cols, sub.row(r));
    out.payloads[name] = std::move(sub);
  }
  return out;
}

PointCloud fps_downsample(const PointCloud& cloud, int m, std::uint64_t seed) {
  if (m >= cloud.size()) return cloud;
  return select_points(cloud, fps_indices(cloud, m, seed));
}

int nearest_index(const PointCloud& cloud, const Point3& query) {
  if (cloud.size() == 0) throw Error("empty-cloud", "nearest_index");
  int best = 0;
  double best_d = distance(cloud.points[0], query);
  for (int i = 1; i < cloud.size(); ++i) {
    double d = distance(cloud.points[i], query);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace hgm
