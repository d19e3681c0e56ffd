#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hgm/common.hpp"

namespace hgm {

struct Point3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Point3() = default;
  Point3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Point3 operator+(const Point3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Point3 operator-(const Point3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Point3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Point3& o) const { return x * o.x + y * o.y + z * o.z; }
  Point3 cross(const Point3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const;
  Point3 normalized() const;
};

double distance(const Point3& a, const Point3& b);

// Unit quaternion (w, x, y, z).
struct Rotation3 {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static Rotation3 identity() { return {}; }
  static Rotation3 from_axis_angle(const Point3& axis, double angle);

  Rotation3 normalized() const;
  Rotation3 compose(const Rotation3& rhs) const;  // this * rhs
  Rotation3 inverse() const { return {w, -x, -y, -z}; }
  Point3 rotate(const Point3& p) const;
  // Angle of the relative rotation this^-1 * other, in radians, in [0, pi].
  double angle_to(const Rotation3& other) const;
  double norm() const;
};

struct GraspPose {
  Point3 position;
  Rotation3 orientation;
  double gripper = 0.0;  // 0 = open, 1 = closed
};

// Ordered set of 3D points with optional named per-point float payloads.
// Integer semantic labels ride in a float payload ("label", one column).
struct PointCloud {
  std::vector<Point3> points;
  std::map<std::string, Matrix> payloads;

  int size() const { return static_cast<int>(points.size()); }
  bool has_payload(const std::string& name) const { return payloads.count(name) != 0; }
  const Matrix& payload(const std::string& name) const;
  void set_payload(const std::string& name, Matrix m);
  void validate() const;  // payload row counts must equal point count
};

// a.b / (|a||b|); 0 if either norm is 0.
double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b);
double cosine_similarity(const float* a, const float* b, int n);

// Shortest-arc rotation taking direction u to direction v. Antiparallel
// inputs rotate 180 degrees about a deterministically chosen orthogonal axis.
Rotation3 rotation_between(const Point3& u, const Point3& v);

PointCloud apply_transform(const PointCloud& cloud, const Rotation3& rotation,
                           const Point3& translation);

// Farthest-point sampling; the start point is a seeded uniform draw.
// Returns the selected indices (size min(m, N)).
std::vector<int> fps_indices(const PointCloud& cloud, int m, std::uint64_t seed);
PointCloud fps_downsample(const PointCloud& cloud, int m, std::uint64_t seed);
PointCloud select_points(const PointCloud& cloud, const std::vector<int>& indices);

// Index of the closest point; ties broken by lowest index.
int nearest_index(const PointCloud& cloud, const Point3& query);

}  // namespace hgm
