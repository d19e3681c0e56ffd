#include "hgm/correspondence.hpp"

#include <cmath>

namespace hgm {

void DemoAnnotation::validate() const {
  const int n = demo_cloud.size();
  if (manipulation_index < 0 || manipulation_index >= n)
    throw Error("bad-annotation", "manipulation_index out of range");
  for (int r : reference_indices)
    if (r < 0 || r >= n) throw Error("bad-annotation", "reference index out of range");
  if (category != ObjectCategory::Deformable && reference_indices.empty())
    throw Error("bad-annotation", "rigid annotation needs at least one reference index");
  if (!demo_cloud.has_payload("features")) throw Error("no-features", "demo cloud");
}

CorrespondenceResult match_point(const float* query, const Matrix& target_features) {
  if (target_features.rows < 1) throw Error("dim-mismatch", "empty target features");
  CorrespondenceResult res;
  res.score = -2.0;
  res.runner_up_score = -2.0;
  for (int i = 0; i < target_features.rows; ++i) {
    double s = cosine_similarity(query, target_features.row(i), target_features.cols);
    if (s > res.score) {
      res.runner_up_score = res.score;
      res.score = s;
      res.target_index = i;
    } else if (s > res.runner_up_score) {
      res.runner_up_score = s;
    }
  }
  if (target_features.rows == 1) res.runner_up_score = res.score;
  return res;
}

CorrespondenceResult match_point(const std::vector<float>& query, const Matrix& target_features) {
  if (static_cast<int>(query.size()) != target_features.cols)
    throw Error("dim-mismatch", "match_point");
  return match_point(query.data(), target_features);
}

namespace {

const Matrix& target_feature_matrix(const DemoAnnotation& demo, const PointCloud& target) {
  if (!target.has_payload("features")) throw Error("no-features", "target cloud");
  const Matrix& tf = target.payload("features");
  if (tf.cols != demo.demo_cloud.payload("features").cols)
    throw Error("dim-mismatch", "demo/target feature dims differ");
  return tf;
}

}  // namespace

std::pair<Point3, CorrespondenceResult> locate_manipulation_point(const DemoAnnotation& demo,
                                                                  const PointCloud& target) {
  demo.validate();
  const Matrix& tf = target_feature_matrix(demo, target);
  const Matrix& df = demo.demo_cloud.payload("features");
  CorrespondenceResult res = match_point(df.row(demo.manipulation_index), tf);
  return {target.points[res.target_index], res};
}

GraspPose plan_grasp(const DemoAnnotation& demo, const PointCloud& target) {
  auto [position, match] = locate_manipulation_point(demo, target);
  GraspPose pose;
  pose.position = position;
  pose.gripper = 0.0;
  if (demo.category == ObjectCategory::Deformable) {
    pose.orientation = demo.fixed_orientation.value_or(Rotation3::identity());
    return pose;
  }
  const Matrix& tf = target.payload("features");
  const Matrix& df = demo.demo_cloud.payload("features");
  Point3 demo_manip = demo.demo_cloud.points[demo.manipulation_index];
  Point3 u = demo.demo_cloud.points[demo.reference_indices[0]] - demo_manip;
  // Additional references are matched and averaged into the target vector.
  Point3 v{0, 0, 0};
  for (int ref : demo.reference_indices) {
    CorrespondenceResult rm = match_point(df.row(ref), tf);
    v = v + (target.points[rm.target_index] - position);
  }
  v = v * (1.0 / demo.reference_indices.size());
  if (v.norm() < 1e-6) throw Error("degenerate-reference", "target reference direction collapsed");
  pose.orientation = rotation_between(u, v).compose(demo.grasp_orientation).normalized();
  return pose;
}

}  // namespace hgm
