#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "hgm/features.hpp"
#include "hgm/geometry.hpp"

namespace hgm {

// Annotated demonstration used as the matching reference for stage 1.
// demo_cloud must carry a "features" payload.
struct DemoAnnotation {
  PointCloud demo_cloud;
  int manipulation_index = 0;
  std::vector<int> reference_indices;  // >= 1 entry for rigid/articulated
  ObjectCategory category = ObjectCategory::Rigid;
  Rotation3 grasp_orientation;                  // orientation used in the demo
  std::optional<Rotation3> fixed_orientation;   // deformable default override

  void validate() const;
};

struct CorrespondenceResult {
  int target_index = 0;
  double score = 0.0;
  double runner_up_score = 0.0;
};

// Argmax of cosine similarity over target rows; ties break to the lowest
// index. runner_up_score equals score when there is a single row.
CorrespondenceResult match_point(const std::vector<float>& query_feature,
                                 const Matrix& target_features);
CorrespondenceResult match_point(const float* query_feature, const Matrix& target_features);

std::pair<Point3, CorrespondenceResult> locate_manipulation_point(
    const DemoAnnotation& demo, const PointCloud& target_cloud);

// Full stage-1 output: matched position, orientation transferred from the
// demo (shortest-arc delta from the reference direction for rigid objects,
// fixed orientation for deformables), gripper open.
GraspPose plan_grasp(const DemoAnnotation& demo, const PointCloud& target_cloud);

}  // namespace hgm
