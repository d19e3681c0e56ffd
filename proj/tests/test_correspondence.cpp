#include <doctest.h>

#include <cmath>

#include "hgm/correspondence.hpp"

using namespace hgm;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Rigid demo object at canonical pose with features attached.
PointCloud demo_object(int n, std::uint64_t seed, const SyntheticRigidProvider& provider) {
  Rng rng(seed);
  PointCloud c;
  Matrix canon(n, 3), label(n, 1);
  for (int i = 0; i < n; ++i) {
    Point3 p{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
    c.points.push_back(p);
    canon(i, 0) = float(p.x);
    canon(i, 1) = float(p.y);
    canon(i, 2) = float(p.z);
    label(i, 0) = float(i % 4);
  }
  c.set_payload("canonical", canon);
  c.set_payload("label", label);
  c.set_payload("features", provider.compute(c));
  return c;
}

DemoAnnotation rigid_annotation(const PointCloud& demo) {
  DemoAnnotation ann;
  ann.demo_cloud = demo;
  ann.manipulation_index = 3;
  ann.reference_indices = {11};
  ann.category = ObjectCategory::Rigid;
  ann.grasp_orientation = Rotation3::from_axis_angle({0, 1, 0}, 0.4);
  return ann;
}

}  // namespace

TEST_CASE("match_point exact row and orthogonal distractors") {
  Matrix target(10, 16);
  for (int i = 0; i < 10; ++i) target(i, i) = 1.0f;  // orthogonal rows
  std::vector<float> query(16, 0.0f);
  query[7] = 2.5f;
  CorrespondenceResult r = match_point(query, target);
  CHECK(r.target_index == 7);
  CHECK(r.score == doctest::Approx(1.0));
  CHECK(r.runner_up_score == doctest::Approx(0.0));
}

TEST_CASE("match_point tie-break and single row") {
  Matrix target(5, 4);
  for (int i = 0; i < 5; ++i) target(i, 1) = 3.0f;  // identical rows
  std::vector<float> query = {0, 1, 0, 0};
  CorrespondenceResult r = match_point(query, target);
  CHECK(r.target_index == 0);
  Matrix one(1, 4);
  one(0, 1) = 1.0f;
  CorrespondenceResult s = match_point(query, one);
  CHECK(s.target_index == 0);
  CHECK(s.runner_up_score == s.score);
}

TEST_CASE("match_point agrees with brute-force scan") {
  Rng rng(13);
  Matrix target(20, 16);
  for (float& v : target.data) v = float(rng.gaussian());
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<float> q(16);
    for (float& v : q) v = float(rng.gaussian());
    CorrespondenceResult r = match_point(q, target);
    int best = 0;
    double best_s = -2, second = -2;
    for (int i = 0; i < 20; ++i) {
      double s = cosine_similarity(q.data(), target.row(i), 16);
      if (s > best_s) {
        second = best_s;
        best_s = s;
        best = i;
      } else if (s > second) {
        second = s;
      }
    }
    CHECK(r.target_index == best);
    CHECK(r.score == doctest::Approx(best_s));
    CHECK(r.runner_up_score == doctest::Approx(second));
    CHECK(r.score >= r.runner_up_score);
  }
  std::vector<float> bad(15);
  CHECK_THROWS_AS(match_point(bad, target), Error);
}

TEST_CASE("locate self-match returns the manipulation index") {
  SyntheticRigidProvider provider(64, 0.0);
  PointCloud demo = demo_object(40, 3, provider);
  DemoAnnotation ann = rigid_annotation(demo);
  auto [p, r] = locate_manipulation_point(ann, demo);
  CHECK(r.target_index == ann.manipulation_index);
  CHECK(distance(p, demo.points[ann.manipulation_index]) == 0.0);
}

TEST_CASE("locate requires a features payload") {
  SyntheticRigidProvider provider(64, 0.0);
  PointCloud demo = demo_object(30, 4, provider);
  DemoAnnotation ann = rigid_annotation(demo);
  PointCloud bare;
  bare.points = demo.points;
  try {
    locate_manipulation_point(ann, bare);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "no-features");
  }
}

TEST_CASE("locate tracks rigid transforms within noise tolerance") {
  SyntheticRigidProvider provider(64, 0.01);
  PointCloud demo = demo_object(60, 8, provider);
  DemoAnnotation ann = rigid_annotation(demo);
  Rng rng(88);
  for (int trial = 0; trial < 20; ++trial) {
    Point3 axis{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    Rotation3 r = Rotation3::from_axis_angle(axis.normalized(), rng.uniform(-kPi, kPi));
    Point3 t{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    PointCloud target = apply_transform(demo, r, t);
    target.payloads.erase("features");
    target.set_payload("features", provider.compute(target));
    auto [p, match] = locate_manipulation_point(ann, target);
    Point3 truth = r.rotate(demo.points[ann.manipulation_index]) + t;
    CHECK(distance(p, truth) < 0.01);
  }
}

TEST_CASE("locate on a deformed sheet matches the intrinsic point") {
  SyntheticDeformableProvider provider(64, 0.0);
  PointCloud sheet;
  Matrix uv(48, 2);
  for (int i = 0; i < 48; ++i) {
    double u = (i % 8) * 0.05, v = (i / 8) * 0.05;
    sheet.points.push_back({u, v, 0.0});
    uv(i, 0) = float(u);
    uv(i, 1) = float(v);
  }
  sheet.set_payload("intrinsic", uv);
  sheet.set_payload("features", provider.compute(sheet));
  DemoAnnotation ann;
  ann.demo_cloud = sheet;
  ann.manipulation_index = 19;
  ann.category = ObjectCategory::Deformable;
  PointCloud bent = sheet;
  for (Point3& p : bent.points) p.z = 0.3 * std::sin(p.x * 9.0) + 0.1 * p.y;
  bent.payloads.erase("features");
  bent.set_payload("features", provider.compute(bent));
  auto [p, match] = locate_manipulation_point(ann, bent);
  CHECK(match.target_index == 19);
  CHECK(distance(p, bent.points[19]) == 0.0);
}

TEST_CASE("plan_grasp identity on the untransformed demo") {
  SyntheticRigidProvider provider(64, 0.0);
  PointCloud demo = demo_object(50, 15, provider);
  DemoAnnotation ann = rigid_annotation(demo);
  GraspPose pose = plan_grasp(ann, demo);
  CHECK(distance(pose.position, demo.points[ann.manipulation_index]) == 0.0);
  CHECK(pose.orientation.angle_to(ann.grasp_orientation) < 1e-9);
  CHECK(pose.gripper == 0.0);
  CHECK(pose.orientation.norm() == doctest::Approx(1.0));
}

TEST_CASE("plan_grasp composes a 90 degree delta") {
  SyntheticRigidProvider provider(64, 0.0);
  PointCloud demo = demo_object(50, 19, provider);
  // The shortest-arc delta pins only the reference direction, so the demo
  // reference vector must be orthogonal to the rotation axis for the delta
  // to equal the scene rotation exactly.
  demo.points[3] = {0.02, -0.01, 0.04};
  demo.points[11] = {0.09, 0.05, 0.04};
  Matrix canon = demo.payload("canonical");
  for (int idx : {3, 11}) {
    canon(idx, 0) = float(demo.points[idx].x);
    canon(idx, 1) = float(demo.points[idx].y);
    canon(idx, 2) = float(demo.points[idx].z);
  }
  demo.payloads.erase("canonical");
  demo.set_payload("canonical", canon);
  demo.payloads.erase("features");
  demo.set_payload("features", provider.compute(demo));
  DemoAnnotation ann = rigid_annotation(demo);
  Rotation3 rz = Rotation3::from_axis_angle({0, 0, 1}, kPi / 2);
  PointCloud target = apply_transform(demo, rz, {0, 0, 0});
  target.payloads.erase("features");
  target.set_payload("features", provider.compute(target));
  GraspPose pose = plan_grasp(ann, target);
  Rotation3 expect = rz.compose(ann.grasp_orientation);
  CHECK(pose.orientation.angle_to(expect) < 2.0 * kPi / 180.0);
}

TEST_CASE("plan_grasp equivariance under random transforms") {
  SyntheticRigidProvider provider(64, 0.0);
  PointCloud demo = demo_object(60, 27, provider);
  DemoAnnotation ann = rigid_annotation(demo);
  GraspPose base = plan_grasp(ann, demo);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Point3 axis{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    Rotation3 r = Rotation3::from_axis_angle(axis.normalized(), rng.uniform(-kPi, kPi));
    Point3 t{rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
    PointCloud target = apply_transform(demo, r, t);
    target.payloads.erase("features");
    target.set_payload("features", provider.compute(target));
    GraspPose pose = plan_grasp(ann, target);
    CHECK(distance(pose.position, r.rotate(base.position) + t) < 1e-6);
    CHECK(pose.orientation.norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("plan_grasp argmax invariant to positive feature scaling") {
  SyntheticRigidProvider provider(64, 0.01);
  PointCloud demo = demo_object(40, 33, provider);
  DemoAnnotation ann = rigid_annotation(demo);
  PointCloud target = apply_transform(demo, Rotation3::from_axis_angle({0, 0, 1}, 0.7), {0.1, 0.2, 0});
  target.payloads.erase("features");
  Matrix feats = provider.compute(target);
  target.set_payload("features", feats);
  auto [p1, m1] = locate_manipulation_point(ann, target);
  for (float& v : feats.data) v *= 37.5f;
  target.payloads.erase("features");
  target.set_payload("features", feats);
  auto [p2, m2] = locate_manipulation_point(ann, target);
  CHECK(m1.target_index == m2.target_index);
}

TEST_CASE("plan_grasp deformable uses the fixed orientation") {
  SyntheticDeformableProvider provider(64, 0.0);
  PointCloud sheet;
  Matrix uv(20, 2);
  for (int i = 0; i < 20; ++i) {
    sheet.points.push_back({(i % 5) * 0.1, (i / 5) * 0.1, 0.0});
    uv(i, 0) = float(i % 5);
    uv(i, 1) = float(i / 5);
  }
  sheet.set_payload("intrinsic", uv);
  sheet.set_payload("features", provider.compute(sheet));
  DemoAnnotation ann;
  ann.demo_cloud = sheet;
  ann.manipulation_index = 7;
  ann.category = ObjectCategory::Deformable;
  ann.fixed_orientation = Rotation3::identity();
  PointCloud bent = sheet;
  for (Point3& p : bent.points) p.z = 0.4 * std::sin(3 * p.x);
  bent.payloads.erase("features");
  bent.set_payload("features", provider.compute(bent));
  GraspPose pose = plan_grasp(ann, bent);
  CHECK(pose.orientation.angle_to(Rotation3::identity()) == doctest::Approx(0.0));
  CHECK(distance(pose.position, bent.points[7]) == 0.0);
}

TEST_CASE("plan_grasp degenerate reference direction") {
  SyntheticRigidProvider provider(64, 0.0);
  PointCloud demo = demo_object(30, 41, provider);
  DemoAnnotation ann = rigid_annotation(demo);
  // A single-point target collapses manipulation and reference matches.
  PointCloud target;
  target.points.push_back({0, 0, 0});
  Matrix f(1, 64);
  for (int j = 0; j < 64; ++j) f(0, j) = demo.payload("features")(0, j);
  target.set_payload("features", f);
  try {
    plan_grasp(ann, target);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "degenerate-reference");
  }
}

TEST_CASE("annotation validation") {
  SyntheticRigidProvider provider(64, 0.0);
  PointCloud demo = demo_object(30, 51, provider);
  DemoAnnotation ann = rigid_annotation(demo);
  CHECK_NOTHROW(ann.validate());
  ann.manipulation_index = 30;
  CHECK_THROWS_AS(ann.validate(), Error);
  ann.manipulation_index = 3;
  ann.reference_indices.clear();
  CHECK_THROWS_AS(ann.validate(), Error);  // rigid needs a reference
  ann.category = ObjectCategory::Deformable;
  CHECK_NOTHROW(ann.validate());
}
