#include <doctest.h>

#include <cmath>

#include "hgm/features.hpp"

using namespace hgm;

namespace {

// Cloud at its canonical pose: the canonical payload echoes the coordinates.
PointCloud canonical_cloud(int n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud c;
  Matrix canon(n, 3), label(n, 1);
  for (int i = 0; i < n; ++i) {
    Point3 p{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
    c.points.push_back(p);
    canon(i, 0) = float(p.x);
    canon(i, 1) = float(p.y);
    canon(i, 2) = float(p.z);
    label(i, 0) = float(i % 3);
  }
  c.set_payload("canonical", canon);
  c.set_payload("label", label);
  return c;
}

Matrix random_matrix(int n, int d, std::uint64_t seed, double sigma = 1.0) {
  Rng rng(seed);
  Matrix m(n, d);
  for (float& v : m.data) v = float(sigma * rng.gaussian());
  return m;
}

}  // namespace

TEST_CASE("category names round trip") {
  for (auto c : {ObjectCategory::Rigid, ObjectCategory::Articulated, ObjectCategory::Deformable})
    CHECK(category_from_name(category_name(c)) == c);
  CHECK_THROWS_AS(category_from_name("plasma"), Error);
}

TEST_CASE("rigid provider output shape and determinism") {
  SyntheticRigidProvider provider(64, 0.01);
  PointCloud c = canonical_cloud(40, 2);
  Matrix f1 = provider.compute(c);
  Matrix f2 = provider.compute(c);
  CHECK(f1.rows == 40);
  CHECK(f1.cols == 64);
  CHECK(f1.data == f2.data);
}

TEST_CASE("rigid provider pose invariance within 3 sigma per component") {
  const double sigma = 0.01;
  SyntheticRigidProvider provider(64, sigma);
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud c = canonical_cloud(30, 100 + trial);
    Point3 axis{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    Rotation3 r = Rotation3::from_axis_angle(axis.normalized(), rng.uniform(-3, 3));
    PointCloud moved = apply_transform(c, r, {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    Matrix fa = provider.compute(c);
    Matrix fb = provider.compute(moved);
    for (std::size_t i = 0; i < fa.data.size(); ++i)
      CHECK(std::abs(fa.data[i] - fb.data[i]) < 3.0 * sigma);
  }
}

TEST_CASE("rigid provider noise-free features identical across poses") {
  SyntheticRigidProvider provider(64, 0.0);
  PointCloud c = canonical_cloud(25, 5);
  PointCloud moved = apply_transform(c, Rotation3::from_axis_angle({0, 0, 1}, 1.2), {0.3, 0, 0});
  CHECK(provider.compute(c).data == provider.compute(moved).data);
}

TEST_CASE("rigid provider falls back to geometric canonicalization") {
  SyntheticRigidProvider provider(64, 0.0);
  // Anisotropic cloud without a canonical payload: features must still be
  // pose-stable because the principal axes travel with the shape.
  Rng rng(23);
  PointCloud c;
  for (int i = 0; i < 60; ++i)
    c.points.push_back({rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.1), rng.uniform(-0.03, 0.03)});
  Rotation3 r = Rotation3::from_axis_angle(Point3{1, 2, 0.5}.normalized(), 0.9);
  PointCloud moved = apply_transform(c, r, {0.1, -0.2, 0.05});
  Matrix fa = provider.compute(c);
  Matrix fb = provider.compute(moved);
  for (std::size_t i = 0; i < fa.data.size(); ++i)
    CHECK(fa.data[i] == doctest::Approx(fb.data[i]).epsilon(1e-3));
}

TEST_CASE("deformable provider invariant under deformation at zero noise") {
  SyntheticDeformableProvider provider(64, 0.0);
  Rng rng(31);
  PointCloud c;
  Matrix uv(30, 2);
  for (int i = 0; i < 30; ++i) {
    c.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0});
    uv(i, 0) = float(i % 6) * 0.1f;
    uv(i, 1) = float(i / 6) * 0.1f;
  }
  c.set_payload("intrinsic", uv);
  Matrix before = provider.compute(c);
  for (Point3& p : c.points) {
    p.x += 0.3 * std::sin(p.y * 5);
    p.z += 0.2 * std::cos(p.x * 3);
  }
  Matrix after = provider.compute(c);
  CHECK(before.data == after.data);
}

TEST_CASE("deformable provider requires the intrinsic payload") {
  SyntheticDeformableProvider provider(64, 0.01);
  PointCloud c;
  c.points.push_back({0, 0, 0});
  try {
    provider.compute(c);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "no-intrinsic");
  }
}

TEST_CASE("fit_pca on identical rows") {
  Matrix X(20, 6);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 6; ++j) X(i, j) = float(j) * 0.5f;
  PcaModel m = fit_pca(X, 2);
  for (int j = 0; j < 6; ++j) CHECK(m.mean[j] == doctest::Approx(j * 0.5));
  Matrix proj = pca_project(m, X);
  for (float v : proj.data) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("fit_pca reconstructs rank-k data") {
  // Points in a 3-dim affine subspace of R^10.
  Rng rng(7);
  Matrix basis = random_matrix(3, 10, 70, 0.1);
  Matrix X(50, 10);
  std::vector<float> offset(10);
  for (auto& v : offset) v = float(rng.uniform(-0.05, 0.05));
  Rng rng2(8);
  for (int i = 0; i < 50; ++i) {
    double w0 = rng2.gaussian(), w1 = rng2.gaussian(), w2 = rng2.gaussian();
    for (int j = 0; j < 10; ++j)
      X(i, j) = float(offset[j] + w0 * basis(0, j) + w1 * basis(1, j) + w2 * basis(2, j));
  }
  PcaModel m = fit_pca(X, 3);
  Matrix proj = pca_project(m, X);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 10; ++j) {
      double rec = m.mean[j];
      for (int c = 0; c < 3; ++c) rec += double(proj(i, c)) * m.components(c, j);
      CHECK(std::abs(rec - X(i, j)) < 1e-6);
    }
}

TEST_CASE("fit_pca discarded-variance identity on random data") {
  // Small-magnitude entries keep f32 rounding far below the 1e-6 margin.
  Matrix X = random_matrix(100, 64, 99, 0.01);
  PcaModel full = fit_pca(X, 64);
  PcaModel m = fit_pca(X, 5);
  // Squared singular value i = total squared projection onto component i.
  Matrix proj_full = pca_project(full, X);
  double discarded = 0.0;
  for (int i = 0; i < 100; ++i)
    for (int c = 5; c < 64; ++c) discarded += double(proj_full(i, c)) * proj_full(i, c);
  Matrix proj = pca_project(m, X);
  double err = 0.0;
  for (int i = 0; i < 100; ++i)
    for (int j = 0; j < 64; ++j) {
      double rec = m.mean[j];
      for (int c = 0; c < 5; ++c) rec += double(proj(i, c)) * m.components(c, j);
      err += (X(i, j) - rec) * (X(i, j) - rec);
    }
  CHECK(std::abs(err - discarded) < 1e-6);
}

TEST_CASE("fit_pca component orthonormality and rank errors") {
  Matrix X = random_matrix(30, 12, 3);
  PcaModel m = fit_pca(X, 4);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      double dot = 0.0;
      for (int j = 0; j < 12; ++j) dot += double(m.components(a, j)) * m.components(b, j);
      CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-6);
    }
  try {
    fit_pca(X, 13);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "pca-rank");
  }
}

TEST_CASE("pca projections of fitted data are centered and decorrelated") {
  Matrix X = random_matrix(200, 16, 55, 0.01);
  PcaModel m = fit_pca(X, 5);
  Matrix proj = pca_project(m, X);
  double var_max = 0.0;
  std::vector<double> mean(5, 0.0);
  for (int i = 0; i < 200; ++i)
    for (int c = 0; c < 5; ++c) mean[c] += proj(i, c);
  for (double& v : mean) v /= 200;
  for (double v : mean) CHECK(std::abs(v) < 1e-9);
  std::vector<std::vector<double>> cov(5, std::vector<double>(5, 0.0));
  for (int i = 0; i < 200; ++i)
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 5; ++b) cov[a][b] += (proj(i, a) - mean[a]) * (proj(i, b) - mean[b]);
  for (int a = 0; a < 5; ++a) var_max = std::max(var_max, cov[a][a]);
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b)
      if (a != b) CHECK(std::abs(cov[a][b]) < 1e-6 * var_max);
}

TEST_CASE("pca_project closed forms and batch equals per-row loop") {
  Matrix X = random_matrix(40, 8, 21);
  PcaModel m = fit_pca(X, 3);
  Matrix mean_row(1, 8);
  for (int j = 0; j < 8; ++j) mean_row(0, j) = m.mean[j];
  Matrix z = pca_project(m, mean_row);
  for (float v : z.data) CHECK(std::abs(v) < 1e-6);
  Matrix shifted = mean_row;
  for (int j = 0; j < 8; ++j) shifted(0, j) += m.components(0, j);
  Matrix e1 = pca_project(m, shifted);
  CHECK(e1(0, 0) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(std::abs(e1(0, 1)) < 1e-5);
  Matrix batch = pca_project(m, X);
  for (int i = 0; i < X.rows; ++i) {
    Matrix one(1, 8);
    std::copy(X.row(i), X.row(i) + 8, one.row(0));
    Matrix p = pca_project(m, one);
    for (int c = 0; c < 3; ++c) CHECK(p(0, c) == batch(i, c));
  }
  Matrix wrong(2, 9);
  CHECK_THROWS_AS(pca_project(m, wrong), Error);
}

TEST_CASE("similarity_descriptor closed forms and brute force") {
  Matrix f = random_matrix(10, 8, 77);
  Matrix anchors(3, 8);
  for (int j = 0; j < 8; ++j) {
    anchors(0, j) = f(4, j);  // anchor 0 equals feature row 4
    anchors(1, j) = (j == 0) ? 1.0f : 0.0f;
    anchors(2, j) = (j == 1) ? 1.0f : 0.0f;
  }
  Matrix sim = similarity_descriptor(f, anchors);
  CHECK(sim(4, 0) == doctest::Approx(1.0));
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0, na = 0, nb = 0;
      for (int c = 0; c < 8; ++c) {
        dot += double(f(i, c)) * anchors(j, c);
        na += double(f(i, c)) * f(i, c);
        nb += double(anchors(j, c)) * anchors(j, c);
      }
      CHECK(sim(i, j) == doctest::Approx(dot / std::sqrt(na * nb)).epsilon(1e-6));
      CHECK(sim(i, j) >= -1.0f);
      CHECK(sim(i, j) <= 1.0f);
    }
  Matrix bad(3, 7);
  CHECK_THROWS_AS(similarity_descriptor(f, bad), Error);
}

TEST_CASE("similarity_descriptor orthogonal anchors") {
  Matrix anchors(4, 6);
  for (int j = 0; j < 4; ++j) anchors(j, j) = 2.0f;
  Matrix f(1, 6);
  f(0, 0) = 5.0f;  // scaled anchor 0
  Matrix sim = similarity_descriptor(f, anchors);
  CHECK(sim(0, 0) == doctest::Approx(1.0));
  for (int j = 1; j < 4; ++j) CHECK(sim(0, j) == doctest::Approx(0.0));
}

TEST_CASE("build_descriptors routes and widths") {
  PointCloud c = canonical_cloud(30, 9);
  SyntheticRigidProvider rigid(64, 0.0);
  DescriptorContext ctx;
  ctx.pca = fit_pca(rigid.compute(c), 5);
  DescriptorSet set = build_descriptors(c, ObjectCategory::Rigid, rigid, ctx);
  CHECK(set.route == "pca");
  CHECK(set.descriptors.cols == 8);
  CHECK(set.descriptors.rows == 30);
  for (int i = 0; i < 30; ++i) {
    CHECK(set.descriptors(i, 5) == float(c.points[i].x));
    CHECK(set.descriptors(i, 6) == float(c.points[i].y));
    CHECK(set.descriptors(i, 7) == float(c.points[i].z));
  }

  DescriptorContext empty;
  try {
    build_descriptors(c, ObjectCategory::Rigid, rigid, empty);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "missing-context");
  }
}

TEST_CASE("build_descriptors deformable single-anchor closed form") {
  SyntheticDeformableProvider provider(64, 0.0);
  PointCloud c;
  Matrix uv(5, 2);
  for (int i = 0; i < 5; ++i) {
    c.points.push_back({0.1 * i, -0.2, 0.05 * i});
    uv(i, 0) = 0.3f;  // identical intrinsic coords -> identical features
    uv(i, 1) = 0.7f;
  }
  c.set_payload("intrinsic", uv);
  Matrix feats = provider.compute(c);
  Matrix anchor(1, 64);
  std::copy(feats.row(0), feats.row(0) + 64, anchor.row(0));
  DescriptorContext ctx;
  ctx.anchors = anchor;
  DescriptorSet set = build_descriptors(c, ObjectCategory::Deformable, provider, ctx);
  CHECK(set.route == "anchor");
  CHECK(set.descriptors.cols == 4);
  for (int i = 0; i < 5; ++i) {
    CHECK(set.descriptors(i, 0) == doctest::Approx(1.0));
    CHECK(set.descriptors(i, 1) == float(c.points[i].x));
    CHECK(set.descriptors(i, 2) == float(c.points[i].y));
    CHECK(set.descriptors(i, 3) == float(c.points[i].z));
  }
  DescriptorContext no_anchor;
  no_anchor.pca = fit_pca(feats, 2);
  CHECK_THROWS_AS(build_descriptors(c, ObjectCategory::Deformable, provider, no_anchor), Error);
}

TEST_CASE("provider registry routing") {
  ProviderRegistry reg = default_registry();
  CHECK(provider_for(ObjectCategory::Deformable, reg)->id() == "deform-synth");
  CHECK(provider_for(ObjectCategory::Articulated, reg)->id() == "rigid-synth");
  CHECK(provider_for(ObjectCategory::Rigid, reg).get() ==
        provider_for(ObjectCategory::Articulated, reg).get());
  ProviderRegistry partial;
  partial.providers[ObjectCategory::Deformable] = reg.providers[ObjectCategory::Deformable];
  try {
    provider_for(ObjectCategory::Rigid, partial);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "no-provider");
  }
}
