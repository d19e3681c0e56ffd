#include "hgm/features.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace hgm {

namespace {

// Scale applied to coordinates before projection so geometric structure
// dominates the injected noise.
constexpr double kCoordGain = 5.0;

Matrix random_projection(int out_dim, int in_dim, std::uint64_t seed) {
  Rng rng(seed);
  Matrix p(out_dim, in_dim);
  for (float& v : p.data) v = static_cast<float>(rng.gaussian());
  return p;
}

int point_label(const PointCloud& cloud, int i, int num_labels) {
  if (!cloud.has_payload("label")) return 0;
  const Matrix& lab = cloud.payload("label");
  long v = std::lround(lab(i, 0));
  return static_cast<int>(((v % num_labels) + num_labels) % num_labels);
}

// Per-point bounded noise keyed on the world coordinates, so identical
// inputs map to identical outputs while different poses draw fresh noise.
double bounded_noise(std::uint64_t seed, const Point3& p, int component, double sigma) {
  std::uint64_t h = seed;
  h = hash_double(h, p.x);
  h = hash_double(h, p.y);
  h = hash_double(h, p.z);
  h = hash_combine(h, static_cast<std::uint64_t>(component));
  double u = (splitmix64(h) >> 11) * (1.0 / 9007199254740992.0);  // [0,1)
  return sigma * (2.0 * u - 1.0);
}

Matrix project_inputs(const Matrix& inputs, const Matrix& projection,
                      const PointCloud& cloud, std::uint64_t seed, double sigma) {
  const int n = inputs.rows;
  const int d = projection.rows;
  Matrix out(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int c = 0; c < inputs.cols; ++c) acc += double(projection(j, c)) * inputs(i, c);
      if (sigma > 0.0) acc += bounded_noise(seed, cloud.points[i], j, sigma);
      out(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

// Centroid + principal-axes canonicalization of the current geometry.
Matrix canonicalize_geometry(const PointCloud& cloud) {
  const int n = cloud.size();
  Eigen::MatrixXd pts(n, 3);
  for (int i = 0; i < n; ++i)
    pts.row(i) << cloud.points[i].x, cloud.points[i].y, cloud.points[i].z;
  Eigen::RowVector3d mean = pts.colwise().mean();
  pts.rowwise() -= mean;
  Eigen::Matrix3d cov = pts.transpose() * pts / std::max(1, n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  // Columns ordered by descending eigenvalue, sign fixed by the
  // largest-magnitude entry, right-handed triad.
  Eigen::Matrix3d axes;
  for (int a = 0; a < 3; ++a) axes.col(a) = es.eigenvectors().col(2 - a);
  for (int a = 0; a < 2; ++a) {
    int arg = 0;
    axes.col(a).cwiseAbs().maxCoeff(&arg);
    if (axes(arg, a) < 0) axes.col(a) = -axes.col(a);
  }
  axes.col(2) = axes.col(0).cross(axes.col(1));
  Eigen::MatrixXd canon = pts * axes;
  Matrix out(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) out(i, c) = static_cast<float>(canon(i, c));
  return out;
}

}  // namespace

std::string category_name(ObjectCategory c) {
  switch (c) {
    case ObjectCategory::Rigid: return "rigid";
    case ObjectCategory::Articulated: return "articulated";
    case ObjectCategory::Deformable: return "deformable";
  }
  return "rigid";
}

ObjectCategory category_from_name(const std::string& name) {
  if (name == "rigid") return ObjectCategory::Rigid;
  if (name == "articulated") return ObjectCategory::Articulated;
  if (name == "deformable") return ObjectCategory::Deformable;
  throw Error("bad-category", name);
}

SyntheticRigidProvider::SyntheticRigidProvider(int embed_dim, double noise_sigma, int num_labels,
                                               std::uint64_t seed)
    : embed_dim_(embed_dim),
      noise_sigma_(noise_sigma),
      num_labels_(num_labels),
      seed_(seed),
      projection_(random_projection(embed_dim, 3 + num_labels, seed)) {}

Matrix SyntheticRigidProvider::compute(const PointCloud& cloud) const {
  const int n = cloud.size();
  if (n == 0) throw Error("empty-cloud", "SyntheticRigidProvider");
  Matrix canon;
  if (cloud.has_payload("canonical")) {
    canon = cloud.payload("canonical");
    if (canon.cols != 3) throw Error("dim-mismatch", "canonical payload must be N x 3");
  } else {
    canon = canonicalize_geometry(cloud);
  }
  Matrix inputs(n, 3 + num_labels_);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) inputs(i, c) = static_cast<float>(kCoordGain * canon(i, c));
    inputs(i, 3 + point_label(cloud, i, num_labels_)) = 1.0f;
  }
  return project_inputs(inputs, projection_, cloud, seed_ ^ 0xA5A5ull, noise_sigma_);
}

SyntheticDeformableProvider::SyntheticDeformableProvider(int embed_dim, double noise_sigma,
                                                         int num_labels, std::uint64_t seed)
    : embed_dim_(embed_dim),
      noise_sigma_(noise_sigma),
      num_labels_(num_labels),
      seed_(seed),
      projection_(random_projection(embed_dim, 3 + num_labels, seed)) {}

Matrix SyntheticDeformableProvider::compute(const PointCloud& cloud) const {
  const int n = cloud.size();
  if (n == 0) throw Error("empty-cloud", "SyntheticDeformableProvider");
  if (!cloud.has_payload("intrinsic"))
    throw Error("no-intrinsic", "deformable provider needs the intrinsic payload");
  const Matrix& uv = cloud.payload("intrinsic");
  if (uv.cols < 2 || uv.cols > 3) throw Error("dim-mismatch", "intrinsic payload must be N x 2|3");
  Matrix inputs(n, 3 + num_labels_);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < uv.cols; ++c) inputs(i, c) = static_cast<float>(kCoordGain * uv(i, c));
    inputs(i, 3 + point_label(cloud, i, num_labels_)) = 1.0f;
  }
  return project_inputs(inputs, projection_, cloud, seed_ ^ 0x5A5Aull, noise_sigma_);
}

ProviderRegistry default_registry(double noise_sigma, int embed_dim) {
  ProviderRegistry reg;
  auto rigid = std::make_shared<SyntheticRigidProvider>(embed_dim, noise_sigma);
  auto deform = std::make_shared<SyntheticDeformableProvider>(embed_dim, noise_sigma);
  reg.providers[ObjectCategory::Rigid] = rigid;
  reg.providers[ObjectCategory::Articulated] = rigid;  // shared provider
  reg.providers[ObjectCategory::Deformable] = deform;
  return reg;
}

std::shared_ptr<FeatureProvider> provider_for(ObjectCategory category,
                                              const ProviderRegistry& registry) {
  auto it = registry.providers.find(category);
  if (it == registry.providers.end()) throw Error("no-provider", category_name(category));
  return it->second;
}

PcaModel fit_pca(const Matrix& X, int k) {
  const int n = X.rows, d = X.cols;
  if (k < 1 || k > std::min(n, d)) throw Error("pca-rank", "k must satisfy 1 <= k <= min(N, D)");
  Eigen::MatrixXd M(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) M(i, j) = X(i, j);
  Eigen::RowVectorXd mean = M.colwise().mean();
  M.rowwise() -= mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinV);
  PcaModel model;
  model.mean.resize(d);
  for (int j = 0; j < d; ++j) model.mean[j] = static_cast<float>(mean(j));
  model.components = Matrix(k, d);
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd v = svd.matrixV().col(c);
    int arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (int j = 0; j < d; ++j) model.components(c, j) = static_cast<float>(v(j));
  }
  return model;
}

Matrix pca_project(const PcaModel& model, const Matrix& X) {
  if (X.cols != model.dim()) throw Error("dim-mismatch", "pca_project");
  Matrix out(X.rows, model.k());
  for (int i = 0; i < X.rows; ++i)
    for (int c = 0; c < model.k(); ++c) {
      double acc = 0.0;
      for (int j = 0; j < X.cols; ++j)
        acc += double(model.components(c, j)) * (X(i, j) - model.mean[j]);
      out(i, c) = static_cast<float>(acc);
    }
  return out;
}

Matrix similarity_descriptor(const Matrix& features, const Matrix& anchor_features) {
  if (features.cols != anchor_features.cols) throw Error("dim-mismatch", "similarity_descriptor");
  if (anchor_features.rows < 1) throw Error("dim-mismatch", "need at least one anchor");
  Matrix out(features.rows, anchor_features.rows);
  for (int i = 0; i < features.rows; ++i)
    for (int j = 0; j < anchor_features.rows; ++j)
      out(i, j) = static_cast<float>(
          cosine_similarity(features.row(i), anchor_features.row(j), features.cols));
  return out;
}

Matrix concat_coords(const Matrix& semantic, const PointCloud& cloud) {
  if (semantic.rows != cloud.size()) throw Error("dim-mismatch", "concat_coords");
  Matrix out(semantic.rows, semantic.cols + 3);
  for (int i = 0; i < semantic.rows; ++i) {
    std::copy(semantic.row(i), semantic.row(i) + semantic.cols, out.row(i));
    out(i, semantic.cols + 0) = static_cast<float>(cloud.points[i].x);
    out(i, semantic.cols + 1) = static_cast<float>(cloud.points[i].y);
    out(i, semantic.cols + 2) = static_cast<float>(cloud.points[i].z);
  }
  return out;
}

DescriptorSet build_descriptors(const PointCloud& cloud, ObjectCategory category,
                                const FeatureProvider& provider,
                                const DescriptorContext& context) {
  Matrix features = provider.compute(cloud);
  DescriptorSet set;
  if (category == ObjectCategory::Deformable) {
    if (!context.anchors) throw Error("missing-context", "deformable descriptors need anchors");
    set.descriptors = concat_coords(similarity_descriptor(features, *context.anchors), cloud);
    set.route = "anchor";
  } else {
    if (!context.pca) throw Error("missing-context", "rigid descriptors need a fitted PcaModel");
    set.descriptors = concat_coords(pca_project(*context.pca, features), cloud);
    set.route = "pca";
  }
  return set;
}

}  // namespace hgm
