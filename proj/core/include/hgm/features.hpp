#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "hgm/geometry.hpp"

namespace hgm {

enum class ObjectCategory { Rigid, Articulated, Deformable };

std::string category_name(ObjectCategory c);
ObjectCategory category_from_name(const std::string& name);

// Per-point feature extractor standing in for a large pre-trained model.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual const std::string& id() const = 0;
  virtual int feature_dim() const = 0;
  // Returns an N x D feature matrix; deterministic for identical input.
  virtual Matrix compute(const PointCloud& cloud) const = 0;
};

// Embeds each point's canonical-frame coordinates and semantic label through
// a fixed seeded random projection. Reads the "canonical" payload when
// present; otherwise canonicalizes the current geometry (centroid + principal
// axes), which is only pose-stable for rigid shapes.
class SyntheticRigidProvider : public FeatureProvider {
 public:
  SyntheticRigidProvider(int embed_dim = 64, double noise_sigma = 0.01, int num_labels = 8,
                         std::uint64_t seed = 7);
  const std::string& id() const override { return id_; }
  int feature_dim() const override { return embed_dim_; }
  Matrix compute(const PointCloud& cloud) const override;

 private:
  std::string id_ = "rigid-synth";
  int embed_dim_;
  double noise_sigma_;
  int num_labels_;
  std::uint64_t seed_;
  Matrix projection_;  // D x (3 + num_labels)
};

// Embeds intrinsic (material/UV) coordinates and semantic label; invariant
// under the simulator's deformation map. Requires the "intrinsic" payload.
class SyntheticDeformableProvider : public FeatureProvider {
 public:
  SyntheticDeformableProvider(int embed_dim = 64, double noise_sigma = 0.01, int num_labels = 8,
                              std::uint64_t seed = 11);
  const std::string& id() const override { return id_; }
  int feature_dim() const override { return embed_dim_; }
  Matrix compute(const PointCloud& cloud) const override;

 private:
  std::string id_ = "deform-synth";
  int embed_dim_;
  double noise_sigma_;
  int num_labels_;
  std::uint64_t seed_;
  Matrix projection_;  // D x (3 + num_labels)
};

struct ProviderRegistry {
  std::map<ObjectCategory, std::shared_ptr<FeatureProvider>> providers;
};

ProviderRegistry default_registry(double noise_sigma = 0.01, int embed_dim = 64);
std::shared_ptr<FeatureProvider> provider_for(ObjectCategory category,
                                              const ProviderRegistry& registry);

struct PcaModel {
  std::vector<float> mean;  // length D
  Matrix components;        // k x D, orthonormal rows
  int dim() const { return static_cast<int>(mean.size()); }
  int k() const { return components.rows; }
};

// Top-k principal directions of X via SVD of the centered data. The
// largest-magnitude entry of each component is made positive.
PcaModel fit_pca(const Matrix& X, int k);
Matrix pca_project(const PcaModel& model, const Matrix& X);

// Entry (i, j) = cosine similarity of features row i and anchor row j.
Matrix similarity_descriptor(const Matrix& features, const Matrix& anchor_features);

struct DescriptorSet {
  Matrix descriptors;  // N x (d + 3); last 3 columns are raw coordinates
  std::string route;   // "pca" or "anchor"
};

struct DescriptorContext {
  std::optional<PcaModel> pca;
  std::optional<Matrix> anchors;  // K x D anchor features
};

DescriptorSet build_descriptors(const PointCloud& cloud, ObjectCategory category,
                                const FeatureProvider& provider,
                                const DescriptorContext& context);

// Appends the cloud's raw coordinates as three extra columns.
Matrix concat_coords(const Matrix& semantic, const PointCloud& cloud);

}  // namespace hgm
