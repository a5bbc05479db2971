#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "minv/models.hpp"
#include "minv/tensor.hpp"

namespace minv {

enum class Role { kPrivate, kAuxiliary };

const char* role_name(Role r);
Role role_from_name(const std::string& name);

// Latent cluster geometry + sampling controls for one dataset pair.  Private
// and auxiliary splits share the oracle generator (one manifold) but own
// disjoint label sets and disjoint latent clusters.
struct DataConfig {
  OracleConfig oracle;
  std::size_t private_classes = 8;
  std::size_t aux_classes = 8;
  std::size_t samples_per_class = 200;
  double noise_sigma = 0.0;     // ambient gaussian noise added to x
  double cluster_sep = 1.2;     // minimum latent distance between class centers
  double cluster_std = 0.25;    // latent within-class standard deviation
  double center_radius = 1.8;   // class centers live in this latent ball
};

struct ManifoldDataset {
  Role role = Role::kPrivate;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  std::size_t latent_dim = 0;
  std::size_t ambient_dim = 0;
  std::vector<std::size_t> class_ids;  // distinct global labels in this split
  std::vector<std::size_t> labels;     // per-sample global label
  std::vector<Tensor> xs;              // ambient samples [d]
  std::vector<Tensor> zs;              // true latents [k]
  std::size_t size() const { return xs.size(); }
};

struct DatasetPair {
  ManifoldDataset priv;
  ManifoldDataset aux;
  std::vector<Tensor> centers;  // latent class centers, global label order
};

// Deterministic in (config, seed).  The same oracle generator must be passed
// that the config describes; with noise_sigma == 0 every x equals the oracle
// image of its true latent bit-for-bit.
DatasetPair make_datasets(const DataConfig& cfg, std::uint64_t seed, const Generator& oracle);

// On-disk layout: <dir>/manifest.json + samples.f64le + labels.u32le +
// latents.f64le (little-endian, row-major).
void save_dataset(const ManifoldDataset& ds, const std::string& dir);
ManifoldDataset load_dataset(const std::string& dir);

// Minimum pairwise distance between per-class latent means.
double class_mean_separation(const ManifoldDataset& ds);

}  // namespace minv
