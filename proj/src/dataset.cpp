#include "minv/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "minv/errors.hpp"
#include "minv/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset payloads are written as raw little-endian doubles");

namespace fs = std::filesystem;

namespace minv {

const char* role_name(Role r) { return r == Role::kPrivate ? "private" : "auxiliary"; }

Role role_from_name(const std::string& name) {
  if (name == "private") return Role::kPrivate;
  if (name == "auxiliary") return Role::kAuxiliary;
  throw ConfigError("unknown dataset role '" + name + "'");
}

namespace {

// Uniform point in the radius-R ball.
Tensor ball_point(Rng& rng, std::size_t k, double radius) {
  Tensor dir = rng.unit_vector(k);
  const double r = radius * std::pow(rng.uniform(), 1.0 / double(k));
  for (double& v : dir.data()) v *= r;
  return dir;
}

std::vector<Tensor> draw_centers(Rng& rng, std::size_t count, std::size_t k, double sep,
                                 double radius) {
  // Centers are rejected below 1.15x the configured separation so that
  // measured class means (center + O(std/sqrt(n)) jitter) still clear it.
  const double margin_sep = 1.15 * sep;
  std::vector<Tensor> centers;
  std::size_t attempts = 0;
  while (centers.size() < count) {
    if (++attempts > 200000) {
      throw ConfigError("could not place " + std::to_string(count) +
                        " class centers with separation " + std::to_string(sep) +
                        " inside radius " + std::to_string(radius));
    }
    Tensor cand = ball_point(rng, k, radius);
    bool ok = true;
    for (const Tensor& c : centers) {
      if (sub(cand, c).norm() < margin_sep) {
        ok = false;
        break;
      }
    }
    if (ok) centers.push_back(std::move(cand));
  }
  return centers;
}

ManifoldDataset sample_split(Role role, const DataConfig& cfg, std::uint64_t seed,
                             const Generator& oracle, const std::vector<Tensor>& centers,
                             std::size_t first_class, std::size_t num_classes, Rng& rng) {
  ManifoldDataset ds;
  ds.role = role;
  ds.seed = seed;
  ds.noise_sigma = cfg.noise_sigma;
  ds.latent_dim = cfg.oracle.latent_dim;
  ds.ambient_dim = cfg.oracle.ambient_dim;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t label = first_class + c;
    ds.class_ids.push_back(label);
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
      Tensor z = centers[label];
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += cfg.cluster_std * rng.gaussian();
      Tensor x = sample_generator(oracle, z);
      if (cfg.noise_sigma > 0.0) {
        for (double& v : x.data()) v += cfg.noise_sigma * rng.gaussian();
      }
      ds.labels.push_back(label);
      ds.zs.push_back(std::move(z));
      ds.xs.push_back(std::move(x));
    }
  }
  return ds;
}

void write_bytes(const fs::path& p, const void* data, std::size_t bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ParseError("cannot open '" + p.string() + "' for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

std::vector<char> read_exact(const fs::path& p, std::size_t expected_bytes) {
  std::ifstream in(p, std::ios::binary | std::ios::ate);
  if (!in) throw MissingArtifactError("dataset payload not found: " + p.string());
  const auto actual = static_cast<std::size_t>(in.tellg());
  if (actual != expected_bytes) {
    // Report where valid data ends: for truncation, the offset of the first
    // missing byte.
    throw ParseError("'" + p.string() + "' has " + std::to_string(actual) +
                         " bytes, expected " + std::to_string(expected_bytes),
                     static_cast<long long>(std::min(actual, expected_bytes)));
  }
  std::vector<char> buf(expected_bytes);
  in.seekg(0);
  in.read(buf.data(), static_cast<std::streamsize>(expected_bytes));
  return buf;
}

const nlohmann::json& manifest_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ParseError(std::string("manifest missing field '") + key + "'");
  return j.at(key);
}

}  // namespace

DatasetPair make_datasets(const DataConfig& cfg, std::uint64_t seed, const Generator& oracle) {
  if (oracle.latent_dim() != cfg.oracle.latent_dim ||
      oracle.ambient_dim() != cfg.oracle.ambient_dim) {
    throw ConfigError("oracle generator dims do not match the data config");
  }
  if (cfg.private_classes == 0 || cfg.aux_classes == 0 || cfg.samples_per_class == 0) {
    throw ConfigError("class and sample counts must be positive");
  }
  Rng root(seed);
  Rng center_rng = root.child(0x11);
  Rng priv_rng = root.child(0x22);
  Rng aux_rng = root.child(0x33);

  DatasetPair pair;
  pair.centers = draw_centers(center_rng, cfg.private_classes + cfg.aux_classes,
                              cfg.oracle.latent_dim, cfg.cluster_sep, cfg.center_radius);
  pair.priv = sample_split(Role::kPrivate, cfg, seed, oracle, pair.centers, 0,
                           cfg.private_classes, priv_rng);
  pair.aux = sample_split(Role::kAuxiliary, cfg, seed, oracle, pair.centers,
                          cfg.private_classes, cfg.aux_classes, aux_rng);
  return pair;
}

void save_dataset(const ManifoldDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  const std::size_t n = ds.size();

  nlohmann::json manifest = {
      {"format_version", "1.0.0"},
      {"role", role_name(ds.role)},
      {"seed", ds.seed},
      {"noise_sigma", ds.noise_sigma},
      {"latent_dim", ds.latent_dim},
      {"ambient_dim", ds.ambient_dim},
      {"num_samples", n},
      {"class_ids", ds.class_ids},
      {"samples_file", "samples.f64le"},
      {"labels_file", "labels.u32le"},
      {"latents_file", "latents.f64le"},
  };
  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw ParseError("cannot open manifest for writing in " + dir);
  mf << manifest.dump(2) << "\n";

  std::vector<double> flat(n * ds.ambient_dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ds.ambient_dim; ++j) flat[i * ds.ambient_dim + j] = ds.xs[i][j];
  }
  write_bytes(fs::path(dir) / "samples.f64le", flat.data(), flat.size() * sizeof(double));

  std::vector<double> lat(n * ds.latent_dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ds.latent_dim; ++j) lat[i * ds.latent_dim + j] = ds.zs[i][j];
  }
  write_bytes(fs::path(dir) / "latents.f64le", lat.data(), lat.size() * sizeof(double));

  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<std::uint32_t>(ds.labels[i]);
  }
  write_bytes(fs::path(dir) / "labels.u32le", labels.data(), labels.size() * sizeof(std::uint32_t));
}

ManifoldDataset load_dataset(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream mf(mpath);
  if (!mf) throw MissingArtifactError("dataset manifest not found: " + mpath.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed manifest '" + mpath.string() + "': " + e.what(),
                     static_cast<long long>(e.byte));
  }

  ManifoldDataset ds;
  ds.role = role_from_name(manifest_field(manifest, "role").get<std::string>());
  ds.seed = manifest_field(manifest, "seed").get<std::uint64_t>();
  ds.noise_sigma = manifest_field(manifest, "noise_sigma").get<double>();
  ds.latent_dim = manifest_field(manifest, "latent_dim").get<std::size_t>();
  ds.ambient_dim = manifest_field(manifest, "ambient_dim").get<std::size_t>();
  ds.class_ids = manifest_field(manifest, "class_ids").get<std::vector<std::size_t>>();
  const auto n = manifest_field(manifest, "num_samples").get<std::size_t>();
  const std::string samples_file = manifest_field(manifest, "samples_file").get<std::string>();
  const std::string labels_file = manifest_field(manifest, "labels_file").get<std::string>();
  const std::string latents_file = manifest_field(manifest, "latents_file").get<std::string>();

  const auto xbytes = read_exact(fs::path(dir) / samples_file, n * ds.ambient_dim * sizeof(double));
  const auto zbytes = read_exact(fs::path(dir) / latents_file, n * ds.latent_dim * sizeof(double));
  const auto lbytes = read_exact(fs::path(dir) / labels_file, n * sizeof(std::uint32_t));

  const double* xs = reinterpret_cast<const double*>(xbytes.data());
  const double* zs = reinterpret_cast<const double*>(zbytes.data());
  const std::uint32_t* ls = reinterpret_cast<const std::uint32_t*>(lbytes.data());
  ds.xs.reserve(n);
  ds.zs.reserve(n);
  ds.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.xs.emplace_back(std::vector<std::size_t>{ds.ambient_dim},
                       std::vector<double>(xs + i * ds.ambient_dim, xs + (i + 1) * ds.ambient_dim));
    ds.zs.emplace_back(std::vector<std::size_t>{ds.latent_dim},
                       std::vector<double>(zs + i * ds.latent_dim, zs + (i + 1) * ds.latent_dim));
    ds.labels.push_back(ls[i]);
  }
  return ds;
}

double class_mean_separation(const ManifoldDataset& ds) {
  std::vector<Tensor> means;
  for (std::size_t cid : ds.class_ids) {
    Tensor mean({ds.latent_dim});
    std::size_t count = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] != cid) continue;
      for (std::size_t j = 0; j < ds.latent_dim; ++j) mean[j] += ds.zs[i][j];
      ++count;
    }
    if (count == 0) throw DegenerateError("class " + std::to_string(cid) + " has no samples");
    for (double& v : mean.data()) v /= double(count);
    means.push_back(std::move(mean));
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < means.size(); ++a) {
    for (std::size_t b = a + 1; b < means.size(); ++b) {
      best = std::min(best, sub(means[a], means[b]).norm());
    }
  }
  return best;
}

}  // namespace minv
