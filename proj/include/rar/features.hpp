#pragma once

// Observation descriptors and the cosine similarity used for retrieval.

#include "rar/render.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace rar {

struct Embedding {
  std::string extractor_id;
  std::vector<float> values;  // unit L2 norm

  std::size_t dim() const { return values.size(); }
  bool operator==(const Embedding&) const = default;
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;
  virtual bool deterministic() const { return true; }

  /// Unnormalised descriptor. Throws Error on malformed observations.
  virtual std::vector<double> describe(const Observation& o) const = 0;

  Embedding extract(const Observation& o) const;
};

/// Grey and min-max scaled depth, each box-averaged to 16x16 (dim 512).
class PatchExtractor final : public FeatureExtractor {
 public:
  static constexpr int kGrid = 16;
  std::string id() const override { return "patch"; }
  std::size_t dim() const override { return 2 * kGrid * kGrid; }
  std::vector<double> describe(const Observation& o) const override;
};

/// Fixed Gaussian projection of the raw RGBD pixels to 256 dimensions.
class RandomProjectionExtractor final : public FeatureExtractor {
 public:
  static constexpr std::size_t kDim = 256;
  static constexpr std::uint64_t kSeed = 0xD1A0;
  std::string id() const override { return "random_projection"; }
  std::size_t dim() const override { return kDim; }
  std::vector<double> describe(const Observation& o) const override;
};

/// 8-bin gradient orientation histograms over an 8x8 grid of the grey image.
class GradientHistogramExtractor final : public FeatureExtractor {
 public:
  static constexpr int kGrid = 8;
  static constexpr int kBins = 8;
  std::string id() const override { return "gradient_histogram"; }
  std::size_t dim() const override { return kGrid * kGrid * kBins; }
  std::vector<double> describe(const Observation& o) const override;
};

std::vector<std::string> builtin_extractors();
/// Throws Error for ids that are not built in.
std::shared_ptr<const FeatureExtractor> make_extractor(const std::string& id);

/// Cosine similarity clamped to [-1, 1]. Throws Error on extractor or
/// dimension mismatch, or on zero vectors.
double similarity(const Embedding& a, const Embedding& b);
double cosine(const float* a, const float* b, std::size_t n);

/// Unit-normalises `v`; throws Error when it has zero or non-finite norm.
Embedding normalized_embedding(const std::string& extractor_id, const std::vector<double>& v);

/// Grey level in [0, 1] and per-image min-max scaled depth in [0, 1].
std::vector<double> grey_channel(const Observation& o);
std::vector<double> scaled_depth(const Observation& o);

// RAREMB1 interchange files. Keys are kept in file order.
using EmbeddingTable = std::vector<std::pair<std::string, Embedding>>;

void export_embeddings(const std::filesystem::path& path, const std::string& extractor_id,
                       const EmbeddingTable& table);
/// Vectors are registered as "external:<name>" and re-normalised. Errors
/// name the offending record index.
EmbeddingTable import_embeddings(const std::filesystem::path& path);

}  // namespace rar
