#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "nlab/matrix.hpp"
#include "nlab/rng.hpp"

namespace nlab {

using Label = int;
using Labels = std::vector<Label>;

// Features with observed labels. true_labels is hidden ground truth kept for scoring;
// annotator_labels is N rows of A labels each.
struct LabeledDataset {
  Matrix features;
  Labels labels;
  int num_classes = 0;
  std::optional<Labels> true_labels;
  std::optional<std::vector<Labels>> annotator_labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dims() const noexcept { return features.cols(); }
  std::size_t num_annotators() const noexcept {
    return annotator_labels && !annotator_labels->empty() ? annotator_labels->front().size() : 0;
  }

  // Throws invalid_input when an invariant is broken.
  void validate() const;

  // Rows `idx` in the given order; every optional column follows.
  LabeledDataset subset(std::span<const std::size_t> idx) const;

  // Copy with the hidden ground truth removed. Training code only ever sees these.
  LabeledDataset training_view() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

struct BlobsParams {
  int num_classes = 2;
  std::size_t n_per_class = 100;
  std::size_t dims = 2;
  double separation = 8.0;
  std::uint64_t seed = 1;
};

struct RingsParams {
  int num_classes = 2;
  std::size_t n_per_class = 100;
  double noise_std = 0.1;
  std::uint64_t seed = 1;
};

// Centers sit on a regular polygon in the first two coordinates (a line when d = 1)
// whose shortest chord equals `separation`.
Matrix blob_centers(int num_classes, std::size_t dims, double separation);

LabeledDataset gen_blobs(const BlobsParams& params);
LabeledDataset gen_rings(const RingsParams& params);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

SplitIndices split_indices(const LabeledDataset& ds, double test_fraction, std::uint64_t seed);
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double test_fraction,
                                                std::uint64_t seed);

// Header: f0,...,f{d-1},label[,true][,ann0..ann{A-1}]
void save_csv(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_csv(const std::filesystem::path& path);

}  // namespace nlab
