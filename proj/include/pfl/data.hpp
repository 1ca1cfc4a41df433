#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pfl {

/// Labelled examples, features stored row-major.
struct Dataset {
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * feature_dim, feature_dim};
  }
  /// Throws std::invalid_argument when shapes or labels are inconsistent.
  void validate() const;

  /// Copy of the listed rows.
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// One genuine client's share of a dataset. `source` must outlive the view.
struct ClientDataset {
  std::size_t client_id = 0;
  const Dataset* source = nullptr;
  std::vector<std::size_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
};

/// Whole dataset as a view.
ClientDataset full_view(const Dataset& data, std::size_t client_id = 0);

struct PartitionSpec {
  std::size_t n_genuine = 1;
  double q = 0.1;  ///< in [1/C, 1]; 1/C is IID, 1 is one class per group
  std::uint64_t seed = 0;
};

/// C isotropic Gaussian clusters with centers drawn from N(0, I); labels are
/// cluster ids. Rows are shuffled.
Dataset make_blobs(std::size_t num_classes, std::size_t per_class, std::size_t feature_dim,
                   double spread, std::uint64_t seed);

/// Draws a fresh sample from the same cluster centers as `make_blobs(..., seed)`
/// using a different sampling stream; used for held-out test and root sets.
Dataset make_blobs_sample(std::size_t num_classes, std::size_t per_class, std::size_t feature_dim,
                          double spread, std::uint64_t seed, std::uint64_t sample_stream);

/// Label-skew partition. Clients form C contiguous groups by id; an example of
/// class l goes to group l with probability q, otherwise to one of the other
/// groups uniformly, then to a uniform client inside the chosen group.
/// When n_genuine < C, class l maps to group (l mod n_genuine).
std::vector<ClientDataset> partition_noniid(const Dataset& data, const PartitionSpec& spec);

/// Group index of each client under the contiguous-group rule.
std::vector<std::size_t> client_groups(std::size_t n_clients, std::size_t n_groups);

/// Reads `f0,...,fk,label` CSV with a header row. When num_classes is given,
/// labels must be below it; otherwise C = max label + 1.
Dataset load_csv(const std::string& path, std::optional<std::size_t> num_classes = std::nullopt);
void write_csv(const Dataset& data, const std::string& path);

}  // namespace pfl
