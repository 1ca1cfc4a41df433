#include "pfl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "pfl/rng.hpp"

namespace pfl {

void Dataset::validate() const {
  if (feature_dim == 0) throw std::invalid_argument("dataset: feature_dim must be positive");
  if (features.size() != labels.size() * feature_dim) {
    throw std::invalid_argument("dataset: feature rows and label count differ");
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.feature_dim = feature_dim;
  out.num_classes = num_classes;
  out.features.reserve(indices.size() * feature_dim);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    auto r = row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

ClientDataset full_view(const Dataset& data, std::size_t client_id) {
  ClientDataset view{client_id, &data, std::vector<std::size_t>(data.size())};
  std::iota(view.indices.begin(), view.indices.end(), std::size_t{0});
  return view;
}

Dataset make_blobs_sample(std::size_t num_classes, std::size_t per_class, std::size_t feature_dim,
                          double spread, std::uint64_t seed, std::uint64_t sample_stream) {
  if (num_classes == 0 || per_class == 0 || feature_dim == 0) {
    throw std::invalid_argument("make_blobs: sizes must be positive");
  }
  if (!(spread >= 0.0)) throw std::invalid_argument("make_blobs: spread must be >= 0");

  std::normal_distribution<double> normal(0.0, 1.0);
  Rng center_rng = make_stream(seed, {tag(StreamTag::kData), 0});
  std::vector<double> centers(num_classes * feature_dim);
  for (double& c : centers) c = normal(center_rng);

  Rng rng = make_stream(seed, {tag(StreamTag::kData), 1 + sample_stream});
  const std::size_t total = num_classes * per_class;
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  Dataset out;
  out.feature_dim = feature_dim;
  out.num_classes = num_classes;
  out.features.resize(total * feature_dim);
  out.labels.resize(total);
  for (std::size_t slot = 0; slot < total; ++slot) {
    const std::size_t cls = order[slot] / per_class;
    out.labels[slot] = static_cast<int>(cls);
    for (std::size_t f = 0; f < feature_dim; ++f) {
      out.features[slot * feature_dim + f] = centers[cls * feature_dim + f] + spread * normal(rng);
    }
  }
  return out;
}

Dataset make_blobs(std::size_t num_classes, std::size_t per_class, std::size_t feature_dim,
                   double spread, std::uint64_t seed) {
  return make_blobs_sample(num_classes, per_class, feature_dim, spread, seed, 0);
}

std::vector<std::size_t> client_groups(std::size_t n_clients, std::size_t n_groups) {
  std::vector<std::size_t> group_of(n_clients);
  const std::size_t base = n_clients / n_groups;
  const std::size_t extra = n_clients % n_groups;
  std::size_t client = 0;
  for (std::size_t g = 0; g < n_groups; ++g) {
    const std::size_t count = base + (g < extra ? 1 : 0);
    for (std::size_t k = 0; k < count; ++k) group_of[client++] = g;
  }
  return group_of;
}

namespace {

std::vector<ClientDataset> partition_once(const Dataset& data, const PartitionSpec& spec,
                                          std::uint64_t attempt) {
  const std::size_t classes = data.num_classes;
  const std::size_t n_groups = std::min(classes, spec.n_genuine);
  const auto group_of = client_groups(spec.n_genuine, n_groups);
  std::vector<std::vector<std::size_t>> members(n_groups);
  for (std::size_t c = 0; c < spec.n_genuine; ++c) members[group_of[c]].push_back(c);

  std::vector<ClientDataset> clients(spec.n_genuine);
  for (std::size_t c = 0; c < spec.n_genuine; ++c) {
    clients[c].client_id = c;
    clients[c].source = &data;
  }

  Rng rng = make_stream(spec.seed, {tag(StreamTag::kPartition), attempt});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t home = static_cast<std::size_t>(data.labels[i]) % n_groups;
    std::size_t group = home;
    if (n_groups > 1 && unit(rng) >= spec.q) {
      // One of the other groups, uniformly.
      std::uniform_int_distribution<std::size_t> pick(0, n_groups - 2);
      group = pick(rng);
      if (group >= home) ++group;
    }
    const auto& pool = members[group];
    std::uniform_int_distribution<std::size_t> pick_client(0, pool.size() - 1);
    clients[pool[pick_client(rng)]].indices.push_back(i);
  }
  return clients;
}

}  // namespace

std::vector<ClientDataset> partition_noniid(const Dataset& data, const PartitionSpec& spec) {
  data.validate();
  if (spec.n_genuine == 0) throw std::invalid_argument("partition: n_genuine must be positive");
  const double q_min = 1.0 / static_cast<double>(data.num_classes);
  if (!(spec.q >= q_min - 1e-12 && spec.q <= 1.0)) {
    throw std::invalid_argument("partition: q must lie in [1/C, 1]");
  }
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto clients = partition_once(data, spec, static_cast<std::uint64_t>(attempt));
    const bool all_non_empty =
        std::all_of(clients.begin(), clients.end(), [](const ClientDataset& c) { return c.size() > 0; });
    if (all_non_empty) return clients;
  }
  throw std::invalid_argument("partition: could not give every client an example after 100 attempts");
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool parse_double(const std::string& cell, double& out) {
  const std::string t = trim(cell);
  if (t.empty()) return false;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

}  // namespace

Dataset load_csv(const std::string& path, std::optional<std::size_t> num_classes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: " + path + " is empty");
  const auto header = split_commas(line);
  if (header.size() < 2 || trim(header.back()) != "label") {
    throw std::runtime_error("load_csv: header must be f0,...,fk,label");
  }

  Dataset out;
  out.feature_dim = header.size() - 1;
  int max_label = -1;
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++row;
    const std::string where = " at row " + std::to_string(row) + " (line " + std::to_string(line_no) + ")";
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("load_csv: expected " + std::to_string(header.size()) + " cells" + where);
    }
    for (std::size_t f = 0; f < out.feature_dim; ++f) {
      double v = 0.0;
      if (!parse_double(cells[f], v)) {
        throw std::runtime_error("load_csv: non-numeric feature in column " + std::to_string(f) + where);
      }
      out.features.push_back(v);
    }
    double label_value = 0.0;
    if (!parse_double(cells.back(), label_value) || label_value < 0 ||
        label_value != std::floor(label_value)) {
      throw std::runtime_error("load_csv: label must be a non-negative integer" + where);
    }
    const int label = static_cast<int>(label_value);
    if (num_classes && static_cast<std::size_t>(label) >= *num_classes) {
      throw std::runtime_error("load_csv: label " + std::to_string(label) + " >= C=" +
                               std::to_string(*num_classes) + where);
    }
    max_label = std::max(max_label, label);
    out.labels.push_back(label);
  }
  out.num_classes = num_classes ? *num_classes : static_cast<std::size_t>(max_label + 1);
  if (out.labels.empty()) throw std::runtime_error("load_csv: " + path + " has no data rows");
  return out;
}

void write_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  for (std::size_t f = 0; f < data.feature_dim; ++f) out << 'f' << f << ',';
  out << "label\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.row(i)) out << v << ',';
    out << data.labels[i] << '\n';
  }
  if (!out) throw std::runtime_error("write_csv: write failed for " + path);
}

}  // namespace pfl
