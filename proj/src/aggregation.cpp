#include "pfl/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pfl {

namespace {

void require_updates(std::span<const ModelUpdate> updates, std::size_t min_count, const char* rule) {
  if (updates.size() < min_count) {
    throw std::invalid_argument(std::string(rule) + ": needs at least " + std::to_string(min_count) +
                                " updates, got " + std::to_string(updates.size()));
  }
  for (const auto& u : updates) require_same_size(u.update.size(), updates.front().update.size(), rule);
}

std::vector<std::size_t> all_ids(std::span<const ModelUpdate> updates) {
  std::vector<std::size_t> ids;
  ids.reserve(updates.size());
  for (const auto& u : updates) ids.push_back(u.client_id);
  return ids;
}

// Sum in input order, then divide.
ParamVector plain_mean(std::span<const ModelUpdate> updates, std::span<const std::size_t> which) {
  ParamVector out(updates.front().update.size());
  for (std::size_t idx : which) out += updates[idx].update;
  const double count = static_cast<double>(which.size());
  for (double& v : out) v /= count;
  return out;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

RuleKind parse_rule(std::string_view key) {
  if (key == "fedavg") return RuleKind::kFedAvg;
  if (key == "multikrum") return RuleKind::kMultiKrum;
  if (key == "median") return RuleKind::kMedian;
  if (key == "trmean") return RuleKind::kTrMean;
  if (key == "normbound") return RuleKind::kNormBound;
  if (key == "fltrust") return RuleKind::kFlTrust;
  if (key == "flame") return RuleKind::kFlame;
  if (key == "flcert") return RuleKind::kFlCert;
  if (key == "fldetector") return RuleKind::kFlDetector;
  throw std::invalid_argument("unknown defense '" + std::string(key) + "'");
}

std::string_view rule_key(RuleKind kind) {
  switch (kind) {
    case RuleKind::kFedAvg: return "fedavg";
    case RuleKind::kMultiKrum: return "multikrum";
    case RuleKind::kMedian: return "median";
    case RuleKind::kTrMean: return "trmean";
    case RuleKind::kNormBound: return "normbound";
    case RuleKind::kFlTrust: return "fltrust";
    case RuleKind::kFlame: return "flame";
    case RuleKind::kFlCert: return "flcert";
    case RuleKind::kFlDetector: return "fldetector";
  }
  return "?";
}

bool is_per_round(RuleKind kind) { return kind != RuleKind::kFlCert && kind != RuleKind::kFlDetector; }

AggregationOutcome fedavg(std::span<const ModelUpdate> updates, const ServerContext&) {
  require_updates(updates, 1, "fedavg");
  return {plain_mean(updates, iota_indices(updates.size())), all_ids(updates), {}};
}

std::vector<std::size_t> multi_krum_selection(std::span<const ParamVector> updates, std::size_t n_select) {
  const std::size_t k = updates.size();
  n_select = std::min(n_select, k);
  std::vector<std::vector<double>> dist(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) dist[i][j] = dist[j][i] = squared_distance(updates[i], updates[j]);
  }

  std::vector<std::size_t> pool = iota_indices(k);
  std::vector<std::size_t> selected;
  std::vector<double> row;
  while (selected.size() < n_select) {
    const std::size_t neighbours = pool.size() > 2 ? pool.size() - 2 : 0;
    std::size_t best_pos = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < pool.size(); ++p) {
      row.clear();
      for (std::size_t q = 0; q < pool.size(); ++q) {
        if (q != p) row.push_back(dist[pool[p]][pool[q]]);
      }
      std::sort(row.begin(), row.end());
      double score = 0.0;
      for (std::size_t r = 0; r < neighbours; ++r) score += row[r];
      if (score < best_score) {
        best_score = score;
        best_pos = p;
      }
    }
    selected.push_back(pool[best_pos]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best_pos));
  }
  return selected;
}

AggregationOutcome multi_krum(std::span<const ModelUpdate> updates, const ServerContext& ctx) {
  require_updates(updates, 3, "multikrum");
  if (ctx.m_assumed >= updates.size()) throw std::invalid_argument("multikrum: m_assumed >= participants");
  std::vector<ParamVector> vecs;
  vecs.reserve(updates.size());
  for (const auto& u : updates) vecs.push_back(u.update);
  auto chosen = multi_krum_selection(vecs, updates.size() - ctx.m_assumed);

  AggregationOutcome out;
  out.aggregate = plain_mean(updates, chosen);
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t idx : chosen) out.accepted_ids.push_back(updates[idx].client_id);
  return out;
}

AggregationOutcome coordinate_median(std::span<const ModelUpdate> updates, const ServerContext&) {
  require_updates(updates, 1, "median");
  const std::size_t k = updates.size();
  const std::size_t d = updates.front().update.size();
  ParamVector out(d);
  std::vector<double> column(k);
  const std::size_t mid = k / 2;
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < k; ++i) column[i] = updates[i].update[j];
    std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid), column.end());
    const double upper = column[mid];
    if (k % 2 == 1) {
      out[j] = upper;
    } else {
      const double lower = *std::max_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid));
      out[j] = (lower + upper) / 2.0;
    }
  }
  return {std::move(out), all_ids(updates), {}};
}

AggregationOutcome trimmed_mean(std::span<const ModelUpdate> updates, const ServerContext& ctx) {
  require_updates(updates, 1, "trmean");
  const std::size_t k = updates.size();
  const std::size_t m = ctx.m_assumed;
  if (k <= 2 * m) {
    throw std::invalid_argument("trmean: needs more than 2*m_assumed=" + std::to_string(2 * m) +
                                " participants, got " + std::to_string(k));
  }
  if (m == 0) return fedavg(updates, ctx);

  const std::size_t d = updates.front().update.size();
  ParamVector out(d);
  std::vector<std::size_t> order(k);
  std::vector<char> keep(k);
  for (std::size_t j = 0; j < d; ++j) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return updates[a].update[j] < updates[b].update[j]; });
    std::fill(keep.begin(), keep.end(), 0);
    for (std::size_t r = m; r < k - m; ++r) keep[order[r]] = 1;
    // Kept values are summed in client order so m = 0 reduces to fedavg exactly.
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (keep[i]) sum += updates[i].update[j];
    }
    out[j] = sum / static_cast<double>(k - 2 * m);
  }
  return {std::move(out), all_ids(updates), {}};
}

AggregationOutcome norm_bound(std::span<const ModelUpdate> updates, const ServerContext&, double threshold_norm) {
  require_updates(updates, 1, "normbound");
  if (!(threshold_norm > 0.0)) throw std::invalid_argument("normbound: threshold must be positive");
  ParamVector out(updates.front().update.size());
  for (const auto& u : updates) {
    const double norm = l2_norm(u.update);
    if (norm > threshold_norm) {
      const double factor = threshold_norm / norm;
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += u.update[j] * factor;
    } else {
      out += u.update;
    }
  }
  for (double& v : out) v /= static_cast<double>(updates.size());
  return {std::move(out), all_ids(updates), {}};
}

AggregationOutcome fltrust_with_root(std::span<const ModelUpdate> updates, const ParamVector& root_update) {
  require_updates(updates, 1, "fltrust");
  require_same_size(updates.front().update.size(), root_update.size(), "fltrust");
  const double root_norm = l2_norm(root_update);
  AggregationOutcome out;
  out.aggregate = ParamVector(root_update.size());
  std::vector<double> trust(updates.size());
  double total = 0.0;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    trust[i] = std::max(0.0, cosine(updates[i].update, root_update));
    total += trust[i];
  }
  out.weights.assign(updates.size(), 0.0);
  if (total == 0.0) return out;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    if (trust[i] == 0.0) continue;
    out.weights[i] = trust[i] / total;
    out.accepted_ids.push_back(updates[i].client_id);
    const double norm = l2_norm(updates[i].update);
    const double factor = out.weights[i] * root_norm / norm;
    for (std::size_t j = 0; j < out.aggregate.size(); ++j) out.aggregate[j] += factor * updates[i].update[j];
  }
  return out;
}

AggregationOutcome fltrust(std::span<const ModelUpdate> updates, const ServerContext& ctx) {
  if (ctx.root_dataset == nullptr || ctx.model == nullptr || ctx.rng == nullptr) {
    throw std::invalid_argument("fltrust: server root dataset missing");
  }
  const ParamVector root = local_train(*ctx.model, ctx.w_prev, full_view(*ctx.root_dataset), ctx.train, *ctx.rng);
  return fltrust_with_root(updates, root);
}

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent, size;
  explicit DisjointSets(std::size_t n) : parent(n), size(n, 1) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  std::size_t unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return size[a];
    if (a > b) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
    return size[a];
  }
};

}  // namespace

AggregationOutcome flame(std::span<const ModelUpdate> updates, const ServerContext& ctx) {
  require_updates(updates, 3, "flame");
  const std::size_t k = updates.size();
  const ParamVector& w_prev = ctx.w_prev.empty() ? ParamVector(updates.front().update.size()) : ctx.w_prev;
  require_same_size(w_prev.size(), updates.front().update.size(), "flame");

  std::vector<ParamVector> local;
  local.reserve(k);
  for (const auto& u : updates) local.push_back(add(w_prev, u.update));

  struct Edge {
    double dist;
    std::size_t a, b;
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) edges.push_back({1.0 - cosine(local[i], local[j]), i, j});
  }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) { return x.dist < y.dist; });

  // Single-linkage merge heights (minimum spanning tree edges, ascending).
  std::vector<Edge> merges;
  {
    DisjointSets sets(k);
    for (const auto& e : edges) {
      if (sets.find(e.a) != sets.find(e.b)) {
        sets.unite(e.a, e.b);
        merges.push_back(e);
      }
    }
  }

  // Cut after merge r (r merges applied). Among cuts whose largest cluster is a
  // majority, take the one followed by the widest jump in merge height.
  const std::size_t majority = (k + 2) / 2;  // ceil((k+1)/2)
  DisjointSets sets(k);
  std::size_t largest = 1;
  std::size_t best_cut = merges.size();
  double best_gap = -1.0;
  for (std::size_t r = 1; r <= merges.size(); ++r) {
    largest = std::max(largest, sets.unite(merges[r - 1].a, merges[r - 1].b));
    if (largest < majority) continue;
    const double gap = r < merges.size() ? merges[r].dist - merges[r - 1].dist : 0.0;
    if (gap >= best_gap) {
      best_gap = gap;
      best_cut = r;
    }
  }

  DisjointSets cut(k);
  for (std::size_t r = 0; r < best_cut; ++r) cut.unite(merges[r].a, merges[r].b);
  std::size_t root = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (cut.size[cut.find(i)] > cut.size[cut.find(root)]) root = i;
  }
  root = cut.find(root);

  std::vector<std::size_t> survivors;
  std::vector<double> norms;
  for (std::size_t i = 0; i < k; ++i) {
    if (cut.find(i) == root) {
      survivors.push_back(i);
      norms.push_back(l2_norm(updates[i].update));
    }
  }
  std::vector<double> sorted = norms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  const double clip = sorted.size() % 2 == 1 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2.0;

  AggregationOutcome out;
  out.aggregate = ParamVector(w_prev.size());
  for (std::size_t s = 0; s < survivors.size(); ++s) {
    const auto& g = updates[survivors[s]].update;
    const double factor = norms[s] > clip ? clip / norms[s] : 1.0;
    for (std::size_t j = 0; j < g.size(); ++j) out.aggregate[j] += g[j] * factor;
    out.accepted_ids.push_back(updates[survivors[s]].client_id);
  }
  for (double& v : out.aggregate) v /= static_cast<double>(survivors.size());
  return out;
}

AggregationOutcome aggregate(RuleKind kind, std::span<const ModelUpdate> updates, const ServerContext& ctx) {
  switch (kind) {
    case RuleKind::kFedAvg: return fedavg(updates, ctx);
    case RuleKind::kMultiKrum: return multi_krum(updates, ctx);
    case RuleKind::kMedian: return coordinate_median(updates, ctx);
    case RuleKind::kTrMean: return trimmed_mean(updates, ctx);
    case RuleKind::kNormBound: return norm_bound(updates, ctx, ctx.norm_threshold);
    case RuleKind::kFlTrust: return fltrust(updates, ctx);
    case RuleKind::kFlame: return flame(updates, ctx);
    case RuleKind::kFlCert:
    case RuleKind::kFlDetector: break;
  }
  throw std::invalid_argument("aggregate: " + std::string(rule_key(kind)) + " is not a per-round rule");
}

std::vector<std::vector<std::size_t>> flcert_assign_groups(std::span<const std::size_t> client_ids,
                                                           std::size_t groups, Rng& rng) {
  if (groups == 0) throw std::invalid_argument("flcert: G must be >= 1");
  if (groups > client_ids.size()) throw std::invalid_argument("flcert: more groups than clients");
  std::vector<std::size_t> shuffled(client_ids.begin(), client_ids.end());
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::vector<std::vector<std::size_t>> out(groups);
  for (std::size_t i = 0; i < shuffled.size(); ++i) out[i % groups].push_back(shuffled[i]);
  for (auto& g : out) std::sort(g.begin(), g.end());
  return out;
}

int flcert_vote(std::span<const int> predictions, std::size_t num_classes) {
  std::vector<std::size_t> votes(num_classes, 0);
  for (int p : predictions) ++votes.at(static_cast<std::size_t>(p));
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

int flcert_predict(const ModelSpec& spec, std::span<const ParamVector> models, std::span<const double> x) {
  std::vector<int> preds;
  preds.reserve(models.size());
  for (const auto& w : models) preds.push_back(predict(spec, w, x));
  return flcert_vote(preds, spec.num_classes());
}

double flcert_evaluate(const ModelSpec& spec, std::span<const ParamVector> models, const Dataset& test) {
  if (test.size() == 0) throw std::invalid_argument("flcert_evaluate: empty test set");
  std::size_t wrong = 0;
  for (std::size_t r = 0; r < test.size(); ++r) {
    if (flcert_predict(spec, models, test.row(r)) != test.labels[r]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(test.size());
}

void FlDetector::observe(std::span<const ModelUpdate> updates) {
  std::vector<std::pair<std::size_t, double>> dists;
  double total = 0.0;
  for (const auto& u : updates) {
    auto it = last_update_.find(u.client_id);
    if (it != last_update_.end()) {
      const double d = std::sqrt(squared_distance(u.update, it->second));
      dists.emplace_back(u.client_id, d);
      total += d;
    }
    last_update_[u.client_id] = u.update;
  }
  for (const auto& [id, d] : dists) {
    auto& h = history_[id];
    h.push_back(total > 0.0 ? d / total : 0.0);
    if (h.size() > window_) h.pop_front();
  }
}

std::map<std::size_t, double> FlDetector::scores() const {
  std::map<std::size_t, double> out;
  for (const auto& [id, h] : history_) {
    if (h.empty()) continue;
    out[id] = std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size());
  }
  return out;
}

std::size_t two_means_split(std::span<const double> sorted) {
  const std::size_t n = sorted.size();
  if (n < 2) return n;
  std::vector<double> prefix(n + 1, 0.0), prefix_sq(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    prefix[i + 1] = prefix[i] + sorted[i];
    prefix_sq[i + 1] = prefix_sq[i] + sorted[i] * sorted[i];
  }
  auto sse = [&](std::size_t a, std::size_t b) {
    const double cnt = static_cast<double>(b - a);
    const double s = prefix[b] - prefix[a];
    return std::max(0.0, (prefix_sq[b] - prefix_sq[a]) - s * s / cnt);
  };
  std::size_t best = 1;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t s = 1; s < n; ++s) {
    const double cost = sse(0, s) + sse(s, n);
    if (cost < best_cost) {
      best_cost = cost;
      best = s;
    }
  }
  return best;
}

namespace {

double two_means_sse(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const std::size_t split = two_means_split(values);
  auto sse = [&](std::size_t a, std::size_t b) {
    if (b <= a) return 0.0;
    double mean = 0.0;
    for (std::size_t i = a; i < b; ++i) mean += values[i];
    mean /= static_cast<double>(b - a);
    double acc = 0.0;
    for (std::size_t i = a; i < b; ++i) acc += (values[i] - mean) * (values[i] - mean);
    return acc;
  };
  return sse(0, split) + sse(split, n);
}

double one_mean_sse(std::span<const double> values) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return acc;
}

}  // namespace

bool gap_statistic_prefers_two(std::span<const double> values, Rng& rng, std::size_t references) {
  if (values.size() < 3 || references < 2) return false;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return false;
  const double w1 = one_mean_sse(values);
  const double w2 = two_means_sse(std::vector<double>(values.begin(), values.end()));
  if (w2 <= 0.0) return true;  // two exact points

  std::uniform_real_distribution<double> uni(lo, hi);
  std::vector<double> ref(values.size()), log_w1(references), log_w2(references);
  for (std::size_t b = 0; b < references; ++b) {
    for (double& r : ref) r = uni(rng);
    log_w1[b] = std::log(one_mean_sse(ref));
    log_w2[b] = std::log(two_means_sse(ref));
  }
  const double nb = static_cast<double>(references);
  const double mean1 = std::accumulate(log_w1.begin(), log_w1.end(), 0.0) / nb;
  const double mean2 = std::accumulate(log_w2.begin(), log_w2.end(), 0.0) / nb;
  double var2 = 0.0;
  for (double x : log_w2) var2 += (x - mean2) * (x - mean2);
  const double s2 = std::sqrt(var2 / nb) * std::sqrt(1.0 + 1.0 / nb);
  const double gap1 = mean1 - std::log(w1);
  const double gap2 = mean2 - std::log(w2);
  return gap1 < gap2 - s2;
}

FlDetector::Verdict FlDetector::verdict(Rng& rng) const {
  Verdict v;
  const auto sc = scores();
  if (sc.size() < 2) return v;
  std::vector<std::pair<double, std::size_t>> ranked;
  for (const auto& [id, s] : sc) ranked.emplace_back(s, id);
  std::sort(ranked.begin(), ranked.end());
  std::vector<double> sorted;
  for (const auto& r : ranked) sorted.push_back(r.first);
  const std::size_t split = two_means_split(sorted);

  auto stats = [&](std::size_t a, std::size_t b, double& mean, double& sd) {
    mean = 0.0;
    for (std::size_t i = a; i < b; ++i) mean += sorted[i];
    mean /= static_cast<double>(b - a);
    double var = 0.0;
    for (std::size_t i = a; i < b; ++i) var += (sorted[i] - mean) * (sorted[i] - mean);
    sd = std::sqrt(var / static_cast<double>(b - a));
  };
  stats(0, split, v.low_mean, v.low_std);
  stats(split, sorted.size(), v.high_mean, v.high_std);
  v.gap_holds = (v.high_mean - v.low_mean) > std::max(v.low_std, v.high_std);
  v.two_clusters = gap_statistic_prefers_two(sorted, rng);
  if (v.gap_holds && v.two_clusters) {
    for (std::size_t i = split; i < ranked.size(); ++i) v.flagged.push_back(ranked[i].second);
    std::sort(v.flagged.begin(), v.flagged.end());
  }
  return v;
}

}  // namespace pfl
