#pragma once

// Server-side aggregation rules. Each rule consumes one round's updates and
// returns the aggregated update plus which clients survived any filtering.
//
// FLCert and FLDetector are not per-round rules; the pieces they need
// (group assignment and voting, suspicion scoring) live here and the
// simulator wraps its round loop around them.

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pfl/data.hpp"
#include "pfl/learner.hpp"
#include "pfl/param.hpp"
#include "pfl/rng.hpp"

namespace pfl {

struct ModelUpdate {
  std::size_t client_id = 0;
  std::size_t round = 0;
  ParamVector update;
};

struct ServerContext {
  std::size_t round = 0;
  ParamVector w_prev;
  /// Fake clients the rule may assume among the participants (TrMean, Multi-Krum).
  std::size_t m_assumed = 0;
  /// Norm Bound clip threshold; supplied by the harness.
  double norm_threshold = 0.0;
  /// FLTrust root data and the training setup the server uses on it.
  const Dataset* root_dataset = nullptr;
  const ModelSpec* model = nullptr;
  TrainConfig train;
  Rng* rng = nullptr;
};

struct AggregationOutcome {
  ParamVector aggregate;
  std::vector<std::size_t> accepted_ids;
  /// Per-update weights in input order (FLTrust normalized trust scores).
  std::vector<double> weights;
};

enum class RuleKind { kFedAvg, kMultiKrum, kMedian, kTrMean, kNormBound, kFlTrust, kFlame, kFlCert, kFlDetector };

RuleKind parse_rule(std::string_view key);
std::string_view rule_key(RuleKind kind);
/// FLCert and FLDetector wrap whole runs instead of single rounds.
bool is_per_round(RuleKind kind);

AggregationOutcome fedavg(std::span<const ModelUpdate> updates, const ServerContext& ctx);
/// Iterative Krum selection of (participants - m_assumed) updates, then their mean.
AggregationOutcome multi_krum(std::span<const ModelUpdate> updates, const ServerContext& ctx);
AggregationOutcome coordinate_median(std::span<const ModelUpdate> updates, const ServerContext& ctx);
AggregationOutcome trimmed_mean(std::span<const ModelUpdate> updates, const ServerContext& ctx);
AggregationOutcome norm_bound(std::span<const ModelUpdate> updates, const ServerContext& ctx,
                              double threshold_norm);
/// Computes the root update with local_train on ctx.root_dataset.
AggregationOutcome fltrust(std::span<const ModelUpdate> updates, const ServerContext& ctx);
AggregationOutcome fltrust_with_root(std::span<const ModelUpdate> updates, const ParamVector& root_update);
AggregationOutcome flame(std::span<const ModelUpdate> updates, const ServerContext& ctx);

/// Dispatch for the per-round rules. Throws for flcert/fldetector.
AggregationOutcome aggregate(RuleKind kind, std::span<const ModelUpdate> updates, const ServerContext& ctx);

/// Indices (into `updates`) chosen by Multi-Krum, in selection order.
std::vector<std::size_t> multi_krum_selection(std::span<const ParamVector> updates, std::size_t n_select);

/// Splits client ids into G disjoint groups of near-equal size, uniformly at random.
std::vector<std::vector<std::size_t>> flcert_assign_groups(std::span<const std::size_t> client_ids,
                                                           std::size_t groups, Rng& rng);
/// Plurality vote; ties go to the lowest class id.
int flcert_vote(std::span<const int> predictions, std::size_t num_classes);
int flcert_predict(const ModelSpec& spec, std::span<const ParamVector> models, std::span<const double> x);
double flcert_evaluate(const ModelSpec& spec, std::span<const ParamVector> models, const Dataset& test);

/// Suspicion scoring with a self-prediction model: a client's predicted update
/// is its own previous update. Each round's distances are normalized to sum to
/// one; the score is the mean over the last `window` rounds.
class FlDetector {
 public:
  explicit FlDetector(std::size_t window = 10) : window_(window) {}

  void observe(std::span<const ModelUpdate> updates);
  std::map<std::size_t, double> scores() const;

  struct Verdict {
    std::vector<std::size_t> flagged;
    bool gap_holds = false;     ///< cluster means farther apart than either std
    bool two_clusters = false;  ///< gap statistic prefers 2 clusters over 1
    double low_mean = 0.0, high_mean = 0.0, low_std = 0.0, high_std = 0.0;
  };
  /// 2-means split of the scores; flags the high cluster when both the gap
  /// statistic and the mean-gap condition hold. `rng` draws the uniform
  /// reference sets of the gap statistic.
  Verdict verdict(Rng& rng) const;

 private:
  std::size_t window_;
  std::map<std::size_t, ParamVector> last_update_;
  std::map<std::size_t, std::deque<double>> history_;
};

/// Exact 1-D 2-means on sorted values: returns the split position s such that
/// sorted[0, s) and sorted[s, n) minimize the within-cluster sum of squares.
std::size_t two_means_split(std::span<const double> sorted);

/// Tibshirani gap statistic for k = 1 vs 2 on 1-D data with `references`
/// uniform reference sets over [min, max]: true when Gap(1) < Gap(2) - s(2).
bool gap_statistic_prefers_two(std::span<const double> values, Rng& rng, std::size_t references = 20);

}  // namespace pfl
