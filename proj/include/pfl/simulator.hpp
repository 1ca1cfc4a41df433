#pragma once

// Round-loop orchestration. Genuine clients have ids [0, n), fake clients
// [n, n + m). Fake clients hold no data and never train.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pfl/aggregation.hpp"
#include "pfl/attacks.hpp"
#include "pfl/data.hpp"
#include "pfl/learner.hpp"
#include "pfl/param.hpp"
#include "pfl/tailored.hpp"

namespace pfl {

enum class TailoredDefense { kNone, kGmmSign, kGmmMagnitude, kNormalizeTotal };
TailoredDefense parse_tailored(std::string_view key);
std::string_view tailored_key(TailoredDefense kind);

struct DataConfig {
  std::size_t num_classes = 10;
  std::size_t feature_dim = 20;
  std::size_t examples_per_client = 50;
  double spread = 1.0;
  double q = 0.5;
  std::size_t test_per_class = 100;
  std::size_t root_size = 100;
  /// When set, data comes from CSV files instead of synthetic blobs.
  std::string train_csv;
  std::string test_csv;
};

struct DefenseConfig {
  RuleKind rule = RuleKind::kFedAvg;
  /// Overrides the default round(participants * m / (n + m)).
  std::optional<std::size_t> m_assumed;
  std::size_t flcert_groups = 10;
  std::size_t fldetector_rounds = 100;
  std::size_t fldetector_window = 10;
  TailoredDefense tailored = TailoredDefense::kNone;
  std::size_t gmm_window = 20;  ///< N
  FakeCluster which_cluster = FakeCluster::kLower;
  double normalize_b = 1.0;
};

struct SimConfig {
  std::size_t n_genuine = 100;
  double fake_fraction = 0.2;
  double participation_rate = 0.1;
  std::size_t rounds = 500;
  std::uint64_t seed = 1;
  std::vector<std::size_t> hidden_layers{100};
  TrainConfig train;
  DataConfig data;
  AttackConfig attack;
  DefenseConfig defense;
  /// Evaluate the test error every this many rounds (and always on the last).
  std::size_t eval_every = 1;

  std::size_t n_fake() const;
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct RoundRecord {
  std::string phase = "train";
  std::size_t round = 0;
  double testing_error = 0.0;
  double sign_match = 0.0;         ///< of w^t - w^0 against s
  double total_update_norm = 0.0;  ///< ||w^t - w^0||
  double flipping_rate = 0.0;      ///< mean over measured fake clients
  std::size_t flip_measured = 0;   ///< fake clients with a previous active submission
  std::size_t participants = 0;
  std::size_t fake_participants = 0;
  std::size_t accepted_fakes = 0;
  double trust_genuine = 0.0;  ///< mean FLTrust weight, genuine participants
  double trust_fake = 0.0;     ///< mean FLTrust weight, fake participants
  double attack_c = 0.0;
};

/// Last active submission's signs per fake client.
class FlippingRateTracker {
 public:
  /// Fraction of flipped dimensions since the client's previous observation,
  /// or nothing on its first observation.
  std::optional<double> observe(std::size_t client_id, const ParamVector& update);

 private:
  std::map<std::size_t, SignVector> last_;
};

/// Mean flipped fraction over the clients that had a previous observation.
struct FlipSummary {
  double rate = 0.0;
  std::size_t measured = 0;
};
FlipSummary flipping_rate(FlippingRateTracker& tracker, const std::vector<ModelUpdate>& fake_updates);

struct DetectionReport {
  std::string method;
  std::vector<std::size_t> detected_ids;
  bool separable = false;
  double detection_accuracy = 0.0;  ///< detected fakes / all fakes
  std::size_t false_positives = 0;
};

struct RunResult {
  std::vector<RoundRecord> records;
  ParamVector w0;
  ParamVector final_model;
  std::vector<ParamVector> ensemble;  ///< FLCert group models
  SignVector s;
  ModelSpec spec;
  double final_error = 0.0;
  double final_error_before_normalization = 0.0;
  double final_sign_match = 0.0;
  double final_norm = 0.0;
  std::optional<DetectionReport> detection;
  std::size_t attack_tests_run = 0;
};

/// Everything a run needs besides the config: data, model, initial point.
struct Environment {
  Dataset train;
  Dataset test;
  Dataset root;
  std::vector<ClientDataset> clients;
  ModelSpec spec;
  ParamVector w0;
  SignVector s;
  ParamVector mpaf_target;
};

/// Builds data, partition and initial model from the config.
Environment make_environment(const SimConfig& cfg);

/// Everything one round produced, for callers that need more than RoundRecord.
struct RoundTrace {
  const RoundRecord& record;
  const std::vector<ModelUpdate>& updates;  ///< participants, by client id
  const ParamVector& aggregate;
  const ParamVector& model;  ///< w^t
};
using RoundObserver = std::function<void(const RoundTrace&)>;

RunResult run(const SimConfig& cfg);
/// `observer` sees every round of single-phase runs (no FLCert, FLDetector or GMM phases).
RunResult run(const SimConfig& cfg, const Environment& env, const RoundObserver& observer = {});

/// Test error along one random direction with signs s, at each noise norm.
std::vector<std::pair<double, double>> degradation_probe(const ModelSpec& spec, const ParamVector& w_trained,
                                                         const SignVector& s, const std::vector<double>& norms,
                                                         const Dataset& test, std::uint64_t seed);

}  // namespace pfl
