#include "pfl/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pfl {

TailoredDefense parse_tailored(std::string_view key) {
  if (key == "none") return TailoredDefense::kNone;
  if (key == "gmm-sign") return TailoredDefense::kGmmSign;
  if (key == "gmm-magnitude") return TailoredDefense::kGmmMagnitude;
  if (key == "normalize-total") return TailoredDefense::kNormalizeTotal;
  throw std::invalid_argument("unknown tailored defense '" + std::string(key) + "'");
}

std::string_view tailored_key(TailoredDefense kind) {
  switch (kind) {
    case TailoredDefense::kNone: return "none";
    case TailoredDefense::kGmmSign: return "gmm-sign";
    case TailoredDefense::kGmmMagnitude: return "gmm-magnitude";
    case TailoredDefense::kNormalizeTotal: return "normalize-total";
  }
  return "?";
}

std::size_t SimConfig::n_fake() const {
  if (attack.kind == AttackKind::kNone) return 0;
  return static_cast<std::size_t>(std::llround(fake_fraction * static_cast<double>(n_genuine)));
}

void SimConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument(key + ": " + why);
  };
  if (n_genuine == 0) fail("n_genuine", "must be positive");
  if (!(fake_fraction >= 0.0 && fake_fraction <= 1.0)) fail("fake_fraction", "must lie in [0, 1]");
  if (!(participation_rate > 0.0 && participation_rate <= 1.0)) fail("participation_rate", "must lie in (0, 1]");
  if (rounds == 0) fail("rounds", "must be positive");
  if (eval_every == 0) fail("eval_every", "must be positive");
  for (std::size_t h : hidden_layers) {
    if (h == 0) fail("hidden_layers", "sizes must be positive");
  }
  if (!(train.learning_rate > 0.0) || !std::isfinite(train.learning_rate)) fail("learning_rate", "must be positive");
  if (train.local_epochs == 0) fail("local_epochs", "must be positive");
  if (train.batch_size == 0) fail("batch_size", "must be positive");
  if (data.train_csv.empty()) {
    if (data.num_classes < 2) fail("num_classes", "must be >= 2");
    if (data.feature_dim == 0) fail("feature_dim", "must be positive");
    if (data.examples_per_client == 0) fail("examples_per_client", "must be positive");
    if (!(data.spread >= 0.0)) fail("spread", "must be >= 0");
    if (data.test_per_class == 0) fail("test_per_class", "must be positive");
    const double q_min = 1.0 / static_cast<double>(data.num_classes);
    if (!(data.q >= q_min - 1e-12 && data.q <= 1.0)) fail("q", "must lie in [1/C, 1]");
  } else if (data.test_csv.empty()) {
    fail("test_csv", "required when train_csv is set");
  }
  const auto& p = attack.poisonedfl;
  if (!(p.c0 > 0.0)) fail("c0", "must be positive");
  if (p.e == 0) fail("e", "must be positive");
  if (!(p.beta > 0.0 && p.beta < 1.0)) fail("beta", "must lie in (0, 1)");
  if (!(p.c_floor > 0.0)) fail("c_floor", "must be positive");
  if (!(p.p_threshold > 0.0 && p.p_threshold < 1.0)) fail("p", "must lie in (0, 1)");
  if (!(attack.alpha >= 0.0 && attack.alpha <= 1.0)) fail("alpha", "must lie in [0, 1]");
  if (!(attack.eps >= 0.0)) fail("eps", "must be >= 0");
  if (!(attack.gamma >= 0.0)) fail("gamma", "must be >= 0");
  if (!(attack.lambda >= 0.0)) fail("lambda", "must be >= 0");

  const std::size_t total = n_genuine + n_fake();
  const auto per_round = static_cast<std::size_t>(std::ceil(participation_rate * static_cast<double>(total) - 1e-9));
  if (per_round == 0) fail("participation_rate", "no client would participate");
  if ((defense.rule == RuleKind::kMultiKrum || defense.rule == RuleKind::kFlame) && per_round < 3) {
    fail("participation_rate", "multikrum and flame need at least 3 participants per round");
  }
  if (defense.rule == RuleKind::kFlCert && (defense.flcert_groups == 0 || defense.flcert_groups > total)) {
    fail("flcert_groups", "must lie in [1, client count]");
  }
  if (defense.rule == RuleKind::kFlDetector && defense.fldetector_rounds < 2) {
    fail("fldetector_rounds", "must be >= 2");
  }
  if (defense.tailored != TailoredDefense::kNone && !is_per_round(defense.rule)) {
    fail("tailored", "needs a per-round base defense");
  }
  if (defense.tailored == TailoredDefense::kGmmSign || defense.tailored == TailoredDefense::kGmmMagnitude) {
    if (defense.gmm_window == 0) fail("N", "must be positive");
    if (total < 4) fail("tailored", "GMM detection needs at least 4 clients");
  }
  if (defense.tailored == TailoredDefense::kNormalizeTotal && !(defense.normalize_b > 0.0)) {
    fail("b", "must be positive");
  }
}

std::optional<double> FlippingRateTracker::observe(std::size_t client_id, const ParamVector& update) {
  SignVector now = sign_of(update);
  std::optional<double> rate;
  auto it = last_.find(client_id);
  if (it != last_.end()) {
    rate = static_cast<double>(count_flips(now, it->second)) / static_cast<double>(now.size());
    it->second = std::move(now);
  } else {
    last_.emplace(client_id, std::move(now));
  }
  return rate;
}

FlipSummary flipping_rate(FlippingRateTracker& tracker, const std::vector<ModelUpdate>& fake_updates) {
  FlipSummary out;
  double sum = 0.0;
  for (const auto& u : fake_updates) {
    if (auto r = tracker.observe(u.client_id, u.update)) {
      sum += *r;
      ++out.measured;
    }
  }
  if (out.measured > 0) out.rate = sum / static_cast<double>(out.measured);
  return out;
}

Environment make_environment(const SimConfig& cfg) {
  cfg.validate();
  Environment env;
  const auto& dc = cfg.data;
  if (dc.train_csv.empty()) {
    const std::size_t per_class =
        (cfg.n_genuine * dc.examples_per_client + dc.num_classes - 1) / dc.num_classes;
    env.train = make_blobs(dc.num_classes, per_class, dc.feature_dim, dc.spread, cfg.seed);
    env.test = make_blobs_sample(dc.num_classes, dc.test_per_class, dc.feature_dim, dc.spread, cfg.seed, 1);
    const std::size_t root_per_class = std::max<std::size_t>(1, dc.root_size / dc.num_classes);
    env.root = make_blobs_sample(dc.num_classes, root_per_class, dc.feature_dim, dc.spread, cfg.seed, 2);
  } else {
    env.train = load_csv(dc.train_csv);
    env.test = load_csv(dc.test_csv, env.train.num_classes);
    if (env.test.feature_dim != env.train.feature_dim) {
      throw std::invalid_argument("test_csv: feature count differs from train_csv");
    }
    Rng rng = make_stream(cfg.seed, {tag(StreamTag::kServer), 0});
    std::vector<std::size_t> idx(env.train.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(dc.root_size, idx.size()));
    env.root = env.train.subset(idx);
  }
  env.clients = partition_noniid(env.train, {cfg.n_genuine, dc.q, cfg.seed});

  env.spec.layer_sizes.push_back(env.train.feature_dim);
  for (std::size_t h : cfg.hidden_layers) env.spec.layer_sizes.push_back(h);
  env.spec.layer_sizes.push_back(env.train.num_classes);

  Rng init_rng = make_stream(cfg.seed, {tag(StreamTag::kInit)});
  env.w0 = init_params(env.spec, init_rng);

  Rng sign_rng = make_stream(cfg.seed, {tag(StreamTag::kSignVector)});
  std::vector<std::int8_t> signs(env.w0.size());
  std::bernoulli_distribution coin(0.5);
  for (auto& v : signs) v = coin(sign_rng) ? 1 : -1;
  env.s = SignVector(std::move(signs));

  Rng target_rng = make_stream(cfg.seed, {tag(StreamTag::kAttack), 0xA11CE});
  env.mpaf_target = init_params(env.spec, target_rng);
  return env;
}

namespace {

struct LoopSpec {
  std::uint64_t phase = 0;
  std::string phase_name = "train";
  std::vector<std::size_t> pool;
  RuleKind rule = RuleKind::kFedAvg;
  bool full_participation = false;
  const RoundObserver* observer = nullptr;
};

// One federated training run over a client pool, advanced a round at a time.
class RoundLoop {
 public:
  RoundLoop(const SimConfig& cfg, const Environment& env, LoopSpec spec)
      : cfg_(cfg), env_(env), spec_(std::move(spec)), w_(env.w0) {
    attack_ = make_attack(cfg.attack, env.w0.size(), env.s, env.mpaf_target);
    // The server's guess does not depend on whether an attack is running.
    n_fake_total_ = static_cast<std::size_t>(std::llround(cfg.fake_fraction * static_cast<double>(cfg.n_genuine)));
  }

  const ParamVector& model() const { return w_; }
  const std::vector<ModelUpdate>& last_updates() const { return updates_; }
  std::size_t round() const { return t_; }

  RoundRecord step(bool evaluate_now) {
    ++t_;
    const std::uint64_t seed = cfg_.seed;
    const auto participants = sample();

    std::vector<ModelUpdate> genuine;
    std::vector<std::size_t> fake_ids;
    for (std::size_t id : participants) {
      if (id < cfg_.n_genuine) {
        Rng rng = make_stream(seed, {tag(StreamTag::kLocalTrain), spec_.phase, id, t_});
        genuine.push_back({id, t_, local_train(env_.spec, w_, env_.clients[id], cfg_.train, rng)});
      } else {
        fake_ids.push_back(id);
      }
    }

    const std::size_t k = participants.size();
    ServerContext ctx;
    ctx.round = t_;
    ctx.w_prev = w_;
    ctx.m_assumed = m_assumed(k);
    ctx.root_dataset = &env_.root;
    ctx.model = &env_.spec;
    ctx.train = cfg_.train;
    Rng server_rng = make_stream(seed, {tag(StreamTag::kServer), spec_.phase, t_});
    ctx.rng = &server_rng;

    std::optional<ParamVector> root_update;
    if (spec_.rule == RuleKind::kFlTrust) {
      root_update = local_train(env_.spec, w_, full_view(env_.root), cfg_.train, server_rng);
    }
    double genuine_norm = 0.0;
    for (const auto& g : genuine) genuine_norm += l2_norm(g.update);
    if (!genuine.empty()) genuine_norm /= static_cast<double>(genuine.size());
    ctx.norm_threshold = genuine_norm;

    auto run_rule = [&](std::span<const ModelUpdate> ups) {
      if (root_update) return fltrust_with_root(ups, *root_update);
      return aggregate(spec_.rule, ups, ctx);
    };

    AttackerView view;
    view.round = t_;
    view.w_curr = w_;
    view.w_prev = w_prev_;
    view.participating_fake_ids = fake_ids;
    view.rule_hint = spec_.rule;
    if (needs_genuine_knowledge(cfg_.attack.kind)) {
      std::vector<ParamVector> known;
      for (const auto& g : genuine) known.push_back(g.update);
      view.genuine_updates = std::move(known);
      view.rule_oracle = [&](std::span<const ParamVector> vs) {
        std::vector<ModelUpdate> ups;
        for (std::size_t i = 0; i < vs.size(); ++i) ups.push_back({i, t_, vs[i]});
        ServerContext oracle_ctx = ctx;
        oracle_ctx.m_assumed = std::min(ctx.m_assumed, vs.size() > 0 ? (vs.size() - 1) / 2 : 0);
        if (spec_.rule == RuleKind::kMultiKrum && vs.size() < 3) return fedavg(ups, oracle_ctx).aggregate;
        if (spec_.rule == RuleKind::kFlame && vs.size() < 3) return fedavg(ups, oracle_ctx).aggregate;
        if (root_update) return fltrust_with_root(ups, *root_update).aggregate;
        return aggregate(spec_.rule, ups, oracle_ctx).aggregate;
      };
    }
    Rng attack_rng = make_stream(seed, {tag(StreamTag::kAttack), spec_.phase, t_});
    auto crafted = attack_->craft(view, attack_rng);
    const AttackRoundInfo info = attack_->last_round();

    std::vector<ModelUpdate> fakes;
    for (std::size_t f = 0; f < fake_ids.size(); ++f) fakes.push_back({fake_ids[f], t_, std::move(crafted[f])});

    updates_.clear();
    updates_.insert(updates_.end(), genuine.begin(), genuine.end());
    updates_.insert(updates_.end(), fakes.begin(), fakes.end());
    std::sort(updates_.begin(), updates_.end(),
              [](const ModelUpdate& a, const ModelUpdate& b) { return a.client_id < b.client_id; });

    if (spec_.rule == RuleKind::kNormBound && genuine.empty()) {
      double sum = 0.0;
      for (const auto& u : updates_) sum += l2_norm(u.update);
      ctx.norm_threshold = sum / static_cast<double>(updates_.size());
    }
    if (spec_.rule == RuleKind::kNormBound && !(ctx.norm_threshold > 0.0)) {
      ctx.norm_threshold = std::numeric_limits<double>::min();
    }

    const AggregationOutcome outcome = run_rule(updates_);
    if (!all_finite(outcome.aggregate)) {
      throw std::runtime_error("non-finite aggregate in phase " + spec_.phase_name + " round " + std::to_string(t_));
    }
    w_prev_ = w_;
    w_ += outcome.aggregate;

    RoundRecord rec;
    rec.phase = spec_.phase_name;
    rec.round = t_;
    rec.participants = k;
    rec.fake_participants = fake_ids.size();
    rec.attack_c = info.c;
    const ParamVector total = sub(w_, env_.w0);
    rec.total_update_norm = l2_norm(total);
    rec.sign_match = sign_match_fraction(total, env_.s);
    if (evaluate_now) last_error_ = evaluate(env_.spec, w_, env_.test);
    rec.testing_error = last_error_;

    if (info.active) {
      const FlipSummary flips = flipping_rate(tracker_, fakes);
      rec.flipping_rate = flips.rate;
      rec.flip_measured = flips.measured;
    }
    for (std::size_t id : outcome.accepted_ids) {
      if (id >= cfg_.n_genuine) ++rec.accepted_fakes;
    }
    if (!outcome.weights.empty()) {
      double tg = 0.0, tf = 0.0;
      std::size_t ng = 0, nf = 0;
      for (std::size_t i = 0; i < updates_.size(); ++i) {
        if (updates_[i].client_id < cfg_.n_genuine) {
          tg += outcome.weights[i];
          ++ng;
        } else {
          tf += outcome.weights[i];
          ++nf;
        }
      }
      rec.trust_genuine = ng > 0 ? tg / static_cast<double>(ng) : 0.0;
      rec.trust_fake = nf > 0 ? tf / static_cast<double>(nf) : 0.0;
    }
    if (spec_.observer != nullptr && *spec_.observer) (*spec_.observer)({rec, updates_, outcome.aggregate, w_});
    return rec;
  }

 private:
  std::vector<std::size_t> sample() {
    std::vector<std::size_t> pool = spec_.pool;
    if (spec_.full_participation) return pool;
    const auto k = std::min<std::size_t>(
        pool.size(),
        std::max<std::size_t>(1, static_cast<std::size_t>(
                                     std::ceil(cfg_.participation_rate * static_cast<double>(pool.size()) - 1e-9))));
    Rng rng = make_stream(cfg_.seed, {tag(StreamTag::kSampling), spec_.phase, t_});
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  std::size_t m_assumed(std::size_t k) const {
    std::size_t m = 0;
    if (cfg_.defense.m_assumed) {
      m = *cfg_.defense.m_assumed;
    } else {
      const double total = static_cast<double>(cfg_.n_genuine + n_fake_total_);
      m = static_cast<std::size_t>(std::llround(static_cast<double>(k) * static_cast<double>(n_fake_total_) / total));
    }
    return std::min(m, k > 0 ? (k - 1) / 2 : 0);
  }

  const SimConfig& cfg_;
  const Environment& env_;
  LoopSpec spec_;
  ParamVector w_;
  ParamVector w_prev_;
  std::size_t t_ = 0;
  std::size_t n_fake_total_ = 0;
  double last_error_ = 1.0;
  std::unique_ptr<Attack> attack_;
  FlippingRateTracker tracker_;
  std::vector<ModelUpdate> updates_;
};

std::vector<std::size_t> all_clients(const SimConfig& cfg) {
  std::vector<std::size_t> ids(cfg.n_genuine + cfg.n_fake());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

bool eval_round(const SimConfig& cfg, std::size_t t) { return t % cfg.eval_every == 0 || t == cfg.rounds; }

void run_plain(const SimConfig& cfg, const Environment& env, LoopSpec spec, RunResult& result) {
  RoundLoop loop(cfg, env, std::move(spec));
  for (std::size_t t = 1; t <= cfg.rounds; ++t) result.records.push_back(loop.step(eval_round(cfg, t)));
  result.final_model = loop.model();
}

DetectionReport score_detection(const SimConfig& cfg, std::string method, std::vector<std::size_t> detected,
                                bool separable) {
  DetectionReport rep;
  rep.method = std::move(method);
  rep.separable = separable;
  std::size_t hits = 0;
  for (std::size_t id : detected) {
    if (id >= cfg.n_genuine) {
      ++hits;
    } else {
      ++rep.false_positives;
    }
  }
  const std::size_t m = cfg.n_fake();
  rep.detection_accuracy = m > 0 ? static_cast<double>(hits) / static_cast<double>(m) : 0.0;
  rep.detected_ids = std::move(detected);
  return rep;
}

std::vector<std::size_t> without(const std::vector<std::size_t>& pool, const std::vector<std::size_t>& removed) {
  std::vector<std::size_t> out;
  for (std::size_t id : pool) {
    if (std::find(removed.begin(), removed.end(), id) == removed.end()) out.push_back(id);
  }
  return out;
}

void run_flcert(const SimConfig& cfg, const Environment& env, RunResult& result) {
  const auto clients = all_clients(cfg);
  Rng rng = make_stream(cfg.seed, {tag(StreamTag::kGroups)});
  const auto groups = flcert_assign_groups(clients, cfg.defense.flcert_groups, rng);
  std::vector<std::unique_ptr<RoundLoop>> loops;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    loops.push_back(std::make_unique<RoundLoop>(
        cfg, env, LoopSpec{100 + g, "train", groups[g], RuleKind::kMedian, false}));
  }
  std::vector<ParamVector> models;
  double last_error = 1.0;
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundRecord agg;
    agg.round = t;
    double flip_sum = 0.0;
    models.clear();
    for (auto& loop : loops) {
      const RoundRecord r = loop->step(false);
      agg.sign_match += r.sign_match / static_cast<double>(loops.size());
      agg.total_update_norm += r.total_update_norm / static_cast<double>(loops.size());
      flip_sum += r.flipping_rate * static_cast<double>(r.flip_measured);
      agg.flip_measured += r.flip_measured;
      agg.participants += r.participants;
      agg.fake_participants += r.fake_participants;
      agg.accepted_fakes += r.accepted_fakes;
      agg.attack_c = r.attack_c;
      models.push_back(loop->model());
    }
    if (agg.flip_measured > 0) agg.flipping_rate = flip_sum / static_cast<double>(agg.flip_measured);
    if (eval_round(cfg, t)) last_error = flcert_evaluate(env.spec, models, env.test);
    agg.testing_error = last_error;
    result.records.push_back(agg);
  }
  result.ensemble = models;
  result.final_model = models.front();
}

void run_fldetector(const SimConfig& cfg, const Environment& env, RunResult& result) {
  const auto clients = all_clients(cfg);
  FlDetector detector(cfg.defense.fldetector_window);
  {
    RoundLoop detect(cfg, env, LoopSpec{200, "detect", clients, RuleKind::kMedian, true});
    for (std::size_t t = 1; t <= cfg.defense.fldetector_rounds; ++t) {
      result.records.push_back(detect.step(t == cfg.defense.fldetector_rounds));
      detector.observe(detect.last_updates());
    }
  }
  Rng rng = make_stream(cfg.seed, {tag(StreamTag::kServer), 200, 0});
  const auto verdict = detector.verdict(rng);
  result.detection =
      score_detection(cfg, "fldetector", verdict.flagged, verdict.gap_holds && verdict.two_clusters);
  run_plain(cfg, env, LoopSpec{201, "train", without(clients, verdict.flagged), RuleKind::kMedian, false}, result);
}

void run_gmm(const SimConfig& cfg, const Environment& env, RunResult& result) {
  const auto clients = all_clients(cfg);
  const std::size_t window = cfg.defense.gmm_window;
  const bool by_sign = cfg.defense.tailored == TailoredDefense::kGmmSign;
  // Warm-up round plus N + 1 rounds gives N full pairs of attacking rounds.
  const std::size_t detect_rounds = window + 2;

  std::map<std::size_t, std::vector<ParamVector>> history;
  std::vector<std::map<std::size_t, ParamVector>> rounds;
  {
    RoundLoop detect(cfg, env, LoopSpec{300, "detect", clients, cfg.defense.rule, true});
    for (std::size_t t = 1; t <= detect_rounds; ++t) {
      result.records.push_back(detect.step(t == detect_rounds));
      std::map<std::size_t, ParamVector> this_round;
      for (const auto& u : detect.last_updates()) {
        if (by_sign) {
          history[u.client_id].push_back(u.update);
        } else if (t + window > detect_rounds) {
          this_round.emplace(u.client_id, u.update);
        }
      }
      if (!this_round.empty()) rounds.push_back(std::move(this_round));
    }
  }

  std::map<std::size_t, double> features;
  if (by_sign) {
    for (const auto& [id, h] : history) {
      if (auto x = gmm_sign_feature(h, window)) features[id] = *x;
    }
  } else {
    const std::size_t m = std::max<std::size_t>(2, cfg.n_fake());
    features = gmm_magnitude_features(rounds, m);
  }
  Rng rng = make_stream(cfg.seed, {tag(StreamTag::kGmm)});
  const auto verdict = detect(features, cfg.defense.which_cluster, rng);
  result.detection = score_detection(cfg, std::string(tailored_key(cfg.defense.tailored)), verdict.detected_ids,
                                     verdict.clusters_separable);
  run_plain(cfg, env, LoopSpec{301, "train", without(clients, verdict.detected_ids), cfg.defense.rule, false},
            result);
}

}  // namespace

RunResult run(const SimConfig& cfg) {
  const Environment env = make_environment(cfg);
  return run(cfg, env);
}

RunResult run(const SimConfig& cfg, const Environment& env, const RoundObserver& observer) {
  cfg.validate();
  RunResult result;
  result.w0 = env.w0;
  result.s = env.s;
  result.spec = env.spec;

  const auto tailored = cfg.defense.tailored;
  if (cfg.defense.rule == RuleKind::kFlCert) {
    run_flcert(cfg, env, result);
  } else if (cfg.defense.rule == RuleKind::kFlDetector) {
    run_fldetector(cfg, env, result);
  } else if (tailored == TailoredDefense::kGmmSign || tailored == TailoredDefense::kGmmMagnitude) {
    run_gmm(cfg, env, result);
  } else {
    run_plain(cfg, env, LoopSpec{0, "train", all_clients(cfg), cfg.defense.rule, false, &observer}, result);
  }

  if (!result.ensemble.empty()) {
    result.final_error = flcert_evaluate(env.spec, result.ensemble, env.test);
  } else {
    result.final_error = evaluate(env.spec, result.final_model, env.test);
  }
  result.final_error_before_normalization = result.final_error;
  const ParamVector total = sub(result.final_model, env.w0);
  result.final_sign_match = sign_match_fraction(total, env.s);
  result.final_norm = l2_norm(total);

  if (tailored == TailoredDefense::kNormalizeTotal) {
    result.final_model = normalize_total_update(result.final_model, env.w0, cfg.defense.normalize_b);
    result.final_error = evaluate(env.spec, result.final_model, env.test);
    const ParamVector normalized = sub(result.final_model, env.w0);
    result.final_sign_match = sign_match_fraction(normalized, env.s);
    result.final_norm = l2_norm(normalized);
  }
  return result;
}

std::vector<std::pair<double, double>> degradation_probe(const ModelSpec& spec, const ParamVector& w_trained,
                                                         const SignVector& s, const std::vector<double>& norms,
                                                         const Dataset& test, std::uint64_t seed) {
  std::vector<std::pair<double, double>> out;
  out.reserve(norms.size());
  for (double norm : norms) {
    // Same stream for every norm: the sweep moves along a single direction.
    Rng rng = make_stream(seed, {tag(StreamTag::kProbe)});
    const ParamVector w = perturb_along_random_direction(w_trained, s, norm, rng);
    out.emplace_back(norm, evaluate(spec, w, test));
  }
  return out;
}

}  // namespace pfl
