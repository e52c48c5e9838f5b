#ifndef MENTREE_RL_HPP_
#define MENTREE_RL_HPP_

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mentree/corpus.hpp"
#include "mentree/environment.hpp"
#include "mentree/error.hpp"
#include "mentree/eval.hpp"
#include "mentree/neural.hpp"
#include "mentree/random.hpp"
#include "mentree/transition.hpp"

namespace mentree {

enum class Algorithm { q_learning, sarsa };

inline std::string algorithm_name(Algorithm a) { return a == Algorithm::q_learning ? "qlearning" : "sarsa"; }

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "qlearning") return Algorithm::q_learning;
  if (s == "sarsa") return Algorithm::sarsa;
  throw config_error("unknown algorithm '" + s + "'");
}

// Admit sentences of length <= max_length until `until` x T steps (0 =
// unbounded).
struct CurriculumStage {
  double until = 1.0;
  int max_length = 0;
};

inline std::vector<CurriculumStage> default_curriculum() {
  return {{1.0 / 3, 8}, {2.0 / 3, 16}, {1.0, 0}};
}

struct LearnerConfig {
  Algorithm algorithm = Algorithm::q_learning;
  EpisodeMode mode = EpisodeMode::mention;
  double gamma = 0.95;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  double epsilon_anneal = 0.5;  // fraction of T
  double alpha = 0.01;
  double alpha_end = 0.001;  // linear decay target; equal to alpha for none
  int batch = 10;            // K
  int pool = 100;            // N
  long steps = 1000000;      // T
  long target_period = 5000;  // T_u
  int n_step = 4;            // sentence modes only; mention modes are one-step
  std::vector<CurriculumStage> curriculum;  // empty = none
  long eval_every = 10000;
  bool dropout = false;
  double init_scale = 0.05;
  RewardConfig rewards;
  LeftContext left_context = LeftContext::gold;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch < 1 || batch > pool) throw config_error("need 1 <= K <= N");
    if (target_period < 1) throw config_error("T_u must be >= 1");
    if (steps < 0) throw config_error("T must be >= 0");
    if (!(gamma > 0 && gamma <= 1)) throw config_error("gamma must be in (0, 1]");
    for (double e : {epsilon_start, epsilon_end})
      if (e < 0 || e > 1) throw config_error("epsilon must be in [0, 1]");
    if (epsilon_anneal < 0 || epsilon_anneal > 1) throw config_error("epsilon_anneal must be in [0, 1]");
    if (alpha <= 0 || alpha_end <= 0) throw config_error("learning rates must be positive");
    if (n_step < 1) throw config_error("n_step must be >= 1");
    if (eval_every < 1) throw config_error("eval_every must be >= 1");
    if (rewards.min_count < 1) throw config_error("min_count must be >= 1");
  }

  double epsilon_at(long t) const {
    const double span = epsilon_anneal * static_cast<double>(steps);
    const double frac = span > 0 ? std::min(1.0, static_cast<double>(t) / span) : 1.0;
    return epsilon_start + (epsilon_end - epsilon_start) * frac;
  }

  double alpha_at(long t) const {
    const double frac = steps > 0 ? static_cast<double>(t) / static_cast<double>(steps) : 0.0;
    return alpha + (alpha_end - alpha) * frac;
  }

  int max_length_at(long t) const {
    for (const auto& stage : curriculum)
      if (static_cast<double>(t) < stage.until * static_cast<double>(steps)) return stage.max_length;
    return 0;
  }
};

// ---------------------------------------------------------------------------
// Action selection
// ---------------------------------------------------------------------------

// Highest-valued legal action, lowest id on ties.
template <class Real>
int greedy_action(const std::vector<Real>& q, const std::vector<bool>& legal) {
  int best = -1;
  for (std::size_t a = 0; a < q.size(); ++a)
    if (legal[a] && (best < 0 || q[a] > q[static_cast<std::size_t>(best)])) best = static_cast<int>(a);
  detail::require(best >= 0, "no legal action");
  return best;
}

// Uniform legal action with probability epsilon, else greedy.
template <class Real>
int epsilon_greedy(const std::vector<Real>& q, const std::vector<bool>& legal, double epsilon, Rng& rng) {
  if (epsilon > 0 && rng.uniform() < epsilon) {
    std::vector<int> ids;
    for (std::size_t a = 0; a < legal.size(); ++a)
      if (legal[a]) ids.push_back(static_cast<int>(a));
    detail::require(!ids.empty(), "no legal action");
    return ids[rng.below(ids.size())];
  }
  return greedy_action(q, legal);
}

template <class Real>
Action select_action(const Network<Real>& net, const State& s, const EncodedSentence& enc, double epsilon,
                     Rng& rng) {
  const auto& labels = net.labels();
  if (legal_actions(s, labels).empty()) throw contract_violation("select_action on a terminal state");
  const auto q = net.forward(net.featurize(s, enc).x);
  return action_from_id(epsilon_greedy(q, legal_mask(s, labels), epsilon, rng), labels.size());
}

// ---------------------------------------------------------------------------
// TD targets
// ---------------------------------------------------------------------------

struct TransitionRecord {
  int action = 0;
  double reward = 0;       // discounted sum over `steps` rewards
  int steps = 1;           // bootstrap discount is gamma^steps
  bool terminal = false;
  std::optional<State> next;
  std::vector<bool> next_legal;
  int next_action = -1;    // SARSA
};

// Q-learning: r + gamma^k max_{legal a'} Q_target(s', a'); SARSA:
// r + gamma^k Q_target(s', a') for the chosen a'; r alone when terminal.
template <class Real>
double td_target(const TransitionRecord& rec, const Network<Real>& target, const EncodedSentence* enc,
                 double gamma, Algorithm algo) {
  if (rec.terminal) return rec.reward;
  detail::require(rec.next.has_value() && enc, "non-terminal record needs a next state");
  const auto q = target.forward(target.featurize(*rec.next, *enc).x);
  double bootstrap;
  if (algo == Algorithm::q_learning) {
    bootstrap = static_cast<double>(q[static_cast<std::size_t>(greedy_action(q, rec.next_legal))]);
  } else {
    detail::require(rec.next_action >= 0, "SARSA record needs the next action");
    bootstrap = static_cast<double>(q[static_cast<std::size_t>(rec.next_action)]);
  }
  return rec.reward + std::pow(gamma, rec.steps) * bootstrap;
}

// ---------------------------------------------------------------------------
// Greedy decoding
// ---------------------------------------------------------------------------

struct DecodeStep {
  State state;
  std::vector<Action> legal;
  std::vector<double> q;
  Action chosen;
};

struct Decoded {
  std::vector<int> tags;
  State final_state;
};

// Sentence-level episode with epsilon = 0 until Stop or auto-termination.
template <class Real>
Decoded greedy_decode(const Network<Real>& net, const Sentence& sent, const EncodedSentence& enc,
                      const std::function<void(const DecodeStep&)>& observe = {}) {
  const auto& labels = net.labels();
  State s = State::for_sentence(sent);
  while (!s.terminal()) {
    const auto mask = legal_mask(s, labels);
    const auto q = net.forward(net.featurize(s, enc).x);
    const Action a = action_from_id(greedy_action(q, mask), labels.size());
    if (observe) observe({s, legal_actions(s, labels), std::vector<double>(q.begin(), q.end()), a});
    s = apply(s, a, labels);
  }
  return {read_labels(s, labels), s};
}

template <class Real>
Decoded greedy_decode(const Network<Real>& net, const Sentence& sent) {
  return greedy_decode(net, sent, net.encode(sent));
}

template <class Real>
ScoreReport evaluate_rl(const Network<Real>& net, const std::vector<Sentence>& data,
                        const std::vector<EncodedSentence>* encoded = nullptr) {
  std::vector<std::vector<int>> pred, gold;
  for (std::size_t i = 0; i < data.size(); ++i) {
    pred.push_back(encoded ? greedy_decode(net, data[i], (*encoded)[i]).tags : greedy_decode(net, data[i]).tags);
    gold.push_back(gold_tags(data[i], net.labels()));
  }
  return score(pred, gold, net.labels());
}

// ---------------------------------------------------------------------------
// Training (multi-agent TD learning over an episode pool)
// ---------------------------------------------------------------------------

template <class Real>
struct TrainResult {
  Network<Real> best;
  double best_dev_f1 = -1;
  long best_step = 0;
  long updates = 0;
  std::vector<nlohmann::json> metrics;
};

struct TrainHooks {
  // Called after each parameter update with (t, target-network hash).
  std::function<void(long, std::uint64_t)> after_update;
  // Called for each metrics record as it is produced.
  std::function<void(const nlohmann::json&)> on_metrics;
  // Called for each TD record with (discounted reward sum, terminal, target).
  std::function<void(double, bool, double)> on_record;
};

// Every step t: draw K of the N pool episodes without replacement, advance
// each by one epsilon-greedy action, average the squared-TD-error gradients
// of the finished records, apply one SGD update, restart terminated
// episodes, and copy theta into the target network every T_u steps. Mention
// modes are one-step; sentence modes use n-step returns. Parameters are
// initialized from the seed unless `keep_parameters` is set.
template <class Real>
TrainResult<Real> train(const std::vector<Sentence>& train_data, const std::vector<Sentence>& dev,
                        Network<Real> net, const LearnerConfig& cfg, const TrainHooks& hooks = {},
                        bool keep_parameters = false) {
  cfg.validate();
  const LabelSet& labels = net.labels();
  Rng master(cfg.seed);
  const std::uint64_t init_seed = master.derive();
  if (!keep_parameters) net.initialize(init_seed, cfg.init_scale);
  Network<Real> target = clone_target(net);

  std::vector<EncodedSentence> enc_train, enc_dev;
  for (const auto& s : train_data) enc_train.push_back(net.encode(s));
  for (const auto& s : dev) enc_dev.push_back(net.encode(s));

  const SubMentionTable table = cfg.mode == EpisodeMode::mention_partial
                                    ? build_submention_table(train_data, cfg.rewards.min_count)
                                    : SubMentionTable{};
  EpisodePool pool(train_data, labels, cfg.mode, cfg.pool, master.derive(), cfg.left_context);
  const int n_step = is_sentence_mode(cfg.mode) ? cfg.n_step : 1;

  struct Pending {
    State state;
    int action;
    double reward;
  };
  struct SlotAux {
    bool live = false;
    std::uint64_t seed = 0;
    Rng rng;
    std::deque<Pending> pending;
    int next_action = -1;  // SARSA: chosen at s', taken next
  };
  std::vector<SlotAux> aux(static_cast<std::size_t>(pool.size()));
  auto sync_aux = [&](int i) {
    auto& a = aux[static_cast<std::size_t>(i)];
    if (!a.live || a.seed != pool.slot(i).seed) {
      a.live = true;
      a.seed = pool.slot(i).seed;
      a.rng = Rng(a.seed);
      a.pending.clear();
      a.next_action = -1;
    }
  };
  for (int i = 0; i < pool.size(); ++i) sync_aux(i);

  TrainResult<Real> result{net, -1.0, 0, 0, {}};
  Gradient<Real> grad(net);
  ForwardCache<Real> cache;
  double finished_return = 0;
  long finished = 0;
  int admitted_length = -1;

  auto log_metrics = [&](long t) {
    nlohmann::json m;
    m["step"] = t;
    m["episodes"] = finished;
    m["mean_reward"] = finished ? finished_return / static_cast<double>(finished) : 0.0;
    m["epsilon"] = cfg.epsilon_at(t);
    m["alpha"] = cfg.alpha_at(t);
    if (!dev.empty()) {
      const auto report = evaluate_rl(net, dev, &enc_dev);
      m["dev_precision"] = report.precision();
      m["dev_recall"] = report.recall();
      m["dev_f1"] = report.f1();
      if (report.f1() > result.best_dev_f1) {
        result.best_dev_f1 = report.f1();
        result.best_step = t;
        result.best = net;
      }
    }
    finished = 0;
    finished_return = 0;
    result.metrics.push_back(m);
    if (hooks.on_metrics) hooks.on_metrics(m);
  };

  for (long t = 1; t <= cfg.steps; ++t) {
    if (is_sentence_mode(cfg.mode) && !cfg.curriculum.empty()) {
      const int bound = cfg.max_length_at(t - 1);
      if (bound != admitted_length) {
        pool.admit(bound);
        admitted_length = bound;
      }
    }
    const double epsilon = cfg.epsilon_at(t - 1);
    const auto batch = pool.rng().sample_without_replacement(static_cast<std::size_t>(pool.size()),
                                                             static_cast<std::size_t>(cfg.batch));
    for (std::size_t b : batch) {
      const int i = static_cast<int>(b);
      auto& a = aux[b];
      const EpisodePool::Slot& slot = pool.slot(i);
      const EncodedSentence& enc = enc_train[static_cast<std::size_t>(slot.spec.sentence_index)];
      const State s = slot.state;
      const EpisodeSpec spec = slot.spec;

      const auto features = net.featurize(s, enc);
      net.forward(features.x, cache, cfg.dropout, &a.rng);
      const auto mask = legal_mask(s, labels);
      int action_id_taken;
      if (cfg.algorithm == Algorithm::sarsa && a.next_action >= 0) {
        action_id_taken = a.next_action;
      } else {
        action_id_taken = epsilon_greedy(cache.output, mask, epsilon, a.rng);
      }
      const Action action = action_from_id(action_id_taken, labels.size());
      const StepResult r = step(s, action, spec, labels, &table, cfg.rewards);
      a.pending.push_back({s, action_id_taken, r.reward});

      // Bootstrap value at s' from the target network.
      double bootstrap = 0;
      a.next_action = -1;
      if (!r.terminal) {
        const auto next_mask = legal_mask(r.next, labels);
        const auto next_features = target.featurize(r.next, enc);
        const auto q_target = target.forward(next_features.x);
        if (cfg.algorithm == Algorithm::q_learning) {
          bootstrap = static_cast<double>(q_target[static_cast<std::size_t>(greedy_action(q_target, next_mask))]);
        } else {
          const auto q_online = net.forward(net.featurize(r.next, enc).x);
          a.next_action = epsilon_greedy(q_online, next_mask, epsilon, a.rng);
          bootstrap = static_cast<double>(q_target[static_cast<std::size_t>(a.next_action)]);
        }
      }

      // Emit the records whose n-step return is now complete.
      auto emit_front = [&](bool bootstrapped) {
        const Pending p = a.pending.front();
        double ret = 0, discount = 1;
        for (const auto& q : a.pending) {
          ret += discount * q.reward;
          discount *= cfg.gamma;
        }
        const double rewards = ret;
        if (bootstrapped) ret += discount * bootstrap;
        if (hooks.on_record) hooks.on_record(rewards, !bootstrapped, ret);
        a.pending.pop_front();
        if (a.pending.empty()) {
          backward(net, features, cache, td_output_grad(cache, p.action, static_cast<Real>(ret)), grad);
        } else {
          const auto f = net.featurize(p.state, enc);
          ForwardCache<Real> c;
          net.forward(f.x, c, cfg.dropout, &a.rng);
          backward(net, f, c, td_output_grad(c, p.action, static_cast<Real>(ret)), grad);
        }
      };
      if (r.terminal) {
        while (!a.pending.empty()) emit_front(false);
      } else if (static_cast<int>(a.pending.size()) >= n_step) {
        emit_front(true);
      }

      if (auto ret = pool.advance(i, r)) {
        finished_return += *ret;
        ++finished;
      }
      sync_aux(i);
    }
    apply_sgd(net, grad, cfg.alpha_at(t - 1));
    ++result.updates;
    if (t % cfg.target_period == 0) sync_target(net, target);
    if (hooks.after_update) hooks.after_update(t, parameter_hash(target));
    if (t % cfg.eval_every == 0 || t == cfg.steps) log_metrics(t);
  }
  if (dev.empty() || result.best_dev_f1 < 0) result.best = net;
  return result;
}

// ---------------------------------------------------------------------------
// Configuration I/O
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const LearnerConfig& c) {
  auto curriculum = nlohmann::json::array();
  for (const auto& s : c.curriculum) curriculum.push_back({{"until", s.until}, {"max_length", s.max_length}});
  return {{"algorithm", algorithm_name(c.algorithm)},
          {"mode", mode_name(c.mode)},
          {"gamma", c.gamma},
          {"epsilon_start", c.epsilon_start},
          {"epsilon_end", c.epsilon_end},
          {"epsilon_anneal", c.epsilon_anneal},
          {"alpha", c.alpha},
          {"alpha_end", c.alpha_end},
          {"batch", c.batch},
          {"pool", c.pool},
          {"steps", c.steps},
          {"target_period", c.target_period},
          {"n_step", c.n_step},
          {"curriculum", curriculum},
          {"eval_every", c.eval_every},
          {"dropout", c.dropout},
          {"init_scale", c.init_scale},
          {"min_count", c.rewards.min_count},
          {"partial_reward", c.rewards.partial_reward},
          {"left_context", left_context_name(c.left_context)},
          {"seed", c.seed}};
}

// Overlays keys from `j` onto `c`; unknown keys are errors.
inline void update_from_json(LearnerConfig& c, const nlohmann::json& j) {
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = *it;
      if (k == "algorithm") c.algorithm = parse_algorithm(v.get<std::string>());
      else if (k == "mode") c.mode = parse_mode(v.get<std::string>());
      else if (k == "gamma") c.gamma = v.get<double>();
      else if (k == "epsilon_start") c.epsilon_start = v.get<double>();
      else if (k == "epsilon_end") c.epsilon_end = v.get<double>();
      else if (k == "epsilon_anneal") c.epsilon_anneal = v.get<double>();
      else if (k == "alpha") c.alpha = v.get<double>();
      else if (k == "alpha_end") c.alpha_end = v.get<double>();
      else if (k == "batch") c.batch = v.get<int>();
      else if (k == "pool") c.pool = v.get<int>();
      else if (k == "steps") c.steps = v.get<long>();
      else if (k == "target_period") c.target_period = v.get<long>();
      else if (k == "n_step") c.n_step = v.get<int>();
      else if (k == "curriculum") {
        c.curriculum.clear();
        if (v.is_boolean()) {
          if (v.get<bool>()) c.curriculum = default_curriculum();
        } else {
          for (const auto& s : v) {
            for (auto jt = s.begin(); jt != s.end(); ++jt)
              if (jt.key() != "until" && jt.key() != "max_length")
                throw config_error("unknown curriculum key '" + jt.key() + "'");
            c.curriculum.push_back({s.at("until").get<double>(), s.at("max_length").get<int>()});
          }
        }
      } else if (k == "eval_every") c.eval_every = v.get<long>();
      else if (k == "dropout") c.dropout = v.get<bool>();
      else if (k == "init_scale") c.init_scale = v.get<double>();
      else if (k == "min_count") c.rewards.min_count = v.get<int>();
      else if (k == "partial_reward") c.rewards.partial_reward = v.get<double>();
      else if (k == "left_context") c.left_context = parse_left_context(v.get<std::string>());
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw config_error("unknown learner key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("learner config: ") + e.what());
  }
  c.validate();
}

}  // namespace mentree

#endif  // MENTREE_RL_HPP_
