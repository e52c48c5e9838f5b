#ifndef MENTREE_ENVIRONMENT_HPP_
#define MENTREE_ENVIRONMENT_HPP_

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mentree/corpus.hpp"
#include "mentree/error.hpp"
#include "mentree/random.hpp"
#include "mentree/transition.hpp"

namespace mentree {

// One MDP rollout: a whole sentence, or one gold mention / one non-mention
// token (gold_label O) in mention modes.
struct EpisodeSpec {
  EpisodeMode mode = EpisodeMode::mention;
  const Sentence* sentence = nullptr;
  int sentence_index = -1;
  int start = 0;
  int end = 0;
  int gold_label = 0;

  int length() const { return end - start; }
};

inline EpisodeSpec sentence_episode(const Sentence& s, EpisodeMode mode, int index = -1) {
  detail::require(is_sentence_mode(mode), "not a sentence mode");
  return {mode, &s, index, 0, s.length(), 0};
}

inline EpisodeSpec mention_episode(const Sentence& s, int start, int end, int gold_label,
                                   EpisodeMode mode = EpisodeMode::mention, int index = -1) {
  detail::require(!is_sentence_mode(mode), "not a mention mode");
  return {mode, &s, index, start, end, gold_label};
}

inline void validate(const EpisodeSpec& spec, const LabelSet& labels) {
  if (!spec.sentence) throw config_error("episode has no sentence");
  const Sentence& s = *spec.sentence;
  if (is_sentence_mode(spec.mode)) {
    if (spec.start != 0 || spec.end != s.length())
      throw config_error("sentence episodes span the whole sentence");
    return;
  }
  if (spec.start < 0 || spec.start >= spec.end || spec.end > s.length())
    throw config_error("mention episode span out of range");
  for (const auto& m : s.mentions) {
    if (m.start == spec.start && m.end == spec.end && m.label == spec.gold_label) return;
    if (m.start < spec.end && spec.start < m.end)
      throw config_error("mention episode span overlaps but does not match a gold mention");
  }
  if (spec.length() != 1 || spec.gold_label != labels.outside())
    throw config_error("mention episode span does not match a gold mention");
}

// How a mention episode sits in its sentence. empty: empty stack, buffer cut
// at the span end. gold: the stack holds the gold trees of every token before
// the span (as built by the canonical oracle) and the buffer stays open, so
// the episode faces the same legal actions as sentence-level decoding; a
// Reduce into the context or a Shift past the span is an unrecoverable error.
enum class LeftContext { empty, gold };

inline std::string left_context_name(LeftContext c) { return c == LeftContext::empty ? "empty" : "gold"; }

inline LeftContext parse_left_context(const std::string& s) {
  if (s == "empty") return LeftContext::empty;
  if (s == "gold") return LeftContext::gold;
  throw config_error("unknown left context '" + s + "'");
}

// Sentence-mode state after replaying the canonical oracle up to token `at`.
inline State gold_prefix(const Sentence& s, int at, const LabelSet& labels) {
  detail::require(0 <= at && at <= s.length(), "gold_prefix: position out of range");
  State state = State::for_sentence(s);
  for (const auto& a : canonical_oracle(s, labels)) {
    if (a.kind == ActionKind::stop) break;
    if (a.kind == ActionKind::shift && state.cursor() == at) break;
    state = apply(state, a, labels);
  }
  return state;
}

// Cursor at the span start; featurization always sees the whole sentence.
// Sentence modes and LeftContext::empty start from an empty stack.
inline State start_episode(const EpisodeSpec& spec, const LabelSet& labels,
                           LeftContext context = LeftContext::gold) {
  validate(spec, labels);
  if (is_sentence_mode(spec.mode) || context == LeftContext::empty)
    return State(*spec.sentence, spec.start, spec.end, spec.mode);
  return State(gold_prefix(*spec.sentence, spec.start, labels), spec.end, spec.mode);
}

// ---------------------------------------------------------------------------
// Scoring helpers used as rewards
// ---------------------------------------------------------------------------

// Mention-level F1 with exact span+label matching; 1.0 when neither side has
// mentions.
inline double sentence_f1(const std::vector<int>& pred, const std::vector<int>& gold,
                          const LabelSet& labels) {
  detail::require(pred.size() == gold.size(), "sentence_f1: length mismatch");
  auto p = decode_bio(pred, labels);
  auto g = decode_bio(gold, labels);
  if (p.empty() && g.empty()) return 1.0;
  std::set<Mention> gs(g.begin(), g.end());
  int matched = 0;
  for (const auto& m : p) matched += static_cast<int>(gs.count(m));
  if (matched == 0) return 0.0;
  const double precision = static_cast<double>(matched) / static_cast<double>(p.size());
  const double recall = static_cast<double>(matched) / static_cast<double>(g.size());
  return 2 * precision * recall / (precision + recall);
}

inline double token_accuracy(const std::vector<int>& pred, const std::vector<int>& gold) {
  detail::require(pred.size() == gold.size(), "token_accuracy: length mismatch");
  if (gold.empty()) return 1.0;
  int same = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) same += pred[i] == gold[i];
  return static_cast<double>(same) / static_cast<double>(gold.size());
}

// ---------------------------------------------------------------------------
// Steps and rewards
// ---------------------------------------------------------------------------

struct RewardConfig {
  double partial_reward = 1.0;  // per matched sub-mention (MentionPartial)
  int min_count = 5;            // SubMentionTable threshold
};

struct StepResult {
  State next;
  double reward = 0;
  bool terminal = false;
  bool success = false;
};

// Sentence modes: reward 10 x F1 (or 10 x token accuracy) on termination
// (Stop, or an exhausted buffer with a single stack tree), otherwise 0.
// Mention modes: terminal per State::terminal; +L when the span ends as one
// tree with the gold label, -L otherwise. MentionPartial additionally pays
// `partial_reward` when a Reduce builds a proper sub-span whose surface the
// table lists with that label.
inline StepResult step(const State& s, const Action& a, const EpisodeSpec& spec,
                       const LabelSet& labels, const SubMentionTable* table = nullptr,
                       const RewardConfig& rewards = {}) {
  StepResult r{apply(s, a, labels), 0.0, false, false};
  const State& next = r.next;
  if (is_sentence_mode(spec.mode)) {
    if (!next.terminal()) return r;
    r.terminal = true;
    auto gold = gold_tags(*spec.sentence, labels);
    // Stop over an empty buffer with several trees still reads every token.
    auto pred = read_labels(next, labels);
    const double score = spec.mode == EpisodeMode::sentence_f1 ? sentence_f1(pred, gold, labels)
                                                               : token_accuracy(pred, gold);
    r.reward = 10.0 * score;
    r.success = score == 1.0;
    return r;
  }
  const double length = static_cast<double>(spec.length());
  if (next.terminal()) {
    r.terminal = true;
    r.success = next.span_complete() && next.stack().back()->label == spec.gold_label;
    r.reward = r.success ? length : -length;
    return r;
  }
  if (spec.mode == EpisodeMode::mention_partial && table && a.kind == ActionKind::reduce) {
    const auto& v = *next.stack().back();
    if (v.start >= spec.start && v.length() < spec.length() &&
        table->contains(spec.sentence->surface(v.start, v.end), v.label))
      r.reward = rewards.partial_reward;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Episode pool
// ---------------------------------------------------------------------------

// N live episodes over a training corpus. Terminated episodes are replaced by
// a fresh start drawn uniformly (mention modes: over all gold mentions plus
// all non-mention tokens; sentence modes: over admitted sentences), with
// replacement. All randomness comes from the pool's seeded generator.
class EpisodePool {
 public:
  struct Slot {
    EpisodeSpec spec;
    State state;
    double episode_return = 0;
    int steps = 0;
    std::uint64_t seed = 0;  // per-episode stream for exploration
  };

  EpisodePool(const std::vector<Sentence>& data, const LabelSet& labels, EpisodeMode mode,
              int n, std::uint64_t seed, LeftContext context = LeftContext::gold)
      : data_(&data), labels_(labels), mode_(mode), context_(context), rng_(seed) {
    if (n < 1) throw config_error("episode pool size must be >= 1");
    if (is_sentence_mode(mode)) {
      for (int i = 0; i < static_cast<int>(data.size()); ++i)
        if (data[static_cast<std::size_t>(i)].length() > 0) sentences_.push_back(i);
      if (sentences_.empty()) throw config_error("episode pool: empty corpus");
      admit(0);
    } else {
      for (int i = 0; i < static_cast<int>(data.size()); ++i) {
        const auto& s = data[static_cast<std::size_t>(i)];
        int t = 0;
        for (const auto& m : s.mentions) {
          for (; t < m.start; ++t) units_.push_back({i, t, t + 1, labels.outside()});
          units_.push_back({i, m.start, m.end, m.label});
          t = m.end;
        }
        for (; t < s.length(); ++t) units_.push_back({i, t, t + 1, labels.outside()});
      }
      if (units_.empty()) throw config_error("episode pool: empty corpus");
    }
    for (int i = 0; i < n; ++i) slots_.push_back(fresh());
  }

  int size() const { return static_cast<int>(slots_.size()); }
  const Slot& slot(int i) const { return slots_.at(static_cast<std::size_t>(i)); }
  Rng& rng() { return rng_; }
  EpisodeMode mode() const { return mode_; }

  // Sentence modes: only sentences of length <= max_length are drawn from now
  // on (0 = unbounded). Falls back to the shortest sentences when none fit.
  void admit(int max_length) {
    admitted_.clear();
    int shortest = INT32_MAX;
    for (int i : sentences_) shortest = std::min(shortest, (*data_)[static_cast<std::size_t>(i)].length());
    const int bound = max_length <= 0 ? INT32_MAX : std::max(max_length, shortest);
    for (int i : sentences_)
      if ((*data_)[static_cast<std::size_t>(i)].length() <= bound) admitted_.push_back(i);
  }
  std::size_t admitted() const { return is_sentence_mode(mode_) ? admitted_.size() : units_.size(); }

  // Advances slot i with a step result; a terminal result restarts the slot.
  // Returns the finished episode's return when it terminated.
  std::optional<double> advance(int i, const StepResult& r) {
    auto& slot = slots_.at(static_cast<std::size_t>(i));
    slot.episode_return += r.reward;
    ++slot.steps;
    if (r.terminal) {
      double ret = slot.episode_return;
      slot = fresh();
      return ret;
    }
    slot.state = r.next;
    return std::nullopt;
  }

  EpisodeSpec draw() {
    if (is_sentence_mode(mode_)) {
      const int idx = admitted_[rng_.below(admitted_.size())];
      return sentence_episode((*data_)[static_cast<std::size_t>(idx)], mode_, idx);
    }
    const Unit& u = units_[rng_.below(units_.size())];
    return mention_episode((*data_)[static_cast<std::size_t>(u.sentence)], u.start, u.end, u.label,
                           mode_, u.sentence);
  }

 private:
  struct Unit {
    int sentence, start, end, label;
  };

  Slot fresh() {
    EpisodeSpec spec = draw();
    State state = start_episode(spec, labels_, context_);
    return Slot{spec, std::move(state), 0.0, 0, rng_.derive()};
  }

  const std::vector<Sentence>* data_;
  LabelSet labels_;
  EpisodeMode mode_;
  LeftContext context_;
  Rng rng_;
  std::vector<Unit> units_;
  std::vector<int> sentences_;
  std::vector<int> admitted_;
  std::vector<Slot> slots_;
};

}  // namespace mentree

#endif  // MENTREE_ENVIRONMENT_HPP_
