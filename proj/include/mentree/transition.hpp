#ifndef MENTREE_TRANSITION_HPP_
#define MENTREE_TRANSITION_HPP_

#include <memory>
#include <string>
#include <vector>

#include "mentree/corpus.hpp"
#include "mentree/error.hpp"

namespace mentree {

// Labeled span on the stack. Internal nodes have exactly two adjacent
// children; their label may differ from the children's labels.
struct TreeNode {
  int start = 0;
  int end = 0;
  int label = 0;
  std::shared_ptr<const TreeNode> left;
  std::shared_ptr<const TreeNode> right;

  bool is_leaf() const { return !left; }
  int length() const { return end - start; }
};

using NodePtr = std::shared_ptr<const TreeNode>;

inline NodePtr make_leaf(int index, int label) {
  return std::make_shared<const TreeNode>(TreeNode{index, index + 1, label, nullptr, nullptr});
}

inline NodePtr make_internal(NodePtr left, NodePtr right, int label) {
  detail::require(left && right && left->end == right->start, "children must be adjacent");
  const int start = left->start, end = right->end;
  return std::make_shared<const TreeNode>(
      TreeNode{start, end, label, std::move(left), std::move(right)});
}

// Number of nodes in the subtree, leaves included.
inline int node_count(const TreeNode& n) {
  return n.is_leaf() ? 1 : 1 + node_count(*n.left) + node_count(*n.right);
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

enum class ActionKind { shift, reduce, stop };

struct Action {
  ActionKind kind = ActionKind::stop;
  int label = 0;

  static Action shift(int label) { return {ActionKind::shift, label}; }
  static Action reduce(int label) { return {ActionKind::reduce, label}; }
  static Action stop() { return {ActionKind::stop, 0}; }

  bool operator==(const Action& o) const {
    return kind == o.kind && (kind == ActionKind::stop || label == o.label);
  }
};

// Dense action ids: Shift-l = l, Reduce-l = |L| + l, Stop = 2|L|. The Reduce-O
// slot exists but is never legal.
inline int action_count(int num_labels) { return 2 * num_labels + 1; }

inline int action_id(const Action& a, int num_labels) {
  switch (a.kind) {
    case ActionKind::shift: return a.label;
    case ActionKind::reduce: return num_labels + a.label;
    case ActionKind::stop: return 2 * num_labels;
  }
  return -1;
}

inline Action action_from_id(int id, int num_labels) {
  detail::require(id >= 0 && id < action_count(num_labels), "action id out of range");
  if (id < num_labels) return Action::shift(id);
  if (id < 2 * num_labels) return Action::reduce(id - num_labels);
  return Action::stop();
}

inline std::string action_name(const Action& a, const LabelSet& labels) {
  switch (a.kind) {
    case ActionKind::shift: return "Shift-" + labels.name(a.label);
    case ActionKind::reduce: return "Reduce-" + labels.name(a.label);
    case ActionKind::stop: return "Stop";
  }
  return "?";
}

inline Action parse_action(const std::string& s, const LabelSet& labels) {
  if (s == "Stop") return Action::stop();
  if (s.rfind("Shift-", 0) == 0) return Action::shift(labels.id(s.substr(6)));
  if (s.rfind("Reduce-", 0) == 0) return Action::reduce(labels.id(s.substr(7)));
  throw config_error("unknown action '" + s + "'");
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

enum class EpisodeMode { sentence_f1, sentence_accuracy, mention, mention_partial };

inline bool is_sentence_mode(EpisodeMode m) {
  return m == EpisodeMode::sentence_f1 || m == EpisodeMode::sentence_accuracy;
}

inline std::string mode_name(EpisodeMode m) {
  switch (m) {
    case EpisodeMode::sentence_f1: return "sentence_f1";
    case EpisodeMode::sentence_accuracy: return "sentence_accuracy";
    case EpisodeMode::mention: return "mention";
    case EpisodeMode::mention_partial: return "mention_partial";
  }
  return "?";
}

inline EpisodeMode parse_mode(const std::string& s) {
  for (auto m : {EpisodeMode::sentence_f1, EpisodeMode::sentence_accuracy, EpisodeMode::mention,
                 EpisodeMode::mention_partial})
    if (mode_name(m) == s) return m;
  throw config_error("unknown episode mode '" + s + "'");
}

// Stack of trees plus a cursor into the sentence. The buffer is
// [cursor, limit); tokens beyond limit remain visible as context only.
// Values are immutable; apply() returns a successor.
class State {
 public:
  State(const Sentence& sentence, int start, int limit, EpisodeMode mode)
      : sentence_(&sentence), start_(start), cursor_(start), limit_(limit), mode_(mode) {
    detail::require(0 <= start && start <= limit && limit <= sentence.length(),
                    "episode span out of range");
  }

  // Continues from `prefix` (its stack and action history become left
  // context) with the episode span [prefix.cursor(), limit). The buffer stays
  // open to the sentence end: shifting past `limit` is legal and ends the
  // episode (overrun).
  State(const State& prefix, int limit, EpisodeMode mode)
      : sentence_(prefix.sentence_),
        stack_(prefix.stack_),
        action_labels_(prefix.action_labels_),
        start_(prefix.cursor_),
        cursor_(prefix.cursor_),
        limit_(limit),
        mode_(mode),
        context_(static_cast<int>(prefix.stack_.size())),
        open_(true) {
    detail::require(!prefix.stopped_ && start_ <= limit && limit <= sentence_->length(),
                    "episode span out of range");
  }

  static State for_sentence(const Sentence& s, EpisodeMode mode = EpisodeMode::sentence_f1) {
    return State(s, 0, s.length(), mode);
  }

  const Sentence& sentence() const { return *sentence_; }
  const std::vector<NodePtr>& stack() const { return stack_; }
  int start() const { return start_; }
  int cursor() const { return cursor_; }
  int limit() const { return limit_; }
  EpisodeMode mode() const { return mode_; }
  bool stopped() const { return stopped_; }
  bool buffer_exhausted() const { return cursor_ >= limit_; }
  // Labels of actions taken so far in this episode, oldest first.
  const std::vector<int>& action_labels() const { return action_labels_; }

  // Number of stack nodes that precede the episode span.
  int context() const { return context_; }
  // Shifts may continue past `limit` up to the sentence end.
  bool open() const { return open_; }
  // A Reduce merged a node of the span with left context.
  bool crossed() const { return crossed_; }
  // A token past `limit` was shifted.
  bool overrun() const { return overrun_; }
  bool can_shift() const { return cursor_ < (open_ ? sentence_->length() : limit_); }
  // The span is fully shifted and covered by the single top node.
  bool span_complete() const {
    return !crossed_ && cursor_ == limit_ && static_cast<int>(stack_.size()) == context_ + 1;
  }

  // Sentence modes: stopped, or the buffer is empty and the stack holds a
  // single tree. Mention modes end on a complete span, except that an open
  // span ending the sentence with left context still waits for Stop; a
  // crossing Reduce or an overrun also ends them.
  bool terminal() const {
    if (stopped_) return true;
    if (is_sentence_mode(mode_)) return buffer_exhausted() && stack_.size() == 1;
    if (crossed_ || overrun_) return true;
    return span_complete() && (stack_.size() == 1 || limit_ < sentence_->length());
  }

  bool operator==(const State& o) const;

 private:
  friend State apply(const State&, const Action&, const LabelSet&);

  const Sentence* sentence_;
  std::vector<NodePtr> stack_;
  std::vector<int> action_labels_;
  int start_;
  int cursor_;
  int limit_;
  EpisodeMode mode_;
  int context_ = 0;
  bool open_ = false;
  bool stopped_ = false;
  bool crossed_ = false;
  bool overrun_ = false;
};

inline bool same_tree(const TreeNode& a, const TreeNode& b) {
  if (a.start != b.start || a.end != b.end || a.label != b.label || a.is_leaf() != b.is_leaf())
    return false;
  return a.is_leaf() || (same_tree(*a.left, *b.left) && same_tree(*a.right, *b.right));
}

inline bool State::operator==(const State& o) const {
  if (sentence_ != o.sentence_ || start_ != o.start_ || cursor_ != o.cursor_ ||
      limit_ != o.limit_ || mode_ != o.mode_ || stopped_ != o.stopped_ || context_ != o.context_ ||
      crossed_ != o.crossed_ || open_ != o.open_ || overrun_ != o.overrun_ ||
      action_labels_ != o.action_labels_ || stack_.size() != o.stack_.size())
    return false;
  for (std::size_t i = 0; i < stack_.size(); ++i)
    if (!same_tree(*stack_[i], *o.stack_[i])) return false;
  return true;
}

// Stop is legal once the buffer is exhausted: always in sentence modes, and in
// mention modes when a left-context episode reaches the sentence end.
inline bool stop_allowed(const State& s) {
  if (!s.buffer_exhausted()) return false;
  return is_sentence_mode(s.mode()) || (s.open() && s.cursor() == s.sentence().length());
}

// Shift-l while a token can be shifted; Reduce-l (l != O) with two or more
// stack nodes; Stop per stop_allowed. Ordered by action id.
inline std::vector<Action> legal_actions(const State& s, const LabelSet& labels) {
  std::vector<Action> out;
  if (s.stopped()) return out;
  if (!is_sentence_mode(s.mode()) && s.terminal()) return out;
  const int n = labels.size();
  if (s.can_shift())
    for (int l = 0; l < n; ++l) out.push_back(Action::shift(l));
  if (s.stack().size() >= 2)
    for (int l = 0; l < n; ++l)
      if (l != labels.outside()) out.push_back(Action::reduce(l));
  if (stop_allowed(s)) out.push_back(Action::stop());
  return out;
}

inline std::vector<bool> legal_mask(const State& s, const LabelSet& labels) {
  std::vector<bool> mask(static_cast<std::size_t>(action_count(labels.size())), false);
  for (const auto& a : legal_actions(s, labels))
    mask[static_cast<std::size_t>(action_id(a, labels.size()))] = true;
  return mask;
}

inline std::string tree_string(const TreeNode& n, const Sentence& s, const LabelSet& labels,
                               bool top_level = true);

inline std::string state_summary(const State& s, const LabelSet& labels) {
  std::string out = "stack=[";
  for (std::size_t i = 0; i < s.stack().size(); ++i) {
    const auto& n = *s.stack()[i];
    if (i) out += ' ';
    out += "(" + std::to_string(n.start) + "," + std::to_string(n.end) + ")" + labels.name(n.label);
  }
  out += "] cursor=" + std::to_string(s.cursor()) + " limit=" + std::to_string(s.limit());
  if (s.context() > 0) out += " context=" + std::to_string(s.context());
  if (s.crossed()) out += " crossed";
  if (s.overrun()) out += " overrun";
  if (s.stopped()) out += " stopped";
  return out;
}

inline bool is_legal(const State& s, const Action& a, const LabelSet& labels) {
  if (s.stopped()) return false;
  if (!is_sentence_mode(s.mode()) && s.terminal()) return false;
  if (a.kind != ActionKind::stop && (a.label < 0 || a.label >= labels.size())) return false;
  switch (a.kind) {
    case ActionKind::shift:
      return s.can_shift();
    case ActionKind::reduce:
      return s.stack().size() >= 2 && a.label != labels.outside();
    case ActionKind::stop:
      return stop_allowed(s);
  }
  return false;
}

// Successor state. Shift-l pushes a leaf over the cursor token; Reduce-l
// replaces the top two nodes by their parent; Stop marks the state stopped.
// Illegal actions throw contract_violation.
inline State apply(const State& s, const Action& a, const LabelSet& labels) {
  if (!is_legal(s, a, labels)) {
    const bool named = a.kind == ActionKind::stop || (a.label >= 0 && a.label < labels.size());
    throw contract_violation("illegal action " +
                             (named ? action_name(a, labels) : std::string("<bad label>")) +
                             " in state " + state_summary(s, labels));
  }
  State next = s;
  switch (a.kind) {
    case ActionKind::shift:
      next.stack_.push_back(make_leaf(next.cursor_, a.label));
      if (next.cursor_ >= next.limit_) next.overrun_ = true;
      ++next.cursor_;
      next.action_labels_.push_back(a.label);
      break;
    case ActionKind::reduce: {
      auto right = next.stack_.back();
      next.stack_.pop_back();
      auto left = next.stack_.back();
      next.stack_.pop_back();
      if (left->start < next.start_) next.crossed_ = true;
      next.stack_.push_back(make_internal(std::move(left), std::move(right), a.label));
      next.action_labels_.push_back(a.label);
      break;
    }
    case ActionKind::stop:
      next.stopped_ = true;
      break;
  }
  return next;
}

// ---------------------------------------------------------------------------
// Reading results off the stack
// ---------------------------------------------------------------------------

// BIO tags over [start, limit): each top-level node labeled l != O emits
// B-l I-l ...; O nodes emit O per covered token.
inline std::vector<int> read_labels(const State& s, const LabelSet& labels) {
  detail::require(s.buffer_exhausted(), "read_labels needs an exhausted buffer");
  std::vector<int> tags;
  for (const auto& n : s.stack()) {
    for (int i = n->start; i < n->end; ++i) {
      if (n->label == labels.outside())
        tags.push_back(LabelSet::outside_tag());
      else
        tags.push_back(i == n->start ? labels.begin_tag(n->label) : labels.inside_tag(n->label));
    }
  }
  return tags;
}

// Mentions implied by the top-level nodes (O nodes omitted).
inline std::vector<Mention> stack_mentions(const State& s, const LabelSet& labels) {
  std::vector<Mention> out;
  for (const auto& n : s.stack())
    if (n->label != labels.outside()) out.push_back({n->start, n->end, n->label});
  return out;
}

inline void collect_nodes(const NodePtr& n, std::vector<NodePtr>& out) {
  out.push_back(n);
  if (!n->is_leaf()) {
    collect_nodes(n->left, out);
    collect_nodes(n->right, out);
  }
}

// Every node of every top-level tree, depth-first pre-order.
inline std::vector<NodePtr> collect_internal_nodes(const State& s) {
  std::vector<NodePtr> out;
  for (const auto& n : s.stack()) collect_nodes(n, out);
  return out;
}

// Shift-l x L then Reduce-l x (L-1) per gold mention, Shift-O per other
// token, then Stop. Used only to check the transition system.
inline std::vector<Action> canonical_oracle(const Sentence& sent, const LabelSet& labels) {
  std::vector<Action> out;
  int i = 0;
  for (const auto& m : sent.mentions) {
    for (; i < m.start; ++i) out.push_back(Action::shift(labels.outside()));
    for (; i < m.end; ++i) out.push_back(Action::shift(m.label));
    for (int k = 1; k < m.length(); ++k) out.push_back(Action::reduce(m.label));
  }
  for (; i < sent.length(); ++i) out.push_back(Action::shift(labels.outside()));
  out.push_back(Action::stop());
  return out;
}

// "[[George Washington]_PER Bridge]_FAC". Leaves print bare words except a
// top-level leaf carrying a mention label.
inline std::string tree_string(const TreeNode& n, const Sentence& s, const LabelSet& labels,
                               bool top_level) {
  if (n.is_leaf()) {
    const auto& w = s.tokens[static_cast<std::size_t>(n.start)].surface;
    if (top_level && n.label != labels.outside()) return "[" + w + "]_" + labels.name(n.label);
    return w;
  }
  return "[" + tree_string(*n.left, s, labels, false) + " " +
         tree_string(*n.right, s, labels, false) + "]_" + labels.name(n.label);
}

inline std::string stack_string(const State& s, const LabelSet& labels) {
  std::string out;
  for (const auto& n : s.stack()) {
    if (!out.empty()) out += ' ';
    out += tree_string(*n, s.sentence(), labels, true);
  }
  return out;
}

}  // namespace mentree

#endif  // MENTREE_TRANSITION_HPP_
