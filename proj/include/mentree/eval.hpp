#ifndef MENTREE_EVAL_HPP_
#define MENTREE_EVAL_HPP_

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mentree/corpus.hpp"
#include "mentree/error.hpp"
#include "mentree/transition.hpp"

namespace mentree {

// ---------------------------------------------------------------------------
// Mention-level scoring
// ---------------------------------------------------------------------------

struct Counts {
  long gold = 0;
  long predicted = 0;
  long matched = 0;

  double precision() const { return predicted ? static_cast<double>(matched) / static_cast<double>(predicted) : 0.0; }
  double recall() const { return gold ? static_cast<double>(matched) / static_cast<double>(gold) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

struct ScoreReport {
  Counts total;
  std::map<std::string, Counts> per_label;

  double precision() const { return total.precision(); }
  double recall() const { return total.recall(); }
  double f1() const { return total.f1(); }
};

inline ScoreReport score_mentions(const std::vector<std::vector<Mention>>& pred,
                                  const std::vector<std::vector<Mention>>& gold,
                                  const LabelSet& labels) {
  detail::require(pred.size() == gold.size(), "score: corpora are not aligned");
  ScoreReport r;
  for (int l = 0; l < labels.size(); ++l)
    if (l != labels.outside()) r.per_label[labels.name(l)];
  for (std::size_t i = 0; i < gold.size(); ++i) {
    std::set<Mention> g(gold[i].begin(), gold[i].end());
    for (const auto& m : gold[i]) {
      ++r.total.gold;
      ++r.per_label[labels.name(m.label)].gold;
    }
    for (const auto& m : pred[i]) {
      ++r.total.predicted;
      auto& c = r.per_label[labels.name(m.label)];
      ++c.predicted;
      if (g.count(m)) {
        ++r.total.matched;
        ++c.matched;
      }
    }
  }
  return r;
}

// Micro-averaged exact span+label match over BIO tag sequences.
inline ScoreReport score(const std::vector<std::vector<int>>& pred,
                         const std::vector<std::vector<int>>& gold, const LabelSet& labels) {
  detail::require(pred.size() == gold.size(), "score: corpora are not aligned");
  std::vector<std::vector<Mention>> p, g;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    detail::require(pred[i].size() == gold[i].size(), "score: sentence lengths differ");
    p.push_back(decode_bio(pred[i], labels));
    g.push_back(decode_bio(gold[i], labels));
  }
  return score_mentions(p, g, labels);
}

inline nlohmann::json to_json(const ScoreReport& r) {
  auto counts = [](const Counts& c) {
    return nlohmann::json{{"precision", c.precision()}, {"recall", c.recall()}, {"f1", c.f1()},
                          {"gold", c.gold},             {"predicted", c.predicted}, {"matched", c.matched}};
  };
  nlohmann::json j = counts(r.total);
  auto per = nlohmann::json::object();
  for (const auto& [name, c] : r.per_label) per[name] = counts(c);
  j["per_label"] = per;
  return j;
}

inline std::string format_fixed(double v, int digits = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

inline std::string render_table(const ScoreReport& r) {
  std::ostringstream out;
  auto row = [&](const std::string& name, const Counts& c) {
    out << std::left << std::setw(10) << name << std::right << std::setw(8) << c.gold << std::setw(8)
        << c.predicted << std::setw(8) << c.matched << std::setw(10) << format_fixed(c.precision())
        << std::setw(10) << format_fixed(c.recall()) << std::setw(10) << format_fixed(c.f1()) << '\n';
  };
  out << std::left << std::setw(10) << "label" << std::right << std::setw(8) << "gold" << std::setw(8)
      << "pred" << std::setw(8) << "match" << std::setw(10) << "P" << std::setw(10) << "R"
      << std::setw(10) << "F1" << '\n';
  for (const auto& [name, c] : r.per_label) row(name, c);
  row("overall", r.total);
  return out.str();
}

// ---------------------------------------------------------------------------
// Random chunk chance
// ---------------------------------------------------------------------------

struct Rational {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational& o) const { return num == o.num && den == o.den; }
};

inline Rational make_rational(unsigned __int128 num, unsigned __int128 den) {
  unsigned __int128 a = num, b = den;
  while (b) {
    auto t = a % b;
    a = b;
    b = t;
  }
  if (a == 0) a = 1;
  return {static_cast<std::uint64_t>(num / a), static_cast<std::uint64_t>(den / a)};
}

// Number of binary tree shapes over n >= 1 leaves: Catalan(n - 1).
inline std::uint64_t tree_shapes(int leaves) {
  detail::require(leaves >= 1 && leaves <= 30, "tree_shapes: leaves out of range");
  std::uint64_t c = 1;  // Catalan(0)
  for (int k = 0; k < leaves - 1; ++k) c = c * 2 * (2 * static_cast<std::uint64_t>(k) + 1) / (static_cast<std::uint64_t>(k) + 2);
  return c;
}

// Probability that a binary tree drawn uniformly over the shapes on `outer`
// leaves has a node covering a given contiguous span of `inner` leaves. Trees
// containing the span factor into a tree over the span and a tree over the
// outer sequence with the span collapsed to one leaf, so the count is
// shapes(inner) * shapes(outer - inner + 1), whatever the span position.
inline Rational random_chunk_chance_exact(int inner, int outer) {
  detail::require(1 <= inner && inner <= outer && outer <= 30, "random_chunk_chance: bad lengths");
  const unsigned __int128 hits =
      static_cast<unsigned __int128>(tree_shapes(inner)) * tree_shapes(outer - inner + 1);
  return make_rational(hits, tree_shapes(outer));
}

inline double random_chunk_chance(int inner, int outer) {
  return random_chunk_chance_exact(inner, outer).value();
}

// ---------------------------------------------------------------------------
// Surface statistics
// ---------------------------------------------------------------------------

// Gold-label counts per mention surface.
class SurfaceLabels {
 public:
  explicit SurfaceLabels(bool case_sensitive = true) : case_sensitive_(case_sensitive) {}

  void add(const std::vector<Sentence>& corpus) {
    for (const auto& s : corpus)
      for (const auto& m : s.mentions) {
        const auto key = key_of(s, m.start, m.end);
        ++counts_[key][m.label];
        max_len_ = std::max(max_len_, m.length());
      }
  }

  Surface key_of(const Sentence& s, int start, int end) const {
    Surface k;
    for (int i = start; i < end; ++i) {
      const auto& t = s.tokens[static_cast<std::size_t>(i)];
      k.push_back(case_sensitive_ ? t.surface : t.lowercased);
    }
    return k;
  }

  // Most frequent label; nullopt when unseen or tied.
  std::optional<int> majority(const Surface& key) const {
    auto it = counts_.find(key);
    if (it == counts_.end()) return std::nullopt;
    int best = -1, best_n = 0;
    bool tie = false;
    for (const auto& [label, n] : it->second) {
      if (n > best_n) {
        best = label;
        best_n = n;
        tie = false;
      } else if (n == best_n) {
        tie = true;
      }
    }
    if (tie) return std::nullopt;
    return best;
  }

  int max_length() const { return max_len_; }

 private:
  bool case_sensitive_;
  std::map<Surface, std::map<int, int>> counts_;
  int max_len_ = 0;
};

// ---------------------------------------------------------------------------
// Sub-mention consistency
// ---------------------------------------------------------------------------

struct SubMentionRow {
  long support = 0;  // sub-mention occurrences
  long chunk_hits = 0;
  long label_hits = 0;  // among chunk hits
  double chance_sum = 0;

  double chk_rnd() const { return support ? chance_sum / static_cast<double>(support) : 0.0; }
  double chk() const { return support ? static_cast<double>(chunk_hits) / static_cast<double>(support) : 0.0; }
  double corr_lbl() const {
    return chunk_hits ? static_cast<double>(label_hits) / static_cast<double>(chunk_hits) : 0.0;
  }
};

// Rows keyed by sub-mention length 1, 2, 3 and 4 (meaning 4 or more).
struct SubMentionReport {
  std::map<int, SubMentionRow> rows;
};

inline int size_bucket(int len) { return std::min(len, 4); }

// For every occurrence of a known mention surface strictly inside a larger
// gold mention: Chk when the predicted trees contain a node over exactly that
// occurrence; Corr-lbl when that node carries the surface's standalone label.
// `predicted[i]` are the tree nodes decoded for sentence i.
inline SubMentionReport submention_analysis(const std::vector<Sentence>& gold,
                                            const std::vector<std::vector<NodePtr>>& predicted,
                                            const SurfaceLabels& standalone) {
  detail::require(gold.size() == predicted.size(), "submention_analysis: corpora are not aligned");
  SubMentionReport report;
  for (int b = 1; b <= 4; ++b) report.rows[b];
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& s = gold[i];
    std::map<std::pair<int, int>, int> nodes;
    for (const auto& n : predicted[i]) nodes[{n->start, n->end}] = n->label;
    for (const auto& outer : s.mentions) {
      for (int len = 1; len < outer.length() && len <= standalone.max_length(); ++len) {
        for (int a = outer.start; a + len <= outer.end; ++a) {
          auto label = standalone.majority(standalone.key_of(s, a, a + len));
          if (!label) continue;
          auto& row = report.rows[size_bucket(len)];
          ++row.support;
          row.chance_sum += random_chunk_chance(len, outer.length());
          auto it = nodes.find({a, a + len});
          if (it == nodes.end()) continue;
          ++row.chunk_hits;
          if (it->second == *label) ++row.label_hits;
        }
      }
    }
  }
  return report;
}

inline nlohmann::json to_json(const SubMentionReport& r) {
  auto rows = nlohmann::json::array();
  for (const auto& [size, row] : r.rows)
    rows.push_back({{"size", size},
                    {"support", row.support},
                    {"chk_rnd", row.chk_rnd()},
                    {"chk", row.chk()},
                    {"corr_lbl", row.corr_lbl()}});
  return {{"rows", rows}};
}

inline std::string render_table(const SubMentionReport& r) {
  std::ostringstream out;
  out << std::left << std::setw(6) << "Sz" << std::right << std::setw(10) << "support" << std::setw(10)
      << "Chk rnd" << std::setw(8) << "Chk" << std::setw(11) << "Corr lbl" << '\n';
  for (const auto& [size, row] : r.rows)
    out << std::left << std::setw(6) << (size == 4 ? "4+" : std::to_string(size)) << std::right
        << std::setw(10) << row.support << std::setw(10) << format_fixed(row.chk_rnd(), 2) << std::setw(8)
        << format_fixed(row.chk(), 2) << std::setw(11) << format_fixed(row.corr_lbl(), 2) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Label bias errors
// ---------------------------------------------------------------------------

struct BiasError {
  int sentence = 0;
  Mention gold;          // the larger mention
  Mention inner;         // the biased sub-mention
  int assigned = 0;      // the sub-mention's majority label, as predicted
  std::string rendered;  // e.g. "[[New York] Stock Market]_GPE^ORG"
};

// Counts keyed by inner size (0 for inner mentions longer than 5).
struct BiasReport {
  std::map<int, long> counts;
  std::vector<BiasError> errors;
};

inline int bias_bucket(int len) { return len > 5 ? 0 : len; }

inline std::string render_bias(const Sentence& s, const Mention& outer, const Mention& inner,
                               const std::string& assigned, const std::string& correct) {
  std::string out = "[";
  for (int i = outer.start; i < outer.end; ++i) {
    if (i > outer.start) out += ' ';
    if (i == inner.start) out += '[';
    out += s.tokens[static_cast<std::size_t>(i)].surface;
    if (i + 1 == inner.end) out += ']';
  }
  return out + "]_" + assigned + "^" + correct;
}

// A gold mention M holding a sub-span m whose majority standalone label l_m
// differs from M's label is flagged when the system misses M and tags m's
// extent, or a prefix of M covering m, as l_m. Each M is flagged at most once,
// for its longest qualifying m.
inline BiasReport label_bias_analysis(const std::vector<Sentence>& gold,
                                      const std::vector<std::vector<int>>& predicted_tags,
                                      const SurfaceLabels& majority, const LabelSet& labels) {
  detail::require(gold.size() == predicted_tags.size(), "label_bias_analysis: corpora are not aligned");
  BiasReport report;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& s = gold[i];
    detail::require(static_cast<int>(predicted_tags[i].size()) == s.length(),
                    "label_bias_analysis: sentence lengths differ");
    const auto pred = decode_bio(predicted_tags[i], labels);
    const std::set<Mention> pred_set(pred.begin(), pred.end());
    for (const auto& outer : s.mentions) {
      if (pred_set.count(outer)) continue;
      std::optional<BiasError> found;
      for (int len = outer.length() - 1; len >= 1 && !found; --len) {
        for (int a = outer.start; a + len <= outer.end && !found; ++a) {
          auto lm = majority.majority(majority.key_of(s, a, a + len));
          if (!lm || *lm == outer.label || *lm == labels.outside()) continue;
          const Mention inner{a, a + len, *lm};
          for (const auto& p : pred) {
            if (p.label != *lm) continue;
            const bool extent = p.start == inner.start && p.end == inner.end;
            const bool prefix = p.start == outer.start && p.end >= inner.end && p.end <= outer.end;
            if (extent || prefix) {
              found = BiasError{static_cast<int>(i), outer, inner, *lm,
                                render_bias(s, outer, inner, labels.name(*lm), labels.name(outer.label))};
              break;
            }
          }
        }
      }
      if (found) {
        ++report.counts[bias_bucket(found->inner.length())];
        report.errors.push_back(std::move(*found));
      }
    }
  }
  return report;
}

inline nlohmann::json to_json(const BiasReport& r) {
  auto counts = nlohmann::json::object();
  for (const auto& [size, n] : r.counts) counts[std::to_string(size)] = n;
  auto errors = nlohmann::json::array();
  for (const auto& e : r.errors)
    errors.push_back({{"sentence", e.sentence},
                      {"outer", {e.gold.start, e.gold.end}},
                      {"inner", {e.inner.start, e.inner.end}},
                      {"example", e.rendered}});
  return {{"counts", counts}, {"errors", errors}};
}

// Side-by-side counts for two systems, first example of each size.
inline std::string render_bias_table(const BiasReport& sl, const BiasReport& rl) {
  std::set<int> sizes;
  for (const auto& [k, v] : sl.counts) sizes.insert(k);
  for (const auto& [k, v] : rl.counts) sizes.insert(k);
  std::ostringstream out;
  out << std::left << std::setw(10) << "Men.size" << std::right << std::setw(12) << "#SL errors"
      << std::setw(12) << "#RL errors" << "  Example\n";
  for (int size : sizes) {
    auto get = [&](const BiasReport& r) {
      auto it = r.counts.find(size);
      return it == r.counts.end() ? 0L : it->second;
    };
    std::string example;
    for (const auto* r : {&sl, &rl})
      for (const auto& e : r->errors)
        if (example.empty() && bias_bucket(e.inner.length()) == size) example = e.rendered;
    out << std::left << std::setw(10) << size << std::right << std::setw(12) << get(sl) << std::setw(12)
        << get(rl) << "  " << example << '\n';
  }
  return out.str();
}

}  // namespace mentree

#endif  // MENTREE_EVAL_HPP_
