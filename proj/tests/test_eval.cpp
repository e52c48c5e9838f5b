#include <gtest/gtest.h>

#include <set>

#include "mentree/eval.hpp"
#include "mentree/random.hpp"
#include "mentree/transition.hpp"

using namespace mentree;

namespace {

const LabelSet kLabels = LabelSet::with_outside({"PER", "GPE", "ORG", "FAC"});
const int PER = kLabels.id("PER");
const int GPE = kLabels.id("GPE");
const int ORG = kLabels.id("ORG");
const int FAC = kLabels.id("FAC");

using Spans = std::set<std::pair<int, int>>;

// Every binary tree over leaves [a, b), as its set of node spans.
std::vector<Spans> all_trees(int a, int b) {
  if (b - a == 1) return {Spans{{a, b}}};
  std::vector<Spans> out;
  for (int k = a + 1; k < b; ++k)
    for (const auto& l : all_trees(a, k))
      for (const auto& r : all_trees(k, b)) {
        Spans t = l;
        t.insert(r.begin(), r.end());
        t.insert({a, b});
        out.push_back(std::move(t));
      }
  return out;
}

long brute_matches(const std::vector<Mention>& p, const std::vector<Mention>& g) {
  long n = 0;
  for (const auto& x : p)
    for (const auto& y : g)
      if (x.start == y.start && x.end == y.end && x.label == y.label) ++n;
  return n;
}

std::vector<Mention> random_mentions(Rng& rng, int n) {
  std::vector<Mention> out;
  int i = 0;
  while (i < n) {
    if (rng.uniform(0, 1) < 0.4) {
      const int len = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(std::min(3, n - i))));
      out.push_back({i, i + len, 1 + static_cast<int>(rng.below(4))});
      i += len;
    } else {
      ++i;
    }
  }
  return out;
}

// Leaves for [a, b) with every token labelled O.
NodePtr chain(int a, int b) {
  NodePtr n = make_leaf(a, 0);
  for (int i = a + 1; i < b; ++i) n = make_internal(n, make_leaf(i, 0), 0);
  return n;
}

std::vector<NodePtr> nodes_of(const NodePtr& root) {
  std::vector<NodePtr> out;
  collect_nodes(root, out);
  return out;
}

}  // namespace

TEST(Score, Examples) {
  const std::vector<std::vector<Mention>> gold{{{0, 2, PER}, {3, 4, GPE}}};
  EXPECT_EQ(score_mentions(gold, gold, kLabels).f1(), 1.0);
  const std::vector<std::vector<Mention>> half{{{0, 2, PER}, {5, 6, ORG}}};
  const auto r = score_mentions(half, gold, kLabels);
  EXPECT_EQ(r.precision(), 0.5);
  EXPECT_EQ(r.recall(), 0.5);
  EXPECT_EQ(r.f1(), 0.5);
  EXPECT_EQ(r.per_label.at("PER").f1(), 1.0);
  EXPECT_EQ(r.per_label.at("GPE").recall(), 0.0);
  EXPECT_EQ(r.per_label.at("ORG").predicted, 1);
  const std::vector<std::vector<Mention>> none{{}};
  EXPECT_EQ(score_mentions(none, gold, kLabels).f1(), 0.0);
  EXPECT_EQ(score_mentions(none, none, kLabels).f1(), 0.0);
  const std::vector<std::vector<Mention>> wrong_label{{{0, 2, GPE}, {3, 4, GPE}}};
  EXPECT_EQ(score_mentions(wrong_label, gold, kLabels).total.matched, 1);
  EXPECT_THROW(score_mentions({}, gold, kLabels), contract_violation);
}

TEST(Score, TagsRouteMatchesMentions) {
  const auto g = encode_bio({{0, 2, PER}, {3, 4, GPE}}, 5, kLabels);
  const auto p = encode_bio({{0, 2, PER}}, 5, kLabels);
  EXPECT_EQ(score({p}, {g}, kLabels).recall(), 0.5);
  EXPECT_EQ(score({p}, {g}, kLabels).precision(), 1.0);
}

TEST(Score, AgreesWithBruteForce) {
  Rng rng(99);
  for (int k = 0; k < 1000; ++k) {
    std::vector<std::vector<Mention>> pred, gold;
    long gold_n = 0, pred_n = 0, matched = 0;
    const int sentences = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < sentences; ++i) {
      const int n = 1 + static_cast<int>(rng.below(12));
      gold.push_back(random_mentions(rng, n));
      pred.push_back(rng.uniform(0, 1) < 0.3 ? gold.back() : random_mentions(rng, n));
      gold_n += static_cast<long>(gold.back().size());
      pred_n += static_cast<long>(pred.back().size());
      matched += brute_matches(pred.back(), gold.back());
    }
    const auto r = score_mentions(pred, gold, kLabels);
    ASSERT_EQ(r.total.gold, gold_n);
    ASSERT_EQ(r.total.predicted, pred_n);
    ASSERT_EQ(r.total.matched, matched);
    const double p = pred_n ? static_cast<double>(matched) / static_cast<double>(pred_n) : 0.0;
    const double rc = gold_n ? static_cast<double>(matched) / static_cast<double>(gold_n) : 0.0;
    ASSERT_EQ(r.f1(), p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0);
    ASSERT_LE(r.total.matched, std::min(r.total.gold, r.total.predicted));
  }
}

TEST(ChunkChance, MatchesTreeEnumeration) {
  for (int outer = 1; outer <= 6; ++outer) {
    const auto trees = all_trees(0, outer);
    ASSERT_EQ(trees.size(), tree_shapes(outer));
    for (int inner = 1; inner <= outer; ++inner) {
      const auto expected = random_chunk_chance_exact(inner, outer);
      for (int a = 0; a + inner <= outer; ++a) {
        std::uint64_t hits = 0;
        for (const auto& t : trees) hits += t.count({a, a + inner});
        EXPECT_EQ(make_rational(hits, trees.size()), expected) << inner << " in " << outer << " at " << a;
      }
    }
  }
}

TEST(ChunkChance, Edges) {
  for (int n = 1; n <= 12; ++n) {
    EXPECT_EQ(random_chunk_chance(n, n), 1.0);
    EXPECT_EQ(random_chunk_chance(1, n), 1.0);
  }
  EXPECT_EQ(random_chunk_chance_exact(2, 3), (Rational{1, 2}));
  EXPECT_EQ(random_chunk_chance_exact(2, 4), (Rational{2, 5}));
  EXPECT_THROW(random_chunk_chance(3, 2), contract_violation);
  EXPECT_EQ(tree_shapes(12), 58786u);
}

TEST(SubMention, HongKongHitAndMiss) {
  const Sentence hk = make_sentence({"Hong", "Kong"}, {{0, 2, GPE}});
  const Sentence hkd = make_sentence({"visit", "Hong", "Kong", "Disneyland"}, {{1, 4, FAC}});
  SurfaceLabels standalone;
  standalone.add({hk, hkd});

  const NodePtr good = make_internal(make_internal(make_leaf(1, GPE), make_leaf(2, GPE), GPE), make_leaf(3, FAC), FAC);
  auto nodes = nodes_of(good);
  nodes.push_back(make_leaf(0, 0));
  const auto hit = submention_analysis({hkd}, {nodes}, standalone);
  EXPECT_EQ(hit.rows.at(2).support, 1);
  EXPECT_EQ(hit.rows.at(2).chk(), 1.0);
  EXPECT_EQ(hit.rows.at(2).corr_lbl(), 1.0);
  EXPECT_EQ(hit.rows.at(2).chk_rnd(), 0.5);

  const NodePtr bad = make_internal(make_leaf(1, FAC), make_internal(make_leaf(2, FAC), make_leaf(3, FAC), FAC), FAC);
  const auto miss = submention_analysis({hkd}, {nodes_of(bad)}, standalone);
  EXPECT_EQ(miss.rows.at(2).support, 1);
  EXPECT_EQ(miss.rows.at(2).chk(), 0.0);
  EXPECT_EQ(miss.rows.at(2).corr_lbl(), 0.0);

  const NodePtr wrong = make_internal(make_internal(make_leaf(1, ORG), make_leaf(2, ORG), ORG), make_leaf(3, FAC), FAC);
  const auto lbl = submention_analysis({hkd}, {nodes_of(wrong)}, standalone);
  EXPECT_EQ(lbl.rows.at(2).chk(), 1.0);
  EXPECT_EQ(lbl.rows.at(2).corr_lbl(), 0.0);
}

TEST(SubMention, SizeOneChunksAlwaysHit) {
  Rng rng(4);
  std::vector<Sentence> gold;
  std::vector<std::vector<NodePtr>> pred;
  const std::vector<std::string> vocab{"a", "b", "c", "d"};
  for (int k = 0; k < 200; ++k) {
    std::vector<std::string> words;
    const int n = 2 + static_cast<int>(rng.below(6));
    for (int i = 0; i < n; ++i) words.push_back(vocab[rng.below(vocab.size())]);
    gold.push_back(make_sentence(words, {{0, n, ORG}}));
    std::vector<NodePtr> stack;
    for (int i = 0; i < n; ++i) stack.push_back(make_leaf(i, 0));
    while (stack.size() > 1) {
      const std::size_t j = rng.below(stack.size() - 1);
      stack[j] = make_internal(stack[j], stack[j + 1], static_cast<int>(rng.below(5)));
      stack.erase(stack.begin() + static_cast<long>(j) + 1);
    }
    pred.push_back(nodes_of(stack[0]));
  }
  for (const auto& w : vocab) gold.push_back(make_sentence({w}, {{0, 1, PER}}));
  for (std::size_t i = 200; i < gold.size(); ++i) pred.push_back({make_leaf(0, PER)});
  SurfaceLabels standalone;
  standalone.add(gold);
  const auto r = submention_analysis(gold, pred, standalone);
  ASSERT_GT(r.rows.at(1).support, 0);
  EXPECT_EQ(r.rows.at(1).chk(), 1.0);
  EXPECT_EQ(r.rows.at(1).chk_rnd(), 1.0);
  for (const auto& [size, row] : r.rows) {
    for (double v : {row.chk(), row.chk_rnd(), row.corr_lbl()}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_LE(row.label_hits, row.chunk_hits);
  }
}

TEST(SubMention, CaseSensitivity) {
  const Sentence a = make_sentence({"Hong", "Kong"}, {{0, 2, GPE}});
  const Sentence b = make_sentence({"HONG", "KONG", "Tower"}, {{0, 3, FAC}});
  SurfaceLabels exact, folded(false);
  exact.add({a, b});
  folded.add({a, b});
  const std::vector<std::vector<NodePtr>> pred{nodes_of(chain(0, 3))};
  EXPECT_EQ(submention_analysis({b}, pred, exact).rows.at(2).support, 0);
  EXPECT_EQ(submention_analysis({b}, pred, folded).rows.at(2).support, 1);
  EXPECT_EQ(submention_analysis({b}, pred, folded).rows.at(2).chk(), 1.0);
}

TEST(SurfaceLabels, MajorityAndTies) {
  SurfaceLabels s;
  s.add({make_sentence({"Paris"}, {{0, 1, GPE}}), make_sentence({"Paris"}, {{0, 1, GPE}}),
         make_sentence({"Paris"}, {{0, 1, PER}}), make_sentence({"Jordan"}, {{0, 1, GPE}}),
         make_sentence({"Jordan"}, {{0, 1, PER}})});
  EXPECT_EQ(s.majority({"Paris"}), GPE);
  EXPECT_EQ(s.majority({"Jordan"}), std::nullopt);
  EXPECT_EQ(s.majority({"Rome"}), std::nullopt);
}

TEST(LabelBias, Examples) {
  const Sentence ny = make_sentence({"New", "York"}, {{0, 2, GPE}});
  const Sentence nysm = make_sentence({"New", "York", "Stock", "Market"}, {{0, 4, ORG}});
  const Sentence boc = make_sentence({"Bank", "of", "China"}, {{0, 3, ORG}});
  const Sentence boct = make_sentence({"Bank", "of", "China", "Tower"}, {{0, 4, FAC}});
  SurfaceLabels majority;
  majority.add({ny, nysm, boc, boct});

  const auto split = encode_bio({{0, 2, GPE}, {2, 4, ORG}}, 4, kLabels);
  const auto r = label_bias_analysis({nysm}, {split}, majority, kLabels);
  ASSERT_EQ(r.errors.size(), 1u);
  EXPECT_EQ(r.counts.at(2), 1);
  EXPECT_EQ(r.errors[0].inner, (Mention{0, 2, GPE}));
  EXPECT_EQ(r.errors[0].rendered, "[[New York] Stock Market]_GPE^ORG");

  const auto exact = encode_bio({{0, 4, ORG}}, 4, kLabels);
  EXPECT_TRUE(label_bias_analysis({nysm}, {exact}, majority, kLabels).errors.empty());

  const auto whole = encode_bio({{0, 4, ORG}}, 4, kLabels);
  const auto t = label_bias_analysis({boct}, {whole}, majority, kLabels);
  ASSERT_EQ(t.errors.size(), 1u);
  EXPECT_EQ(t.counts.at(3), 1);
  EXPECT_EQ(t.errors[0].rendered, "[[Bank of China] Tower]_ORG^FAC");

  const auto outside = encode_bio({}, 4, kLabels);
  EXPECT_TRUE(label_bias_analysis({boct}, {outside}, majority, kLabels).errors.empty());
  EXPECT_THROW(label_bias_analysis({boct}, {}, majority, kLabels), contract_violation);
}

TEST(Reports, TablesAndJson) {
  const std::vector<std::vector<Mention>> gold{{{0, 2, PER}}};
  const auto r = score_mentions(gold, gold, kLabels);
  const auto table = render_table(r);
  EXPECT_NE(table.find("overall"), std::string::npos);
  EXPECT_NE(table.find("1.0000"), std::string::npos);
  const auto j = to_json(r);
  EXPECT_EQ(j.at("f1"), 1.0);
  EXPECT_EQ(j.at("per_label").at("PER").at("gold"), 1);

  SubMentionReport sub;
  for (int b = 1; b <= 4; ++b) sub.rows[b];
  EXPECT_NE(render_table(sub).find("4+"), std::string::npos);
  EXPECT_EQ(to_json(sub).at("rows").size(), 4u);

  BiasReport a, b;
  a.counts[2] = 3;
  b.counts[2] = 1;
  b.counts[0] = 2;
  const auto bias = render_bias_table(a, b);
  EXPECT_NE(bias.find("#SL errors"), std::string::npos);
  EXPECT_EQ(to_json(b).at("counts").at("0"), 2);
}
