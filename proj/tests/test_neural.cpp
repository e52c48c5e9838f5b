#include <gtest/gtest.h>

#include <cmath>

#include "mentree/neural.hpp"
#include "mentree/random.hpp"
#include "mentree/transition.hpp"

using namespace mentree;

namespace {

const LabelSet kLabels = LabelSet::with_outside({"PER", "FAC"});
const int O = kLabels.outside();
const int PER = kLabels.id("PER");
const int FAC = kLabels.id("FAC");

FeatureConfig tiny_config() {
  FeatureConfig c;
  c.window = 0;
  c.stack_depth = 0;
  c.prev_labels = 0;
  c.embed_dim = 2;
  c.hidden_dim = 2;
  c.use_caps = c.use_gazetteers = c.use_chars = false;
  return c;
}

// 2 inputs (the buffer-top word embedding), 2 relu hidden units and the three
// actions of the label set {O}: Shift-O, Reduce-O, Stop.
Network<double> hand_net(const Sentence& s) {
  Network<double> net(Head::q, tiny_config(), LabelSet({"O"}), build_vocabulary({s}));
  auto set = [&](int p, std::vector<double> v) { net.param(p).data = std::move(v); };
  net.param(kWordEmb).row(2)[0] = 1.0;
  net.param(kWordEmb).row(2)[1] = 2.0;
  set(kHiddenW, {1.0, -1.0, 0.5, 0.5});
  set(kHiddenB, {2.0, 0.0});
  set(kOutputW, {1.0, 2.0, -1.0, 0.0, 0.5, -0.5});
  set(kOutputB, {0.1, 0.2, 0.3});
  return net;
}

FeatureConfig small_config() {
  FeatureConfig c;
  c.window = 2;
  c.stack_depth = 3;
  c.prev_labels = 2;
  c.embed_dim = 3;
  c.caps_dim = 2;
  c.gaz_dim = 2;
  c.char_dim = 2;
  c.label_dim = 2;
  c.hidden_dim = 8;
  return c;
}

const Sentence& gwb() {
  static const Sentence s = make_sentence({"George", "Washington", "Bridge", "opened", "today"}, {{0, 3, FAC}});
  return s;
}

Network<double> small_net(std::uint64_t seed = 1, Head head = Head::q) {
  std::vector<Gazetteer> gaz{{"people", {{"george", "washington"}}}};
  Network<double> net(head, small_config(), kLabels, build_vocabulary({gwb()}), gaz);
  net.initialize(seed, 0.5);
  return net;
}

State run(State s, const std::vector<Action>& actions) {
  for (const auto& a : actions) s = apply(s, a, kLabels);
  return s;
}

std::vector<double> block_of(const Network<double>& net, const TokenCodes& c) {
  std::vector<RowRef> refs;
  net.block_refs(c, 0, refs);
  std::vector<double> out(static_cast<std::size_t>(net.block_dim()), 0.0);
  net.accumulate(refs, out.data());
  return out;
}

}  // namespace

TEST(Forward, HandComputed) {
  const Sentence s = make_sentence({"George"});
  const auto net = hand_net(s);
  const auto f = net.featurize(State::for_sentence(s), net.encode(s));
  ASSERT_EQ(f.x, (std::vector<double>{1.0, 2.0}));
  // hidden = relu([1 -1; .5 .5] x + [2 0]) = (1, 1.5)
  // Q = [1 2; -1 0; .5 -.5] hidden + [.1 .2 .3] = (4.1, -0.8, 0.05)
  const auto q = net.forward(f.x);
  ASSERT_EQ(q.size(), 3u);
  EXPECT_NEAR(q[0], 4.1, 1e-12);
  EXPECT_NEAR(q[1], -0.8, 1e-12);
  EXPECT_NEAR(q[2], 0.05, 1e-12);
}

TEST(Backward, HandComputedSgdStep) {
  const Sentence s = make_sentence({"George"});
  auto net = hand_net(s);
  const auto f = net.featurize(State::for_sentence(s), net.encode(s));
  // dL/dQ0 = -2 (5 - 4.1) = -1.8; dz = -1.8 * W2[0] = (-1.8, -3.6);
  // dx = W1^T dz = (-3.6, 0).
  backward_sgd(net, f, 0, 5.0, 0.1);
  auto near = [](const std::vector<double>& a, const std::vector<double>& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12) << i;
  };
  near(net.param(kOutputW).data, {1.18, 2.27, -1.0, 0.0, 0.5, -0.5});
  near(net.param(kOutputB).data, {0.28, 0.2, 0.3});
  near(net.param(kHiddenW).data, {1.18, -0.64, 0.86, 1.22});
  near(net.param(kHiddenB).data, {2.18, 0.36});
  near({net.param(kWordEmb).row(2), net.param(kWordEmb).row(2) + 2}, {1.36, 2.0});
  near({net.param(kWordEmb).row(0), net.param(kWordEmb).row(0) + 2}, {0.0, 0.0});
}

TEST(Forward, ZeroWeightsGiveBias) {
  auto net = small_net();
  for (int p = 0; p < kParamCount; ++p)
    for (auto& v : net.param(p).data) v = 0;
  for (int a = 0; a < net.output_dim(); ++a) net.param(kOutputB).data[static_cast<std::size_t>(a)] = 0.25 * a;
  Rng rng(1);
  std::vector<double> x(static_cast<std::size_t>(net.input_dim()));
  for (auto& v : x) v = rng.uniform(-1, 1);
  const auto q = net.forward(x);
  for (int a = 0; a < net.output_dim(); ++a) EXPECT_EQ(q[static_cast<std::size_t>(a)], 0.25 * a);
}

TEST(Forward, DeterministicWithoutDropoutAndArityChecked) {
  const auto net = small_net();
  const auto f = net.featurize(State::for_sentence(gwb()), net.encode(gwb()));
  EXPECT_EQ(net.forward(f.x), net.forward(f.x));
  EXPECT_EQ(net.output_dim(), 2 * kLabels.size() + 1);
  EXPECT_THROW(net.forward(std::vector<double>(3, 0.0)), contract_violation);
}

TEST(Forward, DropoutStatistics) {
  FeatureConfig c = small_config();
  c.hidden_dim = 2000;
  Network<double> net(Head::q, c, kLabels, build_vocabulary({gwb()}));
  net.initialize(3, 0.5);
  const auto x = net.featurize(State::for_sentence(gwb()), net.encode(gwb())).x;
  ForwardCache<double> plain;
  net.forward(x, plain);
  Rng rng(5);
  ForwardCache<double> c1;
  net.forward(x, c1, true, &rng);
  int dropped = 0;
  for (std::size_t j = 0; j < c1.hidden_mask.size(); ++j) {
    const double m = c1.hidden_mask[j];
    ASSERT_TRUE(m == 0.0 || m == 2.0);
    dropped += m == 0.0;
    ASSERT_EQ(c1.hidden_out[j], c1.hidden[j] * m);
  }
  // Binomial(2000, 0.5): sd = sqrt(500).
  EXPECT_NEAR(dropped, 1000, 4 * std::sqrt(500.0));
  int in_dropped = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    in_dropped += c1.input_mask[i] == 0.0;
    ASSERT_EQ(c1.input[i], x[i] * c1.input_mask[i]);
  }
  const double n = static_cast<double>(x.size());
  EXPECT_NEAR(in_dropped, n / 2, 4 * std::sqrt(n / 4));

  // Inverted dropout keeps the expected input of the output layer.
  Network<double> linear = net;
  ForwardCache<double> c2;
  std::vector<double> mean(static_cast<std::size_t>(c.hidden_dim), 0.0);
  const int runs = 2000;
  for (int r = 0; r < runs; ++r) {
    linear.forward(x, c2, true, &rng);
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += c2.hidden_mask[j] * plain.hidden[j] / runs;
  }
  for (std::size_t j = 0; j < mean.size(); j += 97)
    EXPECT_NEAR(mean[j], plain.hidden[j], 5 * std::abs(plain.hidden[j]) / std::sqrt(runs) + 1e-12);
  EXPECT_THROW(net.forward(x, c2, true, nullptr), contract_violation);
}

TEST(Featurize, InitialStateUsesPadding) {
  const auto net = small_net();
  const auto enc = net.encode(gwb());
  const auto f = net.featurize(State::for_sentence(gwb()), enc);
  ASSERT_EQ(static_cast<int>(f.x.size()), net.input_dim());
  const int block = net.block_dim();
  const auto george = block_of(net, enc[0]);
  EXPECT_EQ(std::vector<double>(f.x.begin(), f.x.begin() + block), george);
  const auto pad = block_of(net, TokenCodes{});
  const int label_dim = net.config().label_dim;
  const auto& label_pad = net.param(kLabelEmb);
  const int pad_row = label_pad.rows - 1;
  int off = block + net.config().window * net.config().embed_dim;
  for (int k = 0; k < net.config().stack_depth; ++k) {
    EXPECT_EQ(std::vector<double>(f.x.begin() + off, f.x.begin() + off + block), pad);
    for (int d = 0; d < label_dim; ++d) EXPECT_EQ(f.x[static_cast<std::size_t>(off + block + d)], label_pad.row(pad_row)[d]);
    off += block + label_dim;
  }
  for (int k = 0; k < net.config().prev_labels; ++k)
    for (int d = 0; d < label_dim; ++d)
      EXPECT_EQ(f.x[static_cast<std::size_t>(off + k * label_dim + d)], label_pad.row(pad_row)[d]);
  EXPECT_NE(george, pad);
}

TEST(Featurize, BufferTopBlockHasCapsGazetteerAndChars) {
  const auto net = small_net();
  const auto enc = net.encode(gwb());
  EXPECT_EQ(enc[0].caps, static_cast<int>(CapsShape::init_cap));
  EXPECT_EQ(enc[0].gazetteers, 1u);
  EXPECT_EQ(enc[2].gazetteers, 0u);
  const auto b = block_of(net, enc[0]);
  const auto& fc = net.config();
  std::vector<double> expect;
  for (int d = 0; d < fc.embed_dim; ++d) expect.push_back(net.param(kWordEmb).row(net.vocabulary().id("george"))[d]);
  for (int d = 0; d < fc.caps_dim; ++d) expect.push_back(net.param(kCapsEmb).row(static_cast<int>(CapsShape::init_cap))[d]);
  for (int d = 0; d < fc.gaz_dim; ++d) expect.push_back(net.param(kGazEmb).row(1)[d]);
  for (int d = 0; d < fc.char_dim; ++d) {
    double sum = 0;
    for (int r : enc[0].chars) sum += net.param(kCharEmb).row(r)[d];
    expect.push_back(sum / static_cast<double>(enc[0].chars.size()));
  }
  ASSERT_EQ(b.size(), expect.size());
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(b[i], expect[i], 1e-15);
}

TEST(Featurize, TwoWordElementIsOneConvolution) {
  FeatureConfig c = tiny_config();
  c.stack_depth = 1;
  c.label_dim = 1;
  const Sentence s = make_sentence({"George", "Washington", "Bridge"});
  Network<double> net(Head::q, c, kLabels, build_vocabulary({s}));
  net.initialize(2, 1.0);
  const double* g = net.param(kWordEmb).row(2);
  const double* w = net.param(kWordEmb).row(3);
  const State st = run(State::for_sentence(s), {Action::shift(PER), Action::shift(PER), Action::reduce(PER)});
  const auto f = net.featurize(st, net.encode(s));
  const auto& cw = net.param(kConvW);
  const auto& cb = net.param(kConvB);
  for (int d = 0; d < 2; ++d) {
    const double expect = cb.data[static_cast<std::size_t>(d)] + cw.row(d)[0] * g[0] + cw.row(d)[1] * g[1] +
                          cw.row(d)[2] * w[0] + cw.row(d)[3] * w[1];
    EXPECT_NEAR(f.x[static_cast<std::size_t>(2 + d)], expect, 1e-14);
  }
  EXPECT_EQ(f.x[4], net.param(kLabelEmb).row(PER)[0]);
}

TEST(Featurize, ThreeWordElementTakesCoordinateMax) {
  FeatureConfig c = tiny_config();
  c.stack_depth = 1;
  c.label_dim = 1;
  const Sentence s = make_sentence({"a", "b", "c"});
  Network<double> net(Head::q, c, kLabels, build_vocabulary({s}));
  net.initialize(4, 1.0);
  const State st = run(State::for_sentence(s), {Action::shift(O), Action::shift(O), Action::shift(O),
                                               Action::reduce(PER), Action::reduce(FAC)});
  const auto f = net.featurize(st, net.encode(s));
  const auto& cw = net.param(kConvW);
  for (int d = 0; d < 2; ++d) {
    double best = -1e300;
    for (int p = 0; p < 2; ++p) {
      const double* l = net.param(kWordEmb).row(2 + p);
      const double* r = net.param(kWordEmb).row(3 + p);
      best = std::max(best, net.param(kConvB).data[static_cast<std::size_t>(d)] + cw.row(d)[0] * l[0] +
                                cw.row(d)[1] * l[1] + cw.row(d)[2] * r[0] + cw.row(d)[3] * r[1]);
    }
    EXPECT_NEAR(f.x[static_cast<std::size_t>(2 + d)], best, 1e-14);
  }
}

TEST(Featurize, SingleWordElementBypassesConvolution) {
  const auto net = small_net();
  const auto enc = net.encode(gwb());
  const State st = run(State::for_sentence(gwb()), {Action::shift(PER)});
  const auto f = net.featurize(st, enc);
  EXPECT_TRUE(f.convs.empty());
  const int off = net.block_dim() + net.config().window * net.config().embed_dim;
  EXPECT_EQ(std::vector<double>(f.x.begin() + off, f.x.begin() + off + net.block_dim()), block_of(net, enc[0]));
}

TEST(Featurize, IsDeterministic) {
  const auto net = small_net();
  const auto enc = net.encode(gwb());
  const State st = run(State::for_sentence(gwb()), {Action::shift(PER), Action::shift(PER), Action::reduce(PER)});
  EXPECT_EQ(net.featurize(st, enc).x, net.featurize(st, enc).x);
}

TEST(GradientCheck, RandomSmallNetworks) {
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = random_gradient_check(seed);
    EXPECT_GT(r.checked, 200u);
    worst = std::max(worst, r.max_relative_error);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(GradientCheck, ComposedStackState) {
  auto net = small_net(7);
  const auto enc = net.encode(gwb());
  const State st = run(State::for_sentence(gwb()), {Action::shift(PER), Action::shift(PER), Action::reduce(PER),
                                                   Action::shift(O), Action::reduce(FAC), Action::shift(O)});
  const auto r = gradient_check(
      net, [&](const Network<double>& m) { return m.featurize(st, enc); }, action_id(Action::reduce(FAC), 3), 1.5,
      1e-4, 100000, 1, 1.0, 1e-6);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(GradientCheck, DoubledGradientGivesOneHalf) {
  auto net = small_net(9);
  const auto enc = net.encode(gwb());
  const State st = run(State::for_sentence(gwb()), {Action::shift(PER), Action::shift(PER)});
  const auto r = gradient_check(
      net, [&](const Network<double>& m) { return m.featurize(st, enc); }, 0, 2.0, 1e-4, 100000, 1, 2.0, 1e-6);
  // |2g - g| / max(|2g|, |g|) = 1/2.
  EXPECT_NEAR(r.max_relative_error, 0.5, 1e-4);
}

TEST(GradientCheck, PaddingRowsAreTrainable) {
  auto net = small_net(11);
  const auto enc = net.encode(gwb());
  const State st = State::for_sentence(gwb());
  const auto f = net.featurize(st, enc);
  ForwardCache<double> c;
  net.forward(f.x, c);
  Gradient<double> g(net);
  backward(net, f, c, td_output_grad(c, 0, 3.0), g);
  const int pad_label = net.param(kLabelEmb).rows - 1;
  auto row_norm = [&](int p, int row) {
    double s = 0;
    for (int k = 0; k < g[p].cols; ++k) s += std::abs(g[p].row(row)[k]);
    return s;
  };
  EXPECT_GT(row_norm(kLabelEmb, pad_label), 0.0);
  EXPECT_GT(row_norm(kWordEmb, Vocabulary::kPadding), 0.0);
  EXPECT_GT(row_norm(kCapsEmb, kCapsShapes), 0.0);
  const auto r = gradient_check(
      net, [&](const Network<double>& m) { return m.featurize(st, enc); }, 0, 3.0, 1e-4, 100000, 1, 1.0, 1e-6);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(Backward, UntouchedRowsAndOtherActionsGetNoGradient) {
  auto net = small_net(13);
  const auto enc = net.encode(gwb());
  const State st = run(State::for_sentence(gwb()), {Action::shift(PER)});
  const auto f = net.featurize(st, enc);
  ForwardCache<double> c;
  net.forward(f.x, c);
  Gradient<double> g(net);
  const int action = action_id(Action::shift(FAC), kLabels.size());
  const auto d = td_output_grad(c, action, 1.0);
  for (int a = 0; a < net.output_dim(); ++a) {
    if (a != action) {
      EXPECT_EQ(d[static_cast<std::size_t>(a)], 0.0);
    }
  }
  backward(net, f, c, d, g);
  for (int a = 0; a < net.output_dim(); ++a) {
    if (a == action) continue;
    EXPECT_EQ(g[kOutputB].data[static_cast<std::size_t>(a)], 0.0);
    for (int j = 0; j < net.config().hidden_dim; ++j) EXPECT_EQ(g[kOutputW].row(a)[j], 0.0);
  }
  // "today" is outside the window and not on the stack.
  const int today = net.vocabulary().id("today");
  for (int k = 0; k < g[kWordEmb].cols; ++k) EXPECT_EQ(g[kWordEmb].row(today)[k], 0.0);
  const auto& touched = g.touched(kWordEmb);
  EXPECT_EQ(std::count(touched.begin(), touched.end(), today), 0);
}

TEST(Backward, TargetEqualToQLeavesNetUnchanged) {
  auto net = small_net(15);
  const auto before = net;
  const auto f = net.featurize(State::for_sentence(gwb()), net.encode(gwb()));
  const double q = net.forward(f.x)[2];
  backward_sgd(net, f, 2, q, 0.5);
  EXPECT_TRUE(net == before);
}

TEST(Backward, BatchUpdateAveragesSampleGradients) {
  const auto base = small_net(17);
  const auto enc = base.encode(gwb());
  const State s1 = State::for_sentence(gwb());
  const State s2 = run(s1, {Action::shift(PER), Action::shift(PER), Action::reduce(PER)});
  auto grad_of = [&](const State& s, int action, double target) {
    Gradient<double> g(base);
    const auto f = base.featurize(s, enc);
    ForwardCache<double> c;
    base.forward(f.x, c);
    backward(base, f, c, td_output_grad(c, action, target), g);
    return g;
  };
  const auto g1 = grad_of(s1, 1, 2.0);
  const auto g2 = grad_of(s2, 4, -1.0);
  Gradient<double> both(base);
  for (const auto& [s, a, t] : {std::tuple{s1, 1, 2.0}, std::tuple{s2, 4, -1.0}}) {
    const auto f = base.featurize(s, enc);
    ForwardCache<double> c;
    base.forward(f.x, c);
    backward(base, f, c, td_output_grad(c, a, t), both);
  }
  EXPECT_EQ(both.samples(), 2);
  auto net = base;
  apply_sgd(net, both, 0.3);
  EXPECT_EQ(both.samples(), 0);
  for (int p = 0; p < kParamCount; ++p)
    for (std::size_t i = 0; i < net.param(p).size(); ++i) {
      const double expect = base.param(p).data[i] - 0.3 * (g1.value(p, i) + g2.value(p, i)) / 2;
      ASSERT_NEAR(net.param(p).data[i], expect, 1e-13) << p << " " << i;
    }
}

TEST(Target, CloneSyncAndIndependence) {
  auto net = small_net(19);
  auto target = clone_target(net);
  EXPECT_TRUE(target == net);
  const auto f = net.featurize(State::for_sentence(gwb()), net.encode(gwb()));
  const auto h0 = parameter_hash(target);
  for (int k = 0; k < 5; ++k) {
    backward_sgd(net, f, 0, 10.0, 0.01);
    EXPECT_EQ(parameter_hash(target), h0);
  }
  EXPECT_FALSE(target == net);
  EXPECT_NE(parameter_hash(net), h0);
  sync_target(net, target);
  EXPECT_TRUE(target == net);
  EXPECT_EQ(parameter_hash(target), parameter_hash(net));
  backward_sgd(net, f, 0, 10.0, 0.01);
  EXPECT_NE(parameter_hash(target), parameter_hash(net));
  EXPECT_NE(target.param(kHiddenW).data.data(), net.param(kHiddenW).data.data());
}

TEST(Persistence, RoundTripIsByteStable) {
  const auto net = small_net(21);
  const auto j = to_json(net);
  const auto back = network_from_json<double>(j);
  EXPECT_TRUE(back == net);
  EXPECT_EQ(to_json(back).dump(), j.dump());
  const auto reparsed = network_from_json<double>(nlohmann::json::parse(j.dump()));
  EXPECT_TRUE(reparsed == net);
  auto bad = j;
  bad["version"] = 99;
  EXPECT_THROW(network_from_json<double>(bad), config_error);
  const auto sl = small_net(1, Head::softmax);
  EXPECT_EQ(network_from_json<double>(to_json(sl)).head(), Head::softmax);
}

TEST(Tagger, SoftmaxHeadShapes) {
  const auto net = small_net(23, Head::softmax);
  EXPECT_EQ(net.output_dim(), kLabels.tag_count());
  const auto enc = net.encode(gwb());
  const std::vector<int> prev(5, 0);
  const auto f = net.tagger_features(enc, 2, prev);
  EXPECT_EQ(static_cast<int>(f.x.size()), net.input_dim());
  const auto p = softmax(net.forward(f.x));
  double sum = 0;
  for (double v : p) {
    EXPECT_GE(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_THROW(net.featurize(State::for_sentence(gwb()), enc), contract_violation);
}

TEST(Network, SinglePrecisionBuilds) {
  Network<float> net(Head::q, small_config(), kLabels, build_vocabulary({gwb()}));
  net.initialize(1);
  const auto q = net.forward(net.featurize(State::for_sentence(gwb()), net.encode(gwb())).x);
  EXPECT_EQ(static_cast<int>(q.size()), net.output_dim());
}

TEST(FeatureConfig, Validation) {
  FeatureConfig c;
  c.hidden_dim = 0;
  EXPECT_THROW(c.validate(), config_error);
  nlohmann::json j = {{"window", 2}, {"bogus", 1}};
  EXPECT_THROW(j.get<FeatureConfig>(), config_error);
  EXPECT_EQ(nlohmann::json(FeatureConfig{}).get<FeatureConfig>(), FeatureConfig{});
}
