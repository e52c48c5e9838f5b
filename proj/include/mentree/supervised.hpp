#ifndef MENTREE_SUPERVISED_HPP_
#define MENTREE_SUPERVISED_HPP_

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "mentree/corpus.hpp"
#include "mentree/error.hpp"
#include "mentree/eval.hpp"
#include "mentree/neural.hpp"
#include "mentree/random.hpp"

namespace mentree {

struct SupervisedConfig {
  int epochs = 15;
  double lr_start = 0.5;
  double lr_end = 0.001;
  int batch = 32;  // tokens per update
  bool dropout = true;
  double init_scale = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 1) throw config_error("epochs must be >= 1");
    if (batch < 1) throw config_error("batch must be >= 1");
    if (lr_start <= 0 || lr_end <= 0) throw config_error("learning rates must be positive");
  }
};

// Linear from lr_start (first epoch) to lr_end (last epoch).
inline double epoch_learning_rate(const SupervisedConfig& c, int epoch) {
  if (c.epochs == 1) return c.lr_start;
  return c.lr_start + (c.lr_end - c.lr_start) * static_cast<double>(epoch) / static_cast<double>(c.epochs - 1);
}

template <class Real>
double cross_entropy(const std::vector<Real>& probs, int gold) {
  return -std::log(std::max(static_cast<double>(probs[static_cast<std::size_t>(gold)]), 1e-300));
}

// Greedy left-to-right argmax over BIO tags with predicted history, then
// orphan-I repair.
template <class Real>
std::vector<int> decode_supervised(const Network<Real>& net, const Sentence& s, const EncodedSentence& enc) {
  detail::require(net.head() == Head::softmax, "decode_supervised needs a softmax network");
  std::vector<int> tags(static_cast<std::size_t>(s.length()), 0);
  for (int i = 0; i < s.length(); ++i) {
    const auto out = net.forward(net.tagger_features(enc, i, tags).x);
    tags[static_cast<std::size_t>(i)] =
        static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
  }
  return encode_bio(decode_bio(tags, net.labels()), s.length(), net.labels());
}

template <class Real>
std::vector<int> decode_supervised(const Network<Real>& net, const Sentence& s) {
  return decode_supervised(net, s, net.encode(s));
}

template <class Real>
ScoreReport evaluate_sl(const Network<Real>& net, const std::vector<Sentence>& data,
                        const std::vector<EncodedSentence>* encoded = nullptr) {
  std::vector<std::vector<int>> pred, gold;
  for (std::size_t i = 0; i < data.size(); ++i) {
    pred.push_back(encoded ? decode_supervised(net, data[i], (*encoded)[i]) : decode_supervised(net, data[i]));
    gold.push_back(gold_tags(data[i], net.labels()));
  }
  return score(pred, gold, net.labels());
}

template <class Real>
struct SupervisedResult {
  Network<Real> best;
  double best_dev_f1 = -1;
  int best_epoch = -1;
  std::vector<nlohmann::json> metrics;
};

// Word-level log-likelihood with teacher forcing: previous gold tags feed the
// history features. Tokens are visited in a per-epoch shuffled order and
// gradients are averaged over `batch` tokens per SGD update.
template <class Real>
SupervisedResult<Real> train_supervised(const std::vector<Sentence>& train_data, const std::vector<Sentence>& dev,
                                        Network<Real> net, const SupervisedConfig& cfg,
                                        const std::function<void(const nlohmann::json&)>& on_metrics = {},
                                        bool keep_parameters = false) {
  cfg.validate();
  detail::require(net.head() == Head::softmax, "train_supervised needs a softmax network");
  Rng rng(cfg.seed);
  const std::uint64_t init_seed = rng.derive();
  if (!keep_parameters) net.initialize(init_seed, cfg.init_scale);
  const LabelSet& labels = net.labels();

  std::vector<EncodedSentence> enc;
  std::vector<std::vector<int>> gold;
  std::vector<std::pair<int, int>> positions;
  for (std::size_t i = 0; i < train_data.size(); ++i) {
    enc.push_back(net.encode(train_data[i]));
    gold.push_back(gold_tags(train_data[i], labels));
    for (int t = 0; t < train_data[i].length(); ++t) positions.emplace_back(static_cast<int>(i), t);
  }
  if (positions.empty()) throw config_error("training corpus has no tokens");
  std::vector<EncodedSentence> enc_dev;
  for (const auto& s : dev) enc_dev.push_back(net.encode(s));

  SupervisedResult<Real> result{net, -1.0, -1, {}};
  Gradient<Real> grad(net);
  ForwardCache<Real> cache;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = epoch_learning_rate(cfg, epoch);
    for (std::size_t i = positions.size(); i > 1; --i) std::swap(positions[i - 1], positions[rng.below(i)]);
    double loss = 0;
    for (std::size_t k = 0; k < positions.size(); ++k) {
      const auto [si, t] = positions[k];
      const auto f = net.tagger_features(enc[static_cast<std::size_t>(si)], t, gold[static_cast<std::size_t>(si)]);
      net.forward(f.x, cache, cfg.dropout, &rng);
      const auto p = softmax(cache.output);
      const int g = gold[static_cast<std::size_t>(si)][static_cast<std::size_t>(t)];
      loss += cross_entropy(p, g);
      std::vector<Real> d(p);
      d[static_cast<std::size_t>(g)] -= Real(1);
      backward(net, f, cache, d, grad);
      if (grad.samples() == cfg.batch || k + 1 == positions.size()) apply_sgd(net, grad, lr);
    }
    nlohmann::json m;
    m["epoch"] = epoch + 1;
    m["learning_rate"] = lr;
    m["train_loss"] = loss / static_cast<double>(positions.size());
    if (!dev.empty()) {
      const auto report = evaluate_sl(net, dev, &enc_dev);
      m["dev_precision"] = report.precision();
      m["dev_recall"] = report.recall();
      m["dev_f1"] = report.f1();
      if (report.f1() > result.best_dev_f1) {
        result.best_dev_f1 = report.f1();
        result.best_epoch = epoch + 1;
        result.best = net;
      }
    }
    result.metrics.push_back(m);
    if (on_metrics) on_metrics(m);
  }
  if (dev.empty() || result.best_dev_f1 < 0) result.best = net;
  return result;
}

inline nlohmann::json to_json(const SupervisedConfig& c) {
  return {{"epochs", c.epochs}, {"lr_start", c.lr_start}, {"lr_end", c.lr_end},      {"batch", c.batch},
          {"dropout", c.dropout}, {"init_scale", c.init_scale}, {"seed", c.seed}};
}

inline void update_from_json(SupervisedConfig& c, const nlohmann::json& j) {
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = *it;
      if (k == "epochs") c.epochs = v.get<int>();
      else if (k == "lr_start") c.lr_start = v.get<double>();
      else if (k == "lr_end") c.lr_end = v.get<double>();
      else if (k == "batch") c.batch = v.get<int>();
      else if (k == "dropout") c.dropout = v.get<bool>();
      else if (k == "init_scale") c.init_scale = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw config_error("unknown supervised key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("supervised config: ") + e.what());
  }
  c.validate();
}

}  // namespace mentree

#endif  // MENTREE_SUPERVISED_HPP_
