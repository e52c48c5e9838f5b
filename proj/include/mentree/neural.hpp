#ifndef MENTREE_NEURAL_HPP_
#define MENTREE_NEURAL_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "mentree/corpus.hpp"
#include "mentree/error.hpp"
#include "mentree/random.hpp"
#include "mentree/transition.hpp"

namespace mentree {

struct FeatureConfig {
  int window = 4;       // buffer words after the top (Q) / each side (tagger)
  int stack_depth = 4;  // stack elements featurized, top first
  int prev_labels = 2;
  int embed_dim = 24;
  int caps_dim = 4;
  int gaz_dim = 4;
  int char_dim = 12;
  int label_dim = 8;
  int hidden_dim = 2000;
  bool use_gazetteers = true;
  bool use_caps = true;
  bool use_chars = true;

  int block_dim() const {
    return embed_dim + (use_caps ? caps_dim : 0) + (use_gazetteers ? gaz_dim : 0) +
           (use_chars ? char_dim : 0);
  }

  void validate() const {
    for (int d : {embed_dim, caps_dim, gaz_dim, char_dim, label_dim, hidden_dim})
      if (d < 1) throw config_error("feature dimensions must be >= 1");
    if (window < 0 || stack_depth < 0 || prev_labels < 0)
      throw config_error("feature counts must be >= 0");
  }

  bool operator==(const FeatureConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const FeatureConfig& c) {
  j = {{"window", c.window},           {"stack_depth", c.stack_depth},
       {"prev_labels", c.prev_labels}, {"embed_dim", c.embed_dim},
       {"caps_dim", c.caps_dim},       {"gaz_dim", c.gaz_dim},
       {"char_dim", c.char_dim},       {"label_dim", c.label_dim},
       {"hidden_dim", c.hidden_dim},   {"use_gazetteers", c.use_gazetteers},
       {"use_caps", c.use_caps},       {"use_chars", c.use_chars}};
}

inline void from_json(const nlohmann::json& j, FeatureConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "window") c.window = it->get<int>();
    else if (k == "stack_depth") c.stack_depth = it->get<int>();
    else if (k == "prev_labels") c.prev_labels = it->get<int>();
    else if (k == "embed_dim") c.embed_dim = it->get<int>();
    else if (k == "caps_dim") c.caps_dim = it->get<int>();
    else if (k == "gaz_dim") c.gaz_dim = it->get<int>();
    else if (k == "char_dim") c.char_dim = it->get<int>();
    else if (k == "label_dim") c.label_dim = it->get<int>();
    else if (k == "hidden_dim") c.hidden_dim = it->get<int>();
    else if (k == "use_gazetteers") c.use_gazetteers = it->get<bool>();
    else if (k == "use_caps") c.use_caps = it->get<bool>();
    else if (k == "use_chars") c.use_chars = it->get<bool>();
    else throw config_error("unknown feature key '" + k + "'");
  }
  c.validate();
}

// Q: relu hidden, one linear output per action. Softmax: sigmoid hidden,
// distribution over BIO tags.
enum class Head { q, softmax };

inline std::string head_name(Head h) { return h == Head::q ? "q" : "softmax"; }

// ---------------------------------------------------------------------------
// Encoded tokens
// ---------------------------------------------------------------------------

struct TokenCodes {
  int word = Vocabulary::kPadding;
  int caps = kCapsShapes;  // kCapsShapes is the padding row
  std::uint32_t gazetteers = 0;
  std::vector<int> chars;
  bool padding = true;
};

using EncodedSentence = std::vector<TokenCodes>;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <class Real>
struct Tensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<Real> data;

  Real* row(int r) { return data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols); }
  const Real* row(int r) const {
    return data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
  }
  std::size_t size() const { return data.size(); }
};

enum ParamIndex : int {
  kWordEmb = 0,
  kCapsEmb,
  kGazEmb,
  kCharEmb,
  kLabelEmb,
  kConvW,
  kConvB,
  kHiddenW,
  kHiddenB,
  kOutputW,
  kOutputB,
  kParamCount
};

inline bool is_embedding(int p) { return p <= kLabelEmb; }

// x[offset .. offset+cols) += scale * table[row]
struct RowRef {
  int table;
  int row;
  int offset;
  double scale;
};

// A multi-word stack element composed by 2-gram convolution and max pooling.
template <class Real>
struct ConvSlot {
  int offset = 0;
  std::vector<std::vector<RowRef>> word_refs;  // per word, offsets within a block
  std::vector<std::vector<Real>> blocks;       // per word, block_dim values
  std::vector<int> argmax;                     // per output coordinate: 2-gram index
};

template <class Real>
struct Features {
  std::vector<Real> x;
  std::vector<RowRef> refs;
  std::vector<ConvSlot<Real>> convs;
};

template <class Real>
struct ForwardCache {
  std::vector<Real> input;   // after dropout
  std::vector<Real> input_mask;
  std::vector<Real> hidden_pre;
  std::vector<Real> hidden;  // after activation, before dropout
  std::vector<Real> hidden_out;
  std::vector<Real> hidden_mask;
  std::vector<Real> output;  // Q-values or logits
};

namespace detail {

template <class Real>
inline Real dot(const Real* a, const Real* b, int n) {
  Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

template <class Real>
inline void axpy(Real alpha, const Real* x, Real* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

// Feedforward network shared by the Q-function and the supervised tagger:
// embedding lookups and 2-gram convolution build the input vector, followed
// by one hidden layer and a linear output layer. Parameters are plain values;
// copying the object deep-copies them.
template <class Real = double>
class Network {
 public:
  Network() = default;

  Network(Head head, FeatureConfig config, LabelSet labels, Vocabulary vocab,
          std::vector<Gazetteer> gazetteers = {})
      : head_(head),
        config_(config),
        labels_(std::move(labels)),
        vocab_(std::move(vocab)),
        gazetteers_(std::move(gazetteers)) {
    config_.validate();
    if (gazetteers_.size() > kMaxGazetteers) throw config_error("too many gazetteers");
    allocate();
  }

  Head head() const { return head_; }
  const FeatureConfig& config() const { return config_; }
  const LabelSet& labels() const { return labels_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<Gazetteer>& gazetteers() const { return gazetteers_; }
  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  int block_dim() const { return config_.block_dim(); }

  std::vector<Tensor<Real>>& params() { return params_; }
  const std::vector<Tensor<Real>>& params() const { return params_; }
  Tensor<Real>& param(int i) { return params_[static_cast<std::size_t>(i)]; }
  const Tensor<Real>& param(int i) const { return params_[static_cast<std::size_t>(i)]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : params_) n += t.size();
    return n;
  }

  // Matrices and feature embeddings ~ U(-scale, scale); biases zero.
  void initialize(std::uint64_t seed, double scale = 0.05) {
    Rng rng(seed);
    for (int p = 0; p < kParamCount; ++p) {
      const bool bias = p == kConvB || p == kHiddenB || p == kOutputB;
      for (auto& v : param(p).data) v = bias ? Real(0) : static_cast<Real>(rng.uniform(-scale, scale));
    }
  }

  // Copies rows of a pretrained table into the word embeddings.
  template <class Table>
  int load_pretrained(const Table& table) {
    if (table.dim() != config_.embed_dim) throw config_error("embedding dimension mismatch");
    int hits = 0;
    auto& w = param(kWordEmb);
    for (std::size_t i = 0; i < vocab_.words().size(); ++i) {
      const auto& word = vocab_.words()[i];
      if (!table.contains(word)) continue;
      const auto& v = table[word];
      for (int k = 0; k < config_.embed_dim; ++k)
        w.row(static_cast<int>(i) + 2)[k] = static_cast<Real>(v[static_cast<std::size_t>(k)]);
      ++hits;
    }
    return hits;
  }

  // ------------------------------------------------------------------------
  // Token encoding
  // ------------------------------------------------------------------------

  EncodedSentence encode(const Sentence& s) const {
    Sentence annotated = gazetteers_.empty() ? s : annotate_gazetteers(s, gazetteers_);
    EncodedSentence out;
    out.reserve(annotated.tokens.size());
    for (const auto& t : annotated.tokens) {
      TokenCodes c;
      c.word = vocab_.id(t.lowercased);
      c.caps = static_cast<int>(t.caps);
      c.gazetteers = t.gazetteer_flags;
      c.chars = t.char_ngrams;
      c.padding = false;
      out.push_back(std::move(c));
    }
    return out;
  }

  // Row references of a token's word block, offsets relative to `base`.
  void block_refs(const TokenCodes& c, int base, std::vector<RowRef>& out) const {
    int off = base;
    out.push_back({kWordEmb, c.word, off, 1.0});
    off += config_.embed_dim;
    if (config_.use_caps) {
      out.push_back({kCapsEmb, c.caps, off, 1.0});
      off += config_.caps_dim;
    }
    if (config_.use_gazetteers) {
      const int pad_row = static_cast<int>(gazetteers_.size()) + 1;
      if (c.padding) {
        out.push_back({kGazEmb, pad_row, off, 1.0});
      } else if (c.gazetteers == 0) {
        out.push_back({kGazEmb, 0, off, 1.0});
      } else {
        for (std::size_t g = 0; g < gazetteers_.size(); ++g)
          if (c.gazetteers & (1u << g)) out.push_back({kGazEmb, static_cast<int>(g) + 1, off, 1.0});
      }
      off += config_.gaz_dim;
    }
    if (config_.use_chars) {
      if (c.padding || c.chars.empty()) {
        out.push_back({kCharEmb, kCharHashSpace, off, 1.0});
      } else {
        const double scale = 1.0 / static_cast<double>(c.chars.size());
        for (int row : c.chars) out.push_back({kCharEmb, row, off, scale});
      }
    }
  }

  void accumulate(const std::vector<RowRef>& refs, Real* x) const {
    for (const auto& r : refs) {
      const auto& t = param(r.table);
      const Real* src = t.row(r.row);
      detail::axpy(static_cast<Real>(r.scale), src, x + r.offset, t.cols);
    }
  }

  // ------------------------------------------------------------------------
  // Q-function features
  // ------------------------------------------------------------------------

  // [buffer-top word block] [next `window` word embeddings]
  // [top `stack_depth` elements: composed words + label] [last `prev_labels`
  // action labels]. Absent slots use the padding rows.
  Features<Real> featurize(const State& s, const EncodedSentence& enc) const {
    detail::require(head_ == Head::q, "featurize(State) needs a Q network");
    Features<Real> f;
    f.x.assign(static_cast<std::size_t>(input_dim_), Real(0));
    const int n = static_cast<int>(enc.size());
    const int block = block_dim();
    const int pad_label = label_rows_ - 1;
    static const TokenCodes kPad{};
    auto token = [&](int i) -> const TokenCodes& {
      return i >= 0 && i < n ? enc[static_cast<std::size_t>(i)] : kPad;
    };
    int off = 0;
    block_refs(token(s.cursor()), off, f.refs);
    off += block;
    for (int k = 1; k <= config_.window; ++k) {
      f.refs.push_back({kWordEmb, token(s.cursor() + k).word, off, 1.0});
      off += config_.embed_dim;
    }
    const auto& stack = s.stack();
    for (int k = 0; k < config_.stack_depth; ++k) {
      const int idx = static_cast<int>(stack.size()) - 1 - k;
      if (idx < 0) {
        block_refs(kPad, off, f.refs);
        f.refs.push_back({kLabelEmb, pad_label, off + block, 1.0});
      } else {
        const TreeNode& node = *stack[static_cast<std::size_t>(idx)];
        if (node.length() == 1) {
          block_refs(token(node.start), off, f.refs);
        } else {
          ConvSlot<Real> slot;
          slot.offset = off;
          for (int i = node.start; i < node.end; ++i) {
            std::vector<RowRef> refs;
            block_refs(token(i), 0, refs);
            std::vector<Real> values(static_cast<std::size_t>(block), Real(0));
            accumulate(refs, values.data());
            slot.word_refs.push_back(std::move(refs));
            slot.blocks.push_back(std::move(values));
          }
          f.convs.push_back(std::move(slot));
        }
        f.refs.push_back({kLabelEmb, node.label, off + block, 1.0});
      }
      off += block + config_.label_dim;
    }
    const auto& hist = s.action_labels();
    for (int k = 0; k < config_.prev_labels; ++k) {
      const int idx = static_cast<int>(hist.size()) - 1 - k;
      f.refs.push_back({kLabelEmb, idx >= 0 ? hist[static_cast<std::size_t>(idx)] : pad_label, off, 1.0});
      off += config_.label_dim;
    }
    accumulate(f.refs, f.x.data());
    for (auto& slot : f.convs) compose(slot, f.x.data() + slot.offset);
    return f;
  }

  // Coordinate-wise max over positions of the 2-gram convolution.
  void compose(ConvSlot<Real>& slot, Real* out) const {
    const int block = block_dim();
    const auto& w = param(kConvW);
    const auto& b = param(kConvB);
    const int grams = static_cast<int>(slot.blocks.size()) - 1;
    slot.argmax.assign(static_cast<std::size_t>(block), 0);
    for (int d = 0; d < block; ++d) {
      const Real* wd = w.row(d);
      Real best = -std::numeric_limits<Real>::infinity();
      for (int p = 0; p < grams; ++p) {
        const Real v = b.data[static_cast<std::size_t>(d)] +
                       detail::dot(wd, slot.blocks[static_cast<std::size_t>(p)].data(), block) +
                       detail::dot(wd + block, slot.blocks[static_cast<std::size_t>(p) + 1].data(), block);
        if (v > best) {
          best = v;
          slot.argmax[static_cast<std::size_t>(d)] = p;
        }
      }
      out[d] = best;
    }
  }

  // ------------------------------------------------------------------------
  // Tagger features
  // ------------------------------------------------------------------------

  // [target word block] [window words left, nearest first] [window words
  // right] [previous `prev_labels` tags].
  Features<Real> tagger_features(const EncodedSentence& enc, int position,
                                 const std::vector<int>& previous_tags) const {
    detail::require(head_ == Head::softmax, "tagger_features needs a softmax network");
    Features<Real> f;
    f.x.assign(static_cast<std::size_t>(input_dim_), Real(0));
    const int n = static_cast<int>(enc.size());
    static const TokenCodes kPad{};
    auto token = [&](int i) -> const TokenCodes& {
      return i >= 0 && i < n ? enc[static_cast<std::size_t>(i)] : kPad;
    };
    int off = 0;
    block_refs(token(position), off, f.refs);
    off += block_dim();
    for (int k = 1; k <= config_.window; ++k) {
      f.refs.push_back({kWordEmb, token(position - k).word, off, 1.0});
      off += config_.embed_dim;
    }
    for (int k = 1; k <= config_.window; ++k) {
      f.refs.push_back({kWordEmb, token(position + k).word, off, 1.0});
      off += config_.embed_dim;
    }
    const int pad_label = label_rows_ - 1;
    for (int k = 1; k <= config_.prev_labels; ++k) {
      const int idx = position - k;
      f.refs.push_back(
          {kLabelEmb, idx >= 0 ? previous_tags[static_cast<std::size_t>(idx)] : pad_label, off, 1.0});
      off += config_.label_dim;
    }
    accumulate(f.refs, f.x.data());
    return f;
  }

  // ------------------------------------------------------------------------
  // Forward
  // ------------------------------------------------------------------------

  static constexpr double kKeep = 0.5;

  // hidden = act(W1 x + b1); out = W2 hidden + b2. With dropout, inverted
  // dropout (keep 0.5) is applied to x and to hidden.
  void forward(const std::vector<Real>& x, ForwardCache<Real>& c, bool dropout = false,
               Rng* rng = nullptr) const {
    detail::require(static_cast<int>(x.size()) == input_dim_, "input arity mismatch");
    detail::require(!dropout || rng, "dropout needs a generator");
    const int hd = config_.hidden_dim;
    c.input = x;
    c.input_mask.clear();
    c.hidden_mask.clear();
    const Real inv_keep = static_cast<Real>(1.0 / kKeep);
    if (dropout) {
      c.input_mask.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        c.input_mask[i] = rng->bernoulli(kKeep) ? inv_keep : Real(0);
        c.input[i] *= c.input_mask[i];
      }
    }
    const auto& w1 = param(kHiddenW);
    const auto& b1 = param(kHiddenB);
    c.hidden_pre.resize(static_cast<std::size_t>(hd));
    c.hidden.resize(static_cast<std::size_t>(hd));
    for (int j = 0; j < hd; ++j) {
      const Real z = b1.data[static_cast<std::size_t>(j)] + detail::dot(w1.row(j), c.input.data(), input_dim_);
      c.hidden_pre[static_cast<std::size_t>(j)] = z;
      c.hidden[static_cast<std::size_t>(j)] = activate(z);
    }
    c.hidden_out = c.hidden;
    if (dropout) {
      c.hidden_mask.resize(static_cast<std::size_t>(hd));
      for (int j = 0; j < hd; ++j) {
        c.hidden_mask[static_cast<std::size_t>(j)] = rng->bernoulli(kKeep) ? inv_keep : Real(0);
        c.hidden_out[static_cast<std::size_t>(j)] *= c.hidden_mask[static_cast<std::size_t>(j)];
      }
    }
    const auto& w2 = param(kOutputW);
    const auto& b2 = param(kOutputB);
    c.output.resize(static_cast<std::size_t>(output_dim_));
    for (int a = 0; a < output_dim_; ++a)
      c.output[static_cast<std::size_t>(a)] =
          b2.data[static_cast<std::size_t>(a)] + detail::dot(w2.row(a), c.hidden_out.data(), hd);
  }

  std::vector<Real> forward(const std::vector<Real>& x) const {
    ForwardCache<Real> c;
    forward(x, c);
    return c.output;
  }

  Real activate(Real z) const {
    if (head_ == Head::q) return z > 0 ? z : Real(0);
    return Real(1) / (Real(1) + std::exp(-z));
  }
  Real activate_grad(Real z, Real a) const {
    if (head_ == Head::q) return z > 0 ? Real(1) : Real(0);
    return a * (Real(1) - a);
  }

  bool operator==(const Network& o) const {
    if (head_ != o.head_ || !(config_ == o.config_) || !(labels_ == o.labels_) ||
        !(vocab_ == o.vocab_) || gazetteers_ != o.gazetteers_ || params_.size() != o.params_.size())
      return false;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].data != o.params_[i].data) return false;
    return true;
  }

 private:
  void allocate() {
    const int block = block_dim();
    const int nl = labels_.size();
    label_rows_ = (head_ == Head::q ? nl : labels_.tag_count()) + 1;
    if (head_ == Head::q) {
      input_dim_ = block + config_.window * config_.embed_dim +
                   config_.stack_depth * (block + config_.label_dim) +
                   config_.prev_labels * config_.label_dim;
      output_dim_ = action_count(nl);
    } else {
      input_dim_ = block + 2 * config_.window * config_.embed_dim + config_.prev_labels * config_.label_dim;
      output_dim_ = labels_.tag_count();
    }
    auto make = [](std::string name, int rows, int cols) {
      return Tensor<Real>{std::move(name), rows, cols,
                          std::vector<Real>(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), Real(0))};
    };
    params_.clear();
    params_.push_back(make("word_embeddings", vocab_.size(), config_.embed_dim));
    params_.push_back(make("caps_embeddings", kCapsShapes + 1, config_.caps_dim));
    params_.push_back(make("gazetteer_embeddings", static_cast<int>(gazetteers_.size()) + 2, config_.gaz_dim));
    params_.push_back(make("char_embeddings", kCharHashSpace + 1, config_.char_dim));
    params_.push_back(make("label_embeddings", label_rows_, config_.label_dim));
    params_.push_back(make("conv_weights", block, 2 * block));
    params_.push_back(make("conv_bias", 1, block));
    params_.push_back(make("hidden_weights", config_.hidden_dim, input_dim_));
    params_.push_back(make("hidden_bias", 1, config_.hidden_dim));
    params_.push_back(make("output_weights", output_dim_, config_.hidden_dim));
    params_.push_back(make("output_bias", 1, output_dim_));
  }

  Head head_ = Head::q;
  FeatureConfig config_;
  LabelSet labels_;
  Vocabulary vocab_;
  std::vector<Gazetteer> gazetteers_;
  std::vector<Tensor<Real>> params_;
  int input_dim_ = 0;
  int output_dim_ = 0;
  int label_rows_ = 0;
};

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

// Accumulated gradient with the same shapes as the network. Embedding tables
// track touched rows so zeroing and updates stay sparse.
template <class Real = double>
class Gradient {
 public:
  explicit Gradient(const Network<Real>& net) {
    for (const auto& t : net.params())
      grads_.push_back(Tensor<Real>{t.name, t.rows, t.cols, std::vector<Real>(t.size(), Real(0))});
    touched_.resize(grads_.size());
    marks_.resize(grads_.size());
    for (std::size_t p = 0; p < grads_.size(); ++p)
      if (is_embedding(static_cast<int>(p))) marks_[p].assign(static_cast<std::size_t>(grads_[p].rows), 0);
  }

  Tensor<Real>& operator[](int p) { return grads_[static_cast<std::size_t>(p)]; }
  const Tensor<Real>& operator[](int p) const { return grads_[static_cast<std::size_t>(p)]; }
  int samples() const { return samples_; }
  void add_sample() { ++samples_; }

  Real* touch(int p, int row) {
    auto& m = marks_[static_cast<std::size_t>(p)];
    if (!m[static_cast<std::size_t>(row)]) {
      m[static_cast<std::size_t>(row)] = 1;
      touched_[static_cast<std::size_t>(p)].push_back(row);
    }
    return grads_[static_cast<std::size_t>(p)].row(row);
  }

  const std::vector<int>& touched(int p) const { return touched_[static_cast<std::size_t>(p)]; }

  void clear() {
    for (std::size_t p = 0; p < grads_.size(); ++p) {
      if (is_embedding(static_cast<int>(p))) {
        for (int r : touched_[p]) {
          std::fill_n(grads_[p].row(r), grads_[p].cols, Real(0));
          marks_[p][static_cast<std::size_t>(r)] = 0;
        }
        touched_[p].clear();
      } else {
        std::fill(grads_[p].data.begin(), grads_[p].data.end(), Real(0));
      }
    }
    samples_ = 0;
  }

  // Flat value of parameter `flat` of tensor p (dense view).
  Real value(int p, std::size_t flat) const { return grads_[static_cast<std::size_t>(p)].data[flat]; }

 private:
  std::vector<Tensor<Real>> grads_;
  std::vector<std::vector<int>> touched_;
  std::vector<std::vector<char>> marks_;
  int samples_ = 0;
};

// Back-propagates dL/d(output) through the cached forward pass and the
// feature provenance, adding into `g`.
template <class Real>
void backward(const Network<Real>& net, const Features<Real>& f, const ForwardCache<Real>& c,
              const std::vector<Real>& d_output, Gradient<Real>& g) {
  const int hd = net.config().hidden_dim;
  const int in = net.input_dim();
  const auto& w2 = net.param(kOutputW);
  std::vector<Real> d_hidden(static_cast<std::size_t>(hd), Real(0));
  for (int a = 0; a < net.output_dim(); ++a) {
    const Real d = d_output[static_cast<std::size_t>(a)];
    if (d == Real(0)) continue;
    g[kOutputB].data[static_cast<std::size_t>(a)] += d;
    detail::axpy(d, c.hidden_out.data(), g[kOutputW].row(a), hd);
    detail::axpy(d, w2.row(a), d_hidden.data(), hd);
  }
  const auto& w1 = net.param(kHiddenW);
  std::vector<Real> d_input(static_cast<std::size_t>(in), Real(0));
  for (int j = 0; j < hd; ++j) {
    Real d = d_hidden[static_cast<std::size_t>(j)];
    if (!c.hidden_mask.empty()) d *= c.hidden_mask[static_cast<std::size_t>(j)];
    d *= net.activate_grad(c.hidden_pre[static_cast<std::size_t>(j)], c.hidden[static_cast<std::size_t>(j)]);
    if (d == Real(0)) continue;
    g[kHiddenB].data[static_cast<std::size_t>(j)] += d;
    detail::axpy(d, c.input.data(), g[kHiddenW].row(j), in);
    detail::axpy(d, w1.row(j), d_input.data(), in);
  }
  if (!c.input_mask.empty())
    for (int i = 0; i < in; ++i) d_input[static_cast<std::size_t>(i)] *= c.input_mask[static_cast<std::size_t>(i)];

  auto scatter = [&](const std::vector<RowRef>& refs, const Real* d, int base) {
    for (const auto& r : refs) {
      const int cols = net.param(r.table).cols;
      detail::axpy(static_cast<Real>(r.scale), d + r.offset - base, g.touch(r.table, r.row), cols);
    }
  };
  scatter(f.refs, d_input.data(), 0);

  const int block = net.block_dim();
  const auto& cw = net.param(kConvW);
  std::vector<std::vector<Real>> d_blocks;
  for (const auto& slot : f.convs) {
    d_blocks.assign(slot.blocks.size(), std::vector<Real>(static_cast<std::size_t>(block), Real(0)));
    for (int d = 0; d < block; ++d) {
      const Real dy = d_input[static_cast<std::size_t>(slot.offset + d)];
      if (dy == Real(0)) continue;
      const auto p = static_cast<std::size_t>(slot.argmax[static_cast<std::size_t>(d)]);
      g[kConvB].data[static_cast<std::size_t>(d)] += dy;
      Real* gw = g[kConvW].row(d);
      detail::axpy(dy, slot.blocks[p].data(), gw, block);
      detail::axpy(dy, slot.blocks[p + 1].data(), gw + block, block);
      detail::axpy(dy, cw.row(d), d_blocks[p].data(), block);
      detail::axpy(dy, cw.row(d) + block, d_blocks[p + 1].data(), block);
    }
    for (std::size_t w = 0; w < slot.blocks.size(); ++w) scatter(slot.word_refs[w], d_blocks[w].data(), 0);
  }
  g.add_sample();
}

// dL/dQ for L = (target - Q[action])^2; every other output gets 0.
template <class Real>
std::vector<Real> td_output_grad(const ForwardCache<Real>& c, int action, Real target) {
  std::vector<Real> d(c.output.size(), Real(0));
  d[static_cast<std::size_t>(action)] = Real(-2) * (target - c.output[static_cast<std::size_t>(action)]);
  return d;
}

template <class Real>
std::vector<Real> softmax(const std::vector<Real>& logits) {
  std::vector<Real> p(logits.size());
  const Real m = *std::max_element(logits.begin(), logits.end());
  Real z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - m));
  for (auto& v : p) v /= z;
  return p;
}

// theta -= lr * g / samples, then clears g. Embedding rows not touched by
// any sample are left as is.
template <class Real>
void apply_sgd(Network<Real>& net, Gradient<Real>& g, double lr) {
  if (g.samples() == 0) return;
  const Real step = static_cast<Real>(lr / g.samples());
  for (int p = 0; p < kParamCount; ++p) {
    auto& t = net.param(p);
    if (is_embedding(p)) {
      for (int r : g.touched(p)) detail::axpy(-step, g[p].row(r), t.row(r), t.cols);
    } else {
      detail::axpy(-step, g[p].data.data(), t.data.data(), static_cast<int>(t.size()));
    }
  }
  g.clear();
}

// One SGD step on (target - Q(x, action))^2.
template <class Real>
void backward_sgd(Network<Real>& net, const Features<Real>& f, int action, Real target, double lr) {
  ForwardCache<Real> c;
  net.forward(f.x, c);
  Gradient<Real> g(net);
  backward(net, f, c, td_output_grad(c, action, target), g);
  apply_sgd(net, g, lr);
}

// ---------------------------------------------------------------------------
// Target network
// ---------------------------------------------------------------------------

template <class Real>
Network<Real> clone_target(const Network<Real>& net) {
  return net;
}

template <class Real>
void sync_target(const Network<Real>& net, Network<Real>& target) {
  detail::require(target.params().size() == net.params().size(), "target shape mismatch");
  for (std::size_t i = 0; i < net.params().size(); ++i) target.params()[i].data = net.params()[i].data;
}

// FNV-1a over the raw parameter bytes.
template <class Real>
std::uint64_t parameter_hash(const Network<Real>& net) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : net.params()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data.data());
    for (std::size_t i = 0; i < t.size() * sizeof(Real); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradientCheckResult {
  double max_relative_error = 0;
  std::size_t checked = 0;
};

// Central differences of L = (target - Q(featurize(net))[action])^2 against
// the analytic gradient, over every parameter or a random subsample of
// `max_params` (plus every embedding row the features touch). Relative error
// is |a - n| / max(|a|, |n|, eps). `analytic_scale` multiplies the analytic
// gradient (for testing the checker itself).
template <class Real, class Featurize>
GradientCheckResult gradient_check(Network<Real>& net, Featurize&& featurize, int action, Real target,
                                   Real h, std::size_t max_params, std::uint64_t seed,
                                   Real analytic_scale = Real(1), Real eps = Real(1e-8)) {
  detail::require(h > 0, "step must be positive");
  auto loss = [&]() {
    Features<Real> f = featurize(net);
    ForwardCache<Real> c;
    net.forward(f.x, c);
    const Real diff = target - c.output[static_cast<std::size_t>(action)];
    return diff * diff;
  };
  Features<Real> f = featurize(net);
  ForwardCache<Real> c;
  net.forward(f.x, c);
  Gradient<Real> g(net);
  backward(net, f, c, td_output_grad(c, action, target), g);

  std::vector<std::pair<int, std::size_t>> coords;
  for (int p = 0; p < kParamCount; ++p) {
    const auto& t = net.param(p);
    if (is_embedding(p)) {
      for (int r : g.touched(p))
        for (int k = 0; k < t.cols; ++k)
          coords.push_back({p, static_cast<std::size_t>(r) * static_cast<std::size_t>(t.cols) + static_cast<std::size_t>(k)});
    } else {
      for (std::size_t i = 0; i < t.size(); ++i) coords.push_back({p, i});
    }
  }
  if (coords.size() > max_params) {
    Rng rng(seed);
    auto picked = rng.sample_without_replacement(coords.size(), max_params);
    std::sort(picked.begin(), picked.end());
    std::vector<std::pair<int, std::size_t>> sub;
    for (auto i : picked) sub.push_back(coords[i]);
    coords = std::move(sub);
  }
  GradientCheckResult result;
  for (const auto& [p, i] : coords) {
    Real& v = net.param(p).data[i];
    const Real saved = v;
    v = saved + h;
    const Real up = loss();
    v = saved - h;
    const Real down = loss();
    v = saved;
    const Real numeric = (up - down) / (2 * h);
    const Real analytic = analytic_scale * g.value(p, i);
    const Real denom = std::max({std::abs(analytic), std::abs(numeric), eps});
    result.max_relative_error =
        std::max(result.max_relative_error, static_cast<double>(std::abs(analytic - numeric) / denom));
    ++result.checked;
  }
  return result;
}

// Gradient check of a random small Q network (all parameters, 64-bit, h =
// 1e-4) at a random mid-episode state whose stack holds composed phrases.
inline GradientCheckResult random_gradient_check(std::uint64_t seed, double h = 1e-4) {
  Rng rng(seed);
  FeatureConfig fc;
  fc.window = 2;
  fc.stack_depth = 3;
  fc.prev_labels = 2;
  fc.embed_dim = 3;
  fc.caps_dim = 2;
  fc.gaz_dim = 2;
  fc.char_dim = 2;
  fc.label_dim = 2;
  fc.hidden_dim = 6;
  const LabelSet labels = LabelSet::with_outside({"PER", "ORG"});
  static const std::vector<std::string> lexicon{"George", "washington", "Bridge", "of", "the", "BANK", "x1"};
  std::vector<std::string> words;
  const int n = 5 + static_cast<int>(rng.below(4));
  for (int i = 0; i < n; ++i) words.push_back(lexicon[rng.below(lexicon.size())]);
  const Sentence sent = make_sentence(words, {});
  const std::vector<Gazetteer> gaz{{"g", {{"george", "washington"}, {"bridge"}}}};
  Network<double> net(Head::q, fc, labels, build_vocabulary({sent}), gaz);
  net.initialize(rng.derive(), 0.5);
  State st = State::for_sentence(sent);
  const int steps = 2 + static_cast<int>(rng.below(static_cast<std::size_t>(n)));
  for (int k = 0; k < steps && !st.terminal(); ++k) {
    auto legal = legal_actions(st, labels);
    std::vector<Action> reduces;
    for (const auto& a : legal)
      if (a.kind == ActionKind::reduce) reduces.push_back(a);
    const auto& pool = !reduces.empty() && rng.bernoulli(0.5) ? reduces : legal;
    st = apply(st, pool[rng.below(pool.size())], labels);
  }
  if (st.terminal()) st = State::for_sentence(sent);
  const auto enc = net.encode(sent);
  const auto legal = legal_actions(st, labels);
  const int action = action_id(legal[rng.below(legal.size())], labels.size());
  const double target = rng.uniform(-2.0, 2.0);
  return gradient_check(
      net, [&](const Network<double>& m) { return m.featurize(st, enc); }, action, target, h,
      std::numeric_limits<std::size_t>::max(), rng.derive(), 1.0, 1e-6);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

template <class Real>
nlohmann::json to_json(const Network<Real>& net) {
  nlohmann::json j;
  j["format"] = "mentree-model";
  j["version"] = kModelFormatVersion;
  j["head"] = head_name(net.head());
  j["features"] = net.config();
  j["labels"] = net.labels().names();
  j["vocabulary"] = net.vocabulary().words();
  auto gaz = nlohmann::json::array();
  for (const auto& g : net.gazetteers()) gaz.push_back({{"name", g.name}, {"phrases", g.phrases}});
  j["gazetteers"] = gaz;
  auto params = nlohmann::json::object();
  for (const auto& t : net.params()) {
    auto rows = nlohmann::json::array();
    for (int r = 0; r < t.rows; ++r) {
      auto row = nlohmann::json::array();
      for (int k = 0; k < t.cols; ++k) row.push_back(static_cast<double>(t.row(r)[k]));
      rows.push_back(std::move(row));
    }
    params[t.name] = std::move(rows);
  }
  j["parameters"] = std::move(params);
  return j;
}

template <class Real = double>
Network<Real> network_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "mentree-model") throw config_error("not a model file");
    if (j.at("version").get<int>() != kModelFormatVersion) throw config_error("unsupported model version");
    const Head head = j.at("head") == "q" ? Head::q : Head::softmax;
    FeatureConfig fc = j.at("features").get<FeatureConfig>();
    LabelSet labels(j.at("labels").get<std::vector<std::string>>());
    Vocabulary vocab(j.at("vocabulary").get<std::vector<std::string>>());
    std::vector<Gazetteer> gaz;
    for (const auto& g : j.at("gazetteers"))
      gaz.push_back({g.at("name").get<std::string>(), g.at("phrases").get<std::vector<std::vector<std::string>>>()});
    Network<Real> net(head, fc, std::move(labels), std::move(vocab), std::move(gaz));
    const auto& params = j.at("parameters");
    for (auto& t : net.params()) {
      const auto& rows = params.at(t.name);
      if (static_cast<int>(rows.size()) != t.rows) throw config_error("shape mismatch in " + t.name);
      for (int r = 0; r < t.rows; ++r) {
        const auto& row = rows[static_cast<std::size_t>(r)];
        if (static_cast<int>(row.size()) != t.cols) throw config_error("shape mismatch in " + t.name);
        for (int k = 0; k < t.cols; ++k) t.row(r)[k] = static_cast<Real>(row[static_cast<std::size_t>(k)].template get<double>());
      }
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("malformed model: ") + e.what());
  }
}

}  // namespace mentree

#endif  // MENTREE_NEURAL_HPP_
