#ifndef MENTREE_CORPUS_HPP_
#define MENTREE_CORPUS_HPP_

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mentree/error.hpp"
#include "mentree/random.hpp"

namespace mentree {

// ---------------------------------------------------------------------------
// Labels and BIO tags
// ---------------------------------------------------------------------------

// Ordered label inventory containing the non-mention label "O" exactly once.
// Tag ids: 0 is O; the k-th non-O label owns B = 2k+1 and I = 2k+2.
class LabelSet {
 public:
  static constexpr std::string_view kOutside = "O";

  LabelSet() : LabelSet(std::vector<std::string>{"O"}) {}

  explicit LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
    int outside = -1;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      const auto& n = names_[i];
      if (n.empty() || n.find_first_of(" \t\n") != std::string::npos)
        throw config_error("label names must be non-empty and contain no whitespace");
      if (!index_.emplace(n, static_cast<int>(i)).second)
        throw config_error("duplicate label '" + n + "'");
      if (n == kOutside) outside = static_cast<int>(i);
    }
    if (outside < 0) throw config_error("label set must contain O");
    outside_ = outside;
    rank_.assign(names_.size(), -1);
    int k = 0;
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (static_cast<int>(i) != outside_) {
        rank_[i] = k++;
        by_rank_.push_back(static_cast<int>(i));
      }
  }

  // Convenience: O followed by the given mention labels.
  static LabelSet with_outside(const std::vector<std::string>& mention_labels) {
    std::vector<std::string> all{std::string(kOutside)};
    all.insert(all.end(), mention_labels.begin(), mention_labels.end());
    return LabelSet(std::move(all));
  }

  int size() const { return static_cast<int>(names_.size()); }
  int outside() const { return outside_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }

  std::optional<int> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  int id(std::string_view name) const {
    auto v = find(name);
    if (!v) throw config_error("unknown label '" + std::string(name) + "'");
    return *v;
  }

  int tag_count() const { return 2 * (size() - 1) + 1; }
  static constexpr int outside_tag() { return 0; }
  int begin_tag(int label) const { return 2 * rank_of(label) + 1; }
  int inside_tag(int label) const { return 2 * rank_of(label) + 2; }
  bool is_begin(int tag) const { return tag > 0 && tag % 2 == 1; }
  bool is_inside(int tag) const { return tag > 0 && tag % 2 == 0; }
  int tag_label(int tag) const {
    if (tag == 0) return outside_;
    return by_rank_.at(static_cast<std::size_t>((tag - 1) / 2));
  }

  std::string tag_name(int tag) const {
    if (tag == 0) return std::string(kOutside);
    return (is_begin(tag) ? "B-" : "I-") + name(tag_label(tag));
  }

  std::optional<int> parse_tag(std::string_view tag) const {
    if (tag == kOutside) return outside_tag();
    if (tag.size() < 3 || tag[1] != '-' || (tag[0] != 'B' && tag[0] != 'I'))
      return std::nullopt;
    auto label = find(tag.substr(2));
    if (!label || *label == outside_) return std::nullopt;
    return tag[0] == 'B' ? begin_tag(*label) : inside_tag(*label);
  }

  bool operator==(const LabelSet& o) const { return names_ == o.names_; }

 private:
  int rank_of(int label) const {
    detail::require(label >= 0 && label < size() && label != outside_,
                    "BIO tags exist only for mention labels");
    return rank_[static_cast<std::size_t>(label)];
  }

  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> rank_;
  std::vector<int> by_rank_;
  int outside_ = 0;
};

// ---------------------------------------------------------------------------
// Tokens
// ---------------------------------------------------------------------------

enum class CapsShape { all_lower = 0, all_upper, init_cap, mixed, no_alpha };
inline constexpr int kCapsShapes = 5;

inline CapsShape caps_shape(std::string_view s) {
  int alpha = 0, upper = 0;
  bool first_upper = false;
  for (unsigned char c : s) {
    if (!std::isalpha(c)) continue;
    if (alpha == 0) first_upper = std::isupper(c) != 0;
    ++alpha;
    if (std::isupper(c)) ++upper;
  }
  if (alpha == 0) return CapsShape::no_alpha;
  if (upper == 0) return CapsShape::all_lower;
  if (first_upper && upper == 1) return CapsShape::init_cap;
  if (upper == alpha) return CapsShape::all_upper;
  return CapsShape::mixed;
}

inline constexpr int kCharHashSpace = 4096;

inline std::uint32_t fnv1a(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

// Hashed character 2- and 3-grams of the lowercased surface with boundary
// markers.
inline std::vector<int> char_ngrams(std::string_view lowercased) {
  std::string padded = "^" + std::string(lowercased) + "$";
  std::vector<int> out;
  for (std::size_t n = 2; n <= 3; ++n)
    for (std::size_t i = 0; i + n <= padded.size(); ++i) {
      std::string gram = std::to_string(n) + ":" + padded.substr(i, n);
      out.push_back(static_cast<int>(fnv1a(gram) % kCharHashSpace));
    }
  return out;
}

inline std::string to_lower(std::string_view s) {
  std::string r(s);
  for (auto& c : r) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return r;
}

struct Token {
  std::string surface;
  std::string lowercased;
  std::vector<int> char_ngrams;
  CapsShape caps = CapsShape::no_alpha;
  std::uint32_t gazetteer_flags = 0;

  bool operator==(const Token&) const = default;
};

inline Token make_token(std::string_view surface) {
  detail::require(!surface.empty() &&
                      surface.find_first_of(" \t\r\n") == std::string_view::npos,
                  "token surface must be non-empty without whitespace");
  Token t;
  t.surface = std::string(surface);
  t.lowercased = to_lower(surface);
  t.char_ngrams = char_ngrams(t.lowercased);
  t.caps = caps_shape(surface);
  return t;
}

// ---------------------------------------------------------------------------
// Mentions and sentences
// ---------------------------------------------------------------------------

struct Mention {
  int start = 0;
  int end = 0;  // exclusive
  int label = 0;

  int length() const { return end - start; }
  auto operator<=>(const Mention&) const = default;
};

struct Sentence {
  std::vector<Token> tokens;
  std::vector<Mention> mentions;  // gold, disjoint, sorted by start

  int length() const { return static_cast<int>(tokens.size()); }

  std::vector<std::string> surface(int start, int end) const {
    std::vector<std::string> out;
    for (int i = start; i < end; ++i) out.push_back(tokens[static_cast<std::size_t>(i)].surface);
    return out;
  }

  bool operator==(const Sentence&) const = default;
};

inline Sentence make_sentence(const std::vector<std::string>& words,
                              std::vector<Mention> mentions = {}) {
  Sentence s;
  for (const auto& w : words) s.tokens.push_back(make_token(w));
  std::sort(mentions.begin(), mentions.end());
  s.mentions = std::move(mentions);
  return s;
}

inline std::string join(const std::vector<std::string>& words, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

// ---------------------------------------------------------------------------
// BIO conversion
// ---------------------------------------------------------------------------

inline std::vector<int> encode_bio(const std::vector<Mention>& mentions, int length,
                                   const LabelSet& labels) {
  std::vector<int> tags(static_cast<std::size_t>(length), LabelSet::outside_tag());
  std::vector<bool> used(static_cast<std::size_t>(length), false);
  for (const auto& m : mentions) {
    detail::require(0 <= m.start && m.start < m.end && m.end <= length,
                    "mention out of range");
    detail::require(m.label != labels.outside(), "mention labeled O");
    for (int i = m.start; i < m.end; ++i) {
      detail::require(!used[static_cast<std::size_t>(i)], "overlapping mentions");
      used[static_cast<std::size_t>(i)] = true;
      tags[static_cast<std::size_t>(i)] =
          i == m.start ? labels.begin_tag(m.label) : labels.inside_tag(m.label);
    }
  }
  return tags;
}

// Orphan I-X (not continuing an X mention) opens a new mention, as if B-X.
// When `repaired` is given, the positions of repaired tags are appended.
inline std::vector<Mention> decode_bio(const std::vector<int>& tags, const LabelSet& labels,
                                       std::vector<int>* repaired = nullptr) {
  std::vector<Mention> out;
  int open = -1;
  auto close = [&](int end) {
    if (open >= 0) out.back().end = end;
    open = -1;
  };
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    const int tag = tags[static_cast<std::size_t>(i)];
    detail::require(tag >= 0 && tag < labels.tag_count(), "tag id out of range");
    if (tag == LabelSet::outside_tag()) {
      close(i);
      continue;
    }
    const int label = labels.tag_label(tag);
    if (labels.is_inside(tag) && open >= 0 && out.back().label == label) continue;
    if (labels.is_inside(tag) && repaired) repaired->push_back(i);
    close(i);
    out.push_back({i, i + 1, label});
    open = i;
  }
  close(static_cast<int>(tags.size()));
  return out;
}

inline std::vector<int> gold_tags(const Sentence& s, const LabelSet& labels) {
  return encode_bio(s.mentions, s.length(), labels);
}

// ---------------------------------------------------------------------------
// CoNLL column files
// ---------------------------------------------------------------------------

struct ConllData {
  std::vector<Sentence> sentences;
  std::vector<std::size_t> repaired_lines;  // orphan I- tags rewritten as B-
};

// Last column is the BIO tag, first column the surface; blank lines separate
// sentences. -DOCSTART- lines act as separators.
inline ConllData parse_conll(std::istream& in, const LabelSet& labels) {
  ConllData data;
  std::vector<std::string> words;
  std::vector<int> tags;
  std::vector<std::size_t> lines;
  auto flush = [&] {
    if (words.empty()) return;
    std::vector<int> repaired;
    auto mentions = decode_bio(tags, labels, &repaired);
    for (int pos : repaired) data.repaired_lines.push_back(lines[static_cast<std::size_t>(pos)]);
    data.sentences.push_back(make_sentence(words, std::move(mentions)));
    words.clear();
    tags.clear();
    lines.clear();
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto cols = split_ws(line);
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols.front() == "-DOCSTART-") {
      flush();
      continue;
    }
    if (cols.size() < 2) throw parse_error("expected at least 2 columns", lineno);
    auto tag = labels.parse_tag(cols.back());
    if (!tag) throw parse_error("malformed tag '" + cols.back() + "'", lineno);
    words.push_back(cols.front());
    tags.push_back(*tag);
    lines.push_back(lineno);
  }
  flush();
  return data;
}

inline ConllData parse_conll(const std::string& text, const LabelSet& labels) {
  std::istringstream in(text);
  return parse_conll(in, labels);
}

inline ConllData read_conll_file(const std::string& path, const LabelSet& labels) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open " + path, 0);
  return parse_conll(in, labels);
}

// Inverse writer of parse_conll: "surface TAG" lines, blank line after each
// sentence.
inline void render_conll(std::ostream& out, const std::vector<Sentence>& sentences,
                         const LabelSet& labels) {
  for (const auto& s : sentences) {
    auto tags = gold_tags(s, labels);
    for (int i = 0; i < s.length(); ++i)
      out << s.tokens[static_cast<std::size_t>(i)].surface << ' '
          << labels.tag_name(tags[static_cast<std::size_t>(i)]) << '\n';
    out << '\n';
  }
}

inline std::string render_conll(const std::vector<Sentence>& sentences, const LabelSet& labels) {
  std::ostringstream out;
  render_conll(out, sentences, labels);
  return out.str();
}

// ---------------------------------------------------------------------------
// Gazetteers
// ---------------------------------------------------------------------------

inline constexpr int kMaxGazetteers = 32;

struct Gazetteer {
  std::string name;
  std::vector<std::vector<std::string>> phrases;  // lowercased tokens

  bool operator==(const Gazetteer&) const = default;
};

inline Gazetteer read_gazetteer(std::istream& in, std::string name) {
  Gazetteer g{std::move(name), {}};
  std::string line;
  while (std::getline(in, line)) {
    auto words = split_ws(to_lower(line));
    if (!words.empty()) g.phrases.push_back(std::move(words));
  }
  return g;
}

inline Gazetteer load_gazetteer(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open gazetteer " + path, 0);
  return read_gazetteer(in, path);
}

// Sets bit g on every token covered by a longest-match occurrence of a phrase
// from gazetteer g.
inline Sentence annotate_gazetteers(Sentence s, const std::vector<Gazetteer>& gazetteers) {
  detail::require(gazetteers.size() <= kMaxGazetteers, "too many gazetteers");
  for (auto& t : s.tokens) t.gazetteer_flags = 0;
  for (std::size_t g = 0; g < gazetteers.size(); ++g) {
    int i = 0;
    while (i < s.length()) {
      int best = 0;
      for (const auto& phrase : gazetteers[g].phrases) {
        const int len = static_cast<int>(phrase.size());
        if (len <= best || i + len > s.length()) continue;
        bool ok = true;
        for (int k = 0; k < len && ok; ++k)
          ok = s.tokens[static_cast<std::size_t>(i + k)].lowercased == phrase[static_cast<std::size_t>(k)];
        if (ok) best = len;
      }
      if (best == 0) {
        ++i;
        continue;
      }
      for (int k = 0; k < best; ++k)
        s.tokens[static_cast<std::size_t>(i + k)].gazetteer_flags |= (1u << g);
      i += best;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

// Lowercased word inventory. Row 0 is the unknown word, row 1 padding.
class Vocabulary {
 public:
  static constexpr int kUnknown = 0;
  static constexpr int kPadding = 1;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words) {
    for (auto& w : words) add(std::move(w));
  }

  int size() const { return static_cast<int>(words_.size()) + 2; }
  const std::vector<std::string>& words() const { return words_; }

  int id(const std::string& lowercased) const {
    auto it = index_.find(lowercased);
    return it == index_.end() ? kUnknown : it->second;
  }

  void add(std::string w) {
    if (index_.count(w)) return;
    index_.emplace(w, static_cast<int>(words_.size()) + 2);
    words_.push_back(std::move(w));
  }

  bool operator==(const Vocabulary& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Words in first-occurrence order over the training sentences.
inline Vocabulary build_vocabulary(const std::vector<Sentence>& train) {
  Vocabulary v;
  for (const auto& s : train)
    for (const auto& t : s.tokens) v.add(t.lowercased);
  return v;
}

// ---------------------------------------------------------------------------
// Sub-mention table
// ---------------------------------------------------------------------------

using Surface = std::vector<std::string>;

struct SubMentionTable {
  std::map<Surface, std::map<int, int>> counts;

  int count(const Surface& surface, int label) const {
    auto it = counts.find(surface);
    if (it == counts.end()) return 0;
    auto jt = it->second.find(label);
    return jt == it->second.end() ? 0 : jt->second;
  }
  bool contains(const Surface& surface, int label) const { return count(surface, label) > 0; }
  bool empty() const { return counts.empty(); }
};

// Gold (surface, label) pairs occurring at least min_count times.
inline SubMentionTable build_submention_table(const std::vector<Sentence>& train, int min_count) {
  detail::require(min_count >= 1, "min_count must be >= 1");
  std::map<Surface, std::map<int, int>> all;
  for (const auto& s : train)
    for (const auto& m : s.mentions) ++all[s.surface(m.start, m.end)][m.label];
  SubMentionTable table;
  for (auto& [surface, by_label] : all)
    for (auto& [label, n] : by_label)
      if (n >= min_count) table.counts[surface][label] = n;
  return table;
}

// ---------------------------------------------------------------------------
// Pretrained embeddings
// ---------------------------------------------------------------------------

class EmbeddingTable {
 public:
  EmbeddingTable(int dim, std::uint64_t seed) : dim_(dim) {
    Rng rng(seed);
    unknown_.resize(static_cast<std::size_t>(dim));
    for (auto& v : unknown_) v = rng.uniform(-0.05, 0.05);
  }

  int dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  bool contains(const std::string& w) const { return vectors_.count(w) > 0; }

  // Words absent from the file share one unknown vector.
  const std::vector<double>& operator[](const std::string& w) const {
    auto it = vectors_.find(w);
    return it == vectors_.end() ? unknown_ : it->second;
  }

  void insert(std::string w, std::vector<double> v) { vectors_[std::move(w)] = std::move(v); }

 private:
  int dim_;
  std::unordered_map<std::string, std::vector<double>> vectors_;
  std::vector<double> unknown_;
};

inline EmbeddingTable load_embeddings(std::istream& in, int dim, std::uint64_t seed = 0) {
  EmbeddingTable table(dim, seed);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto cols = split_ws(line);
    if (cols.empty()) continue;
    if (static_cast<int>(cols.size()) - 1 != dim)
      throw parse_error("expected " + std::to_string(dim) + " values, found " +
                            std::to_string(cols.size() - 1),
                        lineno);
    std::vector<double> v;
    for (std::size_t i = 1; i < cols.size(); ++i) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cols[i], &used));
        if (used != cols[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw parse_error("bad number '" + cols[i] + "'", lineno);
      }
    }
    table.insert(cols[0], std::move(v));
  }
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path, int dim, std::uint64_t seed = 0) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open embeddings " + path, 0);
  return load_embeddings(in, dim, seed);
}

}  // namespace mentree

#endif  // MENTREE_CORPUS_HPP_
