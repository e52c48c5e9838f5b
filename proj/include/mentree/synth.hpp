#ifndef MENTREE_SYNTH_HPP_
#define MENTREE_SYNTH_HPP_

#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mentree/corpus.hpp"
#include "mentree/error.hpp"
#include "mentree/random.hpp"

namespace mentree {

// Inner entity of label `inner` followed by one of `heads` yields a mention
// labeled `label` (e.g. PER + "Bridge" -> FAC).
struct Composition {
  std::string inner;
  std::vector<std::string> heads;
  std::string label;
};

// Templates are whitespace-separated words with slots: {M} draws a mention,
// {F} draws 0..max_filler filler words.
struct GeneratorConfig {
  std::vector<std::string> labels;
  int train = 0;
  int dev = 0;
  int test = 0;
  std::map<std::string, std::vector<std::string>> entities;
  std::vector<Composition> compositions;
  double composition_rate = 0.4;
  std::vector<std::string> templates;
  std::vector<std::string> fillers;
  int max_filler = 3;

  void validate() const {
    const LabelSet set = LabelSet::with_outside(labels);
    if (train < 0 || dev < 0 || test < 0) throw config_error("sentence counts must be >= 0");
    if (composition_rate < 0 || composition_rate > 1) throw config_error("composition_rate must be in [0, 1]");
    if (max_filler < 0) throw config_error("max_filler must be >= 0");
    for (const auto& [label, list] : entities) {
      if (!set.find(label) || label == "O") throw config_error("unknown entity label '" + label + "'");
      for (const auto& e : list)
        if (split_ws(e).empty()) throw config_error("empty entity phrase");
    }
    for (const auto& c : compositions) {
      if (!set.find(c.label) || c.label == "O") throw config_error("unknown composition label '" + c.label + "'");
      auto it = entities.find(c.inner);
      if (it == entities.end() || it->second.empty())
        throw config_error("composition inner label '" + c.inner + "' has no entities");
      if (c.heads.empty()) throw config_error("composition without heads");
    }
    if (train + dev + test > 0) {
      if (templates.empty()) throw config_error("no templates");
      bool any = false;
      for (const auto& [label, list] : entities) any = any || !list.empty();
      if (!any) throw config_error("no entities");
    }
    for (const auto& t : templates)
      if (split_ws(t).empty()) throw config_error("empty template");
    if (max_filler > 0 && fillers.empty() && train + dev + test > 0) {
      for (const auto& t : templates)
        if (t.find("{F}") != std::string::npos) throw config_error("templates use {F} but no fillers given");
    }
  }
};

inline void to_json(nlohmann::json& j, const Composition& c) {
  j = {{"inner", c.inner}, {"heads", c.heads}, {"label", c.label}};
}

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"labels", c.labels},
       {"train", c.train},
       {"dev", c.dev},
       {"test", c.test},
       {"entities", c.entities},
       {"compositions", c.compositions},
       {"composition_rate", c.composition_rate},
       {"templates", c.templates},
       {"fillers", c.fillers},
       {"max_filler", c.max_filler}};
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = *it;
      if (k == "labels") c.labels = v.get<std::vector<std::string>>();
      else if (k == "train") c.train = v.get<int>();
      else if (k == "dev") c.dev = v.get<int>();
      else if (k == "test") c.test = v.get<int>();
      else if (k == "entities") c.entities = v.get<std::map<std::string, std::vector<std::string>>>();
      else if (k == "compositions") {
        for (const auto& e : v) {
          for (auto jt = e.begin(); jt != e.end(); ++jt)
            if (jt.key() != "inner" && jt.key() != "heads" && jt.key() != "label")
              throw config_error("unknown composition key '" + jt.key() + "'");
          c.compositions.push_back({e.at("inner").get<std::string>(), e.at("heads").get<std::vector<std::string>>(),
                                    e.at("label").get<std::string>()});
        }
      } else if (k == "composition_rate") c.composition_rate = v.get<double>();
      else if (k == "templates") c.templates = v.get<std::vector<std::string>>();
      else if (k == "fillers") c.fillers = v.get<std::vector<std::string>>();
      else if (k == "max_filler") c.max_filler = v.get<int>();
      else throw config_error("unknown generator key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

inline GeneratorConfig default_generator_config() {
  GeneratorConfig c;
  c.labels = {"PER", "GPE", "ORG", "FAC"};
  c.train = 2000;
  c.dev = 300;
  c.test = 300;
  c.entities = {
      {"PER",
       {"George Washington", "Abraham Lincoln", "Martin Luther King", "John Kennedy", "Maria Lopez", "Anna Schmidt",
        "Smith", "Nelson Mandela", "Victoria", "Pierre Dupont Junior"}},
      {"GPE",
       {"New York", "Hong Kong", "China", "France", "Los Angeles", "San Francisco", "Republic of South Africa",
        "Texas", "Brazil", "United Kingdom"}},
      {"ORG",
       {"Bank of China", "Red Cross", "Microsoft", "United Nations", "General Electric", "Acme Holdings",
        "Global Trade Council"}},
      {"FAC", {"Union Station", "Heathrow Airport", "Central Park", "Golden Gate Bridge"}},
  };
  c.compositions = {
      {"PER", {"Bridge", "Tower", "Memorial", "Airport"}, "FAC"},
      {"GPE", {"Stock Market", "Port Authority", "Police Department", "Gazette"}, "ORG"},
      {"GPE", {"Disneyland", "Harbour"}, "FAC"},
      {"ORG", {"Tower", "Building"}, "FAC"},
  };
  c.composition_rate = 0.4;
  c.templates = {
      "{M} said {F} .",
      "{F} {M} visited {M} .",
      "officials in {M} met {M} on Monday .",
      "the report from {M} was released {F} .",
      "{M} and {M} signed the agreement in {M} .",
      "yesterday {M} announced plans for {M} {F} .",
      "according to {M} , prices rose {F} .",
      "she works for {M} .",
      "he moved to {M} last year {F} .",
      "{F} visitors crowded {M} while {M} watched .",
      "a spokesman for {M} declined to comment .",
      "{M} opened near {M} {F} and {M} praised it .",
      "they flew from {M} to {M} .",
      "{M} .",
      "police said {M} closed {F} because of the storm in {M} .",
  };
  c.fillers = {"today", "again", "quietly", "later", "this", "week", "early", "after", "all", "many",
               "soon", "twice", "there", "indeed", "finally"};
  c.max_filler = 3;
  return c;
}

struct SynthCorpus {
  std::vector<Sentence> train, dev, test;
  nlohmann::json manifest;
};

namespace detail {

struct Phrase {
  std::vector<std::string> words;
  std::string label;
  std::vector<std::string> inner;  // non-empty when composed
  std::string inner_label;
};

inline const std::string& pick(const std::vector<std::string>& v, Rng& rng) { return v[rng.below(v.size())]; }

class SentenceMaker {
 public:
  SentenceMaker(const GeneratorConfig& c, const LabelSet& labels) : c_(c), labels_(labels) {
    for (const auto& [label, list] : c.entities)
      if (!list.empty()) base_labels_.push_back(label);
  }

  Phrase base(const std::string& label, Rng& rng) const {
    return {split_ws(pick(c_.entities.at(label), rng)), label, {}, {}};
  }

  Phrase draw_phrase(Rng& rng) const {
    if (!c_.compositions.empty() && rng.uniform() < c_.composition_rate) {
      const auto& comp = c_.compositions[rng.below(c_.compositions.size())];
      Phrase inner = base(comp.inner, rng);
      Phrase p{inner.words, comp.label, inner.words, comp.inner};
      for (const auto& w : split_ws(pick(comp.heads, rng))) p.words.push_back(w);
      return p;
    }
    return base(base_labels_[rng.below(base_labels_.size())], rng);
  }

  // Fills the template; `forced` (when given) goes into the first {M} slot.
  Sentence fill(const std::string& tmpl, Rng& rng, std::vector<Phrase>& used, const Phrase* forced = nullptr) const {
    std::vector<std::string> words;
    std::vector<Mention> mentions;
    bool first = true;
    for (const auto& piece : split_ws(tmpl)) {
      if (piece == "{M}") {
        Phrase p = first && forced ? *forced : draw_phrase(rng);
        first = false;
        const int start = static_cast<int>(words.size());
        for (const auto& w : p.words) words.push_back(w);
        mentions.push_back({start, static_cast<int>(words.size()), labels_.id(p.label)});
        used.push_back(std::move(p));
      } else if (piece == "{F}") {
        const std::size_t n = rng.below(static_cast<std::size_t>(c_.max_filler) + 1);
        for (std::size_t k = 0; k < n; ++k) words.push_back(pick(c_.fillers, rng));
      } else {
        words.push_back(piece);
      }
    }
    return make_sentence(words, mentions);
  }

  const std::vector<std::string>& templates_with_mentions() {
    if (mention_templates_.empty())
      for (const auto& t : c_.templates)
        if (t.find("{M}") != std::string::npos) mention_templates_.push_back(t);
    return mention_templates_;
  }

 private:
  const GeneratorConfig& c_;
  const LabelSet& labels_;
  std::vector<std::string> base_labels_;
  std::vector<std::string> mention_templates_;
};

}  // namespace detail

// Deterministic for a seed. Sentences are unique across all splits. For each
// split, every inner phrase used inside a composed mention also appears there
// standalone with its inner label; sentences are appended when the sampled
// ones do not already provide that.
inline SynthCorpus synth_corpus(std::uint64_t seed, const GeneratorConfig& cfg) {
  cfg.validate();
  const LabelSet labels = LabelSet::with_outside(cfg.labels);
  Rng rng(seed);
  detail::SentenceMaker maker(cfg, labels);
  std::set<std::string> seen;
  SynthCorpus out;
  nlohmann::json splits = nlohmann::json::object();

  auto generate = [&](int count, std::vector<Sentence>& dest, const std::string& name) {
    using Key = std::pair<std::vector<std::string>, std::string>;
    std::set<Key> standalone, inner_needed;
    auto keep = [&](Sentence s, const std::vector<detail::Phrase>& used) {
      const std::string key = join(s.surface(0, s.length()));
      if (!seen.insert(key).second) return false;
      for (const auto& p : used) {
        if (p.inner.empty()) standalone.insert({p.words, p.label});
        else inner_needed.insert({p.inner, p.inner_label});
      }
      dest.push_back(std::move(s));
      return true;
    };
    const long max_attempts = 200L * count + 1000;
    long attempts = 0;
    while (static_cast<int>(dest.size()) < count && attempts++ < max_attempts) {
      std::vector<detail::Phrase> used;
      Sentence s = maker.fill(detail::pick(cfg.templates, rng), rng, used);
      keep(std::move(s), used);
    }
    if (static_cast<int>(dest.size()) < count)
      throw config_error("generator could not produce " + std::to_string(count) + " distinct " + name +
                         " sentences");
    int appended = 0;
    for (const auto& need : inner_needed) {
      if (standalone.count(need)) continue;
      const detail::Phrase forced{need.first, need.second, {}, {}};
      const auto& templates = maker.templates_with_mentions();
      for (int tries = 0; tries < 1000; ++tries) {
        std::vector<detail::Phrase> used;
        Sentence s = maker.fill(detail::pick(templates, rng), rng, used, &forced);
        if (keep(std::move(s), used)) {
          ++appended;
          break;
        }
      }
      if (!standalone.count(need)) throw config_error("could not place a standalone inner phrase");
    }
    std::map<std::string, int> per_label;
    int tokens = 0;
    for (const auto& s : dest) {
      tokens += s.length();
      for (const auto& m : s.mentions) ++per_label[labels.name(m.label)];
    }
    splits[name] = {{"sentences", dest.size()},
                    {"requested", count},
                    {"appended_standalone", appended},
                    {"tokens", tokens},
                    {"mentions", per_label}};
  };
  generate(cfg.train, out.train, "train");
  generate(cfg.dev, out.dev, "dev");
  generate(cfg.test, out.test, "test");

  std::set<std::string> vocab;
  for (const auto* split : {&out.train, &out.dev, &out.test})
    for (const auto& s : *split)
      for (const auto& t : s.tokens) vocab.insert(t.lowercased);
  nlohmann::json cfg_json = cfg;
  out.manifest = {{"format", "mentree-synth"},
                  {"seed", seed},
                  {"labels", cfg.labels},
                  {"vocabulary_size", vocab.size()},
                  {"splits", splits},
                  {"config", cfg_json}};
  return out;
}

}  // namespace mentree

#endif  // MENTREE_SYNTH_HPP_
