#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mentree/mentree.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mentree;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kVerify = 3 };

struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path);
  out << text;
  if (!out) throw data_error("failed writing " + path);
}

std::string require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw data_error("missing file " + path);
  return path;
}

std::vector<Sentence> read_split(const std::string& path, const LabelSet& labels) {
  require_file(path);
  ConllData data;
  try {
    data = read_conll_file(path, labels);
  } catch (const parse_error& e) {
    throw data_error(path + ": " + e.what());
  }
  for (int line : data.repaired_lines)
    std::cerr << "warning: " << path << ":" << line << ": orphan I- tag treated as B-\n";
  return std::move(data.sentences);
}

struct Corpus {
  LabelSet labels;
  std::vector<Sentence> train, dev, test;
};

// Labels: config, then DIR/manifest.json, then the tags of DIR/train.conll.
LabelSet corpus_labels(const std::string& dir, const std::vector<std::string>& configured) {
  if (!configured.empty()) return LabelSet::with_outside(configured);
  const auto manifest = fs::path(dir) / "manifest.json";
  if (fs::is_regular_file(manifest)) {
    const json j = read_json_file(manifest.string());
    if (j.contains("labels")) return LabelSet::with_outside(j["labels"].get<std::vector<std::string>>());
  }
  return LabelSet::with_outside(infer_labels_file(require_file((fs::path(dir) / "train.conll").string())));
}

Corpus read_corpus(const std::string& dir, const LabelSet& labels, bool need_train = true) {
  if (!fs::is_directory(dir)) throw data_error("missing data directory " + dir);
  Corpus c{labels, {}, {}, {}};
  auto path = [&](const char* name) { return (fs::path(dir) / name).string(); };
  if (need_train || fs::is_regular_file(path("train.conll"))) c.train = read_split(path("train.conll"), labels);
  if (fs::is_regular_file(path("dev.conll"))) c.dev = read_split(path("dev.conll"), labels);
  if (fs::is_regular_file(path("test.conll"))) c.test = read_split(path("test.conll"), labels);
  return c;
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

Network<double> load_model(const std::string& path) {
  require_file(path);
  return network_from_json<double>(read_json_file(path));
}

void save_model(const Network<double>& net, const std::string& path) { write_file(path, to_json(net).dump() + "\n"); }

Network<double> build_network(Head head, const ExperimentConfig& cfg, const LabelSet& labels,
                              const std::vector<Sentence>& train) {
  std::vector<Gazetteer> gaz;
  for (const auto& p : cfg.gazetteers) {
    require_file(p);
    gaz.push_back(load_gazetteer(p));
  }
  return Network<double>(head, cfg.features, labels, build_vocabulary(train), std::move(gaz));
}

void maybe_load_embeddings(Network<double>& net, const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.embeddings) return;
  const auto table = load_embeddings(require_file(*cfg.embeddings), cfg.features.embed_dim, seed);
  const int hits = net.load_pretrained(table);
  std::cerr << "embeddings: " << hits << " vocabulary words initialized\n";
}

// ---------------------------------------------------------------------------
// Config overrides
// ---------------------------------------------------------------------------

struct Override {
  const char* flag;
  const char* section;
  const char* key;
  enum Kind { kString, kInt, kReal, kBool } kind;
};

const std::vector<Override>& learner_overrides() {
  static const std::vector<Override> v{
      {"--algorithm", "learner", "algorithm", Override::kString},
      {"--mode", "environment", "mode", Override::kString},
      {"--left-context", "environment", "left_context", Override::kString},
      {"--pool", "environment", "pool", Override::kInt},
      {"--min-count", "environment", "min_count", Override::kInt},
      {"--partial-reward", "environment", "partial_reward", Override::kReal},
      {"--gamma", "learner", "gamma", Override::kReal},
      {"--epsilon-start", "learner", "epsilon_start", Override::kReal},
      {"--epsilon-end", "learner", "epsilon_end", Override::kReal},
      {"--epsilon-anneal", "learner", "epsilon_anneal", Override::kReal},
      {"--alpha", "learner", "alpha", Override::kReal},
      {"--alpha-end", "learner", "alpha_end", Override::kReal},
      {"--batch", "learner", "batch", Override::kInt},
      {"--steps", "learner", "steps", Override::kInt},
      {"--target-period", "learner", "target_period", Override::kInt},
      {"--n-step", "learner", "n_step", Override::kInt},
      {"--curriculum", "learner", "curriculum", Override::kBool},
      {"--eval-every", "learner", "eval_every", Override::kInt},
      {"--dropout", "learner", "dropout", Override::kBool},
  };
  return v;
}

const std::vector<Override>& supervised_overrides() {
  static const std::vector<Override> v{
      {"--epochs", "supervised", "epochs", Override::kInt},
      {"--lr-start", "supervised", "lr_start", Override::kReal},
      {"--lr-end", "supervised", "lr_end", Override::kReal},
      {"--batch", "supervised", "batch", Override::kInt},
      {"--dropout", "supervised", "dropout", Override::kBool},
  };
  return v;
}

struct TrainOptions {
  std::string config, data, out, metrics;
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;
};

void add_overrides(CLI::App* cmd, TrainOptions& o, const std::vector<Override>& table) {
  for (const auto& ov : table) cmd->add_option(ov.flag, o.values[ov.flag], std::string("override ") + ov.section + "." + ov.key);
  cmd->add_option("--set", o.sets, "override any config key: section.key=JSON");
}

ExperimentConfig load_config(const TrainOptions& o, const std::vector<Override>& table) {
  json j = o.config.empty() ? json::object() : read_json_file(o.config);
  if (!j.is_object()) throw config_error("config must be a JSON object");
  auto put = [&](const std::string& section, const std::string& key, json value) {
    if (section.empty()) j[key] = std::move(value);
    else j[section][key] = std::move(value);
  };
  for (const auto& ov : table) {
    const auto it = o.values.find(ov.flag);
    if (it == o.values.end() || it->second.empty()) continue;
    const std::string& v = it->second;
    try {
      switch (ov.kind) {
        case Override::kString: put(ov.section, ov.key, v); break;
        case Override::kInt: put(ov.section, ov.key, std::stol(v)); break;
        case Override::kReal: put(ov.section, ov.key, std::stod(v)); break;
        case Override::kBool:
          if (v != "true" && v != "false") throw config_error(std::string(ov.flag) + " expects true or false");
          put(ov.section, ov.key, v == "true");
          break;
      }
    } catch (const std::logic_error&) {
      throw config_error(std::string("bad value for ") + ov.flag + ": " + v);
    }
  }
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw config_error("--set expects section.key=JSON");
    const std::string path = s.substr(0, eq);
    json value;
    try {
      value = json::parse(s.substr(eq + 1));
    } catch (const json::exception&) {
      value = s.substr(eq + 1);
    }
    const auto dot = path.find('.');
    put(dot == std::string::npos ? "" : path.substr(0, dot), dot == std::string::npos ? path : path.substr(dot + 1),
        value);
  }
  if (o.seed) {
    j["seed"] = *o.seed;
    for (const char* section : {"learner", "supervised"})
      if (j.contains(section)) j[section].erase("seed");
  }
  return experiment_config_from_json(j);
}

// Metrics go to --metrics FILE when given, else to standard output.
class MetricsSink {
 public:
  explicit MetricsSink(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw data_error("cannot write " + path);
    }
  }
  void operator()(const json& m) {
    std::ostream& out = file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout;
    out << m.dump() << '\n';
    out.flush();
  }

 private:
  std::ofstream file_;
};

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_synth(std::uint64_t seed, const std::string& spec, const std::string& out) {
  const GeneratorConfig cfg = spec.empty() ? default_generator_config() : generator_config_from_json(read_json_file(spec));
  const auto corpus = synth_corpus(seed, cfg);
  fs::create_directories(out);
  const LabelSet labels = LabelSet::with_outside(cfg.labels);
  write_file((fs::path(out) / "train.conll").string(), render_conll(corpus.train, labels));
  write_file((fs::path(out) / "dev.conll").string(), render_conll(corpus.dev, labels));
  write_file((fs::path(out) / "test.conll").string(), render_conll(corpus.test, labels));
  write_file((fs::path(out) / "manifest.json").string(), corpus.manifest.dump(2) + "\n");
  std::cout << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.test.size()
            << " sentences (train/dev/test) to " << out << "\n";
  return kOk;
}

int cmd_train_rl(const TrainOptions& o) {
  const ExperimentConfig cfg = load_config(o, learner_overrides());
  const LabelSet labels = corpus_labels(o.data, cfg.labels);
  const Corpus corpus = read_corpus(o.data, labels);
  if (corpus.train.empty()) throw data_error("training corpus is empty");
  Network<double> net = build_network(Head::q, cfg, labels, corpus.train);
  MetricsSink sink(o.metrics);
  TrainHooks hooks;
  hooks.on_metrics = [&](const json& m) { sink(m); };
  // Embeddings are loaded after initialization, so train is given a hook.
  LearnerConfig lc = cfg.learner;
  if (cfg.embeddings) {
    Rng r(lc.seed);
    net.initialize(r.derive(), lc.init_scale);
    maybe_load_embeddings(net, cfg, lc.seed);
  }
  auto result = train(corpus.train, corpus.dev, std::move(net), lc, hooks, cfg.embeddings.has_value());
  save_model(result.best, o.out);
  std::cerr << "best dev F1 " << format_fixed(result.best_dev_f1) << " at step " << result.best_step << "\n";
  return kOk;
}

int cmd_train_sl(const TrainOptions& o) {
  const ExperimentConfig cfg = load_config(o, supervised_overrides());
  const LabelSet labels = corpus_labels(o.data, cfg.labels);
  const Corpus corpus = read_corpus(o.data, labels);
  if (corpus.train.empty()) throw data_error("training corpus is empty");
  Network<double> net = build_network(Head::softmax, cfg, labels, corpus.train);
  MetricsSink sink(o.metrics);
  SupervisedConfig sc = cfg.supervised;
  if (cfg.embeddings) {
    Rng r(sc.seed);
    net.initialize(r.derive(), sc.init_scale);
    maybe_load_embeddings(net, cfg, sc.seed);
  }
  auto result = train_supervised(corpus.train, corpus.dev, std::move(net), sc,
                                 [&](const json& m) { sink(m); }, cfg.embeddings.has_value());
  save_model(result.best, o.out);
  std::cerr << "best dev F1 " << format_fixed(result.best_dev_f1) << " at epoch " << result.best_epoch << "\n";
  return kOk;
}

struct Tagged {
  std::vector<std::vector<int>> tags;
  std::vector<State> states;  // Q models only
};

Tagged tag_all(const Network<double>& net, const std::vector<Sentence>& data) {
  Tagged t;
  for (const auto& s : data) {
    if (net.head() == Head::q) {
      auto d = greedy_decode(net, s);
      t.tags.push_back(std::move(d.tags));
      t.states.push_back(std::move(d.final_state));
    } else {
      t.tags.push_back(decode_supervised(net, s));
    }
  }
  return t;
}

int cmd_tag(const std::string& model, const std::string& in, const std::string& out, bool trees) {
  const auto net = load_model(model);
  const auto data = read_split(in, net.labels());
  if (trees && net.head() != Head::q) throw config_error("--trees needs a Q model (mention trees)");
  const Tagged t = tag_all(net, data);
  std::vector<Sentence> predicted;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Sentence s = data[i];
    s.mentions = decode_bio(t.tags[i], net.labels());
    predicted.push_back(std::move(s));
  }
  write_file(out, render_conll(predicted, net.labels()));
  if (trees) {
    std::string text;
    for (const auto& st : t.states) text += stack_string(st, net.labels()) + "\n";
    write_file(out + ".trees", text);
  }
  return kOk;
}

int cmd_eval(const std::string& model, const std::string& data_path, const std::string& json_out) {
  const auto net = load_model(model);
  const auto data = read_split(data_path, net.labels());
  const Tagged t = tag_all(net, data);
  std::vector<std::vector<int>> gold;
  for (const auto& s : data) gold.push_back(gold_tags(s, net.labels()));
  const auto report = score(t.tags, gold, net.labels());
  std::cout << render_table(report);
  if (!json_out.empty()) write_file(json_out, to_json(report).dump(2) + "\n");
  return kOk;
}

const std::vector<Sentence>& analysis_split(const Corpus& c, const std::string& split) {
  if (split == "test") return c.test;
  if (split == "dev") return c.dev;
  if (split == "train") return c.train;
  throw config_error("unknown split '" + split + "'");
}

SurfaceLabels standalone_labels(const Corpus& c, bool case_sensitive) {
  SurfaceLabels sl(case_sensitive);
  sl.add(c.train);
  sl.add(c.dev);
  return sl;
}

int cmd_submentions(const std::string& model, const std::string& dir, const std::string& split, bool ignore_case,
                    const std::string& json_out) {
  const auto net = load_model(model);
  if (net.head() != Head::q) throw config_error("sub-mention analysis needs a Q model (mention trees)");
  const Corpus c = read_corpus(dir, net.labels(), false);
  const auto& data = analysis_split(c, split);
  std::vector<std::vector<NodePtr>> nodes;
  for (const auto& s : data) nodes.push_back(collect_internal_nodes(greedy_decode(net, s).final_state));
  const auto report = submention_analysis(data, nodes, standalone_labels(c, !ignore_case));
  std::cout << render_table(report);
  if (!json_out.empty()) write_file(json_out, to_json(report).dump(2) + "\n");
  return kOk;
}

int cmd_bias(const std::string& sl_model, const std::string& rl_model, const std::string& dir,
             const std::string& split, bool ignore_case, const std::string& json_out) {
  const auto sl = load_model(sl_model);
  const auto rl = load_model(rl_model);
  if (sl.labels() != rl.labels()) throw config_error("models use different label sets");
  const Corpus c = read_corpus(dir, sl.labels(), false);
  const auto& data = analysis_split(c, split);
  const auto majority = standalone_labels(c, !ignore_case);
  const auto sl_report = label_bias_analysis(data, tag_all(sl, data).tags, majority, sl.labels());
  const auto rl_report = label_bias_analysis(data, tag_all(rl, data).tags, majority, rl.labels());
  std::cout << render_bias_table(sl_report, rl_report);
  for (const auto& [name, r] : {std::pair{"SL", &sl_report}, std::pair{"RL", &rl_report}}) {
    std::size_t shown = 0;
    for (const auto& e : r->errors) {
      if (shown++ == 5) break;
      std::cout << name << ": " << e.rendered << "\n";
    }
  }
  if (!json_out.empty())
    write_file(json_out, json{{"sl", to_json(sl_report)}, {"rl", to_json(rl_report)}}.dump(2) + "\n");
  return kOk;
}

int cmd_trace(const std::string& model, const std::string& sentence) {
  const auto net = load_model(model);
  if (net.head() != Head::q) throw config_error("trace needs a Q model");
  const auto words = split_ws(sentence);
  if (words.empty()) throw data_error("empty sentence");
  const Sentence s = make_sentence(words, {});
  const auto& labels = net.labels();
  int step = 0;
  const auto decoded = greedy_decode(net, s, net.encode(s), [&](const DecodeStep& d) {
    json legal = json::array();
    json q = json::object();
    for (const auto& a : d.legal) {
      legal.push_back(action_name(a, labels));
      q[action_name(a, labels)] = d.q[static_cast<std::size_t>(action_id(a, labels.size()))];
    }
    std::cout << json{{"step", step++},
                      {"state", state_summary(d.state, labels)},
                      {"stack", stack_string(d.state, labels)},
                      {"legal", legal},
                      {"q", q},
                      {"action", action_name(d.chosen, labels)}}
                     .dump()
              << '\n';
  });
  json tags = json::array();
  for (int t : decoded.tags) tags.push_back(labels.tag_name(t));
  std::cout << json{{"final", stack_string(decoded.final_state, labels)}, {"tags", tags}}.dump() << '\n';
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, int networks, double tolerance) {
  Rng rng(seed);
  double worst = 0;
  for (int k = 0; k < networks; ++k) {
    const auto r = random_gradient_check(rng.derive());
    worst = std::max(worst, r.max_relative_error);
  }
  std::cout << "max relative error " << worst << " over " << networks << " networks\n";
  return worst < tolerance ? kOk : kVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transition-based mention detection trained with reinforcement learning"};
  app.require_subcommand(1);

  std::uint64_t synth_seed = 1;
  std::string synth_spec, synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--seed", synth_seed, "generator seed")->required();
  synth->add_option("--spec", synth_spec, "generator config (JSON); built-in default when omitted");
  synth->add_option("--out", synth_out, "output directory")->required();

  TrainOptions rl_opts, sl_opts;
  auto* train_rl = app.add_subcommand("train-rl", "train the Q network");
  auto* train_sl = app.add_subcommand("train-sl", "train the supervised BIO tagger");
  for (auto [cmd, o, table] : {std::tuple{train_rl, &rl_opts, &learner_overrides()},
                               std::tuple{train_sl, &sl_opts, &supervised_overrides()}}) {
    cmd->add_option("--config", o->config, "experiment config (JSON)");
    cmd->add_option("--data", o->data, "directory with train.conll and dev.conll")->required();
    cmd->add_option("--out", o->out, "model file to write")->required();
    cmd->add_option("--metrics", o->metrics, "metrics JSON-lines file (default: standard output)");
    cmd->add_option("--seed", o->seed, "seed (overrides the config)");
    add_overrides(cmd, *o, *table);
  }

  std::string model, in, out, data, split = "test", json_out, sl_model, rl_model, sentence;
  bool trees = false, ignore_case = false;
  auto* tag = app.add_subcommand("tag", "tag a CoNLL file");
  tag->add_option("--model", model)->required();
  tag->add_option("--in", in)->required();
  tag->add_option("--out", out)->required();
  tag->add_flag("--trees", trees, "also write bracketed mention trees to OUT.trees");

  auto* eval = app.add_subcommand("eval", "score a model on a CoNLL file");
  eval->add_option("--model", model)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--json", json_out, "also write the report as JSON");

  auto* sub = app.add_subcommand("analyze-submentions", "sub-mention chunk and label consistency");
  sub->add_option("--model", model)->required();
  sub->add_option("--data", data, "corpus directory")->required();
  sub->add_option("--split", split, "split to analyze (train, dev, test)");
  sub->add_flag("--ignore-case", ignore_case, "match surfaces case-insensitively");
  sub->add_option("--json", json_out, "also write the report as JSON");

  auto* bias = app.add_subcommand("analyze-bias", "label-bias errors of two models");
  bias->add_option("--sl", sl_model)->required();
  bias->add_option("--rl", rl_model)->required();
  bias->add_option("--data", data, "corpus directory")->required();
  bias->add_option("--split", split, "split to analyze (train, dev, test)");
  bias->add_flag("--ignore-case", ignore_case, "match surfaces case-insensitively");
  bias->add_option("--json", json_out, "also write the report as JSON");

  auto* trace = app.add_subcommand("trace", "JSON-lines trace of a greedy decode");
  trace->add_option("--model", model)->required();
  trace->add_option("--sentence", sentence, "whitespace-tokenized sentence")->required();

  std::uint64_t gc_seed = 1;
  int gc_networks = 20;
  double gc_tolerance = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the backward pass");
  gradcheck->add_option("--seed", gc_seed)->required();
  gradcheck->add_option("--networks", gc_networks, "random networks to check");
  gradcheck->add_option("--tolerance", gc_tolerance, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_seed, synth_spec, synth_out);
    if (*train_rl) return cmd_train_rl(rl_opts);
    if (*train_sl) return cmd_train_sl(sl_opts);
    if (*tag) return cmd_tag(model, in, out, trees);
    if (*eval) return cmd_eval(model, data, json_out);
    if (*sub) return cmd_submentions(model, data, split, ignore_case, json_out);
    if (*bias) return cmd_bias(sl_model, rl_model, data, split, ignore_case, json_out);
    if (*trace) return cmd_trace(model, sentence);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_networks, gc_tolerance);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const parse_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
