#include "edg/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"

#include "edg/error.hpp"
#include "edg/eval.hpp"
#include "edg/rng.hpp"

namespace edg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_relative() && !base.empty()) path = fs::path(base) / path;
  return path.lexically_normal().string();
}

void apply_override(json& root, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + spec + "' is not of the form key=value");
  const std::string key = spec.substr(0, eq);
  const std::string text = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &root;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

SelectionMode parse_mode(const std::string& s) {
  if (s == "sentence" || s == "SENTENCE") return SelectionMode::kSentence;
  if (s == "document" || s == "DOCUMENT") return SelectionMode::kDocument;
  throw ConfigError("unknown selection mode '" + s + "'");
}

const char* mode_name(SelectionMode m) {
  return m == SelectionMode::kSentence ? "sentence" : "document";
}

ClassWeights parse_class_weights(const json& j) {
  check_keys(j, {"types", "outside"}, "class_weights");
  ClassWeights w;
  if (j.contains("types"))
    for (const auto& [type, value] : j.at("types").items()) {
      const double v = value.get<double>();
      if (!(v >= 0.0)) throw ConfigError("class weight for " + type + " must be non-negative");
      w.by_type.emplace_back(type, v);
    }
  if (j.contains("outside")) w.outside = j.at("outside").get<double>();
  return w;
}

json class_weights_json(const ClassWeights& w) {
  json types = json::object();
  for (const auto& [t, v] : w.by_type) types[t] = v;
  json out{{"types", types}};
  if (w.outside) out["outside"] = *w.outside;
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void require_empty_dir(const std::string& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir))
    throw ConfigError("output path " + dir + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw ConfigError("output directory " + dir + " is not empty (use --force)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot write " + path.string());
  out << text;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& base_dir,
                           const std::vector<std::string>& overrides) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(root, o);

  RunConfig c;
  try {
    check_keys(root,
               {"strategy", "data", "partitions", "partition", "loop", "predictor",
                "pseudo_labels", "seed", "class_weights"},
               "config");
    read(root, "strategy", c.strategy);
    parse_strategy(c.strategy);
    read(root, "seed", c.seed);
    read(root, "pseudo_labels", c.pseudo_labels);
    if (!root.contains("data")) throw ConfigError("config needs a data section");
    const auto& d = root.at("data");
    check_keys(d, {"pool", "validation", "evaluations", "embeddings", "normalize_embeddings"},
               "data");
    c.data.pool = resolve(base_dir, d.at("pool").get<std::string>());
    c.data.validation = resolve(base_dir, d.at("validation").get<std::string>());
    if (d.contains("evaluations"))
      for (const auto& [name, path] : d.at("evaluations").items())
        c.data.evaluations.emplace_back(name, resolve(base_dir, path.get<std::string>()));
    if (d.contains("embeddings") && !d.at("embeddings").is_null())
      c.data.embeddings = resolve(base_dir, d.at("embeddings").get<std::string>());
    read(d, "normalize_embeddings", c.data.normalize_embeddings);

    read(root, "partitions", c.partitions);
    for (const auto& p : c.partitions)
      if (p != "word_identity") parse_partition_kind(p);
    if (std::set<std::string>(c.partitions.begin(), c.partitions.end()).size() !=
        c.partitions.size())
      throw ConfigError("partitions are listed twice");
    if (root.contains("partition")) {
      const auto& p = root.at("partition");
      check_keys(p,
                 {"sentence_groups", "word_groups", "word_subgroups", "temperature",
                  "kmeans_batch", "kmeans_iterations"},
                 "partition");
      read(p, "sentence_groups", c.partition.sentence_groups);
      read(p, "word_groups", c.partition.word_groups);
      read(p, "word_subgroups", c.partition.word_subgroups);
      read(p, "temperature", c.partition.temperature);
      read(p, "kmeans_batch", c.partition.kmeans_batch);
      read(p, "kmeans_iterations", c.partition.kmeans_iterations);
    }
    if (root.contains("loop")) {
      const auto& l = root.at("loop");
      check_keys(l,
                 {"history_start_tokens", "history_batch_tokens", "initial_tokens",
                  "selection_batch_tokens", "burn_in_batches", "total_batches",
                  "uncertainty_lag_tokens", "epsilon", "mode", "fass_t_factor", "ensemble_k",
                  "fit_restarts", "fit_iterations"},
                 "loop");
      read(l, "history_start_tokens", c.loop.history_start_tokens);
      read(l, "history_batch_tokens", c.loop.history_batch_tokens);
      read(l, "initial_tokens", c.loop.initial_tokens);
      read(l, "selection_batch_tokens", c.loop.selection_batch_tokens);
      read(l, "burn_in_batches", c.loop.burn_in_batches);
      read(l, "total_batches", c.loop.total_batches);
      read(l, "uncertainty_lag_tokens", c.loop.uncertainty_lag_tokens);
      if (l.contains("epsilon") && !l.at("epsilon").is_null())
        c.loop.epsilon = l.at("epsilon").get<double>();
      if (l.contains("mode")) c.loop.mode = parse_mode(l.at("mode").get<std::string>());
      read(l, "fass_t_factor", c.loop.fass_t_factor);
      read(l, "ensemble_k", c.loop.ensemble_k);
      read(l, "fit_restarts", c.loop.fit.restarts);
      read(l, "fit_iterations", c.loop.fit.max_iterations);
    }
    if (root.contains("predictor")) {
      const auto& p = root.at("predictor");
      check_keys(p, {"kind", "command", "logprobs", "ensemble", "alpha"}, "predictor");
      std::string kind = "builtin";
      read(p, "kind", kind);
      if (kind == "external") {
        c.predictor.external = true;
        c.predictor.command = p.at("command").get<std::string>();
        c.predictor.logprobs = false;
        read(p, "logprobs", c.predictor.logprobs);
        read(p, "ensemble", c.predictor.ensemble);
      } else if (kind != "builtin") {
        throw ConfigError("unknown predictor kind '" + kind + "'");
      }
      read(p, "alpha", c.predictor.alpha);
      if (!(c.predictor.alpha > 0.0)) throw ConfigError("predictor.alpha must be positive");
    }
    if (root.contains("class_weights") && !root.at("class_weights").is_null())
      c.loop.class_weights = parse_class_weights(root.at("class_weights"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.loop.seed = c.seed;
  c.partition.seed = mix_seed(c.seed, 0x5041525449);
  c.loop.validate();

  const auto kind = parse_strategy(c.strategy);
  const bool have_logprobs = !c.predictor.external || c.predictor.logprobs;
  const bool have_ensemble = !c.predictor.external || c.predictor.ensemble;
  // Validation labels are checked against the data when the run starts.
  check_capabilities(kind, true, have_logprobs, have_ensemble);
  const auto caps = strategy_caps(kind);
  if (caps.decay_fit && c.partitions.empty())
    throw ConfigError("strategy " + c.strategy + " needs at least one partition");
  const bool needs_embeddings =
      caps.diversity ||
      std::any_of(c.partitions.begin(), c.partitions.end(),
                  [](const std::string& p) { return p != "word_identity"; });
  if (needs_embeddings && !c.data.embeddings)
    throw ConfigError("configuration needs data.embeddings");
  return c;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), fs::absolute(path).parent_path().string(), overrides);
}

std::string run_config_json(const RunConfig& c) {
  json evals = json::object();
  for (const auto& [name, path] : c.data.evaluations) evals[name] = path;
  json data{{"pool", c.data.pool},
            {"validation", c.data.validation},
            {"evaluations", evals},
            {"normalize_embeddings", c.data.normalize_embeddings}};
  data["embeddings"] = c.data.embeddings ? json(*c.data.embeddings) : json(nullptr);
  json loop{{"history_start_tokens", c.loop.history_start_tokens},
            {"history_batch_tokens", c.loop.history_batch_tokens},
            {"initial_tokens", c.loop.initial_tokens},
            {"selection_batch_tokens", c.loop.selection_batch_tokens},
            {"burn_in_batches", c.loop.burn_in_batches},
            {"total_batches", c.loop.total_batches},
            {"uncertainty_lag_tokens", c.loop.lag_tokens()},
            {"mode", mode_name(c.loop.mode)},
            {"fass_t_factor", c.loop.fass_t_factor},
            {"ensemble_k", c.loop.ensemble_k},
            {"fit_restarts", c.loop.fit.restarts},
            {"fit_iterations", c.loop.fit.max_iterations}};
  loop["epsilon"] = c.loop.epsilon ? json(*c.loop.epsilon) : json(nullptr);
  json predictor{{"kind", c.predictor.external ? "external" : "builtin"},
                 {"alpha", c.predictor.alpha}};
  if (c.predictor.external) {
    predictor["command"] = c.predictor.command;
    predictor["logprobs"] = c.predictor.logprobs;
    predictor["ensemble"] = c.predictor.ensemble;
  }
  json partition{{"sentence_groups", c.partition.sentence_groups},
                 {"word_groups", c.partition.word_groups},
                 {"word_subgroups", c.partition.word_subgroups},
                 {"temperature", c.partition.temperature},
                 {"kmeans_batch", c.partition.kmeans_batch},
                 {"kmeans_iterations", c.partition.kmeans_iterations}};
  json root{{"strategy", c.strategy},
            {"seed", c.seed},
            {"pseudo_labels", c.pseudo_labels},
            {"data", data},
            {"partitions", c.partitions},
            {"partition", partition},
            {"loop", loop},
            {"predictor", predictor}};
  root["class_weights"] =
      c.loop.class_weights ? class_weights_json(*c.loop.class_weights) : json(nullptr);
  return root.dump(2);
}

void gen_synth_files(const SynthSpec& spec, const SynthSizes& sizes, const std::string& out_dir,
                     bool force) {
  require_empty_dir(out_dir, force);
  const SyntheticGenerator gen(spec);
  const fs::path dir(out_dir);
  const auto train = gen.generate(sizes.train, 0, DatasetRole::kTrain);
  const auto val = gen.generate(sizes.validation, 1, DatasetRole::kValidation);
  const auto test = gen.generate(sizes.test, 2, DatasetRole::kTest);
  write_conll_file(train, (dir / "train.conll").string());
  write_conll_file(val, (dir / "validation.conll").string());
  write_conll_file(test, (dir / "test.conll").string());
  write_conll_file(strip_labels(train), (dir / "pool.conll").string());

  std::ostringstream emb;
  const auto& vocab = gen.vocabulary();
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    emb << vocab[i];
    for (std::size_t d = 0; d < vocab.size(); ++d) emb << (d == i ? " 1" : " 0");
    emb << '\n';
  }
  write_text(dir / "embeddings.txt", emb.str());

  json types = json::array();
  for (const auto& t : spec.entity_types) types.push_back(t);
  json manifest{{"tool", "edg"},
                {"version", kVersion},
                {"seed", spec.seed},
                {"spec",
                 {{"none_words", spec.none_words},
                  {"noise_words", spec.noise_words},
                  {"context_words", spec.context_words},
                  {"dirichlet_alpha", spec.dirichlet_alpha},
                  {"entity_types", types},
                  {"stay_probability", spec.stay_probability},
                  {"weight_min", spec.weight_min},
                  {"weight_max", spec.weight_max},
                  {"min_length", spec.min_length},
                  {"max_length", spec.max_length},
                  {"stop_probability", spec.stop_probability}}},
                {"files",
                 {{"train", {{"sentences", train.sentences.size()}, {"tokens", train.token_count()}}},
                  {"validation", {{"sentences", val.sentences.size()}, {"tokens", val.token_count()}}},
                  {"test", {{"sentences", test.sentences.size()}, {"tokens", test.token_count()}}}}}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  json sim{{"strategy", "edg"},
           {"seed", spec.seed},
           {"data",
            {{"pool", "train.conll"},
             {"validation", "validation.conll"},
             {"evaluations", {{"test", "test.conll"}}},
             {"embeddings", "embeddings.txt"}}},
           {"partitions", {"word_identity"}},
           {"loop",
            {{"history_start_tokens", 1000},
             {"history_batch_tokens", 500},
             {"initial_tokens", 3000},
             {"selection_batch_tokens", 1000},
             {"burn_in_batches", 1},
             {"total_batches", 11}}}};
  write_text(dir / "simulate.json", sim.dump(2) + "\n");
}

namespace {

struct LoadedData {
  Dataset pool;
  Dataset validation;
  std::vector<std::pair<std::string, Dataset>> evaluations;
  std::optional<EmbeddingTable> embeddings;
};

LoadedData load_data(const RunConfig& c) {
  LoadedData d;
  d.pool = parse_conll_file(c.data.pool, DatasetRole::kPool).dataset;
  d.validation = parse_conll_file(c.data.validation, DatasetRole::kValidation).dataset;
  for (const auto& [name, path] : c.data.evaluations)
    d.evaluations.emplace_back(name, parse_conll_file(path, DatasetRole::kTest).dataset);
  if (c.data.embeddings)
    d.embeddings = load_embeddings_file(*c.data.embeddings, c.data.normalize_embeddings);
  if (c.pseudo_labels) {
    auto tagset = tagset_of({&d.pool});
    auto pseudo = make_pseudo_pool(d.pool, d.pool, tagset, c.predictor.alpha);
    std::vector<std::pair<std::string, Dataset>> extra;
    for (const auto& [name, set] : d.evaluations) {
      Dataset relabeled = set;
      for (auto& s : relabeled.sentences) {
        const auto rec = pseudo.oracle.predict(s, false);
        for (std::size_t l = 0; l < s.size(); ++l) s.tokens[l].gold = rec.labels[l];
      }
      extra.emplace_back("pseudo_" + name, std::move(relabeled));
    }
    for (auto& e : extra) d.evaluations.push_back(std::move(e));
    d.pool = std::move(pseudo.pool);
  }
  return d;
}

std::vector<PartitionInfo> build_partitions(const RunConfig& c, const LoadedData& d) {
  std::vector<PartitionInfo> out;
  std::vector<const Sentence*> da;
  for (const auto& s : d.pool.sentences) da.push_back(&s);
  for (const auto& s : d.validation.sentences) da.push_back(&s);
  const EmbeddingTable* table = d.embeddings ? &*d.embeddings : nullptr;
  for (std::size_t i = 0; i < c.partitions.size(); ++i) {
    const auto& name = c.partitions[i];
    if (name == "word_identity") {
      std::set<std::string> vocab;
      for (const auto* s : da)
        for (const auto& t : s->tokens) vocab.insert(t.surface);
      out.push_back({name, Partition::word_identity({vocab.begin(), vocab.end()})});
    } else {
      PartitionConfig pc = c.partition;
      pc.seed = mix_seed(c.partition.seed, i);
      out.push_back({name, build_partition(da, table, parse_partition_kind(name), pc)});
    }
  }
  return out;
}

std::string batch_manifest(const BatchRecord& b) {
  std::ostringstream out;
  out << "# batch " << b.index << " source " << b.source << " tokens " << b.tokens
      << (b.exhausted ? " exhausted" : "") << (b.fallback ? " fallback" : "") << '\n';
  for (std::size_t id : b.sentences) out << id << '\n';
  return out.str();
}

void write_learning_curve(const RunHistory& h, const fs::path& path) {
  std::set<std::string> names;
  for (const auto& c : h.checkpoints)
    for (const auto& [n, _] : c.f1) names.insert(n);
  std::ostringstream out;
  out << "checkpoint,batch,train_tokens";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  char buf[64];
  for (const auto& c : h.checkpoints) {
    out << c.index << ',' << c.batch << ',' << c.train_tokens;
    for (const auto& n : names) {
      auto it = c.f1.find(n);
      if (it == c.f1.end()) {
        out << ',';
      } else {
        std::snprintf(buf, sizeof buf, ",%.6f", it->second);
        out << buf;
      }
    }
    out << '\n';
  }
  write_text(path, out.str());
}

std::string fit_text(const DecayFit& fit) {
  std::ostringstream out;
  write_decay_fit(fit, out);
  return out.str();
}

std::string uncertainty_json(const UncertaintySnapshot& s) {
  return json{{"checkpoint_tokens", s.checkpoint_tokens}, {"scores", s.scores}}.dump() + "\n";
}

UncertaintySnapshot read_uncertainty(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot read " + path.string());
  json j;
  in >> j;
  return {j.at("checkpoint_tokens").get<std::size_t>(), j.at("scores").get<std::vector<double>>()};
}

}  // namespace

LoopResult simulate(const RunConfig& config, const std::string& run_dir,
                    const SimulateOptions& options) {
  const fs::path dir(run_dir);
  const std::string config_text = run_config_json(config);
  const fs::path history_path = dir / "history.jsonl";
  ResumeState resume_state;
  bool resuming = false;
  if (options.resume && fs::exists(history_path)) {
    std::ifstream in(dir / "config.json");
    std::stringstream ss;
    ss << in.rdbuf();
    if (ss.str() != config_text + "\n")
      throw ConfigError("resume: configuration differs from the one recorded in " + run_dir);
    std::ifstream hin(history_path);
    resume_state.history = read_run_history(hin);
    for (const auto& ck : resume_state.history.checkpoints) {
      CheckpointArtifacts art;
      const fs::path vpath = dir / "artifacts" / ("validation_" + std::to_string(ck.index) + ".jsonl");
      const fs::path upath = dir / "artifacts" / ("uncertainty_" + std::to_string(ck.index) + ".json");
      if (fs::exists(vpath)) art.validation = read_predictions_file(vpath.string());
      if (fs::exists(upath)) art.uncertainty = read_uncertainty(upath);
      resume_state.artifacts.push_back(std::move(art));
    }
    resuming = true;
  } else {
    require_empty_dir(run_dir, options.force);
    fs::create_directories(dir / "batches");
    fs::create_directories(dir / "artifacts");
    fs::create_directories(dir / "partitions");
    fs::create_directories(dir / "fits");
    write_text(dir / "config.json", config_text + "\n");
  }

  const auto strategy = parse_strategy(config.strategy);
  auto data = load_data(config);
  const auto partitions = build_partitions(config, data);
  for (const auto& p : partitions) {
    std::ostringstream out;
    p.partition.save(out);
    write_text(dir / "partitions" / (p.name + ".txt"), out.str());
  }

  std::unique_ptr<Predictor> predictor;
  if (config.predictor.external) {
    predictor = std::make_unique<ExternalPredictor>(config.predictor.command,
                                                    (dir / "exchange").string(),
                                                    config.predictor.logprobs,
                                                    config.predictor.ensemble);
  } else {
    std::vector<const Dataset*> all{&data.pool, &data.validation};
    for (const auto& [_, set] : data.evaluations) all.push_back(&set);
    std::set<std::string> tags;
    for (const auto* d : all)
      for (const auto& t : tagset_of({d})) tags.insert(t);
    predictor = std::make_unique<BuiltinPredictor>(std::vector<std::string>(tags.begin(), tags.end()),
                                                   config.predictor.alpha);
  }

  const auto caps = strategy_caps(strategy);
  json manifest{{"tool", "edg"},
                {"version", kVersion},
                {"config_hash", hex64(fnv1a(config_text))},
                {"strategy", config.strategy},
                {"seed", config.seed},
                {"partition_seed", config.partition.seed},
                {"partitions", config.partitions},
                {"predictor", predictor->describe()},
                {"ensemble_k", caps.ensemble ? config.loop.ensemble_k : 0},
                {"pool_sentences", data.pool.sentences.size()},
                {"pool_tokens", data.pool.token_count()}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  RunHistory live = resuming ? resume_state.history : RunHistory{};
  if (!resuming) {
    live.strategy = config.strategy;
    for (const auto& p : partitions) live.partitions.push_back(p.name);
  }
  auto flush_history = [&] {
    std::ostringstream out;
    write_run_history(live, out);
    const auto tmp = dir / "history.jsonl.tmp";
    write_text(tmp, out.str());
    fs::rename(tmp, history_path);
  };
  LoopCallbacks callbacks;
  callbacks.on_batch = [&](const BatchRecord& b) {
    live.batches.push_back(b);
    write_text(dir / "batches" / ("batch_" + std::to_string(b.index) + ".txt"), batch_manifest(b));
    flush_history();
    if (options.log) *options.log << "batch " << b.index << " (" << b.source << "): "
                                  << b.sentences.size() << " sentences, " << b.tokens << " tokens\n";
  };
  callbacks.on_checkpoint = [&](const CheckpointRecord& c, const CheckpointArtifacts& a) {
    if (a.validation)
      write_predictions_file(*a.validation, (dir / "artifacts" /
                                             ("validation_" + std::to_string(c.index) + ".jsonl"))
                                                .string());
    if (a.uncertainty)
      write_text(dir / "artifacts" / ("uncertainty_" + std::to_string(c.index) + ".json"),
                 uncertainty_json(*a.uncertainty));
    live.checkpoints.push_back(c);
    flush_history();
    if (options.log) {
      *options.log << "checkpoint " << c.index << ": " << c.train_tokens << " tokens";
      for (const auto& [n, f] : c.f1) *options.log << ", " << n << " F1 " << f;
      *options.log << '\n';
    }
  };

  LoopData loop_data;
  loop_data.pool = &data.pool;
  loop_data.validation = &data.validation;
  for (const auto& [name, set] : data.evaluations) loop_data.evaluations.push_back({name, &set, false});
  loop_data.embeddings = data.embeddings ? &*data.embeddings : nullptr;

  LoopConfig loop_config = config.loop;
  loop_config.seed = config.seed;
  LoopResult result;
  try {
    result = run_loop(loop_config, strategy, partitions, *predictor, loop_data, callbacks,
                      resuming ? &resume_state : nullptr);
  } catch (...) {
    flush_history();
    throw;
  }
  flush_history();
  write_learning_curve(result.history, dir / "learning_curve.csv");

  std::vector<CurveSource> sources;
  for (std::size_t p = 0; p < result.final_fits.size(); ++p) {
    write_text(dir / "fits" / (partitions[p].name + ".csv"), fit_text(result.final_fits[p]));
    sources.push_back({partitions[p].name, &partitions[p].partition, &result.final_fits[p]});
  }
  std::ostringstream curves;
  export_decay_curves(sources, curves);
  write_text(dir / "curves.csv", curves.str());
  return result;
}

namespace {

RunHistory load_history(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open history " + path);
  return read_run_history(in);
}

std::optional<Partition> load_partition(const std::string& dir, const std::string& name) {
  if (dir.empty()) return std::nullopt;
  const auto path = fs::path(dir) / (name + ".txt");
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream in(path);
  return Partition::load(in);
}

}  // namespace

std::vector<DecayFit> fit_history_files(const std::string& history_path,
                                        const std::string& out_dir,
                                        const std::string& partitions_dir, const FitConfig& fit,
                                        std::uint64_t run_seed) {
  const auto history = load_history(history_path);
  if (history.checkpoints.size() < 2)
    throw ParameterError("history has " + std::to_string(history.checkpoints.size()) +
                         " checkpoint(s); at least 2 are needed to fit decay curves");
  fs::create_directories(fs::path(out_dir) / "fits");
  std::vector<DecayFit> fits;
  std::vector<std::optional<Partition>> parts;
  for (std::size_t p = 0; p < history.partitions.size(); ++p) {
    const auto records = history.records(p);
    FitConfig fc = fit;
    fc.seed = final_fit_seed(run_seed, p);
    fits.push_back(fit_decay(records, default_weights(records), fc));
    write_text(fs::path(out_dir) / "fits" / (history.partitions[p] + ".csv"), fit_text(fits.back()));
    parts.push_back(load_partition(partitions_dir, history.partitions[p]));
  }
  std::vector<CurveSource> sources;
  for (std::size_t p = 0; p < fits.size(); ++p)
    sources.push_back({history.partitions[p], parts[p] ? &*parts[p] : nullptr, &fits[p]});
  std::ostringstream curves;
  export_decay_curves(sources, curves);
  write_text(fs::path(out_dir) / "curves.csv", curves.str());
  return fits;
}

void export_curves_files(const std::string& history_path, const std::string& fits_dir,
                         const std::string& partitions_dir, std::ostream& out) {
  const auto history = load_history(history_path);
  std::vector<DecayFit> fits;
  std::vector<std::optional<Partition>> parts;
  for (std::size_t p = 0; p < history.partitions.size(); ++p) {
    const auto path = fs::path(fits_dir) / (history.partitions[p] + ".csv");
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open fit file " + path.string());
    DecayFit fit;
    fit.params = read_decay_params(in);
    fit.history = history.records(p);
    if (fit.params.group_count() != fit.history.front().group_count())
      throw ParameterError("fit file " + path.string() + " does not match the history");
    fits.push_back(std::move(fit));
    parts.push_back(load_partition(partitions_dir, history.partitions[p]));
  }
  std::vector<CurveSource> sources;
  for (std::size_t p = 0; p < fits.size(); ++p)
    sources.push_back({history.partitions[p], parts[p] ? &*parts[p] : nullptr, &fits[p]});
  export_decay_curves(sources, out);
}

ClassWeights load_class_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open weights file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("weights file is not valid JSON: ") + e.what());
  }
  return parse_class_weights(j);
}

void score_files(const std::string& gold_path, const std::string& predictions_path,
                 const std::string& weights_path, std::ostream& out) {
  const auto gold = parse_conll_file(gold_path, DatasetRole::kTest).dataset;
  const bool jsonl = fs::path(predictions_path).extension() == ".jsonl";
  std::optional<ClassWeights> weights;
  if (!weights_path.empty()) weights = load_class_weights(weights_path);
  auto report = [&](const ClassWeights* w) {
    if (jsonl) return micro_f1(gold, read_predictions_file(predictions_path), w);
    return micro_f1(gold, parse_conll_file(predictions_path, DatasetRole::kTest).dataset, w);
  };
  const auto plain = report(nullptr);
  std::optional<ScoreReport> weighted;
  if (weights) weighted = report(&*weights);
  out << "# unweighted\n";
  write_score_report(plain, out);
  if (weighted) {
    out << "# weighted\n";
    write_score_report(*weighted, out);
  }
}

std::vector<std::size_t> select_once(const SelectRequest& r) {
  const auto kind = parse_strategy(r.strategy);
  const auto caps = strategy_caps(kind);
  const auto pool = parse_conll_file(r.pool_path, DatasetRole::kPool).dataset;
  if (pool.sentences.empty()) throw ParameterError("pool is empty");
  std::vector<std::size_t> lengths;
  std::vector<std::optional<std::size_t>> docs;
  for (const auto& s : pool.sentences) {
    lengths.push_back(s.size());
    docs.push_back(s.doc_id);
  }
  const PoolIndex index{lengths, docs};
  std::vector<std::size_t> cands(pool.sentences.size());
  for (std::size_t i = 0; i < cands.size(); ++i) cands[i] = i;
  std::optional<EmbeddingTable> table;
  if (r.embeddings_path) table = load_embeddings_file(*r.embeddings_path, true);
  const std::uint64_t seed = mix_seed(r.seed, 0x42415443 + r.batch_index);

  auto pool_uncertainty = [&](const std::string& path) {
    if (path.empty()) throw ConfigError("strategy " + r.strategy + " needs pool predictions");
    const auto set = read_predictions_file(path);
    check_alignment(set, pool);
    std::vector<double> out;
    for (const auto& s : pool.sentences) {
      const auto& rec = set.at(s.id);
      out.push_back(caps.ensemble ? score_bald(rec) : score_us(rec, set.tagset.size()));
    }
    return out;
  };
  std::vector<double> embeddings;
  std::size_t dim = 0;
  if (caps.diversity) {
    if (!table) throw ConfigError("strategy " + r.strategy + " needs embeddings");
    dim = table->dim();
    for (const auto& s : pool.sentences) {
      const auto e = sentence_embedding(s, *table);
      embeddings.insert(embeddings.end(), e.begin(), e.end());
    }
  }
  FassConfig fass;
  fass.t_factor = r.t_factor;
  fass.seed = seed;

  Batch batch;
  switch (kind) {
    case StrategyKind::kRandom:
      batch = select_top(score_random(seed, pool.sentences.size()), index, cands, r.budget, r.mode);
      break;
    case StrategyKind::kDiv: {
      fass.filter = FassFilter::kRandom;
      const std::vector<double> flat(pool.sentences.size(), 0.0);
      batch = fass_select(flat, embeddings, dim, lengths, cands, r.budget, fass);
      break;
    }
    case StrategyKind::kUs:
    case StrategyKind::kBald:
      batch = select_top(pool_uncertainty(r.predictions_path), index, cands, r.budget, r.mode);
      break;
    case StrategyKind::kUsDiv:
      batch = fass_select(pool_uncertainty(r.predictions_path), embeddings, dim, lengths, cands,
                          r.budget, fass);
      break;
    case StrategyKind::kUsEdgExt2:
    case StrategyKind::kBaldEdgExt2:
    case StrategyKind::kUsDivEdgExt2: {
      UncertaintySnapshot current{0, pool_uncertainty(r.predictions_path)};
      std::vector<double> scores = current.scores;
      if (alternation_policy(r.batch_index) == ScoreSource::kDecayScore) {
        UncertaintySnapshot lagged{0, pool_uncertainty(r.lagged_predictions_path)};
        scores = score_uncertainty_decay(current, lagged);
      }
      batch = kind == StrategyKind::kUsDivEdgExt2
                  ? fass_select(scores, embeddings, dim, lengths, cands, r.budget, fass)
                  : select_top(scores, index, cands, r.budget, r.mode);
      break;
    }
    case StrategyKind::kEdg:
    case StrategyKind::kEdgExt1: {
      if (r.history_path.empty() || r.partitions_dir.empty())
        throw ConfigError("strategy " + r.strategy + " needs --history and --partitions");
      const auto history = load_history(r.history_path);
      const auto train =
          r.train_path.empty() ? Dataset{} : parse_conll_file(r.train_path).dataset;
      const auto val = r.validation_path.empty()
                           ? Dataset{}
                           : parse_conll_file(r.validation_path, DatasetRole::kValidation).dataset;
      const EmbeddingTable* tp = table ? &*table : nullptr;
      std::size_t da_tokens = pool.token_count() + val.token_count() + train.token_count();
      SelectionState state(r.epsilon ? *r.epsilon : default_epsilon(da_tokens), r.budget);
      std::vector<ProfileTable> profiles;
      for (std::size_t p = 0; p < history.partitions.size(); ++p) {
        const auto part = load_partition(r.partitions_dir, history.partitions[p]);
        if (!part)
          throw ConfigError("partition file for " + history.partitions[p] + " not found");
        const auto records = history.records(p);
        FitConfig fc;
        fc.seed = mix_seed(r.seed, 0x464954 + r.batch_index * 131 + p);
        const auto fit = fit_decay(records, default_weights(records), fc);
        profiles.push_back(build_profiles(*part, pool, tp));
        MassVector da = group_mass(*part, pool, tp);
        const auto vm = group_mass(*part, val, tp);
        const auto tm = group_mass(*part, train, tp);
        for (std::size_t g = 0; g < da.masses.size(); ++g)
          da.masses[g] += vm.masses[g] + tm.masses[g];
        state.add_partition(fit.params, tm, da);
      }
      batch = select_batch(state, profiles, index, cands, r.mode);
      break;
    }
  }
  std::vector<std::size_t> ids;
  for (std::size_t pos : batch.sentences) ids.push_back(pool.sentences[pos].id);
  return ids;
}

}  // namespace edg
