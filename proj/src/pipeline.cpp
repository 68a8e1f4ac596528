// Copyright 2026 The gcrec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gcrec/pipeline.hpp"

#include <cstdlib>
#include <map>
#include <regex>

#include "gcrec/common.hpp"

namespace gcrec {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr char kManifest[] = "manifest.json";

// ---- config parsing ----

template <typename T>
T Get(const json& obj, const char* key, T fallback, const std::string& section) {
  if (!obj.is_object() || !obj.contains(key) || obj[key].is_null()) return fallback;
  try {
    return obj[key].get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: '" + section + key + "' has the wrong type");
  }
}

json Section(const json& doc, const char* key) {
  if (!doc.contains(key)) return json::object();
  if (!doc[key].is_object()) {
    throw ValidationError(std::string("config: '") + key + "' must be an object");
  }
  return doc[key];
}

bool IsSecretKey(const std::string& key) {
  static const std::regex kSecret("(api_?key|token|secret|password)", std::regex::icase);
  return std::regex_search(key, kSecret);
}

json Redact(const json& value) {
  if (value.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : value.items()) {
      out[k] = IsSecretKey(k) && v.is_string() && !v.get<std::string>().empty()
                   ? json("<redacted>")
                   : Redact(v);
    }
    return out;
  }
  if (value.is_array()) {
    json out = json::array();
    for (const auto& v : value) out.push_back(Redact(v));
    return out;
  }
  return value;
}

fs::path Resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

// ---- manifests ----

json HashFiles(const fs::path& dir, const std::vector<std::string>& names) {
  json out = json::object();
  for (const auto& n : names) out[n] = Sha256File(dir / n);
  return out;
}

json MakeManifest(const std::string& stage, const PipelineConfig& config,
                  std::uint64_t seed, json inputs, json upstream, json artifacts) {
  return {{"stage", stage},
          {"config", config.snapshot},
          {"seed", seed},
          {"inputs", std::move(inputs)},
          {"upstream", std::move(upstream)},
          {"artifacts", std::move(artifacts)}};
}

void WriteManifest(const fs::path& dir, const json& manifest) {
  WriteFileAtomic(dir / kManifest, manifest.dump(2) + "\n");
}

// Reads an upstream manifest and checks that its artifacts are unchanged.
json ReadUpstream(const fs::path& dir, const std::string& stage) {
  const fs::path path = dir / kManifest;
  if (!fs::exists(path)) {
    throw ValidationError("missing upstream manifest " + path.string() + "; run '" + stage +
                          "' first");
  }
  json m;
  try {
    m = json::parse(ReadFile(path));
  } catch (const json::parse_error&) {
    throw ValidationError("corrupt manifest " + path.string());
  }
  for (const auto& [name, hash] : m.at("artifacts").items()) {
    const fs::path artifact = dir / name;
    if (!fs::exists(artifact)) {
      throw ValidationError("upstream artifact " + artifact.string() + " is missing; rerun '" +
                            stage + "'");
    }
    if (Sha256File(artifact) != hash.get<std::string>()) {
      throw ValidationError("upstream artifact " + artifact.string() +
                            " does not match its manifest hash; rerun '" + stage + "'");
    }
  }
  return m;
}

json InputHashes(const PipelineConfig& c) {
  return {{"users", Sha256File(c.users_path)},
          {"items", Sha256File(c.items_path)},
          {"interactions", Sha256File(c.interactions_path)}};
}

struct Inputs {
  Dataset dataset;
  Split split;
  json prepare_manifest_hash;
};

// Dataset and split, checked against the prepare manifest.
Inputs LoadInputs(const PipelineConfig& c) {
  const fs::path dir = PrepareDir(c);
  const json manifest = ReadUpstream(dir, "prepare");
  if (manifest.at("inputs") != InputHashes(c)) {
    throw ValidationError("dataset files changed since 'prepare'; rerun 'prepare'");
  }
  Inputs in;
  in.dataset = LoadDataset(c.users_path, c.items_path, c.interactions_path);
  in.split = SplitFromJson(in.dataset, ReadFile(dir / "split.json"));
  in.prepare_manifest_hash = Sha256File(dir / kManifest);
  return in;
}

GraphTopology ModelGraph(const PipelineConfig& c, const Inputs& in) {
  if (c.graph_edges == "all") return BuildGraph(in.dataset);
  return BuildGraph(in.dataset.num_users(), in.dataset.num_items(), in.split.train);
}

std::vector<std::string> LayerFileNames(int num_layers) {
  std::vector<std::string> names;
  for (int l = 1; l <= num_layers; ++l) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "layer_%02d.jsonl", l);
    names.emplace_back(buf);
  }
  return names;
}

std::shared_ptr<LlmBackend> MakeLlmBackend(const PipelineConfig& c, const PipelineHooks& h) {
  if (h.llm_backend) return h.llm_backend;
  if (c.llm_backend == "mock") return std::make_shared<MockLlmBackend>(c.propagation.templates);
  if (c.llm.endpoint.empty()) {
    throw ValidationError("remote LLM backend needs an endpoint (set LLM_ENDPOINT)");
  }
  auto transport = h.llm_transport ? h.llm_transport : std::make_shared<HttplibTransport>();
  return std::make_shared<RemoteLlmBackend>(c.llm, transport);
}

}  // namespace

std::optional<std::string> ProcessEnv(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

Strategy StrategyForVariant(Variant variant) {
  switch (variant) {
    case Variant::kRaw:
      return Strategy::kRaw;
    case Variant::kPlain:
      return Strategy::kPlain;
    default:
      return Strategy::kConvolutional;
  }
}

Strategy PipelineConfig::effective_strategy() const {
  return strategy ? *strategy : StrategyForVariant(variant);
}

json InterpolateEnv(const json& value, const EnvLookup& env) {
  if (value.is_string()) {
    static const std::regex kVar(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
    const std::string s = value.get<std::string>();
    std::string out;
    auto begin = std::sregex_iterator(s.begin(), s.end(), kVar);
    std::size_t last = 0;
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      out += s.substr(last, static_cast<std::size_t>(m.position()) - last);
      const auto v = env(m[1].str());
      if (!v) throw ValidationError("config references unset environment variable " + m[1].str());
      out += *v;
      last = static_cast<std::size_t>(m.position() + m.length());
    }
    out += s.substr(last);
    return out;
  }
  if (value.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : value.items()) out[k] = InterpolateEnv(v, env);
    return out;
  }
  if (value.is_array()) {
    json out = json::array();
    for (const auto& v : value) out.push_back(InterpolateEnv(v, env));
    return out;
  }
  return value;
}

PipelineConfig ParsePipelineConfig(const json& raw, const fs::path& base_dir,
                                   const EnvLookup& env) {
  if (!raw.is_object()) throw ValidationError("config must be a JSON object");
  const json doc = InterpolateEnv(raw, env);
  PipelineConfig c;

  const json data = Section(doc, "data");
  c.users_path = Resolve(base_dir, Get<std::string>(data, "users", "", "data."));
  c.items_path = Resolve(base_dir, Get<std::string>(data, "items", "", "data."));
  c.interactions_path = Resolve(base_dir, Get<std::string>(data, "interactions", "", "data."));
  for (const auto& [name, path] : {std::pair{"data.users", &c.users_path},
                                   std::pair{"data.items", &c.items_path},
                                   std::pair{"data.interactions", &c.interactions_path}}) {
    if (path->empty()) throw ValidationError(std::string("config: '") + name + "' is required");
    if (!fs::exists(*path)) {
      throw ValidationError(std::string("config: ") + name + " file not found: " +
                            path->string());
    }
  }
  c.output_dir = Resolve(base_dir, Get<std::string>(doc, "output_dir", "out", ""));
  c.seed = Get<std::uint64_t>(doc, "seed", 0, "");
  c.graph_edges = Get<std::string>(doc, "graph_edges", "train", "");
  if (c.graph_edges != "train" && c.graph_edges != "all") {
    throw ValidationError("config: graph_edges must be 'train' or 'all'");
  }
  c.variant = ParseVariant(Get<std::string>(doc, "variant", "full", ""));

  const json inf = Section(doc, "inference");
  auto& p = c.propagation;
  p.num_layers = Get<int>(inf, "num_layers", p.num_layers, "inference.");
  p.neighbor_cap = Get<std::size_t>(inf, "neighbor_cap", p.neighbor_cap, "inference.");
  p.per_neighbor_char_cap =
      Get<std::size_t>(inf, "per_neighbor_char_cap", p.per_neighbor_char_cap, "inference.");
  p.prompt_budget = Get<std::size_t>(inf, "prompt_budget", p.prompt_budget, "inference.");
  p.max_output_tokens = Get<int>(inf, "max_output_tokens", p.max_output_tokens, "inference.");
  p.scenario = Get<std::string>(inf, "scenario", p.scenario, "inference.");
  p.workers = Get<int>(inf, "workers", p.workers, "inference.");
  const std::string templates = Get<std::string>(inf, "templates", "", "inference.");
  if (!templates.empty()) p.templates = LoadTemplates(Resolve(base_dir, templates));
  const std::string strategy = Get<std::string>(inf, "strategy", "", "inference.");
  if (!strategy.empty()) c.strategy = ParseStrategy(strategy);
  p.strategy = c.effective_strategy();
  p.Validate();

  const json llm = Section(doc, "llm");
  c.llm_backend = Get<std::string>(llm, "backend", "mock", "llm.");
  if (c.llm_backend != "mock" && c.llm_backend != "remote") {
    throw ValidationError("config: llm.backend must be 'mock' or 'remote'");
  }
  c.llm.endpoint = Get<std::string>(llm, "endpoint", env("LLM_ENDPOINT").value_or(""), "llm.");
  c.llm.api_key = Get<std::string>(llm, "api_key", env("LLM_API_KEY").value_or(""), "llm.");
  c.llm.model = Get<std::string>(llm, "model", "", "llm.");
  c.gateway.max_in_flight = Get<int>(llm, "max_in_flight", c.gateway.max_in_flight, "llm.");
  c.gateway.retry.max_attempts =
      Get<int>(llm, "max_attempts", c.gateway.retry.max_attempts, "llm.");
  c.gateway.retry.initial_backoff = std::chrono::milliseconds(Get<std::int64_t>(
      llm, "initial_backoff_ms", c.gateway.retry.initial_backoff.count(), "llm."));

  const json enc = Section(doc, "encoder");
  const std::string enc_backend = Get<std::string>(enc, "backend", "hashed", "encoder.");
  if (enc_backend == "hashed") {
    c.encoder.backend = EncoderBackend::kHashedFallback;
  } else if (enc_backend == "remote") {
    c.encoder.backend = EncoderBackend::kRemote;
  } else {
    throw ValidationError("config: encoder.backend must be 'hashed' or 'remote'");
  }
  c.encoder.dim = Get<int>(enc, "dim", c.encoder.dim, "encoder.");
  c.encoder.endpoint =
      Get<std::string>(enc, "endpoint", env("ENCODER_ENDPOINT").value_or(""), "encoder.");
  c.encoder.batch_size = Get<int>(enc, "batch_size", c.encoder.batch_size, "encoder.");
  c.encoder.retry = c.gateway.retry;
  if (c.encoder.backend == EncoderBackend::kRemote && c.encoder.endpoint.empty()) {
    throw ValidationError("remote encoder needs an endpoint (set ENCODER_ENDPOINT)");
  }

  const json tr = Section(doc, "train");
  auto& t = c.train;
  t.learning_rate = Get<double>(tr, "learning_rate", t.learning_rate, "train.");
  t.batch_size = Get<int>(tr, "batch_size", t.batch_size, "train.");
  t.lambda = Get<double>(tr, "lambda", t.lambda, "train.");
  t.epochs = Get<int>(tr, "epochs", t.epochs, "train.");
  t.patience = Get<int>(tr, "patience", t.patience, "train.");
  t.dim = Get<int>(tr, "dim", t.dim, "train.");
  t.weight_decay = Get<double>(tr, "weight_decay", t.weight_decay, "train.");
  t.seed = Get<std::uint64_t>(tr, "seed", c.seed, "train.");
  t.num_layers = p.num_layers;
  t.Validate();

  const json ev = Section(doc, "eval");
  auto& e = c.eval;
  e.n = Get<int>(ev, "n", e.n, "eval.");
  e.negatives_per_positive =
      Get<int>(ev, "negatives_per_positive", e.negatives_per_positive, "eval.");
  e.num_runs = Get<int>(ev, "num_runs", e.num_runs, "eval.");
  e.retrain_per_run = Get<bool>(ev, "retrain_per_run", e.retrain_per_run, "eval.");
  e.seed = Get<std::uint64_t>(ev, "seed", c.seed, "eval.");
  e.Validate();
  t.eval_n = e.n;
  t.eval_negatives = e.negatives_per_positive;
  c.scores_path = Resolve(base_dir, Get<std::string>(ev, "scores", "", "eval."));

  c.snapshot = Redact(doc);
  return c;
}

PipelineConfig LoadPipelineConfig(const fs::path& path, const json& overrides,
                                  const EnvLookup& env) {
  json doc = json::object();
  fs::path base = fs::current_path();
  if (!path.empty()) {
    if (!fs::exists(path)) throw ValidationError("config file not found: " + path.string());
    try {
      doc = json::parse(ReadFile(path));
    } catch (const json::parse_error& e) {
      throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    base = fs::absolute(path).parent_path();
  }
  doc.merge_patch(overrides);
  return ParsePipelineConfig(doc, base, env);
}

fs::path PrepareDir(const PipelineConfig& c) { return c.output_dir / "prepare"; }
fs::path InferDir(const PipelineConfig& c, Strategy s) {
  return c.output_dir / ("infer_" + std::string(StrategyName(s)));
}
fs::path EncodeDir(const PipelineConfig& c, Strategy s) {
  return c.output_dir / ("encode_" + std::string(StrategyName(s)));
}
fs::path TrainDir(const PipelineConfig& c, Variant v) {
  return c.output_dir / ("train_" + std::string(VariantName(v)));
}
fs::path EvalDir(const PipelineConfig& c) {
  if (!c.scores_path.empty()) return c.output_dir / "eval_external";
  return c.output_dir / ("eval_" + std::string(VariantName(c.variant)));
}

StageResult RunPrepare(const PipelineConfig& c) {
  const Dataset d = LoadDataset(c.users_path, c.items_path, c.interactions_path);
  const Split split = SplitDataset(d, c.seed);
  const GraphTopology graph = BuildGraph(d);
  const fs::path dir = PrepareDir(c);

  std::string nodes;
  for (Index v = 0; v < d.num_nodes(); ++v) {
    const bool user = d.kind(v) == NodeKind::kUser;
    nodes += json{{"kind", user ? "user" : "item"},
                  {"index", user ? v : v - d.num_users()},
                  {"id", d.node(v).id},
                  {"description", d.node(v).description}}
                 .dump() +
             "\n";
  }
  WriteFileAtomic(dir / "nodes.jsonl", nodes);
  WriteFileAtomic(dir / "user_index.tsv", IndexMappingTsv(d.users()));
  WriteFileAtomic(dir / "item_index.tsv", IndexMappingTsv(d.items()));
  WriteFileAtomic(dir / "graph.json", GraphToJson(d, graph));
  WriteFileAtomic(dir / "split.json", SplitToJson(d, split));

  const std::vector<std::string> names = {"nodes.jsonl", "user_index.tsv", "item_index.tsv",
                                          "graph.json", "split.json"};
  StageResult r{dir, MakeManifest("prepare", c, c.seed, InputHashes(c), json::object(),
                                  HashFiles(dir, names))};
  WriteManifest(dir, r.manifest);
  return r;
}

StageResult RunInfer(const PipelineConfig& c, const PipelineHooks& hooks) {
  const Inputs in = LoadInputs(c);
  const GraphTopology graph = ModelGraph(c, in);
  const Strategy strategy = c.effective_strategy();
  PropagationConfig prop = c.propagation;
  prop.strategy = strategy;
  const fs::path dir = InferDir(c, strategy);

  auto backend = MakeLlmBackend(c, hooks);
  // Checkpoints from a different configuration are discarded, never resumed.
  json templates = json::array();
  for (const auto& t : prop.templates) {
    templates.push_back({t.instruction, t.target_label, t.neighbor_label, t.no_neighbors,
                         t.neighbor_relation, t.second_relation, TaskName(t.task)});
  }
  const json fingerprint = {{"prepare", in.prepare_manifest_hash},
                            {"strategy", StrategyName(strategy)},
                            {"graph_edges", c.graph_edges},
                            {"num_layers", prop.num_layers},
                            {"neighbor_cap", prop.neighbor_cap},
                            {"per_neighbor_char_cap", prop.per_neighbor_char_cap},
                            {"prompt_budget", prop.prompt_budget},
                            {"max_output_tokens", prop.max_output_tokens},
                            {"scenario", prop.scenario},
                            {"templates", Sha256Hex(templates.dump())},
                            {"backend", backend->name()}};
  const fs::path run_file = dir / "run.json";
  if (fs::exists(run_file) && ReadFile(run_file) != fingerprint.dump(2) + "\n") {
    LogWarning("inference settings changed; discarding checkpoints in " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().filename().string().rfind("layer_", 0) == 0) fs::remove(entry.path());
    }
  }
  WriteFileAtomic(run_file, fingerprint.dump(2) + "\n");

  LlmGateway gateway(backend, c.gateway);
  LayerCheckpoint checkpoint(dir, in.dataset);
  const InferenceResult result = RunInference(in.dataset, graph, prop, gateway, &checkpoint);
  WriteFileAtomic(dir / "token_report.json", result.report.ToJson());

  auto names = LayerFileNames(prop.num_layers);
  names.push_back("token_report.json");
  StageResult r{dir, MakeManifest("infer", c, c.seed, json::object(),
                                  {{"prepare", in.prepare_manifest_hash}},
                                  HashFiles(dir, names))};
  r.manifest["backend"] = backend->name();
  r.manifest["backend_calls"] = gateway.backend_calls();
  WriteManifest(dir, r.manifest);
  return r;
}

StageResult RunEncode(const PipelineConfig& c, const PipelineHooks& hooks) {
  const Inputs in = LoadInputs(c);
  const Strategy strategy = c.effective_strategy();
  const fs::path infer_dir = InferDir(c, strategy);
  ReadUpstream(infer_dir, "infer");
  const DescriptionLayers layers = LoadLayers(in.dataset, infer_dir);
  if (layers.num_layers() != c.propagation.num_layers) {
    throw ValidationError("inference output has " + std::to_string(layers.num_layers()) +
                          " layers, config expects " +
                          std::to_string(c.propagation.num_layers));
  }
  const fs::path dir = EncodeDir(c, strategy);
  EncoderConfig enc = c.encoder;
  if (enc.backend == EncoderBackend::kRemote) enc.cache_path = c.output_dir / "encoder_cache.bin";
  std::shared_ptr<HttpTransport> transport;
  if (enc.backend == EncoderBackend::kRemote) {
    transport = hooks.encoder_transport ? hooks.encoder_transport
                                        : std::make_shared<HttplibTransport>();
  }
  TextEncoder encoder(enc, transport);
  const TextTable<double> table = EncodeLayers(layers, encoder);
  encoder.SaveCache();
  WriteFileAtomic(dir / "text_table.bin", SerializeTextTable(table));

  StageResult r{dir, MakeManifest("encode", c, c.seed, json::object(),
                                  {{"prepare", in.prepare_manifest_hash},
                                   {"infer", Sha256File(infer_dir / kManifest)}},
                                  HashFiles(dir, {"text_table.bin"}))};
  r.manifest["encoder"] = encoder.backend_id();
  WriteManifest(dir, r.manifest);
  return r;
}

namespace {

struct TrainInputs {
  TextTable<double> text;
  json upstream;
};

TrainInputs LoadTrainInputs(const PipelineConfig& c, const Inputs& in, Variant variant) {
  TrainInputs t;
  t.upstream = {{"prepare", in.prepare_manifest_hash}};
  if (variant == Variant::kMf) return t;
  const fs::path enc_dir = EncodeDir(c, c.strategy ? *c.strategy : StrategyForVariant(variant));
  ReadUpstream(enc_dir, "encode");
  t.text = DeserializeTextTable(ReadFile(enc_dir / "text_table.bin"));
  if (t.text.num_layers() != c.propagation.num_layers) {
    throw ValidationError("text table layer count does not match inference.num_layers");
  }
  t.upstream["encode"] = Sha256File(enc_dir / kManifest);
  return t;
}

TrainResult TrainVariant(const PipelineConfig& c, const Inputs& in, const TrainInputs& t,
                         Variant variant, std::uint64_t seed) {
  TrainConfig tc = c.train;
  tc.seed = seed;
  if (variant == Variant::kMf) return TrainMfBaseline(in.dataset, in.split, tc);
  const GraphTopology graph = ModelGraph(c, in);
  return Train(in.dataset, in.split, t.text, tc, variant, &graph);
}

}  // namespace

StageResult RunTrain(const PipelineConfig& c) {
  const Inputs in = LoadInputs(c);
  const TrainInputs t = LoadTrainInputs(c, in, c.variant);
  const fs::path dir = TrainDir(c, c.variant);
  const TrainResult result = TrainVariant(c, in, t, c.variant, c.train.seed);
  WriteFileAtomic(dir / "params.bin", SerializeParams(result.params));
  WriteFileAtomic(dir / "history.jsonl", HistoryJsonl(result.history));

  StageResult r{dir, MakeManifest("train", c, c.train.seed, json::object(), t.upstream,
                                  HashFiles(dir, {"params.bin"}))};
  // History carries wall-clock timings, so it is listed but not hashed.
  r.manifest["logs"] = json::array({"history.jsonl"});
  r.manifest["best_epoch"] = result.best_epoch;
  r.manifest["initial_val_ndcg"] = result.initial_val_ndcg;
  r.manifest["best_val_ndcg"] = result.best_val_ndcg;
  r.manifest["diverged"] = result.diverged;
  WriteManifest(dir, r.manifest);
  if (result.diverged) {
    throw NumericalError("training diverged (" + result.divergence +
                         "); last good checkpoint written to " + (dir / "params.bin").string());
  }
  return r;
}

StageResult RunEvaluate(const PipelineConfig& c) {
  const Inputs in = LoadInputs(c);
  const fs::path dir = EvalDir(c);
  json upstream = {{"prepare", in.prepare_manifest_hash}};
  MetricsReport report;

  if (!c.scores_path.empty()) {
    if (!fs::exists(c.scores_path)) {
      throw ValidationError("score file not found: " + c.scores_path.string());
    }
    const TableScorer scorer = LoadScoreTable(c.scores_path, in.dataset);
    upstream["scores"] = Sha256File(c.scores_path);
    report = Evaluate(scorer, in.dataset, in.split.test, c.eval);
  } else {
    const TrainInputs t = LoadTrainInputs(c, in, c.variant);
    upstream.update(t.upstream);
    const GraphTopology graph = ModelGraph(c, in);
    if (c.eval.retrain_per_run) {
      report = Evaluate(
          [&](int, std::uint64_t seed) -> std::shared_ptr<const Scorer> {
            const TrainResult tr = TrainVariant(c, in, t, c.variant, seed);
            return std::make_shared<EmbeddingScorer>(FinalEmbeddings(tr.params, graph, t.text));
          },
          in.dataset, in.split.test, c.eval);
    } else {
      const fs::path train_dir = TrainDir(c, c.variant);
      ReadUpstream(train_dir, "train");
      upstream["train"] = Sha256File(train_dir / kManifest);
      const ModelParams<double> params =
          DeserializeParams(ReadFile(train_dir / "params.bin"));
      const EmbeddingScorer scorer(FinalEmbeddings(params, graph, t.text));
      report = Evaluate(scorer, in.dataset, in.split.test, c.eval);
    }
  }

  WriteFileAtomic(dir / "metrics.json", report.ToJson());
  std::vector<std::string> names = {"metrics.json"};
  if (report.per_user_mean.size() >= 5) {
    const SubgroupReport groups = SubgroupAnalysis(report.per_user_mean, in.dataset);
    WriteFileAtomic(dir / "subgroups.json", groups.ToJson());
    names.push_back("subgroups.json");
  } else {
    LogWarning("fewer than 5 evaluated users; subgroup analysis skipped");
  }
  StageResult r{dir, MakeManifest("evaluate", c, c.eval.seed, json::object(), upstream,
                                  HashFiles(dir, names))};
  r.manifest["mode"] = c.eval.retrain_per_run ? "retrain_per_run" : "eval_reseed";
  WriteManifest(dir, r.manifest);
  return r;
}

StageResult RunTokenReport(const PipelineConfig& c) {
  const Inputs in = LoadInputs(c);
  const GraphTopology graph = ModelGraph(c, in);
  const fs::path dir = c.output_dir / "token_report";
  const int L = c.propagation.num_layers;
  const TokenCostReport conv = EstimateTokenCost(graph, L, Strategy::kConvolutional);
  const TokenCostReport plain = EstimateTokenCost(graph, L, Strategy::kPlain);
  const json out = {{"graph_edges", c.graph_edges},
                    {"convolutional", json::parse(conv.ToJson())},
                    {"plain", json::parse(plain.ToJson())}};
  WriteFileAtomic(dir / "token_report.json", out.dump(2) + "\n");
  StageResult r{dir, MakeManifest("token-report", c, c.seed, json::object(),
                                  {{"prepare", in.prepare_manifest_hash}},
                                  HashFiles(dir, {"token_report.json"}))};
  WriteManifest(dir, r.manifest);
  return r;
}

StageResult RunSftExport(const PipelineConfig& c) {
  const Inputs in = LoadInputs(c);
  const fs::path dir = c.output_dir / "sft";
  ExportSftPairs(in.dataset, in.split, dir / "sft_pairs.jsonl");
  StageResult r{dir, MakeManifest("sft-export", c, c.seed, json::object(),
                                  {{"prepare", in.prepare_manifest_hash}},
                                  HashFiles(dir, {"sft_pairs.jsonl"}))};
  WriteManifest(dir, r.manifest);
  return r;
}

}  // namespace gcrec
