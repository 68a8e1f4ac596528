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

// Command-line front end. Exit codes: 0 success, 1 validation, 2 backend,
// 3 internal.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gcrec/common.hpp"
#include "gcrec/pipeline.hpp"

namespace {

using nlohmann::json;

enum ExitCode { kOk = 0, kValidation = 1, kBackend = 2, kInternal = 3 };

struct Flags {
  std::string config;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> strategy;
  std::optional<std::string> graph_edges;
  std::optional<int> num_layers;
  std::optional<int> epochs;
  std::optional<std::string> scores;
  bool retrain = false;
};

// Flags override file values through a JSON merge patch.
json Overrides(const Flags& f) {
  json o = json::object();
  if (f.output_dir) o["output_dir"] = *f.output_dir;
  if (f.seed) o["seed"] = *f.seed;
  if (f.variant) o["variant"] = *f.variant;
  if (f.graph_edges) o["graph_edges"] = *f.graph_edges;
  if (f.strategy) o["inference"]["strategy"] = *f.strategy;
  if (f.num_layers) o["inference"]["num_layers"] = *f.num_layers;
  if (f.epochs) o["train"]["epochs"] = *f.epochs;
  if (f.scores) o["eval"]["scores"] = *f.scores;
  if (f.retrain) o["eval"]["retrain_per_run"] = true;
  return o;
}

int Run(const std::string& command, const Flags& flags) {
  try {
    const gcrec::PipelineConfig config = gcrec::LoadPipelineConfig(flags.config, Overrides(flags));
    gcrec::StageResult r;
    if (command == "prepare") {
      r = gcrec::RunPrepare(config);
    } else if (command == "infer") {
      r = gcrec::RunInfer(config);
    } else if (command == "encode") {
      r = gcrec::RunEncode(config);
    } else if (command == "train") {
      r = gcrec::RunTrain(config);
    } else if (command == "evaluate") {
      r = gcrec::RunEvaluate(config);
    } else if (command == "token-report") {
      r = gcrec::RunTokenReport(config);
    } else {
      r = gcrec::RunSftExport(config);
    }
    std::cout << command << ": wrote " << (r.dir / "manifest.json").string() << "\n";
    return kOk;
  } catch (const gcrec::BackendError& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& a : e.attempts()) std::cerr << "  " << a << "\n";
    return kBackend;
  } catch (const gcrec::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-aware LLM description enrichment for recommendation"};
  app.require_subcommand(1);
  Flags flags;
  std::string command;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"prepare", "Load data, build the graph and split, write artifacts"},
      {"infer", "Rewrite descriptions layer by layer with the LLM backend"},
      {"encode", "Embed every description layer"},
      {"train", "Train the recommender for the selected variant"},
      {"evaluate", "Top-n evaluation with sampled negatives"},
      {"token-report", "Node-visit cost of convolutional vs plain inference"},
      {"sft-export", "Export fine-tuning pairs from train edges"}};

  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", flags.config, "JSON config file")->required();
    sub->add_option("--output-dir", flags.output_dir, "Output directory");
    sub->add_option("--seed", flags.seed, "Global seed");
    sub->add_option("--variant", flags.variant, "Model variant")
        ->check(CLI::IsMember({"full", "raw", "plain", "no_align", "mf"}));
    sub->add_option("--strategy", flags.strategy, "Inference strategy override")
        ->check(CLI::IsMember({"convolutional", "plain", "raw"}));
    sub->add_option("--graph-edges", flags.graph_edges, "Edges visible to inference/model")
        ->check(CLI::IsMember({"train", "all"}));
    sub->add_option("--num-layers", flags.num_layers, "Description layers L");
    sub->add_option("--epochs", flags.epochs, "Training epochs");
    sub->add_option("--scores", flags.scores, "External score TSV for evaluate");
    sub->add_flag("--retrain", flags.retrain, "Retrain per evaluation run");
    sub->callback([&command, name = name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  return Run(command, flags);
}
