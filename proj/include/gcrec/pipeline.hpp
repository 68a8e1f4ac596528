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

// Pipeline stages behind the command-line tool. Every stage writes its
// artifacts plus a manifest.json holding the redacted config snapshot, the
// seed and SHA-256 hashes of inputs, upstream manifests and artifacts.

#ifndef GCREC_PIPELINE_HPP_
#define GCREC_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "gcrec/conv_inference.hpp"
#include "gcrec/evaluation.hpp"
#include "gcrec/http_transport.hpp"
#include "gcrec/llm_gateway.hpp"
#include "gcrec/model.hpp"
#include "gcrec/text_encoder.hpp"
#include "gcrec/training.hpp"

namespace gcrec {

struct PipelineConfig {
  std::filesystem::path users_path;
  std::filesystem::path items_path;
  std::filesystem::path interactions_path;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  // Edges visible to inference and the model: "train" or "all".
  std::string graph_edges = "train";
  Variant variant = Variant::kFull;
  // Strategy override for infer/encode; defaults to the variant's strategy.
  std::optional<Strategy> strategy;

  PropagationConfig propagation;
  std::string llm_backend = "mock";  // "mock" or "remote"
  RemoteLlmConfig llm;
  GatewayOptions gateway;

  EncoderConfig encoder;
  TrainConfig train;
  EvalProtocol eval;
  std::filesystem::path scores_path;  // external scorer TSV for evaluate

  // Merged, interpolated JSON with secrets redacted.
  nlohmann::json snapshot;

  Strategy effective_strategy() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> ProcessEnv(const std::string& name);

// Replaces ${VAR} in every string value; unknown variables are errors.
nlohmann::json InterpolateEnv(const nlohmann::json& value, const EnvLookup& env);

// `doc` is the config file merged with flag overrides. Relative paths resolve
// against `base_dir`.
PipelineConfig ParsePipelineConfig(const nlohmann::json& doc,
                                   const std::filesystem::path& base_dir,
                                   const EnvLookup& env = ProcessEnv);
PipelineConfig LoadPipelineConfig(const std::filesystem::path& path,
                                  const nlohmann::json& overrides,
                                  const EnvLookup& env = ProcessEnv);

// Injection points for tests: transports for remote backends.
struct PipelineHooks {
  std::shared_ptr<HttpTransport> llm_transport;
  std::shared_ptr<HttpTransport> encoder_transport;
  std::shared_ptr<LlmBackend> llm_backend;  // overrides the configured backend
};

struct StageResult {
  std::filesystem::path dir;
  nlohmann::json manifest;
};

StageResult RunPrepare(const PipelineConfig& config);
StageResult RunInfer(const PipelineConfig& config, const PipelineHooks& hooks = {});
StageResult RunEncode(const PipelineConfig& config, const PipelineHooks& hooks = {});
// Trains config.variant; Variant::kMf trains the ID-only baseline.
StageResult RunTrain(const PipelineConfig& config);
StageResult RunEvaluate(const PipelineConfig& config);
StageResult RunTokenReport(const PipelineConfig& config);
StageResult RunSftExport(const PipelineConfig& config);

std::filesystem::path PrepareDir(const PipelineConfig& config);
std::filesystem::path InferDir(const PipelineConfig& config, Strategy strategy);
std::filesystem::path EncodeDir(const PipelineConfig& config, Strategy strategy);
std::filesystem::path TrainDir(const PipelineConfig& config, Variant variant);
std::filesystem::path EvalDir(const PipelineConfig& config);

// Strategy whose description layers feed a model variant.
Strategy StrategyForVariant(Variant variant);

}  // namespace gcrec

#endif  // GCREC_PIPELINE_HPP_
