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

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "gcrec/conv_inference.hpp"
#include "gcrec/llm_gateway.hpp"
#include "gcrec/prompt.hpp"
#include "test_support.hpp"

namespace gcrec {
namespace {

using testing::CountingBackend;
using testing::MakeDataset;
using testing::NoSleep;
using testing::ScriptedTransport;

const PromptTemplate kUser = DefaultTemplate(PromptTask::kJobUser);

std::string Mock(std::string_view target, std::vector<std::string> neighbors,
                 std::size_t max_tokens = 512) {
  const auto lib = DefaultTemplates();
  const RenderedPrompt p = RenderPrompt(target, neighbors, kUser, RenderBudget{});
  return MockComplete(p.text, max_tokens, lib);
}

TEST(RenderPromptTest, FillsTargetAndNeighborSlots) {
  const std::vector<std::string> jobs = {"J1", "J2"};
  const RenderedPrompt p = RenderPrompt("R", jobs, kUser, RenderBudget{});
  EXPECT_EQ(p.text,
            "Please make appropriate improvements and revisions to the user’s resume by "
            "inferring from his/her resume and his interested job descriptions to generate "
            "a more concise resume. The user’s resume is: [R]. The job descriptions that "
            "interest the user are: [J1, J2].");
  EXPECT_EQ(p.neighbors_used, 2u);
  EXPECT_FALSE(p.truncated);
}

TEST(RenderPromptTest, ZeroNeighborsUsesSentinel) {
  const RenderedPrompt p = RenderPrompt("R", {}, kUser, RenderBudget{});
  EXPECT_NE(p.text.find(kUser.no_neighbors), std::string::npos);
  EXPECT_EQ(p.text.find(kUser.neighbor_label), std::string::npos);
  EXPECT_EQ(p.text.find("[]"), std::string::npos);
  EXPECT_EQ(p.neighbors_used, 0u);
}

TEST(RenderPromptTest, BudgetTooSmallForTargetThrows) {
  RenderBudget b;
  b.max_prompt_tokens = 5;
  EXPECT_THROW(RenderPrompt("R", {}, kUser, b), ValidationError);
}

TEST(RenderPromptTest, OverBudgetDropsTailNeighbors) {
  const std::vector<std::string> n = {"one two three", "four five six", "seven eight nine"};
  const std::size_t full = CountTokens(RenderPrompt("R", n, kUser, RenderBudget{}).text);
  RenderBudget b;
  b.max_prompt_tokens = full - 1;
  const RenderedPrompt p = RenderPrompt("R", n, kUser, b);
  EXPECT_TRUE(p.truncated);
  EXPECT_EQ(p.neighbors_used, 2u);
  EXPECT_LE(CountTokens(p.text), b.max_prompt_tokens);
  EXPECT_EQ(p.text.find("seven"), std::string::npos);
}

TEST(RenderPromptTest, PerNeighborCharCapClips) {
  RenderBudget b;
  b.per_neighbor_char_cap = 7;
  const std::vector<std::string> n = {"abc def ghi"};
  const RenderedPrompt p = RenderPrompt("R", n, kUser, b);
  EXPECT_TRUE(p.truncated);
  EXPECT_NE(p.text.find("[abc def]."), std::string::npos) << p.text;
}

// Center user 0 with 50 item neighbors whose degrees vary; the cap keeps
// the 10 highest-degree items, ties by ascending index.
TEST(RenderPromptTest, NeighborCapFollowsDegreePolicy) {
  const Index items = 50, users = 6;
  std::vector<Interaction> edges;
  std::vector<int> degree(items, 1);
  for (Index i = 0; i < items; ++i) {
    edges.push_back({0, i});
    const int extra = (i * 7) % 5;
    for (int k = 1; k <= extra; ++k) edges.push_back({k, i});
    degree[i] += extra;
  }
  const Dataset d = MakeDataset(users, items, edges);
  const GraphTopology g = BuildGraph(d);

  std::vector<Index> order(items);
  for (Index i = 0; i < items; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    return degree[a] != degree[b] ? degree[a] > degree[b] : a < b;
  });
  std::vector<std::string> expect;
  for (int k = 0; k < 10; ++k) expect.push_back("item" + std::to_string(order[k]));

  PropagationConfig cfg;
  cfg.neighbor_cap = 10;
  const auto layers = InitLayers(d);
  const auto p = ConvolutionalPrompt(layers, 1, g, cfg, 0);
  ASSERT_TRUE(p.has_value());
  EXPECT_EQ(p->neighbors_used, 10u);
  EXPECT_TRUE(p->truncated);
  const auto lib = DefaultTemplates();
  const ParsedPrompt parsed = ParsePrompt(p->text, lib);
  EXPECT_EQ(parsed.neighbors, expect);
}

TEST(RenderPromptTest, StructuralCharactersRoundTrip) {
  const std::vector<std::string> n = {"a, b [c] (d); e\\f"};
  const RenderedPrompt p = RenderPrompt("t, u", n, kUser, RenderBudget{});
  const auto lib = DefaultTemplates();
  const ParsedPrompt parsed = ParsePrompt(p.text, lib);
  EXPECT_EQ(parsed.target, "t, u");
  ASSERT_EQ(parsed.neighbors.size(), 1u);
  EXPECT_EQ(parsed.neighbors[0], n[0]);
}

TEST(RenderPromptTest, PureFunctionOfInputs) {
  const std::vector<std::string> n = {"x y", "z"};
  EXPECT_EQ(RenderPrompt("r", n, kUser, RenderBudget{}).text,
            RenderPrompt("r", n, kUser, RenderBudget{}).text);
}

TEST(TemplatesTest, ResourceFileMatchesDefaults) {
  const auto loaded =
      LoadTemplates(std::filesystem::path(GCREC_SOURCE_DIR) / "resources" / "prompts.json");
  const auto defaults = DefaultTemplates();
  ASSERT_EQ(loaded.size(), defaults.size());
  for (std::size_t k = 0; k < loaded.size(); ++k) {
    EXPECT_EQ(loaded[k].task, defaults[k].task);
    EXPECT_EQ(loaded[k].instruction, defaults[k].instruction);
    EXPECT_EQ(loaded[k].target_label, defaults[k].target_label);
    EXPECT_EQ(loaded[k].neighbor_label, defaults[k].neighbor_label);
    EXPECT_EQ(loaded[k].no_neighbors, defaults[k].no_neighbors);
    EXPECT_EQ(loaded[k].neighbor_relation, defaults[k].neighbor_relation);
    EXPECT_EQ(loaded[k].second_relation, defaults[k].second_relation);
  }
  EXPECT_THROW(ParseTemplates("{}"), ValidationError);
  EXPECT_THROW(ParseTemplates("[{\"task\":\"nope\"}]"), ValidationError);
}

TEST(MockCompleteTest, DedupUnion) {
  EXPECT_EQ(Mock("alpha beta", {"beta gamma"}), "alpha beta gamma");
}

TEST(MockCompleteTest, NoNeighborIdentity) { EXPECT_EQ(Mock("x", {}), "x"); }

TEST(MockCompleteTest, TokenCap) { EXPECT_EQ(Mock("a b", {"c d", "b e"}, 4), "a b c d"); }

TEST(MockCompleteTest, UnparseablePromptRejected) {
  const auto lib = DefaultTemplates();
  EXPECT_THROW(MockComplete("hello world", 10, lib), BackendError);
}

// Property: output preserves target tokens in order and draws only from
// target and neighbor tokens.
TEST(MockCompleteTest, OutputTokensComeFromInputs) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> word(0, 12), len(0, 5), count(0, 4);
  auto phrase = [&] {
    std::string s;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) s += (k ? " w" : "w") + std::to_string(word(rng));
    return s;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const std::string target = phrase();
    std::vector<std::string> nbrs(static_cast<std::size_t>(count(rng)));
    for (auto& n : nbrs) n = phrase();
    if (CountTokens(target) == 0) continue;
    const std::string out = Mock(target, nbrs);
    std::set<std::string> allowed;
    for (auto t : Tokenize(target)) allowed.emplace(t);
    for (const auto& n : nbrs) {
      for (auto t : Tokenize(n)) allowed.emplace(t);
    }
    for (auto t : Tokenize(out)) EXPECT_TRUE(allowed.contains(std::string(t)));
    // Target tokens deduplicated in order form the output prefix.
    std::vector<std::string> prefix;
    std::set<std::string> seen;
    for (auto t : Tokenize(target)) {
      if (seen.insert(std::string(t)).second) prefix.emplace_back(t);
    }
    const auto got = Tokenize(out);
    ASSERT_GE(got.size(), prefix.size());
    for (std::size_t k = 0; k < prefix.size(); ++k) EXPECT_EQ(got[k], prefix[k]);
  }
}

TEST(GatewayTest, MockIsDeterministic) {
  LlmGateway gw(std::make_shared<MockLlmBackend>(), NoSleep());
  const std::vector<std::string> n = {"c d"};
  CompletionRequest r{RenderPrompt("a b", n, kUser, RenderBudget{}).text, 64, 0.0, ""};
  const auto a = gw.Complete(r);
  const auto b = gw.Complete(r);
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(a.text, "a b c d");
  EXPECT_GE(a.usage.input, 0);
  EXPECT_EQ(a.usage.output, 4);
}

TEST(GatewayTest, NonZeroTemperatureRejected) {
  LlmGateway gw(std::make_shared<MockLlmBackend>(), NoSleep());
  CompletionRequest r{RenderPrompt("a", {}, kUser, RenderBudget{}).text, 8, 0.7, ""};
  EXPECT_THROW(gw.Complete(r), ValidationError);
}

TEST(GatewayTest, MockNeverTouchesTransport) {
  auto transport = std::make_shared<ScriptedTransport>();
  auto counting = std::make_shared<CountingBackend>(std::make_shared<MockLlmBackend>());
  LlmGateway gw(counting, NoSleep());
  for (int k = 0; k < 5; ++k) {
    CompletionRequest r{RenderPrompt("a" + std::to_string(k), {}, kUser, RenderBudget{}).text,
                        8, 0.0, ""};
    gw.Complete(r);
  }
  EXPECT_EQ(counting->calls(), 5);
  EXPECT_EQ(transport->calls(), 0);
}

TEST(GatewayTest, ThreeServerErrorsExhaustRetries) {
  auto transport = std::make_shared<ScriptedTransport>();
  for (int k = 0; k < 3; ++k) transport->Push({500, "oops", ""});
  std::vector<std::chrono::milliseconds> sleeps;
  GatewayOptions opts;
  opts.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d); };
  LlmGateway gw(std::make_shared<RemoteLlmBackend>(RemoteLlmConfig{"http://h/v1", "m", ""},
                                                   transport),
                opts);
  try {
    gw.Complete({"p", 8, 0.0, "r1"});
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    ASSERT_EQ(e.attempts().size(), 3u);
    EXPECT_EQ(e.attempts()[0], "attempt 1: HTTP 500");
    EXPECT_EQ(e.attempts()[2], "attempt 3: HTTP 500");
  }
  EXPECT_EQ(transport->calls(), 3);
  ASSERT_EQ(sleeps.size(), 2u);
  EXPECT_EQ(sleeps[0], std::chrono::milliseconds(1000));
  EXPECT_EQ(sleeps[1], std::chrono::milliseconds(2000));
}

TEST(GatewayTest, RetryThenSuccess) {
  auto transport = std::make_shared<ScriptedTransport>();
  transport->Push({503, "", ""});
  transport->Push({200, R"({"text":"ok","usage":{"input_tokens":3,"output_tokens":1}})", ""});
  LlmGateway gw(std::make_shared<RemoteLlmBackend>(RemoteLlmConfig{"http://h", "m", ""},
                                                   transport),
                NoSleep());
  const auto r = gw.Complete({"p", 8, 0.0, ""});
  EXPECT_EQ(r.text, "ok");
  EXPECT_EQ(r.attempts, 2);
  EXPECT_EQ(r.usage.input, 3);
}

TEST(GatewayTest, ClientErrorIsNotRetried) {
  auto transport = std::make_shared<ScriptedTransport>();
  transport->Push({400, "bad", ""});
  LlmGateway gw(std::make_shared<RemoteLlmBackend>(RemoteLlmConfig{"http://h", "m", ""},
                                                   transport),
                NoSleep());
  EXPECT_THROW(gw.Complete({"p", 8, 0.0, ""}), BackendError);
  EXPECT_EQ(transport->calls(), 1);
}

TEST(GatewayTest, ErrorPayloadAndMalformedBody) {
  auto transport = std::make_shared<ScriptedTransport>();
  transport->Push({200, R"({"error":"overloaded"})", ""});
  transport->Push({200, "not json", ""});
  LlmGateway gw(std::make_shared<RemoteLlmBackend>(RemoteLlmConfig{"http://h", "m", ""},
                                                   transport),
                NoSleep());
  EXPECT_THROW(gw.Complete({"p", 8, 0.0, ""}), BackendError);
  EXPECT_THROW(gw.Complete({"p", 8, 0.0, ""}), BackendError);
}

TEST(GatewayTest, RemoteWireContract) {
  auto transport = std::make_shared<ScriptedTransport>();
  transport->Push({200, R"({"text":"hi"})", ""});
  LlmGateway gw(std::make_shared<RemoteLlmBackend>(
                    RemoteLlmConfig{"http://h/v1/complete", "m1", "secret"}, transport),
                NoSleep());
  gw.Complete({"the prompt", 16, 0.0, "req-9"});
  ASSERT_EQ(transport->bodies().size(), 1u);
  const auto body = nlohmann::json::parse(transport->bodies()[0]);
  EXPECT_EQ(body["model"], "m1");
  EXPECT_EQ(body["prompt"], "the prompt");
  EXPECT_EQ(body["max_tokens"], 16);
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["request_id"], "req-9");
  const auto& h = transport->headers()[0];
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h[0].first, "Authorization");
  EXPECT_EQ(h[0].second, "Bearer secret");
}

TEST(GatewayTest, OverlongResponseTruncatedWithFlag) {
  auto transport = std::make_shared<ScriptedTransport>();
  transport->Push({200, R"({"text":"one two three four five"})", ""});
  LlmGateway gw(std::make_shared<RemoteLlmBackend>(RemoteLlmConfig{"http://h", "m", ""},
                                                   transport),
                NoSleep());
  const auto r = gw.Complete({"p", 3, 0.0, ""});
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.text, "one two three");
}

TEST(GatewayTest, RequestIdCache) {
  auto counting = std::make_shared<CountingBackend>(std::make_shared<MockLlmBackend>());
  LlmGateway gw(counting, NoSleep());
  const std::string prompt = RenderPrompt("a", {}, kUser, RenderBudget{}).text;
  gw.Complete({prompt, 8, 0.0, "id"});
  gw.Complete({prompt, 8, 0.0, "id"});
  EXPECT_EQ(counting->calls(), 1);
  EXPECT_EQ(gw.cache_hits(), 1);
  // Same id with a different prompt is not served from the cache.
  gw.Complete({RenderPrompt("b", {}, kUser, RenderBudget{}).text, 8, 0.0, "id"});
  EXPECT_EQ(counting->calls(), 2);
}

// Backend that records the peak number of concurrent calls.
class SlowBackend final : public LlmBackend {
 public:
  CompletionResponse Complete(const CompletionRequest&) override {
    const int now = ++active_;
    int prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --active_;
    return {"x", {}, false, 1};
  }
  std::string name() const override { return "slow"; }
  int peak() const { return peak_.load(); }

 private:
  std::atomic<int> active_{0};
  std::atomic<int> peak_{0};
};

TEST(GatewayTest, InFlightLimitHolds) {
  auto backend = std::make_shared<SlowBackend>();
  LlmGateway gw(backend, NoSleep(2));
  std::vector<std::thread> threads;
  for (int k = 0; k < 8; ++k) {
    threads.emplace_back([&] { gw.Complete({"p", 8, 0.0, ""}); });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(backend->peak(), 2);
  EXPECT_EQ(gw.backend_calls(), 8);
}

const std::regex kItemToUser(
    "^Query: Given an item's description, generate a user's description that fits it\\. "
    "The item's description is (.*)\\. Answer:$");
const std::regex kUserToItem(
    "^Query: Given a user's description, generate an item's description that fits it\\. "
    "The user's description is (.*)\\. Answer:$");

TEST(SftTest, OneEdgeTwoPairs) {
  const Dataset d = MakeDataset({"resume text"}, {"job text"}, {{0, 0}});
  Split s;
  s.train = {{0, 0}};
  const auto pairs = BuildSftPairs(d, s);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].direction, SftDirection::kItemToUser);
  EXPECT_EQ(pairs[0].query, SftQuery(SftDirection::kItemToUser, "job text"));
  EXPECT_EQ(pairs[0].answer, "resume text");
  EXPECT_EQ(pairs[1].direction, SftDirection::kUserToItem);
  EXPECT_EQ(pairs[1].answer, "job text");
}

TEST(SftTest, UserWithoutTrainEdgesContributesNothing) {
  const Dataset d = MakeDataset({"a", "lonely"}, {"p"}, {{0, 0}});
  Split s;
  s.train = {{0, 0}};
  for (const auto& p : BuildSftPairs(d, s)) {
    EXPECT_EQ(p.query.find("lonely"), std::string::npos);
    EXPECT_NE(p.answer, "lonely");
  }
  s.train.clear();
  EXPECT_THROW(BuildSftPairs(d, s), ValidationError);
}

TEST(SftTest, NineTrainEdgesEighteenLines) {
  const auto dir = testing::FixtureDir("small");
  const Dataset d =
      LoadDataset(dir / "users.jsonl", dir / "items.jsonl", dir / "interactions.tsv");
  Split s;
  s.train = d.interactions();
  ASSERT_EQ(s.train.size(), 9u);
  testing::TempDir tmp;
  ExportSftPairs(d, s, tmp.path() / "sft.jsonl");
  std::ifstream in(tmp.path() / "sft.jsonl");
  std::vector<nlohmann::json> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(lines.size(), 18u);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const std::string q = lines[k]["query"];
    const std::string dir_name = lines[k]["direction"];
    const Interaction e = s.train[k / 2];
    std::smatch m;
    if (k % 2 == 0) {
      EXPECT_EQ(dir_name, "item_to_user");
      ASSERT_TRUE(std::regex_match(q, m, kItemToUser)) << q;
      EXPECT_EQ(m[1].str(), d.items()[e.item].description);
      EXPECT_EQ(lines[k]["answer"], d.users()[e.user].description);
    } else {
      EXPECT_EQ(dir_name, "user_to_item");
      ASSERT_TRUE(std::regex_match(q, m, kUserToItem)) << q;
      EXPECT_EQ(m[1].str(), d.users()[e.user].description);
      EXPECT_EQ(lines[k]["answer"], d.items()[e.item].description);
    }
  }
}

}  // namespace
}  // namespace gcrec
