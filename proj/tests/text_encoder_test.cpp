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
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "gcrec/text_encoder.hpp"
#include "test_support.hpp"

namespace gcrec {
namespace {

using testing::MakeDataset;
using testing::ScriptedTransport;
using testing::TempDir;

// Reference FNV-1a, written out from its published constants.
std::uint64_t ReferenceFnv(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

EncoderConfig Hashed(int dim) {
  EncoderConfig c;
  c.dim = dim;
  return c;
}

EncoderConfig Remote(int dim, std::filesystem::path cache = {}) {
  EncoderConfig c;
  c.backend = EncoderBackend::kRemote;
  c.dim = dim;
  c.endpoint = "http://enc/embed";
  c.cache_path = std::move(cache);
  c.sleep = [](std::chrono::milliseconds) {};
  return c;
}

// Replies with deterministic vectors of the requested size per text.
HttpResponse EmbeddingReply(const std::string& body, int dim) {
  const auto req = nlohmann::json::parse(body);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& t : req["texts"]) {
    nlohmann::json row = nlohmann::json::array();
    const auto h = ReferenceFnv(t.get<std::string>());
    for (int k = 0; k < dim; ++k) row.push_back(static_cast<double>((h >> (k % 60)) & 7) * 0.25);
    rows.push_back(row);
  }
  return {200, nlohmann::json{{"embeddings", rows}}.dump(), ""};
}

class EchoTransport final : public HttpTransport {
 public:
  explicit EchoTransport(int dim) : dim_(dim) {}
  HttpResponse PostJson(const std::string&, const std::string& body,
                        const HttpHeaders&) override {
    ++calls_;
    return EmbeddingReply(body, dim_);
  }
  int calls() const { return calls_; }

 private:
  int dim_;
  int calls_ = 0;
};

TEST(HashedEmbeddingTest, EmptyTextIsZero) {
  TextEncoder enc(EncoderConfig{});
  const Eigen::VectorXd v = enc.Encode("");
  ASSERT_EQ(v.size(), 768);
  EXPECT_EQ(v.squaredNorm(), 0.0);
  EXPECT_EQ(HashedEmbedding("   ", 768).squaredNorm(), 0.0);
}

TEST(HashedEmbeddingTest, SecondCallIsCacheHit) {
  TextEncoder enc(EncoderConfig{});
  const auto a = enc.Encode("same text");
  EXPECT_EQ(enc.cache_hits(), 0);
  const auto b = enc.Encode("same text");
  EXPECT_EQ(enc.cache_hits(), 1);
  EXPECT_EQ(a, b);
}

TEST(HashedEmbeddingTest, HandEvaluatedBuckets) {
  const int dim = 768;
  const std::size_t ba = ReferenceFnv("a") % dim, bb = ReferenceFnv("b") % dim;
  ASSERT_NE(ba, bb);
  const Eigen::VectorXd v = HashedEmbedding("a a b", dim);
  int nonzero = 0;
  for (int k = 0; k < dim; ++k) nonzero += v[k] != 0.0;
  EXPECT_EQ(nonzero, 2);
  EXPECT_NEAR(v[static_cast<Eigen::Index>(ba)], 2.0 / std::sqrt(5.0), 1e-15);
  EXPECT_NEAR(v[static_cast<Eigen::Index>(bb)], 1.0 / std::sqrt(5.0), 1e-15);
  EXPECT_NEAR(v.norm(), 1.0, 1e-15);
}

TEST(HashedEmbeddingTest, UnitNormAndOrderInvariance) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> word(0, 40), len(1, 12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> toks(static_cast<std::size_t>(len(rng)));
    for (auto& t : toks) t = "w" + std::to_string(word(rng));
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& t : v) s += t + " ";
      return s;
    };
    const auto a = HashedEmbedding(join(toks), 64);
    std::shuffle(toks.begin(), toks.end(), rng);
    const auto b = HashedEmbedding(join(toks), 64);
    EXPECT_NEAR(a.norm(), 1.0, 1e-9);
    EXPECT_TRUE(a.allFinite());
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(EncodeLayersTest, RawLayersGiveIdenticalRows) {
  const Dataset d = MakeDataset({"a b", "c"}, {"d e f"}, {{0, 0}, {1, 0}});
  DescriptionLayers layers = InitLayers(d);
  layers.layers.push_back(layers.layers[0]);
  layers.layers.push_back(layers.layers[0]);
  TextEncoder enc(Hashed(16));
  const auto t = EncodeLayers(layers, enc);
  ASSERT_EQ(t.num_layers(), 3);
  for (int l = 1; l < 3; ++l) {
    EXPECT_EQ(t.users[l], t.users[0]);
    EXPECT_EQ(t.items[l], t.items[0]);
  }
}

TEST(EncodeLayersTest, ShapeFiveNodesTwoLayers) {
  const Dataset d = MakeDataset({"a", "b", "c"}, {"d", "e"}, {});
  DescriptionLayers layers = InitLayers(d);
  layers.layers.push_back({"1", "2", "3", "4", "5"});
  TextEncoder enc(Hashed(8));
  const auto t = EncodeLayers(layers, enc);
  std::size_t vectors = 0;
  for (int l = 0; l < t.num_layers(); ++l) vectors += t.users[l].rows() + t.items[l].rows();
  EXPECT_EQ(vectors, 10u);
  EXPECT_EQ(t.dim(), 8);
}

TEST(RemoteEncoderTest, WarmCacheMakesNoCalls) {
  TempDir tmp;
  const auto cache = tmp.path() / "cache.bin";
  const std::vector<std::string> texts = {"x y", "z", "x y", ""};
  auto first = std::make_shared<EchoTransport>(6);
  std::vector<Eigen::VectorXd> cold;
  {
    TextEncoder enc(Remote(6, cache), first);
    cold = enc.EncodeBatch(texts);
    enc.SaveCache();
  }
  EXPECT_EQ(first->calls(), 1);
  auto second = std::make_shared<EchoTransport>(6);
  TextEncoder enc(Remote(6, cache), second);
  const auto warm = enc.EncodeBatch(texts);
  EXPECT_EQ(second->calls(), 0);
  EXPECT_EQ(enc.remote_calls(), 0);
  ASSERT_EQ(warm.size(), cold.size());
  for (std::size_t k = 0; k < warm.size(); ++k) EXPECT_EQ(warm[k], cold[k]);
}

TEST(RemoteEncoderTest, DimensionMismatchRejected) {
  auto transport = std::make_shared<EchoTransport>(5);
  TextEncoder enc(Remote(6), transport);
  try {
    enc.Encode("hello");
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos);
  }
}

TEST(RemoteEncoderTest, RetriesThenFails) {
  auto transport = std::make_shared<ScriptedTransport>();
  for (int k = 0; k < 3; ++k) transport->Push({502, "", ""});
  TextEncoder enc(Remote(4), transport);
  try {
    enc.Encode("q");
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_EQ(e.attempts().size(), 3u);
  }
  EXPECT_EQ(transport->calls(), 3);
}

TEST(RemoteEncoderTest, WireBodyAndBatching) {
  auto transport = std::make_shared<ScriptedTransport>();
  transport->Push(EmbeddingReply(R"({"texts":["a","b"]})", 3));
  transport->Push(EmbeddingReply(R"({"texts":["c"]})", 3));
  EncoderConfig c = Remote(3);
  c.batch_size = 2;
  TextEncoder enc(c, transport);
  const std::vector<std::string> texts = {"a", "b", "c"};
  enc.EncodeBatch(texts);
  ASSERT_EQ(transport->calls(), 2);
  EXPECT_EQ(nlohmann::json::parse(transport->bodies()[0])["texts"],
            nlohmann::json({"a", "b"}));
  EXPECT_EQ(nlohmann::json::parse(transport->bodies()[1])["texts"], nlohmann::json({"c"}));
}

TEST(RemoteEncoderTest, ConfigErrors) {
  EXPECT_THROW(TextEncoder(Hashed(0)), ValidationError);
  EXPECT_THROW(TextEncoder(Remote(4), nullptr), ValidationError);
}

TEST(EncodeLayersTest, ErrorsNameTheLayer) {
  const Dataset d = MakeDataset({"a"}, {"b"}, {{0, 0}});
  auto transport = std::make_shared<ScriptedTransport>();
  transport->Push({400, "bad", ""});
  TextEncoder enc(Remote(4), transport);
  try {
    EncodeLayers(InitLayers(d), enc);
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
}

TEST(TextTableTest, SerializationRoundTripAndHashCheck) {
  const Dataset d = MakeDataset({"a b", "c"}, {"d", "e f g"}, {{0, 0}});
  DescriptionLayers layers = InitLayers(d);
  layers.layers.push_back({"p", "q", "r", "s"});
  TextEncoder enc(Hashed(12));
  const auto table = EncodeLayers(layers, enc);
  const std::string bytes = SerializeTextTable(table);
  const auto back = DeserializeTextTable(bytes);
  ASSERT_EQ(back.num_layers(), 2);
  for (int l = 0; l < 2; ++l) {
    EXPECT_LE((back.users[l] - table.users[l]).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LE((back.items[l] - table.items[l]).cwiseAbs().maxCoeff(), 1e-7);
  }
  EXPECT_EQ(SerializeTextTable(back), bytes);
  std::string bad = bytes;
  bad[30] ^= 1;
  EXPECT_THROW(DeserializeTextTable(bad), ValidationError);
}

}  // namespace
}  // namespace gcrec
