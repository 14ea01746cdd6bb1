#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "cct/model.hpp"

namespace {

using cct::BlockStyle;
using cct::ModelConfig;

ModelConfig prenorm_config() {
  ModelConfig c;
  c.block_style = BlockStyle::prenorm_mlp;
  c.mlp_hidden = 32;
  c.layer_count = 2;
  return c;
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

TEST(ModelConfig, JsonRoundTripAndStrictEnums) {
  auto c = prenorm_config();
  c.bias_mode = cct::DurationBiasMode::multiplicative;
  c.tied_embeddings = true;
  const auto back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  auto doc = c.to_json();
  doc["block_style"] = "postnorm";
  EXPECT_THROW((void)ModelConfig::from_json(doc), std::invalid_argument);
  doc = c.to_json();
  doc["vocab_size"] = 1;
  EXPECT_THROW((void)ModelConfig::from_json(doc), std::invalid_argument);
}

TEST(Model, ArchiveNamingIsEnforced) {
  const auto model = cct::init_random(1, {});
  auto archive = model.archive();
  EXPECT_TRUE(archive.contains("embed.weight"));
  EXPECT_TRUE(archive.contains("layers.0.attn.q.weight"));
  EXPECT_TRUE(archive.contains("layers.0.attn.z.weight"));
  EXPECT_NO_THROW(cct::Model(model.config(), archive));

  auto extra = archive;
  extra.put("layers.0.attn.bias", {{1}, {0.0f}});
  EXPECT_THROW(cct::Model(model.config(), extra), cct::ArchiveError);

  auto wrong = archive;
  wrong.put("embed.weight", {{4, 4}, std::vector<float>(16, 0.0f)});
  EXPECT_THROW(cct::Model(model.config(), wrong), cct::ArchiveError);

  auto tied = model.config();
  tied.tied_embeddings = true;
  EXPECT_THROW(cct::Model(tied, archive), cct::ArchiveError);  // unembed.weight unexpected
}

TEST(Model, EmbedIsTableLookup) {
  const auto model = cct::init_random(2, {});
  const std::vector<int> ids{3, 3, 7};
  const auto s = model.embed(ids);
  ASSERT_EQ(s.size(), 3u);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = model.embedding_table().row(static_cast<std::size_t>(ids[i]));
    EXPECT_TRUE(std::equal(row.begin(), row.end(), s.span(i).embedding.begin()));
    EXPECT_EQ(s.span(i).duration, 1.0);
  }
  EXPECT_EQ(s.span(0), s.span(1));
  EXPECT_THROW((void)model.embed(std::vector<int>{}), std::invalid_argument);
  EXPECT_THROW((void)model.embed(std::vector<int>{16}), std::out_of_range);
  EXPECT_THROW((void)model.embed(std::vector<int>{-1}), std::out_of_range);
}

TEST(Model, ZeroLayersIsUnembeddedInput) {
  ModelConfig c;
  c.layer_count = 0;
  const auto model = cct::init_random(3, c);
  const auto s = model.embed(std::vector<int>{1, 5});
  const auto logits = model.forward_continuous(s).logits;
  const auto& u = model.archive().at("unembed.weight");
  for (int v = 0; v < c.vocab_size; ++v) {
    double acc = 0.0;
    for (int j = 0; j < c.d_model; ++j) {
      acc += double(u.values[static_cast<std::size_t>(v * c.d_model + j)]) * s.span(1).embedding[j];
    }
    EXPECT_NEAR(logits[static_cast<std::size_t>(v)], acc, 1e-7);
  }
}

TEST(Model, SameSeedSameWeights) {
  EXPECT_EQ(cct::init_random(4, prenorm_config()).archive(),
            cct::init_random(4, prenorm_config()).archive());
  EXPECT_NE(cct::init_random(4, prenorm_config()).archive(),
            cct::init_random(5, prenorm_config()).archive());
}

TEST(Model, UnitDurationsMatchDiscreteForward) {
  std::mt19937_64 rng(6);
  for (int seed = 0; seed < 20; ++seed) {
    auto c = seed % 2 ? prenorm_config() : ModelConfig{};
    c.bias_mode = seed % 3 ? cct::DurationBiasMode::additive_log
                           : cct::DurationBiasMode::multiplicative;
    const auto model = cct::init_random(static_cast<std::uint64_t>(seed), c);
    std::vector<int> ids;
    for (int i = 0; i < 1 + seed % 12; ++i) ids.push_back(static_cast<int>(rng() % 16));
    const auto s = model.embed(ids);
    EXPECT_LE(max_diff(model.forward_continuous(s).logits,
                       model.forward_discrete(cct::sentence_matrix(s)).logits),
              1e-5);
  }
}

TEST(Model, ShiftInvariantLogits) {
  const auto model = cct::init_random(7, prenorm_config());
  const auto s = model.embed(std::vector<int>{1, 2, 3, 4, 5});
  const auto base = model.forward_continuous(s).logits;
  for (int delta = 1; delta <= 10; ++delta) {
    EXPECT_LE(max_diff(model.forward_continuous(cct::shift(s, delta)).logits, base), 1e-4);
  }
}

TEST(Model, DeterministicAndKeepsHiddenStates) {
  const auto model = cct::init_random(8, prenorm_config());
  const auto s = cct::shrink(model.embed(std::vector<int>{0, 9, 4}), {1, 2}, 0.3);
  const auto a = model.forward_continuous(s, true);
  const auto b = model.forward_continuous(s, true);
  EXPECT_EQ(a.logits, b.logits);
  ASSERT_EQ(a.hidden_states.size(), 2u);
  EXPECT_EQ(a.hidden_states[1].rows(), 3u);
  EXPECT_EQ(model.forward_continuous(cct::shrink(s, {0, 2}, 1.0)).logits, a.logits);
}

TEST(Model, OverflowReportsLayer) {
  const auto model = cct::init_random(9, {});
  auto archive = model.archive();
  auto z = archive.at("layers.0.attn.z.weight");
  std::fill(z.values.begin(), z.values.end(), 3e38f);
  archive.put("layers.0.attn.z.weight", z);
  auto bias = archive.at("layers.0.norm1.bias");
  std::fill(bias.values.begin(), bias.values.end(), 1.0f);
  archive.put("layers.0.norm1.bias", bias);
  const cct::Model broken(model.config(), archive);
  try {
    (void)broken.forward_continuous(broken.embed(std::vector<int>{1, 2}));
    FAIL() << "expected ForwardError";
  } catch (const cct::ForwardError& e) {
    EXPECT_EQ(e.layer(), 0);
  }
}

TEST(Model, FuzzedPromptsStayFinite) {
  const cct::Model models[] = {cct::init_random(10, {}), cct::init_random(11, prenorm_config())};
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> factor(0.1, 1.0);
  for (int c = 0; c < 1000; ++c) {
    const auto& model = models[c % 2];
    std::vector<int> ids;
    for (std::size_t i = 0; i < 1 + rng() % 12; ++i) ids.push_back(static_cast<int>(rng() % 16));
    auto s = model.embed(ids);
    s = cct::shrink(s, {0, s.size() - 1}, factor(rng));
    s = cct::shift(s, factor(rng) * 10.0);
    const auto out = model.forward_continuous(s);
    for (float v : out.logits) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Distribution, UniformLogits) {
  const std::vector<float> logits(8, 0.25f);
  const auto table = cct::next_token_distribution(logits);
  for (double p : table.full) EXPECT_DOUBLE_EQ(p, 1.0 / 8.0);
}

TEST(Distribution, LargeLogitIsStable) {
  std::vector<float> logits(10, 0.0f);
  logits[3] = 1e4f;
  const auto table = cct::next_token_distribution(logits);
  EXPECT_NEAR(table.full[3], 1.0, 1e-12);
  for (double p : table.full) EXPECT_TRUE(std::isfinite(p));
}

TEST(Distribution, LabelMassesPartitionVocabulary) {
  std::mt19937_64 rng(13);
  std::normal_distribution<float> n(0.0f, 3.0f);
  const auto labels = cct::LabelSet::parse_inline("yes=1+2,no=5,0=0");
  for (int c = 0; c < 50; ++c) {
    std::vector<float> logits(16);
    for (auto& v : logits) v = n(rng);
    const auto table = cct::next_token_distribution(logits, &labels);
    double full = 0.0;
    for (double p : table.full) full += p;
    EXPECT_NEAR(full, 1.0, 1e-12);
    double parts = table.other;
    for (double p : table.label_probs) parts += p;
    EXPECT_NEAR(parts, 1.0, 1e-12);
    EXPECT_NEAR(table.label_probs[0], table.full[1] + table.full[2], 1e-15);
  }
}

TEST(LabelSet, ParsingAndValidation) {
  const auto digits = cct::LabelSet::digits(10);
  EXPECT_EQ(digits.size(), 10u);
  EXPECT_EQ(digits.labels()[7].token_ids, std::vector<int>{7});
  const auto from_json = cct::LabelSet::from_json(
      nlohmann::json::parse(R"({"labels":[{"name":"yes","ids":[3,4]},{"name":"no","ids":[9]}]})"));
  EXPECT_EQ(from_json.names(), (std::vector<std::string>{"yes", "no"}));
  EXPECT_THROW(cct::LabelSet::parse_inline("a=1,a=2"), std::invalid_argument);
  EXPECT_THROW(cct::LabelSet::parse_inline("a=1,b=1"), std::invalid_argument);
  EXPECT_THROW(cct::LabelSet::parse_inline("a=x"), std::invalid_argument);
  EXPECT_THROW(cct::LabelSet::parse_inline("a=20").validate(16), std::invalid_argument);
}

}  // namespace
