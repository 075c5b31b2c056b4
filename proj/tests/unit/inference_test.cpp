#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "prismer/dataset.hpp"
#include "prismer/error.hpp"
#include "prismer/inference.hpp"
#include "test_support.hpp"

namespace prismer {
namespace {

using testing::micro_config;

struct Fixture {
  PrismerModel model;
  Tensor z;
};

Fixture random_setup(std::uint64_t seed, std::size_t vocab, std::size_t max_seq_len = 8) {
  auto config = micro_config();
  config.vocab_size = vocab;
  config.max_seq_len = max_seq_len;
  PrismerModel model(config, seed);
  NoGradGuard guard;
  auto z = model.encoder_forward(testing::synthetic_rgb(config, seed + 1), testing::synthetic_experts(config, seed + 2));
  return {std::move(model), z};
}

// Next-token log-probabilities from raw logits, computed independently of the decoder helpers.
std::vector<double> oracle_log_probs(const PrismerModel& model, const Tensor& z, std::vector<int> input) {
  input.insert(input.begin(), kBosToken);
  const auto logits = model.decoder_forward(z, input);
  const std::size_t v = logits.dim(1);
  const std::size_t row = input.size() - 1;
  double peak = -INFINITY;
  for (std::size_t j = 0; j < v; ++j) peak = std::max(peak, logits.at({row, j}));
  double total = 0.0;
  for (std::size_t j = 0; j < v; ++j) total += std::exp(logits.at({row, j}) - peak);
  std::vector<double> out(v);
  for (std::size_t j = 0; j < v; ++j) out[j] = logits.at({row, j}) - peak - std::log(total);
  return out;
}

TEST(Generate, BeamOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto f = random_setup(100 + seed, 6);
    const std::vector<int> prompt = {static_cast<int>(2 + seed % 4)};
    const auto beam = generate(f.model, f.z, prompt, {.beam = 1, .max_len = 5});
    const auto greedy = greedy_decode(f.model, f.z, prompt, 5);
    EXPECT_EQ(beam.tokens, greedy.tokens) << "seed " << seed;
    EXPECT_EQ(beam.truncated, greedy.truncated) << "seed " << seed;
    EXPECT_NEAR(beam.score, greedy.score, 1e-12) << "seed " << seed;
  }
}

TEST(Generate, GreedyPicksArgmaxEachStep) {
  auto f = random_setup(7, 6);
  const auto greedy = greedy_decode(f.model, f.z, {}, 5);
  std::vector<int> prefix;
  for (std::size_t step = 0; step <= greedy.tokens.size() && step < 5; ++step) {
    const auto lp = oracle_log_probs(f.model, f.z, prefix);
    const int best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (step == greedy.tokens.size()) {
      if (!greedy.truncated) {
        EXPECT_EQ(best, kEosToken);
      }
      break;
    }
    EXPECT_EQ(best, greedy.tokens[step]);
    prefix.push_back(best);
  }
}

struct Best {
  std::vector<int> tokens;
  double score = -INFINITY;
};

// Every EOS-terminated sequence of at most max_len scored tokens, ranked by mean log-probability.
Best exhaustive(const PrismerModel& model, const Tensor& z, std::size_t vocab, std::size_t max_len) {
  Best best;
  std::function<void(std::vector<int>&, double)> visit = [&](std::vector<int>& prefix, double log_prob) {
    const auto lp = oracle_log_probs(model, z, prefix);
    const double finished = (log_prob + lp[kEosToken]) / static_cast<double>(prefix.size() + 1);
    if (finished > best.score || (finished == best.score && prefix < best.tokens)) best = {prefix, finished};
    if (prefix.size() + 1 >= max_len) return;
    for (std::size_t t = 0; t < vocab; ++t) {
      if (static_cast<int>(t) == kEosToken) continue;
      prefix.push_back(static_cast<int>(t));
      visit(prefix, log_prob + lp[t]);
      prefix.pop_back();
    }
  };
  std::vector<int> empty;
  visit(empty, 0.0);
  return best;
}

TEST(Generate, FullWidthBeamMatchesExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto f = random_setup(300 + seed, 4);
    const auto oracle = exhaustive(f.model, f.z, 4, 3);
    const auto beam = generate(f.model, f.z, {}, {.beam = 64, .max_len = 3});
    EXPECT_FALSE(beam.truncated);
    EXPECT_EQ(beam.tokens, oracle.tokens) << "seed " << seed;
    EXPECT_NEAR(beam.score, oracle.score, 1e-12) << "seed " << seed;
  }
}

TEST(Generate, LargerBeamsNeverScoreWorseOnToySpace) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto f = random_setup(500 + seed, 4);
    double previous = -INFINITY;
    for (std::size_t k = 1; k <= 64; ++k) {
      const auto r = generate(f.model, f.z, {}, {.beam = k, .max_len = 3});
      if (r.truncated) continue;
      EXPECT_GE(r.score, previous - 1e-12) << "seed " << seed << " beam " << k;
      previous = std::max(previous, r.score);
    }
  }
}

TEST(Generate, Deterministic) {
  auto f = random_setup(11, 8);
  const std::vector<int> prompt = {3, 4};
  const auto a = generate(f.model, f.z, prompt, {.beam = 3, .max_len = 5});
  const auto b = generate(f.model, f.z, prompt, {.beam = 3, .max_len = 5});
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.score, b.score);
}

TEST(Generate, LengthLimits) {
  auto f = random_setup(12, 6, 6);
  const std::vector<int> prompt = {2, 3, 4};
  const auto r = generate(f.model, f.z, prompt, {.beam = 2, .max_len = 50});
  EXPECT_LE(r.tokens.size(), 3u);
  const std::vector<int> full = {2, 3, 4, 5, 2, 3};
  EXPECT_THROW(generate(f.model, f.z, full, {}), LengthError);
  EXPECT_THROW(generate(f.model, f.z, prompt, {.beam = 0, .max_len = 3}), ConfigError);
  EXPECT_THROW(generate(f.model, f.z, prompt, {.beam = 1, .max_len = 0}), ConfigError);
}

TEST(Rank, SingletonAlwaysWins) {
  auto f = random_setup(13, 8);
  const std::vector<int> prefix = {2};
  const auto r = rank_closed_ended(f.model, f.z, prefix, {{5}});
  EXPECT_EQ(r.index, 0u);
  ASSERT_EQ(r.scores.size(), 1u);
}

TEST(Rank, MatchesIndependentScoring) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto f = random_setup(700 + seed, 8);
    const std::vector<int> prefix = {2, 6};
    const std::vector<std::vector<int>> single = {{3}, {4}, {7}, {5}};
    const std::vector<std::vector<int>> multi = {{3, 4}, {4}, {7, 7, 2}, {5, 3}};
    for (const auto* candidates : {&single, &multi}) {
      const auto r = rank_closed_ended(f.model, f.z, prefix, *candidates);
      ASSERT_EQ(r.scores.size(), candidates->size());
      std::size_t expected_index = 0;
      std::vector<double> expected(candidates->size());
      for (std::size_t c = 0; c < candidates->size(); ++c) {
        auto running = prefix;
        double total = 0.0;
        for (int tok : (*candidates)[c]) {
          total += oracle_log_probs(f.model, f.z, running)[static_cast<std::size_t>(tok)];
          running.push_back(tok);
        }
        expected[c] = total / static_cast<double>((*candidates)[c].size());
        EXPECT_NEAR(r.scores[c], expected[c], 1e-9);
        if (expected[c] > expected[expected_index]) expected_index = c;
      }
      EXPECT_EQ(r.index, expected_index);
    }
  }
}

TEST(Rank, ScoresDoNotDependOnOtherCandidates) {
  auto f = random_setup(14, 8);
  const std::vector<int> prefix = {2};
  const auto a = rank_closed_ended(f.model, f.z, prefix, {{3, 4}, {5, 6}});
  const auto b = rank_closed_ended(f.model, f.z, prefix, {{7}, {5, 6}, {2, 2, 2}});
  EXPECT_EQ(a.scores[1], b.scores[1]);
}

TEST(Rank, DuplicateTieGoesToLowerIndex) {
  auto f = random_setup(15, 8);
  const std::vector<int> prefix = {2};
  const auto lp = oracle_log_probs(f.model, f.z, prefix);
  const int best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
  const int other = best == 3 ? 4 : 3;
  const auto r = rank_closed_ended(f.model, f.z, prefix, {{other}, {best}, {best}});
  EXPECT_EQ(r.index, 1u);
  EXPECT_EQ(r.scores[1], r.scores[2]);
}

TEST(Rank, ContextOverloadAgreesAndErrors) {
  auto f = random_setup(16, 8);
  const std::vector<int> prefix = {2};
  const std::vector<std::vector<int>> candidates = {{3, 4}, {5}};
  const auto direct = rank_closed_ended(f.model, f.z, prefix, candidates);
  const auto ctx = rank_closed_ended(f.model, f.model.decoder_context(f.z), prefix, candidates);
  EXPECT_EQ(direct.scores, ctx.scores);
  EXPECT_THROW(rank_closed_ended(f.model, f.z, prefix, {}), ContractError);
  EXPECT_THROW(rank_closed_ended(f.model, f.z, prefix, {{3}, {}}), ContractError);
  EXPECT_THROW(rank_closed_ended(f.model, f.z, prefix, {{3}, {99}}), RangeError);
}

ModelConfig caption_config(std::vector<ExpertKind> experts) {
  auto config = micro_config(std::move(experts));
  config.image_height = config.image_width = 16;
  config.vocab_size = Vocabulary::toy().size();
  config.max_seq_len = 20;
  return config;
}

TEST(Caption, ExcludesPromptAndUsesVocabulary) {
  for (auto config : {caption_config({ExpertKind::kDepth}), ModelConfig::prismer_z(caption_config({}))}) {
    const PrismerModel model(config, 17);
    const auto experts = config.mode == ModelMode::kPrismer ? testing::synthetic_experts(config, 1)
                                                            : std::vector<ExpertLabelMap>{};
    const auto r = caption(model, testing::synthetic_rgb(config, 2), experts, {.beam = 3, .max_len = 6});
    EXPECT_LE(r.tokens.size(), 6u);
    for (int t : r.tokens) {
      EXPECT_GE(t, 0);
      EXPECT_LT(static_cast<std::size_t>(t), config.vocab_size);
      EXPECT_NE(t, kEosToken);
    }
    EXPECT_EQ(r.text, Vocabulary::toy().decode(r.tokens));
  }
}

}  // namespace
}  // namespace prismer
