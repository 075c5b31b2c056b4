#pragma once

#include <span>
#include <string>
#include <vector>

#include "prismer/model.hpp"
#include "prismer/vocab.hpp"

namespace prismer {

struct GenerateOptions {
  std::size_t beam = 3;
  // Upper bound on generated tokens, the end-of-sequence token included.
  std::size_t max_len = 20;
};

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens, prompt and end-of-sequence excluded
  double log_prob = 0.0;    // sum over generated tokens, end-of-sequence included
  std::size_t length = 0;   // number of scored tokens
  bool completed = false;

  double score() const { return log_prob / static_cast<double>(length); }
};

struct GenerateResult {
  std::vector<int> tokens;
  double score = 0.0;
  // No hypothesis reached end-of-sequence within max_len; `tokens` is the
  // best unfinished one.
  bool truncated = false;
};

// Length-normalised beam search. At every step the `beam` best expansions by
// cumulative log-probability survive; those ending in end-of-sequence retire
// as completed hypotheses. Ties go to the lexicographically smaller sequence.
GenerateResult generate(const PrismerModel& model, const Tensor& z, std::span<const int> prompt,
                        const GenerateOptions& options = {});

// Greedy argmax decoding (lowest id on ties), stopping at end-of-sequence.
GenerateResult greedy_decode(const PrismerModel& model, const Tensor& z, std::span<const int> prompt,
                             std::size_t max_len);

struct RankResult {
  std::size_t index = 0;
  std::vector<double> scores;
};

// Mean log-probability of each candidate's tokens given z and the prefix;
// argmax with ties to the lowest index.
RankResult rank_closed_ended(const PrismerModel& model, const Tensor& z, std::span<const int> prefix,
                             const std::vector<std::vector<int>>& candidates);
RankResult rank_closed_ended(const PrismerModel& model, const DecoderContext& context, std::span<const int> prefix,
                             const std::vector<std::vector<int>>& candidates);

// Log-probabilities of `continuation` after [BOS, prefix], one forward pass.
std::vector<double> continuation_log_probs(const PrismerModel& model, const Tensor& z, std::span<const int> prefix,
                                           std::span<const int> continuation);
std::vector<double> continuation_log_probs(const PrismerModel& model, const DecoderContext& context,
                                           std::span<const int> prefix, std::span<const int> continuation);

struct CaptionResult {
  std::string text;
  std::vector<int> tokens;
  bool truncated = false;
};

// Encodes the image and decodes after the fixed "a picture of" prompt.
CaptionResult caption(const PrismerModel& model, const Tensor& rgb, std::span<const ExpertLabelMap> experts,
                      const GenerateOptions& options = {}, const Vocabulary& vocab = Vocabulary::toy());

}  // namespace prismer
