#include "prismer/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prismer/dataset.hpp"
#include "prismer/error.hpp"

namespace prismer {

namespace {

std::vector<double> log_softmax_row(std::span<const double> row) {
  const double peak = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double v : row) total += std::exp(v - peak);
  const double log_total = peak + std::log(total);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - log_total;
  return out;
}

// Log-probabilities of the next token after [BOS, prompt, generated].
std::vector<double> next_token_log_probs(const PrismerModel& model, const DecoderContext& z, std::span<const int> prompt,
                                         std::span<const int> generated) {
  std::vector<int> input;
  input.reserve(1 + prompt.size() + generated.size());
  input.push_back(kBosToken);
  input.insert(input.end(), prompt.begin(), prompt.end());
  input.insert(input.end(), generated.begin(), generated.end());
  const auto logits = model.decoder_forward(z, input);
  const auto vocab = logits.dim(1);
  const auto data = logits.data();
  return log_softmax_row(data.subspan((input.size() - 1) * vocab, vocab));
}

std::size_t effective_max_len(const PrismerModel& model, std::span<const int> prompt, std::size_t max_len) {
  const auto limit = model.config().max_seq_len;
  if (prompt.size() >= limit) {
    throw LengthError("prompt of " + std::to_string(prompt.size()) + " tokens leaves no room to generate");
  }
  return std::min(max_len, limit - prompt.size());
}

bool better(const Hypothesis& a, const Hypothesis& b, bool normalised) {
  const double sa = normalised ? a.score() : a.log_prob;
  const double sb = normalised ? b.score() : b.log_prob;
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

GenerateResult to_result(const Hypothesis& h, bool truncated) { return {h.tokens, h.score(), truncated}; }

}  // namespace

GenerateResult generate(const PrismerModel& model, const Tensor& z, std::span<const int> prompt,
                        const GenerateOptions& options) {
  if (options.beam == 0) throw ConfigError("beam width must be at least 1");
  if (options.max_len == 0) throw ConfigError("max_len must be at least 1");
  const auto max_len = effective_max_len(model, prompt, options.max_len);
  NoGradGuard no_grad;
  const auto context = model.decoder_context(z);

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> completed;
  std::vector<Hypothesis> candidates;
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    candidates.clear();
    for (const auto& h : live) {
      const auto log_probs = next_token_log_probs(model, context, prompt, h.tokens);
      for (std::size_t tok = 0; tok < log_probs.size(); ++tok) {
        Hypothesis next = h;
        next.tokens.push_back(static_cast<int>(tok));
        next.log_prob += log_probs[tok];
        next.length += 1;
        candidates.push_back(std::move(next));
      }
    }
    const auto keep = std::min(options.beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Hypothesis& a, const Hypothesis& b) { return better(a, b, false); });
    live.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      auto& h = candidates[i];
      if (h.tokens.back() == kEosToken) {
        h.tokens.pop_back();
        h.completed = true;
        completed.push_back(std::move(h));
      } else {
        live.push_back(std::move(h));
      }
    }
  }

  const auto pick = [](const std::vector<Hypothesis>& pool) {
    return *std::min_element(pool.begin(), pool.end(),
                             [](const Hypothesis& a, const Hypothesis& b) { return better(a, b, true); });
  };
  if (!completed.empty()) return to_result(pick(completed), false);
  return to_result(pick(live), true);
}

GenerateResult greedy_decode(const PrismerModel& model, const Tensor& z, std::span<const int> prompt,
                             std::size_t max_len) {
  if (max_len == 0) throw ConfigError("max_len must be at least 1");
  max_len = effective_max_len(model, prompt, max_len);
  NoGradGuard no_grad;
  const auto context = model.decoder_context(z);
  Hypothesis h;
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto log_probs = next_token_log_probs(model, context, prompt, h.tokens);
    const auto best = static_cast<int>(std::max_element(log_probs.begin(), log_probs.end()) - log_probs.begin());
    h.log_prob += log_probs[static_cast<std::size_t>(best)];
    h.length += 1;
    if (best == kEosToken) return to_result(h, false);
    h.tokens.push_back(best);
  }
  return to_result(h, true);
}

std::vector<double> continuation_log_probs(const PrismerModel& model, const Tensor& z, std::span<const int> prefix,
                                           std::span<const int> continuation) {
  NoGradGuard no_grad;
  return continuation_log_probs(model, model.decoder_context(z), prefix, continuation);
}

std::vector<double> continuation_log_probs(const PrismerModel& model, const DecoderContext& z,
                                           std::span<const int> prefix, std::span<const int> continuation) {
  if (continuation.empty()) throw ContractError("empty candidate sequence");
  NoGradGuard no_grad;
  std::vector<int> input;
  input.push_back(kBosToken);
  input.insert(input.end(), prefix.begin(), prefix.end());
  input.insert(input.end(), continuation.begin(), continuation.end() - 1);
  const auto logits = model.decoder_forward(z, input);
  const auto vocab = logits.dim(1);
  const auto data = logits.data();
  std::vector<double> out;
  for (std::size_t j = 0; j < continuation.size(); ++j) {
    const auto row = log_softmax_row(data.subspan((prefix.size() + j) * vocab, vocab));
    const auto tok = continuation[j];
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab) throw RangeError("candidate token outside vocabulary");
    out.push_back(row[static_cast<std::size_t>(tok)]);
  }
  return out;
}

RankResult rank_closed_ended(const PrismerModel& model, const Tensor& z, std::span<const int> prefix,
                             const std::vector<std::vector<int>>& candidates) {
  NoGradGuard no_grad;
  return rank_closed_ended(model, model.decoder_context(z), prefix, candidates);
}

RankResult rank_closed_ended(const PrismerModel& model, const DecoderContext& z, std::span<const int> prefix,
                             const std::vector<std::vector<int>>& candidates) {
  if (candidates.empty()) throw ContractError("answer list is empty");
  for (const auto& c : candidates)
    if (c.empty()) throw ContractError("empty candidate sequence");

  RankResult result;
  const bool single_tokens =
      std::all_of(candidates.begin(), candidates.end(), [](const auto& c) { return c.size() == 1; });
  if (single_tokens) {
    NoGradGuard no_grad;
    const auto row = next_token_log_probs(model, z, prefix, {});
    for (const auto& c : candidates) {
      if (c[0] < 0 || static_cast<std::size_t>(c[0]) >= row.size()) {
        throw RangeError("candidate token outside vocabulary");
      }
      result.scores.push_back(row[static_cast<std::size_t>(c[0])]);
    }
  } else {
    for (const auto& c : candidates) {
      const auto lp = continuation_log_probs(model, z, prefix, c);
      double total = 0.0;
      for (double v : lp) total += v;
      result.scores.push_back(total / static_cast<double>(lp.size()));
    }
  }
  result.index = 0;
  for (std::size_t i = 1; i < result.scores.size(); ++i)
    if (result.scores[i] > result.scores[result.index]) result.index = i;
  return result;
}

CaptionResult caption(const PrismerModel& model, const Tensor& rgb, std::span<const ExpertLabelMap> experts,
                      const GenerateOptions& options, const Vocabulary& vocab) {
  NoGradGuard no_grad;
  const auto z = model.encoder_forward(rgb, experts);
  const auto prompt = vocab.encode(kCaptionPrompt);
  const auto generated = generate(model, z, prompt, options);
  return {vocab.decode(generated.tokens), generated.tokens, generated.truncated};
}

}  // namespace prismer
