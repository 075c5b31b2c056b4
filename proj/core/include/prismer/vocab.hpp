#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prismer {

inline constexpr int kEosToken = 0;
inline constexpr int kBosToken = 1;

// Closed word-level vocabulary of the synthetic world. Id 0 is end of
// sequence, id 1 begins every decoder input.
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> words);
  static const Vocabulary& toy();

  std::size_t size() const { return words_.size(); }
  int id(std::string_view word) const;
  const std::string& word(int id) const;
  // Whitespace-separated words to ids.
  std::vector<int> encode(std::string_view text) const;
  // Ids to space-joined words; special tokens are dropped.
  std::string decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> words_;
};

}  // namespace prismer
