#include "prismer/vocab.hpp"

#include <sstream>

#include "prismer/error.hpp"

namespace prismer {

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.size() < 2) throw ConfigError("vocabulary needs at least the two special tokens");
}

const Vocabulary& Vocabulary::toy() {
  static const Vocabulary vocab({
      "<eos>", "<bos>",
      "a", "picture", "photo", "of", "on", "gray", "background", "and", "with", "the", "word",
      "red", "green", "blue", "yellow", "purple", "orange",
      "square", "circle", "triangle", "diamond",
      "what", "color", "is", "shape", "where", "nearest", "object", "how", "many", "objects",
      "are", "there", "does", "sign", "say",
      "left", "right", "top", "bottom",
      "one", "two", "three", "four",
      "stop", "exit", "open", "shop",
  });
  return vocab;
}

int Vocabulary::id(std::string_view word) const {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] == word) return static_cast<int>(i);
  }
  throw ConfigError("unknown word '" + std::string(word) + "'");
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw RangeError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int t : ids) {
    if (t == kEosToken || t == kBosToken) continue;
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

}  // namespace prismer
