#include <cstdio>
#include <set>

#include "sift/lm.hpp"

namespace sift::model {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_word(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
         c == '\'' || c >= 0x80;
}

// Length of a markup tag `<name>` or `</name>` starting at i, or 0.
std::size_t tag_length(std::string_view s, std::size_t i) {
  std::size_t j = i + 1;
  if (j < s.size() && s[j] == '/') ++j;
  const std::size_t name_start = j;
  while (j < s.size() && s[j] >= 'a' && s[j] <= 'z') ++j;
  if (j == name_start || j >= s.size() || s[j] != '>') return 0;
  return j + 1 - i;
}

const char* const kSpecialPieces[Tokenizer::kNumSpecials] = {
    "<|pad|>", "<|im_start|>", "<|im_end|>", "<|system|>", "<|user|>", "<|assistant|>"};

}  // namespace

std::vector<std::string> split_atoms(std::string_view text) {
  std::vector<std::string> atoms;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (c == '<' && tag_length(text, i) > 0) {
      const std::size_t n = tag_length(text, i);
      atoms.emplace_back(text.substr(i, n));
      i += n;
    } else if (is_word(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word(static_cast<unsigned char>(text[j]))) ++j;
      atoms.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      atoms.emplace_back(1, text[i]);
      ++i;
    }
  }
  return atoms;
}

std::vector<std::string> lexicon_from_texts(const std::vector<std::string>& texts) {
  std::set<std::string> atoms;
  for (const auto& t : texts)
    for (auto& a : split_atoms(t)) atoms.insert(std::move(a));
  return {atoms.begin(), atoms.end()};
}

Tokenizer::Tokenizer(const std::vector<std::string>& lexicon, bool byte_fallback) {
  for (const char* p : kSpecialPieces) {
    index_.emplace(p, static_cast<int>(pieces_.size()));
    pieces_.emplace_back(p);
  }
  for (const auto& entry : lexicon) {
    for (auto& atom : split_atoms(entry)) {
      if (index_.count(atom)) continue;
      index_.emplace(atom, static_cast<int>(pieces_.size()));
      pieces_.push_back(std::move(atom));
    }
  }
  if (byte_fallback) {
    byte_base_ = static_cast<int>(pieces_.size());
    for (int b = 0; b < 256; ++b) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "<0x%02X>", b);
      pieces_.emplace_back(buf);
    }
  }
}

int Tokenizer::id(std::string_view piece) const {
  auto it = index_.find(piece);
  return it == index_.end() ? -1 : it->second;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& atom : split_atoms(text)) {
    const int t = id(atom);
    if (t >= 0) {
      ids.push_back(t);
    } else if (byte_base_ >= 0) {
      for (unsigned char b : atom) ids.push_back(byte_base_ + b);
    } else {
      throw TemplateError("atom '" + atom + "' is not in the vocabulary");
    }
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  std::string pending;
  auto emit = [&](const std::string& atom) {
    if (!out.empty()) out += ' ';
    out += atom;
  };
  for (int t : ids) {
    if (t < 0 || t >= size()) throw TemplateError("token id " + std::to_string(t) + " out of range");
    if (is_byte(t)) {
      pending.push_back(static_cast<char>(t - byte_base_));
      continue;
    }
    if (!pending.empty()) {
      emit(pending);
      pending.clear();
    }
    emit(pieces_[static_cast<std::size_t>(t)]);
  }
  if (!pending.empty()) emit(pending);
  return out;
}

}  // namespace sift::model
