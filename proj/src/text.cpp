#include "famguard/text.hpp"

#include <cctype>

#include "famguard/errors.hpp"

namespace famguard::text {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string ascii_upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  }
  return out;
}

std::string capitalize_first(std::string_view s) {
  std::string out(s);
  if (!out.empty() && out[0] >= 'a' && out[0] <= 'z') out[0] = static_cast<char>(out[0] - 'a' + 'A');
  return out;
}

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u) != 0;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0;
}

std::string_view strip_punct(std::string_view s) {
  while (!s.empty() && is_ascii_punct(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_ascii_punct(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string> words_of(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (is_space(s[i]) || s[i] == '-')) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j]) && s[j] != '-') ++j;
    if (j > i) {
      auto w = strip_punct(s.substr(i, j - i));
      if (!w.empty()) out.emplace_back(w);
    }
    i = j;
  }
  return out;
}

std::size_t utf8_byte_offset(std::string_view s, std::size_t char_offset) {
  std::size_t chars = 0;
  for (std::size_t b = 0; b <= s.size(); ++b) {
    if (b == s.size() || (static_cast<unsigned char>(s[b]) & 0xC0) != 0x80) {
      if (chars == char_offset) return b;
      ++chars;
    }
  }
  throw ContractViolation("character offset " + std::to_string(char_offset) + " is past the end of the text");
}

std::size_t utf8_char_offset(std::string_view s, std::size_t byte_offset) {
  std::size_t chars = 0;
  for (std::size_t b = 0; b < byte_offset && b < s.size(); ++b) {
    if ((static_cast<unsigned char>(s[b]) & 0xC0) != 0x80) ++chars;
  }
  return chars;
}

}  // namespace famguard::text
