#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace famguard::text {

std::string ascii_lower(std::string_view s);
std::string ascii_upper(std::string_view s);
/// First character uppercased, the rest unchanged.
std::string capitalize_first(std::string_view s);

bool is_ascii_punct(char c);
bool is_space(char c);
/// ASCII letters and digits, plus any byte of a multi-byte UTF-8 sequence.
bool is_word_char(char c);

/// Removes leading and trailing ASCII punctuation.
std::string_view strip_punct(std::string_view s);

/// Splits on whitespace and hyphens and strips punctuation; empty pieces are dropped.
std::vector<std::string> words_of(std::string_view s);

/// Converts a code-point offset into a byte offset. Throws ContractViolation past the end.
std::size_t utf8_byte_offset(std::string_view s, std::size_t char_offset);
std::size_t utf8_char_offset(std::string_view s, std::size_t byte_offset);

}  // namespace famguard::text
