#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace nluqa {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);

/// The single definition of "exact" for slot values: surrounding whitespace
/// is trimmed, case is preserved. Used at compile time for targets and at
/// scoring time for both gold and predicted values.
std::string normalize_value(std::string_view value);

/// Normalization applied to generated answers before they are interpreted:
/// lowercase, trimmed, with terminal punctuation removed.
std::string normalize_answer(std::string_view answer);

// Separator for several values of one slot, in utterance order.
inline constexpr std::string_view kValueSeparator = "; ";
inline constexpr std::string_view kUnanswerable = "unanswerable";

std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::vector<std::string> split(std::string_view s, std::string_view sep);

/// Splits a joined slot answer back into normalized, non-empty values.
std::vector<std::string> split_values(std::string_view joined);

std::size_t count_occurrences(std::string_view haystack, std::string_view needle);

}  // namespace nluqa
