#pragma once

// UTF-8 helpers shared by the metric implementations (not installed).

#include <string>
#include <string_view>
#include <vector>

namespace qad::text {

// Decodes UTF-8; each byte of an invalid sequence maps to U+DC80..U+DCFF.
std::u32string decode_utf8(std::string_view s);

// Python str.isspace() for the code points str.split() treats as separators.
bool is_space(char32_t c);

// str.split() with no arguments.
std::vector<std::string_view> split_whitespace(std::string_view s);

// str.rstrip() with no arguments.
std::string_view rstrip(std::string_view s);

}  // namespace qad::text
