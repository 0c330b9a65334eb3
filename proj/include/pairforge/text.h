#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace pairforge::text {

struct Token {
  std::string_view text;
  std::size_t column = 0;  // 1-based
};

// One non-blank, non-comment line split on whitespace. Everything from a
// '#' to the end of the line is a comment.
struct Line {
  std::size_t number = 0;  // 1-based
  std::vector<Token> tokens;

  std::size_t EndColumn() const;
  // Throws ParseError at this line when fewer than n tokens exist.
  void Expect(std::size_t n, std::string_view what) const;
  [[noreturn]] void Fail(std::size_t token_index, const std::string& what) const;

  std::uint32_t U32(std::size_t i) const;
  std::uint64_t U64(std::size_t i) const;
  std::int64_t I64(std::size_t i) const;
  double Real(std::size_t i) const;
  std::string Str(std::size_t i) const { return std::string(tokens.at(i).text); }
};

std::vector<Line> SplitLines(std::string_view content);

// Shortest decimal text that parses back to exactly `value`.
std::string FormatReal(double value);

std::string ReadFile(const std::string& path);
void WriteFile(const std::string& path, std::string_view content);

}  // namespace pairforge::text
