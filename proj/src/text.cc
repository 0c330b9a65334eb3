#include "pairforge/text.h"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pairforge/errors.h"

namespace pairforge::text {

std::size_t Line::EndColumn() const {
  if (tokens.empty()) return 1;
  return tokens.back().column + tokens.back().text.size();
}

void Line::Expect(std::size_t n, std::string_view what) const {
  if (tokens.size() < n) {
    throw ParseError(number, EndColumn(),
                     "expected " + std::string(what) + " (" + std::to_string(n) +
                         " fields, found " + std::to_string(tokens.size()) + ")");
  }
}

void Line::Fail(std::size_t token_index, const std::string& what) const {
  const std::size_t column =
      token_index < tokens.size() ? tokens[token_index].column : EndColumn();
  throw ParseError(number, column, what);
}

namespace {

template <typename T>
T ParseInteger(const Line& line, std::size_t i, const char* kind) {
  if (i >= line.tokens.size()) line.Fail(i, std::string("missing ") + kind);
  const auto text = line.tokens[i].text;
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    line.Fail(i, std::string("expected ") + kind + ", got '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

std::uint32_t Line::U32(std::size_t i) const {
  return ParseInteger<std::uint32_t>(*this, i, "non-negative integer");
}

std::uint64_t Line::U64(std::size_t i) const {
  return ParseInteger<std::uint64_t>(*this, i, "non-negative integer");
}

std::int64_t Line::I64(std::size_t i) const {
  return ParseInteger<std::int64_t>(*this, i, "integer");
}

double Line::Real(std::size_t i) const {
  if (i >= tokens.size()) Fail(i, "missing real number");
  const auto text = tokens[i].text;
  double value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
    Fail(i, "expected finite real number, got '" + std::string(text) + "'");
  }
  return value;
}

std::vector<Line> SplitLines(std::string_view content) {
  std::vector<Line> lines;
  std::size_t number = 0;
  std::size_t start = 0;
  while (start <= content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    ++number;
    std::string_view raw = content.substr(start, end - start);
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) {
      raw = raw.substr(0, hash);
    }
    Line line;
    line.number = number;
    std::size_t i = 0;
    while (i < raw.size()) {
      while (i < raw.size() && std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
      const std::size_t token_start = i;
      while (i < raw.size() && !std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
      if (i > token_start) {
        line.tokens.push_back({raw.substr(token_start, i - token_start), token_start + 1});
      }
    }
    if (!line.tokens.empty()) lines.push_back(std::move(line));
    if (end == content.size()) break;
    start = end + 1;
  }
  return lines;
}

std::string FormatReal(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace pairforge::text
