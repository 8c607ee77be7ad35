#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace v2geq {

// Malformed or inconsistent input data. `line` is 1-based, 0 when not
// applicable.
class InputError : public std::runtime_error {
 public:
  InputError(std::string source, std::size_t line, const std::string& what)
      : std::runtime_error(format(source, line, what)),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const { return source_; }
  std::size_t line() const { return line_; }

 private:
  static std::string format(const std::string& source, std::size_t line,
                            const std::string& what) {
    std::string out = source;
    if (line > 0) out += ":" + std::to_string(line);
    if (!out.empty()) out += ": ";
    return out + what;
  }

  std::string source_;
  std::size_t line_;
};

// A model that is well-formed but cannot be assembled or solved as posed.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace v2geq
