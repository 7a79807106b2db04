#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace arv {

// Error taxonomy. The CLI maps config/parse errors to exit code 1 (usage)
// and contract/numeric/io errors to exit code 2 (runtime).
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value; message names the offending field.
class config_error : public error {
 public:
  using error::error;
};

// API precondition violated (shape mismatch, all-false mask row, ...).
class contract_error : public error {
 public:
  using error::error;
};

// Non-finite value produced where finiteness is an invariant.
class numeric_error : public error {
 public:
  using error::error;
};

// Malformed file content (bad magic, truncated payload, ...).
class parse_error : public error {
 public:
  using error::error;
};

class io_error : public error {
 public:
  using error::error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename A, typename... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

// Dense boolean matrix used for attention masks. true = attention allowed.
struct BoolMatrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<uint8_t> data;  // row-major, 0 or 1

  BoolMatrix() = default;
  BoolMatrix(int64_t r, int64_t c, bool fill = false)
      : rows(r), cols(c), data(static_cast<size_t>(r * c), fill ? 1 : 0) {}

  bool at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)] != 0; }
  void set(int64_t r, int64_t c, bool v) { data[static_cast<size_t>(r * cols + c)] = v ? 1 : 0; }

  static BoolMatrix all_true(int64_t r, int64_t c) { return BoolMatrix(r, c, true); }

  bool operator==(const BoolMatrix& o) const {
    return rows == o.rows && cols == o.cols && data == o.data;
  }
};

}  // namespace arv
