#ifndef MENTREE_ERROR_HPP_
#define MENTREE_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mentree {

// A caller broke a documented precondition (illegal action, misaligned
// inputs, arity mismatch).
class contract_violation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed input file. `line` is 1-based; 0 when not applicable.
class parse_error : public std::runtime_error {
 public:
  parse_error(const std::string& what, std::size_t line)
      : std::runtime_error(line == 0 ? what
                                     : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Invalid configuration: unknown keys, out-of-range values, empty corpora.
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& message) {
  if (!cond) throw contract_violation(message);
}

}  // namespace detail
}  // namespace mentree

#endif  // MENTREE_ERROR_HPP_
