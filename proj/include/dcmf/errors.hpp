#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dcmf {

/// Malformed file content (bad magic, bad dimensions, truncation, ...).
/// `offset` is the byte position at which the problem was detected.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    explicit FormatError(const std::string& what)
        : std::runtime_error(what), offset_(0) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Numerical breakdown inside an algorithm (singular pivot, failed SVD, ...).
class NumericalError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A point outside the feasible region of a constrained objective.
class InfeasiblePointError : public std::domain_error {
    using std::domain_error::domain_error;
};

} // namespace dcmf
