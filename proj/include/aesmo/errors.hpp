#pragma once

#include <stdexcept>
#include <string>

namespace aesmo {

/// Base class for all library errors.
class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid argument / violated precondition (CLI exit code 2).
class validation_error : public error {
public:
    explicit validation_error(const std::string& what) : error(what) {}
};

/// Malformed file content; carries a 1-based line number when known.
class parse_error : public error {
public:
    parse_error(const std::string& what, std::size_t line = 0)
        : error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Nonlinear fit failed to converge or the data is degenerate.
class fit_error : public error {
public:
    explicit fit_error(const std::string& what) : error(what) {}
};

/// Matrix-inequality synthesis found no certificate (CLI exit code 3).
/// Carries the best margin reached so the caller can see how close it got.
class infeasibility_error : public error {
public:
    infeasibility_error(const std::string& what, double best_lambda_max_w)
        : error(what), best_lambda_max_w_(best_lambda_max_w) {}
    double best_lambda_max_w() const noexcept { return best_lambda_max_w_; }

private:
    double best_lambda_max_w_;
};

}  // namespace aesmo
