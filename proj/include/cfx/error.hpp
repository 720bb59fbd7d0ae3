#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cfx {

// Maps onto CLI exit codes: config = 1, data = 2, numeric = 3.
enum class ErrorCategory { config = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
 public:
  using Context = std::vector<std::pair<std::string, std::string>>;

  Error(ErrorCategory category, std::string code, const std::string& message,
        Context context = {});

  ErrorCategory category() const noexcept { return category_; }
  const std::string& code() const noexcept { return code_; }
  const Context& context() const noexcept { return context_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
  std::string code_;
  Context context_;
};

/// Thrown when the Gram matrix is singular. `columns()` lists the dependent
/// column together with the columns it is a combination of.
class RankDeficientError : public Error {
 public:
  RankDeficientError(std::vector<std::size_t> columns,
                     std::vector<std::string> names);

  const std::vector<std::size_t>& columns() const noexcept { return columns_; }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::size_t> columns_;
  std::vector<std::string> names_;
};

inline Error config_error(std::string code, const std::string& message,
                          Error::Context context = {}) {
  return Error(ErrorCategory::config, std::move(code), message, std::move(context));
}

inline Error data_error(std::string code, const std::string& message,
                        Error::Context context = {}) {
  return Error(ErrorCategory::data, std::move(code), message, std::move(context));
}

inline Error numeric_error(std::string code, const std::string& message,
                           Error::Context context = {}) {
  return Error(ErrorCategory::numeric, std::move(code), message, std::move(context));
}

}  // namespace cfx
