#include "cfx/error.hpp"

#include <cstdint>

namespace cfx {

Error::Error(ErrorCategory category, std::string code, const std::string& message,
             Context context)
    : std::runtime_error(message),
      category_(category),
      code_(std::move(code)),
      context_(std::move(context)) {}

namespace {

std::string join(const std::vector<std::string>& names, std::size_t limit = SIZE_MAX) {
  std::string out;
  for (std::size_t i = 0; i < names.size() && i < limit; ++i) {
    if (!out.empty()) out += ", ";
    out += names[i];
  }
  if (names.size() > limit) out += " and " + std::to_string(names.size() - limit) + " more";
  return out;
}

}  // namespace

RankDeficientError::RankDeficientError(std::vector<std::size_t> columns,
                                       std::vector<std::string> names)
    : Error(ErrorCategory::numeric, "RankDeficient",
            "design matrix is rank deficient; linearly dependent terms: " + join(names, 12),
            {{"terms", join(names)}}),
      columns_(std::move(columns)),
      names_(std::move(names)) {}

}  // namespace cfx
