#include "rerand/error.hpp"

#include <sstream>

namespace rerand {

namespace {

std::string max_draws_message(std::uint64_t draws, double min_m, double threshold) {
  std::ostringstream os;
  os << "no assignment with M <= " << threshold << " after " << draws << " draws (smallest M seen: " << min_m
     << "); raise the threshold or max_draws";
  return os.str();
}

}  // namespace

MaxDrawsExceededError::MaxDrawsExceededError(std::uint64_t draws_attempted, double min_m_observed, double threshold)
    : Error(max_draws_message(draws_attempted, min_m_observed, threshold)),
      draws_attempted_(draws_attempted),
      min_m_observed_(min_m_observed),
      threshold_(threshold) {}

}  // namespace rerand
