#pragma once

#include <stdexcept>
#include <string>

namespace ssr {

// All recoverable failures in the toolkit surface as ssr::Error; the message
// is the one-line text the CLI reports.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ssr
