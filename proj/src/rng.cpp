#include "ccv/rng.hpp"

#include <istream>
#include <ostream>

namespace ccv {

std::ostream& operator<<(std::ostream& os, const Rng& rng) {
  return os << rng.engine_ << ' ' << rng.normal_;
}

std::istream& operator>>(std::istream& is, Rng& rng) { return is >> rng.engine_ >> rng.normal_; }

}  // namespace ccv
