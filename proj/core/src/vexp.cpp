#include "hedge/vexp.hpp"

#include <cmath>

namespace hedge {

void exp_map(double* t, int64_t n) {
  for (int64_t i = 0; i < n; ++i) t[i] = std::exp(t[i]);
}

}  // namespace hedge
