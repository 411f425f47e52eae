#pragma once
#include <cstdint>

namespace hedge {

// t[i] = exp(t[i]). Lives in its own translation unit built with the flags
// that let gcc emit the vectorized libmvec call; everything else in the
// library keeps strict IEEE semantics. Overflow saturates to inf, underflow
// to 0, matching scalar exp to within an ulp over the sigmoid range.
void exp_map(double* t, int64_t n);

}  // namespace hedge
