#include "core/tensor.hpp"

#include <cmath>

namespace preview::nn {

bool all_finite(const tensor& t) {
    for (float x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace preview::nn
