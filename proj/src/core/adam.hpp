#pragma once

#include <vector>

#include "core/layers.hpp"

namespace preview::nn {

// Adaptive-moment optimizer with bias correction. beta1 defaults to the
// DCGAN setting used throughout the training recipes here.
struct adam {
    double learning_rate = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;

    void attach(std::vector<param_ref> params);
    void step();
    void reset();

    int steps_taken() const { return t_; }

  private:
    std::vector<param_ref> params_;
    std::vector<std::vector<float>> m_, v_;
    int t_ = 0;
};

}  // namespace preview::nn
