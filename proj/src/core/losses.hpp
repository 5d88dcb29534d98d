#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "core/common.hpp"

namespace preview::losses {

struct loss_weights {
    double lambda_l = 10.0;      // weight on the labeled pose term; forced to 0 for unlabeled samples
    double lambda_a = 0.0;       // weight on the adversarial term (0 disables it)
    double huber_epsilon = 0.1;  // in normalized target units
    double l_r = 1.0;            // discriminator label for real samples
    double l_g = 0.0;            // discriminator label for generated samples

    void validate() const {
        require(lambda_l >= 0.0, errc::config, "lambda_l must be >= 0");
        require(lambda_a >= 0.0, errc::config, "lambda_a must be >= 0");
        require(huber_epsilon > 0.0, errc::config, "huber_epsilon must be > 0");
        require(l_r != l_g, errc::config, "l_r and l_g must differ");
    }
};

// Mean absolute difference over all pixels.
template <typename T>
T recon_loss(std::span<const T> prediction, std::span<const T> target) {
    require(prediction.size() == target.size() && !prediction.empty(), errc::config,
            "recon_loss: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < prediction.size(); ++i)
        acc += std::abs(double(prediction[i]) - double(target[i]));
    return T(acc / double(prediction.size()));
}

// d recon_loss / d prediction.
template <typename T>
void recon_loss_grad(std::span<const T> prediction, std::span<const T> target, std::span<T> grad) {
    require(prediction.size() == target.size() && prediction.size() == grad.size(), errc::config,
            "recon_loss_grad: shape mismatch");
    const T inv = T(1.0 / double(prediction.size()));
    for (size_t i = 0; i < prediction.size(); ++i) {
        T d = prediction[i] - target[i];
        grad[i] = d > T(0) ? inv : (d < T(0) ? -inv : T(0));
    }
}

// Quadratic below epsilon, linear above; continuous at d = epsilon.
template <typename T>
T huber(T d, T epsilon) {
    require(!std::isnan(double(d)), errc::numeric, "huber: non-finite distance");
    require(d >= T(0), errc::config, "huber: d must be >= 0");
    require(epsilon > T(0), errc::config, "huber: epsilon must be > 0");
    return d < epsilon ? T(0.5) * d * d : epsilon * (d - T(0.5) * epsilon);
}

template <typename T>
T huber_derivative(T d, T epsilon) {
    return d < epsilon ? d : epsilon;
}

// Sum over joints of the Huber loss applied to the per-joint Euclidean
// distance (not componentwise). pred/gt are K x 3, row-major.
template <typename T>
T pose_loss(std::span<const T> pred, std::span<const T> gt, T epsilon) {
    require(pred.size() == gt.size() && pred.size() % 3 == 0 && !pred.empty(), errc::config,
            "pose_loss: joint count mismatch");
    const size_t k = pred.size() / 3;
    double acc = 0.0;
    for (size_t j = 0; j < k; ++j) {
        double dx = double(pred[3 * j]) - double(gt[3 * j]);
        double dy = double(pred[3 * j + 1]) - double(gt[3 * j + 1]);
        double dz = double(pred[3 * j + 2]) - double(gt[3 * j + 2]);
        acc += double(huber(T(std::sqrt(dx * dx + dy * dy + dz * dz)), epsilon));
    }
    return T(acc);
}

// d pose_loss / d pred. At d == 0 the distance is not differentiable; the
// zero subgradient is used.
template <typename T>
void pose_loss_grad(std::span<const T> pred, std::span<const T> gt, T epsilon, std::span<T> grad) {
    require(pred.size() == gt.size() && pred.size() == grad.size() && pred.size() % 3 == 0,
            errc::config, "pose_loss_grad: shape mismatch");
    const size_t k = pred.size() / 3;
    for (size_t j = 0; j < k; ++j) {
        T dx = pred[3 * j] - gt[3 * j];
        T dy = pred[3 * j + 1] - gt[3 * j + 1];
        T dz = pred[3 * j + 2] - gt[3 * j + 2];
        T d = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (d == T(0)) {
            grad[3 * j] = grad[3 * j + 1] = grad[3 * j + 2] = T(0);
            continue;
        }
        T scale = huber_derivative(d, epsilon) / d;
        grad[3 * j] = scale * dx;
        grad[3 * j + 1] = scale * dy;
        grad[3 * j + 2] = scale * dz;
    }
}

// l_u + lambda_l * l_l (+ lambda_a * l_a), with lambda_l zeroed on unlabeled
// samples.
inline double semi_loss(double l_u, double l_l, const loss_weights& w, bool labeled,
                        double l_a = 0.0) {
    double lambda_l = labeled ? w.lambda_l : 0.0;
    return l_u + lambda_l * l_l + w.lambda_a * l_a;
}

template <typename T>
T adversarial_generator_loss(T score_fake, T l_r) {
    T d = score_fake - l_r;
    return T(0.5) * d * d;
}

template <typename T>
T adversarial_generator_loss_grad(T score_fake, T l_r) {
    return score_fake - l_r;
}

template <typename T>
T adversarial_discriminator_loss(T score_real, T score_fake, T l_r, T l_g) {
    T dr = score_real - l_r;
    T dg = score_fake - l_g;
    return T(0.5) * dr * dr + T(0.5) * dg * dg;
}

// Gradients with respect to (score_real, score_fake).
template <typename T>
void adversarial_discriminator_loss_grad(T score_real, T score_fake, T l_r, T l_g, T& d_real,
                                         T& d_fake) {
    d_real = score_real - l_r;
    d_fake = score_fake - l_g;
}

}  // namespace preview::losses
