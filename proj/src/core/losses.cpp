#include "core/losses.hpp"

namespace preview::losses {

// Explicit instantiations for the two scalar types used by the toolkit:
// float for the training path, double for numerical verification.
template float recon_loss<float>(std::span<const float>, std::span<const float>);
template double recon_loss<double>(std::span<const double>, std::span<const double>);
template void recon_loss_grad<float>(std::span<const float>, std::span<const float>,
                                     std::span<float>);
template void recon_loss_grad<double>(std::span<const double>, std::span<const double>,
                                      std::span<double>);
template float pose_loss<float>(std::span<const float>, std::span<const float>, float);
template double pose_loss<double>(std::span<const double>, std::span<const double>, double);
template void pose_loss_grad<float>(std::span<const float>, std::span<const float>, float,
                                    std::span<float>);
template void pose_loss_grad<double>(std::span<const double>, std::span<const double>, double,
                                     std::span<double>);

}  // namespace preview::losses
