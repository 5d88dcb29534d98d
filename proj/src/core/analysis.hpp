#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "core/nets.hpp"
#include "core/trainer.hpp"

namespace preview::analysis {

struct neighbor_result {
    std::string query_id;
    std::vector<std::string> neighbor_ids;  // ascending latent distance
    std::vector<double> distances;
};

// Exact k-nearest-neighbour retrieval by Euclidean distance in latent space.
// Ties break by gallery index.
std::vector<neighbor_result> nearest_neighbors(std::span<const std::vector<float>> query_codes,
                                               std::span<const std::string> query_ids,
                                               std::span<const std::vector<float>> gallery_codes,
                                               std::span<const std::string> gallery_ids, size_t k);

struct activation_result {
    int neuron = 0;
    std::vector<std::string> sample_ids;  // descending activation
    std::vector<double> activations;
};

// The k samples whose latent code is largest at the given neuron; ties break
// by sample id.
activation_result top_activating(std::span<const std::vector<float>> codes,
                                 std::span<const std::string> ids, int neuron, size_t k);

// Writes a tile grid (input view | target second view | predicted second
// view) per sample as an 8-bit grayscale image; [-1, 1] maps linearly to
// [0, 255], so background (+1) renders white.
void prediction_grid(const nn::checkpoint& ck, const trainer::prepared_dataset& data,
                     std::span<const size_t> indices, const std::filesystem::path& out_path);

}  // namespace preview::analysis
