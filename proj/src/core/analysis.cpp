#include "core/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "core/image_io.hpp"

namespace preview::analysis {

std::vector<neighbor_result> nearest_neighbors(std::span<const std::vector<float>> query_codes,
                                               std::span<const std::string> query_ids,
                                               std::span<const std::vector<float>> gallery_codes,
                                               std::span<const std::string> gallery_ids,
                                               size_t k) {
    require(query_codes.size() == query_ids.size() && gallery_codes.size() == gallery_ids.size(),
            errc::config, "nearest_neighbors: ids and codes must align");
    require(k <= gallery_codes.size(), errc::config,
            "nearest_neighbors: k exceeds the gallery size");
    for (const auto& c : gallery_codes)
        require(c.size() == (query_codes.empty() ? c.size() : query_codes[0].size()),
                errc::config, "nearest_neighbors: latent size mismatch");

    std::vector<neighbor_result> out;
    out.reserve(query_codes.size());
    for (size_t q = 0; q < query_codes.size(); ++q) {
        require(gallery_codes.empty() || query_codes[q].size() == gallery_codes[0].size(),
                errc::config, "nearest_neighbors: latent size mismatch");
        std::vector<std::pair<double, size_t>> dist(gallery_codes.size());
        for (size_t g = 0; g < gallery_codes.size(); ++g) {
            double acc = 0.0;
            for (size_t i = 0; i < query_codes[q].size(); ++i) {
                double d = double(query_codes[q][i]) - double(gallery_codes[g][i]);
                acc += d * d;
            }
            dist[g] = {std::sqrt(acc), g};
        }
        std::partial_sort(dist.begin(), dist.begin() + ptrdiff_t(k), dist.end());
        neighbor_result r;
        r.query_id = query_ids[q];
        for (size_t i = 0; i < k; ++i) {
            r.neighbor_ids.push_back(gallery_ids[dist[i].second]);
            r.distances.push_back(dist[i].first);
        }
        out.push_back(std::move(r));
    }
    return out;
}

activation_result top_activating(std::span<const std::vector<float>> codes,
                                 std::span<const std::string> ids, int neuron, size_t k) {
    require(codes.size() == ids.size(), errc::config, "top_activating: ids and codes must align");
    require(!codes.empty(), errc::config, "top_activating: empty code set");
    require(neuron >= 0 && size_t(neuron) < codes[0].size(), errc::config,
            "top_activating: neuron index out of range");
    require(k <= codes.size(), errc::config, "top_activating: k exceeds the sample count");

    std::vector<size_t> order(codes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const float va = codes[a][size_t(neuron)], vb = codes[b][size_t(neuron)];
        if (va != vb) return va > vb;
        return ids[a] < ids[b];
    });

    activation_result r;
    r.neuron = neuron;
    for (size_t i = 0; i < k; ++i) {
        r.sample_ids.push_back(ids[order[i]]);
        r.activations.push_back(double(codes[order[i]][size_t(neuron)]));
    }
    return r;
}

namespace {

std::uint8_t to_gray(float v) {
    const float clamped = std::clamp(v, -1.0f, 1.0f);
    return std::uint8_t(std::lround((clamped + 1.0f) * 127.5f));
}

}  // namespace

void prediction_grid(const nn::checkpoint& ck, const trainer::prepared_dataset& data,
                     std::span<const size_t> indices, const std::filesystem::path& out_path) {
    require(!indices.empty(), errc::config, "prediction_grid: no samples given");
    for (size_t idx : indices)
        require(data.samples[idx].has_view2, errc::config,
                "prediction_grid: samples must have both views");

    nn::encoder enc(ck.cfg);
    nn::decoder dec(ck.cfg);
    std::vector<nn::param_ref> params;
    std::vector<nn::buffer_ref> buffers;
    enc.collect(params, buffers);
    dec.collect(params, buffers);
    nn::restore_state(ck, params, buffers);

    const int res = preprocess::k_crop_resolution;
    nn::tensor x1(int(indices.size()), 1, res, res);
    nn::tensor zc;
    for (size_t i = 0; i < indices.size(); ++i) {
        const auto& s = data.samples[indices[i]];
        std::copy(s.crop1.begin(), s.crop1.end(), x1.sample(int(i)));
    }
    nn::tensor latent;
    enc.forward(x1, latent, false);
    if (ck.cfg.com_conditioning) {
        zc.resize(latent.n, ck.cfg.decoder_input(), 1, 1);
        for (size_t i = 0; i < indices.size(); ++i) {
            const auto& s = data.samples[indices[i]];
            std::copy(latent.sample(int(i)), latent.sample(int(i)) + ck.cfg.d_t, zc.sample(int(i)));
            float* cv = zc.sample(int(i)) + ck.cfg.d_t;
            cv[0] = float((s.com1.x - ck.meta.mean_com.x) / ck.meta.crop_cube_side_mm);
            cv[1] = float((s.com1.y - ck.meta.mean_com.y) / ck.meta.crop_cube_side_mm);
            cv[2] = float((s.com1.z - ck.meta.mean_com.z) / ck.meta.crop_cube_side_mm);
        }
    } else {
        zc = latent;
    }
    nn::tensor pred;
    dec.forward(zc, pred, false);

    gray_image img;
    img.height = int(indices.size()) * res;
    img.width = 3 * res;
    img.pixels.assign(size_t(img.height) * size_t(img.width), 255);
    for (size_t i = 0; i < indices.size(); ++i) {
        const auto& s = data.samples[indices[i]];
        for (int r = 0; r < res; ++r) {
            for (int c = 0; c < res; ++c) {
                const size_t p = size_t(r) * size_t(res) + size_t(c);
                img.at(int(i) * res + r, c) = to_gray(s.crop1[p]);
                img.at(int(i) * res + r, res + c) = to_gray(s.crop2[p]);
                img.at(int(i) * res + r, 2 * res + c) = to_gray(pred.sample(int(i))[p]);
            }
        }
    }
    write_pgm(out_path, img);
}

}  // namespace preview::analysis
