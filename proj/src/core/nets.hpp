#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/geometry.hpp"
#include "core/layers.hpp"

namespace preview::nn {

struct network_config {
    int d_t = 50;             // latent size
    int base_channels = 64;   // first-stage channel count; stages use (c, 2c, 4c, 8c)
    int input_resolution = 64;
    int joint_count = 10;
    bool com_conditioning = true;

    void validate() const;
    int decoder_input() const { return d_t + (com_conditioning ? 3 : 0); }
};

// Closed-form parameter counts; guarded by tests against the instantiated
// layers so the architecture cannot drift silently.
size_t encoder_param_count(const network_config& cfg);
size_t decoder_param_count(const network_config& cfg);
size_t pose_head_param_count(const network_config& cfg);

enum class conditioning { none, input_view, pose, input_and_pose };
size_t discriminator_param_count(const network_config& cfg, conditioning cond);

conditioning conditioning_from_string(const std::string& s);
std::string conditioning_to_string(conditioning c);

// Encoder f: 64x64 depth crop -> d_T latent. DCGAN-discriminator shaped with
// ReLU activations and a terminal 4x4 convolution to d_T.
struct encoder {
    network_config cfg;
    conv2d conv1, conv2, conv3, conv4, conv5;
    batchnorm2d bn2, bn3, bn4;
    activation act1{activation_kind::relu}, act2{activation_kind::relu},
        act3{activation_kind::relu}, act4{activation_kind::relu};

    explicit encoder(const network_config& cfg);
    void init(rng64& rng);
    void forward(const tensor& x, tensor& latent, bool training);
    void backward(const tensor& dlatent, tensor* dx = nullptr);
    void collect(std::vector<param_ref>& params, std::vector<buffer_ref>& buffers);
    size_t param_count() const;

  private:
    tensor h1_, h2_, h3_, h4_, a1_, a2_, a3_, a4_, b2_, b3_, b4_;
    tensor d1_, d2_, d3_, d4_;
};

// Decoder g: latent (+ normalized CoM) -> 64x64 image in (-1, 1).
// DCGAN-generator shaped with leaky-ReLU activations and a Tanh output.
struct decoder {
    network_config cfg;
    conv_transpose2d tconv1, tconv2, tconv3, tconv4, tconv5;
    batchnorm2d bn1, bn2, bn3, bn4;
    activation act1{activation_kind::leaky_relu}, act2{activation_kind::leaky_relu},
        act3{activation_kind::leaky_relu}, act4{activation_kind::leaky_relu},
        out_act{activation_kind::tanh};

    explicit decoder(const network_config& cfg);
    void init(rng64& rng);
    // z is (N, d_T [+3]); the caller concatenates the CoM conditioning.
    void forward(const tensor& z, tensor& image, bool training);
    void backward(const tensor& dimage, tensor* dz);
    void collect(std::vector<param_ref>& params, std::vector<buffer_ref>& buffers);
    size_t param_count() const;

  private:
    tensor z4_, h1_, h2_, h3_, h4_, h5_, a1_, a2_, a3_, a4_, b1_, b2_, b3_, b4_;
    tensor d1_, d2_, d3_, d4_, d5_;
};

// Linear pose head g_l: latent -> K*3 normalized joint offsets. Affine only.
struct pose_head {
    network_config cfg;
    linear fc;

    explicit pose_head(const network_config& cfg);
    void init(rng64& rng);
    void forward(const tensor& latent, tensor& joints);
    void backward(const tensor& djoints, tensor* dlatent);
    void collect(std::vector<param_ref>& params);
    size_t param_count() const { return fc.param_count(); }
};

// LSGAN discriminator h: image (+ conditions) -> unbounded scalar score.
struct discriminator {
    network_config cfg;
    conditioning cond = conditioning::none;
    conv2d conv1, conv2, conv3, conv4;
    batchnorm2d bn2, bn3, bn4;
    activation act1{activation_kind::leaky_relu}, act2{activation_kind::leaky_relu},
        act3{activation_kind::leaky_relu}, act4{activation_kind::leaky_relu};
    linear score;
    linear pose_proj;  // only used with pose conditioning

    discriminator(const network_config& cfg, conditioning cond);
    void init(rng64& rng);
    int input_channels() const {
        return 1 + ((cond == conditioning::input_view || cond == conditioning::input_and_pose) ? 1
                                                                                               : 0);
    }
    bool uses_pose() const {
        return cond == conditioning::pose || cond == conditioning::input_and_pose;
    }
    // image: (N, input_channels, 64, 64); pose: (N, 3K) when pose-conditioned.
    void forward(const tensor& image, const tensor* pose, tensor& scores, bool training);
    // dimage receives the gradient with respect to the full image stack.
    void backward(const tensor& dscores, tensor* dimage);
    void collect(std::vector<param_ref>& params, std::vector<buffer_ref>& buffers);
    size_t param_count() const;

  private:
    tensor h1_, h2_, h3_, h4_, a1_, a2_, a3_, a4_, b2_, b3_, b4_;
    tensor feat_, proj_, proj_in_;
    tensor d1_, d2_, d3_, d4_, dfeat_;
    int cond_dim() const { return 8 * cfg.base_channels; }
};

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary container of named float tensors plus the
// network configuration and preprocessing metadata needed at inference time.

struct checkpoint_meta {
    vec3 mean_com;  // dataset-mean CoM used for decoder conditioning
    double crop_cube_side_mm = 300.0;
    double depth_range_mm = 150.0;
    double com_jitter_mm = 0.0;  // detection-perturbation augmentation
    std::uint64_t jitter_seed = 1;
    int dropout_holes = 0;       // sensor-dropout augmentation
    std::string mode;  // training mode that produced the checkpoint
};

struct checkpoint {
    int version = 1;
    network_config cfg;
    checkpoint_meta meta;
    std::map<std::string, tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const network_config& cfg,
                     const checkpoint_meta& meta, const std::vector<param_ref>& params,
                     const std::vector<buffer_ref>& buffers);
checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint tensors into the given refs; throws on missing names or
// shape mismatches.
void restore_state(const checkpoint& ck, const std::vector<param_ref>& params,
                   const std::vector<buffer_ref>& buffers);

}  // namespace preview::nn
