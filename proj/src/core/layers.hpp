#pragma once

#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace preview::nn {

// Named view of a learnable parameter and its gradient. Buffers (batch-norm
// running statistics) have no gradient.
struct param_ref {
    std::string name;
    tensor* value = nullptr;
    tensor* grad = nullptr;
};

struct buffer_ref {
    std::string name;
    tensor* value = nullptr;
};

// Strided 2D convolution (im2col + GEMM). Weight layout (out_c, in_c, k, k).
struct conv2d {
    int in_c = 0, out_c = 0, k = 0, stride = 1, pad = 0;
    bool has_bias = true;
    tensor W, b, gW, gb;

    conv2d() = default;
    conv2d(int in_channels, int out_channels, int kernel, int stride_, int pad_, bool bias);

    void init(rng64& rng, float stddev = 0.02f);
    int out_size(int in) const { return (in + 2 * pad - k) / stride + 1; }
    size_t param_count() const { return W.size() + b.size(); }

    void forward(const tensor& x, tensor& y);
    // dx may be null when the input gradient is not needed.
    void backward(const tensor& dy, tensor* dx);
    void collect(const std::string& prefix, std::vector<param_ref>& params);

  private:
    tensor cols_;    // in_c*k*k rows x N*P columns
    tensor dy_mat_;  // out_c rows x N*P columns
    int in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0, batch_ = 0;
};

// Transposed convolution (the adjoint map of conv2d with the same geometry).
// Weight layout (in_c, out_c, k, k).
struct conv_transpose2d {
    int in_c = 0, out_c = 0, k = 0, stride = 1, pad = 0;
    bool has_bias = true;
    tensor W, b, gW, gb;

    conv_transpose2d() = default;
    conv_transpose2d(int in_channels, int out_channels, int kernel, int stride_, int pad_,
                     bool bias);

    void init(rng64& rng, float stddev = 0.02f);
    int out_size(int in) const { return (in - 1) * stride - 2 * pad + k; }
    size_t param_count() const { return W.size() + b.size(); }

    void forward(const tensor& x, tensor& y);
    void backward(const tensor& dy, tensor* dx);
    void collect(const std::string& prefix, std::vector<param_ref>& params);

  private:
    tensor x_mat_;  // in_c rows x N*P_in columns
    tensor cols_;   // out_c*k*k rows x N*P_in columns
    int in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0, batch_ = 0;
};

// Per-channel batch normalization over (N, H, W). Training mode normalizes
// with batch statistics and updates the running estimates; evaluation mode
// uses the frozen running statistics (required for probing/analysis).
struct batchnorm2d {
    int channels = 0;
    float eps = 1e-5f;
    float momentum = 0.1f;
    tensor gamma, beta, g_gamma, g_beta;
    tensor running_mean, running_var;

    batchnorm2d() = default;
    explicit batchnorm2d(int channels_);

    void init(rng64& rng);
    size_t param_count() const { return gamma.size() + beta.size(); }

    void forward(const tensor& x, tensor& y, bool training);
    void backward(const tensor& dy, tensor* dx);
    void collect(const std::string& prefix, std::vector<param_ref>& params,
                 std::vector<buffer_ref>& buffers);

  private:
    tensor xhat_;
    std::vector<float> invstd_;
    bool trained_forward_ = false;
};

// Fully connected layer on (N, in) tensors. Weight layout (out, in).
struct linear {
    int in_f = 0, out_f = 0;
    tensor W, b, gW, gb;

    linear() = default;
    linear(int in_features, int out_features);

    void init(rng64& rng, float stddev = 0.02f);
    size_t param_count() const { return W.size() + b.size(); }

    void forward(const tensor& x, tensor& y);
    void backward(const tensor& dy, tensor* dx);
    void collect(const std::string& prefix, std::vector<param_ref>& params);

  private:
    tensor x_cache_;
};

enum class activation_kind { relu, leaky_relu, tanh };

struct activation {
    activation_kind kind = activation_kind::relu;
    float slope = 0.2f;  // leaky-ReLU negative slope

    explicit activation(activation_kind kind_ = activation_kind::relu, float slope_ = 0.2f)
        : kind(kind_), slope(slope_) {}

    void forward(const tensor& x, tensor& y);
    void backward(const tensor& dy, tensor& dx);  // in place allowed (dx == dy)

  private:
    tensor cache_;  // input for (leaky-)ReLU, output for tanh
};

}  // namespace preview::nn
