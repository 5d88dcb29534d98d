#include "core/layers.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace preview::nn {

namespace {

using emat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using emap = Eigen::Map<emat>;
using ecmap = Eigen::Map<const emat>;
using evec = Eigen::Map<Eigen::VectorXf>;
using ecvec = Eigen::Map<const Eigen::VectorXf>;
using estride = Eigen::OuterStride<>;

void fill_normal(tensor& t, rng64& rng, float mean, float stddev) {
    for (auto& x : t.v) x = rng.normal_f(mean, stddev);
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

conv2d::conv2d(int in_channels, int out_channels, int kernel, int stride_, int pad_, bool bias)
    : in_c(in_channels), out_c(out_channels), k(kernel), stride(stride_), pad(pad_),
      has_bias(bias) {
    W.resize(out_c, in_c, k, k);
    gW.resize(out_c, in_c, k, k);
    if (has_bias) {
        b.resize(out_c, 1, 1, 1);
        gb.resize(out_c, 1, 1, 1);
    }
}

void conv2d::init(rng64& rng, float stddev) {
    fill_normal(W, rng, 0.0f, stddev);
    if (has_bias) b.zero();
}

void conv2d::forward(const tensor& x, tensor& y) {
    require(x.c == in_c, errc::config, "conv2d: channel mismatch " + x.shape_str());
    batch_ = x.n;
    in_h_ = x.h;
    in_w_ = x.w;
    out_h_ = out_size(in_h_);
    out_w_ = out_size(in_w_);
    require(out_h_ > 0 && out_w_ > 0, errc::config, "conv2d: input too small");
    y.resize(batch_, out_c, out_h_, out_w_);

    const int K = in_c * k * k;
    const size_t P = size_t(out_h_) * size_t(out_w_);
    const size_t NP = size_t(batch_) * P;
    cols_.resize(1, 1, K, int(NP));

#pragma omp parallel for schedule(static)
    for (int n = 0; n < batch_; ++n) {
        const float* xs = x.sample(n);
        int row = 0;
        for (int ic = 0; ic < in_c; ++ic) {
            const float* xc = xs + size_t(ic) * size_t(in_h_) * size_t(in_w_);
            for (int ki = 0; ki < k; ++ki) {
                for (int kj = 0; kj < k; ++kj, ++row) {
                    float* crow = cols_.data() + size_t(row) * NP + size_t(n) * P;
                    for (int oh = 0; oh < out_h_; ++oh) {
                        const int r = oh * stride - pad + ki;
                        float* dst = crow + size_t(oh) * size_t(out_w_);
                        if (r < 0 || r >= in_h_) {
                            std::fill(dst, dst + out_w_, 0.0f);
                            continue;
                        }
                        const float* src = xc + size_t(r) * size_t(in_w_);
                        for (int ow = 0; ow < out_w_; ++ow) {
                            const int c = ow * stride - pad + kj;
                            dst[ow] = (c >= 0 && c < in_w_) ? src[c] : 0.0f;
                        }
                    }
                }
            }
        }
    }

    ecmap Wm(W.data(), out_c, K);
    ecvec bv(has_bias ? b.data() : nullptr, has_bias ? out_c : 0);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < batch_; ++n) {
        Eigen::Map<const emat, 0, estride> coln(cols_.data() + size_t(n) * P, K, int(P),
                                                estride(long(NP)));
        emap yn(y.sample(n), out_c, int(P));
        yn.noalias() = Wm * coln;
        if (has_bias) yn.colwise() += bv;
    }
}

void conv2d::backward(const tensor& dy, tensor* dx) {
    const int K = in_c * k * k;
    const size_t P = size_t(out_h_) * size_t(out_w_);
    const size_t NP = size_t(batch_) * P;
    dy_mat_.resize(1, 1, out_c, int(NP));

#pragma omp parallel for schedule(static)
    for (int n = 0; n < batch_; ++n) {
        const float* ds = dy.sample(n);
        for (int oc = 0; oc < out_c; ++oc)
            std::copy(ds + size_t(oc) * P, ds + size_t(oc + 1) * P,
                      dy_mat_.data() + size_t(oc) * NP + size_t(n) * P);
    }

    ecmap dym(dy_mat_.data(), out_c, int(NP));
    ecmap colm(cols_.data(), K, int(NP));
    emap gWm(gW.data(), out_c, K);
    gWm.noalias() = dym * colm.transpose();
    if (has_bias) evec(gb.data(), out_c) = dym.rowwise().sum();

    if (!dx) return;
    // Reuse the cols buffer for the column-space gradient.
    ecmap Wm(W.data(), out_c, K);
    emap dcol(cols_.data(), K, int(NP));
    dcol.noalias() = Wm.transpose() * dym;

    dx->resize(batch_, in_c, in_h_, in_w_);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < batch_; ++n) {
        float* xs = dx->sample(n);
        int row = 0;
        for (int ic = 0; ic < in_c; ++ic) {
            float* xc = xs + size_t(ic) * size_t(in_h_) * size_t(in_w_);
            for (int ki = 0; ki < k; ++ki) {
                for (int kj = 0; kj < k; ++kj, ++row) {
                    const float* crow = cols_.data() + size_t(row) * NP + size_t(n) * P;
                    for (int oh = 0; oh < out_h_; ++oh) {
                        const int r = oh * stride - pad + ki;
                        if (r < 0 || r >= in_h_) continue;
                        float* drow = xc + size_t(r) * size_t(in_w_);
                        const float* srow = crow + size_t(oh) * size_t(out_w_);
                        for (int ow = 0; ow < out_w_; ++ow) {
                            const int c = ow * stride - pad + kj;
                            if (c >= 0 && c < in_w_) drow[c] += srow[ow];
                        }
                    }
                }
            }
        }
    }
}

void conv2d::collect(const std::string& prefix, std::vector<param_ref>& params) {
    params.push_back({prefix + ".weight", &W, &gW});
    if (has_bias) params.push_back({prefix + ".bias", &b, &gb});
}

// ---------------------------------------------------------------------------
// conv_transpose2d

conv_transpose2d::conv_transpose2d(int in_channels, int out_channels, int kernel, int stride_,
                                   int pad_, bool bias)
    : in_c(in_channels), out_c(out_channels), k(kernel), stride(stride_), pad(pad_),
      has_bias(bias) {
    W.resize(in_c, out_c, k, k);
    gW.resize(in_c, out_c, k, k);
    if (has_bias) {
        b.resize(out_c, 1, 1, 1);
        gb.resize(out_c, 1, 1, 1);
    }
}

void conv_transpose2d::init(rng64& rng, float stddev) {
    fill_normal(W, rng, 0.0f, stddev);
    if (has_bias) b.zero();
}

void conv_transpose2d::forward(const tensor& x, tensor& y) {
    require(x.c == in_c, errc::config, "conv_transpose2d: channel mismatch " + x.shape_str());
    batch_ = x.n;
    in_h_ = x.h;
    in_w_ = x.w;
    out_h_ = out_size(in_h_);
    out_w_ = out_size(in_w_);
    require(out_h_ > 0 && out_w_ > 0, errc::config, "conv_transpose2d: bad geometry");
    y.resize(batch_, out_c, out_h_, out_w_);
    y.zero();

    const int K = out_c * k * k;
    const size_t P = size_t(in_h_) * size_t(in_w_);
    const size_t NP = size_t(batch_) * P;
    x_mat_.resize(1, 1, in_c, int(NP));
    cols_.resize(1, 1, K, int(NP));

#pragma omp parallel for schedule(static)
    for (int n = 0; n < batch_; ++n) {
        const float* xs = x.sample(n);
        for (int ic = 0; ic < in_c; ++ic)
            std::copy(xs + size_t(ic) * P, xs + size_t(ic + 1) * P,
                      x_mat_.data() + size_t(ic) * NP + size_t(n) * P);
    }

    ecmap Wm(W.data(), in_c, K);
    ecmap xm(x_mat_.data(), in_c, int(NP));
    emap colm(cols_.data(), K, int(NP));
    colm.noalias() = Wm.transpose() * xm;

#pragma omp parallel for schedule(static)
    for (int n = 0; n < batch_; ++n) {
        float* ys = y.sample(n);
        int row = 0;
        for (int oc = 0; oc < out_c; ++oc) {
            float* yc = ys + size_t(oc) * size_t(out_h_) * size_t(out_w_);
            for (int ki = 0; ki < k; ++ki) {
                for (int kj = 0; kj < k; ++kj, ++row) {
                    const float* crow = cols_.data() + size_t(row) * NP + size_t(n) * P;
                    for (int ph = 0; ph < in_h_; ++ph) {
                        const int r = ph * stride - pad + ki;
                        if (r < 0 || r >= out_h_) continue;
                        float* drow = yc + size_t(r) * size_t(out_w_);
                        const float* srow = crow + size_t(ph) * size_t(in_w_);
                        for (int pw = 0; pw < in_w_; ++pw) {
                            const int c = pw * stride - pad + kj;
                            if (c >= 0 && c < out_w_) drow[c] += srow[pw];
                        }
                    }
                }
            }
            if (has_bias) {
                evec ycv(yc, long(size_t(out_h_) * size_t(out_w_)));
                ycv.array() += b.v[size_t(oc)];
            }
        }
    }
}

void conv_transpose2d::backward(const tensor& dy, tensor* dx) {
    const int K = out_c * k * k;
    const size_t P = size_t(in_h_) * size_t(in_w_);
    const size_t NP = size_t(batch_) * P;

    // Column-space view of dy (the adjoint of the forward scatter).
#pragma omp parallel for schedule(static)
    for (int n = 0; n < batch_; ++n) {
        const float* ds = dy.sample(n);
        int row = 0;
        for (int oc = 0; oc < out_c; ++oc) {
            const float* dc = ds + size_t(oc) * size_t(out_h_) * size_t(out_w_);
            for (int ki = 0; ki < k; ++ki) {
                for (int kj = 0; kj < k; ++kj, ++row) {
                    float* crow = cols_.data() + size_t(row) * NP + size_t(n) * P;
                    for (int ph = 0; ph < in_h_; ++ph) {
                        const int r = ph * stride - pad + ki;
                        float* dst = crow + size_t(ph) * size_t(in_w_);
                        if (r < 0 || r >= out_h_) {
                            std::fill(dst, dst + in_w_, 0.0f);
                            continue;
                        }
                        const float* srow = dc + size_t(r) * size_t(out_w_);
                        for (int pw = 0; pw < in_w_; ++pw) {
                            const int c = pw * stride - pad + kj;
                            dst[pw] = (c >= 0 && c < out_w_) ? srow[c] : 0.0f;
                        }
                    }
                }
            }
        }
    }

    ecmap dcol(cols_.data(), K, int(NP));
    ecmap xm(x_mat_.data(), in_c, int(NP));
    emap gWm(gW.data(), in_c, K);
    gWm.noalias() = xm * dcol.transpose();

    if (has_bias) {
        for (int oc = 0; oc < out_c; ++oc) {
            double acc = 0.0;
            for (int n = 0; n < batch_; ++n) {
                ecvec dv(dy.sample(n) + size_t(oc) * size_t(out_h_) * size_t(out_w_),
                         long(size_t(out_h_) * size_t(out_w_)));
                acc += double(dv.sum());
            }
            gb.v[size_t(oc)] = float(acc);
        }
    }

    if (!dx) return;
    ecmap Wm(W.data(), in_c, K);
    emap dxm(x_mat_.data(), in_c, int(NP));
    dxm.noalias() = Wm * dcol;

    dx->resize(batch_, in_c, in_h_, in_w_);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < batch_; ++n) {
        float* xs = dx->sample(n);
        for (int ic = 0; ic < in_c; ++ic)
            std::copy(x_mat_.data() + size_t(ic) * NP + size_t(n) * P,
                      x_mat_.data() + size_t(ic) * NP + size_t(n) * P + P,
                      xs + size_t(ic) * P);
    }
}

void conv_transpose2d::collect(const std::string& prefix, std::vector<param_ref>& params) {
    params.push_back({prefix + ".weight", &W, &gW});
    if (has_bias) params.push_back({prefix + ".bias", &b, &gb});
}

// ---------------------------------------------------------------------------
// batchnorm2d

batchnorm2d::batchnorm2d(int channels_) : channels(channels_) {
    gamma.resize(channels, 1, 1, 1);
    beta.resize(channels, 1, 1, 1);
    g_gamma.resize(channels, 1, 1, 1);
    g_beta.resize(channels, 1, 1, 1);
    running_mean.resize(channels, 1, 1, 1);
    running_var.resize(channels, 1, 1, 1);
    running_var.fill(1.0f);
}

void batchnorm2d::init(rng64& rng) {
    // DCGAN-style: gamma ~ N(1, 0.02), beta = 0.
    fill_normal(gamma, rng, 1.0f, 0.02f);
    beta.zero();
    running_mean.zero();
    running_var.fill(1.0f);
}

void batchnorm2d::forward(const tensor& x, tensor& y, bool training) {
    require(x.c == channels, errc::config, "batchnorm2d: channel mismatch");
    y.resize(x.n, x.c, x.h, x.w);
    const size_t P = x.plane();
    const double M = double(x.n) * double(P);
    invstd_.assign(size_t(channels), 0.0f);
    trained_forward_ = training;
    if (training) xhat_.resize(x.n, x.c, x.h, x.w);

#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        if (training) {
            double mean = 0.0;
            for (int n = 0; n < x.n; ++n) {
                ecvec xv(x.sample(n) + size_t(c) * P, long(P));
                mean += double(xv.sum());
            }
            mean /= M;
            double var = 0.0;
            for (int n = 0; n < x.n; ++n) {
                ecvec xv(x.sample(n) + size_t(c) * P, long(P));
                var += double((xv.array() - float(mean)).square().sum());
            }
            var /= M;  // biased, used consistently for both paths
            const float istd = float(1.0 / std::sqrt(var + double(eps)));
            invstd_[size_t(c)] = istd;
            running_mean.v[size_t(c)] =
                (1.0f - momentum) * running_mean.v[size_t(c)] + momentum * float(mean);
            running_var.v[size_t(c)] =
                (1.0f - momentum) * running_var.v[size_t(c)] + momentum * float(var);
            const float g = gamma.v[size_t(c)], bb = beta.v[size_t(c)];
            for (int n = 0; n < x.n; ++n) {
                ecvec xv(x.sample(n) + size_t(c) * P, long(P));
                evec hv(xhat_.sample(n) + size_t(c) * P, long(P));
                evec yv(y.sample(n) + size_t(c) * P, long(P));
                hv = (xv.array() - float(mean)) * istd;
                yv = hv.array() * g + bb;
            }
        } else {
            const float istd =
                1.0f / std::sqrt(running_var.v[size_t(c)] + eps);
            invstd_[size_t(c)] = istd;
            const float mu = running_mean.v[size_t(c)];
            const float g = gamma.v[size_t(c)], bb = beta.v[size_t(c)];
            for (int n = 0; n < x.n; ++n) {
                ecvec xv(x.sample(n) + size_t(c) * P, long(P));
                evec yv(y.sample(n) + size_t(c) * P, long(P));
                yv = (xv.array() - mu) * istd * g + bb;
            }
        }
    }
}

void batchnorm2d::backward(const tensor& dy, tensor* dx) {
    require(trained_forward_, errc::config, "batchnorm2d: backward requires a training forward");
    const size_t P = dy.plane();
    const double M = double(dy.n) * double(P);
    // dx may alias dy; resizing would clear the incoming gradient. The
    // per-channel writes below only touch a channel after its sums are done.
    if (dx && dx != &dy) dx->resize(dy.n, dy.c, dy.h, dy.w);

#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        double s_dy = 0.0, s_dy_xhat = 0.0;
        for (int n = 0; n < dy.n; ++n) {
            ecvec dv(dy.sample(n) + size_t(c) * P, long(P));
            ecvec hv(xhat_.sample(n) + size_t(c) * P, long(P));
            s_dy += double(dv.sum());
            s_dy_xhat += double(dv.dot(hv));
        }
        g_beta.v[size_t(c)] = float(s_dy);
        g_gamma.v[size_t(c)] = float(s_dy_xhat);
        if (!dx) continue;
        const float g = gamma.v[size_t(c)];
        const float istd = invstd_[size_t(c)];
        const float mean_dy = float(s_dy / M);
        const float mean_dy_xhat = float(s_dy_xhat / M);
        for (int n = 0; n < dy.n; ++n) {
            ecvec dv(dy.sample(n) + size_t(c) * P, long(P));
            ecvec hv(xhat_.sample(n) + size_t(c) * P, long(P));
            evec xv(dx->sample(n) + size_t(c) * P, long(P));
            xv = (dv.array() - mean_dy - hv.array() * mean_dy_xhat) * (g * istd);
        }
    }
}

void batchnorm2d::collect(const std::string& prefix, std::vector<param_ref>& params,
                          std::vector<buffer_ref>& buffers) {
    params.push_back({prefix + ".gamma", &gamma, &g_gamma});
    params.push_back({prefix + ".beta", &beta, &g_beta});
    buffers.push_back({prefix + ".running_mean", &running_mean});
    buffers.push_back({prefix + ".running_var", &running_var});
}

// ---------------------------------------------------------------------------
// linear

linear::linear(int in_features, int out_features) : in_f(in_features), out_f(out_features) {
    W.resize(out_f, in_f, 1, 1);
    gW.resize(out_f, in_f, 1, 1);
    b.resize(out_f, 1, 1, 1);
    gb.resize(out_f, 1, 1, 1);
}

void linear::init(rng64& rng, float stddev) {
    fill_normal(W, rng, 0.0f, stddev);
    b.zero();
}

void linear::forward(const tensor& x, tensor& y) {
    require(int(x.sample_stride()) == in_f, errc::config,
            "linear: expected " + std::to_string(in_f) + " features, got " + x.shape_str());
    x_cache_ = x;
    y.resize(x.n, out_f, 1, 1);
    ecmap xm(x.data(), x.n, in_f);
    ecmap Wm(W.data(), out_f, in_f);
    emap ym(y.data(), x.n, out_f);
    ym.noalias() = xm * Wm.transpose();
    ym.rowwise() += ecvec(b.data(), out_f).transpose();
}

void linear::backward(const tensor& dy, tensor* dx) {
    const int N = x_cache_.n;
    ecmap dym(dy.data(), N, out_f);
    ecmap xm(x_cache_.data(), N, in_f);
    emap gWm(gW.data(), out_f, in_f);
    gWm.noalias() = dym.transpose() * xm;
    evec(gb.data(), out_f) = dym.colwise().sum();
    if (!dx) return;
    dx->resize(N, in_f, 1, 1);
    emap dxm(dx->data(), N, in_f);
    ecmap Wm(W.data(), out_f, in_f);
    dxm.noalias() = dym * Wm;
}

void linear::collect(const std::string& prefix, std::vector<param_ref>& params) {
    params.push_back({prefix + ".weight", &W, &gW});
    params.push_back({prefix + ".bias", &b, &gb});
}

// ---------------------------------------------------------------------------
// activation

void activation::forward(const tensor& x, tensor& y) {
    y.resize(x.n, x.c, x.h, x.w);
    ecvec xv(x.data(), long(x.size()));
    evec yv(y.data(), long(y.size()));
    switch (kind) {
        case activation_kind::relu:
            cache_ = x;
            yv = xv.cwiseMax(0.0f);
            break;
        case activation_kind::leaky_relu:
            cache_ = x;
            yv = xv.cwiseMax(0.0f) + xv.cwiseMin(0.0f) * slope;
            break;
        case activation_kind::tanh:
            yv = xv.array().tanh();
            cache_ = y;
            break;
    }
}

void activation::backward(const tensor& dy, tensor& dx) {
    if (&dx != &dy) dx.resize(dy.n, dy.c, dy.h, dy.w);  // aliasing is allowed
    ecvec dv(dy.data(), long(dy.size()));
    ecvec cv(cache_.data(), long(cache_.size()));
    evec xv(dx.data(), long(dx.size()));
    switch (kind) {
        case activation_kind::relu:
            xv = (cv.array() > 0.0f).select(dv, 0.0f);
            break;
        case activation_kind::leaky_relu:
            xv = (cv.array() > 0.0f).select(dv, dv * slope);
            break;
        case activation_kind::tanh:
            xv = dv.array() * (1.0f - cv.array().square());
            break;
    }
}

}  // namespace preview::nn
