#pragma once

#include <cstddef>
#include <new>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace preview::nn {

// 64-byte-aligned allocator. With a fixed base alignment, vectorized kernels
// take the same code path for every allocation of the same shape, which
// keeps training runs bitwise reproducible.
template <typename T>
struct aligned_alloc64 {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    aligned_alloc64() = default;
    template <class U>
    aligned_alloc64(const aligned_alloc64<U>&) {}

    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, size_t) noexcept { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const aligned_alloc64<U>&) const {
        return true;
    }
};

using fvec = std::vector<float, aligned_alloc64<float>>;

// Dense float32 NCHW tensor. Vectors are stored as (n, c, 1, 1).
struct tensor {
    fvec v;
    int n = 0, c = 0, h = 0, w = 0;

    tensor() = default;
    tensor(int n_, int c_, int h_, int w_) { resize(n_, c_, h_, w_); }

    static tensor zeros(int n_, int c_, int h_ = 1, int w_ = 1) { return tensor(n_, c_, h_, w_); }

    void resize(int n_, int c_, int h_, int w_) {
        n = n_;
        c = c_;
        h = h_;
        w = w_;
        v.assign(size_t(n) * size_t(c) * size_t(h) * size_t(w), 0.0f);
    }

    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }
    float* data() { return v.data(); }
    const float* data() const { return v.data(); }

    size_t plane() const { return size_t(h) * size_t(w); }
    size_t sample_stride() const { return size_t(c) * plane(); }
    float* sample(int i) { return v.data() + size_t(i) * sample_stride(); }
    const float* sample(int i) const { return v.data() + size_t(i) * sample_stride(); }

    void fill(float value) { std::fill(v.begin(), v.end(), value); }
    void zero() { fill(0.0f); }

    bool same_shape(const tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

bool all_finite(const tensor& t);

}  // namespace preview::nn
