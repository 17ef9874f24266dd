#pragma once

#include <functional>
#include <vector>

#include "attnlens/error.hpp"

namespace attnlens {

// Element type of all in-memory math. Weight files store f32 (see io.hpp);
// values are widened on load so gradient checks stay well inside the test
// tolerances.
using Scalar = double;

long long shape_size(const std::vector<int>& shape);

// Dense row-major n-dimensional array.
struct Tensor {
    std::vector<int> shape;
    std::vector<Scalar> data;

    Tensor() = default;
    Tensor(std::vector<int> shp, std::vector<Scalar> values);

    static Tensor zeros(std::vector<int> shp);
    static Tensor ones(std::vector<int> shp);
    static Tensor full(std::vector<int> shp, Scalar v);
    static Tensor identity(int n);

    long long size() const { return static_cast<long long>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    // 2-D accessors; rows()/cols() throw on other ranks.
    int rows() const;
    int cols() const;
    Scalar at(int i) const { return data[static_cast<size_t>(i)]; }
    Scalar& at(int i) { return data[static_cast<size_t>(i)]; }
    Scalar at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
    Scalar& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    Scalar at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    Scalar& at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
};

struct LayerNormStats {
    std::vector<Scalar> mean;
    std::vector<Scalar> std; // sqrt(var + eps), population variance
};

// Plain (non-recording) kernels. The autodiff graph forwards to these.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);
Tensor clamp_nonneg(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor softmax_lastdim(const Tensor& a);

// Per-token normalization of a [tokens x features] matrix. `stats` (optional)
// receives each token's mean and std; the std already includes eps.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps,
                  LayerNormStats* stats = nullptr);

// Central-difference gradient of a scalar-valued function, same shape as x.
Tensor finite_diff_grad(const std::function<Scalar(const Tensor&)>& f, const Tensor& x,
                        Scalar eps);

} // namespace attnlens
