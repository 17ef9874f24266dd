#include "attnlens/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace attnlens {

long long shape_size(const std::vector<int>& shape) {
    long long n = 1;
    for (int e : shape) {
        if (e <= 0) throw DimensionError("tensor extents must be positive");
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shp, std::vector<Scalar> values)
    : shape(std::move(shp)), data(std::move(values)) {
    if (shape_size(shape) != static_cast<long long>(data.size())) {
        throw DimensionError("tensor data length does not match shape");
    }
}

Tensor Tensor::zeros(std::vector<int> shp) { return full(std::move(shp), 0.0); }

Tensor Tensor::ones(std::vector<int> shp) { return full(std::move(shp), 1.0); }

Tensor Tensor::full(std::vector<int> shp, Scalar v) {
    const long long n = shape_size(shp);
    Tensor t;
    t.shape = std::move(shp);
    t.data.assign(static_cast<size_t>(n), v);
    return t;
}

Tensor Tensor::identity(int n) {
    Tensor t = zeros({n, n});
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

int Tensor::rows() const {
    if (ndim() != 2) throw DimensionError("rows() requires a 2-D tensor");
    return shape[0];
}

int Tensor::cols() const {
    if (ndim() != 2) throw DimensionError("cols() requires a 2-D tensor");
    return shape[1];
}

bool Tensor::all_finite() const {
    for (Scalar v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw DimensionError("matmul requires 2-D tensors");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul inner extents differ: " + std::to_string(a.cols()) +
                             " vs " + std::to_string(b.rows()));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
            const Scalar av = a.at(i, l);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) out.at(i, j) += av * b.at(l, j);
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("transpose requires a 2-D tensor");
    Tensor out = Tensor::zeros({a.cols(), a.rows()});
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw DimensionError("add requires identical shapes");
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw DimensionError("mul requires identical shapes");
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

Tensor scale(const Tensor& a, Scalar factor) {
    Tensor out = a;
    for (Scalar& v : out.data) v *= factor;
    return out;
}

Tensor clamp_nonneg(const Tensor& a) {
    Tensor out = a;
    for (Scalar& v : out.data) v = std::max<Scalar>(v, 0.0);
    return out;
}

Tensor gelu(const Tensor& a) {
    Tensor out = a;
    for (Scalar& v : out.data) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    return out;
}

Tensor softmax_lastdim(const Tensor& a) {
    if (a.ndim() < 1 || a.shape.back() < 1) {
        throw ContractError("softmax_lastdim requires a non-empty last extent");
    }
    const int width = a.shape.back();
    const long long rows = a.size() / width;
    Tensor out = a;
    for (long long r = 0; r < rows; ++r) {
        Scalar* row = out.data.data() + r * width;
        Scalar mx = row[0];
        for (int j = 1; j < width; ++j) mx = std::max(mx, row[j]);
        Scalar sum = 0.0;
        for (int j = 0; j < width; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < width; ++j) row[j] /= sum;
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps,
                  LayerNormStats* stats) {
    if (x.ndim() != 2) throw DimensionError("layer_norm expects [tokens x features]");
    const int n = x.rows(), d = x.cols();
    if (shape_size(gain.shape) != d || shape_size(bias.shape) != d) {
        throw DimensionError("layer_norm gain/bias length must equal the feature count");
    }
    if (eps < 0.0) throw ContractError("layer_norm eps must be >= 0");
    Tensor out = Tensor::zeros({n, d});
    if (stats) {
        stats->mean.assign(static_cast<size_t>(n), 0.0);
        stats->std.assign(static_cast<size_t>(n), 0.0);
    }
    for (int i = 0; i < n; ++i) {
        Scalar mean = 0.0;
        for (int j = 0; j < d; ++j) mean += x.at(i, j);
        mean /= d;
        Scalar var = 0.0;
        for (int j = 0; j < d; ++j) {
            const Scalar c = x.at(i, j) - mean;
            var += c * c;
        }
        var /= d;
        const Scalar sd = std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) {
            out.at(i, j) = (x.at(i, j) - mean) / sd * gain.data[static_cast<size_t>(j)] +
                           bias.data[static_cast<size_t>(j)];
        }
        if (stats) {
            stats->mean[static_cast<size_t>(i)] = mean;
            stats->std[static_cast<size_t>(i)] = sd;
        }
    }
    return out;
}

Tensor finite_diff_grad(const std::function<Scalar(const Tensor&)>& f, const Tensor& x,
                        Scalar eps) {
    if (eps <= 0.0) throw ContractError("finite_diff_grad eps must be > 0");
    Tensor grad = Tensor::zeros(x.shape);
    Tensor probe = x;
    for (size_t i = 0; i < probe.data.size(); ++i) {
        const Scalar orig = probe.data[i];
        probe.data[i] = orig + eps;
        const Scalar hi = f(probe);
        probe.data[i] = orig - eps;
        const Scalar lo = f(probe);
        probe.data[i] = orig;
        grad.data[i] = (hi - lo) / (2.0 * eps);
    }
    return grad;
}

} // namespace attnlens
