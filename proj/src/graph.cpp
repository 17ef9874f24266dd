#include "attnlens/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace attnlens {

namespace {

void ensure_buffer(Tensor& buf, const std::vector<int>& shape) {
    if (buf.data.empty()) buf = Tensor::zeros(shape);
}

} // namespace

NodeId Graph::push(Node n) {
    if (!n.value.all_finite()) {
        throw ContractError("graph op produced a non-finite value");
    }
    nodes_.push_back(std::move(n));
    marked_.push_back(0);
    return static_cast<NodeId>(nodes_.size()) - 1;
}

void Graph::check_id(NodeId id) const {
    if (id < 0 || id >= node_count()) throw ContractError("invalid node id");
}

const Graph::Node& Graph::node(NodeId id) const {
    check_id(id);
    return nodes_[static_cast<size_t>(id)];
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }

const LayerNormStats& Graph::ln_stats(NodeId id) const {
    const Node& n = node(id);
    if (n.op != Op::LayerNorm) throw ContractError("ln_stats on a non-layer_norm node");
    return n.ln;
}

void Graph::mark(NodeId id) {
    check_id(id);
    marked_[static_cast<size_t>(id)] = 1;
}

bool Graph::marked(NodeId id) const {
    check_id(id);
    return marked_[static_cast<size_t>(id)] != 0;
}

NodeId Graph::input(Tensor value) {
    if (!value.all_finite()) throw ContractError("graph inputs must be finite");
    Node n;
    n.op = Op::Input;
    n.value = std::move(value);
    return push(std::move(n));
}

// Shared forward evaluation used both at construction time and by
// eval_with_override.
Tensor Graph::eval(const Node& n, const std::vector<const Tensor*>& in, LayerNormStats* ln) {
    switch (n.op) {
        case Op::Input:
            return n.value;
        case Op::MatMul:
            return attnlens::matmul(*in[0], *in[1]);
        case Op::Add:
            return attnlens::add(*in[0], *in[1]);
        case Op::Mul:
            return attnlens::mul(*in[0], *in[1]);
        case Op::Scale:
            return attnlens::scale(*in[0], n.scalar);
        case Op::ClampNonneg:
            return attnlens::clamp_nonneg(*in[0]);
        case Op::Gelu:
            return attnlens::gelu(*in[0]);
        case Op::Softmax:
            return attnlens::softmax_lastdim(*in[0]);
        case Op::LayerNorm:
            return attnlens::layer_norm(*in[0], *in[1], *in[2], n.scalar, ln);
        case Op::GatherRows: {
            const Tensor& a = *in[0];
            Tensor out = Tensor::zeros({static_cast<int>(n.indices.size()), a.cols()});
            for (size_t r = 0; r < n.indices.size(); ++r)
                for (int j = 0; j < a.cols(); ++j)
                    out.at(static_cast<int>(r), j) = a.at(n.indices[r], j);
            return out;
        }
        case Op::ConcatRows: {
            int rows = 0;
            const int cols = in[0]->cols();
            for (const Tensor* t : in) rows += t->rows();
            Tensor out = Tensor::zeros({rows, cols});
            int r0 = 0;
            for (const Tensor* t : in) {
                for (int i = 0; i < t->rows(); ++i)
                    for (int j = 0; j < cols; ++j) out.at(r0 + i, j) = t->at(i, j);
                r0 += t->rows();
            }
            return out;
        }
        case Op::ConcatCols: {
            int cols = 0;
            const int rows = in[0]->rows();
            for (const Tensor* t : in) cols += t->cols();
            Tensor out = Tensor::zeros({rows, cols});
            int c0 = 0;
            for (const Tensor* t : in) {
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < t->cols(); ++j) out.at(i, c0 + j) = t->at(i, j);
                c0 += t->cols();
            }
            return out;
        }
        case Op::SliceCols: {
            const Tensor& a = *in[0];
            Tensor out = Tensor::zeros({a.rows(), n.i1});
            for (int i = 0; i < a.rows(); ++i)
                for (int j = 0; j < n.i1; ++j) out.at(i, j) = a.at(i, n.i0 + j);
            return out;
        }
        case Op::Transpose:
            return attnlens::transpose(*in[0]);
        case Op::MeanRows: {
            const Tensor& a = *in[0];
            Tensor out = Tensor::zeros({1, a.cols()});
            for (int i = 0; i < a.rows(); ++i)
                for (int j = 0; j < a.cols(); ++j) out.at(0, j) += a.at(i, j);
            for (int j = 0; j < a.cols(); ++j) out.at(0, j) /= a.rows();
            return out;
        }
        case Op::SumAll: {
            Scalar s = 0.0;
            for (Scalar v : in[0]->data) s += v;
            return Tensor({1}, {s});
        }
        case Op::Pick:
            return Tensor({1}, {in[0]->data[static_cast<size_t>(n.i0)]});
        case Op::Reshape: {
            Tensor out = *in[0];
            out.shape = n.indices;
            return out;
        }
    }
    throw ContractError("unknown op");
}

#define ATTNLENS_UNARY(name, opkind)                          \
    NodeId Graph::name(NodeId a) {                            \
        Node n;                                               \
        n.op = opkind;                                        \
        n.inputs = {a};                                       \
        n.value = eval(n, {&value(a)}, nullptr);              \
        return push(std::move(n));                            \
    }

ATTNLENS_UNARY(clamp_nonneg, Op::ClampNonneg)
ATTNLENS_UNARY(gelu, Op::Gelu)
ATTNLENS_UNARY(softmax_lastdim, Op::Softmax)
ATTNLENS_UNARY(transpose, Op::Transpose)
ATTNLENS_UNARY(mean_rows, Op::MeanRows)
ATTNLENS_UNARY(sum_all, Op::SumAll)

#undef ATTNLENS_UNARY

NodeId Graph::matmul(NodeId a, NodeId b) {
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a, b};
    n.value = eval(n, {&value(a), &value(b)}, nullptr);
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Add;
    n.inputs = {a, b};
    n.value = eval(n, {&value(a), &value(b)}, nullptr);
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Mul;
    n.inputs = {a, b};
    n.value = eval(n, {&value(a), &value(b)}, nullptr);
    return push(std::move(n));
}

NodeId Graph::scale(NodeId a, Scalar factor) {
    Node n;
    n.op = Op::Scale;
    n.inputs = {a};
    n.scalar = factor;
    n.value = eval(n, {&value(a)}, nullptr);
    return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias, Scalar eps) {
    Node n;
    n.op = Op::LayerNorm;
    n.inputs = {x, gain, bias};
    n.scalar = eps;
    n.value = eval(n, {&value(x), &value(gain), &value(bias)}, &n.ln);
    return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId a, std::vector<int> rows) {
    const Tensor& v = value(a);
    if (v.ndim() != 2) throw DimensionError("gather_rows requires a 2-D tensor");
    for (int r : rows) {
        if (r < 0 || r >= v.rows()) throw ContractError("gather_rows index out of range");
    }
    Node n;
    n.op = Op::GatherRows;
    n.inputs = {a};
    n.indices = std::move(rows);
    n.value = eval(n, {&v}, nullptr);
    return push(std::move(n));
}

NodeId Graph::concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ContractError("concat_rows requires at least one part");
    std::vector<const Tensor*> in;
    for (NodeId id : parts) {
        const Tensor& t = value(id);
        if (t.ndim() != 2 || t.cols() != value(parts[0]).cols()) {
            throw DimensionError("concat_rows parts must be 2-D with equal column counts");
        }
        in.push_back(&t);
    }
    Node n;
    n.op = Op::ConcatRows;
    n.inputs = parts;
    n.value = eval(n, in, nullptr);
    return push(std::move(n));
}

NodeId Graph::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ContractError("concat_cols requires at least one part");
    std::vector<const Tensor*> in;
    for (NodeId id : parts) {
        const Tensor& t = value(id);
        if (t.ndim() != 2 || t.rows() != value(parts[0]).rows()) {
            throw DimensionError("concat_cols parts must be 2-D with equal row counts");
        }
        in.push_back(&t);
    }
    Node n;
    n.op = Op::ConcatCols;
    n.inputs = parts;
    n.value = eval(n, in, nullptr);
    return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId a, int start, int count) {
    const Tensor& v = value(a);
    if (v.ndim() != 2) throw DimensionError("slice_cols requires a 2-D tensor");
    if (start < 0 || count <= 0 || start + count > v.cols()) {
        throw ContractError("slice_cols range out of bounds");
    }
    Node n;
    n.op = Op::SliceCols;
    n.inputs = {a};
    n.i0 = start;
    n.i1 = count;
    n.value = eval(n, {&v}, nullptr);
    return push(std::move(n));
}

NodeId Graph::pick(NodeId a, int flat_index) {
    const Tensor& v = value(a);
    if (flat_index < 0 || flat_index >= v.size()) {
        throw ContractError("pick index out of range");
    }
    Node n;
    n.op = Op::Pick;
    n.inputs = {a};
    n.i0 = flat_index;
    n.value = eval(n, {&v}, nullptr);
    return push(std::move(n));
}

NodeId Graph::reshape(NodeId a, std::vector<int> new_shape) {
    const Tensor& v = value(a);
    if (shape_size(new_shape) != v.size()) throw DimensionError("reshape size mismatch");
    Node n;
    n.op = Op::Reshape;
    n.inputs = {a};
    n.indices = std::move(new_shape);
    n.value = eval(n, {&v}, nullptr);
    return push(std::move(n));
}

void Graph::backward(NodeId scalar_output) {
    check_id(scalar_output);
    if (value(scalar_output).size() != 1) {
        throw ContractError("backward requires a scalar ([1]-shaped) output node");
    }
    bool any_marked = false;
    for (char m : marked_) any_marked |= (m != 0);
    if (!any_marked) throw ContractError("backward requires a non-empty marked set");

    std::vector<Tensor> g(nodes_.size());
    g[static_cast<size_t>(scalar_output)] = Tensor::ones(value(scalar_output).shape);

    for (NodeId id = scalar_output; id >= 0; --id) {
        const Tensor& gy = g[static_cast<size_t>(id)];
        if (gy.data.empty()) continue;
        const Node& n = nodes_[static_cast<size_t>(id)];
        auto gbuf = [&](int slot) -> Tensor& {
            Tensor& buf = g[static_cast<size_t>(n.inputs[static_cast<size_t>(slot)])];
            ensure_buffer(buf, value(n.inputs[static_cast<size_t>(slot)]).shape);
            return buf;
        };
        switch (n.op) {
            case Op::Input:
                break;
            case Op::MatMul: {
                const Tensor& a = value(n.inputs[0]);
                const Tensor& b = value(n.inputs[1]);
                Tensor& ga = gbuf(0);
                Tensor& gb = gbuf(1);
                // dA = G * B^T, dB = A^T * G
                for (int i = 0; i < a.rows(); ++i)
                    for (int l = 0; l < a.cols(); ++l) {
                        Scalar s = 0.0;
                        for (int j = 0; j < b.cols(); ++j) s += gy.at(i, j) * b.at(l, j);
                        ga.at(i, l) += s;
                    }
                for (int l = 0; l < b.rows(); ++l)
                    for (int j = 0; j < b.cols(); ++j) {
                        Scalar s = 0.0;
                        for (int i = 0; i < a.rows(); ++i) s += a.at(i, l) * gy.at(i, j);
                        gb.at(l, j) += s;
                    }
                break;
            }
            case Op::Add: {
                Tensor& ga = gbuf(0);
                Tensor& gb = gbuf(1);
                for (size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i];
                    gb.data[i] += gy.data[i];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& a = value(n.inputs[0]);
                const Tensor& b = value(n.inputs[1]);
                Tensor& ga = gbuf(0);
                Tensor& gb = gbuf(1);
                for (size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i] * b.data[i];
                    gb.data[i] += gy.data[i] * a.data[i];
                }
                break;
            }
            case Op::Scale: {
                Tensor& ga = gbuf(0);
                for (size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i] * n.scalar;
                break;
            }
            case Op::ClampNonneg: {
                const Tensor& x = value(n.inputs[0]);
                Tensor& ga = gbuf(0);
                // Subgradient 0 at exactly 0.
                for (size_t i = 0; i < gy.data.size(); ++i)
                    if (x.data[i] > 0.0) ga.data[i] += gy.data[i];
                break;
            }
            case Op::Gelu: {
                const Tensor& x = value(n.inputs[0]);
                Tensor& ga = gbuf(0);
                for (size_t i = 0; i < gy.data.size(); ++i) {
                    const Scalar v = x.data[i];
                    const Scalar cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
                    const Scalar pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
                    ga.data[i] += gy.data[i] * (cdf + v * pdf);
                }
                break;
            }
            case Op::Softmax: {
                const Tensor& y = n.value;
                Tensor& ga = gbuf(0);
                const int width = y.shape.back();
                const long long rows = y.size() / width;
                for (long long r = 0; r < rows; ++r) {
                    const Scalar* yr = y.data.data() + r * width;
                    const Scalar* gr = gy.data.data() + r * width;
                    Scalar dot = 0.0;
                    for (int j = 0; j < width; ++j) dot += gr[j] * yr[j];
                    Scalar* out = ga.data.data() + r * width;
                    for (int j = 0; j < width; ++j) out[j] += yr[j] * (gr[j] - dot);
                }
                break;
            }
            case Op::LayerNorm: {
                const Tensor& x = value(n.inputs[0]);
                const Tensor& gain = value(n.inputs[1]);
                Tensor& gx = gbuf(0);
                Tensor& ggain = gbuf(1);
                Tensor& gbias = gbuf(2);
                const int rows = x.rows(), d = x.cols();
                for (int i = 0; i < rows; ++i) {
                    const Scalar mean = n.ln.mean[static_cast<size_t>(i)];
                    const Scalar sd = n.ln.std[static_cast<size_t>(i)];
                    Scalar sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const Scalar xh = (x.at(i, j) - mean) / sd;
                        const Scalar dy = gy.at(i, j);
                        const Scalar dxh = dy * gain.data[static_cast<size_t>(j)];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        ggain.data[static_cast<size_t>(j)] += dy * xh;
                        gbias.data[static_cast<size_t>(j)] += dy;
                    }
                    for (int j = 0; j < d; ++j) {
                        const Scalar xh = (x.at(i, j) - mean) / sd;
                        const Scalar dxh = gy.at(i, j) * gain.data[static_cast<size_t>(j)];
                        gx.at(i, j) += (dxh - sum_dxh / d - xh * sum_dxh_xh / d) / sd;
                    }
                }
                break;
            }
            case Op::GatherRows: {
                Tensor& ga = gbuf(0);
                const int cols = ga.cols();
                for (size_t r = 0; r < n.indices.size(); ++r)
                    for (int j = 0; j < cols; ++j)
                        ga.at(n.indices[r], j) += gy.at(static_cast<int>(r), j);
                break;
            }
            case Op::ConcatRows: {
                int r0 = 0;
                for (size_t p = 0; p < n.inputs.size(); ++p) {
                    Tensor& gp = gbuf(static_cast<int>(p));
                    for (int i = 0; i < gp.rows(); ++i)
                        for (int j = 0; j < gp.cols(); ++j) gp.at(i, j) += gy.at(r0 + i, j);
                    r0 += gp.rows();
                }
                break;
            }
            case Op::ConcatCols: {
                int c0 = 0;
                for (size_t p = 0; p < n.inputs.size(); ++p) {
                    Tensor& gp = gbuf(static_cast<int>(p));
                    for (int i = 0; i < gp.rows(); ++i)
                        for (int j = 0; j < gp.cols(); ++j) gp.at(i, j) += gy.at(i, c0 + j);
                    c0 += gp.cols();
                }
                break;
            }
            case Op::SliceCols: {
                Tensor& ga = gbuf(0);
                for (int i = 0; i < gy.rows(); ++i)
                    for (int j = 0; j < gy.cols(); ++j) ga.at(i, n.i0 + j) += gy.at(i, j);
                break;
            }
            case Op::Transpose: {
                Tensor& ga = gbuf(0);
                for (int i = 0; i < gy.rows(); ++i)
                    for (int j = 0; j < gy.cols(); ++j) ga.at(j, i) += gy.at(i, j);
                break;
            }
            case Op::MeanRows: {
                Tensor& ga = gbuf(0);
                const int rows = ga.rows();
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < ga.cols(); ++j) ga.at(i, j) += gy.at(0, j) / rows;
                break;
            }
            case Op::SumAll: {
                Tensor& ga = gbuf(0);
                for (Scalar& v : ga.data) v += gy.data[0];
                break;
            }
            case Op::Pick: {
                Tensor& ga = gbuf(0);
                ga.data[static_cast<size_t>(n.i0)] += gy.data[0];
                break;
            }
            case Op::Reshape: {
                Tensor& ga = gbuf(0);
                for (size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i];
                break;
            }
        }
    }

    grads_.clear();
    for (NodeId id = 0; id < node_count(); ++id) {
        if (!marked_[static_cast<size_t>(id)]) continue;
        Tensor& buf = g[static_cast<size_t>(id)];
        if (buf.data.empty()) buf = Tensor::zeros(value(id).shape);
        grads_.emplace(id, std::move(buf));
    }
    backward_done_ = true;
}

const Tensor& Graph::grad(NodeId id) const {
    if (!backward_done_) throw ContractError("grad queried before backward");
    auto it = grads_.find(id);
    if (it == grads_.end()) throw ContractError("grad queried for an unmarked node");
    return it->second;
}

Tensor Graph::eval_with_override(NodeId overridden, const Tensor& replacement, NodeId out) const {
    check_id(overridden);
    check_id(out);
    if (!value(overridden).same_shape(replacement)) {
        throw ContractError("override replacement must match the node's shape");
    }
    std::vector<const Tensor*> scratch(nodes_.size());
    std::vector<Tensor> owned(nodes_.size());
    std::vector<char> dirty(nodes_.size(), 0);
    for (NodeId id = 0; id <= out; ++id) scratch[static_cast<size_t>(id)] = &value(id);
    scratch[static_cast<size_t>(overridden)] = &replacement;
    dirty[static_cast<size_t>(overridden)] = 1;
    for (NodeId id = overridden + 1; id <= out; ++id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (n.op == Op::Input) continue;
        bool stale = false;
        for (NodeId in : n.inputs) stale |= (dirty[static_cast<size_t>(in)] != 0);
        if (!stale) continue;
        std::vector<const Tensor*> in;
        in.reserve(n.inputs.size());
        for (NodeId i : n.inputs) in.push_back(scratch[static_cast<size_t>(i)]);
        owned[static_cast<size_t>(id)] = eval(n, in, nullptr);
        scratch[static_cast<size_t>(id)] = &owned[static_cast<size_t>(id)];
        dirty[static_cast<size_t>(id)] = 1;
    }
    return *scratch[static_cast<size_t>(out)];
}

} // namespace attnlens
