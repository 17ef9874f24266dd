#pragma once

#include <unordered_map>
#include <vector>

#include "attnlens/tensor.hpp"

namespace attnlens {

using NodeId = int;

// Eagerly evaluated computation graph with reverse-mode differentiation.
// Nodes are created in topological order and cache their forward value.
// A graph instance is single-threaded; multiple graphs may run concurrently.
class Graph {
public:
    NodeId input(Tensor value);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, Scalar factor);
    NodeId clamp_nonneg(NodeId a);
    NodeId gelu(NodeId a);
    NodeId softmax_lastdim(NodeId a);
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, Scalar eps);
    NodeId gather_rows(NodeId a, std::vector<int> rows);
    NodeId concat_rows(const std::vector<NodeId>& parts);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId slice_cols(NodeId a, int start, int count);
    NodeId transpose(NodeId a);
    NodeId mean_rows(NodeId a);
    NodeId sum_all(NodeId a);
    NodeId pick(NodeId a, int flat_index);
    NodeId reshape(NodeId a, std::vector<int> new_shape);

    int node_count() const { return static_cast<int>(nodes_.size()); }
    const Tensor& value(NodeId id) const;
    const LayerNormStats& ln_stats(NodeId id) const;

    // Gradients are materialized only for marked nodes.
    void mark(NodeId id);
    bool marked(NodeId id) const;

    // Reverse-mode pass from a scalar ([1]-shaped) output. Marked nodes not on
    // any path to the output receive zero gradients. May be called repeatedly
    // (e.g. for different output picks); each call replaces prior gradients.
    void backward(NodeId scalar_output);
    const Tensor& grad(NodeId id) const;

    // Re-evaluates the graph with `replacement` substituted at `node` and
    // returns the resulting value at `out`. Forward-only; used as the
    // independent oracle against backward().
    Tensor eval_with_override(NodeId node, const Tensor& replacement, NodeId out) const;

private:
    enum class Op {
        Input,
        MatMul,
        Add,
        Mul,
        Scale,
        ClampNonneg,
        Gelu,
        Softmax,
        LayerNorm,
        GatherRows,
        ConcatRows,
        ConcatCols,
        SliceCols,
        Transpose,
        MeanRows,
        SumAll,
        Pick,
        Reshape,
    };

    struct Node {
        Op op;
        std::vector<NodeId> inputs;
        Tensor value;
        Scalar scalar = 0.0;       // scale factor or layer-norm eps
        std::vector<int> indices;  // gather rows / reshape target shape
        int i0 = 0, i1 = 0;        // slice start/count, pick index
        LayerNormStats ln;
    };

    NodeId push(Node node);
    const Node& node(NodeId id) const;
    void check_id(NodeId id) const;
    static Tensor eval(const Node& n, const std::vector<const Tensor*>& in, LayerNormStats* ln);

    std::vector<Node> nodes_;
    std::vector<char> marked_;
    std::unordered_map<NodeId, Tensor> grads_;
    bool backward_done_ = false;
};

} // namespace attnlens
