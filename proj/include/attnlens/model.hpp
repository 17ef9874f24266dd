#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "attnlens/graph.hpp"
#include "attnlens/tensor.hpp"

namespace attnlens {

enum class Variant { vit, swin };

struct ModelConfig {
    Variant variant = Variant::vit;
    int image_size = 8;
    int patch_size = 4;
    int channels = 1;
    int embed_dim = 16;
    int heads = 2;
    int num_classes = 4;
    std::vector<int> stage_depths = {4};
    int window_side = 2; // swin only
    Scalar layer_norm_eps = 1e-5;

    int stages() const { return static_cast<int>(stage_depths.size()); }
    int total_depth() const;
    int head_dim() const { return embed_dim / heads; }
    int mlp_hidden() const { return 2 * embed_dim; }
    // Side length of the token grid at a stage (excludes the ViT CLS token).
    int grid_side(int stage) const;
    // Token count at a stage; includes the CLS token for ViT.
    int tokens(int stage) const;
    bool has_cls() const { return variant == Variant::vit; }

    void validate() const; // throws ConfigError

    static ModelConfig vit_toy();  // 5 tokens (4 patches + CLS), 4 blocks, 2 heads, d=16
    static ModelConfig swin_toy(); // stages 16 tokens x2, 4 tokens x2; window 2; 2 heads
};

// Named tensor container; the model validates it for completeness and shapes.
class WeightStore {
public:
    void set(const std::string& name, Tensor t);
    bool contains(const std::string& name) const;
    const Tensor& get(const std::string& name) const; // WeightError if absent
    const std::map<std::string, Tensor>& all() const { return tensors_; }

private:
    std::map<std::string, Tensor> tensors_;
};

// Every tensor name the model requires, with its exact shape.
std::map<std::string, std::vector<int>> expected_weight_shapes(const ModelConfig& cfg);

// Rejects missing names, unknown names, and shape mismatches.
void validate_weights(const ModelConfig& cfg, const WeightStore& weights);

// Seeded uniform weights in [lo, hi] for all expected names.
WeightStore random_weights(const ModelConfig& cfg, unsigned long long seed, Scalar lo = -0.05,
                           Scalar hi = 0.05);

// One attention application. `window_map[w][slot]` is the original (unshifted)
// token id occupying that window slot, so scattering a window's matrices
// through it undoes the cyclic shift.
struct AttentionRecord {
    int block = 0;
    int stage = 0;
    int shift = 0;
    std::vector<std::vector<int>> window_map;
    std::vector<std::vector<Tensor>> attn;      // [window][head], post-softmax, rows sum to 1
    std::vector<std::vector<Tensor>> grad_attn; // filled by backward_attention_grads
    std::vector<std::vector<Tensor>> values;    // [window][head] V entering the attention
    std::vector<std::vector<Tensor>> outputs;   // [window][head] attn * V

    int windows() const { return static_cast<int>(window_map.size()); }
    int window_tokens() const { return window_map.empty() ? 0 : static_cast<int>(window_map[0].size()); }
    bool has_grads() const { return !grad_attn.empty(); }
};

struct TokenStats {
    int block = 0;
    std::vector<Scalar> std; // pre-attention layer-norm std per token
};

// Grouping of fine tokens into coarse tokens at a stage boundary. Groups are
// listed in coarse-token (row-major) order; each group holds the fine ids of
// one 2x2 patch as [top-left, top-right, bottom-left, bottom-right].
struct MergeMap {
    int boundary = 0;
    std::vector<std::vector<int>> groups;
};

struct ForwardTrace {
    ModelConfig config;
    std::vector<AttentionRecord> records; // one per block, in depth order
    std::vector<TokenStats> stats;        // parallel to records
    std::vector<MergeMap> merge_maps;     // one per stage boundary
    Tensor logits;                        // [num_classes]
    int predicted = 0;

    // Autodiff state backing backward_attention_grads.
    std::unique_ptr<Graph> graph;
    std::vector<std::vector<std::vector<NodeId>>> attn_nodes; // [record][window][head]
    NodeId logits_node = -1;
};

struct ForwardOptions {
    // Nonzero: deterministically shuffles per-block window processing order.
    // Logits and assembled attention are invariant to it.
    unsigned window_shuffle_seed = 0;
};

class Model {
public:
    Model(ModelConfig cfg, WeightStore weights); // validates both

    const ModelConfig& config() const { return cfg_; }
    const WeightStore& weights() const { return weights_; }

    ForwardTrace forward(const Tensor& image, const ForwardOptions& opts = {}) const;

private:
    ModelConfig cfg_;
    WeightStore weights_;
};

// Patch projection + CLS (ViT) + position embedding, as a plain tensor.
Tensor patch_embed(const Tensor& image, const ModelConfig& cfg, const WeightStore& weights);

// Argmax with ties broken toward the lowest index.
int predict(const Tensor& logits);

// Fills every record's grad_attn with d(logits[class_index])/d(attention).
void backward_attention_grads(ForwardTrace& trace, int class_index);

// Window-local matrices scattered into full token-by-token matrices; entries
// between tokens of different windows are zero. With unit_grads the gradient
// planes carry 1 at covered positions instead of recorded gradients.
struct AssembledAttention {
    std::vector<Tensor> attn; // per head, [n_tokens x n_tokens]
    std::vector<Tensor> grad;
};
AssembledAttention assemble_full_attention(const AttentionRecord& record, int n_tokens,
                                           bool unit_grads = false);

// Window layout for one block: ids are original token ids (shift undone).
std::vector<std::vector<int>> build_window_map(const ModelConfig& cfg, int stage, int shift);
MergeMap build_merge_map(int boundary, int fine_side);

} // namespace attnlens
