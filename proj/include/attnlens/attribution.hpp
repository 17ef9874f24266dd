#pragma once

#include <vector>

#include "attnlens/model.hpp"
#include "attnlens/tensor.hpp"

namespace attnlens {

enum class TargetMode { predicted, specified };

struct AttributionOptions {
    int start_stage = -1; // -1 selects the last stage
    bool use_std_scaling = true;
    bool use_sum_normalize = true;
    bool use_gradients = true;
    TargetMode target = TargetMode::predicted;
    int target_class = 0; // used when target == specified
};

int resolve_start_stage(const ModelConfig& cfg, int start_stage); // throws ConfigError

// Token-influence matrix: rows index tokens of `row_stage`, columns tokens of
// `col_stage`. Entries are nonnegative; while rows and columns refer to the
// same stage the diagonal stays >= 1.
struct RelevanceMatrix {
    Tensor values;
    int row_stage = 0;
    int col_stage = 0;
};

// Mean over heads of the positive part of gradient * attention.
Tensor fuse_heads(const std::vector<Tensor>& attn, const std::vector<Tensor>& grad);

// Divides column t by the std of token t (from the block's pre-attention
// layer norm). Preserves zero patterns and within-column ordering.
Tensor scale_by_token_std(const Tensor& fused, const std::vector<Scalar>& token_std);

// Rescales so the whole matrix sums to 1. A (near-)zero matrix passes through
// unchanged with the degenerate flag set.
struct NormalizeResult {
    Tensor value;
    bool degenerate = false;
};
NormalizeResult sum_normalize(const Tensor& fused);

// R + fused * R.
Tensor block_update(const Tensor& r, const Tensor& fused);

// Identity seed updated through every block of one stage.
struct StageRelevance {
    Tensor r;
    bool degenerate = false;
};
StageRelevance stage_relevance(const ForwardTrace& trace, int stage,
                               const AttributionOptions& opts);

// Row g of the result is the mean of r's rows in group g.
Tensor merge_rows(const Tensor& r, const MergeMap& mm);

// Chains stage relevances across merge boundaries, starting at opts.start_stage.
struct Relevance {
    RelevanceMatrix matrix;
    bool degenerate = false;
};
Relevance compose_stages(const ForwardTrace& trace, const AttributionOptions& opts);

// Per-token scores reshaped to the stage grid.
Tensor heatmap_swin(const Tensor& r, int grid_side); // column sums
Tensor heatmap_vit(const Tensor& r, int grid_side);  // CLS row, CLS column dropped

// Attention-only baseline for ViT: product over blocks of row-normalized
// (I + mean-head attention), read out like heatmap_vit.
std::vector<Tensor> rollout_factors_raw(const ForwardTrace& trace); // before row normalization
std::vector<Tensor> rollout_factors(const ForwardTrace& trace);
Tensor rollout(const ForwardTrace& trace);

enum class UpsampleMethod { nearest, bilinear };

// Upsample then min-max normalize into [0,1]; a constant grid maps to zeros.
Tensor upsample(const Tensor& grid, int out_h, int out_w, UpsampleMethod method);

struct Heatmap {
    Tensor grid;   // per-token scores on the stage-j grid
    Tensor pixels; // upsampled, normalized to [0,1]
    bool degenerate = false;
};

struct AttributionResult {
    Relevance relevance;
    Heatmap heatmap;
    int predicted = 0;
    int target_class = 0;
};

// Full pipeline: forward, gradients (if enabled), stage composition, heatmap.
AttributionResult attribute(const Model& model, const Tensor& image,
                            const AttributionOptions& opts,
                            UpsampleMethod method = UpsampleMethod::bilinear);

} // namespace attnlens
