#pragma once

// Brute-force reference implementations used to check the library. Everything
// here recomputes results with plain loops and stays off the code paths under
// test.

#include <vector>

#include "attnlens/model.hpp"
#include "attnlens/tensor.hpp"

namespace oracles {

using attnlens::ForwardTrace;
using attnlens::MergeMap;
using attnlens::ModelConfig;
using attnlens::Scalar;
using attnlens::Tensor;
using attnlens::WeightStore;

Tensor mm(const Tensor& a, const Tensor& b);
Scalar max_abs_diff(const Tensor& a, const Tensor& b);

// Max relative mismatch over entries where either side exceeds floor_abs.
Scalar max_rel_err(const Tensor& a, const Tensor& b, Scalar floor_abs);

Tensor random_image(unsigned long long seed, const ModelConfig& cfg);

// Random weights with near-unit gains and wider projections; keeps attention
// gradients well above the comparison floor.
WeightStore healthy_weights(const ModelConfig& cfg, unsigned long long seed);

// Central differences of logits[cls] w.r.t. every recorded attention matrix
// (forward re-evaluation only) compared against the recorded gradients.
// Returns the max relative error over entries above floor_abs.
Scalar model_grad_check(ForwardTrace& trace, int cls, Scalar eps, Scalar floor_abs);

// Full-token attention planes scattered with local loops.
std::vector<Tensor> assemble_attention(const attnlens::AttentionRecord& rec, int n_tokens);

// Dense re-derivation of the composed relevance chain, explicit averaging
// matrices included.
Tensor compose(const ForwardTrace& trace, int start, bool use_grads, bool use_std, bool use_norm);

// Average precision by prefix enumeration; ties rank by pixel index.
Scalar average_precision(const Tensor& scores, const Tensor& gt);

struct SegCounts {
    long long tp = 0, fp = 0, fn = 0, tn = 0;
};
SegCounts seg_counts(const Tensor& pred, const Tensor& gt);

} // namespace oracles
