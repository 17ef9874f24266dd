#include "attnlens/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace attnlens {

namespace {

constexpr Scalar kNormalizeFloor = 1e-12;

const TokenStats& stats_for_block(const ForwardTrace& trace, int block) {
    for (const TokenStats& st : trace.stats) {
        if (st.block == block) return st;
    }
    throw ContractError("no token stats recorded for block " + std::to_string(block));
}

} // namespace

int resolve_start_stage(const ModelConfig& cfg, int start_stage) {
    const int j = start_stage < 0 ? cfg.stages() - 1 : start_stage;
    if (j < 0 || j >= cfg.stages()) {
        throw ConfigError("start stage " + std::to_string(start_stage) + " out of range");
    }
    return j;
}

Tensor fuse_heads(const std::vector<Tensor>& attn, const std::vector<Tensor>& grad) {
    if (attn.empty()) throw ContractError("fuse_heads requires at least one head");
    if (attn.size() != grad.size()) {
        throw ContractError("fuse_heads requires one gradient per head");
    }
    for (const Tensor& t : attn) {
        if (!t.same_shape(attn[0])) throw DimensionError("head shapes disagree");
    }
    for (const Tensor& t : grad) {
        if (!t.same_shape(attn[0])) throw DimensionError("gradient shapes disagree");
    }
    Tensor out = Tensor::zeros(attn[0].shape);
    for (size_t h = 0; h < attn.size(); ++h) {
        for (size_t i = 0; i < out.data.size(); ++i) {
            out.data[i] += std::max<Scalar>(grad[h].data[i] * attn[h].data[i], 0.0);
        }
    }
    const Scalar inv = 1.0 / static_cast<Scalar>(attn.size());
    for (Scalar& v : out.data) v *= inv;
    return out;
}

Tensor scale_by_token_std(const Tensor& fused, const std::vector<Scalar>& token_std) {
    if (fused.ndim() != 2 || static_cast<int>(token_std.size()) != fused.cols()) {
        throw ContractError("token std length must equal the column count");
    }
    for (Scalar s : token_std) {
        if (!(s > 0.0)) throw ContractError("token std must be positive");
    }
    Tensor out = fused;
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) out.at(i, j) /= token_std[static_cast<size_t>(j)];
    return out;
}

NormalizeResult sum_normalize(const Tensor& fused) {
    Scalar total = 0.0;
    for (Scalar v : fused.data) total += v;
    if (!(total > kNormalizeFloor)) {
        return {fused, true};
    }
    return {scale(fused, 1.0 / total), false};
}

Tensor block_update(const Tensor& r, const Tensor& fused) {
    if (fused.ndim() != 2 || fused.rows() != fused.cols()) {
        throw ContractError("block_update requires a square update matrix");
    }
    if (r.ndim() != 2 || r.rows() != fused.rows()) {
        throw ContractError("relevance rows must match the update matrix");
    }
    return add(r, matmul(fused, r));
}

StageRelevance stage_relevance(const ForwardTrace& trace, int stage,
                               const AttributionOptions& opts) {
    if (stage < 0 || stage >= trace.config.stages()) {
        throw ContractError("stage out of range");
    }
    const int n = trace.config.tokens(stage);
    StageRelevance result{Tensor::identity(n), false};
    for (const AttentionRecord& rec : trace.records) {
        if (rec.stage != stage) continue;
        if (opts.use_gradients && !rec.has_grads()) {
            throw ContractError("attention gradients required but not filled");
        }
        const AssembledAttention full =
            assemble_full_attention(rec, n, /*unit_grads=*/!opts.use_gradients);
        Tensor fused = fuse_heads(full.attn, full.grad);
        if (opts.use_std_scaling) {
            fused = scale_by_token_std(fused, stats_for_block(trace, rec.block).std);
        }
        if (opts.use_sum_normalize) {
            NormalizeResult norm = sum_normalize(fused);
            result.degenerate |= norm.degenerate;
            fused = std::move(norm.value);
        }
        result.r = block_update(result.r, fused);
    }
    return result;
}

Tensor merge_rows(const Tensor& r, const MergeMap& mm) {
    if (r.ndim() != 2) throw ContractError("merge_rows requires a 2-D relevance matrix");
    std::vector<int> seen(static_cast<size_t>(r.rows()), 0);
    for (const auto& grp : mm.groups) {
        if (grp.empty()) throw ContractError("merge groups must be non-empty");
        for (int t : grp) {
            if (t < 0 || t >= r.rows()) throw ContractError("merge group row out of range");
            seen[static_cast<size_t>(t)] += 1;
        }
    }
    for (int c : seen) {
        if (c != 1) throw ContractError("merge groups must partition the rows");
    }
    Tensor out = Tensor::zeros({static_cast<int>(mm.groups.size()), r.cols()});
    for (size_t gidx = 0; gidx < mm.groups.size(); ++gidx) {
        const auto& grp = mm.groups[gidx];
        for (int t : grp) {
            for (int j = 0; j < r.cols(); ++j) out.at(static_cast<int>(gidx), j) += r.at(t, j);
        }
        const Scalar inv = 1.0 / static_cast<Scalar>(grp.size());
        for (int j = 0; j < r.cols(); ++j) out.at(static_cast<int>(gidx), j) *= inv;
    }
    return out;
}

Relevance compose_stages(const ForwardTrace& trace, const AttributionOptions& opts) {
    const int j = resolve_start_stage(trace.config, opts.start_stage);
    StageRelevance acc = stage_relevance(trace, j, opts);
    Relevance out;
    out.degenerate = acc.degenerate;
    Tensor r = std::move(acc.r);
    for (int i = j + 1; i < trace.config.stages(); ++i) {
        if (static_cast<size_t>(i - 1) >= trace.merge_maps.size()) {
            throw ContractError("trace is missing a merge map");
        }
        Tensor merged = merge_rows(r, trace.merge_maps[static_cast<size_t>(i - 1)]);
        StageRelevance next = stage_relevance(trace, i, opts);
        out.degenerate |= next.degenerate;
        r = matmul(next.r, merged);
    }
    out.matrix = {std::move(r), trace.config.stages() - 1, j};
    return out;
}

Tensor heatmap_swin(const Tensor& r, int grid_side) {
    if (r.ndim() != 2 || r.cols() != grid_side * grid_side) {
        throw ContractError("relevance columns do not fill the token grid");
    }
    Tensor grid = Tensor::zeros({grid_side, grid_side});
    for (int j = 0; j < r.cols(); ++j) {
        Scalar sum = 0.0;
        for (int i = 0; i < r.rows(); ++i) sum += r.at(i, j);
        grid.data[static_cast<size_t>(j)] = sum;
    }
    return grid;
}

Tensor heatmap_vit(const Tensor& r, int grid_side) {
    if (r.ndim() != 2 || r.rows() != r.cols() || r.cols() != grid_side * grid_side + 1) {
        throw ContractError("expected a square relevance matrix with a CLS slot");
    }
    Tensor grid = Tensor::zeros({grid_side, grid_side});
    for (int j = 1; j < r.cols(); ++j) grid.data[static_cast<size_t>(j - 1)] = r.at(0, j);
    return grid;
}

std::vector<Tensor> rollout_factors_raw(const ForwardTrace& trace) {
    if (trace.config.variant != Variant::vit) {
        throw UnsupportedError("rollout is defined for the vit variant only");
    }
    const int n = trace.config.tokens(0);
    std::vector<Tensor> factors;
    for (const AttentionRecord& rec : trace.records) {
        Tensor f = Tensor::identity(n);
        const int heads = static_cast<int>(rec.attn[0].size());
        for (size_t w = 0; w < rec.window_map.size(); ++w) {
            const auto& slots = rec.window_map[w];
            for (int h = 0; h < heads; ++h) {
                const Tensor& a = rec.attn[w][h];
                for (size_t i = 0; i < slots.size(); ++i)
                    for (size_t j = 0; j < slots.size(); ++j)
                        f.at(slots[i], slots[j]) +=
                            a.at(static_cast<int>(i), static_cast<int>(j)) / heads;
            }
        }
        factors.push_back(std::move(f));
    }
    return factors;
}

std::vector<Tensor> rollout_factors(const ForwardTrace& trace) {
    std::vector<Tensor> factors = rollout_factors_raw(trace);
    for (Tensor& f : factors) {
        for (int i = 0; i < f.rows(); ++i) {
            Scalar sum = 0.0;
            for (int j = 0; j < f.cols(); ++j) sum += f.at(i, j);
            if (sum > 0.0) {
                for (int j = 0; j < f.cols(); ++j) f.at(i, j) /= sum;
            }
        }
    }
    return factors;
}

Tensor rollout(const ForwardTrace& trace) {
    const std::vector<Tensor> factors = rollout_factors(trace);
    Tensor l = Tensor::identity(trace.config.tokens(0));
    for (const Tensor& f : factors) l = matmul(f, l);
    return heatmap_vit(l, trace.config.grid_side(0));
}

Tensor upsample(const Tensor& grid, int out_h, int out_w, UpsampleMethod method) {
    if (grid.ndim() != 2) throw ContractError("upsample expects a 2-D grid");
    const int gh = grid.rows(), gw = grid.cols();
    Tensor out = Tensor::zeros({out_h, out_w});
    if (method == UpsampleMethod::nearest) {
        if (out_h % gh != 0 || out_w % gw != 0) {
            throw ContractError("nearest upsample requires integer scale factors");
        }
        const int fh = out_h / gh, fw = out_w / gw;
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) out.at(y, x) = grid.at(y / fh, x / fw);
    } else {
        const Scalar sy = static_cast<Scalar>(gh) / out_h;
        const Scalar sx = static_cast<Scalar>(gw) / out_w;
        for (int y = 0; y < out_h; ++y) {
            const Scalar fy = std::clamp<Scalar>((y + 0.5) * sy - 0.5, 0.0, gh - 1.0);
            const int y0 = static_cast<int>(std::floor(fy));
            const int y1 = std::min(y0 + 1, gh - 1);
            const Scalar wy = fy - y0;
            for (int x = 0; x < out_w; ++x) {
                const Scalar fx = std::clamp<Scalar>((x + 0.5) * sx - 0.5, 0.0, gw - 1.0);
                const int x0 = static_cast<int>(std::floor(fx));
                const int x1 = std::min(x0 + 1, gw - 1);
                const Scalar wx = fx - x0;
                out.at(y, x) = (1 - wy) * ((1 - wx) * grid.at(y0, x0) + wx * grid.at(y0, x1)) +
                               wy * ((1 - wx) * grid.at(y1, x0) + wx * grid.at(y1, x1));
            }
        }
    }
    Scalar lo = out.data[0], hi = out.data[0];
    for (Scalar v : out.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi > lo) {
        for (Scalar& v : out.data) v = (v - lo) / (hi - lo);
    } else {
        for (Scalar& v : out.data) v = 0.0;
    }
    return out;
}

AttributionResult attribute(const Model& model, const Tensor& image,
                            const AttributionOptions& opts, UpsampleMethod method) {
    ForwardTrace trace = model.forward(image);
    AttributionResult result;
    result.predicted = trace.predicted;
    result.target_class =
        opts.target == TargetMode::specified ? opts.target_class : trace.predicted;
    if (result.target_class < 0 || result.target_class >= model.config().num_classes) {
        throw ContractError("target class out of range");
    }
    if (opts.use_gradients) backward_attention_grads(trace, result.target_class);
    result.relevance = compose_stages(trace, opts);
    const int j = resolve_start_stage(model.config(), opts.start_stage);
    const int side = model.config().grid_side(j);
    result.heatmap.grid = model.config().variant == Variant::vit
                              ? heatmap_vit(result.relevance.matrix.values, side)
                              : heatmap_swin(result.relevance.matrix.values, side);
    result.heatmap.pixels =
        upsample(result.heatmap.grid, model.config().image_size, model.config().image_size, method);
    Scalar lo = result.heatmap.grid.data[0], hi = lo;
    for (Scalar v : result.heatmap.grid.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    result.heatmap.degenerate = result.relevance.degenerate || !(hi > lo);
    return result;
}

} // namespace attnlens
