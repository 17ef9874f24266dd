#include "attnlens/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "attnlens/attribution.hpp"
#include "attnlens/evaluation.hpp"
#include "attnlens/model.hpp"
#include "attnlens/rng.hpp"

namespace attnlens {

namespace {

// Local dense helpers so the checks do not route through the code they verify.

Tensor mm(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::zeros({a.rows(), b.cols()});
    for (int i = 0; i < a.rows(); ++i)
        for (int k = 0; k < a.cols(); ++k)
            for (int j = 0; j < b.cols(); ++j) out.at(i, j) += a.at(i, k) * b.at(k, j);
    return out;
}

Scalar max_abs_diff(const Tensor& a, const Tensor& b) {
    Scalar worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    }
    return worst;
}

// Relative mismatch over entries where either side exceeds the floor.
Scalar max_rel_err(const Tensor& a, const Tensor& b, Scalar floor_abs) {
    Scalar worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const Scalar mag = std::max(std::abs(a.data[i]), std::abs(b.data[i]));
        if (mag <= floor_abs) continue;
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / mag);
    }
    return worst;
}

Tensor random_image(Rng& rng, const ModelConfig& cfg) {
    Tensor img = Tensor::zeros({cfg.image_size, cfg.image_size, cfg.channels});
    for (Scalar& v : img.data) v = rng.uniform(0.0, 1.0);
    return img;
}

WeightStore healthy_weights(const ModelConfig& cfg, unsigned long long seed) {
    // Near-unit gains keep attention gradients above the comparison floor;
    // +-0.1 projections keep downstream curvature low enough for 1e-3 central
    // differences.
    Rng rng(seed);
    WeightStore store;
    for (const auto& [name, shape] : expected_weight_shapes(cfg)) {
        Tensor t = Tensor::zeros(shape);
        const bool gain = name.find(".gain") != std::string::npos;
        for (Scalar& v : t.data) v = gain ? rng.uniform(0.8, 1.2) : rng.uniform(-0.1, 0.1);
        store.set(name, std::move(t));
    }
    return store;
}

// Central differences of logits[class] w.r.t. each attention matrix, computed
// by forward re-evaluation only.
Scalar gradient_check(const ModelConfig& cfg, unsigned long long seed, Scalar eps) {
    const Model model(cfg, healthy_weights(cfg, seed));
    Rng rng(seed + 1);
    ForwardTrace trace = model.forward(random_image(rng, cfg));
    const int cls = trace.predicted;
    backward_attention_grads(trace, cls);
    Graph& g = *trace.graph;
    Scalar worst = 0.0;
    for (size_t r = 0; r < trace.records.size(); ++r) {
        const AttentionRecord& rec = trace.records[r];
        for (size_t w = 0; w < rec.window_map.size(); ++w) {
            for (size_t h = 0; h < rec.attn[w].size(); ++h) {
                const NodeId node = trace.attn_nodes[r][w][h];
                const Tensor& a = g.value(node);
                Tensor fd = Tensor::zeros(a.shape);
                Tensor probe = a;
                for (size_t i = 0; i < a.data.size(); ++i) {
                    probe.data[i] = a.data[i] + eps;
                    const Scalar hi =
                        g.eval_with_override(node, probe, trace.logits_node).data[static_cast<size_t>(cls)];
                    probe.data[i] = a.data[i] - eps;
                    const Scalar lo =
                        g.eval_with_override(node, probe, trace.logits_node).data[static_cast<size_t>(cls)];
                    probe.data[i] = a.data[i];
                    fd.data[i] = (hi - lo) / (2.0 * eps);
                }
                worst = std::max(worst, max_rel_err(rec.grad_attn[w][h], fd, 1e-6));
            }
        }
    }
    return worst;
}

// Dense re-derivation of the composed relevance chain.
Tensor oracle_compose(const ForwardTrace& trace, int start, bool use_grads, bool use_std,
                      bool use_norm) {
    const ModelConfig& cfg = trace.config;
    Tensor r;
    for (int s = start; s < cfg.stages(); ++s) {
        const int n = cfg.tokens(s);
        Tensor rs = Tensor::zeros({n, n});
        for (int i = 0; i < n; ++i) rs.at(i, i) = 1.0;
        for (size_t rec_idx = 0; rec_idx < trace.records.size(); ++rec_idx) {
            const AttentionRecord& rec = trace.records[rec_idx];
            if (rec.stage != s) continue;
            const int heads = static_cast<int>(rec.attn[0].size());
            Tensor fused = Tensor::zeros({n, n});
            for (size_t w = 0; w < rec.window_map.size(); ++w) {
                const auto& slots = rec.window_map[w];
                for (int h = 0; h < heads; ++h) {
                    for (size_t i = 0; i < slots.size(); ++i) {
                        for (size_t j = 0; j < slots.size(); ++j) {
                            const Scalar a = rec.attn[w][h].at(static_cast<int>(i),
                                                               static_cast<int>(j));
                            const Scalar gr = use_grads ? rec.grad_attn[w][h].at(
                                                              static_cast<int>(i),
                                                              static_cast<int>(j))
                                                        : 1.0;
                            const Scalar v = gr * a;
                            if (v > 0.0) fused.at(slots[i], slots[j]) += v / heads;
                        }
                    }
                }
            }
            if (use_std) {
                const std::vector<Scalar>& sd = trace.stats[rec_idx].std;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) fused.at(i, j) /= sd[static_cast<size_t>(j)];
            }
            if (use_norm) {
                Scalar total = 0.0;
                for (Scalar v : fused.data) total += v;
                if (total > 1e-12) {
                    for (Scalar& v : fused.data) v /= total;
                }
            }
            rs = [&] {
                Tensor next = rs;
                Tensor prod = mm(fused, rs);
                for (size_t i = 0; i < next.data.size(); ++i) next.data[i] += prod.data[i];
                return next;
            }();
        }
        if (s == start) {
            r = std::move(rs);
        } else {
            const MergeMap& mmap = trace.merge_maps[static_cast<size_t>(s - 1)];
            Tensor avg = Tensor::zeros({static_cast<int>(mmap.groups.size()), r.rows()});
            for (size_t gidx = 0; gidx < mmap.groups.size(); ++gidx)
                for (int t : mmap.groups[gidx])
                    avg.at(static_cast<int>(gidx), t) =
                        1.0 / static_cast<Scalar>(mmap.groups[gidx].size());
            r = mm(rs, mm(avg, r));
        }
    }
    return r;
}

std::string fmt(Scalar v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

} // namespace

std::vector<CheckResult> run_selftest(unsigned long long seed) {
    std::vector<CheckResult> results;
    auto check = [&](const std::string& name, bool ok, const std::string& detail) {
        results.push_back({name, ok, detail});
    };
    Rng rng(seed);

    { // softmax rows are distributions
        bool ok = true;
        Scalar worst = 0.0;
        for (int t = 0; t < 200 && ok; ++t) {
            Tensor x = Tensor::zeros({rng.uniform_int(1, 6), rng.uniform_int(1, 6)});
            for (Scalar& v : x.data) v = rng.uniform(-50.0, 50.0);
            const Tensor y = softmax_lastdim(x);
            for (int i = 0; i < y.rows(); ++i) {
                Scalar sum = 0.0;
                for (int j = 0; j < y.cols(); ++j) {
                    ok &= y.at(i, j) >= 0.0;
                    sum += y.at(i, j);
                }
                worst = std::max<Scalar>(worst, std::abs(sum - 1.0));
            }
            ok &= worst < 1e-6;
        }
        check("softmax-row-sums", ok, "max |sum-1| = " + fmt(worst));
    }

    { // layer norm stays finite, std bounded below
        bool ok = true;
        const Scalar eps = 1e-5;
        for (int t = 0; t < 100 && ok; ++t) {
            Tensor x = Tensor::zeros({4, 8});
            const bool constant = t % 3 == 0;
            for (int i = 0; i < 4; ++i) {
                const Scalar base = rng.uniform(-10.0, 10.0);
                for (int j = 0; j < 8; ++j)
                    x.at(i, j) = constant ? base : rng.uniform(-10.0, 10.0);
            }
            LayerNormStats stats;
            const Tensor y = layer_norm(x, Tensor::ones({8}), Tensor::zeros({8}), eps, &stats);
            ok &= y.all_finite();
            for (Scalar sd : stats.std) ok &= sd >= std::sqrt(eps) * (1 - 1e-12);
        }
        check("layer-norm-finite", ok, "constant tokens included");
    }

    { // gradient fidelity on both toys
        const Scalar worst_vit = gradient_check(ModelConfig::vit_toy(), seed + 11, 1e-3);
        check("grad-check-vit", worst_vit < 1e-4, "max rel err = " + fmt(worst_vit));
        const Scalar worst_swin = gradient_check(ModelConfig::swin_toy(), seed + 12, 1e-3);
        check("grad-check-swin", worst_swin < 1e-4, "max rel err = " + fmt(worst_swin));
    }

    { // attention-only factors match the rollout baseline's
        Scalar worst = 0.0;
        for (int t = 0; t < 10; ++t) {
            const ModelConfig cfg = ModelConfig::vit_toy();
            const Model model(cfg, random_weights(cfg, seed + 100 + t));
            Rng irng(seed + 200 + t);
            const ForwardTrace trace = model.forward(random_image(irng, cfg));
            const std::vector<Tensor> raw = rollout_factors_raw(trace);
            AttributionOptions opts;
            opts.use_gradients = false;
            opts.use_std_scaling = false;
            opts.use_sum_normalize = false;
            for (size_t b = 0; b < trace.records.size(); ++b) {
                const AssembledAttention full =
                    assemble_full_attention(trace.records[b], cfg.tokens(0), true);
                const Tensor factor =
                    block_update(Tensor::identity(cfg.tokens(0)), fuse_heads(full.attn, full.grad));
                worst = std::max(worst, max_abs_diff(factor, raw[b]));
            }
        }
        check("rollout-factors", worst < 1e-6, "max diff = " + fmt(worst));
    }

    { // row averaging equals the explicit averaging matrix
        const MergeMap mmap = build_merge_map(0, 4);
        Tensor avg = Tensor::zeros({4, 16});
        for (size_t gidx = 0; gidx < mmap.groups.size(); ++gidx)
            for (int t : mmap.groups[gidx]) avg.at(static_cast<int>(gidx), t) = 0.25;
        Scalar worst = 0.0;
        for (int t = 0; t < 25; ++t) {
            Tensor r = Tensor::zeros({16, 16});
            for (Scalar& v : r.data) v = rng.uniform(0.0, 2.0);
            worst = std::max(worst, max_abs_diff(merge_rows(r, mmap), mm(avg, r)));
        }
        check("merge-averaging", worst < 1e-6, "max diff = " + fmt(worst));
    }

    { // composed relevance equals the dense re-derivation, all option combos
        const ModelConfig cfg = ModelConfig::swin_toy();
        const Model model(cfg, healthy_weights(cfg, seed + 31));
        Rng irng(seed + 32);
        ForwardTrace trace = model.forward(random_image(irng, cfg));
        backward_attention_grads(trace, trace.predicted);
        Scalar worst = 0.0;
        for (int combo = 0; combo < 8; ++combo) {
            AttributionOptions opts;
            opts.start_stage = 0;
            opts.use_std_scaling = combo & 1;
            opts.use_sum_normalize = combo & 2;
            opts.use_gradients = combo & 4;
            const Relevance rel = compose_stages(trace, opts);
            const Tensor expect = oracle_compose(trace, 0, opts.use_gradients,
                                                 opts.use_std_scaling, opts.use_sum_normalize);
            worst = std::max(worst, max_abs_diff(rel.matrix.values, expect));
        }
        check("compose-oracle", worst < 1e-6, "max diff over 8 combos = " + fmt(worst));
    }

    { // scattered attention reproduces the windowed outputs
        const ModelConfig cfg = ModelConfig::swin_toy();
        Scalar worst = 0.0;
        for (int t = 0; t < 10; ++t) {
            const Model model(cfg, random_weights(cfg, seed + 300 + t));
            Rng irng(seed + 400 + t);
            const ForwardTrace trace = model.forward(random_image(irng, cfg));
            for (const AttentionRecord& rec : trace.records) {
                const int n = cfg.tokens(rec.stage);
                const AssembledAttention full = assemble_full_attention(rec, n, true);
                const int heads = static_cast<int>(rec.attn[0].size());
                const int dh = cfg.head_dim();
                for (int h = 0; h < heads; ++h) {
                    Tensor v_full = Tensor::zeros({n, dh});
                    Tensor o_full = Tensor::zeros({n, dh});
                    for (size_t w = 0; w < rec.window_map.size(); ++w) {
                        const auto& slots = rec.window_map[w];
                        for (size_t i = 0; i < slots.size(); ++i)
                            for (int j = 0; j < dh; ++j) {
                                v_full.at(slots[i], j) = rec.values[w][h].at(static_cast<int>(i), j);
                                o_full.at(slots[i], j) =
                                    rec.outputs[w][h].at(static_cast<int>(i), j);
                            }
                    }
                    worst = std::max(worst, max_abs_diff(mm(full.attn[static_cast<size_t>(h)], v_full),
                                                         o_full));
                }
            }
        }
        check("window-assembly", worst < 1e-5, "max diff = " + fmt(worst));
    }

    { // zero gradients degrade to identity chains, never NaN
        const ModelConfig cfg = ModelConfig::swin_toy();
        WeightStore weights = healthy_weights(cfg, seed + 51);
        Tensor head = weights.get("head.weight");
        Tensor head_b = weights.get("head.bias");
        for (int i = 0; i < head.rows(); ++i) head.at(i, 0) = 0.0; // class 0 is constant
        head_b.data[0] = 0.0;
        weights.set("head.weight", head);
        weights.set("head.bias", head_b);
        const Model model(cfg, weights);
        Rng irng(seed + 52);
        ForwardTrace trace = model.forward(random_image(irng, cfg));
        backward_attention_grads(trace, 0);
        AttributionOptions opts;
        opts.start_stage = 0;
        const Relevance rel = compose_stages(trace, opts);
        bool ok = rel.degenerate && rel.matrix.values.all_finite();
        for (Scalar v : rel.matrix.values.data) ok &= v >= 0.0;
        check("degenerate-safety", ok, "zero-gradient class stays finite and flagged");
    }

    { // segmentation metrics against a direct recount
        bool ok = true;
        for (int t = 0; t < 20 && ok; ++t) {
            Tensor scores = Tensor::zeros({3, 3});
            for (Scalar& v : scores.data) v = rng.uniform(0.0, 1.0);
            Tensor gt = Tensor::zeros({3, 3});
            int fg = 0;
            for (Scalar& v : gt.data) {
                v = rng.uniform(0.0, 1.0) > 0.5 ? 1.0 : 0.0;
                fg += v > 0.5 ? 1 : 0;
            }
            if (fg == 0 || fg == 9) continue;
            const SegMetrics m = seg_metrics(scores, gt);
            // AP recount: precision at every positive prefix.
            std::vector<int> order(9);
            for (int i = 0; i < 9; ++i) order[static_cast<size_t>(i)] = i;
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (scores.data[static_cast<size_t>(a)] != scores.data[static_cast<size_t>(b)])
                    return scores.data[static_cast<size_t>(a)] > scores.data[static_cast<size_t>(b)];
                return a < b;
            });
            Scalar ap = 0.0;
            for (int k = 1; k <= 9; ++k) {
                if (gt.data[static_cast<size_t>(order[static_cast<size_t>(k - 1)])] <= 0.5) continue;
                int hits = 0;
                for (int i = 0; i < k; ++i)
                    hits += gt.data[static_cast<size_t>(order[static_cast<size_t>(i)])] > 0.5 ? 1 : 0;
                ap += static_cast<Scalar>(hits) / k;
            }
            ap /= fg;
            ok &= std::abs(ap - m.map) < 1e-12;
            ok &= m.miou >= 0.0 && m.miou <= 1.0 && m.mf1 >= 0.0 && m.mf1 <= 1.0;
        }
        check("seg-metrics-oracle", ok, "AP recount matched");
    }

    { // trapezoid on hand curves
        const std::vector<Scalar> f = perturbation_fractions();
        std::vector<Scalar> linear;
        for (int i = 0; i < 10; ++i) linear.push_back(1.0 - i / 9.0);
        const bool ok = std::abs(trapezoid_auc(f, linear) - 0.45) < 1e-12 &&
                        std::abs(trapezoid_auc(f, std::vector<Scalar>(10, 0.5)) - 0.45) < 1e-12;
        check("trapezoid-auc", ok, "linear and constant curves");
    }

    return results;
}

} // namespace attnlens
