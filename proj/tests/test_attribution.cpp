#include <cmath>

#include <doctest.h>

#include "attnlens/attribution.hpp"
#include "attnlens/rng.hpp"
#include "oracles.hpp"

using namespace attnlens;

TEST_CASE("fuse_heads") {
    SUBCASE("hand-computed single head") {
        const Tensor a({2, 2}, {0.6, 0.4, 0.5, 0.5});
        const Tensor g({2, 2}, {1, -1, 2, 0});
        const Tensor fused = fuse_heads({a}, {g});
        CHECK(fused.at(0, 0) == doctest::Approx(0.6));
        CHECK(fused.at(0, 1) == doctest::Approx(0.0));
        CHECK(fused.at(1, 0) == doctest::Approx(1.0));
        CHECK(fused.at(1, 1) == doctest::Approx(0.0));
    }
    SUBCASE("zero gradients zero the matrix") {
        const Tensor a({2, 2}, {0.6, 0.4, 0.5, 0.5});
        const Tensor fused = fuse_heads({a}, {Tensor::zeros({2, 2})});
        for (Scalar v : fused.data) CHECK(v == 0.0);
    }
    SUBCASE("identical heads average to one head") {
        const Tensor a({2, 2}, {0.6, 0.4, 0.5, 0.5});
        const Tensor g({2, 2}, {1, -1, 2, 0});
        CHECK(oracles::max_abs_diff(fuse_heads({a, a}, {g, g}), fuse_heads({a}, {g})) == 0.0);
    }
    SUBCASE("no heads is a contract violation") {
        CHECK_THROWS_AS(fuse_heads({}, {}), ContractError);
    }
}

TEST_CASE("scale_by_token_std") {
    const Tensor abar({2, 2}, {2, 4, 6, 8});
    SUBCASE("divides each column") {
        const Tensor scaled = scale_by_token_std(abar, {2, 4});
        CHECK(scaled.at(0, 0) == doctest::Approx(1.0));
        CHECK(scaled.at(0, 1) == doctest::Approx(1.0));
        CHECK(scaled.at(1, 0) == doctest::Approx(3.0));
        CHECK(scaled.at(1, 1) == doctest::Approx(2.0));
    }
    SUBCASE("unit stds are the identity") {
        CHECK(oracles::max_abs_diff(scale_by_token_std(abar, {1, 1}), abar) == 0.0);
    }
    SUBCASE("zero matrix stays zero") {
        const Tensor z = scale_by_token_std(Tensor::zeros({2, 2}), {2, 4});
        for (Scalar v : z.data) CHECK(v == 0.0);
    }
    SUBCASE("nonpositive std rejected") {
        CHECK_THROWS_AS(scale_by_token_std(abar, {1, 0}), ContractError);
    }
    SUBCASE("within-column ordering is preserved") {
        Rng rng(5);
        Tensor m = Tensor::zeros({6, 4});
        for (Scalar& v : m.data) v = rng.uniform(0.0, 3.0);
        std::vector<Scalar> stds;
        for (int j = 0; j < 4; ++j) stds.push_back(rng.uniform(0.1, 5.0));
        const Tensor scaled = scale_by_token_std(m, stds);
        for (int j = 0; j < 4; ++j)
            for (int i1 = 0; i1 < 6; ++i1)
                for (int i2 = 0; i2 < 6; ++i2)
                    if (m.at(i1, j) < m.at(i2, j)) CHECK(scaled.at(i1, j) < scaled.at(i2, j));
    }
}

TEST_CASE("sum_normalize") {
    SUBCASE("hand example") {
        const NormalizeResult r = sum_normalize(Tensor({1, 2}, {1, 3}));
        CHECK_FALSE(r.degenerate);
        CHECK(r.value.at(0, 0) == doctest::Approx(0.25));
        CHECK(r.value.at(0, 1) == doctest::Approx(0.75));
    }
    SUBCASE("idempotent on normalized input") {
        const Tensor m({1, 2}, {0.25, 0.75});
        const NormalizeResult r = sum_normalize(m);
        CHECK(r.value.at(0, 0) == doctest::Approx(0.25));
        CHECK(r.value.at(0, 1) == doctest::Approx(0.75));
    }
    SUBCASE("zero matrix passes through flagged") {
        const NormalizeResult r = sum_normalize(Tensor::zeros({3, 3}));
        CHECK(r.degenerate);
        for (Scalar v : r.value.data) CHECK(v == 0.0);
        CHECK(r.value.all_finite());
    }
    SUBCASE("argmax never moves") {
        Rng rng(6);
        for (int t = 0; t < 50; ++t) {
            Tensor m = Tensor::zeros({3, 5});
            for (Scalar& v : m.data) v = rng.uniform(0.0, 2.0);
            const Tensor n = sum_normalize(m).value;
            size_t arg_before = 0, arg_after = 0;
            for (size_t i = 0; i < m.data.size(); ++i) {
                if (m.data[i] > m.data[arg_before]) arg_before = i;
                if (n.data[i] > n.data[arg_after]) arg_after = i;
            }
            CHECK(arg_before == arg_after);
        }
    }
}

TEST_CASE("block_update") {
    SUBCASE("diagonal hand example") {
        const Tensor r = block_update(Tensor::identity(2), Tensor({2, 2}, {0.2, 0, 0, 0.3}));
        CHECK(r.at(0, 0) == doctest::Approx(1.2));
        CHECK(r.at(1, 1) == doctest::Approx(1.3));
        CHECK(r.at(0, 1) == doctest::Approx(0.0));
    }
    SUBCASE("zero update is the identity map") {
        Rng rng(7);
        Tensor r0 = Tensor::zeros({3, 3});
        for (Scalar& v : r0.data) v = rng.uniform(0.0, 1.0);
        CHECK(oracles::max_abs_diff(block_update(r0, Tensor::zeros({3, 3})), r0) == 0.0);
    }
    SUBCASE("identity seed returns I + update") {
        const Tensor abar({2, 2}, {0.1, 0.2, 0.3, 0.4});
        const Tensor r = block_update(Tensor::identity(2), abar);
        CHECK(r.at(0, 0) == doctest::Approx(1.1));
        CHECK(r.at(0, 1) == doctest::Approx(0.2));
        CHECK(r.at(1, 0) == doctest::Approx(0.3));
        CHECK(r.at(1, 1) == doctest::Approx(1.4));
    }
}

TEST_CASE("stage_relevance") {
    SUBCASE("one block with everything off reduces to a rollout step") {
        ModelConfig cfg = ModelConfig::vit_toy();
        cfg.stage_depths = {1};
        cfg.validate();
        const Model model(cfg, random_weights(cfg, 81));
        const ForwardTrace trace = model.forward(oracles::random_image(82, cfg));
        AttributionOptions opts;
        opts.use_gradients = false;
        opts.use_std_scaling = false;
        opts.use_sum_normalize = false;
        const StageRelevance rel = stage_relevance(trace, 0, opts);
        const std::vector<Tensor> planes = oracles::assemble_attention(trace.records[0], cfg.tokens(0));
        Tensor expect = Tensor::identity(cfg.tokens(0));
        for (int i = 0; i < expect.rows(); ++i)
            for (int j = 0; j < expect.cols(); ++j)
                for (const Tensor& p : planes) expect.at(i, j) += p.at(i, j) / planes.size();
        CHECK(oracles::max_abs_diff(rel.r, expect) < 1e-12);
    }

    SUBCASE("zero gradients collapse to the identity with a degenerate flag") {
        const ModelConfig cfg = ModelConfig::vit_toy();
        WeightStore w = oracles::healthy_weights(cfg, 83);
        Tensor head = w.get("head.weight");
        for (int i = 0; i < head.rows(); ++i) head.at(i, 1) = 0.0;
        w.set("head.weight", head);
        const Model model(cfg, w);
        ForwardTrace trace = model.forward(oracles::random_image(84, cfg));
        backward_attention_grads(trace, 1);
        AttributionOptions opts; // std + normalize on
        const StageRelevance rel = stage_relevance(trace, 0, opts);
        CHECK(rel.degenerate);
        CHECK(oracles::max_abs_diff(rel.r, Tensor::identity(cfg.tokens(0))) == 0.0);
    }

    SUBCASE("two blocks equal the manual chain") {
        ModelConfig cfg = ModelConfig::vit_toy();
        cfg.stage_depths = {2};
        cfg.validate();
        const Model model(cfg, oracles::healthy_weights(cfg, 85));
        ForwardTrace trace = model.forward(oracles::random_image(86, cfg));
        backward_attention_grads(trace, trace.predicted);
        AttributionOptions opts;
        opts.start_stage = 0;
        const StageRelevance rel = stage_relevance(trace, 0, opts);
        const Tensor expect = oracles::compose(trace, 0, true, true, true);
        CHECK(oracles::max_abs_diff(rel.r, expect) < 1e-12);
    }

    SUBCASE("missing gradients are a contract violation") {
        const ModelConfig cfg = ModelConfig::vit_toy();
        const Model model(cfg, random_weights(cfg, 87));
        const ForwardTrace trace = model.forward(oracles::random_image(88, cfg));
        AttributionOptions opts;
        CHECK_THROWS_AS(stage_relevance(trace, 0, opts), ContractError);
    }
}

TEST_CASE("merge_rows") {
    SUBCASE("size-2 groups over the identity") {
        MergeMap mm;
        mm.groups = {{0, 1}, {2, 3}};
        const Tensor merged = merge_rows(Tensor::identity(4), mm);
        CHECK(merged.rows() == 2);
        CHECK(merged.at(0, 0) == doctest::Approx(0.5));
        CHECK(merged.at(0, 1) == doctest::Approx(0.5));
        CHECK(merged.at(0, 2) == doctest::Approx(0.0));
        CHECK(merged.at(1, 2) == doctest::Approx(0.5));
        CHECK(merged.at(1, 3) == doctest::Approx(0.5));
    }
    SUBCASE("equal rows stay equal") {
        Tensor r = Tensor::zeros({4, 3});
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 3; ++j) r.at(i, j) = j + 1.0;
        MergeMap mm;
        mm.groups = {{0, 3}, {1, 2}};
        const Tensor merged = merge_rows(r, mm);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j) CHECK(merged.at(i, j) == doctest::Approx(j + 1.0));
    }
    SUBCASE("column sums scale by the group size") {
        Rng rng(8);
        Tensor r = Tensor::zeros({8, 5});
        for (Scalar& v : r.data) v = rng.uniform(0.0, 1.0);
        MergeMap mm;
        mm.groups = {{0, 1}, {2, 3}, {4, 5}, {6, 7}};
        const Tensor merged = merge_rows(r, mm);
        for (int j = 0; j < 5; ++j) {
            Scalar before = 0.0, after = 0.0;
            for (int i = 0; i < 8; ++i) before += r.at(i, j);
            for (int i = 0; i < 4; ++i) after += merged.at(i, j);
            CHECK(after == doctest::Approx(before / 2.0));
        }
    }
    SUBCASE("non-partition maps are rejected") {
        MergeMap missing;
        missing.groups = {{0, 1}};
        CHECK_THROWS_AS(merge_rows(Tensor::identity(4), missing), ContractError);
        MergeMap duplicated;
        duplicated.groups = {{0, 1}, {1, 2, 3}};
        CHECK_THROWS_AS(merge_rows(Tensor::identity(4), duplicated), ContractError);
    }
}

TEST_CASE("compose_stages") {
    SUBCASE("single-stage model reduces to stage_relevance") {
        const ModelConfig cfg = ModelConfig::vit_toy();
        const Model model(cfg, oracles::healthy_weights(cfg, 91));
        ForwardTrace trace = model.forward(oracles::random_image(92, cfg));
        backward_attention_grads(trace, trace.predicted);
        AttributionOptions opts;
        const Relevance rel = compose_stages(trace, opts);
        const StageRelevance direct = stage_relevance(trace, 0, opts);
        CHECK(oracles::max_abs_diff(rel.matrix.values, direct.r) == 0.0);
    }

    SUBCASE("start at the last stage returns that stage's relevance") {
        const ModelConfig cfg = ModelConfig::swin_toy();
        const Model model(cfg, oracles::healthy_weights(cfg, 93));
        ForwardTrace trace = model.forward(oracles::random_image(94, cfg));
        backward_attention_grads(trace, trace.predicted);
        AttributionOptions opts;
        opts.start_stage = -1;
        const Relevance rel = compose_stages(trace, opts);
        const StageRelevance last = stage_relevance(trace, 1, opts);
        CHECK(oracles::max_abs_diff(rel.matrix.values, last.r) == 0.0);
        CHECK(rel.matrix.values.rows() == 4);
        CHECK(rel.matrix.values.cols() == 4);
    }

    SUBCASE("two-stage chain matches the dense oracle") {
        const ModelConfig cfg = ModelConfig::swin_toy();
        const Model model(cfg, oracles::healthy_weights(cfg, 95));
        ForwardTrace trace = model.forward(oracles::random_image(96, cfg));
        backward_attention_grads(trace, trace.predicted);
        AttributionOptions opts;
        opts.start_stage = 0;
        const Relevance rel = compose_stages(trace, opts);
        CHECK(rel.matrix.values.rows() == 4);
        CHECK(rel.matrix.values.cols() == 16);
        const Tensor expect = oracles::compose(trace, 0, true, true, true);
        CHECK(oracles::max_abs_diff(rel.matrix.values, expect) < 1e-9);
    }

    SUBCASE("out-of-range start stage") {
        const ModelConfig cfg = ModelConfig::swin_toy();
        const Model model(cfg, random_weights(cfg, 97));
        const ForwardTrace trace = model.forward(oracles::random_image(98, cfg));
        AttributionOptions opts;
        opts.start_stage = 5;
        CHECK_THROWS_AS(compose_stages(trace, opts), ConfigError);
    }
}

TEST_CASE("heatmap readouts") {
    SUBCASE("swin column sums on a 1x1 grid") {
        const Tensor r({2, 1}, {1, 3});
        const Tensor grid = heatmap_swin(r, 1);
        CHECK(grid.at(0, 0) == doctest::Approx(4.0));
    }
    SUBCASE("swin hand example") {
        Tensor r = Tensor::zeros({2, 4});
        r.at(0, 0) = 1;
        r.at(0, 1) = 2;
        r.at(0, 2) = 0;
        r.at(0, 3) = 1;
        r.at(1, 0) = 3;
        r.at(1, 1) = 4;
        r.at(1, 2) = 1;
        r.at(1, 3) = 0;
        const Tensor grid = heatmap_swin(r, 2);
        CHECK(grid.at(0, 0) == doctest::Approx(4.0));
        CHECK(grid.at(0, 1) == doctest::Approx(6.0));
        CHECK(grid.at(1, 0) == doctest::Approx(1.0));
        CHECK(grid.at(1, 1) == doctest::Approx(1.0));
    }
    SUBCASE("identity relevance gives a uniform swin map") {
        const Tensor grid = heatmap_swin(Tensor::identity(4), 2);
        for (Scalar v : grid.data) CHECK(v == doctest::Approx(1.0));
    }
    SUBCASE("row permutations do not change the swin map") {
        Rng rng(9);
        Tensor r = Tensor::zeros({4, 4});
        for (Scalar& v : r.data) v = rng.uniform(0.0, 1.0);
        Tensor permuted = Tensor::zeros({4, 4});
        const int perm[4] = {2, 0, 3, 1};
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) permuted.at(i, j) = r.at(perm[i], j);
        CHECK(oracles::max_abs_diff(heatmap_swin(r, 2), heatmap_swin(permuted, 2)) == 0.0);
    }
    SUBCASE("vit identity readout is all zero") {
        const Tensor grid = heatmap_vit(Tensor::identity(5), 2);
        for (Scalar v : grid.data) CHECK(v == 0.0);
    }
    SUBCASE("vit reads the CLS row without its CLS entry") {
        Tensor r = Tensor::identity(5);
        r.at(0, 0) = 1;
        r.at(0, 1) = 0.1;
        r.at(0, 2) = 0.2;
        r.at(0, 3) = 0.3;
        r.at(0, 4) = 0.4;
        const Tensor grid = heatmap_vit(r, 2);
        CHECK(grid.at(0, 0) == doctest::Approx(0.1));
        CHECK(grid.at(0, 1) == doctest::Approx(0.2));
        CHECK(grid.at(1, 0) == doctest::Approx(0.3));
        CHECK(grid.at(1, 1) == doctest::Approx(0.4));
    }
    SUBCASE("vit readout matches the dense chain on a 2-block toy") {
        ModelConfig cfg = ModelConfig::vit_toy();
        cfg.stage_depths = {2};
        cfg.validate();
        const Model model(cfg, oracles::healthy_weights(cfg, 101));
        ForwardTrace trace = model.forward(oracles::random_image(102, cfg));
        backward_attention_grads(trace, trace.predicted);
        AttributionOptions opts;
        const Relevance rel = compose_stages(trace, opts);
        const Tensor grid = heatmap_vit(rel.matrix.values, 2);
        const Tensor chain = oracles::compose(trace, 0, true, true, true);
        for (int j = 1; j < 5; ++j)
            CHECK(grid.data[static_cast<size_t>(j - 1)] == doctest::Approx(chain.at(0, j)));
    }
}

TEST_CASE("rollout") {
    SUBCASE("single block is the readout of one normalized factor") {
        ModelConfig cfg = ModelConfig::vit_toy();
        cfg.stage_depths = {1};
        cfg.validate();
        const Model model(cfg, random_weights(cfg, 111));
        const ForwardTrace trace = model.forward(oracles::random_image(112, cfg));
        const Tensor grid = rollout(trace);
        const std::vector<Tensor> planes = oracles::assemble_attention(trace.records[0], 5);
        Tensor factor = Tensor::identity(5);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                for (const Tensor& p : planes) factor.at(i, j) += p.at(i, j) / planes.size();
        for (int i = 0; i < 5; ++i) {
            Scalar row = 0.0;
            for (int j = 0; j < 5; ++j) row += factor.at(i, j);
            for (int j = 0; j < 5; ++j) factor.at(i, j) /= row;
        }
        for (int j = 1; j < 5; ++j)
            CHECK(grid.data[static_cast<size_t>(j - 1)] == doctest::Approx(factor.at(0, j)));
    }

    SUBCASE("factors equal the attention-only relevance factors pre-normalization") {
        const ModelConfig cfg = ModelConfig::vit_toy();
        const Model model(cfg, random_weights(cfg, 113));
        const ForwardTrace trace = model.forward(oracles::random_image(114, cfg));
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
            CHECK(oracles::max_abs_diff(factor, raw[b]) < 1e-12);
        }
    }

    SUBCASE("uniform attention gives a uniform heatmap") {
        ModelConfig cfg = ModelConfig::vit_toy();
        WeightStore w = random_weights(cfg, 115);
        for (int b = 0; b < cfg.total_depth(); ++b) {
            const std::string pre = "blocks." + std::to_string(b) + ".attn.";
            w.set(pre + "wq", Tensor::zeros({cfg.embed_dim, cfg.embed_dim}));
            w.set(pre + "wk", Tensor::zeros({cfg.embed_dim, cfg.embed_dim}));
            w.set(pre + "bq", Tensor::zeros({cfg.embed_dim}));
            w.set(pre + "bk", Tensor::zeros({cfg.embed_dim}));
        }
        const Model model(cfg, w);
        const ForwardTrace trace = model.forward(oracles::random_image(116, cfg));
        const Tensor grid = rollout(trace);
        for (Scalar v : grid.data) CHECK(v == doctest::Approx(grid.data[0]));
    }

    SUBCASE("swin variant is unsupported") {
        const ModelConfig cfg = ModelConfig::swin_toy();
        const Model model(cfg, random_weights(cfg, 117));
        const ForwardTrace trace = model.forward(oracles::random_image(118, cfg));
        CHECK_THROWS_AS(rollout(trace), UnsupportedError);
    }
}

TEST_CASE("upsample") {
    SUBCASE("constant 1x1 grid normalizes to zeros") {
        const Tensor up = upsample(Tensor({1, 1}, {5.0}), 4, 4, UpsampleMethod::nearest);
        for (Scalar v : up.data) CHECK(v == 0.0);
    }
    SUBCASE("nearest replicates blocks") {
        const Tensor grid({2, 2}, {0, 1, 1, 0});
        const Tensor up = upsample(grid, 4, 4, UpsampleMethod::nearest);
        CHECK(up.at(0, 0) == 0.0);
        CHECK(up.at(0, 2) == 1.0);
        CHECK(up.at(1, 1) == 0.0);
        CHECK(up.at(2, 0) == 1.0);
        CHECK(up.at(3, 3) == 0.0);
    }
    SUBCASE("bilinear of a constant grid is constant (zeros after normalization)") {
        const Tensor up = upsample(Tensor::full({2, 2}, 3.0), 8, 8, UpsampleMethod::bilinear);
        for (Scalar v : up.data) CHECK(v == doctest::Approx(up.data[0]));
    }
    SUBCASE("non-integer nearest factors are rejected") {
        CHECK_THROWS_AS(upsample(Tensor::zeros({3, 3}), 8, 8, UpsampleMethod::nearest),
                        ContractError);
    }
    SUBCASE("output lives in [0,1] with max 1 for non-constant grids") {
        Rng rng(10);
        Tensor grid = Tensor::zeros({2, 2});
        for (Scalar& v : grid.data) v = rng.uniform(0.0, 4.0);
        const Tensor up = upsample(grid, 8, 8, UpsampleMethod::bilinear);
        Scalar hi = 0.0;
        for (Scalar v : up.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            hi = std::max(hi, v);
        }
        CHECK(hi == doctest::Approx(1.0));
    }
}

TEST_CASE("relevance stays nonnegative across option combinations") {
    Rng rng(12);
    for (int t = 0; t < 20; ++t) {
        const ModelConfig cfg = t % 2 == 0 ? ModelConfig::vit_toy() : ModelConfig::swin_toy();
        const Model model(cfg, oracles::healthy_weights(cfg, 200 + t));
        ForwardTrace trace = model.forward(oracles::random_image(300 + t, cfg));
        backward_attention_grads(trace, rng.uniform_int(0, cfg.num_classes - 1));
        AttributionOptions opts;
        opts.start_stage = rng.uniform_int(0, cfg.stages() - 1);
        opts.use_std_scaling = rng.uniform_int(0, 1) == 1;
        opts.use_sum_normalize = rng.uniform_int(0, 1) == 1;
        opts.use_gradients = rng.uniform_int(0, 1) == 1;
        const Relevance rel = compose_stages(trace, opts);
        CHECK(rel.matrix.values.all_finite());
        for (Scalar v : rel.matrix.values.data) CHECK(v >= 0.0);
        // Same-stage relevance keeps a unit diagonal floor.
        if (opts.start_stage == cfg.stages() - 1) {
            for (int i = 0; i < rel.matrix.values.rows(); ++i)
                CHECK(rel.matrix.values.at(i, i) >= 1.0);
        }
    }
}

TEST_CASE("attribute flags a degenerate heatmap when gradients vanish") {
    const ModelConfig cfg = ModelConfig::vit_toy();
    WeightStore w = oracles::healthy_weights(cfg, 133);
    w.set("head.weight", Tensor::zeros({cfg.embed_dim, cfg.num_classes}));
    const Model model(cfg, w);
    AttributionOptions opts;
    opts.target = TargetMode::specified;
    opts.target_class = 0;
    const AttributionResult res =
        attribute(model, oracles::random_image(134, cfg), opts, UpsampleMethod::nearest);
    CHECK(res.heatmap.degenerate);
    CHECK(res.heatmap.pixels.all_finite());
    for (Scalar v : res.heatmap.pixels.data) CHECK(v == 0.0);
}

TEST_CASE("attribute pipeline output shapes and flags") {
    const ModelConfig cfg = ModelConfig::swin_toy();
    const Model model(cfg, oracles::healthy_weights(cfg, 131));
    const Tensor image = oracles::random_image(132, cfg);
    AttributionOptions opts;
    opts.start_stage = 0;
    const AttributionResult res = attribute(model, image, opts, UpsampleMethod::nearest);
    CHECK(res.heatmap.grid.rows() == 4);
    CHECK(res.heatmap.pixels.rows() == 8);
    CHECK(res.heatmap.pixels.cols() == 8);
    for (Scalar v : res.heatmap.pixels.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(res.predicted == predict(model.forward(image).logits));
}
