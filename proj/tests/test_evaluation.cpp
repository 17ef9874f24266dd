#include <cmath>

#include <doctest.h>

#include "attnlens/evaluation.hpp"
#include "attnlens/rng.hpp"
#include "oracles.hpp"

using namespace attnlens;

namespace {

Tensor map2x2(Scalar a, Scalar b, Scalar c, Scalar d) { return Tensor({2, 2}, {a, b, c, d}); }

Tensor gray_image(const Tensor& map) {
    Tensor img = Tensor::zeros({map.shape[0], map.shape[1], 1});
    for (size_t i = 0; i < map.data.size(); ++i) img.data[i] = map.data[i];
    return img;
}

} // namespace

TEST_CASE("perturb_image") {
    const Tensor image = gray_image(map2x2(0.9, 0.8, 0.7, 0.6));
    SUBCASE("fraction zero is the identity") {
        const Tensor out = perturb_image(image, map2x2(4, 3, 2, 1), 0.0, Polarity::positive);
        CHECK(out.data == image.data);
    }
    SUBCASE("positive polarity removes the top-ranked half") {
        const Tensor out = perturb_image(image, map2x2(4, 3, 2, 1), 0.5, Polarity::positive);
        CHECK(out.at(0, 0, 0) == 0.0);
        CHECK(out.at(0, 1, 0) == 0.0);
        CHECK(out.at(1, 0, 0) == doctest::Approx(0.7));
        CHECK(out.at(1, 1, 0) == doctest::Approx(0.6));
    }
    SUBCASE("negative polarity removes the bottom-ranked pixels first") {
        const Tensor out = perturb_image(image, map2x2(4, 3, 2, 1), 0.25, Polarity::negative);
        CHECK(out.at(1, 1, 0) == 0.0);
        CHECK(out.at(0, 0, 0) == doctest::Approx(0.9));
    }
    SUBCASE("ties break toward the lower pixel index") {
        const Tensor out = perturb_image(image, Tensor::ones({2, 2}), 0.25, Polarity::positive);
        CHECK(out.at(0, 0, 0) == 0.0);
        CHECK(out.at(0, 1, 0) == doctest::Approx(0.8));
    }
    SUBCASE("fill value is honored") {
        const Tensor out = perturb_image(image, map2x2(4, 3, 2, 1), 0.25, Polarity::positive, 0.5);
        CHECK(out.at(0, 0, 0) == doctest::Approx(0.5));
    }
    SUBCASE("fraction out of range") {
        CHECK_THROWS_AS(perturb_image(image, Tensor::ones({2, 2}), 1.0, Polarity::positive),
                        ContractError);
    }
}

TEST_CASE("trapezoid_auc hand values") {
    const std::vector<Scalar> f = perturbation_fractions();
    REQUIRE(f.size() == 10);
    CHECK(f.front() == doctest::Approx(0.0));
    CHECK(f.back() == doctest::Approx(0.9));

    std::vector<Scalar> linear;
    for (int i = 0; i < 10; ++i) linear.push_back(1.0 - i / 9.0);
    CHECK(trapezoid_auc(f, linear) == doctest::Approx(0.45).epsilon(1e-12));

    const std::vector<Scalar> constant(10, 0.7);
    CHECK(trapezoid_auc(f, constant) == doctest::Approx(0.9 * 0.7).epsilon(1e-12));

    std::vector<Scalar> step(10, 1.0);
    for (int i = 5; i < 10; ++i) step[static_cast<size_t>(i)] = 0.0;
    // 4 full panels + one transition panel.
    CHECK(trapezoid_auc(f, step) == doctest::Approx(0.4 + 0.05).epsilon(1e-12));
}

TEST_CASE("binarize") {
    SUBCASE("balanced map splits at its mean") {
        const Tensor mask = binarize(map2x2(0, 1, 1, 0));
        CHECK(mask.at(0, 0) == 0.0);
        CHECK(mask.at(0, 1) == 1.0);
        CHECK(mask.at(1, 0) == 1.0);
        CHECK(mask.at(1, 1) == 0.0);
    }
    SUBCASE("constant map has no foreground") {
        const Tensor mask = binarize(Tensor::full({2, 2}, 0.4));
        for (Scalar v : mask.data) CHECK(v == 0.0);
    }
    SUBCASE("hand-thresholded example") {
        const Tensor mask = binarize(map2x2(0.1, 0.2, 0.3, 0.8));
        CHECK(mask.at(0, 0) == 0.0);
        CHECK(mask.at(0, 1) == 0.0);
        CHECK(mask.at(1, 0) == 0.0);
        CHECK(mask.at(1, 1) == 1.0);
    }
}

TEST_CASE("seg_metrics") {
    SUBCASE("perfect prediction scores 1 everywhere") {
        const Tensor gt = map2x2(0, 1, 1, 0);
        const SegMetrics m = seg_metrics(gt, gt);
        CHECK(m.miou == doctest::Approx(1.0));
        CHECK(m.map == doctest::Approx(1.0));
        CHECK(m.pixel_acc == doctest::Approx(1.0));
        CHECK(m.mf1 == doctest::Approx(1.0));
    }
    SUBCASE("complement prediction on a balanced mask scores 0") {
        const Tensor gt = map2x2(1, 1, 0, 0);
        const Tensor scores = map2x2(0.0, 0.0, 1.0, 1.0);
        const SegMetrics m = seg_metrics(scores, gt);
        CHECK(m.pixel_acc == doctest::Approx(0.0));
        CHECK(m.miou == doctest::Approx(0.0));
    }
    SUBCASE("separable scores give AP 1") {
        const Tensor gt = map2x2(1, 1, 0, 0);
        const SegMetrics m = seg_metrics(map2x2(0.9, 0.8, 0.2, 0.1), gt);
        CHECK(m.map == doctest::Approx(1.0));
    }
    SUBCASE("interleaved ranking matches the prefix enumerator") {
        Tensor gt = map2x2(0, 1, 0, 1); // fg at ranked positions 2 and 4
        const Tensor scores = map2x2(0.9, 0.8, 0.2, 0.1);
        const SegMetrics m = seg_metrics(scores, gt);
        CHECK(m.map == doctest::Approx(oracles::average_precision(scores, gt)));
        CHECK(m.map == doctest::Approx((1.0 / 2.0 + 2.0 / 4.0) / 2.0));
    }
    SUBCASE("degenerate ground truth is rejected") {
        CHECK_THROWS_AS(seg_metrics(map2x2(0.1, 0.2, 0.3, 0.4), Tensor::ones({2, 2})),
                        ContractError);
        CHECK_THROWS_AS(seg_metrics(map2x2(0.1, 0.2, 0.3, 0.4), Tensor::zeros({2, 2})),
                        ContractError);
    }
    SUBCASE("pixel accuracy is symmetric under swapping prediction and truth") {
        Rng rng(15);
        for (int t = 0; t < 20; ++t) {
            Tensor a = Tensor::zeros({3, 3});
            Tensor b = Tensor::zeros({3, 3});
            int fa = 0, fb = 0;
            for (size_t i = 0; i < 9; ++i) {
                a.data[i] = rng.uniform_int(0, 1);
                b.data[i] = rng.uniform_int(0, 1);
                fa += a.data[i] > 0.5 ? 1 : 0;
                fb += b.data[i] > 0.5 ? 1 : 0;
            }
            if (fa == 0 || fa == 9 || fb == 0 || fb == 9) continue;
            CHECK(seg_metrics(a, b).pixel_acc == doctest::Approx(seg_metrics(b, a).pixel_acc));
        }
    }
}

TEST_CASE("make_synthetic_dataset") {
    SUBCASE("deterministic per seed") {
        const auto a = make_synthetic_dataset(42, 5, 8, 0.1);
        const auto b = make_synthetic_dataset(42, 5, 8, 0.1);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].label == b[i].label);
            CHECK(a[i].image.data == b[i].image.data);
            CHECK(a[i].mask->data == b[i].mask->data);
        }
    }
    SUBCASE("zero noise leaves the background exactly zero") {
        for (const LabeledSample& s : make_synthetic_dataset(7, 4, 8, 0.0)) {
            for (int r = 0; r < 8; ++r)
                for (int c = 0; c < 8; ++c)
                    if (s.mask->at(r, c) < 0.5) CHECK(s.image.at(r, c, 0) == 0.0);
        }
    }
    SUBCASE("mask area equals the rectangle area and sits in the labeled quadrant") {
        for (const LabeledSample& s : make_synthetic_dataset(9, 10, 8, 0.2)) {
            int area = 0;
            for (int r = 0; r < 8; ++r)
                for (int c = 0; c < 8; ++c)
                    if (s.mask->at(r, c) > 0.5) {
                        area += 1;
                        CHECK(s.image.at(r, c, 0) == doctest::Approx(1.0));
                        const int quadrant = (r / 4) * 2 + (c / 4);
                        CHECK(quadrant == s.label);
                    }
            CHECK(area >= 4);
        }
    }
}

TEST_CASE("perturbation_curve") {
    const ModelConfig cfg = ModelConfig::vit_toy();
    const Model model(cfg, oracles::healthy_weights(cfg, 301));
    const auto dataset = make_synthetic_dataset(302, 6, cfg.image_size, 0.1);
    AttributionOptions opts;

    SUBCASE("fraction zero equals plain accuracy") {
        const PerturbationResult top =
            perturbation_curve(model, dataset, opts, Polarity::positive, EvalTarget::top);
        CHECK(top.accuracy[0] == doctest::Approx(1.0)); // predictions agree with themselves
        const PerturbationResult target =
            perturbation_curve(model, dataset, opts, Polarity::positive, EvalTarget::target);
        int hits = 0;
        for (const LabeledSample& s : dataset)
            hits += predict(model.forward(s.image).logits) == s.label ? 1 : 0;
        CHECK(target.accuracy[0] == doctest::Approx(static_cast<Scalar>(hits) / dataset.size()));
    }

    SUBCASE("constant-logit model traces a flat curve") {
        WeightStore w = random_weights(cfg, 303);
        w.set("head.weight", Tensor::zeros({cfg.embed_dim, cfg.num_classes}));
        w.set("head.bias", Tensor({4}, {0.4, 0.3, 0.2, 0.1}));
        const Model constant(cfg, w);
        const PerturbationResult r =
            perturbation_curve(constant, dataset, opts, Polarity::positive, EvalTarget::top);
        for (Scalar acc : r.accuracy) CHECK(acc == doctest::Approx(1.0));
        CHECK(r.auc == doctest::Approx(0.9)); // trapezoid of the constant curve
    }

    SUBCASE("AUC is invariant under monotone heatmap rescaling") {
        AttributionFn base = make_attribution_fn(model, opts, UpsampleMethod::bilinear);
        AttributionFn rescaled = [base](const Tensor& image, int cls) {
            Tensor pixels = base(image, cls);
            for (Scalar& v : pixels.data) v = 0.25 + 0.5 * v * v * v; // strictly monotone on [0,1]
            return pixels;
        };
        const PerturbationResult a =
            perturbation_curve(model, dataset, base, Polarity::negative, EvalTarget::target);
        const PerturbationResult b =
            perturbation_curve(model, dataset, rescaled, Polarity::negative, EvalTarget::target);
        CHECK(a.auc == doctest::Approx(b.auc));
        for (size_t i = 0; i < a.accuracy.size(); ++i)
            CHECK(a.accuracy[i] == doctest::Approx(b.accuracy[i]));
    }

    SUBCASE("empty dataset is rejected") {
        CHECK_THROWS_AS(
            perturbation_curve(model, {}, opts, Polarity::positive, EvalTarget::top),
            ContractError);
    }

    SUBCASE("oracle heatmap on a constructed linear model orders the polarities") {
        // Head reads the mean token value, and patches carry single pixels, so
        // bright pixels are exactly the model's sensitivity.
        ModelConfig lin;
        lin.variant = Variant::swin;
        lin.image_size = 4;
        lin.patch_size = 1;
        lin.channels = 1;
        lin.embed_dim = 2;
        lin.heads = 1;
        lin.num_classes = 2;
        lin.stage_depths = {1};
        lin.window_side = 2;
        lin.validate();
        WeightStore w;
        for (const auto& [name, shape] : expected_weight_shapes(lin)) w.set(name, Tensor::zeros(shape));
        w.set("patch_embed.weight", Tensor({1, 2}, {1.0, 0.0}));
        w.set("blocks.0.ln1.gain", Tensor::ones({2}));
        w.set("head.weight", Tensor({2, 2}, {1.0, -1.0, 0.0, 0.0}));
        w.set("head.bias", Tensor({2}, {0.0, 0.05})); // class 1 wins once the mean is drained
        const Model linear(lin, w);
        std::vector<LabeledSample> ds;
        Rng rng(304);
        for (int i = 0; i < 6; ++i) {
            LabeledSample s;
            s.image = Tensor::zeros({4, 4, 1});
            for (Scalar& v : s.image.data) v = rng.uniform(0.0, 1.0);
            s.label = 0; // mean pixel value drives class 0 up
            ds.push_back(std::move(s));
        }
        AttributionFn oracle_fn = [](const Tensor& image, int) {
            Tensor pix = Tensor::zeros({4, 4});
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) pix.at(r, c) = image.at(r, c, 0);
            return pix;
        };
        const PerturbationResult neg =
            perturbation_curve(linear, ds, oracle_fn, Polarity::negative, EvalTarget::target);
        const PerturbationResult pos =
            perturbation_curve(linear, ds, oracle_fn, Polarity::positive, EvalTarget::target);
        CHECK(neg.auc >= pos.auc);
    }
}

TEST_CASE("segmentation eval with the ground truth as the heatmap is perfect") {
    const ModelConfig cfg = ModelConfig::vit_toy();
    const Model model(cfg, random_weights(cfg, 305));
    const auto dataset = make_synthetic_dataset(306, 5, cfg.image_size, 0.1);
    AttributionFn oracle_fn = [&dataset](const Tensor& image, int) {
        for (const LabeledSample& s : dataset) {
            if (s.image.data == image.data) return *s.mask;
        }
        throw ContractError("unknown image");
    };
    const SegMetrics m = evaluate_segmentation(model, dataset, oracle_fn);
    CHECK(m.miou == doctest::Approx(1.0));
    CHECK(m.map == doctest::Approx(1.0));
    CHECK(m.pixel_acc == doctest::Approx(1.0));
    CHECK(m.mf1 == doctest::Approx(1.0));
}

TEST_CASE("ATTNLENS_THREADS caps eval parallelism") {
    setenv("ATTNLENS_THREADS", "1", 1);
    CHECK(parallelism_cap() == 1);
    setenv("ATTNLENS_THREADS", "2", 1);
    CHECK(parallelism_cap() <= 2);
    unsetenv("ATTNLENS_THREADS");
    CHECK(parallelism_cap() >= 1);
}

TEST_CASE("results are identical with capped parallelism") {
    const ModelConfig cfg = ModelConfig::vit_toy();
    const Model model(cfg, oracles::healthy_weights(cfg, 309));
    const auto dataset = make_synthetic_dataset(310, 6, cfg.image_size, 0.1);
    AttributionOptions opts;
    const PerturbationResult wide =
        perturbation_curve(model, dataset, opts, Polarity::negative, EvalTarget::target);
    setenv("ATTNLENS_THREADS", "1", 1);
    const PerturbationResult serial =
        perturbation_curve(model, dataset, opts, Polarity::negative, EvalTarget::target);
    unsetenv("ATTNLENS_THREADS");
    CHECK(wide.auc == serial.auc);
    CHECK(wide.accuracy == serial.accuracy);
}

TEST_CASE("parallel evaluation is deterministic") {
    const ModelConfig cfg = ModelConfig::vit_toy();
    const Model model(cfg, oracles::healthy_weights(cfg, 307));
    const auto dataset = make_synthetic_dataset(308, 8, cfg.image_size, 0.1);
    AttributionOptions opts;
    const SegMetrics a = evaluate_segmentation(model, dataset, opts);
    const SegMetrics b = evaluate_segmentation(model, dataset, opts);
    CHECK(a.miou == b.miou);
    CHECK(a.map == b.map);
    CHECK(a.pixel_acc == b.pixel_acc);
    CHECK(a.mf1 == b.mf1);
}
