#include "attnlens/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "attnlens/rng.hpp"

namespace attnlens {

std::vector<LabeledSample> make_synthetic_dataset(unsigned long long seed, int n, int grid,
                                                  Scalar noise) {
    if (n < 1) throw ContractError("dataset size must be at least 1");
    if (grid < 4 || grid % 2 != 0) throw ContractError("grid must be an even side >= 4");
    if (noise < 0.0) throw ContractError("noise must be nonnegative");
    Rng rng(seed);
    const int quad = grid / 2;
    const int max_extent = std::min(3, quad);
    std::vector<LabeledSample> samples;
    samples.reserve(static_cast<size_t>(n));
    for (int s = 0; s < n; ++s) {
        const int quadrant = rng.uniform_int(0, 3);
        const int rh = rng.uniform_int(2, max_extent);
        const int rw = rng.uniform_int(2, max_extent);
        const int qr = (quadrant / 2) * quad;
        const int qc = (quadrant % 2) * quad;
        const int r0 = qr + rng.uniform_int(0, quad - rh);
        const int c0 = qc + rng.uniform_int(0, quad - rw);
        LabeledSample sample;
        sample.label = quadrant;
        sample.image = Tensor::zeros({grid, grid, 1});
        Tensor mask = Tensor::zeros({grid, grid});
        for (int r = 0; r < grid; ++r) {
            for (int c = 0; c < grid; ++c) {
                // One draw per pixel regardless of noise so rectangle placement
                // does not depend on the noise level.
                const Scalar u = rng.uniform(0.0, 1.0);
                const bool inside = r >= r0 && r < r0 + rh && c >= c0 && c < c0 + rw;
                sample.image.at(r, c, 0) = inside ? 1.0 : u * noise;
                if (inside) mask.at(r, c) = 1.0;
            }
        }
        sample.mask = std::move(mask);
        samples.push_back(std::move(sample));
    }
    return samples;
}

Tensor perturb_image(const Tensor& image, const Tensor& pixel_map, Scalar fraction,
                     Polarity polarity, Scalar fill) {
    if (image.ndim() != 3 || pixel_map.ndim() != 2 || image.shape[0] != pixel_map.shape[0] ||
        image.shape[1] != pixel_map.shape[1]) {
        throw ContractError("pixel map must match the image's spatial shape");
    }
    if (!(fraction >= 0.0 && fraction < 1.0)) throw ContractError("fraction must be in [0, 1)");
    const int hw = pixel_map.shape[0] * pixel_map.shape[1];
    const int k = static_cast<int>(std::ceil(fraction * hw));
    if (k == 0) return image;
    std::vector<int> order(static_cast<size_t>(hw));
    std::iota(order.begin(), order.end(), 0);
    const bool highest_first = polarity == Polarity::positive;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const Scalar va = pixel_map.data[static_cast<size_t>(a)];
        const Scalar vb = pixel_map.data[static_cast<size_t>(b)];
        if (va != vb) return highest_first ? va > vb : va < vb;
        return a < b;
    });
    Tensor out = image;
    const int w = image.shape[1];
    const int channels = image.shape[2];
    for (int i = 0; i < k; ++i) {
        const int r = order[static_cast<size_t>(i)] / w;
        const int c = order[static_cast<size_t>(i)] % w;
        for (int ch = 0; ch < channels; ++ch) out.at(r, c, ch) = fill;
    }
    return out;
}

std::vector<Scalar> perturbation_fractions() {
    std::vector<Scalar> f;
    for (int i = 0; i < 10; ++i) f.push_back(i * 0.1);
    return f;
}

Scalar trapezoid_auc(const std::vector<Scalar>& fractions, const std::vector<Scalar>& accuracy) {
    if (fractions.size() != accuracy.size() || fractions.size() < 2) {
        throw ContractError("trapezoid_auc needs matching lists of at least two points");
    }
    for (size_t i = 1; i < fractions.size(); ++i) {
        if (!(fractions[i] > fractions[i - 1])) {
            throw ContractError("fractions must be strictly increasing");
        }
    }
    Scalar auc = 0.0;
    for (size_t i = 1; i < fractions.size(); ++i) {
        auc += (fractions[i] - fractions[i - 1]) * (accuracy[i] + accuracy[i - 1]) * 0.5;
    }
    return auc;
}

AttributionFn make_attribution_fn(const Model& model, const AttributionOptions& opts,
                                  UpsampleMethod method) {
    return [&model, opts, method](const Tensor& image, int target_class) {
        AttributionOptions per_image = opts;
        per_image.target = TargetMode::specified;
        per_image.target_class = target_class;
        return attribute(model, image, per_image, method).heatmap.pixels;
    };
}

AttributionFn make_rollout_fn(const Model& model, UpsampleMethod method) {
    return [&model, method](const Tensor& image, int) {
        const ForwardTrace trace = model.forward(image);
        const Tensor grid = rollout(trace);
        return upsample(grid, model.config().image_size, model.config().image_size, method);
    };
}

int parallelism_cap() {
    int cap = static_cast<int>(std::thread::hardware_concurrency());
    if (cap < 1) cap = 1;
    if (const char* env = std::getenv("ATTNLENS_THREADS")) {
        const int requested = std::atoi(env);
        if (requested >= 1) cap = std::min(cap, requested);
    }
    return cap;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    const int workers = std::min(n, parallelism_cap());
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

PerturbationResult perturbation_curve(const Model& model,
                                      const std::vector<LabeledSample>& dataset,
                                      const AttributionFn& attribution, Polarity polarity,
                                      EvalTarget target, Scalar fill) {
    if (dataset.empty()) throw ContractError("perturbation_curve requires a non-empty dataset");
    const std::vector<Scalar> fractions = perturbation_fractions();
    const int n = static_cast<int>(dataset.size());
    const int steps = static_cast<int>(fractions.size());
    std::vector<char> correct(static_cast<size_t>(n) * steps, 0);

    parallel_for(n, [&](int idx) {
        const LabeledSample& sample = dataset[static_cast<size_t>(idx)];
        const int clean_pred = predict(model.forward(sample.image).logits);
        const int reference = target == EvalTarget::top ? clean_pred : sample.label;
        const Tensor pixels = attribution(sample.image, reference);
        for (int s = 0; s < steps; ++s) {
            const Tensor perturbed =
                perturb_image(sample.image, pixels, fractions[static_cast<size_t>(s)], polarity, fill);
            const int pred = predict(model.forward(perturbed).logits);
            correct[static_cast<size_t>(idx) * steps + s] = (pred == reference) ? 1 : 0;
        }
    });

    PerturbationResult result;
    result.fractions = fractions;
    result.accuracy.assign(static_cast<size_t>(steps), 0.0);
    for (int s = 0; s < steps; ++s) {
        int hits = 0;
        for (int i = 0; i < n; ++i) hits += correct[static_cast<size_t>(i) * steps + s];
        result.accuracy[static_cast<size_t>(s)] = static_cast<Scalar>(hits) / n;
    }
    result.auc = trapezoid_auc(result.fractions, result.accuracy);
    return result;
}

PerturbationResult perturbation_curve(const Model& model,
                                      const std::vector<LabeledSample>& dataset,
                                      const AttributionOptions& opts, Polarity polarity,
                                      EvalTarget target, UpsampleMethod method, Scalar fill) {
    return perturbation_curve(model, dataset, make_attribution_fn(model, opts, method), polarity,
                              target, fill);
}

Tensor binarize(const Tensor& pixel_map) {
    Scalar mean = 0.0;
    for (Scalar v : pixel_map.data) mean += v;
    mean /= static_cast<Scalar>(pixel_map.size());
    Tensor mask = Tensor::zeros(pixel_map.shape);
    for (size_t i = 0; i < mask.data.size(); ++i) {
        mask.data[i] = pixel_map.data[i] > mean ? 1.0 : 0.0;
    }
    return mask;
}

SegMetrics seg_metrics(const Tensor& pixel_map, const Tensor& gt_mask) {
    if (!pixel_map.same_shape(gt_mask)) {
        throw ContractError("pixel map and ground truth shapes differ");
    }
    const long long total = gt_mask.size();
    long long gt_fg = 0;
    for (Scalar v : gt_mask.data) gt_fg += v > 0.5 ? 1 : 0;
    if (gt_fg == 0 || gt_fg == total) {
        throw ContractError("ground truth must contain both classes");
    }

    const Tensor pred = binarize(pixel_map);
    long long tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] > 0.5;
        const bool t = gt_mask.data[i] > 0.5;
        tp += (p && t) ? 1 : 0;
        fp += (p && !t) ? 1 : 0;
        fn += (!p && t) ? 1 : 0;
        tn += (!p && !t) ? 1 : 0;
    }

    SegMetrics m;
    m.pixel_acc = static_cast<Scalar>(tp + tn) / static_cast<Scalar>(total);
    const Scalar iou_fg = static_cast<Scalar>(tp) / static_cast<Scalar>(tp + fp + fn);
    const Scalar iou_bg = static_cast<Scalar>(tn) / static_cast<Scalar>(tn + fn + fp);
    m.miou = 0.5 * (iou_fg + iou_bg);
    auto f1 = [](long long tp_, long long fp_, long long fn_) -> Scalar {
        if (tp_ + fp_ + fn_ == 0) return 1.0; // empty class matched exactly
        return 2.0 * tp_ / static_cast<Scalar>(2 * tp_ + fp_ + fn_);
    };
    m.mf1 = 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp));

    // Average precision over the score ranking; ties resolved by pixel index.
    std::vector<int> order(static_cast<size_t>(total));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const Scalar va = pixel_map.data[static_cast<size_t>(a)];
        const Scalar vb = pixel_map.data[static_cast<size_t>(b)];
        if (va != vb) return va > vb;
        return a < b;
    });
    Scalar ap = 0.0;
    long long hits = 0;
    for (long long k = 0; k < total; ++k) {
        if (gt_mask.data[static_cast<size_t>(order[static_cast<size_t>(k)])] > 0.5) {
            hits += 1;
            ap += static_cast<Scalar>(hits) / static_cast<Scalar>(k + 1);
        }
    }
    m.map = ap / static_cast<Scalar>(gt_fg);
    return m;
}

SegMetrics evaluate_segmentation(const Model& model, const std::vector<LabeledSample>& dataset,
                                 const AttributionFn& attribution) {
    if (dataset.empty()) throw ContractError("segmentation eval requires a non-empty dataset");
    const int n = static_cast<int>(dataset.size());
    std::vector<SegMetrics> per_sample(static_cast<size_t>(n));
    parallel_for(n, [&](int idx) {
        const LabeledSample& sample = dataset[static_cast<size_t>(idx)];
        if (!sample.mask) throw ContractError("segmentation eval sample is missing its mask");
        const int pred = predict(model.forward(sample.image).logits);
        const Tensor pixels = attribution(sample.image, pred);
        per_sample[static_cast<size_t>(idx)] = seg_metrics(pixels, *sample.mask);
    });
    SegMetrics mean;
    for (const SegMetrics& m : per_sample) {
        mean.miou += m.miou;
        mean.map += m.map;
        mean.pixel_acc += m.pixel_acc;
        mean.mf1 += m.mf1;
    }
    mean.miou /= n;
    mean.map /= n;
    mean.pixel_acc /= n;
    mean.mf1 /= n;
    return mean;
}

SegMetrics evaluate_segmentation(const Model& model, const std::vector<LabeledSample>& dataset,
                                 const AttributionOptions& opts, UpsampleMethod method) {
    return evaluate_segmentation(model, dataset, make_attribution_fn(model, opts, method));
}

} // namespace attnlens
