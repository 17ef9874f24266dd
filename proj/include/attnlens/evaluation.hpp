#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "attnlens/attribution.hpp"
#include "attnlens/model.hpp"
#include "attnlens/tensor.hpp"

namespace attnlens {

struct LabeledSample {
    Tensor image; // [H x W x C]
    int label = 0;
    std::optional<Tensor> mask; // [H x W], 1 = foreground
};

// Bright rectangle on a noisy background; the label is the rectangle's
// quadrant (0 TL, 1 TR, 2 BL, 3 BR) and the mask is the rectangle itself.
std::vector<LabeledSample> make_synthetic_dataset(unsigned long long seed, int n, int grid,
                                                  Scalar noise);

enum class Polarity { positive, negative };
enum class EvalTarget { top, target }; // predicted class vs. ground-truth label

// Zeroes the ceil(fraction * H * W) most (positive) or least (negative)
// relevant pixels; ties rank by row-major pixel index.
Tensor perturb_image(const Tensor& image, const Tensor& pixel_map, Scalar fraction,
                     Polarity polarity, Scalar fill = 0.0);

std::vector<Scalar> perturbation_fractions(); // 0.0 .. 0.9 step 0.1

Scalar trapezoid_auc(const std::vector<Scalar>& fractions, const std::vector<Scalar>& accuracy);

struct PerturbationResult {
    std::vector<Scalar> fractions;
    std::vector<Scalar> accuracy;
    Scalar auc = 0.0;
};

// Produces a pixel-level heatmap for one image and target class.
using AttributionFn = std::function<Tensor(const Tensor& image, int target_class)>;
AttributionFn make_attribution_fn(const Model& model, const AttributionOptions& opts,
                                  UpsampleMethod method);
AttributionFn make_rollout_fn(const Model& model, UpsampleMethod method);

// The heatmap is computed once per image on the clean input and reused for
// every fraction.
PerturbationResult perturbation_curve(const Model& model,
                                      const std::vector<LabeledSample>& dataset,
                                      const AttributionFn& attribution, Polarity polarity,
                                      EvalTarget target, Scalar fill = 0.0);
PerturbationResult perturbation_curve(const Model& model,
                                      const std::vector<LabeledSample>& dataset,
                                      const AttributionOptions& opts, Polarity polarity,
                                      EvalTarget target,
                                      UpsampleMethod method = UpsampleMethod::bilinear,
                                      Scalar fill = 0.0);

// Foreground iff value > mean of the map.
Tensor binarize(const Tensor& pixel_map);

struct SegMetrics {
    Scalar miou = 0.0;
    Scalar map = 0.0;
    Scalar pixel_acc = 0.0;
    Scalar mf1 = 0.0;
};

// Two-class (foreground/background) metrics of the binarized map plus
// ranking-based average precision of the raw scores.
SegMetrics seg_metrics(const Tensor& pixel_map, const Tensor& gt_mask);

// Mean of per-sample metrics; every sample must carry a mask.
SegMetrics evaluate_segmentation(const Model& model, const std::vector<LabeledSample>& dataset,
                                 const AttributionFn& attribution);
SegMetrics evaluate_segmentation(const Model& model, const std::vector<LabeledSample>& dataset,
                                 const AttributionOptions& opts,
                                 UpsampleMethod method = UpsampleMethod::bilinear);

// Worker count for sample-parallel evaluation; ATTNLENS_THREADS caps it.
int parallelism_cap();
void parallel_for(int n, const std::function<void(int)>& fn);

} // namespace attnlens
