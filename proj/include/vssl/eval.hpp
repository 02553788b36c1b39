#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "vssl/data.hpp"
#include "vssl/models.hpp"

namespace vssl {

struct MetricsRecord {
    double clip_top1 = 0.0;   // percent
    double video_top1 = 0.0;  // percent
    std::vector<double> per_class_top1;  // percent, indexed by class (clip metric)
    int64_t confident_count = 0;
    int64_t confident_correct = 0;
};

// Ties break to the lowest index.
int64_t argmax_lowest_index(std::span<const double> row);

// Mean of `clip_count` probability rows, then argmax: the video-level
// decision rule.
int64_t video_decision(std::span<const double> clip_probs, int64_t num_classes);

// Counting core shared by the model-driven metrics: probs holds one row per
// id, aligned with video_ids.
double top1_from_probs(const Dataset& dataset, std::span<const int64_t> video_ids,
                       std::span<const double> probs, int64_t num_classes,
                       std::vector<double>* per_class = nullptr);

// Center-clip accuracy. Argmax ties break to the lowest class index. When
// per_class is given it receives the per-class clip accuracy (balanced sets
// assumed by the caller for any weighting).
double clip_top1(const VideoNet3D& model, const Dataset& dataset,
                 std::span<const int64_t> video_ids,
                 std::vector<double>* per_class = nullptr);

// Average of the softmax vectors over all consecutive non-overlapping
// center-cropped clips of each video, argmax of the mean.
double video_top1(const VideoNet3D& model, const Dataset& dataset,
                  std::span<const int64_t> video_ids, int64_t clip_frames,
                  std::vector<double>* per_class = nullptr);

// (count, correct) among `video_ids` whose center-clip max confidence is
// strictly above `threshold`; correctness uses the held-back ground truth.
std::pair<int64_t, int64_t> confident_stats(const VideoNet3D& model,
                                            const Dataset& dataset,
                                            std::span<const int64_t> video_ids,
                                            double threshold);

// b minus a per class, sorted by delta descending (class id, delta).
std::vector<std::pair<int64_t, double>> per_class_delta(
    const std::vector<double>& per_class_a, const std::vector<double>& per_class_b);

// Single forward pass over a pool yielding both its clip accuracy and the
// confident-prediction tally.
struct PoolStats {
    double clip_top1 = 0.0;
    int64_t confident_count = 0;
    int64_t confident_correct = 0;
};
PoolStats pool_eval(const VideoNet3D& model, const Dataset& dataset,
                    std::span<const int64_t> video_ids, double threshold);

// Test-split clip/video accuracy plus confident-prediction stats on the
// manifest's unlabeled pool.
MetricsRecord evaluate(const VideoNet3D& model, const Dataset& dataset,
                       const DatasetManifest& manifest,
                       double confidence_threshold = 0.95);

}  // namespace vssl
