#include "vssl/eval.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace vssl {

int64_t argmax_lowest_index(std::span<const double> row) {
    int64_t best = 0;
    for (size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[static_cast<size_t>(best)]) best = static_cast<int64_t>(i);
    }
    return best;
}

int64_t video_decision(std::span<const double> clip_probs, int64_t num_classes) {
    const int64_t clips = static_cast<int64_t>(clip_probs.size()) / num_classes;
    std::vector<double> mean(static_cast<size_t>(num_classes), 0.0);
    for (int64_t k = 0; k < clips; ++k) {
        for (int64_t c = 0; c < num_classes; ++c) {
            mean[static_cast<size_t>(c)] += clip_probs[static_cast<size_t>(k * num_classes + c)];
        }
    }
    for (double& v : mean) v /= static_cast<double>(clips);
    return argmax_lowest_index(mean);
}

double top1_from_probs(const Dataset& dataset, std::span<const int64_t> video_ids,
                       std::span<const double> probs, int64_t num_classes,
                       std::vector<double>* per_class) {
    std::vector<int64_t> correct(static_cast<size_t>(num_classes), 0);
    std::vector<int64_t> total(static_cast<size_t>(num_classes), 0);
    for (size_t i = 0; i < video_ids.size(); ++i) {
        const int64_t truth = dataset.sample(video_ids[i]).class_label;
        const int64_t guess = argmax_lowest_index(
            probs.subspan(i * static_cast<size_t>(num_classes),
                          static_cast<size_t>(num_classes)));
        ++total[static_cast<size_t>(truth)];
        if (guess == truth) ++correct[static_cast<size_t>(truth)];
    }
    int64_t hit = 0, n = 0;
    for (size_t c = 0; c < total.size(); ++c) {
        hit += correct[c];
        n += total[c];
    }
    if (per_class) {
        per_class->assign(total.size(), 0.0);
        for (size_t c = 0; c < total.size(); ++c) {
            if (total[c] > 0) {
                (*per_class)[c] = 100.0 * static_cast<double>(correct[c]) /
                                  static_cast<double>(total[c]);
            }
        }
    }
    return n == 0 ? 0.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(n);
}

namespace {

constexpr int64_t kEvalBatch = 64;

int64_t argmax_lowest(const double* row, int64_t n) {
    return argmax_lowest_index(std::span<const double>(row, static_cast<size_t>(n)));
}

// Forward a list of prepared clips through the class head in batches;
// returns the [count, C] probability matrix.
std::vector<double> forward_probs(const VideoNet3D& model, const Dataset& dataset,
                                  const std::vector<Tensor>& clips) {
    const VideoNetConfig& cfg = model.config();
    const int64_t C = cfg.num_classes;
    const int64_t clip_elems = 3 * cfg.clip_frames * cfg.clip_h * cfg.clip_w;
    std::vector<double> probs(clips.size() * static_cast<size_t>(C));
    for (size_t base = 0; base < clips.size(); base += kEvalBatch) {
        const int64_t n =
            std::min<int64_t>(kEvalBatch, static_cast<int64_t>(clips.size() - base));
        Tensor batch({n, 3, cfg.clip_frames, cfg.clip_h, cfg.clip_w});
        for (int64_t i = 0; i < n; ++i) {
            std::memcpy(batch.data() + i * clip_elems, clips[base + i].data(),
                        static_cast<size_t>(clip_elems) * sizeof(double));
        }
        normalize_batch_inplace(batch, dataset.manifest);
        Tensor p = model.forward(batch).p;
        std::memcpy(probs.data() + base * static_cast<size_t>(C), p.data(),
                    static_cast<size_t>(n * C) * sizeof(double));
    }
    return probs;
}

}  // namespace

double clip_top1(const VideoNet3D& model, const Dataset& dataset,
                 std::span<const int64_t> video_ids, std::vector<double>* per_class) {
    const VideoNetConfig& cfg = model.config();
    std::vector<Tensor> clips;
    clips.reserve(video_ids.size());
    for (int64_t id : video_ids) {
        clips.push_back(center_clip(dataset.sample(id).video, cfg.clip_frames,
                                    cfg.clip_h, cfg.clip_w));
    }
    const std::vector<double> probs = forward_probs(model, dataset, clips);
    return top1_from_probs(dataset, video_ids, probs, cfg.num_classes, per_class);
}

double video_top1(const VideoNet3D& model, const Dataset& dataset,
                  std::span<const int64_t> video_ids, int64_t clip_frames,
                  std::vector<double>* per_class) {
    const VideoNetConfig& cfg = model.config();
    const int64_t frames = dataset.spec.frames_per_video;
    const int64_t clips_per_video = frames / clip_frames;
    if (clips_per_video < 1) {
        throw std::invalid_argument("video_top1: videos are shorter than one clip");
    }
    std::vector<Tensor> clips;
    clips.reserve(video_ids.size() * static_cast<size_t>(clips_per_video));
    for (int64_t id : video_ids) {
        const Tensor& video = dataset.sample(id).video;
        const int64_t y0 = (dataset.spec.gen_h - cfg.clip_h) / 2;
        const int64_t x0 = (dataset.spec.gen_w - cfg.clip_w) / 2;
        for (int64_t k = 0; k < clips_per_video; ++k) {
            // consecutive non-overlapping temporal windows, center crop
            Tensor clip({3, clip_frames, cfg.clip_h, cfg.clip_w});
            const double* src = video.data();
            double* dst = clip.data();
            for (int64_t c = 0; c < 3; ++c) {
                for (int64_t t = 0; t < clip_frames; ++t) {
                    for (int64_t y = 0; y < cfg.clip_h; ++y) {
                        std::memcpy(
                            dst + ((c * clip_frames + t) * cfg.clip_h + y) * cfg.clip_w,
                            src + ((c * frames + k * clip_frames + t) * dataset.spec.gen_h +
                                   y0 + y) * dataset.spec.gen_w + x0,
                            static_cast<size_t>(cfg.clip_w) * sizeof(double));
                    }
                }
            }
            clips.push_back(std::move(clip));
        }
    }
    const std::vector<double> probs = forward_probs(model, dataset, clips);
    const int64_t C = cfg.num_classes;
    // collapse each video's clip rows into its mean row, then count
    std::vector<double> mean_rows(video_ids.size() * static_cast<size_t>(C), 0.0);
    for (size_t i = 0; i < video_ids.size(); ++i) {
        double* mean = mean_rows.data() + i * static_cast<size_t>(C);
        for (int64_t k = 0; k < clips_per_video; ++k) {
            const double* row =
                probs.data() +
                (i * static_cast<size_t>(clips_per_video) + static_cast<size_t>(k)) *
                    static_cast<size_t>(C);
            for (int64_t c = 0; c < C; ++c) mean[c] += row[c];
        }
        for (int64_t c = 0; c < C; ++c) mean[c] /= static_cast<double>(clips_per_video);
    }
    return top1_from_probs(dataset, video_ids, mean_rows, C, per_class);
}

std::pair<int64_t, int64_t> confident_stats(const VideoNet3D& model,
                                            const Dataset& dataset,
                                            std::span<const int64_t> video_ids,
                                            double threshold) {
    const VideoNetConfig& cfg = model.config();
    std::vector<Tensor> clips;
    clips.reserve(video_ids.size());
    for (int64_t id : video_ids) {
        clips.push_back(center_clip(dataset.sample(id).video, cfg.clip_frames,
                                    cfg.clip_h, cfg.clip_w));
    }
    const std::vector<double> probs = forward_probs(model, dataset, clips);
    const int64_t C = cfg.num_classes;
    int64_t count = 0, correct = 0;
    for (size_t i = 0; i < video_ids.size(); ++i) {
        const double* row = probs.data() + i * static_cast<size_t>(C);
        const int64_t guess = argmax_lowest(row, C);
        if (row[guess] > threshold) {
            ++count;
            if (guess == dataset.sample(video_ids[i]).class_label) ++correct;
        }
    }
    return {count, correct};
}

std::vector<std::pair<int64_t, double>> per_class_delta(
    const std::vector<double>& per_class_a, const std::vector<double>& per_class_b) {
    if (per_class_a.size() != per_class_b.size()) {
        throw std::invalid_argument("per_class_delta: class count mismatch");
    }
    std::vector<std::pair<int64_t, double>> deltas;
    deltas.reserve(per_class_a.size());
    for (size_t c = 0; c < per_class_a.size(); ++c) {
        deltas.emplace_back(static_cast<int64_t>(c), per_class_b[c] - per_class_a[c]);
    }
    std::stable_sort(deltas.begin(), deltas.end(),
                     [](const auto& x, const auto& y) { return x.second > y.second; });
    return deltas;
}

PoolStats pool_eval(const VideoNet3D& model, const Dataset& dataset,
                    std::span<const int64_t> video_ids, double threshold) {
    const VideoNetConfig& cfg = model.config();
    std::vector<Tensor> clips;
    clips.reserve(video_ids.size());
    for (int64_t id : video_ids) {
        clips.push_back(center_clip(dataset.sample(id).video, cfg.clip_frames,
                                    cfg.clip_h, cfg.clip_w));
    }
    const std::vector<double> probs = forward_probs(model, dataset, clips);
    const int64_t C = cfg.num_classes;
    PoolStats stats;
    int64_t correct = 0;
    for (size_t i = 0; i < video_ids.size(); ++i) {
        const double* row = probs.data() + i * static_cast<size_t>(C);
        const int64_t guess = argmax_lowest(row, C);
        const bool hit = guess == dataset.sample(video_ids[i]).class_label;
        correct += hit ? 1 : 0;
        if (row[guess] > threshold) {
            ++stats.confident_count;
            if (hit) ++stats.confident_correct;
        }
    }
    if (!video_ids.empty()) {
        stats.clip_top1 = 100.0 * static_cast<double>(correct) /
                          static_cast<double>(video_ids.size());
    }
    return stats;
}

MetricsRecord evaluate(const VideoNet3D& model, const Dataset& dataset,
                       const DatasetManifest& manifest, double confidence_threshold) {
    MetricsRecord rec;
    rec.clip_top1 = clip_top1(model, dataset, manifest.test_ids, &rec.per_class_top1);
    rec.video_top1 = video_top1(model, dataset, manifest.test_ids,
                                model.config().clip_frames, nullptr);
    const PoolStats stats =
        pool_eval(model, dataset, manifest.unlabeled_ids, confidence_threshold);
    rec.confident_count = stats.confident_count;
    rec.confident_correct = stats.confident_correct;
    return rec;
}

}  // namespace vssl
