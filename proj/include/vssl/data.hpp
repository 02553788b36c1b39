#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vssl/rng.hpp"
#include "vssl/tensor.hpp"

namespace vssl {

// Video class = (shape, motion). Shapes are the appearance ("noun") signal a
// frame classifier can read; motions are temporal-only, so classes that share
// a shape cannot be separated from a single frame.
struct SynthVideoSpec {
    int64_t num_shapes = 4;   // square, circle, triangle, cross
    int64_t num_motions = 2;  // horizontal drift, circular orbit (then
                              // vertical oscillation, shrink-grow)
    int64_t frames_per_video = 24;
    int64_t gen_h = 40;
    int64_t gen_w = 40;
    double noise_std = 0.05;
    uint64_t seed = 1;

    int64_t num_classes() const { return num_shapes * num_motions; }
};

struct VideoSample {
    Tensor video;  // [3, frames, gen_h, gen_w], values in [0, 1 + 4*noise_std]
    int64_t id = 0;
    int64_t class_label = 0;  // shape * num_motions + motion
    int64_t shape_label = 0;
};

struct DatasetManifest {
    std::vector<int64_t> class_counts;  // training pool, per class
    double label_fraction = 0.0;
    std::vector<int64_t> labeled_ids;    // X
    std::vector<int64_t> unlabeled_ids;  // Z
    std::vector<int64_t> test_ids;
    std::array<double, 3> channel_mean{};
    std::array<double, 3> channel_std{};
    uint64_t seed = 0;        // generation seed
    uint64_t split_seed = 0;  // last split_labels seed
};

struct Dataset {
    SynthVideoSpec spec;
    std::vector<VideoSample> samples;  // indexed by id
    DatasetManifest manifest;

    int64_t num_classes() const { return spec.num_classes(); }
    const VideoSample& sample(int64_t id) const {
        return samples[static_cast<size_t>(id)];
    }
};

std::string class_name(const SynthVideoSpec& spec, int64_t class_label);

// Renders n_per_class training and n_test_per_class test videos per class,
// deterministically from spec.seed (each video from its own derived stream).
// Before the first split_labels call every training id sits in the unlabeled
// pool. Channel statistics are computed over the training pool.
Dataset generate_dataset(const SynthVideoSpec& spec, int64_t n_per_class,
                         int64_t n_test_per_class);

// Stratified labeled/unlabeled split of the training pool: each class
// contributes round(P * n_class), adjusted by +-1 on seeded-randomly chosen
// classes to hit round(P * pool) exactly. Returns the updated manifest; the
// dataset itself is left untouched so several runs can share it read-only.
DatasetManifest split_labels(const Dataset& dataset, double label_fraction,
                             uint64_t seed);

// Random temporal window and spatial crop; draw order is temporal start,
// then crop row, then crop column.
Tensor augment_clip(const Tensor& video, int64_t clip_frames, int64_t crop_h,
                    int64_t crop_w, Rng& rng);

// Deterministic spatio-temporally centered window.
Tensor center_clip(const Tensor& video, int64_t clip_frames, int64_t crop_h,
                   int64_t crop_w);

// Uniformly random frame of a [3,T,H,W] clip -> [3,H,W].
Tensor sample_frame(const Tensor& clip, Rng& rng);

// (x - mean) / std per channel, channel axis 0: accepts [3,...] clips/frames.
void normalize_clip_inplace(Tensor& clip, const DatasetManifest& manifest);
// Channel axis 1: accepts [N,3,...] batches.
void normalize_batch_inplace(Tensor& batch, const DatasetManifest& manifest);

// Dataset file: magic "VSSLD", u32 version=1, spec fields, manifest, then the
// samples with their video tensors in VSSLT format.
void write_dataset(const std::string& path, const Dataset& dataset);
Dataset read_dataset(const std::string& path);

}  // namespace vssl
