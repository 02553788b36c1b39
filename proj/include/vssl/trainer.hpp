#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vssl/data.hpp"
#include "vssl/eval.hpp"
#include "vssl/losses.hpp"
#include "vssl/models.hpp"
#include "vssl/optim.hpp"
#include "vssl/rng.hpp"

namespace vssl {

enum class Method { supervised, pl, sd, videossl };

const char* method_name(Method method);
Method method_from_name(const std::string& name);

inline bool uses_pseudo_labels(Method m) {
    return m == Method::pl || m == Method::videossl;
}
inline bool uses_distillation(Method m) {
    return m == Method::sd || m == Method::videossl;
}

struct TrainConfig {
    Method method = Method::videossl;
    int64_t total_iterations = 30000;
    int64_t batch_size = 32;  // must be even: half labeled, half unlabeled
    double label_fraction = 0.1;
    uint64_t seed_data = 1;
    uint64_t seed_init = 2;
    uint64_t seed_train = 3;
    PseudoLabelRule rule;
    LossSchedule schedule;
    SgdConfig sgd;
    int64_t eval_every = 1000;
    VideoNetConfig model;  // num_classes / embed_dim are derived from the data
    std::string checkpoint_path;      // final checkpoint, empty = skip
    int64_t checkpoint_at = 0;        // mid-run checkpoint iteration, 0 = never
    std::string mid_checkpoint_path;  // where the mid-run checkpoint goes
};

// One metrics CSV row. Loss fields describe the step that reached
// `iteration` (zeros at iteration 0).
struct MetricsRow {
    int64_t iteration = 0;
    double loss_s = 0.0, loss_u = 0.0, loss_d = 0.0;
    double lambda_u = 0.0, loss_total = 0.0;
    double clip_top1_test = 0.0, video_top1_test = 0.0, clip_top1_unlabeled = 0.0;
    int64_t confident_count = 0, confident_correct = 0;
};

// Raised when a step produces a non-finite loss; carries the breakdown.
class NumericAbort : public std::runtime_error {
public:
    NumericAbort(const std::string& message, LossBreakdown breakdown)
        : std::runtime_error(message), breakdown_(breakdown) {}
    const LossBreakdown& breakdown() const { return breakdown_; }

private:
    LossBreakdown breakdown_;
};

struct TrainState {
    VideoNet3D model;
    DatasetManifest manifest;  // the X/Z split this run trains against
    OptState opt;
    int64_t iteration = 0;
    Rng batch_rng, augment_rng, frame_rng;
    LossBreakdown last_step;
    std::vector<MetricsRow> history;
};

// Builds the model, optimizer state and the three independent rng streams
// from the config seeds, and splits the labeled pool with seed_data.
TrainState make_train_state(const TrainConfig& config, const Dataset& dataset);

struct Batch {
    Tensor clips;          // [B, 3, T, H, W], normalized
    Tensor labels_onehot;  // [labeled_count, C]
    int64_t labeled_count = 0;
};

// Half/half uniform-with-replacement batch (all labeled for SUPERVISED);
// every clip passes through augment_clip. Draw order: labeled video ids,
// unlabeled video ids, then per-clip augmentation in batch order.
Batch compose_batch(const Dataset& dataset, const DatasetManifest& manifest,
                    const TrainConfig& config, const VideoNetConfig& model_config,
                    Rng& batch_rng, Rng& augment_rng);

LossBreakdown train_step(TrainState& state, const Dataset& dataset,
                         const TeacherNet2D* teacher, const TrainConfig& config);

// train_step on an already composed batch (no pool draws); useful for
// repeated steps on frozen data.
LossBreakdown train_step_with_batch(TrainState& state, const Batch& batch,
                                    const TeacherNet2D* teacher,
                                    const TrainConfig& config);

// Runs to total_iterations, recording a metrics row at iteration 0 and every
// eval_every steps. Fully deterministic given the config seeds.
void train(TrainState& state, const Dataset& dataset, const TeacherNet2D* teacher,
           const TrainConfig& config);

// Metrics history file with the canonical header.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& history);

// Train checkpoint: model params (VSSLC block), optimizer velocities, the
// three rng states, iteration, last step breakdown and metrics history.
void save_train_checkpoint(const std::string& path, const TrainState& state);
TrainState load_train_checkpoint(const std::string& path, const TrainConfig& config,
                                 const Dataset& dataset);

// Supervised pretraining of the frame-level appearance teacher on shape
// labels only (video class labels are never read), then frozen. Reports
// held-out accuracy on the test split's center frames.
TeacherNet2D pretrain_teacher(const Dataset& dataset, int64_t epochs, uint64_t seed,
                              double* heldout_accuracy = nullptr);

}  // namespace vssl
