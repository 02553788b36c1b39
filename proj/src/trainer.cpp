#include "vssl/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vssl {

const char* method_name(Method method) {
    switch (method) {
        case Method::supervised: return "SUPERVISED";
        case Method::pl: return "PL";
        case Method::sd: return "SD";
        case Method::videossl: return "VIDEOSSL";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    if (name == "SUPERVISED") return Method::supervised;
    if (name == "PL") return Method::pl;
    if (name == "SD") return Method::sd;
    if (name == "VIDEOSSL") return Method::videossl;
    throw std::invalid_argument("unknown method: " + name +
                                " (expected SUPERVISED, PL, SD or VIDEOSSL)");
}

TrainState make_train_state(const TrainConfig& config, const Dataset& dataset) {
    if (config.batch_size < 2 || config.batch_size % 2 != 0) {
        throw std::invalid_argument("batch_size must be even and >= 2");
    }
    if (config.total_iterations < 1) {
        throw std::invalid_argument("total_iterations must be >= 1");
    }
    VideoNetConfig model_cfg = config.model;
    model_cfg.num_classes = dataset.num_classes();
    model_cfg.embed_dim = dataset.spec.num_shapes;
    TrainState state{
        VideoNet3D(model_cfg, config.seed_init),
        split_labels(dataset, config.label_fraction, config.seed_data),
        OptState{},
        0,
        Rng(derive_seed(config.seed_train, 1)),
        Rng(derive_seed(config.seed_train, 2)),
        Rng(derive_seed(config.seed_train, 3)),
        LossBreakdown{},
        {}};
    state.opt = make_opt_state(state.model.params());
    return state;
}

Batch compose_batch(const Dataset& dataset, const DatasetManifest& manifest,
                    const TrainConfig& config, const VideoNetConfig& model_config,
                    Rng& batch_rng, Rng& augment_rng) {
    const int64_t B = config.batch_size;
    const int64_t labeled_count = config.method == Method::supervised ? B : B / 2;
    const int64_t unlabeled_count = B - labeled_count;
    if (manifest.labeled_ids.empty()) {
        throw std::invalid_argument("compose_batch: labeled pool is empty");
    }
    if (unlabeled_count > 0 && manifest.unlabeled_ids.empty()) {
        throw std::invalid_argument("compose_batch: unlabeled pool is empty");
    }

    std::vector<int64_t> ids;
    ids.reserve(static_cast<size_t>(B));
    const int64_t n_lab = static_cast<int64_t>(manifest.labeled_ids.size());
    for (int64_t i = 0; i < labeled_count; ++i) {
        ids.push_back(manifest.labeled_ids[static_cast<size_t>(batch_rng.next_index(n_lab))]);
    }
    const int64_t n_unl = static_cast<int64_t>(manifest.unlabeled_ids.size());
    for (int64_t i = 0; i < unlabeled_count; ++i) {
        ids.push_back(
            manifest.unlabeled_ids[static_cast<size_t>(batch_rng.next_index(n_unl))]);
    }

    const int64_t T = model_config.clip_frames;
    const int64_t H = model_config.clip_h;
    const int64_t W = model_config.clip_w;
    const int64_t clip_elems = 3 * T * H * W;
    Batch batch;
    batch.labeled_count = labeled_count;
    batch.clips = Tensor({B, 3, T, H, W});
    const int64_t C = dataset.num_classes();
    batch.labels_onehot = Tensor({labeled_count, C});
    for (int64_t i = 0; i < B; ++i) {
        const VideoSample& sample = dataset.sample(ids[static_cast<size_t>(i)]);
        Tensor clip = augment_clip(sample.video, T, H, W, augment_rng);
        std::memcpy(batch.clips.data() + i * clip_elems, clip.data(),
                    static_cast<size_t>(clip_elems) * sizeof(double));
        if (i < labeled_count) {
            batch.labels_onehot.data()[i * C + sample.class_label] = 1.0;
        }
    }
    normalize_batch_inplace(batch.clips, dataset.manifest);
    return batch;
}

LossBreakdown train_step(TrainState& state, const Dataset& dataset,
                         const TeacherNet2D* teacher, const TrainConfig& config) {
    Batch batch = compose_batch(dataset, state.manifest, config,
                                state.model.config(), state.batch_rng,
                                state.augment_rng);
    return train_step_with_batch(state, batch, teacher, config);
}

LossBreakdown train_step_with_batch(TrainState& state, const Batch& batch,
                                    const TeacherNet2D* teacher,
                                    const TrainConfig& config) {
    const Method method = config.method;
    if (uses_distillation(method) && config.schedule.lambda_d != 0.0) {
        if (teacher == nullptr) {
            throw std::invalid_argument("method " + std::string(method_name(method)) +
                                        " requires a teacher");
        }
        if (!teacher->frozen()) {
            throw std::invalid_argument("teacher must be frozen before training");
        }
    }

    const int64_t B = config.batch_size;
    const int64_t K = batch.labeled_count;

    const double lambda_u_t =
        lambda_u(state.iteration, config.total_iterations, config.schedule);
    const double lambda_d = config.schedule.lambda_d;

    Graph graph;
    LossBreakdown breakdown;
    {
        RecordScope scope(graph);
        VideoNet3D::Output out = state.model.forward(batch.clips);

        Tensor loss_s = supervised_ce(rows_slice(out.p, 0, K), batch.labels_onehot).value;

        // L_u and L_d are evaluated only when they can contribute, so a
        // method variant behaves step-for-step like its reduced counterpart
        // (PL == VIDEOSSL with lambda_d = 0, SD == VIDEOSSL with lambda_u 0).
        Tensor loss_u = Tensor::scalar(0.0);
        if (uses_pseudo_labels(method) && lambda_u_t != 0.0 && K < B) {
            Tensor p_unlabeled = rows_slice(out.p, K, B);
            Tensor targets = pseudo_assign(p_unlabeled, config.rule);
            loss_u = pseudo_ce(targets, p_unlabeled).value;
        }

        Tensor loss_d = Tensor::scalar(0.0);
        if (uses_distillation(method) && lambda_d != 0.0) {
            // one fresh frame per clip, redrawn every iteration
            const int64_t T = state.model.config().clip_frames;
            const int64_t H = state.model.config().clip_h;
            const int64_t W = state.model.config().clip_w;
            Tensor frames({B, 3, H, W});
            for (int64_t i = 0; i < B; ++i) {
                const int64_t t = state.frame_rng.next_index(T);
                for (int64_t c = 0; c < 3; ++c) {
                    std::memcpy(frames.data() + (i * 3 + c) * H * W,
                                batch.clips.data() + ((i * 3 + c) * T + t) * H * W,
                                static_cast<size_t>(H * W) * sizeof(double));
                }
            }
            Tensor h = teacher->forward(frames);
            loss_d = distill_soft_ce(h, out.q);
        }

        breakdown = combined_loss(loss_s.value(), loss_u.value(), loss_d.value(),
                                  config.schedule, state.iteration,
                                  config.total_iterations);
        Tensor total =
            add(add(loss_s, scale(loss_u, lambda_u_t)), scale(loss_d, lambda_d));

        if (!std::isfinite(total.value())) {
            throw NumericAbort("non-finite loss at iteration " +
                                   std::to_string(state.iteration) + " (L_s=" +
                                   std::to_string(breakdown.loss_s) + " L_u=" +
                                   std::to_string(breakdown.loss_u) + " L_d=" +
                                   std::to_string(breakdown.loss_d) + ")",
                               breakdown);
        }
        graph.backward(total);
    }

    sgd_step(state.model.params(), state.opt, lr_at(state.iteration, config.sgd),
             config.sgd);
    state.model.params().zero_grad();
    ++state.iteration;
    state.last_step = breakdown;
    return breakdown;
}

namespace {

MetricsRow make_record(TrainState& state, const Dataset& dataset,
                       const TrainConfig& config) {
    MetricsRow row;
    row.iteration = state.iteration;
    row.loss_s = state.last_step.loss_s;
    row.loss_u = state.last_step.loss_u;
    row.loss_d = state.last_step.loss_d;
    row.lambda_u = state.iteration == 0
                       ? lambda_u(0, config.total_iterations, config.schedule)
                       : state.last_step.lambda_u_t;
    row.loss_total = state.last_step.total;
    std::vector<double> per_class;
    row.clip_top1_test =
        clip_top1(state.model, dataset, state.manifest.test_ids, &per_class);
    row.video_top1_test = video_top1(state.model, dataset, state.manifest.test_ids,
                                     state.model.config().clip_frames, nullptr);
    const PoolStats pool = pool_eval(state.model, dataset, state.manifest.unlabeled_ids,
                                     config.rule.confidence_threshold);
    row.clip_top1_unlabeled = pool.clip_top1;
    row.confident_count = pool.confident_count;
    row.confident_correct = pool.confident_correct;
    return row;
}

}  // namespace

void train(TrainState& state, const Dataset& dataset, const TeacherNet2D* teacher,
           const TrainConfig& config) {
    const uint64_t teacher_checksum_before = teacher ? teacher->checksum() : 0;
    auto record = [&] {
        state.history.push_back(make_record(state, dataset, config));
        const MetricsRow& r = state.history.back();
        std::printf("  [%s %lld/%lld] loss %.4f  clip %.1f  video %.1f  unlabeled %.1f\n",
                    method_name(config.method), static_cast<long long>(r.iteration),
                    static_cast<long long>(config.total_iterations), r.loss_total,
                    r.clip_top1_test, r.video_top1_test, r.clip_top1_unlabeled);
        std::fflush(stdout);
    };
    for (int64_t it = state.iteration; it < config.total_iterations; ++it) {
        if (it % config.eval_every == 0) record();
        train_step(state, dataset, teacher, config);
        if (config.checkpoint_at > 0 && state.iteration == config.checkpoint_at &&
            !config.mid_checkpoint_path.empty()) {
            save_train_checkpoint(config.mid_checkpoint_path, state);
        }
    }
    if (config.total_iterations % config.eval_every == 0) record();
    if (teacher && teacher->checksum() != teacher_checksum_before) {
        throw std::logic_error("teacher parameters changed during training");
    }
    if (!config.checkpoint_path.empty()) {
        save_train_checkpoint(config.checkpoint_path, state);
    }
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    out << "iteration,loss_s,loss_u,loss_d,lambda_u,loss_total,clip_top1_test,"
           "video_top1_test,clip_top1_unlabeled,confident_count,confident_correct\n";
    char buf[512];
    for (const MetricsRow& r : history) {
        std::snprintf(buf, sizeof(buf),
                      "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%lld,%lld\n",
                      static_cast<long long>(r.iteration), r.loss_s, r.loss_u, r.loss_d,
                      r.lambda_u, r.loss_total, r.clip_top1_test, r.video_top1_test,
                      r.clip_top1_unlabeled, static_cast<long long>(r.confident_count),
                      static_cast<long long>(r.confident_correct));
        out << buf;
    }
}

namespace {

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) {
        throw IoError(IoError::Kind::truncated,
                      std::string("truncated checkpoint while reading ") + what);
    }
    return value;
}

void write_rng(std::ostream& out, const Rng& rng) {
    for (uint64_t word : rng.state()) write_pod<uint64_t>(out, word);
}

Rng read_rng(std::istream& in) {
    Rng::State state;
    for (uint64_t& word : state) word = read_pod<uint64_t>(in, "rng state");
    Rng rng;
    rng.set_state(state);
    return rng;
}

}  // namespace

void save_train_checkpoint(const std::string& path, const TrainState& state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    write_params(out, state.model.params());
    write_pod<uint32_t>(out, static_cast<uint32_t>(state.opt.velocity.size()));
    for (const auto& v : state.opt.velocity) {
        write_pod<uint64_t>(out, v.size());
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    write_pod<int64_t>(out, state.opt.step_count);
    write_rng(out, state.batch_rng);
    write_rng(out, state.augment_rng);
    write_rng(out, state.frame_rng);
    write_pod<int64_t>(out, state.iteration);
    write_pod<double>(out, state.last_step.loss_s);
    write_pod<double>(out, state.last_step.loss_u);
    write_pod<double>(out, state.last_step.loss_d);
    write_pod<double>(out, state.last_step.lambda_u_t);
    write_pod<double>(out, state.last_step.total);
    write_pod<int64_t>(out, state.last_step.iteration);
    write_pod<uint64_t>(out, state.history.size());
    for (const MetricsRow& r : state.history) {
        write_pod<int64_t>(out, r.iteration);
        write_pod<double>(out, r.loss_s);
        write_pod<double>(out, r.loss_u);
        write_pod<double>(out, r.loss_d);
        write_pod<double>(out, r.lambda_u);
        write_pod<double>(out, r.loss_total);
        write_pod<double>(out, r.clip_top1_test);
        write_pod<double>(out, r.video_top1_test);
        write_pod<double>(out, r.clip_top1_unlabeled);
        write_pod<int64_t>(out, r.confident_count);
        write_pod<int64_t>(out, r.confident_correct);
    }
}

TrainState load_train_checkpoint(const std::string& path, const TrainConfig& config,
                                 const Dataset& dataset) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    TrainState state = make_train_state(config, dataset);
    read_params(in, state.model.params());
    const auto vel_count = read_pod<uint32_t>(in, "velocity count");
    if (vel_count != state.opt.velocity.size()) {
        throw IoError(IoError::Kind::truncated, "optimizer state size mismatch");
    }
    for (auto& v : state.opt.velocity) {
        const auto n = read_pod<uint64_t>(in, "velocity length");
        if (n != v.size()) {
            throw IoError(IoError::Kind::truncated, "velocity buffer size mismatch");
        }
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw IoError(IoError::Kind::truncated, "truncated velocity data");
    }
    state.opt.step_count = read_pod<int64_t>(in, "step count");
    state.batch_rng = read_rng(in);
    state.augment_rng = read_rng(in);
    state.frame_rng = read_rng(in);
    state.iteration = read_pod<int64_t>(in, "iteration");
    state.last_step.loss_s = read_pod<double>(in, "loss_s");
    state.last_step.loss_u = read_pod<double>(in, "loss_u");
    state.last_step.loss_d = read_pod<double>(in, "loss_d");
    state.last_step.lambda_u_t = read_pod<double>(in, "lambda_u");
    state.last_step.total = read_pod<double>(in, "loss_total");
    state.last_step.iteration = read_pod<int64_t>(in, "breakdown iteration");
    const auto rows = read_pod<uint64_t>(in, "history length");
    state.history.resize(rows);
    for (auto& r : state.history) {
        r.iteration = read_pod<int64_t>(in, "row iteration");
        r.loss_s = read_pod<double>(in, "row loss_s");
        r.loss_u = read_pod<double>(in, "row loss_u");
        r.loss_d = read_pod<double>(in, "row loss_d");
        r.lambda_u = read_pod<double>(in, "row lambda_u");
        r.loss_total = read_pod<double>(in, "row loss_total");
        r.clip_top1_test = read_pod<double>(in, "row clip_top1_test");
        r.video_top1_test = read_pod<double>(in, "row video_top1_test");
        r.clip_top1_unlabeled = read_pod<double>(in, "row clip_top1_unlabeled");
        r.confident_count = read_pod<int64_t>(in, "row confident_count");
        r.confident_correct = read_pod<int64_t>(in, "row confident_correct");
    }
    return state;
}

TeacherNet2D pretrain_teacher(const Dataset& dataset, int64_t epochs, uint64_t seed,
                              double* heldout_accuracy) {
    TeacherConfig cfg;
    cfg.num_outputs = dataset.spec.num_shapes;
    TeacherNet2D teacher(cfg, derive_seed(seed, 7));

    // shape labels only; the video class label is never consulted here
    std::vector<int64_t> pool = dataset.manifest.labeled_ids;
    pool.insert(pool.end(), dataset.manifest.unlabeled_ids.begin(),
                dataset.manifest.unlabeled_ids.end());
    std::sort(pool.begin(), pool.end());

    // same crop size the student pipeline uses, capped by the frame extent
    const int64_t crop_h = std::min<int64_t>(32, dataset.spec.gen_h);
    const int64_t crop_w = std::min<int64_t>(32, dataset.spec.gen_w);
    const int64_t batch_size = 64;
    const int64_t S = dataset.spec.num_shapes;
    SgdConfig sgd_cfg;
    sgd_cfg.lr0 = 0.05;
    sgd_cfg.momentum = 0.9;
    sgd_cfg.weight_decay = 0.0005;
    OptState opt = make_opt_state(teacher.params());
    // cool the rate down over the last third of the run
    const int64_t steps_per_epoch =
        (static_cast<int64_t>(pool.size()) + batch_size - 1) / batch_size;
    sgd_cfg.decay_every = std::max<int64_t>(1, 2 * epochs * steps_per_epoch / 3);
    int64_t step_index = 0;

    Rng rng(derive_seed(seed, 11));
    std::vector<int64_t> order = pool;
    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
        for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i) {
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(rng.next_index(i + 1))]);
        }
        for (size_t base = 0; base < order.size(); base += batch_size) {
            const int64_t n =
                std::min<int64_t>(batch_size, static_cast<int64_t>(order.size() - base));
            Tensor frames({n, 3, crop_h, crop_w});
            Tensor labels({n, S});
            for (int64_t i = 0; i < n; ++i) {
                const VideoSample& sample = dataset.sample(order[base + i]);
                // random frame + random crop in one window draw
                Tensor frame = augment_clip(sample.video, 1, crop_h, crop_w, rng);
                std::memcpy(frames.data() + i * 3 * crop_h * crop_w, frame.data(),
                            static_cast<size_t>(3 * crop_h * crop_w) * sizeof(double));
                labels.data()[i * S + sample.shape_label] = 1.0;
            }
            normalize_batch_inplace(frames, dataset.manifest);
            Graph graph;
            {
                RecordScope scope(graph);
                Tensor probs = teacher.forward(frames);
                Tensor loss = supervised_ce(probs, labels).value;
                if (!std::isfinite(loss.value())) {
                    throw NumericAbort("non-finite teacher loss", LossBreakdown{});
                }
                graph.backward(loss);
            }
            sgd_step(teacher.params(), opt, lr_at(step_index++, sgd_cfg), sgd_cfg);
            teacher.params().zero_grad();
        }
    }
    teacher.freeze();

    if (heldout_accuracy) {
        int64_t correct = 0;
        const auto& test_ids = dataset.manifest.test_ids;
        for (size_t base = 0; base < test_ids.size(); base += batch_size) {
            const int64_t n = std::min<int64_t>(
                batch_size, static_cast<int64_t>(test_ids.size() - base));
            Tensor frames({n, 3, crop_h, crop_w});
            for (int64_t i = 0; i < n; ++i) {
                Tensor frame =
                    center_clip(dataset.sample(test_ids[base + i]).video, 1, crop_h, crop_w);
                std::memcpy(frames.data() + i * 3 * crop_h * crop_w, frame.data(),
                            static_cast<size_t>(3 * crop_h * crop_w) * sizeof(double));
            }
            normalize_batch_inplace(frames, dataset.manifest);
            Tensor probs = teacher.forward(frames);
            for (int64_t i = 0; i < n; ++i) {
                const double* row = probs.data() + i * S;
                int64_t best = 0;
                for (int64_t c = 1; c < S; ++c) {
                    if (row[c] > row[best]) best = c;
                }
                if (best == dataset.sample(test_ids[base + i]).shape_label) ++correct;
            }
        }
        *heldout_accuracy = test_ids.empty()
                                ? 0.0
                                : 100.0 * static_cast<double>(correct) /
                                      static_cast<double>(test_ids.size());
    }
    return teacher;
}

}  // namespace vssl
