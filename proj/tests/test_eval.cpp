#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vssl/eval.hpp"
#include "vssl/rng.hpp"

using namespace vssl;

namespace {

// Small real dataset + model used by the model-driven metric tests.
struct Fixture {
    Dataset dataset;
    VideoNet3D model;

    Fixture()
        : dataset(make_dataset()), model(make_model_config(), 77) {}

    static Dataset make_dataset() {
        SynthVideoSpec spec;
        spec.frames_per_video = 16;
        spec.gen_h = 24;
        spec.gen_w = 24;
        spec.seed = 3;
        Dataset ds = generate_dataset(spec, 3, 2);
        ds.manifest = split_labels(ds, 0.5, 3);
        return ds;
    }

    static VideoNetConfig make_model_config() {
        VideoNetConfig cfg;
        cfg.clip_frames = 8;
        cfg.clip_h = 16;
        cfg.clip_w = 16;
        cfg.block_channels = {4, 5, 6};
        cfg.num_classes = 8;
        cfg.embed_dim = 4;
        return cfg;
    }
};

}  // namespace

TEST_CASE("perfect and uniform probability tables") {
    const Fixture fx;
    const auto& ids = fx.dataset.manifest.test_ids;
    const int64_t C = 8;

    // a model hard-coded to the true one-hot scores 100%
    std::vector<double> perfect(ids.size() * C, 0.0);
    for (size_t i = 0; i < ids.size(); ++i) {
        perfect[i * C + static_cast<size_t>(fx.dataset.sample(ids[i]).class_label)] = 1.0;
    }
    CHECK(top1_from_probs(fx.dataset, ids, perfect, C) == 100.0);

    // uniform output on a balanced 8-class set with lowest-index tie-break:
    // only class-0 videos count as correct
    std::vector<double> uniform(ids.size() * C, 1.0 / C);
    CHECK(top1_from_probs(fx.dataset, ids, uniform, C) == doctest::Approx(12.5));
}

TEST_CASE("clip_top1 matches an independent recount") {
    const Fixture fx;
    const auto& ids = fx.dataset.manifest.test_ids;
    std::vector<double> per_class;
    const double fast = clip_top1(fx.model, fx.dataset, ids, &per_class);

    // independent recount: same protocol, separate code path
    int64_t correct = 0;
    for (int64_t id : ids) {
        Tensor clip = center_clip(fx.dataset.sample(id).video, 8, 16, 16);
        normalize_clip_inplace(clip, fx.dataset.manifest);
        Tensor batch({1, 3, 8, 16, 16});
        std::copy(clip.values().begin(), clip.values().end(), batch.data());
        const Tensor p = fx.model.forward(batch).p;
        int64_t best = 0;
        for (int64_t c = 1; c < 8; ++c) {
            if (p.data()[c] > p.data()[best]) best = c;
        }
        if (best == fx.dataset.sample(id).class_label) ++correct;
    }
    const double slow = 100.0 * static_cast<double>(correct) /
                        static_cast<double>(ids.size());
    CHECK(fast == doctest::Approx(slow).epsilon(1e-12));

    // invariant under permutation of the id list
    std::vector<int64_t> shuffled(ids.begin(), ids.end());
    Rng rng(5);
    for (int64_t i = static_cast<int64_t>(shuffled.size()) - 1; i > 0; --i) {
        std::swap(shuffled[static_cast<size_t>(i)],
                  shuffled[static_cast<size_t>(rng.next_index(i + 1))]);
    }
    CHECK(clip_top1(fx.model, fx.dataset, shuffled, nullptr) ==
          doctest::Approx(fast).epsilon(1e-12));
}

TEST_CASE("video_decision averages the clip probability vectors") {
    // [0.6,0.4], [0.1,0.9], [0.2,0.8] -> mean [0.3,0.7] -> class 1
    const std::vector<double> probs{0.6, 0.4, 0.1, 0.9, 0.2, 0.8};
    CHECK(video_decision(probs, 2) == 1);
    // identical clip distributions: video decision equals the clip decision
    const std::vector<double> same{0.7, 0.3, 0.7, 0.3, 0.7, 0.3};
    CHECK(video_decision(same, 2) == 0);
    CHECK(argmax_lowest_index(std::vector<double>{0.5, 0.5}) == 0);
}

TEST_CASE("video_top1: clip counting and the full-length equivalence") {
    const Fixture fx;
    const auto& ids = fx.dataset.manifest.test_ids;
    // 16 frames, clips of 8 -> two clips; trailing frames < one clip dropped
    CHECK_NOTHROW(video_top1(fx.model, fx.dataset, ids, 8, nullptr));
    CHECK_THROWS_AS(video_top1(fx.model, fx.dataset, ids, 17, nullptr),
                    std::invalid_argument);

    // clip_frames == video length: one clip, equal to clip_top1 on the
    // full-length center clip
    VideoNetConfig full_cfg = Fixture::make_model_config();
    full_cfg.clip_frames = 16;
    VideoNet3D full_model(full_cfg, 77);
    const double via_video = video_top1(full_model, fx.dataset, ids, 16, nullptr);
    const double via_clip = clip_top1(full_model, fx.dataset, ids, nullptr);
    CHECK(via_video == doctest::Approx(via_clip).epsilon(1e-12));
}

TEST_CASE("per_class_delta: zeros, +100, weighted-sum identity") {
    const std::vector<double> a{50.0, 25.0, 0.0, 75.0};
    auto zero = per_class_delta(a, a);
    for (const auto& [cls, delta] : zero) CHECK(delta == 0.0);

    auto jump = per_class_delta({0.0}, {100.0});
    CHECK(jump[0].second == 100.0);

    Rng rng(9);
    std::vector<double> pa(8), pb(8);
    for (int i = 0; i < 8; ++i) {
        pa[static_cast<size_t>(i)] = rng.next_uniform(0, 100);
        pb[static_cast<size_t>(i)] = rng.next_uniform(0, 100);
    }
    auto deltas = per_class_delta(pa, pb);
    // sorted descending
    for (size_t i = 1; i < deltas.size(); ++i) {
        CHECK(deltas[i - 1].second >= deltas[i].second);
    }
    // balanced classes: mean of per-class deltas equals the overall difference
    const double overall_a = std::accumulate(pa.begin(), pa.end(), 0.0) / 8.0;
    const double overall_b = std::accumulate(pb.begin(), pb.end(), 0.0) / 8.0;
    double weighted = 0.0;
    for (const auto& [cls, delta] : deltas) weighted += delta / 8.0;
    CHECK(std::abs(weighted - (overall_b - overall_a)) < 1e-9);
}

TEST_CASE("confident_stats: impossible threshold, perfect table, recount") {
    const Fixture fx;
    const auto& ids = fx.dataset.manifest.unlabeled_ids;
    const auto [none_count, none_correct] =
        confident_stats(fx.model, fx.dataset, ids, 1.5);
    CHECK(none_count == 0);
    CHECK(none_correct == 0);

    // recount against pool_eval's combined pass
    const auto [count, correct] = confident_stats(fx.model, fx.dataset, ids, 0.4);
    const PoolStats stats = pool_eval(fx.model, fx.dataset, ids, 0.4);
    CHECK(stats.confident_count == count);
    CHECK(stats.confident_correct == correct);
    CHECK(correct <= count);

    const double top1 = clip_top1(fx.model, fx.dataset, ids, nullptr);
    CHECK(stats.clip_top1 == doctest::Approx(top1).epsilon(1e-12));
}
