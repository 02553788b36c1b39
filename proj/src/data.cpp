#include "vssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "vssl/parallel.hpp"

namespace vssl {

namespace {

constexpr const char* kShapeNames[] = {"square", "circle", "triangle", "cross"};
constexpr const char* kMotionNames[] = {"drift", "orbit", "oscillate", "pulse"};

// Signed distance to the shape boundary in pixel units, negative inside.
double shape_sdf(int64_t shape, double dx, double dy, double r) {
    switch (shape % 4) {
        case 0: {  // square
            return std::max(std::abs(dx), std::abs(dy)) - r * 0.82;
        }
        case 1: {  // circle
            return std::sqrt(dx * dx + dy * dy) - r;
        }
        case 2: {  // equilateral triangle
            const double k = std::numbers::sqrt3;
            double px = std::abs(dx) - r;
            double py = dy + r / k;
            if (px + k * py > 0.0) {
                const double nx = (px - k * py) / 2.0;
                const double ny = (-k * px - py) / 2.0;
                px = nx;
                py = ny;
            }
            px -= std::clamp(px, -2.0 * r, 0.0);
            const double len = std::sqrt(px * px + py * py);
            return -len * (py > 0.0 ? 1.0 : -1.0);
        }
        default: {  // cross: union of two bars
            const double arm = r * 0.34;
            const double horiz = std::max(std::abs(dx) - r, std::abs(dy) - arm);
            const double vert = std::max(std::abs(dx) - arm, std::abs(dy) - r);
            return std::min(horiz, vert);
        }
    }
}

struct MotionState {
    double cx, cy, radius, angle;
};

// Per-video randomization deliberately spreads appearance wide (position,
// size, orientation, spin, brightness, per-frame wobble) so a handful of
// labels underdetermines the classifier, while 800 videos still pin the
// shape identities down for the teacher.
struct VideoRecipe {
    int64_t shape, motion;
    double base_x, base_y, radius;
    double vx, vy;         // linear drift velocity (random direction)
    double orbit_r, omega, phase;
    double amp, osc_dir;   // oscillation amplitude and axis angle
    double angle0, spin;   // initial orientation and slow rotation
    double intensity;
};

VideoRecipe make_recipe(const SynthVideoSpec& spec, int64_t shape, int64_t motion,
                        Rng& rng) {
    VideoRecipe r{};
    r.shape = shape;
    r.motion = motion;
    const double w = static_cast<double>(spec.gen_w);
    const double h = static_cast<double>(spec.gen_h);
    r.radius = rng.next_uniform(0.11, 0.18) * std::min(w, h);
    // wide orbits: over one clip the arc is gently curved, so separating a
    // line from a circle takes real temporal integration
    r.orbit_r = rng.next_uniform(0.9, 2.2) * r.radius;
    r.phase = rng.next_uniform(0.0, 2.0 * std::numbers::pi);
    const double margin = r.radius + 2.5 + (motion % 4 == 1 ? r.orbit_r : 0.0);
    r.base_x = rng.next_uniform(margin, w - margin);
    r.base_y = rng.next_uniform(margin, h - margin);
    const double drift_dir = rng.next_uniform(0.0, 2.0 * std::numbers::pi);
    const double speed = rng.next_uniform(0.8, 1.7);
    r.vx = speed * std::cos(drift_dir);
    r.vy = speed * std::sin(drift_dir);
    const double arc = (rng.next_index(2) == 0 ? 1.0 : -1.0) *
                       rng.next_uniform(0.8, 1.6) * std::numbers::pi;
    r.omega = arc / static_cast<double>(spec.frames_per_video);
    r.amp = rng.next_uniform(0.5, 0.9) * (std::min(r.base_y, h - r.base_y) - r.radius - 1.0);
    r.osc_dir = rng.next_uniform(0.0, 2.0 * std::numbers::pi);
    r.angle0 = rng.next_uniform(0.0, 2.0 * std::numbers::pi);
    r.spin = rng.next_uniform(-0.06, 0.06);
    r.intensity = rng.next_uniform(0.5, 1.0);
    return r;
}

MotionState state_at(const VideoRecipe& r, int64_t t) {
    MotionState s{r.base_x, r.base_y, r.radius, r.angle0 + r.spin * static_cast<double>(t)};
    const double ft = static_cast<double>(t);
    switch (r.motion % 4) {
        case 0:  // linear drift on the torus, any direction
            s.cx = r.base_x + r.vx * ft;
            s.cy = r.base_y + r.vy * ft;
            break;
        case 1:  // circular orbit
            s.cx = r.base_x + r.orbit_r * std::cos(r.phase + r.omega * ft);
            s.cy = r.base_y + r.orbit_r * std::sin(r.phase + r.omega * ft);
            break;
        case 2: {  // oscillation along a random axis
            const double off = r.amp * std::sin(r.phase + r.omega * ft);
            s.cx = r.base_x + off * std::cos(r.osc_dir);
            s.cy = r.base_y + off * std::sin(r.osc_dir);
            break;
        }
        default:  // shrink-grow around the base radius
            s.radius = r.radius * (1.0 + 0.35 * std::sin(r.phase + r.omega * ft));
            break;
    }
    return s;
}

Tensor render_video(const SynthVideoSpec& spec, int64_t shape, int64_t motion,
                    uint64_t video_seed) {
    Rng rng(video_seed);
    const VideoRecipe recipe = make_recipe(spec, shape, motion, rng);
    const int64_t T = spec.frames_per_video, H = spec.gen_h, W = spec.gen_w;
    Tensor video({3, T, H, W});
    double* v = video.data();
    const double noise_cap = 4.0 * spec.noise_std;
    for (int64_t t = 0; t < T; ++t) {
        MotionState s = state_at(recipe, t);
        // small positional wobble on top of the class motion
        s.cx += rng.next_normal(0.0, 0.45);
        s.cy += rng.next_normal(0.0, 0.45);
        const double cos_a = std::cos(s.angle);
        const double sin_a = std::sin(s.angle);
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                double dx = static_cast<double>(x) + 0.5 - s.cx;
                double dy = static_cast<double>(y) + 0.5 - s.cy;
                if (recipe.motion % 4 == 0) {
                    // torus metric keeps the drifting shape visible forever
                    const double w = static_cast<double>(W);
                    const double h = static_cast<double>(H);
                    dx = std::fmod(dx + w * 16.0 + w / 2.0, w) - w / 2.0;
                    dy = std::fmod(dy + h * 16.0 + h / 2.0, h) - h / 2.0;
                }
                const double rx = cos_a * dx + sin_a * dy;
                const double ry = cos_a * dy - sin_a * dx;
                const double sdf = shape_sdf(recipe.shape, rx, ry, s.radius);
                const double coverage = std::clamp(0.5 - sdf, 0.0, 1.0);
                const double base = recipe.intensity * coverage;
                for (int64_t c = 0; c < 3; ++c) {
                    double noise = rng.next_normal(0.0, spec.noise_std);
                    noise = std::clamp(noise, -noise_cap, noise_cap);
                    v[((c * T + t) * H + y) * W + x] = std::max(0.0, base + noise);
                }
            }
        }
    }
    return video;
}

}  // namespace

std::string class_name(const SynthVideoSpec& spec, int64_t class_label) {
    const int64_t shape = class_label / spec.num_motions;
    const int64_t motion = class_label % spec.num_motions;
    return std::string(kShapeNames[shape % 4]) +
           (shape >= 4 ? std::to_string(shape) : "") + "_" +
           kMotionNames[motion % 4] + (motion >= 4 ? std::to_string(motion) : "");
}

Dataset generate_dataset(const SynthVideoSpec& spec, int64_t n_per_class,
                         int64_t n_test_per_class) {
    if (n_per_class < 2) {
        throw std::invalid_argument("generate_dataset: n_per_class must be >= 2");
    }
    if (n_test_per_class < 1) {
        throw std::invalid_argument("generate_dataset: n_test_per_class must be >= 1");
    }
    const int64_t classes = spec.num_classes();
    const int64_t n_train = classes * n_per_class;
    const int64_t n_total = n_train + classes * n_test_per_class;

    Dataset ds;
    ds.spec = spec;
    ds.samples.resize(static_cast<size_t>(n_total));
    // id layout: the training pool first (class-major), then the test split
    parallel_for(n_total, [&](int64_t begin, int64_t end) {
        for (int64_t id = begin; id < end; ++id) {
            const bool is_test = id >= n_train;
            const int64_t within = is_test ? id - n_train : id;
            const int64_t per = is_test ? n_test_per_class : n_per_class;
            const int64_t cls = within / per;
            VideoSample& s = ds.samples[static_cast<size_t>(id)];
            s.id = id;
            s.class_label = cls;
            s.shape_label = cls / spec.num_motions;
            s.video = render_video(spec, s.shape_label, cls % spec.num_motions,
                                   derive_seed(spec.seed, static_cast<uint64_t>(id)));
        }
    });

    DatasetManifest& m = ds.manifest;
    m.class_counts.assign(static_cast<size_t>(classes), n_per_class);
    m.label_fraction = 0.0;
    m.seed = spec.seed;
    m.unlabeled_ids.resize(static_cast<size_t>(n_train));
    std::iota(m.unlabeled_ids.begin(), m.unlabeled_ids.end(), 0);
    m.test_ids.resize(static_cast<size_t>(n_total - n_train));
    std::iota(m.test_ids.begin(), m.test_ids.end(), n_train);

    // channel statistics over the training pool
    const int64_t per_channel = spec.frames_per_video * spec.gen_h * spec.gen_w;
    for (int64_t c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (int64_t id = 0; id < n_train; ++id) {
            const double* v = ds.samples[static_cast<size_t>(id)].video.data() +
                              c * per_channel;
            for (int64_t i = 0; i < per_channel; ++i) sum += v[i];
        }
        const double mean = sum / static_cast<double>(n_train * per_channel);
        double ss = 0.0;
        for (int64_t id = 0; id < n_train; ++id) {
            const double* v = ds.samples[static_cast<size_t>(id)].video.data() +
                              c * per_channel;
            for (int64_t i = 0; i < per_channel; ++i) {
                const double d = v[i] - mean;
                ss += d * d;
            }
        }
        m.channel_mean[static_cast<size_t>(c)] = mean;
        m.channel_std[static_cast<size_t>(c)] =
            std::sqrt(ss / static_cast<double>(n_train * per_channel));
    }
    return ds;
}

DatasetManifest split_labels(const Dataset& dataset, double label_fraction,
                             uint64_t seed) {
    if (label_fraction < 0.0 || label_fraction > 1.0) {
        throw std::invalid_argument("split_labels: label fraction must be in [0,1]");
    }
    DatasetManifest m = dataset.manifest;
    std::vector<int64_t> pool = m.labeled_ids;
    pool.insert(pool.end(), m.unlabeled_ids.begin(), m.unlabeled_ids.end());
    std::sort(pool.begin(), pool.end());

    const int64_t classes = dataset.num_classes();
    std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(classes));
    for (int64_t id : pool) {
        by_class[static_cast<size_t>(dataset.sample(id).class_label)].push_back(id);
    }

    const int64_t total_target =
        std::llround(label_fraction * static_cast<double>(pool.size()));
    std::vector<int64_t> targets(static_cast<size_t>(classes));
    int64_t assigned = 0;
    for (int64_t c = 0; c < classes; ++c) {
        targets[static_cast<size_t>(c)] = std::llround(
            label_fraction * static_cast<double>(by_class[static_cast<size_t>(c)].size()));
        assigned += targets[static_cast<size_t>(c)];
    }

    Rng rng(derive_seed(seed, 0xa11));
    // +-1 adjustments on randomly chosen distinct classes until the total matches
    std::vector<int64_t> order(static_cast<size_t>(classes));
    std::iota(order.begin(), order.end(), 0);
    for (int64_t i = classes - 1; i > 0; --i) {
        std::swap(order[static_cast<size_t>(i)],
                  order[static_cast<size_t>(rng.next_index(i + 1))]);
    }
    size_t cursor = 0;
    while (assigned != total_target && cursor < order.size() * 2) {
        const int64_t c = order[cursor % order.size()];
        int64_t& t = targets[static_cast<size_t>(c)];
        const int64_t cap = static_cast<int64_t>(by_class[static_cast<size_t>(c)].size());
        if (assigned < total_target && t < cap) {
            ++t;
            ++assigned;
        } else if (assigned > total_target && t > 0) {
            --t;
            --assigned;
        }
        ++cursor;
    }

    m.labeled_ids.clear();
    m.unlabeled_ids.clear();
    for (int64_t c = 0; c < classes; ++c) {
        std::vector<int64_t>& ids = by_class[static_cast<size_t>(c)];
        for (int64_t i = static_cast<int64_t>(ids.size()) - 1; i > 0; --i) {
            std::swap(ids[static_cast<size_t>(i)],
                      ids[static_cast<size_t>(rng.next_index(i + 1))]);
        }
        const int64_t take = targets[static_cast<size_t>(c)];
        for (size_t i = 0; i < ids.size(); ++i) {
            if (static_cast<int64_t>(i) < take) {
                m.labeled_ids.push_back(ids[i]);
            } else {
                m.unlabeled_ids.push_back(ids[i]);
            }
        }
    }
    std::sort(m.labeled_ids.begin(), m.labeled_ids.end());
    std::sort(m.unlabeled_ids.begin(), m.unlabeled_ids.end());
    m.label_fraction = label_fraction;
    m.split_seed = seed;
    return m;
}

namespace {

Tensor window_copy(const Tensor& video, int64_t t0, int64_t y0, int64_t x0,
                   int64_t clip_frames, int64_t crop_h, int64_t crop_w) {
    const int64_t T = video.dim(1), H = video.dim(2), W = video.dim(3);
    Tensor out({3, clip_frames, crop_h, crop_w});
    const double* src = video.data();
    double* dst = out.data();
    for (int64_t c = 0; c < 3; ++c) {
        for (int64_t t = 0; t < clip_frames; ++t) {
            for (int64_t y = 0; y < crop_h; ++y) {
                std::memcpy(dst + ((c * clip_frames + t) * crop_h + y) * crop_w,
                            src + ((c * T + t0 + t) * H + y0 + y) * W + x0,
                            static_cast<size_t>(crop_w) * sizeof(double));
            }
        }
    }
    return out;
}

void check_window(const Tensor& video, int64_t clip_frames, int64_t crop_h,
                  int64_t crop_w) {
    if (video.rank() != 4 || video.dim(0) != 3) {
        throw ShapeError("expected video [3,T,H,W], got " + shape_str(video.shape()));
    }
    if (clip_frames > video.dim(1) || crop_h > video.dim(2) || crop_w > video.dim(3)) {
        throw ShapeError("clip window " + std::to_string(clip_frames) + "x" +
                         std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                         " exceeds video " + shape_str(video.shape()));
    }
}

}  // namespace

Tensor augment_clip(const Tensor& video, int64_t clip_frames, int64_t crop_h,
                    int64_t crop_w, Rng& rng) {
    check_window(video, clip_frames, crop_h, crop_w);
    const int64_t t0 = rng.next_index(video.dim(1) - clip_frames + 1);
    const int64_t y0 = rng.next_index(video.dim(2) - crop_h + 1);
    const int64_t x0 = rng.next_index(video.dim(3) - crop_w + 1);
    return window_copy(video, t0, y0, x0, clip_frames, crop_h, crop_w);
}

Tensor center_clip(const Tensor& video, int64_t clip_frames, int64_t crop_h,
                   int64_t crop_w) {
    check_window(video, clip_frames, crop_h, crop_w);
    return window_copy(video, (video.dim(1) - clip_frames) / 2,
                       (video.dim(2) - crop_h) / 2, (video.dim(3) - crop_w) / 2,
                       clip_frames, crop_h, crop_w);
}

Tensor sample_frame(const Tensor& clip, Rng& rng) {
    if (clip.rank() != 4 || clip.dim(0) != 3) {
        throw ShapeError("sample_frame: expected clip [3,T,H,W], got " +
                         shape_str(clip.shape()));
    }
    const int64_t T = clip.dim(1), H = clip.dim(2), W = clip.dim(3);
    const int64_t t = rng.next_index(T);
    Tensor frame({3, H, W});
    for (int64_t c = 0; c < 3; ++c) {
        std::memcpy(frame.data() + c * H * W, clip.data() + (c * T + t) * H * W,
                    static_cast<size_t>(H * W) * sizeof(double));
    }
    return frame;
}

namespace {

void normalize_axis(Tensor& t, const DatasetManifest& m, int64_t channel_axis) {
    const int64_t channels = t.dim(channel_axis);
    if (channels != 3) {
        throw ShapeError("normalize: expected 3 channels, got " + shape_str(t.shape()));
    }
    int64_t outer = 1;
    for (int64_t i = 0; i < channel_axis; ++i) outer *= t.dim(i);
    int64_t inner = 1;
    for (int64_t i = channel_axis + 1; i < t.rank(); ++i) inner *= t.dim(i);
    double* v = t.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t c = 0; c < 3; ++c) {
            const double mean = m.channel_mean[static_cast<size_t>(c)];
            const double inv = 1.0 / m.channel_std[static_cast<size_t>(c)];
            double* row = v + (o * 3 + c) * inner;
            for (int64_t i = 0; i < inner; ++i) row[i] = (row[i] - mean) * inv;
        }
    }
}

}  // namespace

void normalize_clip_inplace(Tensor& clip, const DatasetManifest& manifest) {
    normalize_axis(clip, manifest, 0);
}

void normalize_batch_inplace(Tensor& batch, const DatasetManifest& manifest) {
    normalize_axis(batch, manifest, 1);
}

// ---- file format -------------------------------------------------------------

namespace {

constexpr char kDatasetMagic[5] = {'V', 'S', 'S', 'L', 'D'};
constexpr uint32_t kDatasetVersion = 1;

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
                      std::string("truncated dataset file while reading ") + what);
    }
    return value;
}

void write_id_list(std::ostream& out, const std::vector<int64_t>& ids) {
    write_pod<uint64_t>(out, ids.size());
    for (int64_t id : ids) write_pod<int64_t>(out, id);
}

std::vector<int64_t> read_id_list(std::istream& in, const char* what) {
    const auto count = read_pod<uint64_t>(in, what);
    std::vector<int64_t> ids(count);
    for (auto& id : ids) id = read_pod<int64_t>(in, what);
    return ids;
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& dataset) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    out.write(kDatasetMagic, sizeof(kDatasetMagic));
    write_pod<uint32_t>(out, kDatasetVersion);
    const SynthVideoSpec& s = dataset.spec;
    write_pod<int64_t>(out, s.num_shapes);
    write_pod<int64_t>(out, s.num_motions);
    write_pod<int64_t>(out, s.frames_per_video);
    write_pod<int64_t>(out, s.gen_h);
    write_pod<int64_t>(out, s.gen_w);
    write_pod<double>(out, s.noise_std);
    write_pod<uint64_t>(out, s.seed);
    const DatasetManifest& m = dataset.manifest;
    write_id_list(out, m.class_counts);
    write_pod<double>(out, m.label_fraction);
    write_id_list(out, m.labeled_ids);
    write_id_list(out, m.unlabeled_ids);
    write_id_list(out, m.test_ids);
    for (double v : m.channel_mean) write_pod<double>(out, v);
    for (double v : m.channel_std) write_pod<double>(out, v);
    write_pod<uint64_t>(out, m.seed);
    write_pod<uint64_t>(out, m.split_seed);
    write_pod<uint64_t>(out, dataset.samples.size());
    for (const VideoSample& sample : dataset.samples) {
        write_pod<uint64_t>(out, static_cast<uint64_t>(sample.id));
        write_pod<uint16_t>(out, static_cast<uint16_t>(sample.class_label));
        write_pod<uint16_t>(out, static_cast<uint16_t>(sample.shape_label));
        write_tensor(out, sample.video);
    }
}

Dataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    char magic[5];
    in.read(magic, sizeof(magic));
    if (!in) throw IoError(IoError::Kind::truncated, "truncated dataset header");
    if (std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) {
        throw IoError(IoError::Kind::bad_magic, "bad magic: expected VSSLD");
    }
    const auto version = read_pod<uint32_t>(in, "dataset version");
    if (version != kDatasetVersion) {
        throw IoError(IoError::Kind::version_mismatch,
                      "dataset version mismatch: expected 1, got " +
                          std::to_string(version));
    }
    Dataset ds;
    SynthVideoSpec& s = ds.spec;
    s.num_shapes = read_pod<int64_t>(in, "num_shapes");
    s.num_motions = read_pod<int64_t>(in, "num_motions");
    s.frames_per_video = read_pod<int64_t>(in, "frames_per_video");
    s.gen_h = read_pod<int64_t>(in, "gen_h");
    s.gen_w = read_pod<int64_t>(in, "gen_w");
    s.noise_std = read_pod<double>(in, "noise_std");
    s.seed = read_pod<uint64_t>(in, "seed");
    DatasetManifest& m = ds.manifest;
    m.class_counts = read_id_list(in, "class_counts");
    m.label_fraction = read_pod<double>(in, "label_fraction");
    m.labeled_ids = read_id_list(in, "labeled_ids");
    m.unlabeled_ids = read_id_list(in, "unlabeled_ids");
    m.test_ids = read_id_list(in, "test_ids");
    for (double& v : m.channel_mean) v = read_pod<double>(in, "channel_mean");
    for (double& v : m.channel_std) v = read_pod<double>(in, "channel_std");
    m.seed = read_pod<uint64_t>(in, "manifest seed");
    m.split_seed = read_pod<uint64_t>(in, "split seed");
    const auto count = read_pod<uint64_t>(in, "sample count");
    ds.samples.resize(count);
    for (auto& sample : ds.samples) {
        sample.id = static_cast<int64_t>(read_pod<uint64_t>(in, "sample id"));
        sample.class_label = read_pod<uint16_t>(in, "class label");
        sample.shape_label = read_pod<uint16_t>(in, "shape label");
        sample.video = read_tensor(in);
    }
    return ds;
}

}  // namespace vssl
