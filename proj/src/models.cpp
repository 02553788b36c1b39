#include "vssl/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "vssl/rng.hpp"

namespace vssl {

Tensor& ParamSet::add(const std::string& name, Tensor value) {
    if (contains(name)) {
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
    value.set_requires_grad(true);
    params_.push_back(Parameter{name, std::move(value)});
    return params_.back().value;
}

Tensor& ParamSet::at(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return p.value;
    }
    throw std::out_of_range("no parameter named " + name);
}

const Tensor& ParamSet::at(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return p.value;
    }
    throw std::out_of_range("no parameter named " + name);
}

bool ParamSet::contains(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return true;
    }
    return false;
}

void ParamSet::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

void ParamSet::set_requires_grad(bool flag) {
    for (auto& p : params_) p.value.set_requires_grad(flag);
}

uint64_t params_checksum(const ParamSet& params) {
    uint64_t hash = 0xcbf29ce484222325ULL;
    for (const auto& p : params.all()) {
        for (double v : p.value.values()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (unsigned char b : bytes) {
                hash ^= b;
                hash *= 0x00000100000001b3ULL;
            }
        }
    }
    return hash;
}

namespace {

constexpr char kCheckpointMagic[5] = {'V', 'S', 'S', 'L', 'C'};
constexpr uint32_t kCheckpointVersion = 1;

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
                      std::string("truncated stream while reading ") + what);
    }
    return value;
}

}  // namespace

void write_params(std::ostream& out, const ParamSet& params) {
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_pod<uint32_t>(out, kCheckpointVersion);
    write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
    for (const auto& p : params.all()) {
        write_pod<uint16_t>(out, static_cast<uint16_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_tensor(out, p.value);
    }
}

void read_params(std::istream& in, ParamSet& params) {
    char magic[5];
    in.read(magic, sizeof(magic));
    if (!in) {
        throw IoError(IoError::Kind::truncated, "truncated checkpoint header");
    }
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw IoError(IoError::Kind::bad_magic, "bad magic: expected VSSLC");
    }
    const auto version = read_pod<uint32_t>(in, "checkpoint version");
    if (version != kCheckpointVersion) {
        throw IoError(IoError::Kind::version_mismatch,
                      "checkpoint version mismatch: expected 1, got " +
                          std::to_string(version));
    }
    const auto count = read_pod<uint32_t>(in, "parameter count");
    if (count != params.size()) {
        throw IoError(IoError::Kind::truncated,
                      "checkpoint parameter count " + std::to_string(count) +
                          " does not match model (" + std::to_string(params.size()) + ")");
    }
    for (uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<uint16_t>(in, "parameter name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) {
            throw IoError(IoError::Kind::truncated, "truncated parameter name");
        }
        Tensor stored = read_tensor(in);
        Tensor& dst = params.at(name);
        if (stored.shape() != dst.shape()) {
            throw ShapeError("checkpoint tensor " + name + " has shape " +
                             shape_str(stored.shape()) + ", model expects " +
                             shape_str(dst.shape()));
        }
        dst.values() = stored.values();
    }
}

void save_params(const std::string& path, const ParamSet& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    write_params(out, params);
}

void load_params(const std::string& path, ParamSet& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    read_params(in, params);
}

namespace {

// Zero-mean normal scaled by 1/sqrt(fan_in); biases zero.
Tensor init_kernel(Shape shape, int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.next_normal(0.0, stddev);
    return t;
}

}  // namespace

VideoNet3D::VideoNet3D(VideoNetConfig config, uint64_t init_seed)
    : config_(std::move(config)) {
    if (config_.num_classes < 2 || config_.embed_dim < 2) {
        throw std::invalid_argument("VideoNet3D needs num_classes >= 2 and embed_dim >= 2");
    }
    const int64_t pool_stride = 1LL << config_.block_channels.size();
    if (config_.clip_h % pool_stride != 0 || config_.clip_w % pool_stride != 0) {
        throw std::invalid_argument(
            "clip dimensions must be divisible by the cumulative pooling stride " +
            std::to_string(pool_stride));
    }
    Rng rng(init_seed);
    int64_t in_ch = config_.in_channels;
    for (size_t i = 0; i < config_.block_channels.size(); ++i) {
        const int64_t out_ch = config_.block_channels[i];
        const std::string tag = "block" + std::to_string(i + 1);
        params_.add(tag + ".kernel",
                    init_kernel({out_ch, in_ch, 3, 3, 3}, in_ch * 27, rng));
        params_.add(tag + ".bias", Tensor({out_ch}));
        in_ch = out_ch;
    }
    params_.add("class_head.weight",
                init_kernel({config_.num_classes, in_ch}, in_ch, rng));
    params_.add("class_head.bias", Tensor({config_.num_classes}));
    params_.add("embed_head.weight", init_kernel({config_.embed_dim, in_ch}, in_ch, rng));
    params_.add("embed_head.bias", Tensor({config_.embed_dim}));
}

VideoNet3D::Output VideoNet3D::forward(const Tensor& clips) const {
    if (clips.rank() != 5 || clips.dim(1) != config_.in_channels ||
        clips.dim(2) != config_.clip_frames || clips.dim(3) != config_.clip_h ||
        clips.dim(4) != config_.clip_w) {
        throw ShapeError("VideoNet3D: clip batch " + shape_str(clips.shape()) +
                         " does not match configured input [N," +
                         std::to_string(config_.in_channels) + "," +
                         std::to_string(config_.clip_frames) + "," +
                         std::to_string(config_.clip_h) + "," +
                         std::to_string(config_.clip_w) + "]");
    }
    Tensor h = clips;
    for (size_t i = 0; i < config_.block_channels.size(); ++i) {
        const std::string tag = "block" + std::to_string(i + 1);
        h = conv3d(h, params_.at(tag + ".kernel"), params_.at(tag + ".bias"),
                   {1, 1, 1}, {1, 1, 1});
        // max-pool and relu commute, and pooling first halves the relu work
        h = relu(pool3d(h, PoolMode::max, {1, 2, 2}, {1, 2, 2}));
    }
    Tensor feat = global_avg_pool(h);
    Output out;
    out.p = softmax_rows(
        linear(feat, params_.at("class_head.weight"), params_.at("class_head.bias")));
    out.q = softmax_rows(
        linear(feat, params_.at("embed_head.weight"), params_.at("embed_head.bias")));
    return out;
}

TeacherNet2D::TeacherNet2D(TeacherConfig config, uint64_t init_seed)
    : config_(std::move(config)) {
    Rng rng(init_seed);
    int64_t in_ch = config_.in_channels;
    for (size_t i = 0; i < config_.channels.size(); ++i) {
        const int64_t out_ch = config_.channels[i];
        const std::string tag = "conv" + std::to_string(i + 1);
        params_.add(tag + ".kernel", init_kernel({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
        params_.add(tag + ".bias", Tensor({out_ch}));
        in_ch = out_ch;
    }
    params_.add("head.weight", init_kernel({config_.num_outputs, in_ch}, in_ch, rng));
    params_.add("head.bias", Tensor({config_.num_outputs}));
}

Tensor TeacherNet2D::forward(const Tensor& frames) const {
    if (frames.rank() != 4 || frames.dim(1) != config_.in_channels) {
        throw ShapeError("TeacherNet2D: frame batch " + shape_str(frames.shape()) +
                         " does not match configured input channels " +
                         std::to_string(config_.in_channels));
    }
    Tensor h = frames;
    for (size_t i = 0; i < config_.channels.size(); ++i) {
        const std::string tag = "conv" + std::to_string(i + 1);
        h = relu(conv2d(h, params_.at(tag + ".kernel"), params_.at(tag + ".bias"),
                        {2, 2}, {1, 1}));
    }
    Tensor feat = global_avg_pool2d(h);
    return softmax_rows(linear(feat, params_.at("head.weight"), params_.at("head.bias")));
}

void TeacherNet2D::freeze() {
    frozen_ = true;
    params_.set_requires_grad(false);
}

}  // namespace vssl
