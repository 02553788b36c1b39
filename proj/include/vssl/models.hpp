#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vssl/tensor.hpp"

namespace vssl {

struct Parameter {
    std::string name;
    Tensor value;  // requires_grad is set by the owning ParamSet
};

// Ordered, uniquely named parameter collection. Iteration order is insertion
// order, which fixes initialization draws, checkpoint layout and optimizer
// state alignment.
class ParamSet {
public:
    Tensor& add(const std::string& name, Tensor value);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }
    size_t size() const { return params_.size(); }

    void zero_grad();
    void set_requires_grad(bool flag);

private:
    std::vector<Parameter> params_;
};

// FNV-1a over the raw little-endian bytes of every parameter element, in
// parameter order. Exact, so freeze checks are bit-level.
uint64_t params_checksum(const ParamSet& params);

// Checkpoint format: magic "VSSLC", u32 version=1, u32 param_count, then per
// parameter u16 name length, UTF-8 name, tensor in VSSLT format.
void write_params(std::ostream& out, const ParamSet& params);
void read_params(std::istream& in, ParamSet& params);  // shapes must match
void save_params(const std::string& path, const ParamSet& params);
void load_params(const std::string& path, ParamSet& params);

struct VideoNetConfig {
    int64_t in_channels = 3;
    int64_t clip_frames = 8;
    int64_t clip_h = 32;
    int64_t clip_w = 32;
    std::vector<int64_t> block_channels = {16, 32, 64};
    int64_t num_classes = 8;
    int64_t embed_dim = 4;
};

// Toy spatiotemporal classifier: per block conv3d(3x3x3, pad 1) -> stride-2
// spatial max pool -> relu, then global average pooling feeding two softmax
// heads. p ranges over the video classes, q over the appearance classes the
// teacher predicts, and both share the trunk feature.
class VideoNet3D {
public:
    VideoNet3D(VideoNetConfig config, uint64_t init_seed);

    struct Output {
        Tensor p;  // [N, num_classes]
        Tensor q;  // [N, embed_dim]
    };

    Output forward(const Tensor& clips) const;

    const VideoNetConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    VideoNetConfig config_;
    ParamSet params_;
};

struct TeacherConfig {
    int64_t in_channels = 3;
    std::vector<int64_t> channels = {16, 32, 64};  // stride-2 conv2d blocks
    int64_t num_outputs = 4;                       // appearance classes (M)
};

// Frame-level appearance classifier. Once frozen its parameters never carry
// gradients, so a forward pass during training records nothing on the graph.
class TeacherNet2D {
public:
    TeacherNet2D(TeacherConfig config, uint64_t init_seed);

    // frames: [N, C, H, W] -> softmax over num_outputs
    Tensor forward(const Tensor& frames) const;

    void freeze();
    bool frozen() const { return frozen_; }
    uint64_t checksum() const { return params_checksum(params_); }

    const TeacherConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    TeacherConfig config_;
    ParamSet params_;
    bool frozen_ = false;
};

}  // namespace vssl
