#include "vssl/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace vssl {

namespace {

std::string trim(const std::string& s) {
    const size_t begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const size_t end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

int64_t parse_int(const std::string& key, const std::string& value) {
    size_t used = 0;
    int64_t v = 0;
    try {
        v = std::stoll(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": invalid integer '" + value + "'");
    }
    if (used != value.size()) {
        throw ConfigError("config key " + key + ": invalid integer '" + value + "'");
    }
    return v;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    size_t used = 0;
    uint64_t v = 0;
    try {
        v = std::stoull(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": invalid integer '" + value + "'");
    }
    if (used != value.size()) {
        throw ConfigError("config key " + key + ": invalid integer '" + value + "'");
    }
    return v;
}

double parse_double(const std::string& key, const std::string& value) {
    size_t used = 0;
    double v = 0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": invalid number '" + value + "'");
    }
    if (used != value.size()) {
        throw ConfigError("config key " + key + ": invalid number '" + value + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    throw ConfigError("config key " + key + ": expected true or false, got '" + value + "'");
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
    TrainConfig& t = c.train;
    SynthVideoSpec& d = c.data;
    if (key == "method") {
        try {
            t.method = method_from_name(value);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    } else if (key == "total_iterations") {
        t.total_iterations = parse_int(key, value);
    } else if (key == "batch_size") {
        t.batch_size = parse_int(key, value);
    } else if (key == "label_fraction") {
        t.label_fraction = parse_double(key, value);
    } else if (key == "eval_every") {
        t.eval_every = parse_int(key, value);
    } else if (key == "checkpoint_path") {
        t.checkpoint_path = value;
    } else if (key == "seed.data") {
        t.seed_data = parse_u64(key, value);
    } else if (key == "seed.init") {
        t.seed_init = parse_u64(key, value);
    } else if (key == "seed.train") {
        t.seed_train = parse_u64(key, value);
    } else if (key == "pl.target_value") {
        t.rule.target_value = parse_double(key, value);
    } else if (key == "pl.delta") {
        t.rule.confidence_threshold = parse_double(key, value);
    } else if (key == "pl.detach_targets") {
        t.rule.detach_targets = parse_bool(key, value);
    } else if (key == "schedule.lambda_d") {
        t.schedule.lambda_d = parse_double(key, value);
    } else if (key == "schedule.tau_fraction") {
        t.schedule.tau_fraction = parse_double(key, value);
    } else if (key == "schedule.warmup_mode") {
        if (value == "step") {
            t.schedule.warmup_mode = WarmupMode::step;
        } else if (value == "linear") {
            t.schedule.warmup_mode = WarmupMode::linear;
        } else {
            throw ConfigError("config key schedule.warmup_mode: expected step or linear");
        }
    } else if (key == "model.clip_frames") {
        t.model.clip_frames = parse_int(key, value);
    } else if (key == "model.clip_h") {
        t.model.clip_h = parse_int(key, value);
    } else if (key == "model.clip_w") {
        t.model.clip_w = parse_int(key, value);
    } else if (key == "model.block_channels") {
        std::vector<int64_t> channels;
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) {
            channels.push_back(parse_int(key, item));
        }
        if (channels.empty()) {
            throw ConfigError("config key model.block_channels: empty list");
        }
        t.model.block_channels = std::move(channels);
    } else if (key == "optim.lr0") {
        t.sgd.lr0 = parse_double(key, value);
    } else if (key == "optim.momentum") {
        t.sgd.momentum = parse_double(key, value);
    } else if (key == "optim.weight_decay") {
        t.sgd.weight_decay = parse_double(key, value);
    } else if (key == "optim.decay_factor") {
        t.sgd.decay_factor = parse_double(key, value);
    } else if (key == "optim.decay_every") {
        t.sgd.decay_every = parse_int(key, value);
    } else if (key == "data.num_shapes") {
        d.num_shapes = parse_int(key, value);
    } else if (key == "data.num_motions") {
        d.num_motions = parse_int(key, value);
    } else if (key == "data.frames_per_video") {
        d.frames_per_video = parse_int(key, value);
    } else if (key == "data.gen_h") {
        d.gen_h = parse_int(key, value);
    } else if (key == "data.gen_w") {
        d.gen_w = parse_int(key, value);
    } else if (key == "data.noise_std") {
        d.noise_std = parse_double(key, value);
    } else if (key == "data.seed") {
        d.seed = parse_u64(key, value);
    } else {
        throw ConfigError("unknown config key: " + key);
    }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig config;
    std::istringstream in(text);
    std::string line;
    std::set<std::string> seen;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value', got '" + stripped + "'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        }
        if (!seen.insert(key).second) {
            throw ConfigError("duplicate config key: " + key);
        }
        apply_key(config, key, value);
    }
    return config;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string write_config(const RunConfig& c) {
    const TrainConfig& t = c.train;
    const SynthVideoSpec& d = c.data;
    std::ostringstream out;
    out << "method = " << method_name(t.method) << "\n";
    out << "total_iterations = " << t.total_iterations << "\n";
    out << "batch_size = " << t.batch_size << "\n";
    out << "label_fraction = " << fmt_double(t.label_fraction) << "\n";
    out << "eval_every = " << t.eval_every << "\n";
    out << "checkpoint_path = " << t.checkpoint_path << "\n";
    out << "seed.data = " << t.seed_data << "\n";
    out << "seed.init = " << t.seed_init << "\n";
    out << "seed.train = " << t.seed_train << "\n";
    out << "pl.target_value = " << fmt_double(t.rule.target_value) << "\n";
    out << "pl.delta = " << fmt_double(t.rule.confidence_threshold) << "\n";
    out << "pl.detach_targets = " << (t.rule.detach_targets ? "true" : "false") << "\n";
    out << "schedule.lambda_d = " << fmt_double(t.schedule.lambda_d) << "\n";
    out << "schedule.tau_fraction = " << fmt_double(t.schedule.tau_fraction) << "\n";
    out << "schedule.warmup_mode = "
        << (t.schedule.warmup_mode == WarmupMode::step ? "step" : "linear") << "\n";
    out << "model.clip_frames = " << t.model.clip_frames << "\n";
    out << "model.clip_h = " << t.model.clip_h << "\n";
    out << "model.clip_w = " << t.model.clip_w << "\n";
    out << "model.block_channels = ";
    for (size_t i = 0; i < t.model.block_channels.size(); ++i) {
        if (i) out << ",";
        out << t.model.block_channels[i];
    }
    out << "\n";
    out << "optim.lr0 = " << fmt_double(t.sgd.lr0) << "\n";
    out << "optim.momentum = " << fmt_double(t.sgd.momentum) << "\n";
    out << "optim.weight_decay = " << fmt_double(t.sgd.weight_decay) << "\n";
    out << "optim.decay_factor = " << fmt_double(t.sgd.decay_factor) << "\n";
    out << "optim.decay_every = " << t.sgd.decay_every << "\n";
    out << "data.num_shapes = " << d.num_shapes << "\n";
    out << "data.num_motions = " << d.num_motions << "\n";
    out << "data.frames_per_video = " << d.frames_per_video << "\n";
    out << "data.gen_h = " << d.gen_h << "\n";
    out << "data.gen_w = " << d.gen_w << "\n";
    out << "data.noise_std = " << fmt_double(d.noise_std) << "\n";
    out << "data.seed = " << d.seed << "\n";
    return out.str();
}

void save_config(const std::string& path, const RunConfig& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    out << write_config(config);
}

}  // namespace vssl
