#pragma once

#include <stdexcept>
#include <string>

#include "vssl/data.hpp"
#include "vssl/trainer.hpp"

namespace vssl {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Flat `key = value` run configuration. Unknown keys are errors; blank lines
// and '#' comments are skipped. write_config emits every key, so
// parse(write(c)) round-trips.
struct RunConfig {
    TrainConfig train;
    SynthVideoSpec data;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string write_config(const RunConfig& config);
void save_config(const std::string& path, const RunConfig& config);

}  // namespace vssl
