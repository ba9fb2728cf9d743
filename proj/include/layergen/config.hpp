#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "layergen/distill.hpp"
#include "layergen/models.hpp"

namespace layergen {

// Sectioned key=value text. Canonical serialization sorts sections and keys,
// so parse -> serialize -> parse is the identity on the canonical form.
struct ConfigFile {
    std::map<std::string, std::map<std::string, std::string>> sections;

    bool has(const std::string& section, const std::string& key) const;
    const std::string& get(const std::string& section, const std::string& key) const;
};

ConfigFile parse_config_text(const std::string& text);
std::string serialize_config(const ConfigFile& cf);

// Deterministic synthetic-utterance generator parameters. Generation is a
// pure function of (spec, index).
struct SyntheticSpec {
    std::size_t sample_rate = 4000;
    std::size_t min_samples = 256;
    std::size_t max_samples = 256;
    std::size_t components = 3;
    double noise = 0.05;
    std::size_t bands = 8;
    std::uint64_t seed = 100;
};

struct DataConfig {
    std::string kind = "synth";  // "synth" | "wavdir"
    SyntheticSpec synth;
    std::string wav_dir;
    std::size_t train_size = 256;  // validation split is train_size/16, disjoint
};

struct OutputConfig {
    std::string checkpoint = "out/model.ckpt";
    std::string metrics = "out/metrics.csv";
};

struct RunConfig {
    TeacherConfig teacher;
    StudentConfig student;
    DistillConfig distill;
    DataConfig data;
    OutputConfig out;
};

// Typed view over the config text. Sections: [teacher], [student], [distill],
// [data], [output]. A `preset` key (desk | full-size) fills model defaults;
// explicit keys override. Unknown keys are rejected.
RunConfig run_config_from(const ConfigFile& cf);
ConfigFile to_config_file(const RunConfig& rc);

RunConfig parse_run_config(const std::string& text);
std::string serialize_run_config(const RunConfig& rc);
RunConfig load_run_config(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace layergen
