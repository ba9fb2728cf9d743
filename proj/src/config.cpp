#include "layergen/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "layergen/errors.hpp"

namespace layergen {

// ---- sectioned text ---------------------------------------------------------

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) > 0;
}

const std::string& ConfigFile::get(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    if (s == sections.end()) throw ConfigError("config: missing section [" + section + "]");
    auto k = s->second.find(key);
    if (k == s->second.end())
        throw ConfigError("config: missing key '" + key + "' in [" + section + "]");
    return k->second;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

ConfigFile parse_config_text(const std::string& text) {
    ConfigFile cf;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string l = trim(line);
        if (l.empty() || l[0] == '#') continue;
        if (l.front() == '[') {
            if (l.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(l.substr(1, l.size() - 2));
            if (section.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
            cf.sections[section];  // section may stay empty
            continue;
        }
        auto eq = l.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": key outside a section");
        std::string key = trim(l.substr(0, eq));
        std::string value = trim(l.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cf.sections[section][key] = value;
    }
    return cf;
}

std::string serialize_config(const ConfigFile& cf) {
    std::string out;
    bool first = true;
    for (const auto& [section, keys] : cf.sections) {
        if (!first) out += "\n";
        first = false;
        out += "[" + section + "]\n";
        for (const auto& [k, v] : keys) out += k + " = " + v + "\n";
    }
    return out;
}

// ---- typed values -----------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number '" + s + "' for " + where);
    }
}

std::uint64_t parse_u64(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        unsigned long long v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer '" + s + "' for " + where);
    }
}

bool parse_bool(const std::string& s, const std::string& where) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("config: bad bool '" + s + "' for " + where + " (use true/false)");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

// Tracks which keys a section consumed so leftovers can be rejected.
struct SectionReader {
    const ConfigFile& cf;
    std::string section;
    std::set<std::string> seen;

    bool has(const std::string& key) {
        if (cf.has(section, key)) {
            seen.insert(key);
            return true;
        }
        return false;
    }
    std::string str(const std::string& key, const std::string& dflt) {
        return has(key) ? cf.get(section, key) : dflt;
    }
    double num(const std::string& key, double dflt) {
        return has(key) ? parse_double(cf.get(section, key), section + "." + key) : dflt;
    }
    std::uint64_t u64(const std::string& key, std::uint64_t dflt) {
        return has(key) ? parse_u64(cf.get(section, key), section + "." + key) : dflt;
    }
    std::size_t size(const std::string& key, std::size_t dflt) {
        return static_cast<std::size_t>(u64(key, dflt));
    }
    bool boolean(const std::string& key, bool dflt) {
        return has(key) ? parse_bool(cf.get(section, key), section + "." + key) : dflt;
    }
    void finish() {
        auto s = cf.sections.find(section);
        if (s == cf.sections.end()) return;
        for (const auto& [k, _] : s->second)
            if (!seen.count(k))
                throw ConfigError("config: unknown key '" + k + "' in [" + section + "]");
    }
};

std::vector<ConvLayerSpec> parse_conv_layers(const std::string& s) {
    std::vector<ConvLayerSpec> out;
    for (const std::string& part : split(s, ',')) {
        auto f = split(trim(part), ':');
        if (f.size() != 3)
            throw ConfigError("config: conv layer '" + part + "' must be out:kernel:stride");
        out.push_back({static_cast<std::size_t>(parse_u64(trim(f[0]), "conv_layers")),
                       static_cast<std::size_t>(parse_u64(trim(f[1]), "conv_layers")),
                       static_cast<std::size_t>(parse_u64(trim(f[2]), "conv_layers"))});
    }
    return out;
}

std::string conv_layers_str(const std::vector<ConvLayerSpec>& layers) {
    std::string s;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(layers[i].out_channels) + ":" + std::to_string(layers[i].kernel) +
             ":" + std::to_string(layers[i].stride);
    }
    return s;
}

std::vector<std::size_t> parse_size_list(const std::string& s, const std::string& where) {
    std::vector<std::size_t> out;
    for (const std::string& part : split(s, ','))
        out.push_back(static_cast<std::size_t>(parse_u64(trim(part), where)));
    return out;
}

std::string size_list_str(const std::vector<std::size_t>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(xs[i]);
    }
    return s;
}

void apply_model_preset(const std::string& preset, ConvFrontEndConfig& fe, BlockConfig& block) {
    if (preset == "full-size") {
        fe = full_size_front_end();
        block = full_size_block();
    } else if (preset == "desk") {
        fe = desk_front_end();
        block = desk_block();
    } else {
        throw ConfigError("config: unknown preset '" + preset + "' (use desk or full-size)");
    }
}

void read_model_section(SectionReader& r, ConvFrontEndConfig& fe, BlockConfig& block) {
    if (r.has("preset")) apply_model_preset(r.cf.get(r.section, "preset"), fe, block);
    if (r.has("conv_layers")) fe.layers = parse_conv_layers(r.cf.get(r.section, "conv_layers"));
    fe.conv_bias = r.boolean("conv_bias", fe.conv_bias);
    fe.group_norm_first = r.boolean("group_norm_first", fe.group_norm_first);
    fe.projection_dim = r.size("projection_dim", fe.projection_dim);
    fe.pos_conv_kernel = r.size("pos_conv_kernel", fe.pos_conv_kernel);
    fe.pos_conv_groups = r.size("pos_conv_groups", fe.pos_conv_groups);
    block.d_model = r.size("d_model", block.d_model);
    block.n_heads = r.size("n_heads", block.n_heads);
    block.ffn_hidden = r.size("ffn_hidden", block.ffn_hidden);
}

void write_model_section(std::map<std::string, std::string>& s, const ConvFrontEndConfig& fe,
                         const BlockConfig& block) {
    s["conv_layers"] = conv_layers_str(fe.layers);
    s["conv_bias"] = fe.conv_bias ? "true" : "false";
    s["group_norm_first"] = fe.group_norm_first ? "true" : "false";
    s["projection_dim"] = std::to_string(fe.projection_dim);
    s["pos_conv_kernel"] = std::to_string(fe.pos_conv_kernel);
    s["pos_conv_groups"] = std::to_string(fe.pos_conv_groups);
    s["d_model"] = std::to_string(block.d_model);
    s["n_heads"] = std::to_string(block.n_heads);
    s["ffn_hidden"] = std::to_string(block.ffn_hidden);
}

}  // namespace

RunConfig run_config_from(const ConfigFile& cf) {
    RunConfig rc;

    SectionReader teacher{cf, "teacher", {}};
    read_model_section(teacher, rc.teacher.front_end, rc.teacher.block);
    rc.teacher.layers = teacher.size("layers", rc.teacher.layers);
    rc.teacher.seed = teacher.u64("seed", rc.teacher.seed);
    teacher.finish();

    SectionReader student{cf, "student", {}};
    read_model_section(student, rc.student.front_end, rc.student.block);
    {
        const std::string variant = student.str("variant", "autoregressive");
        if (variant == "autoregressive") {
            rc.student.variant = StudentVariant::autoregressive(
                student.boolean("skip", true), student.boolean("output_layer", true),
                student.boolean("cross_attention", false));
        } else if (variant == "parallel") {
            // Target count is aligned with the distill target set at build time.
            rc.student.variant =
                StudentVariant::parallel(student.size("parallel_blocks", 2), 3);
            student.boolean("skip", false);
            student.boolean("output_layer", false);
            student.boolean("cross_attention", false);
        } else {
            throw ConfigError("config: unknown student variant '" + variant + "'");
        }
    }
    rc.student.head_inner = student.size("head_inner", rc.student.head_inner);
    rc.student.step_embedding = student.boolean("step_embedding", rc.student.step_embedding);
    rc.student.max_gen_steps = student.size("max_gen_steps", rc.student.max_gen_steps);
    rc.student.trained_targets = student.size("trained_targets", rc.student.trained_targets);
    rc.student.seed = student.u64("seed", rc.student.seed);
    student.finish();

    SectionReader distill{cf, "distill", {}};
    if (distill.has("target_layers"))
        rc.distill.target_layers =
            parse_size_list(cf.get("distill", "target_layers"), "distill.target_layers");
    rc.distill.lambda = distill.num("lambda", rc.distill.lambda);
    rc.distill.total_steps = distill.size("steps", rc.distill.total_steps);
    rc.distill.warmup_fraction = distill.num("warmup_fraction", rc.distill.warmup_fraction);
    rc.distill.peak_lr = distill.num("peak_lr", rc.distill.peak_lr);
    rc.distill.batch_size = distill.size("batch_size", rc.distill.batch_size);
    rc.distill.seed = distill.u64("seed", rc.distill.seed);
    rc.distill.val_every = distill.size("val_every", rc.distill.val_every);
    {
        const std::string red = distill.str("loss_reduction", "mean");
        if (red == "mean") rc.distill.reduction = LossReduction::MeanTAndL;
        else if (red == "sum") rc.distill.reduction = LossReduction::SumT;
        else throw ConfigError("config: loss_reduction must be mean or sum, got '" + red + "'");
    }
    distill.finish();

    SectionReader data{cf, "data", {}};
    rc.data.kind = data.str("kind", rc.data.kind);
    if (rc.data.kind != "synth" && rc.data.kind != "wavdir")
        throw ConfigError("config: data kind must be synth or wavdir");
    rc.data.synth.sample_rate = data.size("sample_rate", rc.data.synth.sample_rate);
    rc.data.synth.min_samples = data.size("min_samples", rc.data.synth.min_samples);
    rc.data.synth.max_samples = data.size("max_samples", rc.data.synth.max_samples);
    rc.data.synth.components = data.size("components", rc.data.synth.components);
    rc.data.synth.noise = data.num("noise", rc.data.synth.noise);
    rc.data.synth.bands = data.size("bands", rc.data.synth.bands);
    rc.data.synth.seed = data.u64("seed", rc.data.synth.seed);
    rc.data.wav_dir = data.str("wav_dir", rc.data.wav_dir);
    rc.data.train_size = data.size("train_size", rc.data.train_size);
    data.finish();

    SectionReader out{cf, "output", {}};
    rc.out.checkpoint = out.str("checkpoint", rc.out.checkpoint);
    rc.out.metrics = out.str("metrics", rc.out.metrics);
    out.finish();

    // Parallel-head students predict exactly one layer per target.
    if (rc.student.variant.kind == VariantKind::ParallelHeads)
        rc.student.variant.n_targets = rc.distill.target_layers.size();
    return rc;
}

ConfigFile to_config_file(const RunConfig& rc) {
    ConfigFile cf;

    auto& teacher = cf.sections["teacher"];
    write_model_section(teacher, rc.teacher.front_end, rc.teacher.block);
    teacher["layers"] = std::to_string(rc.teacher.layers);
    teacher["seed"] = std::to_string(rc.teacher.seed);

    auto& student = cf.sections["student"];
    write_model_section(student, rc.student.front_end, rc.student.block);
    const StudentVariant& v = rc.student.variant;
    if (v.kind == VariantKind::ParallelHeads) {
        student["variant"] = "parallel";
        student["parallel_blocks"] = std::to_string(v.n_blocks);
    } else {
        student["variant"] = "autoregressive";
        student["skip"] = v.skip ? "true" : "false";
        student["output_layer"] = v.output_head ? "true" : "false";
        student["cross_attention"] = v.cross_attention ? "true" : "false";
    }
    student["head_inner"] = std::to_string(rc.student.head_inner);
    student["step_embedding"] = rc.student.step_embedding ? "true" : "false";
    student["max_gen_steps"] = std::to_string(rc.student.max_gen_steps);
    student["trained_targets"] = std::to_string(rc.student.trained_targets);
    student["seed"] = std::to_string(rc.student.seed);

    auto& distill = cf.sections["distill"];
    distill["target_layers"] = size_list_str(rc.distill.target_layers);
    distill["lambda"] = fmt_double(rc.distill.lambda);
    distill["steps"] = std::to_string(rc.distill.total_steps);
    distill["warmup_fraction"] = fmt_double(rc.distill.warmup_fraction);
    distill["peak_lr"] = fmt_double(rc.distill.peak_lr);
    distill["batch_size"] = std::to_string(rc.distill.batch_size);
    distill["seed"] = std::to_string(rc.distill.seed);
    distill["val_every"] = std::to_string(rc.distill.val_every);
    distill["loss_reduction"] = rc.distill.reduction == LossReduction::SumT ? "sum" : "mean";

    auto& data = cf.sections["data"];
    data["kind"] = rc.data.kind;
    data["sample_rate"] = std::to_string(rc.data.synth.sample_rate);
    data["min_samples"] = std::to_string(rc.data.synth.min_samples);
    data["max_samples"] = std::to_string(rc.data.synth.max_samples);
    data["components"] = std::to_string(rc.data.synth.components);
    data["noise"] = fmt_double(rc.data.synth.noise);
    data["bands"] = std::to_string(rc.data.synth.bands);
    data["seed"] = std::to_string(rc.data.synth.seed);
    data["wav_dir"] = rc.data.wav_dir;
    data["train_size"] = std::to_string(rc.data.train_size);

    auto& out = cf.sections["output"];
    out["checkpoint"] = rc.out.checkpoint;
    out["metrics"] = rc.out.metrics;
    return cf;
}

RunConfig parse_run_config(const std::string& text) {
    return run_config_from(parse_config_text(text));
}

std::string serialize_run_config(const RunConfig& rc) {
    return serialize_config(to_config_file(rc));
}

RunConfig load_run_config(const std::string& path) {
    return parse_run_config(read_text_file(path));
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed: " + path);
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace layergen
