#include "layergen/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "layergen/errors.hpp"

namespace layergen {

namespace {

constexpr char kMagic[4] = {'G', 'D', 'S', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kManifestMark = "%%manifest";

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

const char* dtype_name(StorageDtype d) { return d == StorageDtype::F32 ? "f32" : "f64"; }

std::size_t dtype_bytes(StorageDtype d) { return d == StorageDtype::F32 ? 4 : 8; }

std::string dims_str(const std::vector<std::size_t>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s;
}

struct ManifestEntry {
    std::string name;
    StorageDtype dtype;
    std::vector<std::size_t> shape;
    std::uint64_t offset;
    std::uint64_t length;
};

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<NamedTensor>& tensors, StorageDtype dtype) {
    std::string header = config_text;
    header += "\n";
    header += kManifestMark;
    header += "\n";
    std::uint64_t offset = 0;
    for (const auto& nt : tensors) {
        if (nt.tensor.rank() == 0)
            throw ContractError("save_checkpoint: scalar tensors are not storable: " + nt.name);
        if (nt.name.find(' ') != std::string::npos || nt.name.find('\n') != std::string::npos)
            throw ContractError("save_checkpoint: tensor name has whitespace: " + nt.name);
        const std::uint64_t length = nt.tensor.size() * dtype_bytes(dtype);
        header += nt.name;
        header += " ";
        header += dtype_name(dtype);
        header += " ";
        header += dims_str(nt.tensor.shape());
        header += " " + std::to_string(offset) + " " + std::to_string(length) + "\n";
        offset += length;
    }

    std::vector<std::uint8_t> bytes;
    bytes.reserve(16 + header.size() + offset);
    bytes.insert(bytes.end(), kMagic, kMagic + 4);
    put_u32_le(bytes, kVersion);
    put_u64_le(bytes, header.size());
    bytes.insert(bytes.end(), header.begin(), header.end());
    for (const auto& nt : tensors) {
        if (dtype == StorageDtype::F64) {
            for (std::size_t i = 0; i < nt.tensor.size(); ++i) {
                std::uint64_t u;
                double d = nt.tensor[i];
                std::memcpy(&u, &d, 8);
                put_u64_le(bytes, u);
            }
        } else {
            for (std::size_t i = 0; i < nt.tensor.size(); ++i) {
                const float f = static_cast<float>(nt.tensor[i]);
                std::uint32_t u;
                std::memcpy(&u, &f, 4);
                put_u32_le(bytes, u);
            }
        }
    }
    write_binary_file(path, bytes);
}

CheckpointData load_checkpoint(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_binary_file(path);
    if (bytes.size() < 16) throw FormatError("checkpoint: file too small: " + path);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw BadMagicError("checkpoint: bad magic in " + path);
    const std::uint32_t version = get_u32_le(bytes.data() + 4);
    if (version != kVersion)
        throw VersionMismatchError("checkpoint: version " + std::to_string(version) +
                                   " unsupported (expected " + std::to_string(kVersion) + ")");
    const std::uint64_t header_len = get_u64_le(bytes.data() + 8);
    if (16 + header_len > bytes.size())
        throw FormatError("checkpoint: truncated header in " + path);
    const std::string header(reinterpret_cast<const char*>(bytes.data() + 16),
                             static_cast<std::size_t>(header_len));
    const std::uint8_t* payload = bytes.data() + 16 + header_len;
    const std::uint64_t payload_len = bytes.size() - 16 - header_len;

    const std::string mark = std::string("\n") + kManifestMark + "\n";
    const std::size_t mpos = header.find(mark);
    if (mpos == std::string::npos)
        throw FormatError("checkpoint: missing manifest in " + path);
    CheckpointData data;
    data.config_text = header.substr(0, mpos);

    std::vector<ManifestEntry> entries;
    std::istringstream manifest(header.substr(mpos + mark.size()));
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string dtype, dims;
        if (!(ls >> e.name >> dtype >> dims >> e.offset >> e.length))
            throw FormatError("checkpoint: malformed manifest line: " + line);
        if (dtype == "f64") e.dtype = StorageDtype::F64;
        else if (dtype == "f32") e.dtype = StorageDtype::F32;
        else throw FormatError("checkpoint: unknown dtype '" + dtype + "' for " + e.name);
        std::size_t pos = 0;
        while (pos < dims.size()) {
            std::size_t x = dims.find('x', pos);
            if (x == std::string::npos) x = dims.size();
            e.shape.push_back(std::stoull(dims.substr(pos, x - pos)));
            pos = x + 1;
        }
        entries.push_back(std::move(e));
    }

    std::uint64_t expected_offset = 0;
    for (const auto& e : entries) {
        const std::size_t n = shape_size(e.shape);
        if (e.length != n * dtype_bytes(e.dtype))
            throw PayloadBoundsError("checkpoint: tensor " + e.name +
                                     " length does not match its shape");
        if (e.offset != expected_offset)
            throw PayloadBoundsError("checkpoint: tensor " + e.name +
                                     " offset overlaps or leaves a gap");
        if (e.offset + e.length > payload_len)
            throw PayloadBoundsError("checkpoint: tensor " + e.name + " exceeds payload bounds");
        expected_offset = e.offset + e.length;

        Tensor t(e.shape);
        const std::uint8_t* src = payload + e.offset;
        if (e.dtype == StorageDtype::F64) {
            for (std::size_t i = 0; i < n; ++i) {
                const std::uint64_t u = get_u64_le(src + 8 * i);
                double d;
                std::memcpy(&d, &u, 8);
                t[i] = d;
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const std::uint32_t u = get_u32_le(src + 4 * i);
                float f;
                std::memcpy(&f, &u, 4);
                t[i] = static_cast<double>(f);
            }
        }
        data.tensors.push_back({e.name, std::move(t)});
    }
    return data;
}

void save_student_checkpoint(const std::string& path, const StudentModel& student,
                             const RunConfig& rc, StorageDtype dtype) {
    RunConfig out = rc;
    out.student.trained_targets = student.config().trained_targets;
    std::vector<NamedTensor> tensors;
    for (const auto& p : student.parameters()) tensors.push_back({p.name, *p.tensor});
    save_checkpoint(path, serialize_run_config(out), tensors, dtype);
}

LoadedStudent load_student_checkpoint(const std::string& path) {
    CheckpointData data = load_checkpoint(path);
    RunConfig rc = parse_run_config(data.config_text);
    StudentModel student = StudentModel::build(rc.student);
    ParamList params = student.parameters();
    if (params.size() != data.tensors.size())
        throw FormatError("checkpoint: has " + std::to_string(data.tensors.size()) +
                          " tensors, model needs " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const NamedTensor& nt = data.tensors[i];
        if (nt.name != params[i].name)
            throw FormatError("checkpoint: tensor '" + nt.name + "' where '" + params[i].name +
                              "' expected");
        if (nt.tensor.shape() != params[i].tensor->shape())
            throw FormatError("checkpoint: tensor " + nt.name + " has shape " +
                              nt.tensor.shape_str() + ", model expects " +
                              params[i].tensor->shape_str());
        *params[i].tensor = nt.tensor;
    }
    return LoadedStudent{std::move(student), std::move(rc)};
}

std::vector<std::uint8_t> read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path);
    return bytes;
}

void write_binary_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace layergen
