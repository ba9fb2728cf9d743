#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layergen/config.hpp"
#include "layergen/models.hpp"
#include "layergen/tensor.hpp"

namespace layergen {

// Checkpoint container layout:
//   "GDST" | u32 LE version=1 | u64 LE header length | UTF-8 header | payload
// The header is the serialized run config followed by a "%%manifest" line and
// one "<name> <dtype> <dims> <offset> <length>" line per tensor. Offsets are
// relative to the payload start; tensors are packed little-endian in manifest
// order.
enum class StorageDtype { F64, F32 };

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct CheckpointData {
    std::string config_text;
    std::vector<NamedTensor> tensors;  // manifest order
};

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<NamedTensor>& tensors,
                     StorageDtype dtype = StorageDtype::F64);

CheckpointData load_checkpoint(const std::string& path);

// Student-level wrappers: tensors are the student parameters; the embedded
// config reproduces the whole run.
void save_student_checkpoint(const std::string& path, const StudentModel& student,
                             const RunConfig& rc, StorageDtype dtype = StorageDtype::F64);

struct LoadedStudent {
    StudentModel student;
    RunConfig config;
};
LoadedStudent load_student_checkpoint(const std::string& path);

std::vector<std::uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace layergen
