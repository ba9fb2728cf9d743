#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layergen/config.hpp"
#include "layergen/distill.hpp"
#include "layergen/tensor.hpp"

namespace layergen {

// 16-bit PCM mono WAV only; samples scaled to [-1,1) by 1/32768. Anything
// else is rejected, never resampled.
Tensor load_wav(const std::string& path);
Tensor parse_wav(const std::vector<std::uint8_t>& bytes, const std::string& origin);

struct SynthUtterance {
    Tensor wave;
    int band;  // dominant-frequency band label in [0, spec.bands)
};

// Deterministic mixture of sinusoids plus uniform noise; pure function of
// (spec, index). The dominant component (amplitude 1) sits in band
// index % spec.bands; single-component noiseless utterances are peak-aligned
// so the configured amplitude is attained exactly.
SynthUtterance synth_utterance(const SyntheticSpec& spec, std::size_t index);

// Frequency interval covered by one band, in Hz.
std::pair<double, double> band_range(const SyntheticSpec& spec, std::size_t band);

class SynthDataset : public Dataset {
public:
    SynthDataset(SyntheticSpec spec, std::size_t index_offset, std::size_t count)
        : spec_(spec), offset_(index_offset), count_(count) {}

    std::size_t size() const override { return count_; }
    Tensor wave(std::size_t i) const override { return synth_utterance(spec_, offset_ + i).wave; }
    int label(std::size_t i) const override { return synth_utterance(spec_, offset_ + i).band; }

private:
    SyntheticSpec spec_;
    std::size_t offset_;
    std::size_t count_;
};

class WavDirDataset : public Dataset {
public:
    // Files sorted by name; [skip, skip+count) of the sorted list.
    WavDirDataset(const std::string& dir, std::size_t skip, std::size_t count);
    static std::size_t file_count(const std::string& dir);

    std::size_t size() const override { return files_.size(); }
    Tensor wave(std::size_t i) const override { return load_wav(files_[i]); }

private:
    std::vector<std::string> files_;
};

}  // namespace layergen
