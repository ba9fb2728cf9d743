#include "layergen/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "layergen/checkpoint.hpp"
#include "layergen/errors.hpp"
#include "layergen/prng.hpp"

namespace layergen {

// ---- WAV ingestion ---------------------------------------------------------

namespace {

std::uint32_t rd_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

Tensor parse_wav(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw UnsupportedFormatError("wav: not a RIFF/WAVE file: " + origin);

    bool have_fmt = false;
    std::uint16_t audio_format = 0, channels = 0, bits = 0;
    const std::uint8_t* data_chunk = nullptr;
    std::uint32_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* cid = reinterpret_cast<const char*>(bytes.data() + pos);
        const std::uint32_t clen = rd_u32(bytes.data() + pos + 4);
        if (pos + 8 + clen > bytes.size())
            throw UnsupportedFormatError("wav: truncated chunk '" + std::string(cid, 4) + "': " +
                                         origin);
        if (std::memcmp(cid, "fmt ", 4) == 0) {
            if (clen < 16) throw UnsupportedFormatError("wav: short fmt chunk: " + origin);
            const std::uint8_t* f = bytes.data() + pos + 8;
            audio_format = rd_u16(f);
            channels = rd_u16(f + 2);
            bits = rd_u16(f + 14);
            have_fmt = true;
        } else if (std::memcmp(cid, "data", 4) == 0) {
            data_chunk = bytes.data() + pos + 8;
            data_len = clen;
        }
        pos += 8 + clen + (clen & 1);  // chunks are word-aligned
    }
    if (!have_fmt) throw UnsupportedFormatError("wav: missing fmt chunk: " + origin);
    if (audio_format != 1)
        throw UnsupportedFormatError("wav: audio format " + std::to_string(audio_format) +
                                     " is not PCM: " + origin);
    if (channels != 1)
        throw UnsupportedFormatError("wav: channels = " + std::to_string(channels) +
                                     ", only mono supported: " + origin);
    if (bits != 16)
        throw UnsupportedFormatError("wav: bits per sample = " + std::to_string(bits) +
                                     ", only 16-bit supported: " + origin);
    if (!data_chunk) throw UnsupportedFormatError("wav: missing data chunk: " + origin);

    const std::size_t n = data_len / 2;
    if (n == 0) throw UnsupportedFormatError("wav: empty data chunk: " + origin);
    Tensor wave({n});
    for (std::size_t i = 0; i < n; ++i) {
        const std::int16_t s =
            static_cast<std::int16_t>(rd_u16(data_chunk + 2 * i));
        wave[i] = static_cast<double>(s) / 32768.0;
    }
    return wave;
}

Tensor load_wav(const std::string& path) { return parse_wav(read_binary_file(path), path); }

// ---- synthesis -----------------------------------------------------------------

std::pair<double, double> band_range(const SyntheticSpec& spec, std::size_t band) {
    const double nyquist = static_cast<double>(spec.sample_rate) / 2.0;
    const double lo_frac = 0.05, hi_frac = 0.85;
    const double width = (hi_frac - lo_frac) / static_cast<double>(spec.bands);
    const double lo = nyquist * (lo_frac + width * static_cast<double>(band));
    return {lo, lo + nyquist * width};
}

SynthUtterance synth_utterance(const SyntheticSpec& spec, std::size_t index) {
    if (spec.bands < 1) throw ConfigError("synth: bands must be >= 1");
    if (spec.min_samples < 1 || spec.max_samples < spec.min_samples)
        throw ConfigError("synth: bad sample-length range");
    Prng rng = Prng(spec.seed).split("utt").split(index);
    const std::size_t len =
        spec.min_samples + rng.index(spec.max_samples - spec.min_samples + 1);
    const int band = static_cast<int>(index % spec.bands);

    const auto [f_lo, f_hi] = band_range(spec, static_cast<std::size_t>(band));
    const double sr = static_cast<double>(spec.sample_rate);
    const double two_pi = 6.283185307179586;

    struct Component {
        double amp, freq, phase;
    };
    std::vector<Component> comps;
    const double dom_freq = rng.uniform(f_lo, f_hi);
    const bool single_pure = spec.components == 1 && spec.noise == 0.0;
    // Peak alignment puts one sample exactly on the crest.
    const double dom_phase =
        single_pure ? two_pi / 4.0 - two_pi * dom_freq * std::floor(len / 2.0) / sr
                    : rng.uniform(0.0, two_pi);
    comps.push_back({1.0, dom_freq, dom_phase});
    const double nyquist = sr / 2.0;
    for (std::size_t c = 1; c < spec.components; ++c)
        comps.push_back({rng.uniform(0.1, 0.45), rng.uniform(0.05 * nyquist, 0.85 * nyquist),
                         rng.uniform(0.0, two_pi)});

    Tensor wave({len});
    for (std::size_t t = 0; t < len; ++t) {
        double v = 0.0;
        for (const auto& c : comps)
            v += c.amp * std::sin(two_pi * c.freq * static_cast<double>(t) / sr + c.phase);
        wave[t] = v;
    }
    if (spec.noise > 0.0)
        for (std::size_t t = 0; t < len; ++t) wave[t] += spec.noise * rng.uniform(-1.0, 1.0);
    return SynthUtterance{std::move(wave), band};
}

// ---- wav directory ----------------------------------------------------------------

namespace {

std::vector<std::string> wav_files_sorted(const std::string& dir) {
    std::vector<std::string> files;
    std::error_code ec;
    for (const auto& e : std::filesystem::directory_iterator(dir, ec)) {
        if (e.is_regular_file() && e.path().extension() == ".wav")
            files.push_back(e.path().string());
    }
    if (ec) throw IoError("cannot list directory: " + dir);
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

WavDirDataset::WavDirDataset(const std::string& dir, std::size_t skip, std::size_t count) {
    std::vector<std::string> all = wav_files_sorted(dir);
    if (skip + count > all.size())
        throw IoError("wav dir " + dir + " has " + std::to_string(all.size()) +
                      " files, need " + std::to_string(skip + count));
    files_.assign(all.begin() + static_cast<std::ptrdiff_t>(skip),
                  all.begin() + static_cast<std::ptrdiff_t>(skip + count));
}

std::size_t WavDirDataset::file_count(const std::string& dir) {
    return wav_files_sorted(dir).size();
}

}  // namespace layergen
