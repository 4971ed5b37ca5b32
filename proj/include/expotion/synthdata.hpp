#ifndef EXPOTION_SYNTHDATA_HPP
#define EXPOTION_SYNTHDATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "expotion/alignment.hpp"
#include "expotion/dataio.hpp"
#include "expotion/tokens.hpp"

namespace expotion {

struct synth_spec {
    int n_clips = 16;
    double duration_s = 10.0;
    double feature_rate_hz = 5.0;
    double code_rate_hz = 50.0;
    double bpm_lo = 80.0;
    double bpm_hi = 160.0;
    int n_captions = 4;
    uint64_t seed = 7;
    int face_dim = 768;
    int motion_dim = 256;
    int flow_h = 16;
    int flow_w = 16;

    void validate() const;
};

synth_spec load_synth_spec(const std::string& path);
void save_synth_spec(const std::string& path, const synth_spec& spec);

struct synth_clip {
    std::string clip_id;
    feature_sequence<float> face;
    feature_sequence<float> motion;
    token_sequence tokens;
    std::vector<double> beat_times_s;
    double bpm = 0.0;
    int caption_id = 0;
};

// Pure per (spec, clip_seed, bpm, caption_id). Motion channels 0/1 carry the
// beat as a quadrature pair at bpm/60 Hz; face channels broadcast a slow
// intensity curve; tokens mark beats with the reserved code and fill the rest
// from the caption's band at a density driven by the intensity.
synth_clip generate_clip(const synth_spec& spec, uint64_t clip_seed, double bpm,
                         int caption_id);

// Writes n_clips clips (tensor files + manifest.json) under out_dir and
// returns the manifest reloaded through the validating parser.
clip_manifest generate_dataset(const synth_spec& spec, const std::string& out_dir);

// Small swirling displacement grid for exercising the flow embedder.
Tensor3<float> generate_flow_field(int h, int w, double phase, uint64_t seed);

} // namespace expotion

#endif
