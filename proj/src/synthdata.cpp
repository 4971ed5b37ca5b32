#include "expotion/synthdata.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "expotion/rng.hpp"
#include "json.hpp"

namespace expotion {

using json = nlohmann::json;

void synth_spec::validate() const {
    if (n_clips < 0) throw validation_error("synth_spec: n_clips must be >= 0");
    if (duration_s <= 0.0) throw validation_error("synth_spec: duration_s must be > 0");
    if (feature_rate_hz <= 0.0 || code_rate_hz <= 0.0)
        throw validation_error("synth_spec: rates must be > 0");
    if (!(bpm_lo > 30.0 && bpm_hi < 300.0 && bpm_lo <= bpm_hi))
        throw validation_error("synth_spec: bpm_range must lie within (30, 300), got [" +
                               std::to_string(bpm_lo) + ", " + std::to_string(bpm_hi) + "]");
    if (n_captions < 1) throw validation_error("synth_spec: n_captions must be >= 1");
    if (face_dim < 1 || motion_dim < 2)
        throw validation_error("synth_spec: face_dim >= 1 and motion_dim >= 2 required");
    if (flow_h < 3 || flow_w < 3)
        throw validation_error("synth_spec: flow grid must be at least 3x3");
}

namespace {

const std::set<std::string> kSpecKeys = {
    "n_clips",   "duration_s", "feature_rate_hz", "code_rate_hz", "bpm_range",
    "n_captions", "seed",      "face_dim",        "motion_dim",   "flow_grid"};

} // namespace

synth_spec load_synth_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("load_synth_spec: cannot open " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& ex) {
        throw parse_error("load_synth_spec: " + path + ": " + ex.what());
    }
    if (!doc.is_object()) throw validation_error("synth_spec: top level must be an object");
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (!kSpecKeys.count(it.key()))
            throw validation_error("synth_spec: unknown key \"" + it.key() + "\"");
    synth_spec s;
    try {
        if (doc.contains("n_clips")) s.n_clips = doc["n_clips"].get<int>();
        if (doc.contains("duration_s")) s.duration_s = doc["duration_s"].get<double>();
        if (doc.contains("feature_rate_hz"))
            s.feature_rate_hz = doc["feature_rate_hz"].get<double>();
        if (doc.contains("code_rate_hz")) s.code_rate_hz = doc["code_rate_hz"].get<double>();
        if (doc.contains("bpm_range")) {
            auto r = doc["bpm_range"];
            if (!r.is_array() || r.size() != 2)
                throw validation_error("synth_spec: bpm_range must be [lo, hi]");
            s.bpm_lo = r[0].get<double>();
            s.bpm_hi = r[1].get<double>();
        }
        if (doc.contains("n_captions")) s.n_captions = doc["n_captions"].get<int>();
        if (doc.contains("seed")) s.seed = doc["seed"].get<uint64_t>();
        if (doc.contains("face_dim")) s.face_dim = doc["face_dim"].get<int>();
        if (doc.contains("motion_dim")) s.motion_dim = doc["motion_dim"].get<int>();
        if (doc.contains("flow_grid")) {
            auto g = doc["flow_grid"];
            if (!g.is_array() || g.size() != 2)
                throw validation_error("synth_spec: flow_grid must be [h, w]");
            s.flow_h = g[0].get<int>();
            s.flow_w = g[1].get<int>();
        }
    } catch (const json::exception& ex) {
        throw validation_error(std::string("synth_spec: ") + ex.what());
    }
    s.validate();
    return s;
}

void save_synth_spec(const std::string& path, const synth_spec& s) {
    json doc = {{"n_clips", s.n_clips},
                {"duration_s", s.duration_s},
                {"feature_rate_hz", s.feature_rate_hz},
                {"code_rate_hz", s.code_rate_hz},
                {"bpm_range", {s.bpm_lo, s.bpm_hi}},
                {"n_captions", s.n_captions},
                {"seed", s.seed},
                {"face_dim", s.face_dim},
                {"motion_dim", s.motion_dim},
                {"flow_grid", {s.flow_h, s.flow_w}}};
    write_text_file(path, doc.dump(2) + "\n");
}

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double intensity_at(double t, double slow_hz, double phase) {
    return 0.5 + 0.4 * std::sin(kTwoPi * slow_hz * t + phase);
}

} // namespace

synth_clip generate_clip(const synth_spec& spec, uint64_t clip_seed, double bpm,
                         int caption_id) {
    spec.validate();
    if (bpm < spec.bpm_lo || bpm > spec.bpm_hi)
        throw validation_error("generate_clip: bpm " + std::to_string(bpm) +
                               " outside spec range");
    if (caption_id < 0 || caption_id >= spec.n_captions)
        throw validation_error("generate_clip: caption_id out of range");

    const int n_feat = int(std::lround(spec.duration_s * spec.feature_rate_hz));
    const int n_codes = int(std::lround(spec.duration_s * spec.code_rate_hz));
    const double beat_hz = bpm / 60.0;

    synth_clip clip;
    clip.bpm = bpm;
    clip.caption_id = caption_id;

    Rng face_rng(mix_seed(clip_seed, 1));
    Rng motion_rng(mix_seed(clip_seed, 2));
    Rng token_rng(mix_seed(clip_seed, 3));
    Rng phase_rng(mix_seed(clip_seed, 4));
    const double slow_hz = phase_rng.uniform(0.05, 0.12);
    const double slow_phase = phase_rng.uniform(0.0, kTwoPi);

    clip.motion.frames = Mat<float>(n_feat, spec.motion_dim);
    clip.motion.rate_hz = spec.feature_rate_hz;
    clip.motion.tag = source_tag::motion_ctx;
    for (int j = 0; j < n_feat; ++j) {
        const double t = j / spec.feature_rate_hz;
        float* row = clip.motion.frames.row(j);
        row[0] = float(std::cos(kTwoPi * beat_hz * t) + 0.1 * motion_rng.normal());
        row[1] = float(std::sin(kTwoPi * beat_hz * t) + 0.1 * motion_rng.normal());
        for (int k = 2; k < spec.motion_dim; ++k) row[k] = float(0.5 * motion_rng.normal());
    }

    clip.face.frames = Mat<float>(n_feat, spec.face_dim);
    clip.face.rate_hz = spec.feature_rate_hz;
    clip.face.tag = source_tag::face;
    for (int j = 0; j < n_feat; ++j) {
        const double t = j / spec.feature_rate_hz;
        const double level = intensity_at(t, slow_hz, slow_phase);
        float* row = clip.face.frames.row(j);
        for (int k = 0; k < spec.face_dim; ++k)
            row[k] = float(level + 0.1 * face_rng.normal());
    }

    const double period = 60.0 / bpm;
    for (int k = 0; k * period < spec.duration_s; ++k) clip.beat_times_s.push_back(k * period);

    clip.tokens.rate_hz = spec.code_rate_hz;
    clip.tokens.codes.assign(size_t(n_codes), kRestCode);
    const int band = caption_band_start(caption_id);
    for (int j = 0; j < n_codes; ++j) {
        const double t = j / spec.code_rate_hz;
        const double fill = 0.2 + 0.6 * intensity_at(t, slow_hz, slow_phase);
        if (token_rng.uniform() < fill)
            clip.tokens.codes[size_t(j)] = band + token_rng.uniform_int(kCaptionBandWidth);
    }
    for (double bt : clip.beat_times_s) {
        int idx = int(std::lround(bt * spec.code_rate_hz));
        if (idx >= n_codes) continue;
        clip.tokens.codes[size_t(idx)] = kBeatMarkerCode;
        if (clip.tokens.beat_frame_indices.empty() ||
            clip.tokens.beat_frame_indices.back() < idx)
            clip.tokens.beat_frame_indices.push_back(idx);
    }
    return clip;
}

clip_manifest generate_dataset(const synth_spec& spec, const std::string& out_dir) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw io_error("generate_dataset: cannot create " + out_dir + ": " + ec.message());

    std::vector<clip_manifest_entry> entries;
    for (int i = 0; i < spec.n_clips; ++i) {
        const uint64_t clip_seed = mix_seed(spec.seed, uint64_t(i));
        const double bpm = spec.bpm_lo + (spec.bpm_hi - spec.bpm_lo) *
                                             Rng(mix_seed(clip_seed, 0)).uniform();
        const int caption_id = i % spec.n_captions;
        synth_clip clip = generate_clip(spec, clip_seed, bpm, caption_id);

        char name[32];
        std::snprintf(name, sizeof(name), "clip_%04d", i);
        clip.clip_id = name;

        clip_manifest_entry e;
        e.clip_id = clip.clip_id;
        e.duration_s = spec.duration_s;
        e.face_path = clip.clip_id + ".face.tf";
        e.motion_path = clip.clip_id + ".motion.tf";
        e.token_path = clip.clip_id + ".tokens.tf";
        e.caption_id = caption_id;
        e.tempo_bpm = bpm;
        e.beat_times_s = clip.beat_times_s;

        const std::string base = out_dir + "/";
        write_matrix(base + e.face_path, clip.face.frames);
        write_matrix(base + e.motion_path, clip.motion.frames);
        write_tokens(base + e.token_path, clip.tokens);
        entries.push_back(std::move(e));
    }
    const std::string manifest_path = out_dir + "/manifest.json";
    save_manifest(manifest_path, entries);
    return load_manifest(manifest_path);
}

Tensor3<float> generate_flow_field(int h, int w, double phase, uint64_t seed) {
    if (h < 3 || w < 3) throw shape_error("generate_flow_field: grid must be at least 3x3");
    Rng rng(mix_seed(seed, 5));
    Tensor3<float> f(h, w, 2);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dy = y - cy, dx = x - cx;
            f.at(y, x, 0) = float(std::cos(phase) * dx - std::sin(phase) * dy +
                                  0.05 * rng.normal());
            f.at(y, x, 1) = float(std::sin(phase) * dx + std::cos(phase) * dy +
                                  0.05 * rng.normal());
        }
    return f;
}

} // namespace expotion
