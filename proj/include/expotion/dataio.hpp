#ifndef EXPOTION_DATAIO_HPP
#define EXPOTION_DATAIO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "expotion/errors.hpp"
#include "expotion/mat.hpp"
#include "expotion/tokens.hpp"

namespace expotion {

// --- Tensor files -----------------------------------------------------------
//
// Binary layout: magic "EXPT", version byte 1, dtype byte (f32=1, i32=2),
// rank byte, rank little-endian u32 dims, then the row-major payload in
// little-endian. Floats are always stored as 32-bit.

enum class dtype_code : uint8_t { f32 = 1, i32 = 2 };

struct tensor_data {
    dtype_code dtype;
    std::vector<uint32_t> shape;
    std::vector<float> f32;
    std::vector<int32_t> i32;

    uint64_t element_count() const {
        uint64_t n = 1;
        for (uint32_t d : shape) n *= d;
        return n;
    }
};

void write_tensor(const std::string& path, dtype_code dtype, const std::vector<uint32_t>& shape,
                  const float* fvals, const int32_t* ivals);
tensor_data read_tensor(const std::string& path);

void write_tensor_f32(const std::string& path, const std::vector<uint32_t>& shape,
                      const std::vector<float>& values);
void write_tensor_i32(const std::string& path, const std::vector<uint32_t>& shape,
                      const std::vector<int32_t>& values);

void write_matrix(const std::string& path, const Mat<float>& m);
Mat<float> read_matrix(const std::string& path);

void write_tokens(const std::string& path, const token_sequence& seq);
token_sequence read_tokens(const std::string& path, double rate_hz);

// --- Clip manifests ---------------------------------------------------------

struct clip_manifest_entry {
    std::string clip_id;
    double duration_s = 0.0;
    std::string face_path;
    std::string motion_path;
    std::string token_path;
    int caption_id = 0;
    double tempo_bpm = 0.0;
    std::vector<double> beat_times_s;
};

struct clip_manifest {
    std::string root_dir; // directory of the manifest file; paths resolve against it
    std::vector<clip_manifest_entry> entries;

    std::string resolve(const std::string& rel) const;
};

clip_manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<clip_manifest_entry>& entries);

// --- Run configuration ------------------------------------------------------

struct run_config {
    // model
    int d = 256;
    int n_layers = 8;
    int n_adapted_layers = 4;
    int heads = 4;
    int vocab = 256;
    int d1 = 12;
    int d2 = 12;
    int t_max = 512;
    int prompt_len = 8;
    int n_captions = 4;
    int ffn_mult = 4;
    double code_rate_hz = 50.0;
    int face_dim = 768;
    int motion_dim = 256;
    // adapter training
    double learning_rate = 1e-2;
    int batch_size = 10;
    int epochs = 40;
    double grad_clip = 1.0; // 0 disables clipping
    uint64_t seed = 7;
    // base pretraining
    int pretrain_steps = 200;
    double pretrain_lr = 1e-3;
    // generation
    double temperature = 1.0;

    void validate() const;
};

run_config load_run_config(const std::string& path);
void save_run_config(const std::string& path, const run_config& cfg);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

} // namespace expotion

#endif
