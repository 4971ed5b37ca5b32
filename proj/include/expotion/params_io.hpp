#ifndef EXPOTION_PARAMS_IO_HPP
#define EXPOTION_PARAMS_IO_HPP

#include <string>
#include <vector>

#include "expotion/adaptor.hpp"
#include "expotion/decoder.hpp"
#include "expotion/params.hpp"

namespace expotion {

// One TensorFile per parameter under dir/, plus params.json mapping
// name -> file -> shape in registry order.
void save_params(const std::string& dir, const std::vector<param_ref<float>>& params);

// Fills an existing registry in place; names, order and shapes must match the
// index exactly.
void load_params(const std::string& dir, const std::vector<param_ref<float>>& params);

// Checkpoint layout: params/ directory + index.json carrying the model config
// and the content hash, verified on load. A ".failed" marker in the directory
// makes the checkpoint unloadable.
void save_base_checkpoint(const std::string& dir, base_decoder_params<float>& base,
                          uint64_t freeze_hash);
base_decoder_params<float> load_base_checkpoint(const std::string& dir,
                                                uint64_t* freeze_hash = nullptr);

struct adapter_shape_info {
    int n_adapted = 4;
    int face_dim = 768;
    int motion_dim = 256;
    int d1 = 12;
    int d2 = 12;
};

void save_adapter_checkpoint(const std::string& dir, adapter_params<float>& adapter,
                             const decoder_config& cfg, const adapter_shape_info& info);
adapter_params<float> load_adapter_checkpoint(const std::string& dir, decoder_config* cfg_out,
                                              adapter_shape_info* info_out);

void mark_checkpoint_failed(const std::string& dir, const std::string& reason);

} // namespace expotion

#endif
