#include "expotion/params_io.hpp"

#include <filesystem>
#include <fstream>

#include "expotion/dataio.hpp"
#include "json.hpp"

namespace expotion {

using json = nlohmann::json;

namespace {

json load_json(const std::string& path, const std::string& what) {
    std::ifstream in(path);
    if (!in) throw io_error(what + ": cannot open " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& ex) {
        throw parse_error(what + ": " + path + ": " + ex.what());
    }
    return doc;
}

void check_not_failed(const std::string& dir) {
    if (std::filesystem::exists(dir + "/.failed"))
        throw io_error("checkpoint " + dir + " is marked failed: " +
                       read_text_file(dir + "/.failed"));
}

json config_to_json(const decoder_config& c) {
    return {{"n_layers", c.n_layers},   {"d", c.d},
            {"heads", c.heads},         {"vocab", c.vocab},
            {"prompt_len", c.prompt_len}, {"n_captions", c.n_captions},
            {"ffn_mult", c.ffn_mult},   {"t_max", c.t_max},
            {"code_rate_hz", c.code_rate_hz}};
}

decoder_config config_from_json(const json& j) {
    decoder_config c;
    try {
        c.n_layers = j.at("n_layers").get<int>();
        c.d = j.at("d").get<int>();
        c.heads = j.at("heads").get<int>();
        c.vocab = j.at("vocab").get<int>();
        c.prompt_len = j.at("prompt_len").get<int>();
        c.n_captions = j.at("n_captions").get<int>();
        c.ffn_mult = j.at("ffn_mult").get<int>();
        c.t_max = j.at("t_max").get<int>();
        c.code_rate_hz = j.at("code_rate_hz").get<double>();
    } catch (const json::exception& ex) {
        throw validation_error(std::string("checkpoint config: ") + ex.what());
    }
    c.validate();
    return c;
}

void save_checkpoint_index(const std::string& dir, const std::string& kind,
                           const decoder_config& cfg, uint64_t hash,
                           const adapter_shape_info* info) {
    json doc = {{"kind", kind},
                {"config", config_to_json(cfg)},
                {"hash", std::to_string(hash)}};
    if (info)
        doc["adapter"] = {{"n_adapted", info->n_adapted},
                          {"face_dim", info->face_dim},
                          {"motion_dim", info->motion_dim},
                          {"d1", info->d1},
                          {"d2", info->d2}};
    write_text_file(dir + "/index.json", doc.dump(2) + "\n");
}

json load_checkpoint_index(const std::string& dir, const std::string& kind) {
    check_not_failed(dir);
    json doc = load_json(dir + "/index.json", "checkpoint");
    if (!doc.is_object() || doc.value("kind", std::string()) != kind)
        throw format_error("checkpoint " + dir + " is not a " + kind + " checkpoint");
    return doc;
}

} // namespace

void save_params(const std::string& dir, const std::vector<param_ref<float>>& params) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("save_params: cannot create " + dir + ": " + ec.message());
    json index = json::array();
    for (const auto& r : params) {
        const std::string file = r.name + ".tf";
        write_tensor(dir + "/" + file, dtype_code::f32, r.shape, r.data, nullptr);
        index.push_back({{"name", r.name}, {"file", file}, {"shape", r.shape}});
    }
    write_text_file(dir + "/params.json", json{{"params", index}}.dump(2) + "\n");
}

void load_params(const std::string& dir, const std::vector<param_ref<float>>& params) {
    json doc = load_json(dir + "/params.json", "load_params");
    const json& index = doc.at("params");
    if (!index.is_array() || index.size() != params.size())
        throw format_error("load_params: index lists " + std::to_string(index.size()) +
                           " tensors, registry has " + std::to_string(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& entry = index[i];
        const std::string name = entry.at("name").get<std::string>();
        if (name != params[i].name)
            throw format_error("load_params: tensor " + std::to_string(i) + " is \"" + name +
                               "\", registry expects \"" + params[i].name + "\"");
        tensor_data t = read_tensor(dir + "/" + entry.at("file").get<std::string>());
        if (t.dtype != dtype_code::f32)
            throw format_error("load_params: " + name + " is not f32");
        if (t.shape != params[i].shape)
            throw shape_error("load_params: shape mismatch for " + name);
        std::copy(t.f32.begin(), t.f32.end(), params[i].data);
    }
}

void save_base_checkpoint(const std::string& dir, base_decoder_params<float>& base,
                          uint64_t freeze_hash) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("save_base_checkpoint: cannot create " + dir + ": " + ec.message());
    save_params(dir + "/params", collect_params(base));
    save_checkpoint_index(dir, "base", base.cfg, freeze_hash, nullptr);
}

base_decoder_params<float> load_base_checkpoint(const std::string& dir, uint64_t* freeze_hash) {
    json doc = load_checkpoint_index(dir, "base");
    decoder_config cfg = config_from_json(doc.at("config"));
    base_decoder_params<float> base = init_base_decoder<float>(cfg, 0);
    auto refs = collect_params(base);
    load_params(dir + "/params", refs);
    const uint64_t stored = std::stoull(doc.at("hash").get<std::string>());
    const uint64_t actual = param_hash(refs);
    if (stored != actual)
        throw format_error("load_base_checkpoint: content hash mismatch in " + dir);
    if (freeze_hash) *freeze_hash = stored;
    return base;
}

void save_adapter_checkpoint(const std::string& dir, adapter_params<float>& adapter,
                             const decoder_config& cfg, const adapter_shape_info& info) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw io_error("save_adapter_checkpoint: cannot create " + dir + ": " + ec.message());
    auto refs = collect_params(adapter);
    save_params(dir + "/params", refs);
    save_checkpoint_index(dir, "adapter", cfg, param_hash(refs), &info);
}

adapter_params<float> load_adapter_checkpoint(const std::string& dir, decoder_config* cfg_out,
                                              adapter_shape_info* info_out) {
    json doc = load_checkpoint_index(dir, "adapter");
    decoder_config cfg = config_from_json(doc.at("config"));
    adapter_shape_info info;
    try {
        const auto& a = doc.at("adapter");
        info.n_adapted = a.at("n_adapted").get<int>();
        info.face_dim = a.at("face_dim").get<int>();
        info.motion_dim = a.at("motion_dim").get<int>();
        info.d1 = a.at("d1").get<int>();
        info.d2 = a.at("d2").get<int>();
    } catch (const json::exception& ex) {
        throw validation_error(std::string("adapter checkpoint: ") + ex.what());
    }
    adapter_params<float> adapter = init_adapter<float>(cfg, info.n_adapted, info.face_dim,
                                                        info.motion_dim, info.d1, info.d2, 0);
    auto refs = collect_params(adapter);
    load_params(dir + "/params", refs);
    const uint64_t stored = std::stoull(doc.at("hash").get<std::string>());
    if (stored != param_hash(refs))
        throw format_error("load_adapter_checkpoint: content hash mismatch in " + dir);
    if (cfg_out) *cfg_out = cfg;
    if (info_out) *info_out = info;
    return adapter;
}

void mark_checkpoint_failed(const std::string& dir, const std::string& reason) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (!ec) write_text_file(dir + "/.failed", reason + "\n");
}

} // namespace expotion
