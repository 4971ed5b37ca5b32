#include "expotion/dataio.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "tensor file i/o assumes a little-endian host");

namespace expotion {

namespace {

constexpr char kMagic[4] = {'E', 'X', 'P', 'T'};
constexpr uint8_t kVersion = 1;
constexpr int kMaxRank = 4;

void put_u32(std::ostream& out, uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.write(b, 4);
}

uint32_t get_u32(std::istream& in) {
    char b[4];
    in.read(b, 4);
    uint32_t v;
    std::memcpy(&v, b, 4);
    return v;
}

void check_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                        const std::string& what) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw validation_error(what + ": unknown key \"" + it.key() + "\"");
}

} // namespace

void write_tensor(const std::string& path, dtype_code dtype, const std::vector<uint32_t>& shape,
                  const float* fvals, const int32_t* ivals) {
    if (shape.empty() || shape.size() > kMaxRank)
        throw format_error("write_tensor: rank must be in [1, " + std::to_string(kMaxRank) +
                           "], got " + std::to_string(shape.size()));
    uint64_t n = 1;
    for (uint32_t d : shape) {
        if (d == 0) throw format_error("write_tensor: dimension must be >= 1");
        n *= d;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("write_tensor: cannot open " + path);
    out.write(kMagic, 4);
    out.put(static_cast<char>(kVersion));
    out.put(static_cast<char>(dtype));
    out.put(static_cast<char>(shape.size()));
    for (uint32_t d : shape) put_u32(out, d);
    if (dtype == dtype_code::f32)
        out.write(reinterpret_cast<const char*>(fvals), std::streamsize(n * 4));
    else
        out.write(reinterpret_cast<const char*>(ivals), std::streamsize(n * 4));
    if (!out) throw io_error("write_tensor: write failed for " + path);
}

tensor_data read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("read_tensor: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw bad_magic_error("read_tensor: bad magic in " + path);
    int version = in.get();
    if (version != kVersion)
        throw unsupported_version_error("read_tensor: version " + std::to_string(version) +
                                        " in " + path + ", expected " + std::to_string(kVersion));
    int dtype_byte = in.get();
    if (dtype_byte != int(dtype_code::f32) && dtype_byte != int(dtype_code::i32))
        throw unknown_dtype_error("read_tensor: unknown dtype code " + std::to_string(dtype_byte) +
                                  " in " + path);
    int rank = in.get();
    if (rank < 1 || rank > kMaxRank)
        throw format_error("read_tensor: bad rank " + std::to_string(rank) + " in " + path);

    tensor_data t;
    t.dtype = static_cast<dtype_code>(dtype_byte);
    t.shape.resize(rank);
    for (int i = 0; i < rank; ++i) {
        t.shape[i] = get_u32(in);
        if (!in) throw truncation_error("read_tensor: truncated header in " + path);
        if (t.shape[i] == 0) throw format_error("read_tensor: zero dimension in " + path);
    }
    uint64_t n = t.element_count();
    uint64_t want = n * 4;
    std::vector<char> payload(want);
    in.read(payload.data(), std::streamsize(want));
    uint64_t got = static_cast<uint64_t>(in.gcount());
    if (got != want)
        throw truncation_error("read_tensor: " + path + " truncated, expected " +
                               std::to_string(want) + " payload bytes, found " +
                               std::to_string(got));
    if (t.dtype == dtype_code::f32) {
        t.f32.resize(n);
        std::memcpy(t.f32.data(), payload.data(), want);
    } else {
        t.i32.resize(n);
        std::memcpy(t.i32.data(), payload.data(), want);
    }
    return t;
}

void write_tensor_f32(const std::string& path, const std::vector<uint32_t>& shape,
                      const std::vector<float>& values) {
    uint64_t n = 1;
    for (uint32_t d : shape) n *= d;
    if (shape.empty() || n != values.size())
        throw format_error("write_tensor_f32: shape/value count mismatch for " + path);
    write_tensor(path, dtype_code::f32, shape, values.data(), nullptr);
}

void write_tensor_i32(const std::string& path, const std::vector<uint32_t>& shape,
                      const std::vector<int32_t>& values) {
    uint64_t n = 1;
    for (uint32_t d : shape) n *= d;
    if (shape.empty() || n != values.size())
        throw format_error("write_tensor_i32: shape/value count mismatch for " + path);
    write_tensor(path, dtype_code::i32, shape, nullptr, values.data());
}

void write_matrix(const std::string& path, const Mat<float>& m) {
    write_tensor_f32(path, {uint32_t(m.rows), uint32_t(m.cols)}, m.data);
}

Mat<float> read_matrix(const std::string& path) {
    tensor_data t = read_tensor(path);
    if (t.dtype != dtype_code::f32 || t.shape.size() != 2)
        throw format_error("read_matrix: " + path + " is not a rank-2 f32 tensor");
    Mat<float> m(int(t.shape[0]), int(t.shape[1]));
    m.data = std::move(t.f32);
    return m;
}

void write_tokens(const std::string& path, const token_sequence& seq) {
    std::vector<int32_t> v(seq.codes.begin(), seq.codes.end());
    write_tensor_i32(path, {uint32_t(v.size())}, v);
}

token_sequence read_tokens(const std::string& path, double rate_hz) {
    tensor_data t = read_tensor(path);
    if (t.dtype != dtype_code::i32 || t.shape.size() != 1)
        throw format_error("read_tokens: " + path + " is not a rank-1 i32 tensor");
    token_sequence seq;
    seq.rate_hz = rate_hz;
    seq.codes.assign(t.i32.begin(), t.i32.end());
    return seq;
}

std::string clip_manifest::resolve(const std::string& rel) const {
    return (fs::path(root_dir) / rel).string();
}

namespace {

void validate_entry(const clip_manifest_entry& e, const std::string& root) {
    auto fail = [&](const std::string& field, const std::string& msg) {
        throw validation_error("manifest clip \"" + e.clip_id + "\" field " + field + ": " + msg);
    };
    if (e.clip_id.empty()) throw validation_error("manifest entry with empty clip_id");
    if (e.duration_s <= 0.0) fail("duration_s", "must be > 0");
    if (e.tempo_bpm <= 0.0) fail("tempo_bpm", "must be > 0");
    if (e.caption_id < 0) fail("caption_id", "must be >= 0");
    for (size_t i = 0; i < e.beat_times_s.size(); ++i) {
        double b = e.beat_times_s[i];
        if (b < 0.0 || b > e.duration_s) fail("beat_times_s", "beat outside [0, duration]");
        if (i > 0 && e.beat_times_s[i - 1] >= b)
            fail("beat_times_s", "beats must be strictly increasing");
    }
    for (const auto& [field, rel] :
         {std::pair{"face_path", e.face_path}, {"motion_path", e.motion_path},
          {"token_path", e.token_path}}) {
        fs::path p = fs::path(root) / rel;
        if (!fs::exists(p)) fail(field, "file not found: " + p.string());
        read_tensor(p.string()); // parse errors propagate with the file's path
    }
}

} // namespace

clip_manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("load_manifest: cannot open " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& ex) {
        throw parse_error("load_manifest: " + path + ": " + ex.what());
    }
    if (!doc.is_array()) throw validation_error("load_manifest: top level must be an array");

    clip_manifest man;
    man.root_dir = fs::path(path).parent_path().string();
    if (man.root_dir.empty()) man.root_dir = ".";
    const std::set<std::string> allowed = {"clip_id",    "duration_s", "face_path",
                                           "motion_path", "token_path", "caption_id",
                                           "tempo_bpm",  "beat_times_s"};
    for (const auto& j : doc) {
        if (!j.is_object()) throw validation_error("load_manifest: entry is not an object");
        check_unknown_keys(j, allowed, "manifest entry");
        clip_manifest_entry e;
        try {
            e.clip_id = j.at("clip_id").get<std::string>();
            e.duration_s = j.at("duration_s").get<double>();
            e.face_path = j.at("face_path").get<std::string>();
            e.motion_path = j.at("motion_path").get<std::string>();
            e.token_path = j.at("token_path").get<std::string>();
            e.caption_id = j.at("caption_id").get<int>();
            e.tempo_bpm = j.at("tempo_bpm").get<double>();
            e.beat_times_s = j.at("beat_times_s").get<std::vector<double>>();
        } catch (const json::exception& ex) {
            throw validation_error(std::string("manifest entry invalid: ") + ex.what());
        }
        validate_entry(e, man.root_dir);
        man.entries.push_back(std::move(e));
    }
    return man;
}

void save_manifest(const std::string& path, const std::vector<clip_manifest_entry>& entries) {
    json doc = json::array();
    for (const auto& e : entries) {
        doc.push_back({{"clip_id", e.clip_id},
                       {"duration_s", e.duration_s},
                       {"face_path", e.face_path},
                       {"motion_path", e.motion_path},
                       {"token_path", e.token_path},
                       {"caption_id", e.caption_id},
                       {"tempo_bpm", e.tempo_bpm},
                       {"beat_times_s", e.beat_times_s}});
    }
    write_text_file(path, doc.dump(2) + "\n");
}

void run_config::validate() const {
    auto check = [](bool ok, const std::string& msg) {
        if (!ok) throw validation_error("run_config: " + msg);
    };
    check(d >= 1 && n_layers >= 1 && heads >= 1 && vocab > kFirstFreeCode, "bad model dims");
    check(d % heads == 0, "d must be divisible by heads");
    check(n_adapted_layers >= 1 && n_adapted_layers <= n_layers,
          "n_adapted_layers must be in [1, n_layers]");
    check(d1 >= 1 && d2 >= 1 && face_dim >= d1 && motion_dim >= d2,
          "projection dims must satisfy d' <= D");
    check(t_max >= 1 && prompt_len >= 1 && n_captions >= 1 && ffn_mult >= 1, "bad table sizes");
    check(code_rate_hz > 0.0, "code_rate_hz must be > 0");
    check(learning_rate > 0.0 && pretrain_lr > 0.0, "learning rates must be > 0");
    check(batch_size >= 1 && epochs >= 0 && pretrain_steps >= 0, "bad training sizes");
    check(grad_clip >= 0.0, "grad_clip must be >= 0");
    check(temperature >= 0.0, "temperature must be >= 0");
    check(vocab * 1.0 > n_captions * 16.0 + kFirstFreeCode,
          "vocab too small for per-caption code bands");
}

namespace {

const std::set<std::string> kConfigKeys = {
    "d",          "n_layers",     "n_adapted_layers", "heads",       "vocab",
    "d1",         "d2",           "t_max",            "prompt_len",  "n_captions",
    "ffn_mult",   "code_rate_hz", "face_dim",         "motion_dim",  "learning_rate",
    "batch_size", "epochs",       "grad_clip",        "seed",        "pretrain_steps",
    "pretrain_lr", "temperature"};

} // namespace

run_config load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("load_run_config: cannot open " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& ex) {
        throw parse_error("load_run_config: " + path + ": " + ex.what());
    }
    if (!doc.is_object()) throw validation_error("run_config: top level must be an object");
    check_unknown_keys(doc, kConfigKeys, "run_config");
    run_config c;
    try {
        if (doc.contains("d")) c.d = doc["d"].get<int>();
        if (doc.contains("n_layers")) c.n_layers = doc["n_layers"].get<int>();
        if (doc.contains("n_adapted_layers"))
            c.n_adapted_layers = doc["n_adapted_layers"].get<int>();
        if (doc.contains("heads")) c.heads = doc["heads"].get<int>();
        if (doc.contains("vocab")) c.vocab = doc["vocab"].get<int>();
        if (doc.contains("d1")) c.d1 = doc["d1"].get<int>();
        if (doc.contains("d2")) c.d2 = doc["d2"].get<int>();
        if (doc.contains("t_max")) c.t_max = doc["t_max"].get<int>();
        if (doc.contains("prompt_len")) c.prompt_len = doc["prompt_len"].get<int>();
        if (doc.contains("n_captions")) c.n_captions = doc["n_captions"].get<int>();
        if (doc.contains("ffn_mult")) c.ffn_mult = doc["ffn_mult"].get<int>();
        if (doc.contains("code_rate_hz")) c.code_rate_hz = doc["code_rate_hz"].get<double>();
        if (doc.contains("face_dim")) c.face_dim = doc["face_dim"].get<int>();
        if (doc.contains("motion_dim")) c.motion_dim = doc["motion_dim"].get<int>();
        if (doc.contains("learning_rate")) c.learning_rate = doc["learning_rate"].get<double>();
        if (doc.contains("batch_size")) c.batch_size = doc["batch_size"].get<int>();
        if (doc.contains("epochs")) c.epochs = doc["epochs"].get<int>();
        if (doc.contains("grad_clip")) c.grad_clip = doc["grad_clip"].get<double>();
        if (doc.contains("seed")) c.seed = doc["seed"].get<uint64_t>();
        if (doc.contains("pretrain_steps")) c.pretrain_steps = doc["pretrain_steps"].get<int>();
        if (doc.contains("pretrain_lr")) c.pretrain_lr = doc["pretrain_lr"].get<double>();
        if (doc.contains("temperature")) c.temperature = doc["temperature"].get<double>();
    } catch (const json::exception& ex) {
        throw validation_error(std::string("run_config: ") + ex.what());
    }
    c.validate();
    return c;
}

void save_run_config(const std::string& path, const run_config& c) {
    json doc = {{"d", c.d},
                {"n_layers", c.n_layers},
                {"n_adapted_layers", c.n_adapted_layers},
                {"heads", c.heads},
                {"vocab", c.vocab},
                {"d1", c.d1},
                {"d2", c.d2},
                {"t_max", c.t_max},
                {"prompt_len", c.prompt_len},
                {"n_captions", c.n_captions},
                {"ffn_mult", c.ffn_mult},
                {"code_rate_hz", c.code_rate_hz},
                {"face_dim", c.face_dim},
                {"motion_dim", c.motion_dim},
                {"learning_rate", c.learning_rate},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"grad_clip", c.grad_clip},
                {"seed", c.seed},
                {"pretrain_steps", c.pretrain_steps},
                {"pretrain_lr", c.pretrain_lr},
                {"temperature", c.temperature}};
    write_text_file(path, doc.dump(2) + "\n");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << content;
    if (!out) throw io_error("write failed for " + path);
}

} // namespace expotion
