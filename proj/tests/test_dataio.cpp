#include "doctest.h"

#include <cstring>
#include <fstream>

#include "expotion/dataio.hpp"
#include "expotion/rng.hpp"
#include "oracles.hpp"

using namespace expotion;

namespace {

Mat<float> random_matrix(int rows, int cols, Rng& rng) {
    Mat<float> m(rows, cols);
    for (auto& v : m.data) v = float(rng.normal());
    return m;
}

// Minimal valid dataset: one tensor trio plus a manifest entry pointing at it.
clip_manifest_entry write_clip_files(const oracle::temp_dir& dir, const std::string& id,
                                     int t_feat, int t_codes) {
    Rng rng(42);
    write_matrix(dir.file(id + "_face.expt"), random_matrix(t_feat, 6, rng));
    write_matrix(dir.file(id + "_motion.expt"), random_matrix(t_feat, 4, rng));
    token_sequence toks;
    toks.rate_hz = 10.0;
    for (int i = 0; i < t_codes; ++i) toks.codes.push_back(i % 5);
    write_tokens(dir.file(id + "_tokens.expt"), toks);
    clip_manifest_entry e;
    e.clip_id = id;
    e.duration_s = t_codes / 10.0;
    e.face_path = id + "_face.expt";
    e.motion_path = id + "_motion.expt";
    e.token_path = id + "_tokens.expt";
    e.caption_id = 1;
    e.tempo_bpm = 120.0;
    e.beat_times_s = {0.1, 0.6, 1.1};
    return e;
}

} // namespace

TEST_SUITE("dataio") {

TEST_CASE("float matrix round trip is bitwise") {
    oracle::temp_dir dir("expt-dataio");
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Mat<float> m = random_matrix(1 + rng.uniform_int(17), 1 + rng.uniform_int(9), rng);
        const std::string path = dir.file("m" + std::to_string(trial) + ".expt");
        write_matrix(path, m);
        Mat<float> back = read_matrix(path);
        REQUIRE(back.rows == m.rows);
        REQUIRE(back.cols == m.cols);
        CHECK(std::memcmp(back.data.data(), m.data.data(), m.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("token sequence round trip keeps codes and takes the caller rate") {
    oracle::temp_dir dir("expt-dataio");
    token_sequence t;
    t.codes = {5, 0, 1, 7, 3};
    t.rate_hz = 50.0;
    write_tokens(dir.file("t.expt"), t);
    token_sequence back = read_tokens(dir.file("t.expt"), 25.0);
    CHECK(back.codes == t.codes);
    CHECK(back.rate_hz == 25.0);
}

TEST_CASE("tensor header bytes follow the documented layout") {
    oracle::temp_dir dir("expt-dataio");
    Mat<float> m(2, 3);
    for (int i = 0; i < 6; ++i) m.data[size_t(i)] = float(i + 1);
    write_matrix(dir.file("h.expt"), m);

    auto bytes = oracle::read_bytes(dir.file("h.expt"));
    REQUIRE(bytes.size() == size_t(4 + 1 + 1 + 1 + 8 + 6 * 4));
    CHECK(bytes[0] == 'E');
    CHECK(bytes[1] == 'X');
    CHECK(bytes[2] == 'P');
    CHECK(bytes[3] == 'T');
    CHECK(bytes[4] == 1); // version
    CHECK(bytes[5] == 1); // f32
    CHECK(bytes[6] == 2); // rank
    auto u32_at = [&](size_t off) {
        return uint32_t(bytes[off]) | uint32_t(bytes[off + 1]) << 8 |
               uint32_t(bytes[off + 2]) << 16 | uint32_t(bytes[off + 3]) << 24;
    };
    CHECK(u32_at(7) == 2u);
    CHECK(u32_at(11) == 3u);
    float payload[6];
    std::memcpy(payload, bytes.data() + 15, sizeof(payload));
    for (int i = 0; i < 6; ++i) CHECK(payload[i] == float(i + 1));
}

TEST_CASE("generic tensor round trip covers every rank") {
    oracle::temp_dir dir("expt-dataio");
    Rng rng(11);
    for (int rank = 1; rank <= 4; ++rank) {
        std::vector<uint32_t> shape;
        uint64_t n = 1;
        for (int i = 0; i < rank; ++i) {
            shape.push_back(uint32_t(1 + rng.uniform_int(4)));
            n *= shape.back();
        }
        std::vector<float> fv(n);
        for (auto& v : fv) v = float(rng.normal());
        const std::string fp = dir.file("r" + std::to_string(rank) + "f.expt");
        write_tensor_f32(fp, shape, fv);
        tensor_data tf = read_tensor(fp);
        CHECK(tf.dtype == dtype_code::f32);
        CHECK(tf.shape == shape);
        CHECK(tf.f32 == fv);

        std::vector<int32_t> iv(n);
        for (auto& v : iv) v = int32_t(rng.uniform_int(1000) - 500);
        const std::string ip = dir.file("r" + std::to_string(rank) + "i.expt");
        write_tensor_i32(ip, shape, iv);
        tensor_data ti = read_tensor(ip);
        CHECK(ti.dtype == dtype_code::i32);
        CHECK(ti.shape == shape);
        CHECK(ti.i32 == iv);
    }
}

TEST_CASE("writer rejects bad shapes") {
    oracle::temp_dir dir("expt-dataio");
    CHECK_THROWS_AS(write_tensor_f32(dir.file("bad.expt"), {}, {}), format_error);
    CHECK_THROWS_AS(write_tensor_f32(dir.file("bad.expt"), {1, 1, 1, 1, 1}, {1.0f}),
                    format_error);
    CHECK_THROWS_AS(write_tensor_f32(dir.file("bad.expt"), {2, 0}, {}), format_error);
    CHECK_THROWS_AS(write_tensor_f32(dir.file("bad.expt"), {2, 2}, {1.0f}), format_error);
    CHECK_THROWS_AS(write_tensor_i32(dir.file("bad.expt"), {3}, {1, 2}), format_error);
}

TEST_CASE("reader names each corruption mode") {
    oracle::temp_dir dir("expt-dataio");
    Mat<float> m(2, 2);
    m.data = {1.0f, 2.0f, 3.0f, 4.0f};
    const std::string good = dir.file("good.expt");
    write_matrix(good, m);
    const auto pristine = oracle::read_bytes(good);

    auto corrupted = [&](size_t offset, unsigned char value) {
        auto bytes = pristine;
        bytes[offset] = value;
        const std::string p = dir.file("bad.expt");
        oracle::write_bytes(p, bytes);
        return p;
    };

    CHECK_THROWS_AS(read_tensor(corrupted(0, 'Q')), bad_magic_error);
    CHECK_THROWS_AS(read_tensor(corrupted(4, 2)), unsupported_version_error);
    CHECK_THROWS_AS(read_tensor(corrupted(5, 9)), unknown_dtype_error);
    CHECK_THROWS_AS(read_tensor(corrupted(6, 0)), format_error);
    CHECK_THROWS_AS(read_tensor(corrupted(6, 5)), format_error);
    CHECK_THROWS_AS(read_tensor(corrupted(7, 0)), format_error); // zero dimension

    SUBCASE("truncated payload") {
        auto bytes = pristine;
        bytes.pop_back();
        oracle::write_bytes(dir.file("short.expt"), bytes);
        CHECK_THROWS_AS(read_tensor(dir.file("short.expt")), truncation_error);
    }
    SUBCASE("truncated header") {
        auto bytes = pristine;
        bytes.resize(9);
        oracle::write_bytes(dir.file("short.expt"), bytes);
        CHECK_THROWS_AS(read_tensor(dir.file("short.expt")), truncation_error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_tensor(dir.file("absent.expt")), io_error);
    }
}

TEST_CASE("typed readers enforce rank and dtype") {
    oracle::temp_dir dir("expt-dataio");
    write_tensor_f32(dir.file("vec.expt"), {4}, {1.0f, 2.0f, 3.0f, 4.0f});
    CHECK_THROWS_AS(read_matrix(dir.file("vec.expt")), format_error);
    token_sequence t;
    t.codes = {1, 2};
    write_tokens(dir.file("tok.expt"), t);
    CHECK_THROWS_AS(read_matrix(dir.file("tok.expt")), format_error);
    CHECK_THROWS_AS(read_tokens(dir.file("vec.expt"), 10.0), format_error);
}

TEST_CASE("manifest round trip resolves paths against its directory") {
    oracle::temp_dir dir("expt-dataio");
    std::vector<clip_manifest_entry> entries;
    entries.push_back(write_clip_files(dir, "clip_a", 8, 16));
    entries.push_back(write_clip_files(dir, "clip_b", 5, 12));
    save_manifest(dir.file("manifest.json"), entries);

    clip_manifest man = load_manifest(dir.file("manifest.json"));
    REQUIRE(man.entries.size() == 2);
    CHECK(man.entries[0].clip_id == "clip_a");
    CHECK(man.entries[1].clip_id == "clip_b");
    CHECK(man.entries[0].caption_id == 1);
    CHECK(man.entries[0].tempo_bpm == 120.0);
    CHECK(man.entries[0].beat_times_s == std::vector<double>{0.1, 0.6, 1.1});
    CHECK(man.resolve("x/y.expt") == dir.file("x/y.expt"));
    Mat<float> face = read_matrix(man.resolve(man.entries[0].face_path));
    CHECK(face.rows == 8);
    CHECK(face.cols == 6);
}

TEST_CASE("manifest validation rejects bad entries") {
    oracle::temp_dir dir("expt-dataio");
    auto entry = write_clip_files(dir, "clip_a", 8, 16);

    auto save_and_load = [&](clip_manifest_entry e) {
        save_manifest(dir.file("manifest.json"), {e});
        return load_manifest(dir.file("manifest.json"));
    };

    SUBCASE("good entry loads") { CHECK_NOTHROW(save_and_load(entry)); }
    SUBCASE("empty clip id") {
        entry.clip_id = "";
        CHECK_THROWS_AS(save_and_load(entry), validation_error);
    }
    SUBCASE("non-positive duration") {
        entry.duration_s = 0.0;
        CHECK_THROWS_AS(save_and_load(entry), validation_error);
    }
    SUBCASE("non-positive tempo") {
        entry.tempo_bpm = -1.0;
        CHECK_THROWS_AS(save_and_load(entry), validation_error);
    }
    SUBCASE("negative caption") {
        entry.caption_id = -1;
        CHECK_THROWS_AS(save_and_load(entry), validation_error);
    }
    SUBCASE("beat outside the clip") {
        entry.beat_times_s = {0.5, 99.0};
        CHECK_THROWS_AS(save_and_load(entry), validation_error);
    }
    SUBCASE("beats not increasing") {
        entry.beat_times_s = {0.5, 0.5};
        CHECK_THROWS_AS(save_and_load(entry), validation_error);
    }
    SUBCASE("missing tensor file") {
        entry.face_path = "nope.expt";
        CHECK_THROWS_AS(save_and_load(entry), validation_error);
    }
    SUBCASE("referenced file is corrupt") {
        auto bytes = oracle::read_bytes(dir.file("clip_a_face.expt"));
        bytes[0] = 'q';
        oracle::write_bytes(dir.file("clip_a_face.expt"), bytes);
        CHECK_THROWS_AS(save_and_load(entry), bad_magic_error);
    }
}

TEST_CASE("manifest json schema is strict") {
    oracle::temp_dir dir("expt-dataio");
    write_text_file(dir.file("m1.json"), "{\"clips\": []}\n");
    CHECK_THROWS_AS(load_manifest(dir.file("m1.json")), validation_error);
    write_text_file(dir.file("m2.json"), "[[1, 2]]\n");
    CHECK_THROWS_AS(load_manifest(dir.file("m2.json")), validation_error);
    write_text_file(dir.file("m3.json"), "not json\n");
    CHECK_THROWS_AS(load_manifest(dir.file("m3.json")), parse_error);
    CHECK_THROWS_AS(load_manifest(dir.file("absent.json")), io_error);

    auto entry = write_clip_files(dir, "clip_a", 4, 8);
    save_manifest(dir.file("m4.json"), {entry});
    std::string text = read_text_file(dir.file("m4.json"));
    text.insert(text.find("\"clip_id\""), "\"surprise\": 1, ");
    write_text_file(dir.file("m4.json"), text);
    CHECK_THROWS_WITH_AS(load_manifest(dir.file("m4.json")),
                         "manifest entry: unknown key \"surprise\"", validation_error);

    // dropping a required key is also an error
    save_manifest(dir.file("m5.json"), {entry});
    text = read_text_file(dir.file("m5.json"));
    const size_t at = text.find("\"tempo_bpm\": 120.0,");
    REQUIRE(at != std::string::npos);
    text.erase(at, std::strlen("\"tempo_bpm\": 120.0,"));
    write_text_file(dir.file("m5.json"), text);
    CHECK_THROWS_AS(load_manifest(dir.file("m5.json")), validation_error);
}

TEST_CASE("run config round trips and fills defaults for absent keys") {
    oracle::temp_dir dir("expt-dataio");
    run_config cfg;
    cfg.d = 64;
    cfg.n_layers = 3;
    cfg.n_adapted_layers = 2;
    cfg.heads = 2;
    cfg.vocab = 128;
    cfg.seed = 99;
    cfg.temperature = 0.0;
    save_run_config(dir.file("cfg.json"), cfg);
    run_config back = load_run_config(dir.file("cfg.json"));
    CHECK(back.d == 64);
    CHECK(back.n_layers == 3);
    CHECK(back.n_adapted_layers == 2);
    CHECK(back.heads == 2);
    CHECK(back.vocab == 128);
    CHECK(back.seed == 99);
    CHECK(back.temperature == 0.0);
    CHECK(back.prompt_len == cfg.prompt_len);
    CHECK(back.learning_rate == cfg.learning_rate);

    write_text_file(dir.file("partial.json"), "{\"d\": 128, \"heads\": 8}\n");
    run_config part = load_run_config(dir.file("partial.json"));
    CHECK(part.d == 128);
    CHECK(part.heads == 8);
    CHECK(part.n_layers == run_config{}.n_layers);

    write_text_file(dir.file("unknown.json"), "{\"dd\": 128}\n");
    CHECK_THROWS_WITH_AS(load_run_config(dir.file("unknown.json")),
                         "run_config: unknown key \"dd\"", validation_error);
    write_text_file(dir.file("arr.json"), "[1]\n");
    CHECK_THROWS_AS(load_run_config(dir.file("arr.json")), validation_error);
    write_text_file(dir.file("garbled.json"), "{\n");
    CHECK_THROWS_AS(load_run_config(dir.file("garbled.json")), parse_error);
}

TEST_CASE("run config validation covers each constraint") {
    auto broken = [](auto mutate) {
        run_config c;
        mutate(c);
        return c;
    };
    CHECK_NOTHROW(run_config{}.validate());
    CHECK_THROWS_WITH_AS(broken([](run_config& c) { c.d = 0; }).validate(),
                         "run_config: bad model dims", validation_error);
    CHECK_THROWS_WITH_AS(broken([](run_config& c) { c.d = 30; }).validate(),
                         "run_config: d must be divisible by heads", validation_error);
    CHECK_THROWS_WITH_AS(broken([](run_config& c) { c.n_adapted_layers = 9; }).validate(),
                         "run_config: n_adapted_layers must be in [1, n_layers]",
                         validation_error);
    CHECK_THROWS_WITH_AS(broken([](run_config& c) { c.d1 = c.face_dim + 1; }).validate(),
                         "run_config: projection dims must satisfy d' <= D", validation_error);
    CHECK_THROWS_WITH_AS(broken([](run_config& c) { c.prompt_len = 0; }).validate(),
                         "run_config: bad table sizes", validation_error);
    CHECK_THROWS_WITH_AS(broken([](run_config& c) { c.code_rate_hz = 0.0; }).validate(),
                         "run_config: code_rate_hz must be > 0", validation_error);
    CHECK_THROWS_WITH_AS(broken([](run_config& c) { c.learning_rate = 0.0; }).validate(),
                         "run_config: learning rates must be > 0", validation_error);
    CHECK_THROWS_WITH_AS(broken([](run_config& c) { c.batch_size = 0; }).validate(),
                         "run_config: bad training sizes", validation_error);
    CHECK_THROWS_WITH_AS(broken([](run_config& c) { c.grad_clip = -0.5; }).validate(),
                         "run_config: grad_clip must be >= 0", validation_error);
    CHECK_THROWS_WITH_AS(broken([](run_config& c) { c.temperature = -1.0; }).validate(),
                         "run_config: temperature must be >= 0", validation_error);
    CHECK_THROWS_WITH_AS(broken([](run_config& c) { c.vocab = 60; }).validate(),
                         "run_config: vocab too small for per-caption code bands",
                         validation_error);
}

} // TEST_SUITE
