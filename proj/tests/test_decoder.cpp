#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "expotion/decoder.hpp"
#include "expotion/errors.hpp"
#include "expotion/linalg.hpp"
#include "expotion/rng.hpp"
#include "oracles.hpp"

using namespace expotion;

namespace {

decoder_config small_cfg() {
    decoder_config cfg;
    cfg.n_layers = 3;
    cfg.d = 16;
    cfg.heads = 2;
    cfg.vocab = 32;
    cfg.prompt_len = 3;
    cfg.n_captions = 2;
    cfg.ffn_mult = 2;
    cfg.t_max = 64;
    cfg.code_rate_hz = 25.0;
    return cfg;
}

template <typename S>
Mat<S> random_mat(int rows, int cols, Rng& rng) {
    Mat<S> m(rows, cols);
    for (auto& v : m.data) v = S(rng.normal());
    return m;
}

std::vector<int> random_codes(int n, int vocab, Rng& rng) {
    std::vector<int> codes(static_cast<size_t>(n));
    for (auto& c : codes) c = rng.uniform_int(vocab);
    return codes;
}

} // namespace

TEST_SUITE("decoder") {

TEST_CASE("dense kernels match plain loops") {
    Rng rng(301);
    Mat<double> a = random_mat<double>(5, 7, rng);
    Mat<double> b = random_mat<double>(7, 4, rng);
    CHECK(oracle::max_abs_diff(matmul(a, b), oracle::matmul(a, b)) <= 1e-12);
    CHECK_THROWS_AS(matmul(a, random_mat<double>(6, 4, rng)), shape_error);

    std::vector<double> bias{0.5, -1.0, 2.0, 0.25};
    Mat<double> y = linear(a, b, bias);
    Mat<double> plain = oracle::matmul(a, b);
    for (int i = 0; i < y.rows; ++i)
        for (int j = 0; j < y.cols; ++j)
            CHECK(std::abs(y(i, j) - (plain(i, j) + bias[size_t(j)])) <= 1e-12);

    LayerNormParams<double> ln(7);
    for (int j = 0; j < 7; ++j) {
        ln.gain[size_t(j)] = 1.0 + 0.1 * j;
        ln.bias[size_t(j)] = 0.01 * j;
    }
    Mat<double> normed = layernorm(a, ln, static_cast<LnCache<double>*>(nullptr));
    for (int i = 0; i < a.rows; ++i) {
        double mu = 0.0, var = 0.0;
        for (int j = 0; j < 7; ++j) mu += a(i, j);
        mu /= 7.0;
        for (int j = 0; j < 7; ++j) var += (a(i, j) - mu) * (a(i, j) - mu);
        var /= 7.0;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (int j = 0; j < 7; ++j) {
            const double want = (a(i, j) - mu) * inv * ln.gain[size_t(j)] + ln.bias[size_t(j)];
            CHECK(std::abs(normed(i, j) - want) <= 1e-12);
        }
    }

    Mat<double> s = silu(a);
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double x = a.data[i];
        CHECK(std::abs(s.data[i] - x / (1.0 + std::exp(-x))) <= 1e-12);
    }

    Mat<double> sm = random_mat<double>(4, 6, rng);
    Mat<double> raw = sm;
    softmax_rows(sm);
    for (int i = 0; i < 4; ++i) {
        double total = 0.0, denom = 0.0;
        for (int j = 0; j < 6; ++j) denom += std::exp(raw(i, j));
        for (int j = 0; j < 6; ++j) {
            total += sm(i, j);
            CHECK(std::abs(sm(i, j) - std::exp(raw(i, j)) / denom) <= 1e-12);
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("multi head attention matches the reference") {
    Rng rng(307);
    for (int heads : {1, 2, 4}) {
        Mat<double> q = random_mat<double>(7, 8, rng);
        Mat<double> k = random_mat<double>(5, 8, rng);
        Mat<double> v = random_mat<double>(5, 8, rng);
        Mat<double> plain = mha_forward(q, k, v, heads, false,
                                        static_cast<AttnCache<double>*>(nullptr));
        CHECK(oracle::max_abs_diff(plain, oracle::attention(q, k, v, heads, false)) <= 1e-12);

        Mat<double> sq = random_mat<double>(6, 8, rng);
        Mat<double> sk = random_mat<double>(6, 8, rng);
        Mat<double> sv = random_mat<double>(6, 8, rng);
        AttnCache<double> cache;
        Mat<double> causal = mha_forward(sq, sk, sv, heads, true, &cache);
        CHECK(oracle::max_abs_diff(causal, oracle::attention(sq, sk, sv, heads, true)) <= 1e-12);
        REQUIRE(int(cache.probs.size()) == heads);
        for (const auto& p : cache.probs)
            for (int i = 0; i < p.rows; ++i)
                for (int j = i + 1; j < p.cols; ++j) CHECK(p(i, j) == 0.0);
    }
    Mat<double> q3 = random_mat<double>(3, 6, rng);
    CHECK_THROWS_AS(mha_forward(q3, random_mat<double>(3, 4, rng), random_mat<double>(3, 6, rng),
                                2, false, static_cast<AttnCache<double>*>(nullptr)),
                    shape_error);
}

TEST_CASE("attention backward matches finite differences") {
    Rng rng(311);
    const int t = 3, d = 4, heads = 2;
    Mat<double> q = random_mat<double>(t, d, rng);
    Mat<double> k = random_mat<double>(t, d, rng);
    Mat<double> v = random_mat<double>(t, d, rng);
    Mat<double> r = random_mat<double>(t, d, rng);
    for (bool causal : {false, true}) {
        auto loss = [&]() {
            Mat<double> ctx = mha_forward(q, k, v, heads, causal,
                                          static_cast<AttnCache<double>*>(nullptr));
            double acc = 0.0;
            for (size_t i = 0; i < ctx.data.size(); ++i) acc += ctx.data[i] * r.data[i];
            return acc;
        };
        AttnCache<double> cache;
        mha_forward(q, k, v, heads, causal, &cache);
        Mat<double> dq(t, d), dk(t, d), dv(t, d);
        mha_backward(q, k, v, cache, r, heads, dq, dk, dv);

        const double eps = 1e-6;
        auto fd_check = [&](Mat<double>& param, const Mat<double>& grad) {
            for (size_t i = 0; i < param.data.size(); ++i) {
                const double keep = param.data[i];
                param.data[i] = keep + eps;
                const double up = loss();
                param.data[i] = keep - eps;
                const double dn = loss();
                param.data[i] = keep;
                const double fd = (up - dn) / (2.0 * eps);
                CHECK(std::abs(grad.data[i] - fd) <= 1e-7 * std::max(1.0, std::abs(fd)));
            }
        };
        fd_check(q, dq);
        fd_check(k, dk);
        fd_check(v, dv);
    }
}

TEST_CASE("positions follow the sinusoid closed form") {
    Mat<double> pe = sinusoidal_pe<double>(5, 6);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; j += 2) {
            const double freq = std::pow(10000.0, -double(j) / 6.0);
            CHECK(pe(i, j) == std::sin(i * freq));
            CHECK(pe(i, j + 1) == std::cos(i * freq));
        }
    Mat<double> odd = sinusoidal_pe<double>(3, 5);
    const double last = std::pow(10000.0, -4.0 / 5.0);
    for (int i = 0; i < 3; ++i) CHECK(odd(i, 4) == std::sin(i * last));
    CHECK(pe(0, 0) == 0.0);
    CHECK(pe(0, 1) == 1.0);
}

TEST_CASE("teacher forcing scores each next code") {
    decoder_config cfg = small_cfg();
    base_decoder_params<float> base = init_base_decoder<float>(cfg, 77);
    Rng rng(313);
    std::vector<int> codes = random_codes(10, cfg.vocab, rng);

    Mat<float> logits = decoder_forward<float>(base, codes, 0, nullptr, nullptr);
    REQUIRE(logits.rows == 10);
    REQUIRE(logits.cols == cfg.vocab);
    CHECK(logits.all_finite());

    Mat<float> again = decoder_forward<float>(base, codes, 0, nullptr, nullptr);
    CHECK(std::memcmp(logits.data.data(), again.data.data(),
                      logits.data.size() * sizeof(float)) == 0);

    token_sequence toks;
    toks.codes = codes;
    toks.rate_hz = cfg.code_rate_hz;
    Mat<float> via_tokens = base_forward(base, toks, 0);
    CHECK(std::memcmp(logits.data.data(), via_tokens.data.data(),
                      logits.data.size() * sizeof(float)) == 0);

    fwd_cache<float> cache;
    Mat<float> cached = decoder_forward<float>(base, codes, 0, nullptr, &cache);
    CHECK(std::memcmp(logits.data.data(), cached.data.data(),
                      logits.data.size() * sizeof(float)) == 0);
    REQUIRE(int(cache.layers.size()) == cfg.n_layers);
    CHECK(cache.x0.rows == 10);
    CHECK(cache.h.rows == 10);
    // unadapted forward leaves the prefix slots empty
    for (const auto& lc : cache.layers) {
        CHECK(lc.u.rows == 0);
        CHECK(lc.ctx_f.rows == 0);
    }
}

TEST_CASE("later codes never leak into earlier logits") {
    decoder_config cfg = small_cfg();
    base_decoder_params<float> base = init_base_decoder<float>(cfg, 78);
    Rng rng(317);
    std::vector<int> codes = random_codes(10, cfg.vocab, rng);
    Mat<float> before = decoder_forward<float>(base, codes, 1, nullptr, nullptr);

    for (int p : {0, 4, 8}) {
        std::vector<int> mutated = codes;
        mutated[size_t(p)] = (mutated[size_t(p)] + 7) % cfg.vocab;
        Mat<float> after = decoder_forward<float>(base, mutated, 1, nullptr, nullptr);
        for (int i = 0; i <= p; ++i)
            CHECK(std::memcmp(before.row(i), after.row(i), cfg.vocab * sizeof(float)) == 0);
        bool next_row_changed = false;
        for (int j = 0; j < cfg.vocab; ++j)
            if (before(p + 1, j) != after(p + 1, j)) next_row_changed = true;
        CHECK(next_row_changed);
    }

    // the final code is scored but never embedded, so it cannot move any logit
    std::vector<int> tail = codes;
    tail[9] = (tail[9] + 3) % cfg.vocab;
    Mat<float> after_tail = decoder_forward<float>(base, tail, 1, nullptr, nullptr);
    CHECK(std::memcmp(before.data.data(), after_tail.data.data(),
                      before.data.size() * sizeof(float)) == 0);
}

TEST_CASE("captions steer the logits through the prompt table") {
    decoder_config cfg = small_cfg();
    base_decoder_params<float> base = init_base_decoder<float>(cfg, 79);
    Rng rng(331);
    std::vector<int> codes = random_codes(6, cfg.vocab, rng);
    Mat<float> cap0 = decoder_forward<float>(base, codes, 0, nullptr, nullptr);
    Mat<float> cap1 = decoder_forward<float>(base, codes, 1, nullptr, nullptr);
    CHECK(oracle::max_abs_diff(cap0, cap1) > 0.0f);

    CHECK_THROWS_WITH_AS(decoder_forward<float>(base, codes, 5, nullptr, nullptr),
                         "unknown caption_id 5", input_error);
    CHECK_THROWS_WITH_AS(decoder_forward<float>(base, std::vector<int>{}, 0, nullptr, nullptr),
                         "decoder_forward: empty token sequence", input_error);
    CHECK_THROWS_WITH_AS(decoder_forward<float>(base, std::vector<int>{1, 99}, 0, nullptr,
                                                nullptr),
                         "decoder_forward: code 99 out of range", input_error);
}

TEST_CASE("token sequences validate codes and beat annotations") {
    token_sequence toks;
    toks.codes = {1, 2, 3, 4};
    toks.rate_hz = 10.0;
    CHECK_NOTHROW(toks.validate(32));
    CHECK(toks.length() == 4);
    CHECK(toks.duration_s() == 0.4);

    token_sequence bad_rate = toks;
    bad_rate.rate_hz = 0.0;
    CHECK_THROWS_AS(bad_rate.validate(32), validation_error);

    token_sequence oob = toks;
    oob.codes[2] = 40;
    CHECK_THROWS_WITH_AS(oob.validate(32),
                         "token_sequence: code 40 at position 2 outside [0, 32)",
                         validation_error);

    token_sequence beats = toks;
    beats.beat_frame_indices = {0, 2, 3};
    CHECK_NOTHROW(beats.validate(32));
    beats.beat_frame_indices = {0, 2, 2};
    CHECK_THROWS_AS(beats.validate(32), validation_error);
    beats.beat_frame_indices = {0, 9};
    CHECK_THROWS_AS(beats.validate(32), validation_error);
}

TEST_CASE("the parameter registry is ordered, counted and hashed") {
    decoder_config cfg = small_cfg();
    cfg.n_layers = 2;
    base_decoder_params<float> base = init_base_decoder<float>(cfg, 80);
    auto refs = collect_params(base);
    REQUIRE(refs.size() == 59);
    CHECK(refs[0].name == "token_embed");
    CHECK(refs[1].name == "bos_embed");
    CHECK(refs[2].name == "layers.0.ln1.gain");
    CHECK(refs[6].name == "layers.0.self.w_v");
    CHECK(refs[28].name == "layers.1.ln1.gain");
    CHECK(refs[54].name == "ln_f.gain");
    CHECK(refs[56].name == "head.w");
    CHECK(refs[58].name == "prompt_table");
    CHECK(refs[0].shape == std::vector<uint32_t>{32, 16});
    CHECK(refs[58].shape == std::vector<uint32_t>{2, 3, 16});

    // counted by hand from the shapes: embeddings 528, two blocks of 3344,
    // final norm 32, head 544, prompts 96
    CHECK(total_param_count(refs) == 7888);

    const uint64_t h0 = param_hash(refs);
    CHECK(param_hash(refs) == h0);
    base_decoder_params<float> same = init_base_decoder<float>(cfg, 80);
    auto same_refs = collect_params(same);
    CHECK(param_hash(same_refs) == h0);
    base_decoder_params<float> other = init_base_decoder<float>(cfg, 81);
    auto other_refs = collect_params(other);
    CHECK(param_hash(other_refs) != h0);

    const float keep = base.layers[1].w_ff2.data[5];
    base.layers[1].w_ff2.data[5] = keep + 1.0f;
    CHECK(param_hash(refs) != h0);
    base.layers[1].w_ff2.data[5] = keep;
    CHECK(param_hash(refs) == h0);
}

TEST_CASE("argmax sampling equals the teacher forced chain") {
    decoder_config cfg = small_cfg();
    base_decoder_params<double> base = init_base_decoder<double>(cfg, 82);
    const int length = 12;
    token_sequence got = sample<double>(base, 1, length, 0.0, 99);
    REQUIRE(got.length() == length);
    CHECK(got.rate_hz == cfg.code_rate_hz);

    std::vector<int> prefix;
    for (int n = 0; n < length; ++n) {
        std::vector<int> padded = prefix;
        padded.push_back(0); // scored only, never embedded
        Mat<double> logits = decoder_forward<double>(base, padded, 1, nullptr, nullptr);
        int best = 0;
        for (int j = 1; j < cfg.vocab; ++j)
            if (logits(n, j) > logits(n, best)) best = j;
        prefix.push_back(best);
    }
    CHECK(got.codes == prefix);

    // temperature 0 never consults the rng
    token_sequence reseeded = sample<double>(base, 1, length, 0.0, 12345);
    CHECK(reseeded.codes == got.codes);
}

TEST_CASE("one batch equals independent single draws") {
    decoder_config cfg = small_cfg();
    base_decoder_params<double> base = init_base_decoder<double>(cfg, 83);
    const std::vector<uint64_t> seeds{11, 22, 33, 44, 55};
    auto batch = sample_batch<double>(base, 0, 20, 0.7, seeds, nullptr);
    REQUIRE(batch.size() == seeds.size());
    for (size_t i = 0; i < seeds.size(); ++i) {
        token_sequence solo = sample<double>(base, 0, 20, 0.7, seeds[i]);
        CHECK(batch[i].codes == solo.codes);
        CHECK(batch[i].rate_hz == cfg.code_rate_hz);
        CHECK(batch[i].beat_frame_indices.empty());
        for (int c : batch[i].codes) {
            CHECK(c >= 0);
            CHECK(c < cfg.vocab);
        }
    }
    auto again = sample_batch<double>(base, 0, 20, 0.7, seeds, nullptr);
    for (size_t i = 0; i < seeds.size(); ++i) CHECK(again[i].codes == batch[i].codes);

    token_sequence a = sample<double>(base, 0, 20, 0.9, 7);
    token_sequence b = sample<double>(base, 0, 20, 0.9, 8);
    CHECK(a.codes != b.codes); // two seeds almost surely diverge somewhere
}

TEST_CASE("sampling validates its arguments") {
    decoder_config cfg = small_cfg();
    base_decoder_params<float> base = init_base_decoder<float>(cfg, 84);
    CHECK_THROWS_WITH_AS(sample<float>(base, 0, 0, 1.0, 1), "sample: length must be >= 1",
                         input_error);
    CHECK_THROWS_WITH_AS(sample<float>(base, 0, 4, -0.5, 1),
                         "sample: temperature must be >= 0", input_error);
    CHECK_THROWS_WITH_AS(sample<float>(base, 9, 4, 1.0, 1), "sample: unknown caption_id 9",
                         input_error);
    CHECK_THROWS_WITH_AS(sample_batch<float>(base, 0, 4, 1.0, std::vector<uint64_t>{}, nullptr),
                         "sample: no seeds", input_error);
}

} // TEST_SUITE
