#include "doctest.h"

#include <cmath>
#include <cstring>

#include "expotion/alignment.hpp"
#include "expotion/rng.hpp"
#include "oracles.hpp"

using namespace expotion;

namespace {

feature_sequence<float> random_sequence(int t, int d, double rate, Rng& rng,
                                        source_tag tag = source_tag::face) {
    Mat<float> m(t, d);
    for (auto& v : m.data) v = float(rng.normal());
    return feature_sequence<float>{std::move(m), rate, tag};
}

} // namespace

TEST_SUITE("alignment") {

TEST_CASE("windowed frame counts match the hop arithmetic") {
    CHECK(frame_count(800, framing_spec{16, 16}) == 50);
    CHECK(frame_count(800, framing_spec{16, 5}) == 157);
    CHECK(frame_count(16, framing_spec{16, 16}) == 1);

    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const int window = 1 + rng.uniform_int(32);
        const int stride = 1 + rng.uniform_int(16);
        const int t = window + rng.uniform_int(500);
        CHECK(frame_count(t, framing_spec{window, stride}) == (t - window) / stride + 1);
    }

    CHECK_THROWS_AS(frame_count(100, framing_spec{0, 4}), validation_error);
    CHECK_THROWS_AS(frame_count(100, framing_spec{4, 0}), validation_error);
    CHECK_THROWS_AS(frame_count(10, framing_spec{16, 16}), too_short_error);
}

TEST_CASE("doubling the rate lands halfway between frames") {
    Mat<float> m(2, 1);
    m(0, 0) = 0.0f;
    m(1, 0) = 10.0f;
    feature_sequence<float> seq{std::move(m), 1.0, source_tag::face};
    feature_sequence<float> out = smooth_interpolate(seq, 2.0);
    REQUIRE(out.length() == 4);
    CHECK(out.frames(0, 0) == 0.0f);
    CHECK(out.frames(1, 0) == 5.0f);
    CHECK(out.frames(2, 0) == 10.0f);
    CHECK(out.frames(3, 0) == 10.0f); // clamped past the last source frame
    CHECK(out.rate_hz == 2.0);
    CHECK(out.tag == source_tag::face);
}

TEST_CASE("integer rate ratios copy source rows bitwise") {
    Rng rng(5);
    feature_sequence<float> seq = random_sequence(50, 3, 5.0, rng);
    feature_sequence<float> out = smooth_interpolate(seq, 50.0);
    REQUIRE(out.length() == 500);
    for (int k = 0; k < 50; ++k)
        CHECK(std::memcmp(out.frames.row(10 * k), seq.frames.row(k), 3 * sizeof(float)) == 0);
}

TEST_CASE("random sequences match the two point oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const int t = 1 + rng.uniform_int(40);
        const int d = 1 + rng.uniform_int(6);
        const double rate = rng.uniform(0.5, 60.0);
        const double target = rng.uniform(0.5, 60.0);
        feature_sequence<float> seq = random_sequence(t, d, rate, rng);
        feature_sequence<float> out = smooth_interpolate(seq, target);

        const int expect_len = std::max(1, int(std::lround(t / rate * target)));
        REQUIRE(out.length() == expect_len);
        for (int j = 0; j < out.length(); ++j)
            for (int c = 0; c < d; ++c) {
                const double want = oracle::interp_value(seq.frames, j, c, rate, target);
                CHECK(std::abs(double(out.frames(j, c)) - want) <= 1e-6);
            }
    }
}

TEST_CASE("grid points and the clamped tail are exact copies") {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const int t = 2 + rng.uniform_int(20);
        const double rate = double(1 + rng.uniform_int(30));
        const int mult = 1 + rng.uniform_int(6);
        feature_sequence<float> seq = random_sequence(t, 4, rate, rng);
        feature_sequence<float> out = smooth_interpolate(seq, rate * mult);
        for (int j = 0; j < out.length(); ++j) {
            const double pos = j * rate / (rate * mult);
            const int i = int(std::floor(pos));
            if (pos == std::floor(pos) || i >= t - 1) {
                const int src = std::min(i, t - 1);
                CHECK(std::memcmp(out.frames.row(j), seq.frames.row(src),
                                  4 * sizeof(float)) == 0);
            }
        }
    }
}

TEST_CASE("short clips still produce one output frame") {
    Rng rng(29);
    feature_sequence<float> seq = random_sequence(1, 2, 100.0, rng);
    feature_sequence<float> out = smooth_interpolate(seq, 1.0);
    REQUIRE(out.length() == 1);
    CHECK(std::memcmp(out.frames.row(0), seq.frames.row(0), 2 * sizeof(float)) == 0);
}

TEST_CASE("nearest resampling duplicates and drops whole frames") {
    Rng rng(31);
    feature_sequence<float> seq = random_sequence(90, 2, 30.0, rng);
    feature_sequence<float> up = resample_nearest(seq, 80.0);
    REQUIRE(up.length() == 240);
    for (int j = 0; j < up.length(); ++j) {
        const int src = std::min(int(std::floor(j * 30.0 / 80.0)), 89);
        CHECK(std::memcmp(up.frames.row(j), seq.frames.row(src), 2 * sizeof(float)) == 0);
    }
    feature_sequence<float> down = resample_nearest(seq, 10.0);
    REQUIRE(down.length() == 30);
    for (int j = 0; j < down.length(); ++j)
        CHECK(std::memcmp(down.frames.row(j), seq.frames.row(3 * j), 2 * sizeof(float)) == 0);
}

TEST_CASE("context stacks flatten in window order") {
    Tensor3<float> t(2, 3, 4);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 4; ++k) t.at(i, j, k) = float(100 * i + 10 * j + k);
    feature_sequence<float> out = flatten_context(t, 2.0, source_tag::motion_ctx);
    REQUIRE(out.length() == 6);
    REQUIRE(out.dim() == 4);
    CHECK(out.rate_hz == 6.0);
    CHECK(out.tag == source_tag::motion_ctx);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 4; ++k)
                CHECK(out.frames(3 * i + j, k) == float(100 * i + 10 * j + k));
    Tensor3<float> empty;
    CHECK_THROWS_AS(flatten_context(empty, 2.0, source_tag::motion_ctx), validation_error);
}

TEST_CASE("sequence and argument validation") {
    Rng rng(37);
    feature_sequence<float> good = random_sequence(4, 2, 10.0, rng);
    CHECK_NOTHROW(good.validate());

    feature_sequence<float> empty{Mat<float>(), 10.0, source_tag::face};
    CHECK_THROWS_WITH_AS(smooth_interpolate(empty, 5.0),
                         "feature_sequence: needs at least one frame and one dim",
                         validation_error);

    feature_sequence<float> bad_rate = random_sequence(4, 2, 10.0, rng);
    bad_rate.rate_hz = 0.0;
    CHECK_THROWS_WITH_AS(smooth_interpolate(bad_rate, 5.0),
                         "feature_sequence: rate_hz must be > 0", validation_error);

    feature_sequence<float> nan_seq = random_sequence(4, 2, 10.0, rng);
    nan_seq.frames(1, 1) = std::nanf("");
    CHECK_THROWS_WITH_AS(smooth_interpolate(nan_seq, 5.0), "feature_sequence: non-finite value",
                         validation_error);

    CHECK_THROWS_WITH_AS(smooth_interpolate(good, 0.0),
                         "smooth_interpolate: target_hz must be > 0", validation_error);
    CHECK_THROWS_WITH_AS(resample_nearest(good, -1.0),
                         "resample_nearest: target_hz must be > 0", validation_error);
}

} // TEST_SUITE
