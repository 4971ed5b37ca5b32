#ifndef EXPOTION_ERRORS_HPP
#define EXPOTION_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace expotion {

// Base class for everything thrown by this library.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// File could not be opened, created or fully written.
struct io_error : error {
    using error::error;
};

// Generic malformed-input error (bad shapes at write time, bad values).
struct format_error : error {
    using error::error;
};

// Tensor file parse failures, one named type per failure mode.
struct parse_error : error {
    using error::error;
};
struct bad_magic_error : parse_error {
    using parse_error::parse_error;
};
struct unsupported_version_error : parse_error {
    using parse_error::parse_error;
};
struct unknown_dtype_error : parse_error {
    using parse_error::parse_error;
};
struct truncation_error : parse_error {
    using parse_error::parse_error;
};

// Manifest / config schema violations.
struct validation_error : error {
    using error::error;
};

// Dimension mismatches between tensors or parameter blocks.
struct shape_error : error {
    using error::error;
};

// Windowed framing on a clip shorter than one window.
struct too_short_error : error {
    using error::error;
};

// Joint-embedding fusion failures (length mismatch, prefix table overflow).
struct fusion_error : error {
    using error::error;
};

// Conditioning sequence does not line up with the token stream.
struct conditioning_error : error {
    using error::error;
};

// Bad token codes or caption ids fed to the decoder.
struct input_error : error {
    using error::error;
};

// Optimization diverged or produced non-finite values.
struct training_error : error {
    using error::error;
};

// Frozen base parameters changed during adapter training. Fatal.
struct freeze_violation_error : error {
    using error::error;
};

// Tempo estimation on fewer than two beats.
struct undefined_tempo_error : error {
    using error::error;
};

// Generated/reference manifests cannot be paired clip-by-clip.
struct pairing_error : error {
    using error::error;
};

} // namespace expotion

#endif
