#ifndef EXPOTION_TOKENS_HPP
#define EXPOTION_TOKENS_HPP

#include <string>
#include <vector>

#include "expotion/errors.hpp"

namespace expotion {

// Reserved code values in every vocabulary.
constexpr int kBeatMarkerCode = 0;
constexpr int kRestCode = 1;
constexpr int kFirstFreeCode = 2;

// Each caption owns a 16-code band starting here; synthetic clips draw their
// non-marker content from the first kCaptionBandWidth codes of the band.
constexpr int kCaptionBandStride = 16;
constexpr int kCaptionBandWidth = 12;

inline int caption_band_start(int caption_id) {
    return kFirstFreeCode + kCaptionBandStride * caption_id;
}

struct token_sequence {
    std::vector<int> codes;
    double rate_hz = 50.0;
    std::vector<int> beat_frame_indices; // optional annotation, strictly increasing

    int length() const { return static_cast<int>(codes.size()); }
    double duration_s() const { return codes.empty() ? 0.0 : codes.size() / rate_hz; }

    void validate(int vocab) const {
        if (rate_hz <= 0.0) throw validation_error("token_sequence: rate_hz must be > 0");
        for (size_t i = 0; i < codes.size(); ++i)
            if (codes[i] < 0 || codes[i] >= vocab)
                throw validation_error("token_sequence: code " + std::to_string(codes[i]) +
                                       " at position " + std::to_string(i) +
                                       " outside [0, " + std::to_string(vocab) + ")");
        for (size_t i = 0; i < beat_frame_indices.size(); ++i) {
            int b = beat_frame_indices[i];
            if (b < 0 || b >= static_cast<int>(codes.size()))
                throw validation_error("token_sequence: beat frame index out of range");
            if (i > 0 && beat_frame_indices[i - 1] >= b)
                throw validation_error("token_sequence: beat frame indices must be strictly increasing");
        }
    }
};

} // namespace expotion

#endif
