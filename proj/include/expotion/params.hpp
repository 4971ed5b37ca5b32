#ifndef EXPOTION_PARAMS_HPP
#define EXPOTION_PARAMS_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace expotion {

// A named view into one parameter tensor. The same registry drives the
// optimizer, serialization and the freeze hash, so ordering must be stable.
template <typename S>
struct param_ref {
    std::string name;
    S* data = nullptr;
    size_t n = 0;
    std::vector<uint32_t> shape;
};

template <typename S>
size_t total_param_count(const std::vector<param_ref<S>>& refs) {
    size_t n = 0;
    for (const auto& r : refs) n += r.n;
    return n;
}

// FNV-1a over names and raw parameter bytes, in registry order.
template <typename S>
uint64_t param_hash(const std::vector<param_ref<S>>& refs) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* p, size_t len) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& r : refs) {
        mix(r.name.data(), r.name.size());
        mix(r.data, r.n * sizeof(S));
    }
    return h;
}

} // namespace expotion

#endif
