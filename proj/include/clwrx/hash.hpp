#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>

namespace clwrx {

// 64-bit FNV-1a, used for content fingerprints in manifests and tests.
class Fnv1a {
public:
    void update(const void* data, std::size_t n) noexcept {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001B3ULL;
        }
    }
    template <class T>
    void update(std::span<const T> xs) noexcept {
        update(xs.data(), xs.size_bytes());
    }
    std::uint64_t digest() const noexcept { return h_; }
    std::string hex() const {
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << h_;
        return os.str();
    }

private:
    std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

inline std::string file_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    Fnv1a h;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof buf);
        h.update(buf, static_cast<std::size_t>(is.gcount()));
    }
    return h.hex();
}

}  // namespace clwrx
