#include "avgctl/detail/sha1.hpp"

#include <array>
#include <cstdint>
#include <cstring>

namespace avgctl::detail {

namespace {

inline std::uint32_t rol(std::uint32_t v, int bits) {
    return (v << bits) | (v >> (32 - bits));
}

struct Sha1State {
    std::array<std::uint32_t, 5> h{0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u,
                                   0xC3D2E1F0u};

    void block(const unsigned char* p) {
        std::uint32_t w[80];
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
                   (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
        for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
        auto [a, b, c, d, e] = h;
        for (int i = 0; i < 80; ++i) {
            std::uint32_t f, k;
            if (i < 20) {
                f = (b & c) | (~b & d);
                k = 0x5A827999u;
            } else if (i < 40) {
                f = b ^ c ^ d;
                k = 0x6ED9EBA1u;
            } else if (i < 60) {
                f = (b & c) | (b & d) | (c & d);
                k = 0x8F1BBCDCu;
            } else {
                f = b ^ c ^ d;
                k = 0xCA62C1D6u;
            }
            const std::uint32_t tmp = rol(a, 5) + f + e + k + w[i];
            e = d;
            d = c;
            c = rol(b, 30);
            b = a;
            a = tmp;
        }
        h[0] += a;
        h[1] += b;
        h[2] += c;
        h[3] += d;
        h[4] += e;
    }
};

}  // namespace

std::string sha1_hex(std::string_view data) {
    Sha1State st;
    const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
    std::size_t len = data.size();
    std::size_t off = 0;
    while (len - off >= 64) {
        st.block(bytes + off);
        off += 64;
    }
    unsigned char tail[128] = {0};
    const std::size_t rem = len - off;
    std::memcpy(tail, bytes + off, rem);
    tail[rem] = 0x80;
    const std::size_t total = rem + 1 + 8 <= 64 ? 64 : 128;
    const std::uint64_t bits = std::uint64_t(len) * 8;
    for (int i = 0; i < 8; ++i) tail[total - 1 - i] = static_cast<unsigned char>(bits >> (8 * i));
    st.block(tail);
    if (total == 128) st.block(tail + 64);

    std::string out(40, '0');
    static const char* hexd = "0123456789abcdef";
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 8; ++j)
            out[static_cast<std::size_t>(8 * i + j)] =
                hexd[(st.h[static_cast<std::size_t>(i)] >> (28 - 4 * j)) & 0xF];
    return out;
}

std::string git_blob_hash(std::string_view content) {
    std::string framed = "blob " + std::to_string(content.size());
    framed.push_back('\0');
    framed.append(content);
    return sha1_hex(framed);
}

}  // namespace avgctl::detail
