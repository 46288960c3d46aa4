#include "specforge/blake3.hpp"

#include <algorithm>
#include <cstring>

namespace specforge {

namespace {

constexpr std::array<std::uint32_t, 8> kIv = {0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A,
                                              0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19};
constexpr std::array<std::size_t, 16> kPermutation = {2, 6, 3, 10, 7, 0, 4, 13, 1, 11, 12, 5, 9, 14, 15, 8};

constexpr std::uint32_t kChunkStart = 1;
constexpr std::uint32_t kChunkEnd = 2;
constexpr std::uint32_t kParent = 4;
constexpr std::uint32_t kRoot = 8;

constexpr std::size_t kChunkLen = 1024;
constexpr std::size_t kBlockLen = 64;

using Words8 = std::array<std::uint32_t, 8>;
using Words16 = std::array<std::uint32_t, 16>;

constexpr std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

void g(Words16& s, std::size_t a, std::size_t b, std::size_t c, std::size_t d, std::uint32_t mx, std::uint32_t my) {
    s[a] = s[a] + s[b] + mx;
    s[d] = rotr(s[d] ^ s[a], 16);
    s[c] = s[c] + s[d];
    s[b] = rotr(s[b] ^ s[c], 12);
    s[a] = s[a] + s[b] + my;
    s[d] = rotr(s[d] ^ s[a], 8);
    s[c] = s[c] + s[d];
    s[b] = rotr(s[b] ^ s[c], 7);
}

Words16 compress(const Words8& cv, const Words16& block, std::uint64_t counter, std::uint32_t block_len,
                 std::uint32_t flags) {
    Words16 s = {cv[0],  cv[1],  cv[2],  cv[3],
                 cv[4],  cv[5],  cv[6],  cv[7],
                 kIv[0], kIv[1], kIv[2], kIv[3],
                 static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32), block_len, flags};
    Words16 m = block;
    for (int round = 0; round < 7; ++round) {
        g(s, 0, 4, 8, 12, m[0], m[1]);
        g(s, 1, 5, 9, 13, m[2], m[3]);
        g(s, 2, 6, 10, 14, m[4], m[5]);
        g(s, 3, 7, 11, 15, m[6], m[7]);
        g(s, 0, 5, 10, 15, m[8], m[9]);
        g(s, 1, 6, 11, 12, m[10], m[11]);
        g(s, 2, 7, 8, 13, m[12], m[13]);
        g(s, 3, 4, 9, 14, m[14], m[15]);
        Words16 permuted;
        for (std::size_t i = 0; i < 16; ++i) permuted[i] = m[kPermutation[i]];
        m = permuted;
    }
    for (std::size_t i = 0; i < 8; ++i) {
        s[i] ^= s[i + 8];
        s[i + 8] ^= cv[i];
    }
    return s;
}

Words16 load_block(const std::array<std::uint8_t, 64>& bytes) {
    Words16 w;
    for (std::size_t i = 0; i < 16; ++i) {
        w[i] = static_cast<std::uint32_t>(bytes[4 * i]) | (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
               (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
               (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    }
    return w;
}

Words8 first8(const Words16& w) {
    Words8 out;
    std::copy_n(w.begin(), 8, out.begin());
    return out;
}

// Everything needed to produce either a chaining value or root output.
struct Output {
    Words8 cv;
    Words16 block;
    std::uint64_t counter;
    std::uint32_t block_len;
    std::uint32_t flags;

    Words8 chaining_value() const { return first8(compress(cv, block, counter, block_len, flags)); }
};

Output parent_output(const Words8& left, const Words8& right) {
    Words16 block;
    std::copy(left.begin(), left.end(), block.begin());
    std::copy(right.begin(), right.end(), block.begin() + 8);
    return {kIv, block, 0, static_cast<std::uint32_t>(kBlockLen), kParent};
}

} // namespace

Blake3::Blake3() { chunk_.cv = kIv; }

void Blake3::push_chunk_cv(std::array<std::uint32_t, 8> cv, std::uint64_t total_chunks) {
    // Merge completed subtrees: one merge per trailing zero bit of the count.
    while ((total_chunks & 1) == 0) {
        cv = parent_output(cv_stack_.back(), cv).chaining_value();
        cv_stack_.pop_back();
        total_chunks >>= 1;
    }
    cv_stack_.push_back(cv);
}

void Blake3::update(std::span<const std::byte> data) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(data.data());
    std::size_t n = data.size();
    while (n > 0) {
        if (chunk_.len() == kChunkLen) {
            const Output out{chunk_.cv, load_block(chunk_.block), chunk_.counter,
                             static_cast<std::uint32_t>(chunk_.block_len),
                             kChunkEnd | (chunk_.blocks_compressed == 0 ? kChunkStart : 0)};
            const std::uint64_t total = chunk_.counter + 1;
            push_chunk_cv(out.chaining_value(), total);
            chunk_ = ChunkState{};
            chunk_.cv = kIv;
            chunk_.counter = total;
        }
        if (chunk_.block_len == kBlockLen) {
            const std::uint32_t flags = chunk_.blocks_compressed == 0 ? kChunkStart : 0;
            chunk_.cv = first8(compress(chunk_.cv, load_block(chunk_.block), chunk_.counter, kBlockLen, flags));
            ++chunk_.blocks_compressed;
            chunk_.block.fill(0);
            chunk_.block_len = 0;
        }
        const std::size_t take = std::min({kBlockLen - chunk_.block_len, kChunkLen - chunk_.len(), n});
        std::memcpy(chunk_.block.data() + chunk_.block_len, p, take);
        chunk_.block_len += take;
        p += take;
        n -= take;
    }
}

void Blake3::update(std::string_view text) { update(std::as_bytes(std::span(text.data(), text.size()))); }

std::vector<std::uint8_t> Blake3::finalize(std::size_t out_len) const {
    Output out{chunk_.cv, load_block(chunk_.block), chunk_.counter, static_cast<std::uint32_t>(chunk_.block_len),
               kChunkEnd | (chunk_.blocks_compressed == 0 ? kChunkStart : 0)};
    for (auto it = cv_stack_.rbegin(); it != cv_stack_.rend(); ++it) {
        out = parent_output(*it, out.chaining_value());
    }
    std::vector<std::uint8_t> bytes;
    bytes.reserve(out_len);
    for (std::uint64_t block_counter = 0; bytes.size() < out_len; ++block_counter) {
        const auto words = compress(out.cv, out.block, block_counter, out.block_len, out.flags | kRoot);
        for (std::uint32_t w : words) {
            for (int k = 0; k < 4 && bytes.size() < out_len; ++k) bytes.push_back(static_cast<std::uint8_t>(w >> (8 * k)));
        }
    }
    return bytes;
}

std::string Blake3::finalize_hex(std::size_t out_len) const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string hex;
    for (std::uint8_t b : finalize(out_len)) {
        hex.push_back(kDigits[b >> 4]);
        hex.push_back(kDigits[b & 15]);
    }
    return hex;
}

std::string blake3_hex(std::string_view data) {
    Blake3 h;
    h.update(data);
    return h.finalize_hex();
}

std::string blake3_hex(std::span<const std::byte> data) {
    Blake3 h;
    h.update(data);
    return h.finalize_hex();
}

} // namespace specforge
