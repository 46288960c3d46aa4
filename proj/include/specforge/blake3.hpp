#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace specforge {

// Portable, single-threaded BLAKE3 (unkeyed hash mode, extendable output).
class Blake3 {
public:
    Blake3();

    void update(std::span<const std::byte> data);
    void update(std::string_view text);

    // Any output length; the first 32 bytes are the standard digest.
    std::vector<std::uint8_t> finalize(std::size_t out_len = 32) const;
    std::string finalize_hex(std::size_t out_len = 32) const;

private:
    struct ChunkState {
        std::array<std::uint32_t, 8> cv;
        std::uint64_t counter = 0;
        std::array<std::uint8_t, 64> block{};
        std::size_t block_len = 0;
        std::size_t blocks_compressed = 0;

        std::size_t len() const { return 64 * blocks_compressed + block_len; }
    };

    void push_chunk_cv(std::array<std::uint32_t, 8> cv, std::uint64_t total_chunks);

    ChunkState chunk_;
    std::vector<std::array<std::uint32_t, 8>> cv_stack_;
};

std::string blake3_hex(std::string_view data);
std::string blake3_hex(std::span<const std::byte> data);

} // namespace specforge
