#include "specforge/blake3.hpp"

#include <gtest/gtest.h>

namespace specforge {
namespace {

// Digests from the reference implementation (python `blake3` package) over the
// standard test-vector input: byte i = i mod 251.
struct Vector {
    std::size_t length;
    const char* hex;
};

constexpr Vector kVectors[] = {
    {0, "af1349b9f5f9a1a6a0404dea36dcc9499bcb25c9adc112b7cc9a93cae41f3262"},
    {1, "2d3adedff11b61f14c886e35afa036736dcd87a74d27b5c1510225d0f592e213"},
    {63, "e9bc37a594daad83be9470df7f7b3798297c3d834ce80ba85d6e207627b7db7b"},
    {64, "4eed7141ea4a5cd4b788606bd23f46e212af9cacebacdc7d1f4c6dc7f2511b98"},
    {65, "de1e5fa0be70df6d2be8fffd0e99ceaa8eb6e8c93a63f2d8d1c30ecb6b263dee"},
    {1023, "10108970eeda3eb932baac1428c7a2163b0e924c9a9e25b35bba72b28f70bd11"},
    {1024, "42214739f095a406f3fc83deb889744ac00df831c10daa55189b5d121c855af7"},
    {1025, "d00278ae47eb27b34faecf67b4fe263f82d5412916c1ffd97c8cb7fb814b8444"},
    {2048, "e776b6028c7cd22a4d0ba182a8bf62205d2ef576467e838ed6f2529b85fba24a"},
    {2049, "5f4d72f40d7a5f82b15ca2b2e44b1de3c2ef86c426c95c1af0b6879522563030"},
    {3072, "b98cb0ff3623be03326b373de6b9095218513e64f1ee2edd2525c7ad1e5cffd2"},
    {3073, "7124b49501012f81cc7f11ca069ec9226cecb8a2c850cfe644e327d22d3e1cd3"},
    {4096, "015094013f57a5277b59d8475c0501042c0b642e531b0a1c8f58d2163229e969"},
    {4097, "9b4052b38f1c5fc8b1f9ff7ac7b27cd242487b3d890d15c96a1c25b8aa0fb995"},
    {5120, "9cadc15fed8b5d854562b26a9536d9707cadeda9b143978f319ab34230535833"},
    {8193, "bab6c09cb8ce8cf459261398d2e7aef35700bf488116ceb94a36d0f5f1b7bc3b"},
    {31744, "62b6960e1a44bcc1eb1a611a8d6235b6b4b78f32e7abc4fb4c6cdcce94895c47"},
    {102400, "bc3e3d41a1146b069abffad3c0d44860cf664390afce4d9661f7902e7943e085"},
};

std::string pattern(std::size_t n) {
    std::string s(n, '\0');
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<char>(i % 251);
    return s;
}

TEST(Blake3Test, ReferenceVectors) {
    for (const auto& v : kVectors) {
        EXPECT_EQ(blake3_hex(pattern(v.length)), v.hex) << v.length;
    }
}

TEST(Blake3Test, Abc) {
    EXPECT_EQ(blake3_hex(std::string_view("abc")), "6437b3ac38465133ffb63b75273a8db548c558465d79db03fd359c6cd5bd9d85");
}

TEST(Blake3Test, ExtendedOutput) {
    Blake3 h;
    h.update(std::string_view("abc"));
    EXPECT_EQ(h.finalize_hex(80),
              "6437b3ac38465133ffb63b75273a8db548c558465d79db03fd359c6cd5bd9d851fb250ae7393f5d02813b65d521a0d492d9ba09c"
              "f7ce7f4cffd900f23374bf0bc08a1fb0b38ed276181ccbd9f7b7edbd");
}

TEST(Blake3Test, IncrementalUpdatesMatchOneShot) {
    const auto data = pattern(5000);
    for (std::size_t step : {1u, 7u, 64u, 100u, 1024u, 1500u}) {
        Blake3 h;
        for (std::size_t i = 0; i < data.size(); i += step) h.update(std::string_view(data).substr(i, step));
        EXPECT_EQ(h.finalize_hex(), blake3_hex(data)) << step;
    }
}

} // namespace
} // namespace specforge
