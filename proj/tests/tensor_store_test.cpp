#include "specforge/tensor_store.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "specforge/rng.hpp"
#include "test_util.hpp"

namespace specforge {
namespace {

// Assembles a raw file: 8-byte length, header text, then payload bytes.
std::vector<std::byte> raw_file(const std::string& header, const std::vector<float>& payload) {
    std::vector<std::byte> out(8 + header.size() + payload.size() * 4);
    const std::uint64_t n = header.size();
    std::memcpy(out.data(), &n, 8);
    std::memcpy(out.data() + 8, header.data(), header.size());
    if (!payload.empty()) std::memcpy(out.data() + 8 + header.size(), payload.data(), payload.size() * 4);
    return out;
}

void expect_parse_error(const std::vector<std::byte>& bytes, const std::string& fragment) {
    try {
        parse_checkpoint(bytes);
        FAIL() << "expected error containing \"" << fragment << "\"";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
}

TEST(TensorStoreTest, IdentityMatrixRoundTrip) {
    const std::string header =
        R"({"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]},"__metadata__":{"format_version":"1"}})";
    auto ckpt = parse_checkpoint(raw_file(header, {1, 0, 0, 1}));
    ASSERT_TRUE(ckpt.contains("w"));
    EXPECT_EQ(ckpt.at("w").shape(), (Shape{2, 2}));
    const auto v = ckpt.at("w").f32();
    EXPECT_EQ(std::vector<float>(v.begin(), v.end()), (std::vector<float>{1, 0, 0, 1}));
    EXPECT_EQ(ckpt.metadata.at("format_version"), "1");
}

TEST(TensorStoreTest, CanonicalBytesAreStable) {
    Checkpoint c;
    c.tensors.emplace("w", Tensor::from_f32({2, 2}, std::vector<float>{1, 0, 0, 1}));
    const auto bytes = serialize_checkpoint(c);
    const std::string expected_header =
        R"({"__metadata__":{"format_version":"1"},"w":{"data_offsets":[0,16],"dtype":"F32","shape":[2,2]}})";
    std::uint64_t n = 0;
    std::memcpy(&n, bytes.data(), 8);
    EXPECT_EQ(std::string(reinterpret_cast<const char*>(bytes.data() + 8), n), expected_header);
    EXPECT_EQ(bytes.size(), 8 + expected_header.size() + 16);
    EXPECT_EQ(serialize_checkpoint(parse_checkpoint(bytes)), bytes);
}

TEST(TensorStoreTest, SaveLoadFileRoundTripAndDeterminism) {
    test::TempDir dir;
    Checkpoint c;
    c.metadata["stage"] = "base";
    c.tensors.emplace("b.weight", Tensor::from_f32({3}, std::vector<float>{-0.0f, 1.5f, 3.25f}));
    c.tensors.emplace("a.weight", Tensor::from_f32({1, 2}, std::vector<float>{7.0f, -2.0f}));
    save_checkpoint(c, dir.path() / "one.safetensors");
    save_checkpoint(c, dir.path() / "two.safetensors");
    EXPECT_EQ(test::read_bytes(dir.path() / "one.safetensors"), test::read_bytes(dir.path() / "two.safetensors"));
    EXPECT_EQ(load_checkpoint(dir.path() / "one.safetensors"), c);
}

TEST(TensorStoreTest, EmptyCheckpointHoldsOnlyHeader) {
    Checkpoint c;
    const auto bytes = serialize_checkpoint(c);
    const std::string header = R"({"__metadata__":{"format_version":"1"}})";
    EXPECT_EQ(bytes.size(), 8 + header.size());
    EXPECT_EQ(parse_checkpoint(bytes), c);
}

TEST(TensorStoreTest, ZeroLengthDimensionRejected) {
    EXPECT_THROW(Tensor::zeros(DType::F32, {0, 4}), FormatError);
}

TEST(TensorStoreTest, F64IsNeverWritten) {
    Checkpoint c;
    c.tensors.emplace("x", Tensor::from_f64({1}, std::vector<double>{1.0}));
    EXPECT_THROW(serialize_checkpoint(c), FormatError);
}

TEST(TensorStoreTest, MalformedFilesAreRejected) {
    expect_parse_error({std::byte{1}, std::byte{0}}, "malformed header length");

    auto too_long = raw_file("{}", {});
    const std::uint64_t n = 1000;
    std::memcpy(too_long.data(), &n, 8);
    expect_parse_error(too_long, "malformed header length");

    expect_parse_error(raw_file("{not json", {}), "header not valid JSON");
    expect_parse_error(raw_file(R"({"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}})", {1, 2, 3}),
                       "out-of-bounds data offsets");
    expect_parse_error(raw_file(R"({"w":{"dtype":"BF16","shape":[1],"data_offsets":[0,4]}})", {1}), "unknown dtype");
    expect_parse_error(raw_file(R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
                                R"("w":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})",
                                {1, 2}),
                       "duplicate tensor name");
    expect_parse_error(raw_file(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
                                R"("b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
                                {1, 2, 3}),
                       "overlapping data offsets");
    expect_parse_error(raw_file(R"({"w":{"dtype":"F32","shape":[0],"data_offsets":[0,0]}})", {}),
                       "non-positive dimension");
}

TEST(TensorStoreTest, MissingFileReportsNotFound) {
    try {
        load_checkpoint("definitely/missing.file");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("file not found"), std::string::npos);
    }
}

TEST(CompatibilityTest, ReflexiveShapeMismatchAndAsymmetricKeys) {
    Checkpoint a;
    a.tensors.emplace("lm_head.weight", Tensor::zeros(DType::F32, {32, 16}));
    a.tensors.emplace("model.norm.weight", Tensor::zeros(DType::F32, {16}));
    EXPECT_TRUE(validate_compatibility(a, a).is_compatible());

    Checkpoint b;
    b.tensors.emplace("lm_head.weight", Tensor::zeros(DType::F32, {33, 16}));
    const auto r = validate_compatibility(a, b);
    EXPECT_FALSE(r.is_compatible());
    ASSERT_EQ(r.mismatched.size(), 1u);
    EXPECT_EQ(r.mismatched[0].name, "lm_head.weight");
    EXPECT_EQ(r.only_in_a, std::vector<std::string>{"model.norm.weight"});
    EXPECT_TRUE(r.only_in_b.empty());
}

TEST(TensorStorePropertyTest, RandomCheckpointsRoundTrip) {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        Checkpoint c = test::random_checkpoint(rng, 1 + static_cast<int>(rng.below(6)));
        c.metadata["seed"] = std::to_string(trial);
        const auto bytes = serialize_checkpoint(c);
        const auto back = parse_checkpoint(bytes);
        EXPECT_EQ(back, c);
        EXPECT_EQ(serialize_checkpoint(back), bytes);
        EXPECT_TRUE(validate_compatibility(c, c).is_compatible());
    }
}

} // namespace
} // namespace specforge
