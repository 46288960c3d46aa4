#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "specforge/error.hpp"

namespace specforge {

enum class DType { F32, F64 };

std::string_view dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

using Shape = std::vector<std::int64_t>;

std::int64_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

// A dense row-major tensor. The payload is kept as little-endian bytes so the
// on-disk representation round-trips bit-exactly; typed views are provided
// for arithmetic.
class Tensor {
public:
    Tensor() = default;

    static Tensor from_f32(Shape shape, std::span<const float> values);
    static Tensor from_f64(Shape shape, std::span<const double> values);
    // Rounds each value to the requested storage dtype.
    static Tensor from_values(DType dtype, Shape shape, std::span<const double> values);
    static Tensor from_bytes(DType dtype, Shape shape, std::vector<std::byte> bytes);
    static Tensor zeros(DType dtype, Shape shape);

    DType dtype() const noexcept { return dtype_; }
    const Shape& shape() const noexcept { return shape_; }
    std::int64_t numel() const { return element_count(shape_); }
    std::span<const std::byte> bytes() const noexcept { return bytes_; }

    // Throws unless dtype() matches.
    std::span<const float> f32() const;
    std::span<const double> f64() const;

    double at(std::size_t flat_index) const;
    // Widened copy of the payload.
    std::vector<double> to_f64() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    DType dtype_ = DType::F32;
    Shape shape_;
    std::vector<std::byte> bytes_;
};

// Named tensors plus string metadata. std::map keeps tensors in lexicographic
// name order, which is the canonical order for hashing and serialization.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> metadata{{"format_version", "1"}};

    bool contains(const std::string& name) const { return tensors.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    std::int64_t parameter_count() const;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr const char* kFormatVersion = "1";

bool is_valid_tensor_name(std::string_view name);

// Checks TensorRecord and Checkpoint invariants; throws FormatError.
void validate_checkpoint(const Checkpoint& ckpt);

std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::byte> file_bytes);

Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

struct TensorMismatch {
    std::string name;
    std::string detail;
};

struct CompatibilityReport {
    std::vector<std::string> only_in_a;
    std::vector<std::string> only_in_b;
    std::vector<TensorMismatch> mismatched;

    bool is_compatible() const { return only_in_a.empty() && only_in_b.empty() && mismatched.empty(); }
    std::string summary() const;
};

CompatibilityReport validate_compatibility(const Checkpoint& a, const Checkpoint& b);

class IncompatibleError : public Error {
public:
    IncompatibleError(const std::string& context, CompatibilityReport report);
    const CompatibilityReport& report() const noexcept { return report_; }

private:
    CompatibilityReport report_;
};

// Throws IncompatibleError when the report is not clean.
void require_compatible(const Checkpoint& a, const Checkpoint& b, const std::string& context);

} // namespace specforge
