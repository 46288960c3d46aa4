#include "specforge/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace specforge {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are stored in host order and must be little-endian");

using nlohmann::json;

std::string_view dtype_name(DType dtype) {
    switch (dtype) {
    case DType::F32: return "F32";
    case DType::F64: return "F64";
    }
    return "?";
}

std::size_t dtype_size(DType dtype) { return dtype == DType::F32 ? 4 : 8; }

std::int64_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ",")); }

namespace {

void check_shape(const Shape& shape) {
    for (auto d : shape) {
        if (d <= 0) {
            throw FormatError(fmt::format("tensor shape {} has a non-positive dimension", shape_string(shape)));
        }
    }
}

template <typename T>
std::vector<std::byte> to_bytes(std::span<const T> values) {
    std::vector<std::byte> out(values.size_bytes());
    if (!values.empty()) {
        std::memcpy(out.data(), values.data(), values.size_bytes());
    }
    return out;
}

} // namespace

Tensor Tensor::from_f32(Shape shape, std::span<const float> values) {
    return from_bytes(DType::F32, std::move(shape), to_bytes(values));
}

Tensor Tensor::from_f64(Shape shape, std::span<const double> values) {
    return from_bytes(DType::F64, std::move(shape), to_bytes(values));
}

Tensor Tensor::from_values(DType dtype, Shape shape, std::span<const double> values) {
    if (dtype == DType::F64) {
        return from_f64(std::move(shape), values);
    }
    std::vector<float> narrowed(values.begin(), values.end());
    return from_f32(std::move(shape), narrowed);
}

Tensor Tensor::from_bytes(DType dtype, Shape shape, std::vector<std::byte> bytes) {
    check_shape(shape);
    const auto expected = static_cast<std::size_t>(element_count(shape)) * dtype_size(dtype);
    if (bytes.size() != expected) {
        throw FormatError(fmt::format("tensor payload is {} bytes but shape {} of {} needs {}", bytes.size(),
                                      shape_string(shape), dtype_name(dtype), expected));
    }
    Tensor t;
    t.dtype_ = dtype;
    t.shape_ = std::move(shape);
    t.bytes_ = std::move(bytes);
    return t;
}

Tensor Tensor::zeros(DType dtype, Shape shape) {
    check_shape(shape);
    std::vector<std::byte> bytes(static_cast<std::size_t>(element_count(shape)) * dtype_size(dtype));
    return from_bytes(dtype, std::move(shape), std::move(bytes));
}

std::span<const float> Tensor::f32() const {
    if (dtype_ != DType::F32) {
        throw FormatError("tensor is not F32");
    }
    return {reinterpret_cast<const float*>(bytes_.data()), bytes_.size() / sizeof(float)};
}

std::span<const double> Tensor::f64() const {
    if (dtype_ != DType::F64) {
        throw FormatError("tensor is not F64");
    }
    return {reinterpret_cast<const double*>(bytes_.data()), bytes_.size() / sizeof(double)};
}

double Tensor::at(std::size_t flat_index) const {
    return dtype_ == DType::F32 ? static_cast<double>(f32()[flat_index]) : f64()[flat_index];
}

std::vector<double> Tensor::to_f64() const {
    if (dtype_ == DType::F64) {
        auto v = f64();
        return {v.begin(), v.end()};
    }
    auto v = f32();
    return {v.begin(), v.end()};
}

const Tensor& Checkpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw FormatError(fmt::format("missing tensor \"{}\"", name));
    }
    return it->second;
}

std::int64_t Checkpoint::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : tensors) {
        n += t.numel();
    }
    return n;
}

bool is_valid_tensor_name(std::string_view name) {
    if (name.empty() || name == "__metadata__") {
        return false;
    }
    return std::none_of(name.begin(), name.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

void validate_checkpoint(const Checkpoint& ckpt) {
    for (const auto& [name, t] : ckpt.tensors) {
        if (!is_valid_tensor_name(name)) {
            throw FormatError(fmt::format("invalid tensor name \"{}\"", name));
        }
        if (t.shape().empty() && t.bytes().empty()) {
            throw FormatError(fmt::format("tensor \"{}\" has no payload", name));
        }
        check_shape(t.shape());
        if (t.bytes().size() != static_cast<std::size_t>(t.numel()) * dtype_size(t.dtype())) {
            throw FormatError(fmt::format("tensor \"{}\" payload size does not match its shape", name));
        }
    }
}

std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.metadata.count("format_version")) {
        throw FormatError("checkpoint metadata lacks \"format_version\"");
    }
    validate_checkpoint(ckpt);

    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        if (t.dtype() != DType::F32) {
            throw FormatError(fmt::format("tensor \"{}\" is {}; only F32 is written to disk", name, dtype_name(t.dtype())),
                              "convert oracle tensors to F32 before saving");
        }
        const std::uint64_t end = offset + t.bytes().size();
        header[name] = {{"dtype", dtype_name(t.dtype())}, {"shape", t.shape()}, {"data_offsets", {offset, end}}};
        offset = end;
    }
    json meta = json::object();
    for (const auto& [k, v] : ckpt.metadata) {
        meta[k] = v;
    }
    header["__metadata__"] = std::move(meta);

    const std::string text = header.dump();
    std::vector<std::byte> out(8 + text.size() + offset);
    const std::uint64_t n = text.size();
    std::memcpy(out.data(), &n, 8);
    std::memcpy(out.data() + 8, text.data(), text.size());
    std::size_t pos = 8 + text.size();
    for (const auto& [_, t] : ckpt.tensors) {
        if (!t.bytes().empty()) {
            std::memcpy(out.data() + pos, t.bytes().data(), t.bytes().size());
        }
        pos += t.bytes().size();
    }
    return out;
}

namespace {

DType parse_dtype(const json& j, const std::string& name) {
    if (!j.is_string()) {
        throw FormatError(fmt::format("unknown dtype for tensor \"{}\"", name));
    }
    const auto s = j.get<std::string>();
    if (s == "F32") return DType::F32;
    if (s == "F64") return DType::F64;
    throw FormatError(fmt::format("unknown dtype \"{}\" for tensor \"{}\"", s, name));
}

Shape parse_shape(const json& j, const std::string& name) {
    if (!j.is_array()) {
        throw FormatError(fmt::format("tensor \"{}\" shape is not an array", name));
    }
    Shape shape;
    for (const auto& d : j) {
        if (!d.is_number_integer() || d.get<std::int64_t>() <= 0) {
            throw FormatError(fmt::format("tensor \"{}\" shape has a non-positive dimension", name));
        }
        shape.push_back(d.get<std::int64_t>());
    }
    return shape;
}

struct Span {
    std::uint64_t begin;
    std::uint64_t end;
    std::string name;
};

} // namespace

Checkpoint parse_checkpoint(std::span<const std::byte> file_bytes) {
    if (file_bytes.size() < 8) {
        throw FormatError("malformed header length: file shorter than 8 bytes");
    }
    std::uint64_t n = 0;
    std::memcpy(&n, file_bytes.data(), 8);
    if (n > file_bytes.size() - 8) {
        throw FormatError(fmt::format("malformed header length: {} exceeds file size {}", n, file_bytes.size()));
    }
    const std::string_view text(reinterpret_cast<const char*>(file_bytes.data() + 8), n);

    std::set<std::string> seen;
    bool duplicate = false;
    std::string duplicate_name;
    json header;
    try {
        header = json::parse(text, [&](int depth, json::parse_event_t event, json& parsed) {
            if (event == json::parse_event_t::key && depth == 1) {
                auto key = parsed.get<std::string>();
                if (!seen.insert(key).second && !duplicate) {
                    duplicate = true;
                    duplicate_name = key;
                }
            }
            return true;
        });
    } catch (const json::parse_error& e) {
        throw FormatError(fmt::format("header not valid JSON: {}", e.what()));
    }
    if (duplicate) {
        throw FormatError(fmt::format("duplicate tensor name \"{}\"", duplicate_name));
    }
    if (!header.is_object()) {
        throw FormatError("header not valid JSON: top level is not an object");
    }

    const std::span<const std::byte> data = file_bytes.subspan(8 + n);
    Checkpoint ckpt;
    ckpt.metadata.clear();
    std::vector<Span> spans;

    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object()) {
                throw FormatError("__metadata__ is not an object");
            }
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) {
                    throw FormatError(fmt::format("metadata value for \"{}\" is not a string", k));
                }
                ckpt.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        if (!is_valid_tensor_name(name)) {
            throw FormatError(fmt::format("invalid tensor name \"{}\"", name));
        }
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            throw FormatError(fmt::format("tensor \"{}\" entry lacks dtype/shape/data_offsets", name));
        }
        const DType dtype = parse_dtype(entry["dtype"], name);
        Shape shape = parse_shape(entry["shape"], name);
        const auto& offs = entry["data_offsets"];
        if (!offs.is_array() || offs.size() != 2 || !offs[0].is_number_unsigned() || !offs[1].is_number_unsigned()) {
            throw FormatError(fmt::format("tensor \"{}\" data_offsets must be two non-negative integers", name));
        }
        const auto begin = offs[0].get<std::uint64_t>();
        const auto end = offs[1].get<std::uint64_t>();
        if (begin > end || end > data.size()) {
            throw FormatError(fmt::format("out-of-bounds data offsets for tensor \"{}\": [{}, {}] with {} data bytes",
                                          name, begin, end, data.size()));
        }
        const auto expected = static_cast<std::uint64_t>(element_count(shape)) * dtype_size(dtype);
        if (end - begin != expected) {
            throw FormatError(fmt::format("tensor \"{}\" spans {} bytes but shape {} needs {}", name, end - begin,
                                          shape_string(shape), expected));
        }
        spans.push_back({begin, end, name});
        const auto* p = data.data() + begin;
        ckpt.tensors.emplace(name, Tensor::from_bytes(dtype, std::move(shape), std::vector<std::byte>(p, p + (end - begin))));
    }

    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i].begin < spans[i - 1].end) {
            throw FormatError(fmt::format("overlapping data offsets between \"{}\" and \"{}\"", spans[i - 1].name,
                                          spans[i].name));
        }
    }
    return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw FormatError(fmt::format("file not found: {}", path.string()), "check the checkpoint path");
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(fmt::format("cannot open {}", path.string()));
    }
    const auto size = std::filesystem::file_size(path);
    std::vector<std::byte> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in && size > 0) {
        throw FormatError(fmt::format("short read on {}", path.string()));
    }
    try {
        return parse_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()), e.hint());
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(fmt::format("cannot write {}", path.string()), "check that the directory exists and is writable");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(fmt::format("write failed for {}", path.string()));
    }
}

std::string CompatibilityReport::summary() const {
    if (is_compatible()) {
        return "compatible";
    }
    std::ostringstream os;
    for (const auto& n : only_in_a) os << "only in a: " << n << '\n';
    for (const auto& n : only_in_b) os << "only in b: " << n << '\n';
    for (const auto& m : mismatched) os << "mismatch: " << m.name << " (" << m.detail << ")\n";
    return os.str();
}

CompatibilityReport validate_compatibility(const Checkpoint& a, const Checkpoint& b) {
    CompatibilityReport r;
    auto ia = a.tensors.begin();
    auto ib = b.tensors.begin();
    while (ia != a.tensors.end() || ib != b.tensors.end()) {
        if (ib == b.tensors.end() || (ia != a.tensors.end() && ia->first < ib->first)) {
            r.only_in_a.push_back(ia->first);
            ++ia;
        } else if (ia == a.tensors.end() || ib->first < ia->first) {
            r.only_in_b.push_back(ib->first);
            ++ib;
        } else {
            const Tensor& ta = ia->second;
            const Tensor& tb = ib->second;
            if (ta.shape() != tb.shape() || ta.dtype() != tb.dtype()) {
                r.mismatched.push_back({ia->first, fmt::format("{} {} vs {} {}", dtype_name(ta.dtype()),
                                                               shape_string(ta.shape()), dtype_name(tb.dtype()),
                                                               shape_string(tb.shape()))});
            }
            ++ia;
            ++ib;
        }
    }
    return r;
}

IncompatibleError::IncompatibleError(const std::string& context, CompatibilityReport report)
    : Error(fmt::format("{}: checkpoints are incompatible\n{}", context, report.summary()),
            "both checkpoints must come from the same architecture (same tensor names, shapes and dtypes)"),
      report_(std::move(report)) {}

void require_compatible(const Checkpoint& a, const Checkpoint& b, const std::string& context) {
    auto report = validate_compatibility(a, b);
    if (!report.is_compatible()) {
        throw IncompatibleError(context, std::move(report));
    }
}

} // namespace specforge
