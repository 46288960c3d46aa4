#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "specforge/rng.hpp"
#include "specforge/tensor_store.hpp"

namespace specforge::test {

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                fmt::format("specforge-test-{}-{}", ::getpid(), counter++);
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::vector<char> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

// Random F32 checkpoint with `n` tensors of rank 1 or 2.
inline Checkpoint random_checkpoint(Rng& rng, int n) {
    Checkpoint c;
    for (int i = 0; i < n; ++i) {
        Shape shape{1 + static_cast<std::int64_t>(rng.below(5))};
        if (rng.below(2) == 1) shape.push_back(1 + static_cast<std::int64_t>(rng.below(5)));
        std::vector<float> v(static_cast<std::size_t>(element_count(shape)));
        for (auto& x : v) x = static_cast<float>(rng.normal(0.0, 1.0));
        c.tensors.emplace(fmt::format("layer{}.t{}.weight", rng.below(100), i), Tensor::from_f32(shape, v));
    }
    return c;
}

// Same names and shapes as `like`, fresh values.
inline Checkpoint perturbed(const Checkpoint& like, Rng& rng, double stddev) {
    Checkpoint c = like;
    for (auto& [name, t] : c.tensors) {
        auto v = t.to_f64();
        for (auto& x : v) x += rng.normal(0.0, stddev);
        t = Tensor::from_values(t.dtype(), t.shape(), v);
    }
    return c;
}

} // namespace specforge::test
