#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "ircnn/rng.hpp"
#include "ircnn/tensor.hpp"

namespace testing {

template <typename T>
ircnn::Tensor<T> random_tensor(ircnn::Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    ircnn::Rng rng(seed);
    ircnn::Tensor<T> t(s);
    for (T& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

template <typename T>
double max_abs_diff(const ircnn::Tensor<T>& a, const ircnn::Tensor<T>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

/// <t, seed> as a scalar loss, so d loss / d out = seed.
inline double dot(const ircnn::Tensor<double>& a, const ircnn::Tensor<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Largest relative error between `analytic` and central differences of
/// `loss` with respect to every element of `x`.
inline double fd_check(ircnn::Tensor<double>& x, const ircnn::Tensor<double>& analytic,
                       const std::function<double()>& loss, double step = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + step;
        const double up = loss();
        x[i] = keep - step;
        const double down = loss();
        x[i] = keep;
        worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * step)));
    }
    return worst;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("ircnn-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string str() const { return path_.string(); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

/// IDX image and label files for `n` 28x28 images.
inline void write_mnist_idx(const std::string& images, const std::string& labels,
                            const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& label_values) {
    std::vector<std::uint8_t> img;
    put_be32(img, 0x00000803);
    put_be32(img, static_cast<std::uint32_t>(label_values.size()));
    put_be32(img, 28);
    put_be32(img, 28);
    img.insert(img.end(), pixels.begin(), pixels.end());
    std::vector<std::uint8_t> lab;
    put_be32(lab, 0x00000801);
    put_be32(lab, static_cast<std::uint32_t>(label_values.size()));
    lab.insert(lab.end(), label_values.begin(), label_values.end());
    write_bytes(images, img);
    write_bytes(labels, lab);
}

/// A learnable synthetic MNIST tree under `root`: class k lights a bar at
/// row 2 + 2k, plus noise.
inline void write_synthetic_mnist(const std::string& root, std::size_t train, std::size_t test, std::uint64_t seed) {
    ircnn::Rng rng(seed);
    auto make = [&](std::size_t n, const std::string& stem) {
        std::vector<std::uint8_t> px(n * 784), lab(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int k = static_cast<int>(rng.below(10));
            lab[i] = static_cast<std::uint8_t>(k);
            for (std::size_t p = 0; p < 784; ++p) px[i * 784 + p] = static_cast<std::uint8_t>(rng.below(60));
            for (std::size_t c = 4; c < 24; ++c) px[i * 784 + (2 + 2 * k) * 28 + c] = 255;
        }
        write_mnist_idx(root + "/mnist/" + stem + "-images-idx3-ubyte", root + "/mnist/" + stem + "-labels-idx1-ubyte", px,
                        lab);
    };
    make(train, "train");
    make(test, "t10k");
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace testing
