#include "ircnn/data.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace ircnn {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(in.tellg()));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw IoError("cannot read '" + path + "'");
    return bytes;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
           std::uint32_t(b[off + 3]);
}

std::string hex(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

std::string join(const std::string& dir, const std::string& rel) {
    return (std::filesystem::path(dir) / rel).string();
}

std::vector<std::string> dataset_files(std::string_view name, const std::string& dir, Split split) {
    const bool train = split == Split::train;
    if (name == "mnist") {
        const std::string stem = train ? "mnist/train-" : "mnist/t10k-";
        return {join(dir, stem + "images-idx3-ubyte"), join(dir, stem + "labels-idx1-ubyte")};
    }
    if (name == "cifar10") {
        if (!train) return {join(dir, "cifar-10-batches-bin/test_batch.bin")};
        std::vector<std::string> files;
        for (int i = 1; i <= 5; ++i) files.push_back(join(dir, "cifar-10-batches-bin/data_batch_" + std::to_string(i) + ".bin"));
        return files;
    }
    if (name == "cifar100") return {join(dir, train ? "cifar-100-binary/train.bin" : "cifar-100-binary/test.bin")};
    throw ConfigError("unknown dataset '" + std::string(name) + "' (expected mnist, cifar10 or cifar100)");
}

} // namespace

void Dataset::validate() const {
    if (images.shape().n != labels.size()) {
        throw DataError(name + ": " + std::to_string(images.shape().n) + " images but " +
                        std::to_string(labels.size()) + " labels");
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= classes) {
            throw DataError(name + ": label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
        }
    }
    const Shape s = images.shape();
    if (name == "mnist" && !(s.c == 1 && s.h == 28 && s.w == 28)) throw DataError("mnist samples must be 1x28x28");
    if ((name == "cifar10" || name == "cifar100") && !(s.c == 3 && s.h == 32 && s.w == 32)) {
        throw DataError(name + " samples must be 3x32x32");
    }
}

Dataset load_mnist_idx(const std::string& image_path, const std::string& label_path) {
    const std::vector<std::uint8_t> img = read_file(image_path);
    const std::vector<std::uint8_t> lab = read_file(label_path);
    if (img.size() < 4 || be32(img, 0) != 0x00000803) {
        const std::string seen = img.size() < 4 ? "none" : hex(be32(img, 0));
        throw FormatError("'" + image_path + "': bad IDX image magic " + seen + " (expected 0x00000803)");
    }
    if (lab.size() < 4 || be32(lab, 0) != 0x00000801) {
        const std::string seen = lab.size() < 4 ? "none" : hex(be32(lab, 0));
        throw FormatError("'" + label_path + "': bad IDX label magic " + seen + " (expected 0x00000801)");
    }
    if (img.size() < 16) throw FormatError("'" + image_path + "' is too short for an IDX image header");
    if (lab.size() < 8) throw FormatError("'" + label_path + "' is too short for an IDX label header");
    const std::size_t n = be32(img, 4);
    const std::size_t rows = be32(img, 8);
    const std::size_t cols = be32(img, 12);
    const std::size_t nl = be32(lab, 4);
    if (img.size() != 16 + n * rows * cols) {
        throw FormatError("'" + image_path + "': expected " + std::to_string(16 + n * rows * cols) + " bytes, found " +
                          std::to_string(img.size()));
    }
    if (lab.size() != 8 + nl) {
        throw FormatError("'" + label_path + "': expected " + std::to_string(8 + nl) + " bytes, found " +
                          std::to_string(lab.size()));
    }
    if (n != nl) throw FormatError("IDX image count " + std::to_string(n) + " != label count " + std::to_string(nl));

    Dataset ds;
    ds.name = "mnist";
    ds.classes = 10;
    ds.images = Tensor<float>(Shape{n, 1, rows, cols});
    for (std::size_t i = 0; i < n * rows * cols; ++i) ds.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (lab[8 + i] > 9) throw FormatError("'" + label_path + "': label " + std::to_string(lab[8 + i]) + " > 9");
        ds.labels[i] = lab[8 + i];
    }
    return ds;
}

Dataset load_cifar_bin(const std::vector<std::string>& paths, CifarVariant variant) {
    const std::size_t label_bytes = variant == CifarVariant::cifar10 ? 1 : 2;
    const std::size_t pixels = 3 * 32 * 32;
    const std::size_t record = label_bytes + pixels;
    const std::size_t classes = variant == CifarVariant::cifar10 ? 10 : 100;

    std::vector<std::vector<std::uint8_t>> files;
    std::size_t n = 0;
    for (const std::string& p : paths) {
        files.push_back(read_file(p));
        if (files.back().size() % record != 0) {
            throw FormatError("'" + p + "': length " + std::to_string(files.back().size()) +
                              " is not a multiple of the " + std::to_string(record) + "-byte record");
        }
        n += files.back().size() / record;
    }

    Dataset ds;
    ds.name = variant == CifarVariant::cifar10 ? "cifar10" : "cifar100";
    ds.classes = classes;
    ds.images = Tensor<float>(Shape{n, 3, 32, 32});
    ds.labels.resize(n);
    std::size_t s = 0;
    for (std::size_t f = 0; f < files.size(); ++f) {
        const std::vector<std::uint8_t>& b = files[f];
        for (std::size_t off = 0; off < b.size(); off += record, ++s) {
            const std::uint8_t label = b[off + label_bytes - 1];
            if (label >= classes) {
                throw FormatError("'" + paths[f] + "': label " + std::to_string(label) + " in record " +
                                  std::to_string(off / record) + " exceeds " + std::to_string(classes - 1));
            }
            ds.labels[s] = label;
            float* dst = ds.images.data() + s * pixels;
            for (std::size_t i = 0; i < pixels; ++i) dst[i] = static_cast<float>(b[off + label_bytes + i]) / 255.0f;
        }
    }
    return ds;
}

Dataset load_dataset(std::string_view name, const std::string& data_dir, Split split) {
    const std::vector<std::string> files = dataset_files(name, data_dir, split);
    Dataset ds;
    if (name == "mnist") {
        ds = load_mnist_idx(files[0], files[1]);
    } else {
        ds = load_cifar_bin(files, name == "cifar10" ? CifarVariant::cifar10 : CifarVariant::cifar100);
    }
    ds.validate();
    return ds;
}

bool dataset_available(std::string_view name, const std::string& data_dir) {
    if (data_dir.empty()) return false;
    for (Split split : {Split::train, Split::test}) {
        for (const std::string& f : dataset_files(name, data_dir, split)) {
            if (!std::filesystem::is_regular_file(f)) return false;
        }
    }
    return true;
}

NormStats compute_stats(const Dataset& ds) {
    const Shape s = ds.images.shape();
    NormStats st;
    st.mean.assign(s.c, 0.0);
    st.std.assign(s.c, 0.0);
    const double count = static_cast<double>(s.n * s.plane());
    if (count == 0) return st;
    for (std::size_t c = 0; c < s.c; ++c) {
        double sum = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const float* p = ds.images.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const float* p = ds.images.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - mean) * (p[i] - mean);
        }
        st.mean[c] = mean;
        st.std[c] = std::sqrt(sq / count);
    }
    return st;
}

void normalize(Dataset& ds, const NormStats& stats) {
    const Shape s = ds.images.shape();
    if (stats.mean.size() != s.c || stats.std.size() != s.c) {
        throw ConfigError("normalization statistics have " + std::to_string(stats.mean.size()) +
                          " channels, dataset has " + std::to_string(s.c));
    }
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const double inv = 1.0 / std::max(stats.std[c], kNormEps);
            float* p = ds.images.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) p[i] = static_cast<float>((p[i] - stats.mean[c]) * inv);
        }
    }
}

Dataset select(const Dataset& ds, const std::vector<std::size_t>& indices) {
    const Shape s = ds.images.shape();
    Dataset out;
    out.name = ds.name;
    out.classes = ds.classes;
    out.images = Tensor<float>(Shape{indices.size(), s.c, s.h, s.w});
    out.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= ds.size()) throw ConfigError("sample index " + std::to_string(indices[i]) + " out of range");
        std::memcpy(out.images.sample(i), ds.images.sample(indices[i]), s.sample() * sizeof(float));
        out.labels[i] = ds.labels[indices[i]];
    }
    return out;
}

Dataset subset(const Dataset& ds, std::size_t begin, std::size_t count) {
    if (begin + count > ds.size()) {
        throw ConfigError("subset [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") exceeds dataset size " + std::to_string(ds.size()));
    }
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), begin);
    return select(ds, idx);
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& ds, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in (0, 1)");
    const std::size_t val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
    if (val == 0 || val >= ds.size()) throw ConfigError("holdout split leaves an empty part");
    return {subset(ds, 0, ds.size() - val), subset(ds, ds.size() - val, val)};
}

std::uint64_t checksum(const Dataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint32_t word) {
        for (int b = 0; b < 4; ++b) {
            h ^= (word >> (8 * b)) & 0xffu;
            h *= 0x100000001b3ULL;
        }
    };
    for (float v : ds.images.values()) mix(std::bit_cast<std::uint32_t>(v));
    for (int l : ds.labels) mix(static_cast<std::uint32_t>(l));
    return h;
}

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch, Mode mode, const AugmentConfig& augment, Rng& rng)
    : ds_(ds), batch_(batch), mode_(mode), augment_(augment), rng_(rng), order_(ds.size()) {
    if (batch == 0) throw ConfigError("batch size must be positive");
    if (batch > ds.size()) {
        throw ConfigError("batch size " + std::to_string(batch) + " exceeds dataset size " + std::to_string(ds.size()));
    }
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (mode_ == Mode::train) {
        for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
    }
}

bool BatchIterator::next(Batch& out) {
    if (pos_ >= order_.size()) return false;
    const std::size_t count = std::min(batch_, order_.size() - pos_);
    const Shape s = ds_.images.shape();
    out.x = Tensor<float>(Shape{count, s.c, s.h, s.w});
    out.labels.resize(count);
    out.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                       order_.begin() + static_cast<std::ptrdiff_t>(pos_ + count));
    out.flipped.assign(count, 0);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = out.indices[i];
        std::memcpy(out.x.sample(i), ds_.images.sample(src), s.sample() * sizeof(float));
        out.labels[i] = ds_.labels[src];
        if (mode_ == Mode::train && augment_.horizontal_flip && rng_.bernoulli(augment_.flip_probability)) {
            out.flipped[i] = 1;
            float* p = out.x.sample(i);
            for (std::size_t row = 0; row < s.c * s.h; ++row) std::reverse(p + row * s.w, p + (row + 1) * s.w);
        }
    }
    pos_ += count;
    return true;
}

} // namespace ircnn
