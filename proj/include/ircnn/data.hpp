#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ircnn/layers.hpp"
#include "ircnn/rng.hpp"
#include "ircnn/tensor.hpp"

namespace ircnn {

/// Images in [0, 1] (before normalization) with integer class labels.
struct Dataset {
    std::string name;
    std::size_t classes = 0;
    Tensor<float> images;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    /// Checks N, label range and, for the known datasets, the sample shape.
    void validate() const;
};

/// Big-endian IDX: magic 0x00000803 for images (n, rows, cols), 0x00000801
/// for labels (n). Pixels are divided by 255.
Dataset load_mnist_idx(const std::string& image_path, const std::string& label_path);

enum class CifarVariant { cifar10, cifar100 };

/// CIFAR-10 records are <label><3072 pixels>, CIFAR-100 records
/// <coarse><fine><3072 pixels>; pixels are R, G, B planes of 32x32. Only the
/// fine CIFAR-100 label is kept.
Dataset load_cifar_bin(const std::vector<std::string>& paths, CifarVariant variant);

enum class Split { train, test };

/// Loads a dataset from the conventional layout under `data_dir`:
/// mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte,
/// cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin,
/// cifar-100-binary/{train,test}.bin.
Dataset load_dataset(std::string_view name, const std::string& data_dir, Split split);

/// True when every file load_dataset would read exists.
bool dataset_available(std::string_view name, const std::string& data_dir);

struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
    bool operator==(const NormStats&) const = default;
};

inline constexpr double kNormEps = 1e-8;

NormStats compute_stats(const Dataset& ds);
/// x <- (x - mean_c) / max(std_c, eps) per channel.
void normalize(Dataset& ds, const NormStats& stats);

/// Samples [begin, begin + count).
Dataset subset(const Dataset& ds, std::size_t begin, std::size_t count);
Dataset select(const Dataset& ds, const std::vector<std::size_t>& indices);

/// Splits off the last round(fraction * N) samples as validation.
std::pair<Dataset, Dataset> holdout_split(const Dataset& ds, double fraction);

/// FNV-1a over the little-endian bytes of the image floats, then the labels
/// as little-endian int32.
std::uint64_t checksum(const Dataset& ds);

struct AugmentConfig {
    bool horizontal_flip = false;
    double flip_probability = 0.5;
};

struct Batch {
    Tensor<float> x;
    std::vector<int> labels;
    std::vector<std::size_t> indices;
    std::vector<std::uint8_t> flipped;
};

/// Train mode: a fresh permutation from `rng` per pass and per-sample flips.
/// Eval mode: dataset order, no augmentation. Both cover every sample once,
/// the last batch possibly short.
class BatchIterator {
public:
    BatchIterator(const Dataset& ds, std::size_t batch, Mode mode, const AugmentConfig& augment, Rng& rng);

    bool next(Batch& out);
    std::size_t batches() const noexcept { return (order_.size() + batch_ - 1) / batch_; }

private:
    const Dataset& ds_;
    std::size_t batch_;
    Mode mode_;
    AugmentConfig augment_;
    Rng& rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

} // namespace ircnn
