#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "ircnn/graph.hpp"

namespace ircnn {

enum class Variant { ircnn, ein, eirn };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

/// Where LRN sits relative to the branch concatenation.
enum class LrnPlacement { per_branch, after_concat };

/// Three parallel branches: 1x1 RCL, 3x3 RCL, and 3x3/stride-1 average pool
/// followed by a 1x1 RCL. Output channels are the sum of the branch widths.
struct IrcnnBlockConfig {
    std::size_t in_channels = 0;  // filled in while chaining stages
    std::size_t c1x1 = 0;
    std::size_t c3x3 = 0;
    std::size_t cpool = 0;
    std::size_t steps = 2;

    std::size_t out_channels() const noexcept { return c1x1 + c3x3 + cpool; }
    void validate() const;
};

/// conv + ReLU, then optionally a 3x3/stride-2 max pool or a global average
/// pool, then dropout.
struct TransactionBlockConfig {
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    bool has_maxpool = false;
    bool has_gap = false;
    double dropout = 0.5;

    void validate() const;
};

struct StemConfig {
    std::size_t out_channels = 16;
    std::size_t kernel = 3;
};

struct StageConfig {
    IrcnnBlockConfig block;
    TransactionBlockConfig transaction;
};

struct ModelConfig {
    int version = 1;
    std::string preset = "custom";
    Variant variant = Variant::ircnn;
    std::size_t in_channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t classes = 10;
    StemConfig stem;
    std::vector<StageConfig> stages;
    LrnAttrs lrn;
    LrnPlacement lrn_placement = LrnPlacement::per_branch;
    double block_dropout = 0.5;

    /// Checks widths, kernel sizes, pooling placement and, for the paper
    /// preset, the three-stage layout. Fills each block's in_channels.
    void validate();
    Shape input_shape() const { return {1, in_channels, height, width}; }
};

ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig load_model_config(const std::string& path);

/// Output node id and channel count of an appended fragment.
struct FragmentOutput {
    std::string id;
    std::size_t channels = 0;
};

struct BlockOptions {
    Variant variant = Variant::ircnn;
    LrnAttrs lrn;
    LrnPlacement lrn_placement = LrnPlacement::per_branch;
    double dropout = 0.5;
};

template <typename T>
FragmentOutput append_ircnn_block(LayerGraph<T>& graph, const std::string& prefix, const std::string& input,
                                  const IrcnnBlockConfig& cfg, const BlockOptions& opts);

template <typename T>
FragmentOutput append_transaction_block(LayerGraph<T>& graph, const std::string& prefix, const std::string& input,
                                        std::size_t in_channels, const TransactionBlockConfig& cfg);

/// Standalone, validated block fragment reading the graph input.
template <typename T>
LayerGraph<T> build_ircnn_block(const IrcnnBlockConfig& cfg, std::size_t height, std::size_t width,
                                const BlockOptions& opts = {});

template <typename T>
LayerGraph<T> build_transaction_block(const TransactionBlockConfig& cfg, const Shape& input);

/// stem conv -> (IRCNN block, transaction block) x stages -> 1x1 classifier
/// -> softmax cross-entropy. Parameters are zero until initialized.
template <typename T>
LayerGraph<T> build_model(ModelConfig cfg);

} // namespace ircnn
