#pragma once

#include "slvid/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <array>
#include <span>
#include <string_view>
#include <vector>

namespace slv {

struct Utterance;

// Two per-frame ReLU layers (F -> H -> H), mean pooling over frames and a
// linear region classifier (H -> R).
struct EncoderParams {
    std::size_t input_dim = 0;   // F
    std::size_t hidden_dim = 0;  // H
    std::size_t num_regions = 0; // R

    Matrix w1;                   // F x H
    std::vector<double> b1;      // H
    Matrix w2;                   // H x H
    std::vector<double> b2;      // H
    Matrix head_w;               // H x R
    std::vector<double> head_b;  // R

    // Bumped by every in-place update so caches from older weights are detected.
    std::uint64_t version = 0;

    static EncoderParams zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_regions);
    // Glorot-uniform weights, zero biases.
    static EncoderParams glorot(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_regions,
                                std::uint64_t seed);

    EncoderParams zeros_like() const { return zeros(input_dim, hidden_dim, num_regions); }

    static constexpr std::size_t kNumTensors = 6;
    static constexpr std::array<std::string_view, kNumTensors> kTensorNames{"w1", "b1", "w2", "b2", "head_w", "head_b"};
    static bool is_head_tensor(std::size_t i) { return i >= 4; }

    // Tensors in declaration order.
    std::array<std::span<double>, kNumTensors> tensors();
    std::array<std::span<const double>, kNumTensors> tensors() const;

    bool same_values(const EncoderParams& other) const;
};

struct ForwardCache {
    Matrix input;           // T x F
    Matrix pre1;            // T x H, before the first ReLU
    Matrix pre2;            // T x H, before the second ReLU
    Matrix frame_embeddings;// T x H
    std::vector<double> pooled;
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t num_regions = 0;
    std::uint64_t params_version = 0;
};

struct ForwardResult {
    std::vector<double> pooled;  // (1/T) sum_t e_t
    std::vector<double> logits;
    ForwardCache cache;
};

Matrix frames_as_matrix(const Utterance& utt);

ForwardResult forward(const EncoderParams& params, const Matrix& frames);
ForwardResult forward(const EncoderParams& params, const Utterance& utt);

// Adds the gradient of the upstream scalar into grads. Either upstream
// gradient may be empty, meaning zero.
void accumulate_backward(const EncoderParams& params, const ForwardCache& cache, std::span<const double> grad_pooled,
                         std::span<const double> grad_logits, EncoderParams& grads);

EncoderParams backward(const EncoderParams& params, const ForwardCache& cache, std::span<const double> grad_pooled,
                       std::span<const double> grad_logits);

struct CrossEntropy {
    double loss = 0.0;
    std::vector<double> grad_logits;
};

CrossEntropy cross_entropy(std::span<const double> logits, std::size_t label);

struct Normalized {
    std::vector<double> unit;
    double norm = 0.0;
};

inline constexpr double kMinEmbeddingNorm = 1e-12;

Normalized l2_normalize(std::span<const double> e);
// Pulls a gradient on the unit vector back to the raw vector:
// (I/|e| - e e^T/|e|^3) g.
std::vector<double> l2_normalize_backward(const Normalized& n, std::span<const double> grad_unit);

} // namespace slv
