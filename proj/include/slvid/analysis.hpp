#pragma once

#include "slvid/evaluation.hpp"
#include "slvid/matrix.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace slv {

struct TsneConfig {
    double perplexity = 30.0;
    std::size_t n_iter = 1000;
    double early_exaggeration = 12.0;
    std::size_t exaggeration_iters = 250;
    double learning_rate = 200.0;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
    std::size_t momentum_switch_iter = 250;
    std::uint64_t seed = 1;

    void validate(std::size_t n_points) const;
};

// Per-point Gaussian conditional p_{j|i} with the bandwidth found by bisection on beta = 1/(2 sigma^2).
struct ConditionalRow {
    std::vector<double> p;  // p[i] == 0 for the point itself
    double beta = 1.0;
    double entropy = 0.0;   // natural log
    std::size_t iterations = 0;
    bool converged = false;
};

inline constexpr std::size_t kPerplexityMaxIter = 50;
inline constexpr double kPerplexityTol = 1e-5;
inline constexpr double kAffinityFloor = 1e-12;

ConditionalRow calibrate_row(std::span<const double> squared_distances, std::size_t self, double perplexity);

struct Affinities {
    Matrix joint;  // symmetric, zero diagonal, sums to 1
    std::vector<double> betas;
    std::size_t capped_rows = 0;  // rows whose search hit the iteration cap
    double max_log_perplexity_error = 0.0;
};

Affinities compute_affinities(const Matrix& x, double perplexity);

// q_ij = (1 + |y_i - y_j|^2)^-1 / sum_{k != l} (1 + |y_k - y_l|^2)^-1
Matrix student_t_affinities(const Matrix& y);
double kl_divergence(const Matrix& p, const Matrix& q);
// 4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2)
Matrix tsne_gradient(const Matrix& p, const Matrix& y);

struct Projection {
    Matrix y;                         // n x 2
    std::vector<double> kl_trace;     // KL(P || Q) before each update, plus the final value
    std::vector<std::string> labels;  // region per point
    std::size_t capped_rows = 0;
};

// Exact O(n^2) t-SNE. Point i starts from N(0, 1e-4^2) drawn from a stream
// keyed by point_keys[i] (default: i), so permuting rows together with their
// keys permutes the output.
Projection tsne(const Matrix& x, std::vector<std::string> labels, const TsneConfig& cfg,
                std::span<const std::uint64_t> point_keys = {});

inline constexpr std::size_t kPaletteSize = 20;
const char* palette_color(std::size_t rank);

std::string render_scatter(const Projection& proj);

// Row-normalized (when requested) cell intensities in [0, 1]; zero rows stay 0.
Matrix confusion_shades(const ConfusionMatrix& cm, bool normalize);
std::string render_confusion(const ConfusionMatrix& cm, bool normalize);

struct ClusterQuality {
    double silhouette = 0.0;  // mean over points of (b - a) / max(a, b)
    double knn_purity = 0.0;  // fraction of points whose k-NN majority label is their own
};

inline constexpr std::size_t kPurityNeighbors = 10;

double knn_purity(const Matrix& x, std::span<const int> labels, std::size_t k = kPurityNeighbors);
ClusterQuality cluster_quality(const Matrix& x, std::span<const int> labels);

} // namespace slv
