#pragma once

#include "slvid/matrix.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace slv {

enum class Similarity { dot, cosine };
enum class SupconDenominator { negatives_only, all };

// Hyperparameters of the three in-batch objectives.
struct ContrastiveParams {
    double tau = 0.1;      // SC temperature
    double margin = 0.05;  // TM margin
    double alpha = 2.0;    // MS positive scale
    double beta = 50.0;    // MS negative scale
    double lambda = 1.0;   // MS similarity offset
    double epsilon = 0.1;  // MS mining slack
    // cosine: pooled embeddings are L2-normalized before SC and MS.
    Similarity similarity = Similarity::cosine;
    SupconDenominator supcon_denominator = SupconDenominator::negatives_only;

    void validate() const;
};

struct Triplet {
    std::size_t anchor;
    std::size_t positive;
    std::size_t negative;
    bool operator==(const Triplet&) const = default;
};

struct MinedPairs {
    std::vector<std::vector<std::size_t>> positives;  // P_i, ascending
    std::vector<std::vector<std::size_t>> negatives;  // N_i, ascending
    std::vector<Triplet> triplets;                    // (a, p, n), lexicographic
};

MinedPairs mine(std::span<const int> labels);

struct LossOutput {
    double value = 0.0;
    Matrix grad;              // m x H, d value / d z_i
    std::size_t n_active = 0; // anchors (SC, MS) or triplets (TM) with a nonzero term
};

// Sum over anchors with non-empty P_i and N_i of
//   -(1/|P_i|) sum_p log( exp(z_i.z_p/tau) / sum_{n in N_i} exp(z_i.z_n/tau) ).
// With SupconDenominator::all the denominator runs over every k != i and only
// an empty P_i skips the anchor.
LossOutput sc_loss(const Matrix& z, const MinedPairs& pairs, const ContrastiveParams& params);

// Mean over all mined triplets of max(0, |z_a - z_p| - |z_a - z_n| + margin).
LossOutput tm_loss(const Matrix& z, const MinedPairs& pairs, const ContrastiveParams& params);

struct MsSelection {
    std::vector<std::vector<std::size_t>> kept_positives;
    std::vector<std::vector<std::size_t>> kept_negatives;
};

// Multi-similarity mining on a precomputed similarity matrix.
//   keep (i, p) iff S_ip < max_n S_in + epsilon
//   keep (i, n) iff S_in > min_p S_ip - epsilon
// Anchors with an empty P_i or N_i keep nothing.
MsSelection ms_mine(const Matrix& similarity, const MinedPairs& pairs, double epsilon);

// One anchor's weighted term:
//   (1/alpha) log(1 + sum_p e^{-alpha (S_ip - lambda)}) + (1/beta) log(1 + sum_n e^{beta (S_in - lambda)})
double ms_anchor_term(std::span<const double> positive_sims, std::span<const double> negative_sims,
                      const ContrastiveParams& params);

// (1/m) sum of ms_anchor_term over anchors, restricted to mined pairs.
// Mining is a stop-gradient selection.
LossOutput ms_loss(const Matrix& z, std::span<const int> labels, const ContrastiveParams& params);

Matrix similarity_matrix(const Matrix& z);

} // namespace slv
