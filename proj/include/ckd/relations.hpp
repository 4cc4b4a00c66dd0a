#pragma once

#include <cstdint>
#include <vector>

#include "ckd/matrix.hpp"

namespace ckd {

enum class PairKind { cosine, l2 };
// The only triple-wise relation is the angle at the middle vertex.

/// Norms below this are treated as zero; the relation value becomes 0 with a
/// zero gradient instead of NaN.
inline constexpr double kNormEps = 1e-8;

double pair_relation(const double* x, const double* y, int d, PairKind kind);
/// Also fills d(value)/dx and d(value)/dy (may be nullptr to skip).
double pair_relation_grad(const double* x, const double* y, int d, PairKind kind,
                          double* gx, double* gy);

/// cos of the angle at vertex j between (i - j) and (k - j), in [-1, 1].
double triple_angle(const double* xi, const double* xj, const double* xk, int d);
double triple_angle_grad(const double* xi, const double* xj, const double* xk, int d,
                         double* gi, double* gj, double* gk);

/// 0/1 locality weights: pairs with |i-j| <= delta, triples with both legs in
/// the window around the vertex j. Padded positions always get weight 0.
struct LocalityMasks {
    int n = 0;
    int delta = 0;
    std::vector<uint8_t> real;
    Mat pair;  // n x n of 0/1

    bool pair_on(int i, int j) const {
        return real[static_cast<size_t>(i)] && real[static_cast<size_t>(j)] &&
               std::abs(i - j) <= delta;
    }
    /// Degenerate triples (i == j or k == j) are excluded downstream.
    bool triple_on(int i, int j, int k) const {
        return pair_on(i, j) && pair_on(k, j);
    }
};

LocalityMasks locality_weights(int n, int delta, const std::vector<uint8_t>& real_mask = {});

/// Instrumentation for the relation kernels. triple_ops counts the
/// inner-product flops of triple evaluations (2d per evaluated triple);
/// aux_elems counts scratch doubles allocated by the kernel.
struct RelationStats {
    uint64_t triple_ops = 0;
    uint64_t pair_ops = 0;
    uint64_t aux_elems = 0;
};

/// All masked pair and triple relations of the columns of R (d x n).
/// Triple values are held in a vertex-centered band of half-width delta.
struct RelationSet {
    int n = 0;
    int d = 0;
    int delta = 0;  // effective window, capped at n - 1
    PairKind pair_kind = PairKind::l2;
    std::vector<uint8_t> real;
    Mat pair_vals;               // symmetric, 0 outside the mask
    std::vector<double> triple;  // [j][oi][ok], offsets oi/ok in [0, 2*delta]

    int width() const { return 2 * delta + 1; }
    bool triple_valid(int i, int j, int k) const {
        return i != j && k != j && std::abs(i - j) <= delta && std::abs(k - j) <= delta &&
               i >= 0 && k >= 0 && i < n && k < n &&
               real[static_cast<size_t>(i)] && real[static_cast<size_t>(j)] &&
               real[static_cast<size_t>(k)];
    }
    double triple_val(int i, int j, int k) const {
        const size_t w = static_cast<size_t>(width());
        return triple[(static_cast<size_t>(j) * w + static_cast<size_t>(i - j + delta)) * w +
                      static_cast<size_t>(k - j + delta)];
    }
};

/// Windowed kernel: pair l2 goes through the norm/gram identity (no n*n*d
/// intermediate) and the triple pass stores only the normalized relative
/// vectors inside each window, so scratch stays O(delta * n * d) and triple
/// arithmetic O(delta^2 * n * d).
RelationSet windowed_relations(const Mat& R, int delta, PairKind kind,
                               const std::vector<uint8_t>& real_mask = {},
                               RelationStats* stats = nullptr);

/// Reference kernel for benchmarking: materializes the full (n, n, d)
/// relative-vector tensor and enumerates every triple.
RelationSet naive_relations(const Mat& R, PairKind kind,
                            const std::vector<uint8_t>& real_mask = {},
                            RelationStats* stats = nullptr);

}  // namespace ckd
