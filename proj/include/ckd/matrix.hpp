#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ckd {

/// Dense column-major matrix of doubles. Columns are contiguous, which is the
/// layout every kernel here wants: a word representation is one column.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& operator()(int r, int c) {
        assert(r >= 0 && r < rows && c >= 0 && c < cols);
        return a[static_cast<size_t>(c) * rows + r];
    }
    double operator()(int r, int c) const {
        assert(r >= 0 && r < rows && c >= 0 && c < cols);
        return a[static_cast<size_t>(c) * rows + r];
    }

    double* col(int c) { return a.data() + static_cast<size_t>(c) * rows; }
    const double* col(int c) const { return a.data() + static_cast<size_t>(c) * rows; }

    size_t size() const { return a.size(); }
    bool empty() const { return a.empty(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void zero() { std::fill(a.begin(), a.end(), 0.0); }

    Mat& operator+=(const Mat& o) {
        assert(same_shape(o));
        for (size_t i = 0; i < a.size(); ++i) a[i] += o.a[i];
        return *this;
    }
    Mat& operator*=(double s) {
        for (double& v : a) v *= s;
        return *this;
    }
};

inline void add_scaled(Mat& dst, const Mat& src, double s) {
    assert(dst.same_shape(src));
    for (size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += s * src.a[i];
}

inline double dot(const double* x, const double* y, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += x[i] * y[i];
    return s;
}

inline double norm(const double* x, int d) { return std::sqrt(dot(x, x, d)); }

/// C = A * B
inline Mat matmul(const Mat& A, const Mat& B) {
    assert(A.cols == B.rows);
    Mat C(A.rows, B.cols);
    for (int c = 0; c < B.cols; ++c) {
        double* cc = C.col(c);
        for (int k = 0; k < A.cols; ++k) {
            const double b = B(k, c);
            if (b == 0.0) continue;
            const double* ak = A.col(k);
            for (int r = 0; r < A.rows; ++r) cc[r] += ak[r] * b;
        }
    }
    return C;
}

/// C = A^T * B
inline Mat matmul_tn(const Mat& A, const Mat& B) {
    assert(A.rows == B.rows);
    Mat C(A.cols, B.cols);
    for (int c = 0; c < B.cols; ++c) {
        const double* bc = B.col(c);
        double* cc = C.col(c);
        for (int r = 0; r < A.cols; ++r) cc[r] = dot(A.col(r), bc, A.rows);
    }
    return C;
}

/// C = A * B^T
inline Mat matmul_nt(const Mat& A, const Mat& B) {
    assert(A.cols == B.cols);
    Mat C(A.rows, B.rows);
    for (int k = 0; k < A.cols; ++k) {
        const double* ak = A.col(k);
        for (int c = 0; c < B.rows; ++c) {
            const double b = B(c, k);
            if (b == 0.0) continue;
            double* cc = C.col(c);
            for (int r = 0; r < A.rows; ++r) cc[r] += ak[r] * b;
        }
    }
    return C;
}

/// M.col(i) += b for every column; b is rows x 1.
inline void add_col_bias(Mat& M, const Mat& b) {
    assert(b.rows == M.rows && b.cols == 1);
    for (int c = 0; c < M.cols; ++c) {
        double* mc = M.col(c);
        for (int r = 0; r < M.rows; ++r) mc[r] += b.a[r];
    }
}

/// b += sum of columns of M (the bias gradient of a column-wise affine map).
inline void accum_row_sums(Mat& b, const Mat& M) {
    assert(b.rows == M.rows && b.cols == 1);
    for (int c = 0; c < M.cols; ++c) {
        const double* mc = M.col(c);
        for (int r = 0; r < M.rows; ++r) b.a[r] += mc[r];
    }
}

inline double max_abs_diff(const Mat& A, const Mat& B) {
    assert(A.same_shape(B));
    double m = 0.0;
    for (size_t i = 0; i < A.a.size(); ++i) m = std::max(m, std::abs(A.a[i] - B.a[i]));
    return m;
}

/// Deterministic RNG (splitmix64 core). Every stochastic choice in the
/// project goes through this so runs replay bit-exactly from a seed,
/// independent of the standard library's distribution implementations.
struct Rng {
    uint64_t state;
    bool has_spare = false;
    double spare = 0.0;

    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next_u64() {
        state += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    int uniform_int(int n) {
        assert(n > 0);
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare = r * std::sin(t);
        has_spare = true;
        return r * std::cos(t);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(v[i], v[static_cast<size_t>(j)]);
        }
    }
};

inline Mat random_normal(int rows, int cols, double stddev, Rng& rng) {
    Mat m(rows, cols);
    for (double& v : m.a) v = stddev * rng.normal();
    return m;
}

}  // namespace ckd
