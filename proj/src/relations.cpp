#include "ckd/relations.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ckd {

double pair_relation(const double* x, const double* y, int d, PairKind kind) {
    return pair_relation_grad(x, y, d, kind, nullptr, nullptr);
}

double pair_relation_grad(const double* x, const double* y, int d, PairKind kind,
                          double* gx, double* gy) {
    if (kind == PairKind::l2) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) {
            const double diff = x[i] - y[i];
            s += diff * diff;
        }
        const double v = std::sqrt(s);
        if (gx && gy) {
            if (v < kNormEps) {
                std::fill(gx, gx + d, 0.0);
                std::fill(gy, gy + d, 0.0);
            } else {
                for (int i = 0; i < d; ++i) {
                    gx[i] = (x[i] - y[i]) / v;
                    gy[i] = -gx[i];
                }
            }
        }
        return v;
    }
    // cosine similarity, 0 under the eps guard when either vector vanishes
    const double nx = norm(x, d);
    const double ny = norm(y, d);
    if (nx < kNormEps || ny < kNormEps) {
        if (gx) std::fill(gx, gx + d, 0.0);
        if (gy) std::fill(gy, gy + d, 0.0);
        return 0.0;
    }
    const double xy = dot(x, y, d);
    const double v = xy / (nx * ny);
    if (gx && gy) {
        for (int i = 0; i < d; ++i) {
            gx[i] = y[i] / (nx * ny) - v * x[i] / (nx * nx);
            gy[i] = x[i] / (nx * ny) - v * y[i] / (ny * ny);
        }
    }
    return v;
}

double triple_angle(const double* xi, const double* xj, const double* xk, int d) {
    return triple_angle_grad(xi, xj, xk, d, nullptr, nullptr, nullptr);
}

double triple_angle_grad(const double* xi, const double* xj, const double* xk, int d,
                         double* gi, double* gj, double* gk) {
    double nu = 0.0, nv = 0.0, uv = 0.0;
    for (int t = 0; t < d; ++t) {
        const double u = xi[t] - xj[t];
        const double v = xk[t] - xj[t];
        nu += u * u;
        nv += v * v;
        uv += u * v;
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    if (nu < kNormEps || nv < kNormEps) {
        if (gi) std::fill(gi, gi + d, 0.0);
        if (gj) std::fill(gj, gj + d, 0.0);
        if (gk) std::fill(gk, gk + d, 0.0);
        return 0.0;
    }
    double val = uv / (nu * nv);
    val = std::min(1.0, std::max(-1.0, val));
    if (gi && gj && gk) {
        const double inv = 1.0 / (nu * nv);
        const double bi = val / (nu * nu);
        const double bk = val / (nv * nv);
        for (int t = 0; t < d; ++t) {
            const double u = xi[t] - xj[t];
            const double v = xk[t] - xj[t];
            const double du = inv * v - bi * u;  // d val / d u
            const double dv = inv * u - bk * v;  // d val / d v
            gi[t] = du;
            gk[t] = dv;
            gj[t] = -(du + dv);
        }
    }
    return val;
}

LocalityMasks locality_weights(int n, int delta, const std::vector<uint8_t>& real_mask) {
    if (n < 1) throw std::invalid_argument("locality_weights: n must be >= 1");
    if (delta < 0) throw std::invalid_argument("locality_weights: delta must be >= 0");
    LocalityMasks m;
    m.n = n;
    m.delta = delta;
    m.real = real_mask.empty() ? std::vector<uint8_t>(static_cast<size_t>(n), 1) : real_mask;
    if (static_cast<int>(m.real.size()) != n)
        throw std::invalid_argument("locality_weights: mask length mismatch");
    m.pair = Mat(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
            m.pair(i, j) = m.pair_on(i, j) ? 1.0 : 0.0;
    return m;
}

namespace {

void banded_pairs(const Mat& R, int delta, PairKind kind, const std::vector<uint8_t>& real,
                  Mat& out, RelationStats* stats) {
    const int n = R.cols, d = R.rows;
    out = Mat(n, n);
    // Squared norms once; l2 uses ||x-y||^2 = ||x||^2 + ||y||^2 - 2<x,y>.
    std::vector<double> sq(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) sq[static_cast<size_t>(i)] = dot(R.col(i), R.col(i), d);
    if (stats) {
        stats->aux_elems += static_cast<uint64_t>(n);
        stats->pair_ops += static_cast<uint64_t>(n) * (2 * static_cast<uint64_t>(d));
    }
    for (int j = 0; j < n; ++j) {
        if (!real[static_cast<size_t>(j)]) continue;
        const int lo = std::max(0, j - delta);
        for (int i = lo; i <= j; ++i) {
            if (!real[static_cast<size_t>(i)]) continue;
            const double g = dot(R.col(i), R.col(j), d);
            if (stats) stats->pair_ops += 2 * static_cast<uint64_t>(d);
            double v = 0.0;
            if (kind == PairKind::l2) {
                const double s = std::max(0.0, sq[static_cast<size_t>(i)] + sq[static_cast<size_t>(j)] - 2.0 * g);
                v = std::sqrt(s);
            } else {
                const double ni = std::sqrt(sq[static_cast<size_t>(i)]);
                const double nj = std::sqrt(sq[static_cast<size_t>(j)]);
                v = (ni < kNormEps || nj < kNormEps) ? 0.0 : g / (ni * nj);
            }
            out(i, j) = v;
            out(j, i) = v;  // mirrored assignment keeps the matrix exactly symmetric
        }
    }
}

}  // namespace

RelationSet windowed_relations(const Mat& R, int delta, PairKind kind,
                               const std::vector<uint8_t>& real_mask,
                               RelationStats* stats) {
    const int n = R.cols, d = R.rows;
    if (n < 1) throw std::invalid_argument("windowed_relations: empty input");
    if (delta < 1) throw std::invalid_argument("windowed_relations: delta must be >= 1");

    RelationSet rs;
    rs.n = n;
    rs.d = d;
    rs.delta = std::min(delta, n - 1);
    if (rs.delta < 1) rs.delta = 1;  // n == 1: no triples exist anyway
    rs.pair_kind = kind;
    rs.real = real_mask.empty() ? std::vector<uint8_t>(static_cast<size_t>(n), 1) : real_mask;
    if (static_cast<int>(rs.real.size()) != n)
        throw std::invalid_argument("windowed_relations: mask length mismatch");

    banded_pairs(R, rs.delta, kind, rs.real, rs.pair_vals, stats);

    const int w = rs.width();
    rs.triple.assign(static_cast<size_t>(n) * w * w, 0.0);

    // Normalized relative vectors for every vertex window: (2*delta+1) slots
    // of d doubles per vertex. This is the O(delta * n * d) scratch.
    std::vector<double> rel(static_cast<size_t>(n) * w * d, 0.0);
    std::vector<uint8_t> rel_ok(static_cast<size_t>(n) * w, 0);
    if (stats) stats->aux_elems += static_cast<uint64_t>(rel.size());

    for (int j = 0; j < n; ++j) {
        if (!rs.real[static_cast<size_t>(j)]) continue;
        const double* rj = R.col(j);
        for (int o = 0; o < w; ++o) {
            const int m = j - rs.delta + o;
            if (m < 0 || m >= n || m == j || !rs.real[static_cast<size_t>(m)]) continue;
            double* u = rel.data() + (static_cast<size_t>(j) * w + o) * d;
            const double* rm = R.col(m);
            double s = 0.0;
            for (int t = 0; t < d; ++t) {
                u[t] = rm[t] - rj[t];
                s += u[t] * u[t];
            }
            s = std::sqrt(s);
            if (s < kNormEps) continue;  // slot stays zero: eps-guarded triple
            for (int t = 0; t < d; ++t) u[t] /= s;
            rel_ok[static_cast<size_t>(j) * w + o] = 1;
        }
    }

    for (int j = 0; j < n; ++j) {
        if (!rs.real[static_cast<size_t>(j)]) continue;
        for (int oi = 0; oi < w; ++oi) {
            const int i = j - rs.delta + oi;
            if (i < 0 || i >= n || i == j || !rs.real[static_cast<size_t>(i)]) continue;
            const double* ui = rel.data() + (static_cast<size_t>(j) * w + oi) * d;
            for (int ok = oi; ok < w; ++ok) {
                const int kidx = j - rs.delta + ok;
                if (kidx < 0 || kidx >= n || kidx == j || !rs.real[static_cast<size_t>(kidx)]) continue;
                double v = 0.0;
                if (rel_ok[static_cast<size_t>(j) * w + oi] && rel_ok[static_cast<size_t>(j) * w + ok]) {
                    const double* uk = rel.data() + (static_cast<size_t>(j) * w + ok) * d;
                    v = dot(ui, uk, d);
                    v = std::min(1.0, std::max(-1.0, v));
                }
                if (stats) stats->triple_ops += (oi == ok) ? 2 * static_cast<uint64_t>(d)
                                                           : 4 * static_cast<uint64_t>(d);
                const size_t base = static_cast<size_t>(j) * w;
                rs.triple[(base + static_cast<size_t>(oi)) * w + static_cast<size_t>(ok)] = v;
                rs.triple[(base + static_cast<size_t>(ok)) * w + static_cast<size_t>(oi)] = v;
            }
        }
    }
    return rs;
}

RelationSet naive_relations(const Mat& R, PairKind kind, const std::vector<uint8_t>& real_mask,
                            RelationStats* stats) {
    const int n = R.cols, d = R.rows;
    if (n < 1) throw std::invalid_argument("naive_relations: empty input");

    RelationSet rs;
    rs.n = n;
    rs.d = d;
    rs.delta = std::max(1, n - 1);
    rs.pair_kind = kind;
    rs.real = real_mask.empty() ? std::vector<uint8_t>(static_cast<size_t>(n), 1) : real_mask;
    if (static_cast<int>(rs.real.size()) != n)
        throw std::invalid_argument("naive_relations: mask length mismatch");

    // Full (n, n, d) relative-vector tensor plus its norms: the memory cost
    // the windowed kernel avoids.
    std::vector<double> rel(static_cast<size_t>(n) * n * d, 0.0);
    std::vector<double> rel_norm(static_cast<size_t>(n) * n, 0.0);
    if (stats) stats->aux_elems += static_cast<uint64_t>(rel.size()) + static_cast<uint64_t>(n) * n;
    for (int j = 0; j < n; ++j) {
        const double* rj = R.col(j);
        for (int m = 0; m < n; ++m) {
            const double* rm = R.col(m);
            double* u = rel.data() + (static_cast<size_t>(j) * n + m) * d;
            double s = 0.0;
            for (int t = 0; t < d; ++t) {
                u[t] = rm[t] - rj[t];
                s += u[t] * u[t];
            }
            rel_norm[static_cast<size_t>(j) * n + m] = std::sqrt(s);
        }
    }

    rs.pair_vals = Mat(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            if (!rs.real[static_cast<size_t>(i)] || !rs.real[static_cast<size_t>(j)]) continue;
            if (stats) stats->pair_ops += 2 * static_cast<uint64_t>(d);
            rs.pair_vals(i, j) = (kind == PairKind::l2)
                                     ? rel_norm[static_cast<size_t>(j) * n + i]
                                     : pair_relation(R.col(i), R.col(j), d, PairKind::cosine);
        }

    const int w = rs.width();
    rs.triple.assign(static_cast<size_t>(n) * w * w, 0.0);
    for (int j = 0; j < n; ++j) {
        if (!rs.real[static_cast<size_t>(j)]) continue;
        for (int i = 0; i < n; ++i) {
            if (i == j || !rs.real[static_cast<size_t>(i)]) continue;
            const double* ui = rel.data() + (static_cast<size_t>(j) * n + i) * d;
            const double nu = rel_norm[static_cast<size_t>(j) * n + i];
            for (int k = 0; k < n; ++k) {
                if (k == j || !rs.real[static_cast<size_t>(k)]) continue;
                if (stats) stats->triple_ops += 2 * static_cast<uint64_t>(d);
                const double* uk = rel.data() + (static_cast<size_t>(j) * n + k) * d;
                const double nv = rel_norm[static_cast<size_t>(j) * n + k];
                double v = 0.0;
                if (nu >= kNormEps && nv >= kNormEps) {
                    v = dot(ui, uk, d) / (nu * nv);
                    v = std::min(1.0, std::max(-1.0, v));
                }
                const size_t base = static_cast<size_t>(j) * w;
                rs.triple[(base + static_cast<size_t>(i - j + rs.delta)) * w +
                          static_cast<size_t>(k - j + rs.delta)] = v;
            }
        }
    }
    return rs;
}

}  // namespace ckd
