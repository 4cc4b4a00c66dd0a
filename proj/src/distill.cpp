#include "ckd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ckd {

void DistillConfig::validate() const {
    if (lambda_wr < 0 || lambda_ltr < 0 || lambda_ckd < 0)
        throw std::invalid_argument("lambda values must be >= 0");
    if (temperature <= 0) throw std::invalid_argument("temperature must be > 0");
    if (alpha < 0 || alpha > 1) throw std::invalid_argument("alpha must be in [0, 1]");
    if (delta < 0) throw std::invalid_argument("delta must be >= 0");
}

LayerAlignment align_layers(int teacher_layers, int student_layers) {
    if (student_layers < 1)
        throw std::invalid_argument("align_layers: student must have at least one layer");
    if (student_layers > teacher_layers)
        throw std::invalid_argument("align_layers: student deeper than teacher is unsupported");
    LayerAlignment al;
    al.g = std::gcd(teacher_layers, student_layers);
    al.step_t = teacher_layers / al.g;
    al.step_s = student_layers / al.g;
    al.pairs.reserve(static_cast<size_t>(al.g) + 1);
    for (int t = 0; t <= al.g; ++t)
        al.pairs.emplace_back(al.step_s * t, al.step_t * t);
    return al;
}

double match_scalar(double a, double b, MatchKind kind) {
    const double e = a - b;
    switch (kind) {
        case MatchKind::l1: return std::abs(e);
        case MatchKind::l2: return e * e;
        case MatchKind::huber:
            return std::abs(e) <= 1.0 ? 0.5 * e * e : std::abs(e) - 0.5;
    }
    return 0.0;
}

double match_scalar_grad(double a, double b, MatchKind kind) {
    const double e = a - b;
    switch (kind) {
        case MatchKind::l1: return e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0);
        case MatchKind::l2: return 2.0 * e;
        case MatchKind::huber:
            if (e > 1.0) return 1.0;
            if (e < -1.0) return -1.0;
            return e;
    }
    return 0.0;
}

double match_loss(const Mat& a, const Mat& b, MatchKind kind) {
    if (!a.same_shape(b)) throw std::logic_error("match_loss: shape mismatch");
    if (a.empty()) throw std::logic_error("match_loss: empty input");
    double s = 0.0;
    for (size_t i = 0; i < a.a.size(); ++i) s += match_scalar(a.a[i], b.a[i], kind);
    return s / static_cast<double>(a.a.size());
}

namespace {

void check_states(const LayerStates& student, const LayerStates& teacher,
                  const LayerAlignment& alignment, const std::vector<uint8_t>& mask) {
    const int n_s = student.reps.empty() ? 0 : student.reps[0].cols;
    const int n_t = teacher.reps.empty() ? 0 : teacher.reps[0].cols;
    if (n_s == 0 || n_s != n_t)
        throw std::logic_error("relation loss: teacher and student sequence lengths differ");
    if (static_cast<int>(mask.size()) != n_s)
        throw std::logic_error("relation loss: mask length mismatch");
    for (const auto& [ls, lt] : alignment.pairs) {
        if (ls < 0 || ls >= static_cast<int>(student.reps.size()) ||
            lt < 0 || lt >= static_cast<int>(teacher.reps.size()))
            throw std::logic_error("relation loss: alignment index out of range");
    }
}

/// Pair + triple relation matching over one pair of point sets (columns of S
/// and T at the given index lists), with window half-width `delta` applied on
/// list positions. Gradients accumulate into d_cols[p] for student point p.
struct PointSetLoss {
    double pair_sum = 0.0;
    double triple_sum = 0.0;
    long pair_count = 0;
    long triple_count = 0;
};

/// Accumulates matching terms between the student point list s_pts and the
/// teacher point list t_pts (same length). pos[p] is the original sequence
/// position of point p (ascending); the window |pos_i - pos_j| <= delta is
/// measured on those. d_pair / d_triple receive d(sum)/d(point).
void relation_matching(const std::vector<const double*>& s_pts, int ds,
                       const std::vector<const double*>& t_pts, int dt,
                       const std::vector<int>& pos,
                       int delta, bool window_pairs, PairKind pair_kind, MatchKind match,
                       PointSetLoss& out,
                       std::vector<std::vector<double>>* d_pair,
                       std::vector<std::vector<double>>* d_triple) {
    const int n = static_cast<int>(s_pts.size());
    std::vector<double> gi(static_cast<size_t>(ds)), gj(static_cast<size_t>(ds)),
        gk(static_cast<size_t>(ds));

    // pos is ascending, so each window is a contiguous slice of points.
    auto window = [&](int j, int width) {
        int lo = j, hi = j;
        while (lo > 0 && pos[static_cast<size_t>(j)] - pos[static_cast<size_t>(lo - 1)] <= width) --lo;
        while (hi < n - 1 && pos[static_cast<size_t>(hi + 1)] - pos[static_cast<size_t>(j)] <= width) ++hi;
        return std::pair<int, int>(lo, hi);
    };

    const int pair_delta = window_pairs ? delta : (pos.empty() ? 0 : pos.back() - pos.front());
    for (int j = 0; j < n; ++j) {
        const auto [lo, hi] = window(j, pair_delta);
        for (int i = lo; i <= hi; ++i) {
            const double vt = pair_relation(t_pts[static_cast<size_t>(i)],
                                            t_pts[static_cast<size_t>(j)], dt,
                                            pair_kind);
            double vs;
            if (d_pair) {
                vs = pair_relation_grad(s_pts[static_cast<size_t>(i)],
                                        s_pts[static_cast<size_t>(j)], ds, pair_kind,
                                        gi.data(), gj.data());
            } else {
                vs = pair_relation(s_pts[static_cast<size_t>(i)], s_pts[static_cast<size_t>(j)],
                                   ds, pair_kind);
            }
            out.pair_sum += match_scalar(vs, vt, match);
            ++out.pair_count;
            if (d_pair) {
                const double c = match_scalar_grad(vs, vt, match);
                for (int t = 0; t < ds; ++t) {
                    (*d_pair)[static_cast<size_t>(i)][static_cast<size_t>(t)] += c * gi[static_cast<size_t>(t)];
                    (*d_pair)[static_cast<size_t>(j)][static_cast<size_t>(t)] += c * gj[static_cast<size_t>(t)];
                }
            }
        }
    }

    for (int j = 0; j < n; ++j) {
        const auto [lo, hi] = window(j, delta);
        for (int i = lo; i <= hi; ++i) {
            if (i == j) continue;
            for (int k = lo; k <= hi; ++k) {
                if (k == j) continue;
                const double vt = triple_angle(t_pts[static_cast<size_t>(i)],
                                               t_pts[static_cast<size_t>(j)],
                                               t_pts[static_cast<size_t>(k)], dt);
                double vs;
                if (d_triple) {
                    vs = triple_angle_grad(s_pts[static_cast<size_t>(i)],
                                           s_pts[static_cast<size_t>(j)],
                                           s_pts[static_cast<size_t>(k)], ds,
                                           gi.data(), gj.data(), gk.data());
                } else {
                    vs = triple_angle(s_pts[static_cast<size_t>(i)], s_pts[static_cast<size_t>(j)],
                                      s_pts[static_cast<size_t>(k)], ds);
                }
                out.triple_sum += match_scalar(vs, vt, match);
                ++out.triple_count;
                if (d_triple) {
                    const double c = match_scalar_grad(vs, vt, match);
                    for (int t = 0; t < ds; ++t) {
                        (*d_triple)[static_cast<size_t>(i)][static_cast<size_t>(t)] += c * gi[static_cast<size_t>(t)];
                        (*d_triple)[static_cast<size_t>(j)][static_cast<size_t>(t)] += c * gj[static_cast<size_t>(t)];
                        (*d_triple)[static_cast<size_t>(k)][static_cast<size_t>(t)] += c * gk[static_cast<size_t>(t)];
                    }
                }
            }
        }
    }
}

}  // namespace

RelationLossResult ckd_wr_loss(const LayerStates& student, const LayerStates& teacher,
                               const LayerAlignment& alignment, const DistillConfig& cfg,
                               const std::vector<uint8_t>& real_mask) {
    cfg.validate();
    check_states(student, teacher, alignment, real_mask);
    RelationLossResult res;
    res.grad = StateGrad::zeros_like(student);

    const int n = student.reps[0].cols;
    std::vector<int> real_idx;
    for (int i = 0; i < n; ++i)
        if (real_mask[static_cast<size_t>(i)]) real_idx.push_back(i);
    const int m = static_cast<int>(real_idx.size());
    if (m == 0) return res;
    const int delta = std::min(cfg.delta, n - 1 > 0 ? n - 1 : 0);

    for (const auto& [ls, lt] : alignment.pairs) {
        const Mat& S = student.reps[static_cast<size_t>(ls)];
        const Mat& T = teacher.reps[static_cast<size_t>(lt)];
        std::vector<const double*> s_pts, t_pts;
        s_pts.reserve(static_cast<size_t>(m));
        t_pts.reserve(static_cast<size_t>(m));
        for (int i : real_idx) {
            s_pts.push_back(S.col(i));
            t_pts.push_back(T.col(i));
        }

        PointSetLoss acc;
        std::vector<std::vector<double>> d_pair(static_cast<size_t>(m),
                                                std::vector<double>(static_cast<size_t>(S.rows), 0.0));
        std::vector<std::vector<double>> d_triple = d_pair;
        relation_matching(s_pts, S.rows, t_pts, T.rows, real_idx, delta, cfg.window_pairs,
                          cfg.pair_kind, cfg.match_kind, acc, &d_pair, &d_triple);

        const double pair_avg = acc.pair_count > 0 ? acc.pair_sum / acc.pair_count : 0.0;
        const double triple_avg = acc.triple_count > 0 ? acc.triple_sum / acc.triple_count : 0.0;
        res.pair_term += pair_avg;
        res.triple_term += triple_avg;

        Mat& dS = res.grad.d_reps[static_cast<size_t>(ls)];
        const double cp = acc.pair_count > 0 ? 1.0 / acc.pair_count : 0.0;
        const double ct = acc.triple_count > 0 ? cfg.lambda_wr / acc.triple_count : 0.0;
        for (int p = 0; p < m; ++p) {
            double* dc = dS.col(real_idx[static_cast<size_t>(p)]);
            for (int t = 0; t < S.rows; ++t)
                dc[t] += cp * d_pair[static_cast<size_t>(p)][static_cast<size_t>(t)] +
                         ct * d_triple[static_cast<size_t>(p)][static_cast<size_t>(t)];
        }
    }
    res.value = res.pair_term + cfg.lambda_wr * res.triple_term;
    return res;
}

RelationLossResult ckd_ltr_loss(const LayerStates& student, const LayerStates& teacher,
                                const LayerAlignment& alignment, const DistillConfig& cfg,
                                const std::vector<uint8_t>& real_mask) {
    cfg.validate();
    check_states(student, teacher, alignment, real_mask);
    RelationLossResult res;
    res.grad = StateGrad::zeros_like(student);

    const int n = student.reps[0].cols;
    const int points = static_cast<int>(alignment.pairs.size());
    int words = 0;
    for (int i = 0; i < n; ++i) words += (real_mask[static_cast<size_t>(i)] != 0);
    if (words == 0 || points < 2) return res;  // no relations exist

    const int ds = student.reps[0].rows;
    const int dt = teacher.reps[0].rows;

    double pair_sum = 0.0, triple_sum = 0.0;
    for (int w = 0; w < n; ++w) {
        if (!real_mask[static_cast<size_t>(w)]) continue;
        std::vector<const double*> s_pts, t_pts;
        s_pts.reserve(static_cast<size_t>(points));
        t_pts.reserve(static_cast<size_t>(points));
        for (const auto& [ls, lt] : alignment.pairs) {
            s_pts.push_back(student.reps[static_cast<size_t>(ls)].col(w));
            t_pts.push_back(teacher.reps[static_cast<size_t>(lt)].col(w));
        }

        PointSetLoss acc;
        std::vector<std::vector<double>> d_pair(static_cast<size_t>(points),
                                                std::vector<double>(static_cast<size_t>(ds), 0.0));
        std::vector<std::vector<double>> d_triple = d_pair;
        // All trajectory weights are 1: the window spans every layer pair.
        std::vector<int> traj_pos(static_cast<size_t>(points));
        for (int p = 0; p < points; ++p) traj_pos[static_cast<size_t>(p)] = p;
        relation_matching(s_pts, ds, t_pts, dt, traj_pos, points, true, cfg.pair_kind,
                          cfg.match_kind, acc, &d_pair, &d_triple);

        const double pair_avg = acc.pair_count > 0 ? acc.pair_sum / acc.pair_count : 0.0;
        const double triple_avg = acc.triple_count > 0 ? acc.triple_sum / acc.triple_count : 0.0;
        pair_sum += pair_avg;
        triple_sum += triple_avg;

        const double cp = acc.pair_count > 0 ? 1.0 / (static_cast<double>(acc.pair_count) * words) : 0.0;
        const double ct = acc.triple_count > 0
                              ? cfg.lambda_ltr / (static_cast<double>(acc.triple_count) * words)
                              : 0.0;
        for (int p = 0; p < points; ++p) {
            const int ls = alignment.pairs[static_cast<size_t>(p)].first;
            double* dc = res.grad.d_reps[static_cast<size_t>(ls)].col(w);
            for (int t = 0; t < ds; ++t)
                dc[t] += cp * d_pair[static_cast<size_t>(p)][static_cast<size_t>(t)] +
                         ct * d_triple[static_cast<size_t>(p)][static_cast<size_t>(t)];
        }
    }
    res.pair_term = pair_sum / words;
    res.triple_term = triple_sum / words;
    res.value = res.pair_term + cfg.lambda_ltr * res.triple_term;
    return res;
}

namespace {

std::vector<double> log_softmax(const Mat& z, double temperature) {
    const int c = z.rows;
    std::vector<double> out(static_cast<size_t>(c));
    double mx = -1e300;
    for (int i = 0; i < c; ++i) mx = std::max(mx, z.a[static_cast<size_t>(i)] / temperature);
    double sum = 0.0;
    for (int i = 0; i < c; ++i) {
        out[static_cast<size_t>(i)] = z.a[static_cast<size_t>(i)] / temperature - mx;
        sum += std::exp(out[static_cast<size_t>(i)]);
    }
    const double lse = std::log(sum);
    for (double& v : out) v -= lse;
    return out;
}

}  // namespace

LogitLossResult soft_ce_loss(const Mat& student_logits, const Mat& teacher_logits,
                             double temperature) {
    if (student_logits.rows != teacher_logits.rows)
        throw std::logic_error("soft_ce_loss: class count mismatch");
    const int c = student_logits.rows;
    const auto ls = log_softmax(student_logits, temperature);
    const auto lt = log_softmax(teacher_logits, temperature);
    LogitLossResult res;
    res.d_logits = Mat(c, 1);
    double sce = 0.0;
    for (int i = 0; i < c; ++i) {
        const double pt = std::exp(lt[static_cast<size_t>(i)]);
        sce -= pt * ls[static_cast<size_t>(i)];
    }
    const double t2 = temperature * temperature;
    res.value = t2 * sce;
    for (int i = 0; i < c; ++i) {
        const double ps = std::exp(ls[static_cast<size_t>(i)]);
        const double pt = std::exp(lt[static_cast<size_t>(i)]);
        res.d_logits.a[static_cast<size_t>(i)] = temperature * (ps - pt);
    }
    return res;
}

LogitLossResult logit_kd_loss(const Mat& student_logits, const Mat& teacher_logits,
                              int label, double alpha, double temperature) {
    if (student_logits.rows != teacher_logits.rows)
        throw std::logic_error("logit_kd_loss: class count mismatch");
    if (label < 0 || label >= student_logits.rows)
        throw std::invalid_argument("logit_kd_loss: label out of range");
    const int c = student_logits.rows;
    LogitLossResult res;
    res.d_logits = Mat(c, 1);

    if (alpha > 0.0) {
        LogitLossResult soft = soft_ce_loss(student_logits, teacher_logits, temperature);
        res.value += alpha * soft.value;
        add_scaled(res.d_logits, soft.d_logits, alpha);
    }
    if (alpha < 1.0) {
        const auto ls1 = log_softmax(student_logits, 1.0);
        res.value += (1.0 - alpha) * -ls1[static_cast<size_t>(label)];
        for (int i = 0; i < c; ++i) {
            const double p = std::exp(ls1[static_cast<size_t>(i)]);
            const double y = (i == label) ? 1.0 : 0.0;
            res.d_logits.a[static_cast<size_t>(i)] += (1.0 - alpha) * (p - y);
        }
    }
    return res;
}

TotalLossResult total_objective(const LayerStates& student, const LayerStates& teacher,
                                int label, const LayerAlignment& alignment,
                                const DistillConfig& cfg,
                                const std::vector<uint8_t>& real_mask) {
    cfg.validate();
    TotalLossResult res;
    res.grad = StateGrad::zeros_like(student);

    LogitLossResult logit = logit_kd_loss(student.logits, teacher.logits, label,
                                          cfg.alpha, cfg.temperature);
    res.logit = logit.value;
    res.value = logit.value;
    res.grad.d_logits += logit.d_logits;

    if (cfg.lambda_ckd > 0.0 && cfg.enable_wr) {
        RelationLossResult wr = ckd_wr_loss(student, teacher, alignment, cfg, real_mask);
        res.wr_pair = wr.pair_term;
        res.wr_triple = wr.triple_term;
        res.value += cfg.lambda_ckd * wr.value;
        res.grad.accumulate(wr.grad, cfg.lambda_ckd);
    }
    if (cfg.lambda_ckd > 0.0 && cfg.enable_ltr) {
        RelationLossResult ltr = ckd_ltr_loss(student, teacher, alignment, cfg, real_mask);
        res.ltr_pair = ltr.pair_term;
        res.ltr_triple = ltr.triple_term;
        res.value += cfg.lambda_ckd * ltr.value;
        res.grad.accumulate(ltr.grad, cfg.lambda_ckd);
    }
    return res;
}

}  // namespace ckd
