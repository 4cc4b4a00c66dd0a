#include "ckd/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace ckd {

std::string objective_name(ObjectiveKind k) {
    switch (k) {
        case ObjectiveKind::distilbert_cos: return "distilbert_cos";
        case ObjectiveKind::pkd_patient: return "pkd_patient";
        case ObjectiveKind::tinybert: return "tinybert";
        case ObjectiveKind::minilm: return "minilm";
        case ObjectiveKind::logit_only: return "logit_only";
        case ObjectiveKind::ckd: return "ckd";
    }
    return "?";
}

ObjectiveKind parse_objective(const std::string& name) {
    if (name == "distilbert_cos") return ObjectiveKind::distilbert_cos;
    if (name == "pkd_patient") return ObjectiveKind::pkd_patient;
    if (name == "tinybert") return ObjectiveKind::tinybert;
    if (name == "minilm") return ObjectiveKind::minilm;
    if (name == "logit_only") return ObjectiveKind::logit_only;
    if (name == "ckd") return ObjectiveKind::ckd;
    throw std::invalid_argument("unknown objective: " + name);
}

std::vector<Violation> check_compatibility(const ModelConfig& teacher,
                                           const ModelConfig& student,
                                           ObjectiveKind objective) {
    std::vector<Violation> out;
    switch (objective) {
        case ObjectiveKind::distilbert_cos:
        case ObjectiveKind::pkd_patient:
            if (teacher.hidden_dim != student.hidden_dim)
                out.push_back({"Embedding size",
                               "teacher hidden " + std::to_string(teacher.hidden_dim) +
                                   " != student hidden " + std::to_string(student.hidden_dim)});
            break;
        case ObjectiveKind::tinybert:
        case ObjectiveKind::minilm:
            if (teacher.num_heads != student.num_heads)
                out.push_back({"Attention head",
                               "teacher heads " + std::to_string(teacher.num_heads) +
                                   " != student heads " + std::to_string(student.num_heads)});
            break;
        case ObjectiveKind::logit_only:
        case ObjectiveKind::ckd:
            break;
    }
    return out;
}

namespace {

std::string violation_message(const std::vector<Violation>& v) {
    std::string msg = "architectural constraint violated:";
    for (const auto& x : v) msg += " [" + x.constraint + "] " + x.detail + ";";
    return msg;
}

}  // namespace

ConstraintViolationError::ConstraintViolationError(std::vector<Violation> v)
    : std::runtime_error(violation_message(v)), violations(std::move(v)) {}

namespace {

void check_lengths(const LayerStates& student, const LayerStates& teacher,
                   const std::vector<uint8_t>& mask) {
    const int n_s = student.reps.empty() ? 0 : student.reps[0].cols;
    const int n_t = teacher.reps.empty() ? 0 : teacher.reps[0].cols;
    if (n_s == 0 || n_s != n_t)
        throw std::logic_error("baseline loss: sequence length mismatch");
    if (static_cast<int>(mask.size()) != n_s)
        throw std::logic_error("baseline loss: mask length mismatch");
}

void require_equal_dims(const LayerStates& student, const LayerStates& teacher) {
    const int ds = student.reps[0].rows;
    const int dt = teacher.reps[0].rows;
    if (ds != dt)
        throw ConstraintViolationError({{"Embedding size",
                                         "teacher hidden " + std::to_string(dt) +
                                             " != student hidden " + std::to_string(ds)}});
}

void require_equal_heads(const LayerStates& student, const LayerStates& teacher) {
    const size_t hs = student.attn.empty() ? 0 : student.attn.back().size();
    const size_t ht = teacher.attn.empty() ? 0 : teacher.attn.back().size();
    if (hs != ht)
        throw ConstraintViolationError({{"Attention head",
                                         "teacher heads " + std::to_string(ht) +
                                             " != student heads " + std::to_string(hs)}});
}

std::vector<int> real_indices(const std::vector<uint8_t>& mask) {
    std::vector<int> idx;
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) idx.push_back(static_cast<int>(i));
    return idx;
}

/// KL(p || q) over the real entries of one column pair, plus -p/q gradient
/// on q. Zero-probability teacher entries contribute nothing.
double column_kl(const double* p, const double* q, const std::vector<int>& rows,
                 double* dq, double weight) {
    double kl = 0.0;
    for (int j : rows) {
        const double pj = p[j];
        if (pj <= 0.0) continue;
        const double qj = std::max(q[j], 1e-300);
        kl += pj * std::log(pj / qj);
        if (dq) dq[j] += weight * (-pj / qj);
    }
    return kl;
}

}  // namespace

BaselineLossResult distilbert_cos_loss(const LayerStates& student, const LayerStates& teacher,
                                       const LayerAlignment& alignment,
                                       const std::vector<uint8_t>& real_mask) {
    check_lengths(student, teacher, real_mask);
    require_equal_dims(student, teacher);
    BaselineLossResult res;
    res.grad = StateGrad::zeros_like(student);
    const auto idx = real_indices(real_mask);
    if (idx.empty()) return res;
    const int d = student.reps[0].rows;
    std::vector<double> gs(static_cast<size_t>(d)), gt(static_cast<size_t>(d));
    for (const auto& [ls, lt] : alignment.pairs) {
        const Mat& S = student.reps[static_cast<size_t>(ls)];
        const Mat& T = teacher.reps[static_cast<size_t>(lt)];
        Mat& dS = res.grad.d_reps[static_cast<size_t>(ls)];
        for (int i : idx) {
            const double c = pair_relation_grad(S.col(i), T.col(i), d, PairKind::cosine,
                                                gs.data(), gt.data());
            res.value += (1.0 - c) / static_cast<double>(idx.size());
            double* dc = dS.col(i);
            for (int t = 0; t < d; ++t)
                dc[t] -= gs[static_cast<size_t>(t)] / static_cast<double>(idx.size());
        }
    }
    return res;
}

BaselineLossResult pkd_patient_loss(const LayerStates& student, const LayerStates& teacher,
                                    const LayerAlignment& alignment,
                                    const std::vector<uint8_t>& real_mask) {
    check_lengths(student, teacher, real_mask);
    require_equal_dims(student, teacher);
    BaselineLossResult res;
    res.grad = StateGrad::zeros_like(student);
    const auto idx = real_indices(real_mask);
    if (idx.empty()) return res;
    const int d = student.reps[0].rows;

    for (const auto& [ls, lt] : alignment.pairs) {
        const Mat& S = student.reps[static_cast<size_t>(ls)];
        const Mat& T = teacher.reps[static_cast<size_t>(lt)];
        Mat& dS = res.grad.d_reps[static_cast<size_t>(ls)];
        for (int i : idx) {
            const double* s = S.col(i);
            const double* t = T.col(i);
            const double ns = norm(s, d);
            const double nt = norm(t, d);
            const double inv_s = ns < kNormEps ? 0.0 : 1.0 / ns;
            const double inv_t = nt < kNormEps ? 0.0 : 1.0 / nt;
            // e = s_hat - t_hat; loss_i = ||e||^2 / d
            double dot_se = 0.0, sq = 0.0;
            for (int r = 0; r < d; ++r) {
                const double e = s[r] * inv_s - t[r] * inv_t;
                sq += e * e;
                dot_se += e * s[r] * inv_s;
            }
            const double w = 1.0 / (static_cast<double>(d) * idx.size());
            res.value += sq * w;
            if (inv_s > 0.0) {
                double* dc = dS.col(i);
                for (int r = 0; r < d; ++r) {
                    const double e = s[r] * inv_s - t[r] * inv_t;
                    dc[r] += 2.0 * w * inv_s * (e - s[r] * inv_s * dot_se);
                }
            }
        }
    }
    return res;
}

Mat make_rep_projection(int teacher_dim, int student_dim, Rng& rng) {
    Mat p(teacher_dim, student_dim);
    for (int c = 0; c < std::min(teacher_dim, student_dim); ++c) p(c, c) = 1.0;
    for (int c = 0; c < student_dim; ++c)
        for (int r = 0; r < teacher_dim; ++r)
            if (r != c) p(r, c) = 0.01 * rng.normal();
    return p;
}

BaselineLossResult tinybert_loss(const LayerStates& student, const LayerStates& teacher,
                                 const LayerAlignment& alignment,
                                 const std::vector<uint8_t>& real_mask, const Mat& proj) {
    check_lengths(student, teacher, real_mask);
    require_equal_heads(student, teacher);
    const int ds = student.reps[0].rows;
    const int dt = teacher.reps[0].rows;
    if (proj.rows != dt || proj.cols != ds)
        throw std::logic_error("tinybert_loss: projection shape mismatch");

    BaselineLossResult res;
    res.grad = StateGrad::zeros_like(student);
    res.d_proj = Mat(dt, ds);
    const auto idx = real_indices(real_mask);
    if (idx.empty()) return res;

    // Hidden-state term: MSE(t - P s) per real token, every aligned pair.
    std::vector<double> e(static_cast<size_t>(dt));
    for (const auto& [ls, lt] : alignment.pairs) {
        const Mat& S = student.reps[static_cast<size_t>(ls)];
        const Mat& T = teacher.reps[static_cast<size_t>(lt)];
        Mat& dS = res.grad.d_reps[static_cast<size_t>(ls)];
        const double w = 1.0 / (static_cast<double>(dt) * idx.size());
        for (int i : idx) {
            const double* s = S.col(i);
            const double* t = T.col(i);
            for (int r = 0; r < dt; ++r) {
                double ps = 0.0;
                for (int c = 0; c < ds; ++c) ps += proj(r, c) * s[c];
                e[static_cast<size_t>(r)] = t[r] - ps;
                res.value += w * e[static_cast<size_t>(r)] * e[static_cast<size_t>(r)];
            }
            double* dc = dS.col(i);
            for (int r = 0; r < dt; ++r) {
                const double g = -2.0 * w * e[static_cast<size_t>(r)];
                for (int c = 0; c < ds; ++c) {
                    dc[c] += g * proj(r, c);
                    res.d_proj(r, c) += g * s[c];
                }
            }
        }
    }

    // Attention term: per-head MSE over (real key, real query) entries for
    // aligned transformer layers (index 0 is the embedding, which has none).
    for (const auto& [ls, lt] : alignment.pairs) {
        if (ls < 1 || lt < 1) continue;
        const auto& As = student.attn[static_cast<size_t>(ls - 1)];
        const auto& At = teacher.attn[static_cast<size_t>(lt - 1)];
        const double w = 1.0 / (static_cast<double>(idx.size()) * idx.size());
        for (size_t h = 0; h < As.size(); ++h) {
            Mat& dA = res.grad.d_attn[static_cast<size_t>(ls - 1)][h];
            for (int i : idx)
                for (int j : idx) {
                    const double diff = As[h](j, i) - At[h](j, i);
                    res.value += w * diff * diff;
                    dA(j, i) += 2.0 * w * diff;
                }
        }
    }

    // Soft logit term, KL form so a matched student scores exactly zero.
    {
        LogitLossResult soft_s = soft_ce_loss(student.logits, teacher.logits, 1.0);
        LogitLossResult soft_t = soft_ce_loss(teacher.logits, teacher.logits, 1.0);
        res.value += soft_s.value - soft_t.value;
        res.grad.d_logits += soft_s.d_logits;
    }
    return res;
}

BaselineLossResult minilm_loss(const LayerStates& student, const LayerStates& teacher,
                               const std::vector<uint8_t>& real_mask) {
    check_lengths(student, teacher, real_mask);
    require_equal_heads(student, teacher);
    BaselineLossResult res;
    res.grad = StateGrad::zeros_like(student);
    const auto idx = real_indices(real_mask);
    if (idx.empty()) return res;
    const int n = student.reps[0].cols;

    const size_t sl = student.attn.size() - 1;   // student last layer
    const size_t tl = teacher.attn.size() - 1;
    const int heads = static_cast<int>(student.attn[sl].size());
    const double col_w = 1.0 / static_cast<double>(idx.size());

    // Attention maps: KL(teacher || student) per head, averaged over real
    // query columns.
    for (int h = 0; h < heads; ++h) {
        const Mat& As = student.attn[sl][static_cast<size_t>(h)];
        const Mat& At = teacher.attn[tl][static_cast<size_t>(h)];
        Mat& dA = res.grad.d_attn[sl][static_cast<size_t>(h)];
        for (int i : idx)
            res.value += col_w * column_kl(At.col(i), As.col(i), idx, dA.col(i), col_w);
    }

    // Value-value relations: column-softmaxed V^T V / sqrt(d_head), KL per
    // real column, teacher against student.
    const Mat& Vs = student.values[sl];
    const Mat& Vt = teacher.values[tl];
    const int dhs = Vs.rows / heads;
    const int dht = Vt.rows / heads;
    for (int h = 0; h < heads; ++h) {
        auto value_rel = [&](const Mat& V, int dh) {
            Mat P(n, n);
            const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
            for (int i : idx) {
                double mx = -1e300;
                std::vector<double> z(static_cast<size_t>(n), 0.0);
                for (int j : idx) {
                    z[static_cast<size_t>(j)] =
                        scale * dot(V.col(j) + h * dh, V.col(i) + h * dh, dh);
                    mx = std::max(mx, z[static_cast<size_t>(j)]);
                }
                double sum = 0.0;
                for (int j : idx) {
                    z[static_cast<size_t>(j)] = std::exp(z[static_cast<size_t>(j)] - mx);
                    sum += z[static_cast<size_t>(j)];
                }
                for (int j : idx) P(j, i) = z[static_cast<size_t>(j)] / sum;
            }
            return P;
        };
        const Mat Ps = value_rel(Vs, dhs);
        const Mat Pt = value_rel(Vt, dht);

        Mat dP(n, n);
        for (int i : idx)
            res.value += col_w * column_kl(Pt.col(i), Ps.col(i), idx, dP.col(i), col_w);

        // Through the column softmax and Z = scale * V^T V.
        Mat dZ(n, n);
        for (int i : idx) {
            double s = 0.0;
            for (int j : idx) s += Ps(j, i) * dP(j, i);
            for (int j : idx) dZ(j, i) = Ps(j, i) * (dP(j, i) - s);
        }
        Mat& dV = res.grad.d_values[sl];
        const double scale = 1.0 / std::sqrt(static_cast<double>(dhs));
        for (int i : idx)
            for (int j : idx) {
                const double g = scale * dZ(j, i);
                if (g == 0.0) continue;
                double* dvj = dV.col(j) + h * dhs;
                double* dvi = dV.col(i) + h * dhs;
                const double* vj = Vs.col(j) + h * dhs;
                const double* vi = Vs.col(i) + h * dhs;
                for (int t = 0; t < dhs; ++t) {
                    dvj[t] += g * vi[t];
                    dvi[t] += g * vj[t];
                }
            }
    }
    return res;
}

}  // namespace ckd
