// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Each check pins its tolerance in code.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ckd/adaptive.hpp"
#include "ckd/baselines.hpp"
#include "ckd/tasks.hpp"
#include "ckd/train.hpp"

using namespace ckd;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

// ---- shared oracle helpers (independent direct formulas) --------------------

double oracle_pair(const double* x, const double* y, int d, PairKind kind) {
    if (kind == PairKind::l2) {
        double s = 0;
        for (int i = 0; i < d; ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
        return std::sqrt(s);
    }
    double xy = 0, xx = 0, yy = 0;
    for (int i = 0; i < d; ++i) {
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
    }
    if (std::sqrt(xx) < 1e-8 || std::sqrt(yy) < 1e-8) return 0.0;
    return xy / (std::sqrt(xx) * std::sqrt(yy));
}

double oracle_angle(const double* a, const double* b, const double* c, int d) {
    double uv = 0, uu = 0, vv = 0;
    for (int i = 0; i < d; ++i) {
        const double u = a[i] - b[i];
        const double v = c[i] - b[i];
        uv += u * v;
        uu += u * u;
        vv += v * v;
    }
    if (std::sqrt(uu) < 1e-8 || std::sqrt(vv) < 1e-8) return 0.0;
    return uv / (std::sqrt(uu) * std::sqrt(vv));
}

Mat random_orthogonal(int d, Rng& rng) {
    Mat q(d, d);
    for (int i = 0; i < d; ++i) q(i, i) = 1.0;
    for (int rep = 0; rep < 3; ++rep) {
        std::vector<double> v(static_cast<size_t>(d));
        for (double& x : v) x = rng.normal();
        const double nv = norm(v.data(), d);
        for (double& x : v) x /= nv;
        Mat h(d, d);
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c) h(r, c) = (r == c ? 1.0 : 0.0) - 2.0 * v[r] * v[c];
        q = matmul(h, q);
    }
    return q;
}

ModelConfig small_cfg(int layers, int hidden, int heads, int ffn, int vocab, int max_len,
                      int classes) {
    ModelConfig c;
    c.num_layers = layers;
    c.hidden_dim = hidden;
    c.num_heads = heads;
    c.ffn_dim = ffn;
    c.vocab_size = vocab;
    c.embed_dim = hidden;
    c.max_seq_len = max_len;
    c.num_classes = classes;
    return c;
}

// ------------------------------------------------------------------ 1 -------

Outcome criterion_gradients() {
    const double tol = 1e-4;
    Rng rng(2024);
    const ModelConfig scfg = small_cfg(2, 16, 2, 24, 10, 6, 3);
    const ModelConfig tcfg = small_cfg(3, 24, 2, 32, 10, 6, 3);
    // DistilBERT-cos and PKD-patient require equal hidden sizes by their own
    // architectural constraint, so they check against an equal-width teacher.
    const ModelConfig tcfg_eq = small_cfg(3, 16, 2, 32, 10, 6, 3);

    ParamSet sp = ParamSet::init(scfg, rng, 0.3);
    ParamSet tp = ParamSet::init(tcfg, rng, 0.3);
    ParamSet tp_eq = ParamSet::init(tcfg_eq, rng, 0.3);
    TokenSequence tok;
    tok.ids = {3, 1, 7, 2, 9, 4};
    tok.mask = {1, 1, 1, 1, 1, 0};
    const int label = 1;
    DistillConfig dcfg;
    dcfg.delta = 3;
    const LayerAlignment al = align_layers(3, 2);
    const LayerStates ts = encoder_forward(tok, tp, tcfg).states;
    const LayerStates ts_eq = encoder_forward(tok, tp_eq, tcfg_eq).states;
    const Mat proj = make_rep_projection(24, 16, rng);

    using LossFn = std::function<std::pair<double, StateGrad>(const LayerStates&)>;
    std::vector<std::pair<std::string, LossFn>> losses;
    losses.emplace_back("ckd_wr", [&](const LayerStates& ss) {
        auto r = ckd_wr_loss(ss, ts, al, dcfg, tok.mask);
        return std::pair<double, StateGrad>(r.value, std::move(r.grad));
    });
    losses.emplace_back("ckd_ltr", [&](const LayerStates& ss) {
        auto r = ckd_ltr_loss(ss, ts, al, dcfg, tok.mask);
        return std::pair<double, StateGrad>(r.value, std::move(r.grad));
    });
    losses.emplace_back("logit_kd", [&](const LayerStates& ss) {
        auto r = logit_kd_loss(ss.logits, ts.logits, label, dcfg.alpha, dcfg.temperature);
        StateGrad g = StateGrad::zeros_like(ss);
        g.d_logits += r.d_logits;
        return std::pair<double, StateGrad>(r.value, std::move(g));
    });
    losses.emplace_back("total", [&](const LayerStates& ss) {
        auto r = total_objective(ss, ts, label, al, dcfg, tok.mask);
        return std::pair<double, StateGrad>(r.value, std::move(r.grad));
    });
    losses.emplace_back("distilbert_cos", [&](const LayerStates& ss) {
        auto r = distilbert_cos_loss(ss, ts_eq, al, tok.mask);
        return std::pair<double, StateGrad>(r.value, std::move(r.grad));
    });
    losses.emplace_back("pkd_patient", [&](const LayerStates& ss) {
        auto r = pkd_patient_loss(ss, ts_eq, al, tok.mask);
        return std::pair<double, StateGrad>(r.value, std::move(r.grad));
    });
    losses.emplace_back("tinybert", [&](const LayerStates& ss) {
        auto r = tinybert_loss(ss, ts, al, tok.mask, proj);
        return std::pair<double, StateGrad>(r.value, std::move(r.grad));
    });
    losses.emplace_back("minilm", [&](const LayerStates& ss) {
        auto r = minilm_loss(ss, ts, tok.mask);
        return std::pair<double, StateGrad>(r.value, std::move(r.grad));
    });

    Outcome out;
    double worst = 0;
    std::string worst_name;
    for (auto& [name, fn] : losses) {
        ForwardCache fc = encoder_forward(tok, sp, scfg);
        auto [value, seeds] = fn(fc.states);
        (void)value;
        ParamSet analytic = backward(sp, fc, seeds);
        GradCheckReport rep = gradcheck_params(
            sp,
            [&](const ParamSet& q) { return fn(encoder_forward(tok, q, scfg).states).first; },
            analytic, 1e-5);
        if (rep.max_rel_err > worst) {
            worst = rep.max_rel_err;
            worst_name = name;
        }
        if (rep.max_rel_err >= tol) out.pass = false;
    }
    out.detail = "worst loss " + worst_name + " max rel err " + fmt(worst) + " (tol 1e-4)";
    return out;
}

// ------------------------------------------------------------------ 2 -------

Outcome criterion_oracle_equivalence() {
    const double tol = 1e-12;
    Rng rng(777);
    int instances = 0;
    double worst = 0;
    for (int rep = 0; rep < 220; ++rep) {
        const int n = 2 + rng.uniform_int(11);   // up to 12
        const int d = 1 + rng.uniform_int(8);    // up to 8
        Mat r = random_normal(d, n, 1.0, rng);
        std::vector<uint8_t> mask(static_cast<size_t>(n), 1);
        if (n > 3 && rng.uniform_int(2) == 0)
            mask[static_cast<size_t>(rng.uniform_int(n))] = 0;
        const bool full = rep % 2 == 0;
        const int delta = full ? (n - 1 > 0 ? n - 1 + rng.uniform_int(3) : 1)
                               : std::max(1, 1 + rng.uniform_int(std::max(1, n - 2)));
        RelationSet rs = windowed_relations(r, delta, PairKind::l2, mask);
        const int eff = std::min(delta, n - 1);
        for (int j = 0; j < n; ++j) {
            if (!mask[static_cast<size_t>(j)]) continue;
            for (int i = 0; i < n; ++i) {
                if (!mask[static_cast<size_t>(i)]) continue;
                if (std::abs(i - j) <= eff)
                    worst = std::max(worst,
                                     std::abs(rs.pair_vals(i, j) -
                                              oracle_pair(r.col(i), r.col(j), d, PairKind::l2)));
                for (int k = 0; k < n; ++k) {
                    if (!mask[static_cast<size_t>(k)]) continue;
                    const bool in_window = i != j && k != j && std::abs(i - j) <= eff &&
                                           std::abs(k - j) <= eff;
                    if (rs.triple_valid(i, j, k) != in_window) return {false, "mask mismatch"};
                    if (in_window)
                        worst = std::max(worst,
                                         std::abs(rs.triple_val(i, j, k) -
                                                  oracle_angle(r.col(i), r.col(j), r.col(k), d)));
                }
            }
        }
        ++instances;
    }
    return {worst < tol,
            std::to_string(instances) + " instances, worst |diff| " + fmt(worst) + " (tol 1e-12)"};
}

// ------------------------------------------------------------------ 3 -------

Outcome criterion_fixed_point() {
    Rng rng(31337);
    const int d = 6, n = 7, layers = 3;
    std::vector<Mat> reps;
    for (int l = 0; l <= layers; ++l) reps.push_back(random_normal(d, n, 1.0, rng));
    LayerStates s;
    s.reps = reps;
    s.embeddings = reps[0];
    s.logits = random_normal(3, 1, 1.0, rng);
    LayerStates t = s;
    std::vector<uint8_t> mask(static_cast<size_t>(n), 1);
    mask[static_cast<size_t>(n - 1)] = 0;
    const LayerAlignment al = align_layers(layers, layers);

    DistillConfig cfg;
    cfg.pair_kind = PairKind::l2;
    const double wr_same = ckd_wr_loss(s, t, al, cfg, mask).value;
    const double ltr_same = ckd_ltr_loss(s, t, al, cfg, mask).value;
    if (wr_same != 0.0 || ltr_same != 0.0)
        return {false, "identical student: wr " + fmt(wr_same) + ", ltr " + fmt(ltr_same)};

    // orthogonal transform + translation applied to every student layer
    Mat q = random_orthogonal(d, rng);
    std::vector<double> shift(static_cast<size_t>(d));
    for (double& v : shift) v = rng.normal();
    LayerStates iso = s;
    for (Mat& m : iso.reps) {
        Mat moved = matmul(q, m);
        for (int c = 0; c < n; ++c)
            for (int r2 = 0; r2 < d; ++r2) moved(r2, c) += shift[static_cast<size_t>(r2)];
        m = std::move(moved);
    }
    iso.embeddings = iso.reps[0];
    const double wr_iso = ckd_wr_loss(iso, t, al, cfg, mask).value;
    const double ltr_iso = ckd_ltr_loss(iso, t, al, cfg, mask).value;
    const bool ok = wr_iso < 1e-9 && ltr_iso < 1e-9;
    return {ok, "identical: exactly 0; isometry: wr " + fmt(wr_iso) + ", ltr " + fmt(ltr_iso) +
                    " (tol 1e-9)"};
}

// ------------------------------------------------------------------ 4 -------

Outcome criterion_complexity() {
    const std::vector<int> ns = {32, 64, 128, 256};
    const std::vector<int> deltas = {8, 16, 32};
    auto rows = bench_relations(ns, deltas, 16);

    std::vector<double> naive_n, naive_ops, win_delta, win_ops, aux_n, aux_elems;
    for (const BenchRow& r : rows) {
        if (r.variant == "naive") {
            naive_n.push_back(r.n);
            naive_ops.push_back(static_cast<double>(r.triple_ops));
        } else {
            if (r.n == 256) {
                win_delta.push_back(r.delta);
                win_ops.push_back(static_cast<double>(r.triple_ops));
            }
            if (r.delta == 8) {
                aux_n.push_back(r.n);
                aux_elems.push_back(static_cast<double>(r.aux_elems));
            }
        }
    }
    const double slope_naive = loglog_slope(naive_n, naive_ops);
    const double slope_win = loglog_slope(win_delta, win_ops);
    const double r2 = linear_r2(aux_n, aux_elems);
    const bool ok = std::abs(slope_naive - 3.0) <= 0.15 && std::abs(slope_win - 2.0) <= 0.2 &&
                    r2 > 0.99;
    return {ok, "naive slope(n) " + fmt(slope_naive) + " (3 +- 0.15), windowed slope(delta) " +
                    fmt(slope_win) + " (2 +- 0.2), aux R^2 " + fmt(r2) + " (> 0.99)"};
}

// ------------------------------------------------------------------ 5 -------

Outcome criterion_constraint_matrix() {
    const int grid[12][2] = {{12, 768}, {6, 768}, {4, 768}, {2, 768}, {6, 512}, {4, 512},
                             {2, 512},  {6, 384}, {4, 256}, {2, 256}, {4, 128}, {2, 128}};
    int checked = 0;
    for (const auto& t : grid) {
        const ModelConfig teacher = ModelConfig::preset(t[0], t[1]);
        for (const auto& s : grid) {
            if (s[0] > t[0]) continue;  // student depth never exceeds teacher depth
            const ModelConfig student = ModelConfig::preset(s[0], s[1]);
            const bool dims_equal = teacher.hidden_dim == student.hidden_dim;
            const bool heads_equal = teacher.num_heads == student.num_heads;
            struct Case {
                ObjectiveKind k;
                bool expect_ok;
                const char* constraint;
            };
            const Case cases[] = {
                {ObjectiveKind::distilbert_cos, dims_equal, "Embedding size"},
                {ObjectiveKind::pkd_patient, dims_equal, "Embedding size"},
                {ObjectiveKind::tinybert, heads_equal, "Attention head"},
                {ObjectiveKind::minilm, heads_equal, "Attention head"},
                {ObjectiveKind::logit_only, true, ""},
                {ObjectiveKind::ckd, true, ""},
            };
            for (const Case& c : cases) {
                const auto v = check_compatibility(teacher, student, c.k);
                if (c.expect_ok != v.empty())
                    return {false, objective_name(c.k) + " wrong verdict for " +
                                       std::to_string(t[0]) + "/" + std::to_string(t[1]) +
                                       " -> " + std::to_string(s[0]) + "/" +
                                       std::to_string(s[1])};
                if (!v.empty() && v[0].constraint != c.constraint)
                    return {false, objective_name(c.k) + " wrong constraint name"};
                ++checked;
            }
        }
    }
    return {true, std::to_string(checked) + " (teacher, student, objective) verdicts exact"};
}

// ------------------------------------------------------------------ 6 -------

Outcome criterion_alignment() {
    LayerAlignment al = align_layers(12, 6);
    for (int t = 0; t <= 6; ++t)
        if (al.pairs[static_cast<size_t>(t)] != std::pair<int, int>(t, 2 * t))
            return {false, "12->6 mapping wrong at t=" + std::to_string(t)};
    int checked = 0;
    for (int lt = 1; lt <= 24; ++lt)
        for (int ls = 1; ls <= lt; ++ls) {
            LayerAlignment a = align_layers(lt, ls);
            if (a.pairs.front() != std::pair<int, int>(0, 0) ||
                a.pairs.back() != std::pair<int, int>(ls, lt))
                return {false, "endpoints wrong for " + std::to_string(lt) + "," +
                                   std::to_string(ls)};
            for (size_t i = 1; i < a.pairs.size(); ++i)
                if (a.pairs[i].first <= a.pairs[i - 1].first ||
                    a.pairs[i].second <= a.pairs[i - 1].second)
                    return {false, "not strictly increasing"};
            ++checked;
        }
    return {true, "12->6 exact; " + std::to_string(checked) + " depth pairs monotone and endpoint-exact"};
}

// ------------------------------------------------------------------ 7 -------

Outcome criterion_desk_distillation() {
    TaskSpec task;
    task.kind = TaskKind::local_pattern;
    task.vocab_size = 16;
    task.seq_len = 16;
    task.num_classes = 4;
    task.train_size = 2048;
    task.dev_size = 512;
    task.test_size = 512;
    task.seed = 5;
    const Dataset data = generate_task(task);

    const ModelConfig tcfg = small_cfg(4, 64, 4, 128, 16, 16, 4);
    TrainConfig ttrain;
    ttrain.epochs = 3;
    ttrain.batch_size = 8;
    ttrain.seed = 1;
    ttrain.opt.lr = 2e-3;
    TeacherResult teacher = train_teacher(data, tcfg, ttrain, task);
    if (teacher.record.metrics.dev_accuracy < 0.97)
        return {false, "teacher dev " + fmt(teacher.record.metrics.dev_accuracy) + " < 0.97"};

    const ModelConfig scfg = small_cfg(2, 32, 2, 64, 16, 16, 4);

    // The head/width mismatch must block the attention-matching baselines
    // before any training happens.
    for (ObjectiveKind k : {ObjectiveKind::tinybert, ObjectiveKind::minilm}) {
        bool refused = false;
        try {
            TrainConfig st;
            st.epochs = 1;
            st.seed = 99;
            distill(tcfg, teacher.params, scfg, k, DistillConfig{}, data, st, task);
        } catch (const ConstraintViolationError&) {
            refused = true;
        }
        if (!refused) return {false, objective_name(k) + " did not refuse the d/h mismatch"};
    }

    const std::vector<uint64_t> seeds = {11, 12, 13, 14};
    double ckd_mean = 0, logit_mean = 0;
    for (uint64_t seed : seeds) {
        TrainConfig st;
        st.epochs = 2;
        st.batch_size = 8;
        st.seed = seed;
        st.opt.lr = 2e-3;
        DistillResult c = distill(tcfg, teacher.params, scfg, ObjectiveKind::ckd,
                                  DistillConfig{}, data, st, task);
        DistillResult l = distill(tcfg, teacher.params, scfg, ObjectiveKind::logit_only,
                                  DistillConfig{}, data, st, task);
        ckd_mean += c.record.metrics.dev_accuracy / seeds.size();
        logit_mean += l.record.metrics.dev_accuracy / seeds.size();
    }
    const bool ok = ckd_mean >= logit_mean - 0.005;
    return {ok, "teacher dev " + fmt(teacher.record.metrics.dev_accuracy) + "; ckd mean " +
                    fmt(ckd_mean) + " vs logit-only mean " + fmt(logit_mean) +
                    " (- 0.5 pt bound); tinybert/minilm refused"};
}

// ------------------------------------------------------------------ 8 -------

Outcome criterion_ablation() {
    TaskSpec task;
    task.kind = TaskKind::local_pattern;
    task.vocab_size = 16;
    task.seq_len = 12;
    task.num_classes = 4;
    task.train_size = 512;
    task.dev_size = 256;
    task.test_size = 256;
    task.seed = 5;
    const Dataset data = generate_task(task);

    const ModelConfig tcfg = small_cfg(2, 32, 4, 64, 16, 12, 4);
    TrainConfig ttrain;
    ttrain.epochs = 2;
    ttrain.seed = 1;
    ttrain.opt.lr = 2e-3;
    TeacherResult teacher = train_teacher(data, tcfg, ttrain, task);

    const ModelConfig scfg = small_cfg(1, 16, 2, 32, 16, 12, 4);
    TrainConfig st;
    st.epochs = 1;
    st.opt.lr = 2e-3;
    const std::vector<uint64_t> seeds = {1, 2, 3, 4};
    auto cells = ablation_suite(tcfg, teacher.params, scfg, DistillConfig{}, data, st, task,
                                seeds);
    if (cells.size() != 4) return {false, "expected 4 ablation cells"};
    for (const auto& cell : cells)
        if (cell.dev_acc.size() != seeds.size())
            return {false, "cell " + cell.name + " missing seeds"};

    // the -WR-LTR cell must be bit-equivalent to the logit-only objective
    for (size_t i = 0; i < seeds.size(); ++i) {
        TrainConfig t2 = st;
        t2.seed = seeds[i];
        DistillResult lo = distill(tcfg, teacher.params, scfg, ObjectiveKind::logit_only,
                                   DistillConfig{}, data, t2, task);
        if (lo.record.metrics.dev_accuracy != cells[3].dev_acc[i] ||
            lo.record.metrics.test_accuracy != cells[3].test_acc[i])
            return {false, "-WR-LTR cell differs from logit-only at seed " +
                               std::to_string(seeds[i])};
    }
    std::string detail = "cells";
    for (const auto& cell : cells) detail += " " + cell.name + "=" + fmt(cell.mean_dev);
    detail += "; -WR-LTR bit-equal to logit-only over 4 seeds";
    return {true, detail};
}

// ------------------------------------------------------------------ 9 -------

Outcome criterion_adaptive() {
    TaskSpec task;
    task.kind = TaskKind::local_pattern;
    task.vocab_size = 16;
    task.seq_len = 12;
    task.num_classes = 4;
    task.train_size = 1024;
    task.dev_size = 256;
    task.test_size = 256;
    task.seed = 5;
    const Dataset data = generate_task(task);

    const ModelConfig cfg = small_cfg(2, 32, 4, 64, 16, 12, 4);
    TrainConfig ttrain;
    ttrain.epochs = 2;
    ttrain.seed = 1;
    ttrain.opt.lr = 2e-3;
    TeacherResult teacher = train_teacher(data, cfg, ttrain, task);

    ImportanceScores scores = estimate_importance(cfg, teacher.params, data.dev);
    ParamSet rewired = rewire(cfg, teacher.params, scores);

    // rewiring preserves the full-network function
    Rng rng(4242);
    double max_logit_diff = 0;
    for (int rep = 0; rep < 8; ++rep) {
        TokenSequence tok;
        for (int i = 0; i < 12; ++i) {
            tok.ids.push_back(1 + rng.uniform_int(15));
            tok.mask.push_back(1);
        }
        Mat a = encoder_forward(tok, teacher.params, cfg).states.logits;
        Mat b = encoder_forward(tok, rewired, cfg).states.logits;
        max_logit_diff = std::max(max_logit_diff, max_abs_diff(a, b));
    }
    if (max_logit_diff >= 1e-9)
        return {false, "rewire changed logits by " + fmt(max_logit_diff)};

    // nesting: parameters at 0.25 width are a subset of 0.5, of 1.0
    auto mask_leq = [&](const SubnetSpec& a, const SubnetSpec& b) {
        ParamSet ma = active_param_mask(cfg, a);
        ParamSet mb = active_param_mask(cfg, b);
        std::vector<const Mat*> xs, ys;
        for_each_tensor(ma, [&](const std::string&, Mat& m) { xs.push_back(&m); });
        for_each_tensor(mb, [&](const std::string&, Mat& m) { ys.push_back(&m); });
        for (size_t i = 0; i < xs.size(); ++i)
            for (size_t j = 0; j < xs[i]->a.size(); ++j)
                if (xs[i]->a[j] > ys[i]->a[j]) return false;
        return true;
    };
    if (!mask_leq({0.25, 1.0}, {0.5, 1.0}) || !mask_leq({0.5, 1.0}, {1.0, 1.0}))
        return {false, "sub-network parameter sets are not nested"};

    // gradient accumulation decomposes over widths
    std::vector<const Example*> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(&data.dev[static_cast<size_t>(i)]);
    DistillConfig dcfg;
    AdaptiveGrads both = adaptive_width_gradients(cfg, rewired, teacher.params, {1.0, 0.5},
                                                  dcfg, batch);
    AdaptiveGrads w1 = adaptive_width_gradients(cfg, rewired, teacher.params, {1.0}, dcfg,
                                                batch);
    AdaptiveGrads w2 = adaptive_width_gradients(cfg, rewired, teacher.params, {0.5}, dcfg,
                                                batch);
    double acc_err = 0;
    {
        std::vector<const Mat*> g, a, b;
        for_each_tensor(both.grads, [&](const std::string&, Mat& m) { g.push_back(&m); });
        for_each_tensor(w1.grads, [&](const std::string&, Mat& m) { a.push_back(&m); });
        for_each_tensor(w2.grads, [&](const std::string&, Mat& m) { b.push_back(&m); });
        for (size_t i = 0; i < g.size(); ++i)
            for (size_t j = 0; j < g[i]->a.size(); ++j)
                acc_err = std::max(acc_err, std::abs(g[i]->a[j] - (a[i]->a[j] + b[i]->a[j])));
    }
    if (acc_err >= 1e-10) return {false, "accumulated gradient off by " + fmt(acc_err)};

    // 200 width-adaptive steps reduce every width's probe loss; the trainable
    // student starts from a rewired not-yet-trained model so that genuine
    // optimization headroom exists at every width.
    Rng srng(77);
    ParamSet raw = ParamSet::init(cfg, srng);
    ParamSet student0 = rewire(cfg, raw, estimate_importance(cfg, raw, data.dev));
    TrainConfig atrain;
    atrain.batch_size = 8;
    atrain.seed = 2;
    atrain.opt.lr = 1e-3;
    AdaptiveResult r = train_adaptive_width(cfg, rewired, {1.0, 0.5}, data, dcfg, atrain, 200,
                                            &student0);
    for (size_t i = 0; i < r.probe_initial.size(); ++i)
        if (!(r.probe_final[i] < r.probe_initial[i]))
            return {false, "width term " + std::to_string(i) + " did not decrease: " +
                               fmt(r.probe_initial[i]) + " -> " + fmt(r.probe_final[i])};

    return {true, "rewire |dlogit| " + fmt(max_logit_diff) + " (tol 1e-9); nesting holds; " +
                      "accum err " + fmt(acc_err) + " (tol 1e-10); probe losses " +
                      fmt(r.probe_initial[0]) + "->" + fmt(r.probe_final[0]) + ", " +
                      fmt(r.probe_initial[1]) + "->" + fmt(r.probe_final[1])};
}

// ------------------------------------------------------------------ 10 ------

Outcome criterion_reproducibility() {
    TaskSpec task;
    task.kind = TaskKind::local_pattern;
    task.vocab_size = 16;
    task.seq_len = 12;
    task.num_classes = 4;
    task.train_size = 256;
    task.dev_size = 128;
    task.test_size = 128;
    task.seed = 5;
    const Dataset data = generate_task(task);

    const ModelConfig tcfg = small_cfg(2, 32, 2, 64, 16, 12, 4);
    TrainConfig ttrain;
    ttrain.epochs = 1;
    ttrain.seed = 6;
    TeacherResult teacher = train_teacher(data, tcfg, ttrain, task);
    Metrics t_again = rerun(teacher.record);
    if (t_again.dev_accuracy != teacher.record.metrics.dev_accuracy ||
        t_again.test_accuracy != teacher.record.metrics.test_accuracy)
        return {false, "teacher rerun metrics differ"};

    const std::string ckpt =
        (std::filesystem::temp_directory_path() / "ckd_accept_teacher.bin").string();
    save_checkpoint(ckpt, tcfg, teacher.params);
    const ModelConfig scfg = small_cfg(1, 16, 2, 32, 16, 12, 4);
    TrainConfig st;
    st.epochs = 1;
    st.seed = 8;
    DistillResult d = distill(tcfg, teacher.params, scfg, ObjectiveKind::ckd, DistillConfig{},
                              data, st, task, ckpt);
    Metrics d_again = rerun(d.record);
    std::filesystem::remove(ckpt);
    const bool ok = d_again.dev_accuracy == d.record.metrics.dev_accuracy &&
                    d_again.test_accuracy == d.record.metrics.test_accuracy;
    return {ok, ok ? "teacher and distill records replay to bit-identical metrics"
                   : "distill rerun metrics differ"};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
        double budget_s;  // 0 = no stated runtime bound
    };
    const std::vector<Criterion> criteria = {
        {1, "gradient correctness of every distillation loss", criterion_gradients, 120},
        {2, "windowed relations equal brute-force enumeration", criterion_oracle_equivalence, 0},
        {3, "zero-loss fixed point and isometry invariance", criterion_fixed_point, 0},
        {4, "complexity scaling of the relation kernels", criterion_complexity, 300},
        {5, "architectural constraint matrix", criterion_constraint_matrix, 0},
        {6, "uniform layer alignment", criterion_alignment, 0},
        {7, "desk-scale distillation outcome", criterion_desk_distillation, 1200},
        {8, "ablation suite structure", criterion_ablation, 0},
        {9, "adaptive width/depth training", criterion_adaptive, 0},
        {10, "run-record reproducibility", criterion_reproducibility, 0},
    };

    int failures = 0;
    const double suite_start = now_s();
    for (const Criterion& c : criteria) {
        const double t0 = now_s();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double elapsed = now_s() - t0;
        if (c.budget_s > 0 && elapsed > c.budget_s) {
            out.pass = false;
            out.detail += "; RUNTIME " + fmt(elapsed) + " s exceeds budget " + fmt(c.budget_s);
        }
        std::printf("[%s] criterion %2d: %s — %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", c.id,
                    c.name, out.detail.c_str(), elapsed);
        std::fflush(stdout);
        failures += out.pass ? 0 : 1;
    }
    std::printf("%d/10 criteria passed in %.1f s\n", 10 - failures, now_s() - suite_start);
    return failures == 0 ? 0 : 1;
}
