#include "ckd/adaptive.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ckd {

int retained_heads(const ModelConfig& cfg, double m_w) {
    if (m_w <= 0.0 || m_w > 1.0) throw std::invalid_argument("width multiplier must be in (0, 1]");
    return static_cast<int>(std::lround(m_w * cfg.num_heads));
}

int retained_ffn(const ModelConfig& cfg, double m_w) {
    if (m_w <= 0.0 || m_w > 1.0) throw std::invalid_argument("width multiplier must be in (0, 1]");
    return static_cast<int>(std::lround(m_w * cfg.ffn_dim));
}

int retained_depth(const ModelConfig& cfg, double m_d) {
    if (m_d <= 0.0 || m_d > 1.0) throw std::invalid_argument("depth multiplier must be in (0, 1]");
    return static_cast<int>(std::lround(m_d * cfg.num_layers));
}

Structure subnet_structure(const ModelConfig& cfg, const SubnetSpec& spec) {
    Structure s;
    s.heads = retained_heads(cfg, spec.m_w);
    s.ffn = retained_ffn(cfg, spec.m_w);
    const int depth = retained_depth(cfg, spec.m_d);
    if (s.heads < 1) throw std::invalid_argument("sub-network retains zero heads");
    if (s.ffn < 1) throw std::invalid_argument("sub-network retains zero FFN neurons");
    if (depth < 1) throw std::invalid_argument("sub-network retains zero layers");
    // Uniform-stride depth selection: layer ceil(L * t / k) for t = 1..k.
    // When k divides L these are exactly the teacher-side indices of
    // align_layers(L, k).
    for (int t = 1; t <= depth; ++t) {
        const int layer = (cfg.num_layers * t + depth - 1) / depth;
        s.layer_ids.push_back(layer - 1);
    }
    return s;
}

ForwardCache subnet_forward(const ParamSet& params, const ModelConfig& cfg,
                            const SubnetSpec& spec, const TokenSequence& tokens) {
    return encoder_forward(tokens, params, cfg, subnet_structure(cfg, spec), nullptr);
}

ParamSet active_param_mask(const ModelConfig& cfg, const SubnetSpec& spec) {
    const Structure st = subnet_structure(cfg, spec);
    Rng rng(0);
    ParamSet mask = ParamSet::init(cfg, rng, 0.0);
    auto ones = [](Mat& m) { std::fill(m.a.begin(), m.a.end(), 1.0); };
    ones(mask.tok_embed);
    ones(mask.pos_embed);
    ones(mask.cls_w);
    ones(mask.cls_b);
    const int da = st.heads * cfg.head_dim();
    for (int id : st.layer_ids) {
        LayerParams& lp = mask.layers[static_cast<size_t>(id)];
        for (int r = 0; r < da; ++r) {
            for (int c = 0; c < cfg.hidden_dim; ++c) {
                lp.wq(r, c) = 1.0; lp.wk(r, c) = 1.0; lp.wv(r, c) = 1.0;
            }
            lp.bq.a[static_cast<size_t>(r)] = 1.0;
            lp.bk.a[static_cast<size_t>(r)] = 1.0;
            lp.bv.a[static_cast<size_t>(r)] = 1.0;
        }
        for (int r = 0; r < cfg.hidden_dim; ++r)
            for (int c = 0; c < da; ++c) lp.wo(r, c) = 1.0;
        ones(lp.bo);
        ones(lp.ln1_g); ones(lp.ln1_b); ones(lp.ln2_g); ones(lp.ln2_b);
        for (int r = 0; r < st.ffn; ++r) {
            for (int c = 0; c < cfg.hidden_dim; ++c) lp.w1(r, c) = 1.0;
            lp.b1.a[static_cast<size_t>(r)] = 1.0;
        }
        for (int r = 0; r < cfg.hidden_dim; ++r)
            for (int c = 0; c < st.ffn; ++c) lp.w2(r, c) = 1.0;
        ones(lp.b2);
    }
    return mask;
}

ImportanceScores estimate_importance(const ModelConfig& cfg, const ParamSet& params,
                                     const std::vector<Example>& dev) {
    if (dev.empty()) throw std::invalid_argument("estimate_importance: empty dev set");
    ImportanceScores scores;
    scores.heads.assign(static_cast<size_t>(cfg.num_layers),
                        std::vector<double>(static_cast<size_t>(cfg.num_heads), 0.0));
    scores.neurons.assign(static_cast<size_t>(cfg.num_layers),
                          std::vector<double>(static_cast<size_t>(cfg.ffn_dim), 0.0));
    const Structure full = Structure::full(cfg);
    for (const Example& ex : dev) {
        ForwardCache fc = encoder_forward(ex.tokens, params, cfg, full, nullptr);
        // Task cross-entropy gradient at the logits.
        const Mat& z = fc.states.logits;
        double mx = -1e300;
        for (double v : z.a) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : z.a) sum += std::exp(v - mx);
        StateGrad seeds = StateGrad::zeros_like(fc.states);
        for (int c = 0; c < cfg.num_classes; ++c) {
            const double p = std::exp(z.a[static_cast<size_t>(c)] - mx) / sum;
            seeds.d_logits.a[static_cast<size_t>(c)] = p - ((c == ex.label) ? 1.0 : 0.0);
        }
        Saliency sal;
        backward(params, fc, seeds, &sal);
        for (int l = 0; l < cfg.num_layers; ++l) {
            for (int h = 0; h < cfg.num_heads; ++h)
                scores.heads[static_cast<size_t>(l)][static_cast<size_t>(h)] +=
                    std::abs(sal.head[static_cast<size_t>(l)][static_cast<size_t>(h)]);
            for (int k = 0; k < cfg.ffn_dim; ++k)
                scores.neurons[static_cast<size_t>(l)][static_cast<size_t>(k)] +=
                    std::abs(sal.neuron[static_cast<size_t>(l)][static_cast<size_t>(k)]);
        }
    }
    return scores;
}

namespace {

/// Indices 0..n-1 sorted by descending score; stable so equal scores keep
/// their original order (and an already-sorted model is untouched).
std::vector<int> descending_order(const std::vector<double>& scores) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    return order;
}

}  // namespace

ParamSet rewire(const ModelConfig& cfg, const ParamSet& params,
                const ImportanceScores& scores) {
    if (static_cast<int>(scores.heads.size()) != cfg.num_layers ||
        static_cast<int>(scores.neurons.size()) != cfg.num_layers)
        throw std::logic_error("rewire: score layer count mismatch");
    ParamSet out = params;
    const int dh = cfg.head_dim();
    for (int l = 0; l < cfg.num_layers; ++l) {
        if (static_cast<int>(scores.heads[static_cast<size_t>(l)].size()) != cfg.num_heads ||
            static_cast<int>(scores.neurons[static_cast<size_t>(l)].size()) != cfg.ffn_dim)
            throw std::logic_error("rewire: score shape mismatch");
        const LayerParams& src = params.layers[static_cast<size_t>(l)];
        LayerParams& dst = out.layers[static_cast<size_t>(l)];

        const auto head_order = descending_order(scores.heads[static_cast<size_t>(l)]);
        for (int h = 0; h < cfg.num_heads; ++h) {
            const int from = head_order[static_cast<size_t>(h)];
            for (int r = 0; r < dh; ++r) {
                const int to_row = h * dh + r, from_row = from * dh + r;
                for (int c = 0; c < cfg.hidden_dim; ++c) {
                    dst.wq(to_row, c) = src.wq(from_row, c);
                    dst.wk(to_row, c) = src.wk(from_row, c);
                    dst.wv(to_row, c) = src.wv(from_row, c);
                    dst.wo(c, to_row) = src.wo(c, from_row);
                }
                dst.bq.a[static_cast<size_t>(to_row)] = src.bq.a[static_cast<size_t>(from_row)];
                dst.bk.a[static_cast<size_t>(to_row)] = src.bk.a[static_cast<size_t>(from_row)];
                dst.bv.a[static_cast<size_t>(to_row)] = src.bv.a[static_cast<size_t>(from_row)];
            }
        }

        const auto neuron_order = descending_order(scores.neurons[static_cast<size_t>(l)]);
        for (int k = 0; k < cfg.ffn_dim; ++k) {
            const int from = neuron_order[static_cast<size_t>(k)];
            for (int c = 0; c < cfg.hidden_dim; ++c) {
                dst.w1(k, c) = src.w1(from, c);
                dst.w2(c, k) = src.w2(c, from);
            }
            dst.b1.a[static_cast<size_t>(k)] = src.b1.a[static_cast<size_t>(from)];
        }
    }
    return out;
}

namespace {

struct SubnetTermLoss {
    double value = 0.0;
    StateGrad grad;
};

/// SCE(student logits, teacher logits) + lambda_ckd * (WR + LTR) between the
/// given teacher states and one sub-network's states.
SubnetTermLoss subnet_term_loss(const LayerStates& student, const LayerStates& teacher,
                                const DistillConfig& dcfg, const std::vector<uint8_t>& mask) {
    SubnetTermLoss out;
    out.grad = StateGrad::zeros_like(student);
    LogitLossResult sce = soft_ce_loss(student.logits, teacher.logits, dcfg.temperature);
    out.value = sce.value;
    out.grad.d_logits += sce.d_logits;
    const LayerAlignment al = align_layers(static_cast<int>(teacher.reps.size()) - 1,
                                           static_cast<int>(student.reps.size()) - 1);
    if (dcfg.enable_wr) {
        RelationLossResult wr = ckd_wr_loss(student, teacher, al, dcfg, mask);
        out.value += dcfg.lambda_ckd * wr.value;
        out.grad.accumulate(wr.grad, dcfg.lambda_ckd);
    }
    if (dcfg.enable_ltr) {
        RelationLossResult ltr = ckd_ltr_loss(student, teacher, al, dcfg, mask);
        out.value += dcfg.lambda_ckd * ltr.value;
        out.grad.accumulate(ltr.grad, dcfg.lambda_ckd);
    }
    return out;
}

void accumulate_params(ParamSet& dst, const ParamSet& src, double scale) {
    std::vector<Mat*> d, s;
    for_each_tensor(dst, [&](const std::string&, Mat& m) { d.push_back(&m); });
    for_each_tensor(const_cast<ParamSet&>(src), [&](const std::string&, Mat& m) { s.push_back(&m); });
    for (size_t i = 0; i < d.size(); ++i) add_scaled(*d[i], *s[i], scale);
}

}  // namespace

AdaptiveGrads adaptive_width_gradients(const ModelConfig& cfg, const ParamSet& teacher,
                                       const ParamSet& student,
                                       const std::vector<double>& widths,
                                       const DistillConfig& dcfg,
                                       const std::vector<const Example*>& batch) {
    if (widths.empty()) throw std::invalid_argument("adaptive training: empty width list");
    if (batch.empty()) throw std::invalid_argument("adaptive training: empty batch");
    AdaptiveGrads out;
    out.grads = ParamSet::zeros_like(teacher);
    out.losses.assign(widths.size(), 0.0);
    const Structure full = Structure::full(cfg);
    for (const Example* ex : batch) {
        ForwardCache tfc = encoder_forward(ex->tokens, teacher, cfg, full, nullptr);
        for (size_t w = 0; w < widths.size(); ++w) {
            const Structure sub = subnet_structure(cfg, {widths[w], 1.0});
            ForwardCache sfc = encoder_forward(ex->tokens, student, cfg, sub, nullptr);
            SubnetTermLoss term = subnet_term_loss(sfc.states, tfc.states, dcfg, ex->tokens.mask);
            out.losses[w] += term.value / batch.size();
            ParamSet g = backward(student, sfc, term.grad);
            accumulate_params(out.grads, g, 1.0 / batch.size());
        }
    }
    return out;
}

AdaptiveGrads adaptive_full_gradients(const ModelConfig& cfg, const ParamSet& teacher_w,
                                      const ParamSet& student,
                                      const std::vector<double>& widths,
                                      const std::vector<double>& depths,
                                      const DistillConfig& dcfg,
                                      const std::vector<const Example*>& batch) {
    if (widths.empty() || depths.empty())
        throw std::invalid_argument("adaptive training: empty width/depth list");
    if (batch.empty()) throw std::invalid_argument("adaptive training: empty batch");
    AdaptiveGrads out;
    out.grads = ParamSet::zeros_like(teacher_w);
    out.losses.assign(widths.size() * depths.size(), 0.0);
    for (const Example* ex : batch) {
        for (size_t w = 0; w < widths.size(); ++w) {
            ForwardCache tfc = subnet_forward(teacher_w, cfg, {widths[w], 1.0}, ex->tokens);
            for (size_t dd = 0; dd < depths.size(); ++dd) {
                const Structure sub = subnet_structure(cfg, {widths[w], depths[dd]});
                ForwardCache sfc = encoder_forward(ex->tokens, student, cfg, sub, nullptr);
                SubnetTermLoss term =
                    subnet_term_loss(sfc.states, tfc.states, dcfg, ex->tokens.mask);
                out.losses[w * depths.size() + dd] += term.value / batch.size();
                ParamSet g = backward(student, sfc, term.grad);
                accumulate_params(out.grads, g, 1.0 / batch.size());
            }
        }
    }
    return out;
}

namespace {

std::vector<const Example*> probe_batch(const Dataset& data, size_t cap = 32) {
    std::vector<const Example*> out;
    for (size_t i = 0; i < std::min(cap, data.dev.size()); ++i) out.push_back(&data.dev[i]);
    return out;
}

AdaptiveResult run_adaptive(const ModelConfig& cfg, const ParamSet& teacher,
                            const std::vector<double>& widths,
                            const std::vector<double>& depths, bool with_depth,
                            const Dataset& data, const DistillConfig& dcfg,
                            const TrainConfig& tcfg, int steps,
                            const ParamSet* student_init) {
    const auto t0 = std::chrono::steady_clock::now();
    if (steps < 1) throw std::invalid_argument("adaptive training: steps must be >= 1");
    Rng rng(tcfg.seed);
    ParamSet student = student_init ? *student_init : teacher;  // teacher stays fixed
    Optimizer opt(student, tcfg.opt, steps);

    auto grads_fn = [&](const std::vector<const Example*>& batch) {
        return with_depth
                   ? adaptive_full_gradients(cfg, teacher, student, widths, depths, dcfg, batch)
                   : adaptive_width_gradients(cfg, teacher, student, widths, dcfg, batch);
    };

    AdaptiveResult res;
    const auto probe = probe_batch(data);
    res.probe_initial = grads_fn(probe).losses;

    std::vector<int> order;
    size_t cursor = 0;
    auto next_batch = [&]() {
        std::vector<const Example*> batch;
        for (int i = 0; i < tcfg.batch_size; ++i) {
            if (cursor >= order.size()) {
                order.resize(data.train.size());
                std::iota(order.begin(), order.end(), 0);
                rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(&data.train[static_cast<size_t>(order[cursor++])]);
        }
        return batch;
    };

    for (int step = 0; step < steps; ++step) {
        AdaptiveGrads g = grads_fn(next_batch());
        double total = 0.0;
        for (double v : g.losses) total += v;
        if (!std::isfinite(total))
            throw std::runtime_error("adaptive training diverged (non-finite loss) at step " +
                                     std::to_string(step));
        opt.step(student, g.grads);
    }

    res.probe_final = grads_fn(probe).losses;
    res.params = std::move(student);
    res.record.kind = with_depth ? "adaptive-full" : "adaptive-width";
    res.record.seed = tcfg.seed;
    res.record.steps = steps;
    res.record.config = nlohmann::json{{"widths", widths},
                                       {"depths", with_depth ? depths : std::vector<double>{}},
                                       {"model", to_json(cfg)},
                                       {"distill", to_json(dcfg)},
                                       {"train", to_json(tcfg)}};
    res.record.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace

AdaptiveResult train_adaptive_width(const ModelConfig& cfg, const ParamSet& rewired,
                                    const std::vector<double>& widths, const Dataset& data,
                                    const DistillConfig& dcfg, const TrainConfig& tcfg,
                                    int steps, const ParamSet* student_init) {
    return run_adaptive(cfg, rewired, widths, {}, false, data, dcfg, tcfg, steps, student_init);
}

AdaptiveResult train_adaptive_full(const ModelConfig& cfg, const ParamSet& teacher_w,
                                   const std::vector<double>& widths,
                                   const std::vector<double>& depths, const Dataset& data,
                                   const DistillConfig& dcfg, const TrainConfig& tcfg,
                                   int steps, const ParamSet* student_init) {
    return run_adaptive(cfg, teacher_w, widths, depths, true, data, dcfg, tcfg, steps,
                        student_init);
}

}  // namespace ckd
