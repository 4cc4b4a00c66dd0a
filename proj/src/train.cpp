#include "ckd/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "ckd/adaptive.hpp"

namespace ckd {

using nlohmann::json;

Optimizer::Optimizer(const ParamSet& shape, const OptimizerConfig& c, int steps)
    : cfg(c), total_steps(std::max(1, steps)) {
    for_each_tensor(const_cast<ParamSet&>(shape), [&](const std::string&, Mat& m) {
        states.push_back({Mat(m.rows, m.cols), Mat(m.rows, m.cols)});
    });
}

double Optimizer::lr_at(int step) const {
    const double warm = cfg.warmup * total_steps;
    if (warm > 0 && step <= warm) return cfg.lr * step / warm;
    if (total_steps == warm) return cfg.lr;
    const double frac = (total_steps - step) / (total_steps - warm);
    return cfg.lr * std::max(0.0, frac);
}

namespace {

void adam_update(Mat& p, const Mat& g, AdamState& st, const OptimizerConfig& cfg,
                 double lr, int t) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (size_t i = 0; i < p.a.size(); ++i) {
        const double gi = g.a[i];
        st.v.a[i] = cfg.beta2 * st.v.a[i] + (1.0 - cfg.beta2) * gi * gi;
        double upd;
        if (cfg.beta1 > 0.0) {
            st.m.a[i] = cfg.beta1 * st.m.a[i] + (1.0 - cfg.beta1) * gi;
            upd = (st.m.a[i] / bc1) / (std::sqrt(st.v.a[i] / bc2) + cfg.eps);
        } else {
            upd = gi / (std::sqrt(st.v.a[i] / bc2) + cfg.eps);
        }
        p.a[i] -= lr * (upd + cfg.weight_decay * p.a[i]);
    }
}

}  // namespace

namespace {

std::vector<Mat*> tensor_ptrs(ParamSet& p) {
    std::vector<Mat*> out;
    for_each_tensor(p, [&](const std::string&, Mat& m) { out.push_back(&m); });
    return out;
}

}  // namespace

void Optimizer::step(ParamSet& params, const ParamSet& grads) {
    ++t;
    const double lr = lr_at(t);
    const auto ps = tensor_ptrs(params);
    const auto gs = tensor_ptrs(const_cast<ParamSet&>(grads));
    for (size_t i = 0; i < ps.size(); ++i) adam_update(*ps[i], *gs[i], states[i], cfg, lr, t);
}

void Optimizer::step_extra(Mat& param, const Mat& grad, AdamState& state) {
    if (state.v.empty()) state = {Mat(param.rows, param.cols), Mat(param.rows, param.cols)};
    adam_update(param, grad, state, cfg, lr_at(std::max(1, t)), std::max(1, t));
}

// ---- config serde -----------------------------------------------------------

json to_json(const ModelConfig& c) {
    return json{{"num_layers", c.num_layers},   {"hidden_dim", c.hidden_dim},
                {"num_heads", c.num_heads},     {"ffn_dim", c.ffn_dim},
                {"vocab_size", c.vocab_size},   {"embed_dim", c.embed_dim},
                {"max_seq_len", c.max_seq_len}, {"num_classes", c.num_classes},
                {"dropout", c.dropout}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers");
    c.hidden_dim = j.at("hidden_dim");
    c.num_heads = j.at("num_heads");
    c.ffn_dim = j.at("ffn_dim");
    c.vocab_size = j.at("vocab_size");
    c.embed_dim = j.at("embed_dim");
    c.max_seq_len = j.at("max_seq_len");
    c.num_classes = j.at("num_classes");
    c.dropout = j.at("dropout");
    return c;
}

json to_json(const TaskSpec& s) {
    return json{{"kind", task_name(s.kind)},   {"vocab_size", s.vocab_size},
                {"seq_len", s.seq_len},        {"num_classes", s.num_classes},
                {"train_size", s.train_size},  {"dev_size", s.dev_size},
                {"test_size", s.test_size},    {"seed", s.seed}};
}

TaskSpec task_spec_from_json(const json& j) {
    TaskSpec s;
    s.kind = parse_task(j.at("kind"));
    s.vocab_size = j.at("vocab_size");
    s.seq_len = j.at("seq_len");
    s.num_classes = j.at("num_classes");
    s.train_size = j.at("train_size");
    s.dev_size = j.at("dev_size");
    s.test_size = j.at("test_size");
    s.seed = j.at("seed");
    return s;
}

namespace {

std::string match_kind_name(MatchKind k) {
    switch (k) {
        case MatchKind::l1: return "l1";
        case MatchKind::l2: return "l2";
        case MatchKind::huber: return "huber";
    }
    return "?";
}

MatchKind parse_match_kind(const std::string& s) {
    if (s == "l1") return MatchKind::l1;
    if (s == "l2") return MatchKind::l2;
    if (s == "huber") return MatchKind::huber;
    throw std::invalid_argument("unknown match kind: " + s);
}

std::string pair_kind_name(PairKind k) { return k == PairKind::l2 ? "l2" : "cosine"; }

PairKind parse_pair_kind(const std::string& s) {
    if (s == "l2") return PairKind::l2;
    if (s == "cosine") return PairKind::cosine;
    throw std::invalid_argument("unknown pair kind: " + s);
}

}  // namespace

json to_json(const DistillConfig& c) {
    return json{{"lambda_wr", c.lambda_wr},
                {"lambda_ltr", c.lambda_ltr},
                {"lambda_ckd", c.lambda_ckd},
                {"alpha", c.alpha},
                {"temperature", c.temperature},
                {"delta", c.delta},
                {"match_kind", match_kind_name(c.match_kind)},
                {"pair_kind", pair_kind_name(c.pair_kind)},
                {"window_pairs", c.window_pairs},
                {"enable_wr", c.enable_wr},
                {"enable_ltr", c.enable_ltr}};
}

DistillConfig distill_config_from_json(const json& j) {
    DistillConfig c;
    c.lambda_wr = j.at("lambda_wr");
    c.lambda_ltr = j.at("lambda_ltr");
    c.lambda_ckd = j.at("lambda_ckd");
    c.alpha = j.at("alpha");
    c.temperature = j.at("temperature");
    c.delta = j.at("delta");
    c.match_kind = parse_match_kind(j.at("match_kind"));
    c.pair_kind = parse_pair_kind(j.at("pair_kind"));
    c.window_pairs = j.at("window_pairs");
    c.enable_wr = j.at("enable_wr");
    c.enable_ltr = j.at("enable_ltr");
    return c;
}

json to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"lr", c.opt.lr},
                {"beta1", c.opt.beta1},
                {"beta2", c.opt.beta2},
                {"eps", c.opt.eps},
                {"weight_decay", c.opt.weight_decay},
                {"warmup", c.opt.warmup}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.seed = j.at("seed");
    c.opt.lr = j.at("lr");
    c.opt.beta1 = j.at("beta1");
    c.opt.beta2 = j.at("beta2");
    c.opt.eps = j.at("eps");
    c.opt.weight_decay = j.at("weight_decay");
    c.opt.warmup = j.at("warmup");
    return c;
}

json RunRecord::to_json() const {
    return json{{"schema", schema},
                {"kind", kind},
                {"seed", seed},
                {"config", config},
                {"metrics", {{"dev_accuracy", metrics.dev_accuracy}, {"test_accuracy", metrics.test_accuracy}}},
                {"steps", steps},
                {"wall_time_s", wall_time_s},
                {"loss_stream_path", loss_stream_path}};
}

RunRecord RunRecord::from_json(const json& j) {
    RunRecord r;
    r.schema = j.at("schema");
    if (r.schema != "ckd-run-record-v1")
        throw std::runtime_error("unsupported run record schema: " + r.schema);
    r.kind = j.at("kind");
    r.seed = j.at("seed");
    r.config = j.at("config");
    r.metrics.dev_accuracy = j.at("metrics").at("dev_accuracy");
    r.metrics.test_accuracy = j.at("metrics").at("test_accuracy");
    r.steps = j.at("steps");
    r.wall_time_s = j.at("wall_time_s");
    r.loss_stream_path = j.at("loss_stream_path");
    return r;
}

void RunRecord::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write run record: " + path);
    os << to_json().dump(2) << "\n";
}

RunRecord RunRecord::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read run record: " + path);
    json j;
    is >> j;
    return from_json(j);
}

// ---- evaluation and training loops ------------------------------------------

double evaluate(const ModelConfig& cfg, const ParamSet& params,
                const std::vector<Example>& split, const Structure* structure) {
    if (split.empty()) return 0.0;
    const Structure full = Structure::full(cfg);
    const Structure& st = structure ? *structure : full;
    int correct = 0;
    for (const Example& ex : split) {
        ForwardCache fc = encoder_forward(ex.tokens, params, cfg, st, nullptr);
        int best = 0;
        for (int c = 1; c < cfg.num_classes; ++c)
            if (fc.states.logits.a[static_cast<size_t>(c)] >
                fc.states.logits.a[static_cast<size_t>(best)])
                best = c;
        correct += (best == ex.label);
    }
    return static_cast<double>(correct) / split.size();
}

namespace {

struct CeLoss {
    double value;
    Mat d_logits;
};

CeLoss cross_entropy(const Mat& logits, int label) {
    const int c = logits.rows;
    double mx = -1e300;
    for (int i = 0; i < c; ++i) mx = std::max(mx, logits.a[static_cast<size_t>(i)]);
    double sum = 0.0;
    for (int i = 0; i < c; ++i) sum += std::exp(logits.a[static_cast<size_t>(i)] - mx);
    const double lse = mx + std::log(sum);
    CeLoss out;
    out.value = lse - logits.a[static_cast<size_t>(label)];
    out.d_logits = Mat(c, 1);
    for (int i = 0; i < c; ++i) {
        const double p = std::exp(logits.a[static_cast<size_t>(i)] - lse);
        out.d_logits.a[static_cast<size_t>(i)] = p - ((i == label) ? 1.0 : 0.0);
    }
    return out;
}

std::vector<std::vector<int>> make_batches(size_t n, int batch_size, Rng& rng) {
    std::vector<int> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
    rng.shuffle(idx);
    std::vector<std::vector<int>> batches;
    for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(n, start + static_cast<size_t>(batch_size));
        batches.emplace_back(idx.begin() + static_cast<long>(start),
                             idx.begin() + static_cast<long>(end));
    }
    return batches;
}

void accumulate_params(ParamSet& dst, const ParamSet& src, double scale) {
    std::vector<Mat*> d, s;
    for_each_tensor(dst, [&](const std::string&, Mat& m) { d.push_back(&m); });
    for_each_tensor(const_cast<ParamSet&>(src), [&](const std::string&, Mat& m) { s.push_back(&m); });
    for (size_t i = 0; i < d.size(); ++i) add_scaled(*d[i], *s[i], scale);
}

}  // namespace

TeacherResult train_teacher(const Dataset& data, const ModelConfig& cfg,
                            const TrainConfig& tcfg, const TaskSpec& task) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(tcfg.seed);
    ParamSet params = ParamSet::init(cfg, rng);
    const int steps_per_epoch =
        static_cast<int>((data.train.size() + tcfg.batch_size - 1) / tcfg.batch_size);
    Optimizer opt(params, tcfg.opt, tcfg.epochs * steps_per_epoch);
    const Structure full = Structure::full(cfg);

    int step = 0;
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        for (const auto& batch : make_batches(data.train.size(), tcfg.batch_size, rng)) {
            ParamSet grads = ParamSet::zeros_like(params);
            double batch_loss = 0.0;
            for (int i : batch) {
                const Example& ex = data.train[static_cast<size_t>(i)];
                ForwardCache fc = encoder_forward(ex.tokens, params, cfg, full,
                                                  cfg.dropout > 0 ? &rng : nullptr);
                CeLoss ce = cross_entropy(fc.states.logits, ex.label);
                batch_loss += ce.value;
                StateGrad seeds = StateGrad::zeros_like(fc.states);
                seeds.d_logits += ce.d_logits;
                ParamSet g = backward(params, fc, seeds);
                accumulate_params(grads, g, 1.0 / batch.size());
            }
            batch_loss /= batch.size();
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("teacher training diverged (non-finite loss) at step " +
                                         std::to_string(step));
            opt.step(params, grads);
            ++step;
        }
    }

    TeacherResult res{std::move(params), {}};
    res.record.kind = "teacher";
    res.record.seed = tcfg.seed;
    res.record.config = json{{"task", to_json(task)}, {"model", to_json(cfg)},
                             {"train", to_json(tcfg)}};
    res.record.steps = step;
    res.record.metrics.dev_accuracy = evaluate(cfg, res.params, data.dev);
    res.record.metrics.test_accuracy = evaluate(cfg, res.params, data.test);
    res.record.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

namespace {

/// Per-item distillation loss for every objective, composed uniformly as
/// logit KD + lambda_ckd * objective-specific term.
struct ItemLoss {
    double total = 0.0, logit = 0.0;
    double wr_pair = 0.0, wr_triple = 0.0, ltr_pair = 0.0, ltr_triple = 0.0;
    double aux = 0.0;  // baseline-objective term
    StateGrad grad;
    Mat d_proj;
};

ItemLoss distill_item_loss(ObjectiveKind objective, const LayerStates& student,
                           const LayerStates& teacher, int label,
                           const LayerAlignment& alignment, const DistillConfig& dcfg,
                           const std::vector<uint8_t>& mask, const Mat* proj) {
    ItemLoss out;
    if (objective == ObjectiveKind::ckd || objective == ObjectiveKind::logit_only) {
        DistillConfig cfg = dcfg;
        if (objective == ObjectiveKind::logit_only) {
            cfg.enable_wr = false;
            cfg.enable_ltr = false;
        }
        TotalLossResult r = total_objective(student, teacher, label, alignment, cfg, mask);
        out.total = r.value;
        out.logit = r.logit;
        out.wr_pair = r.wr_pair;
        out.wr_triple = r.wr_triple;
        out.ltr_pair = r.ltr_pair;
        out.ltr_triple = r.ltr_triple;
        out.grad = std::move(r.grad);
        return out;
    }

    LogitLossResult logit = logit_kd_loss(student.logits, teacher.logits, label,
                                          dcfg.alpha, dcfg.temperature);
    BaselineLossResult base;
    switch (objective) {
        case ObjectiveKind::distilbert_cos:
            base = distilbert_cos_loss(student, teacher, alignment, mask);
            break;
        case ObjectiveKind::pkd_patient:
            base = pkd_patient_loss(student, teacher, alignment, mask);
            break;
        case ObjectiveKind::tinybert:
            base = tinybert_loss(student, teacher, alignment, mask, *proj);
            break;
        case ObjectiveKind::minilm:
            base = minilm_loss(student, teacher, mask);
            break;
        default:
            throw std::logic_error("unreachable objective");
    }
    out.logit = logit.value;
    out.aux = base.value;
    out.total = logit.value + dcfg.lambda_ckd * base.value;
    // grad = logit grad + lambda * baseline grad
    out.grad = std::move(base.grad);
    out.grad.d_logits *= dcfg.lambda_ckd;
    for (Mat& m : out.grad.d_reps) m *= dcfg.lambda_ckd;
    for (auto& layer : out.grad.d_attn)
        for (Mat& m : layer) m *= dcfg.lambda_ckd;
    for (Mat& m : out.grad.d_values) m *= dcfg.lambda_ckd;
    out.grad.d_logits += logit.d_logits;
    if (!base.d_proj.empty()) {
        out.d_proj = std::move(base.d_proj);
        out.d_proj *= dcfg.lambda_ckd;
    }
    return out;
}

}  // namespace

DistillResult distill(const ModelConfig& teacher_cfg, const ParamSet& teacher_params,
                      const ModelConfig& student_cfg, ObjectiveKind objective,
                      const DistillConfig& dcfg, const Dataset& data, const TrainConfig& tcfg,
                      const TaskSpec& task, const std::string& teacher_ckpt_path,
                      const std::string& loss_stream_path) {
    teacher_cfg.validate();
    student_cfg.validate();
    dcfg.validate();
    const auto violations = check_compatibility(teacher_cfg, student_cfg, objective);
    if (!violations.empty()) throw ConstraintViolationError(violations);

    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(tcfg.seed);
    ParamSet params = ParamSet::init(student_cfg, rng);
    Mat proj;
    AdamState proj_state;
    if (objective == ObjectiveKind::tinybert)
        proj = make_rep_projection(teacher_cfg.hidden_dim, student_cfg.hidden_dim, rng);

    const LayerAlignment alignment =
        align_layers(teacher_cfg.num_layers, student_cfg.num_layers);
    const int steps_per_epoch =
        static_cast<int>((data.train.size() + tcfg.batch_size - 1) / tcfg.batch_size);
    Optimizer opt(params, tcfg.opt, tcfg.epochs * steps_per_epoch);
    const Structure t_full = Structure::full(teacher_cfg);
    const Structure s_full = Structure::full(student_cfg);

    std::ofstream stream;
    if (!loss_stream_path.empty()) {
        stream.open(loss_stream_path);
        if (!stream) throw std::runtime_error("cannot write loss stream: " + loss_stream_path);
        stream << json{{"schema", "ckd-loss-stream-v1"},
                       {"objective", objective_name(objective)},
                       {"lambda_ckd", dcfg.lambda_ckd},
                       {"lambda_wr", dcfg.lambda_wr},
                       {"lambda_ltr", dcfg.lambda_ltr}}
                      .dump()
               << "\n";
    }

    int step = 0;
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        for (const auto& batch : make_batches(data.train.size(), tcfg.batch_size, rng)) {
            ParamSet grads = ParamSet::zeros_like(params);
            Mat proj_grad(proj.rows, proj.cols);
            double l_total = 0, l_logit = 0, wr_p = 0, wr_t = 0, ltr_p = 0, ltr_t = 0, aux = 0;
            for (int i : batch) {
                const Example& ex = data.train[static_cast<size_t>(i)];
                ForwardCache tfc = encoder_forward(ex.tokens, teacher_params, teacher_cfg,
                                                   t_full, nullptr);
                ForwardCache sfc = encoder_forward(ex.tokens, params, student_cfg, s_full,
                                                   student_cfg.dropout > 0 ? &rng : nullptr);
                ItemLoss il = distill_item_loss(objective, sfc.states, tfc.states, ex.label,
                                                alignment, dcfg, ex.tokens.mask,
                                                proj.empty() ? nullptr : &proj);
                l_total += il.total; l_logit += il.logit;
                wr_p += il.wr_pair; wr_t += il.wr_triple;
                ltr_p += il.ltr_pair; ltr_t += il.ltr_triple;
                aux += il.aux;
                ParamSet g = backward(params, sfc, il.grad);
                accumulate_params(grads, g, 1.0 / batch.size());
                if (!il.d_proj.empty()) add_scaled(proj_grad, il.d_proj, 1.0 / batch.size());
            }
            const double bn = static_cast<double>(batch.size());
            l_total /= bn; l_logit /= bn; wr_p /= bn; wr_t /= bn;
            ltr_p /= bn; ltr_t /= bn; aux /= bn;
            if (!std::isfinite(l_total))
                throw std::runtime_error("distillation diverged (non-finite loss) at step " +
                                         std::to_string(step));
            opt.step(params, grads);
            if (!proj.empty()) opt.step_extra(proj, proj_grad, proj_state);
            if (stream)
                stream << json{{"step", step},       {"L_total", l_total},
                               {"L_logit", l_logit}, {"L_WR_pair", wr_p},
                               {"L_WR_triple", wr_t},{"L_LTR_pair", ltr_p},
                               {"L_LTR_triple", ltr_t}, {"L_aux", aux}}
                              .dump()
                       << "\n";
            ++step;
        }
    }

    DistillResult res{std::move(params), {}};
    res.record.kind = "distill";
    res.record.seed = tcfg.seed;
    res.record.config = json{{"task", to_json(task)},
                             {"teacher", to_json(teacher_cfg)},
                             {"teacher_ckpt", teacher_ckpt_path},
                             {"student", to_json(student_cfg)},
                             {"objective", objective_name(objective)},
                             {"distill", to_json(dcfg)},
                             {"train", to_json(tcfg)}};
    res.record.steps = step;
    res.record.loss_stream_path = loss_stream_path;
    res.record.metrics.dev_accuracy = evaluate(student_cfg, res.params, data.dev);
    res.record.metrics.test_accuracy = evaluate(student_cfg, res.params, data.test);
    res.record.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

Metrics rerun(const RunRecord& record) {
    const TaskSpec task = task_spec_from_json(record.config.at("task"));
    const Dataset data = generate_task(task);
    if (record.kind == "teacher") {
        const ModelConfig cfg = model_config_from_json(record.config.at("model"));
        const TrainConfig tcfg = train_config_from_json(record.config.at("train"));
        return train_teacher(data, cfg, tcfg, task).record.metrics;
    }
    if (record.kind == "distill") {
        const ModelConfig teacher_cfg = model_config_from_json(record.config.at("teacher"));
        const ModelConfig student_cfg = model_config_from_json(record.config.at("student"));
        const DistillConfig dcfg = distill_config_from_json(record.config.at("distill"));
        const TrainConfig tcfg = train_config_from_json(record.config.at("train"));
        const std::string ckpt = record.config.at("teacher_ckpt");
        if (ckpt.empty()) throw std::runtime_error("rerun: record has no teacher checkpoint");
        Checkpoint teacher = load_checkpoint(ckpt);
        return distill(teacher_cfg, teacher.params, student_cfg,
                       parse_objective(record.config.at("objective")), dcfg, data, tcfg, task,
                       ckpt, "")
            .record.metrics;
    }
    throw std::runtime_error("rerun: unsupported record kind " + record.kind);
}

std::vector<AblationCell> ablation_suite(const ModelConfig& teacher_cfg,
                                         const ParamSet& teacher_params,
                                         const ModelConfig& student_cfg,
                                         const DistillConfig& base, const Dataset& data,
                                         const TrainConfig& tcfg, const TaskSpec& task,
                                         const std::vector<uint64_t>& seeds) {
    struct CellSpec {
        std::string name;
        bool wr, ltr;
    };
    const CellSpec cells[] = {{"ckd", true, true},
                              {"-WR", false, true},
                              {"-LTR", true, false},
                              {"-WR-LTR", false, false}};
    std::vector<AblationCell> out;
    for (const CellSpec& cs : cells) {
        AblationCell cell;
        cell.name = cs.name;
        DistillConfig dcfg = base;
        dcfg.enable_wr = cs.wr;
        dcfg.enable_ltr = cs.ltr;
        for (uint64_t seed : seeds) {
            TrainConfig t = tcfg;
            t.seed = seed;
            DistillResult r = distill(teacher_cfg, teacher_params, student_cfg,
                                      ObjectiveKind::ckd, dcfg, data, t, task);
            cell.dev_acc.push_back(r.record.metrics.dev_accuracy);
            cell.test_acc.push_back(r.record.metrics.test_accuracy);
        }
        for (double a : cell.dev_acc) cell.mean_dev += a / cell.dev_acc.size();
        for (double a : cell.test_acc) cell.mean_test += a / cell.test_acc.size();
        out.push_back(std::move(cell));
    }
    return out;
}

std::vector<SweepPoint> window_sweep(const ModelConfig& teacher_cfg,
                                     const ParamSet& teacher_params,
                                     const ModelConfig& student_cfg, const DistillConfig& base,
                                     const Dataset& data, const TrainConfig& tcfg,
                                     const TaskSpec& task, const std::vector<int>& deltas,
                                     const std::vector<uint64_t>& seeds) {
    std::vector<SweepPoint> out;
    for (int delta : deltas) {
        SweepPoint p;
        p.delta = delta;
        DistillConfig dcfg = base;
        dcfg.delta = delta;
        for (uint64_t seed : seeds) {
            TrainConfig t = tcfg;
            t.seed = seed;
            DistillResult r = distill(teacher_cfg, teacher_params, student_cfg,
                                      ObjectiveKind::ckd, dcfg, data, t, task);
            p.dev_acc.push_back(r.record.metrics.dev_accuracy);
        }
        for (double a : p.dev_acc) p.mean_dev += a / p.dev_acc.size();
        out.push_back(std::move(p));
    }
    return out;
}

// ---- gradient checking -------------------------------------------------------

namespace {

void consider(GradCheckReport& rep, const std::string& tensor, int index, double analytic,
              double fd) {
    const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-3});
    const double rel = std::abs(analytic - fd) / denom;
    if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_tensor = tensor;
        rep.worst_index = index;
        rep.analytic = analytic;
        rep.fd = fd;
    }
}

}  // namespace

GradCheckReport gradcheck_params(ParamSet params,
                                 const std::function<double(const ParamSet&)>& loss,
                                 const ParamSet& analytic, double eps) {
    GradCheckReport rep;
    std::vector<std::pair<std::string, Mat*>> tensors;
    for_each_tensor(params, [&](const std::string& name, Mat& m) {
        tensors.emplace_back(name, &m);
    });
    std::vector<const Mat*> grads;
    for_each_tensor(const_cast<ParamSet&>(analytic),
                    [&](const std::string&, Mat& m) { grads.push_back(&m); });
    for (size_t ti = 0; ti < tensors.size(); ++ti) {
        Mat& m = *tensors[ti].second;
        for (size_t i = 0; i < m.a.size(); ++i) {
            const double orig = m.a[i];
            m.a[i] = orig + eps;
            const double up = loss(params);
            m.a[i] = orig - eps;
            const double down = loss(params);
            m.a[i] = orig;
            consider(rep, tensors[ti].first, static_cast<int>(i),
                     grads[ti]->a[i], (up - down) / (2.0 * eps));
        }
    }
    return rep;
}

GradCheckReport gradcheck_array(std::vector<double>& x, const std::function<double()>& loss,
                                const std::vector<double>& analytic, double eps,
                                const std::string& name) {
    if (x.size() != analytic.size())
        throw std::logic_error("gradcheck_array: size mismatch");
    GradCheckReport rep;
    for (size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double up = loss();
        x[i] = orig - eps;
        const double down = loss();
        x[i] = orig;
        consider(rep, name, static_cast<int>(i), analytic[i], (up - down) / (2.0 * eps));
    }
    return rep;
}

// ---- relation kernel benchmark ------------------------------------------------

std::vector<BenchRow> bench_relations(const std::vector<int>& ns,
                                      const std::vector<int>& deltas, int d, uint64_t seed) {
    std::vector<BenchRow> rows;
    Rng rng(seed);
    for (int n : ns) {
        Mat data = random_normal(d, n, 1.0, rng);
        {
            RelationStats stats;
            const auto t0 = std::chrono::steady_clock::now();
            naive_relations(data, PairKind::l2, {}, &stats);
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            rows.push_back({"naive", n, d, n - 1, ms, stats.triple_ops, stats.aux_elems});
        }
        for (int delta : deltas) {
            if (delta >= n) continue;
            RelationStats stats;
            const auto t0 = std::chrono::steady_clock::now();
            windowed_relations(data, delta, PairKind::l2, {}, &stats);
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            rows.push_back({"windowed", n, d, delta, ms, stats.triple_ops, stats.aux_elems});
        }
    }
    return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write csv: " + path);
    os << "n,d,delta,variant,wall_ms,triple_ops,aux_elems\n";
    for (const BenchRow& r : rows)
        os << r.n << "," << r.d << "," << r.delta << "," << r.variant << "," << r.wall_ms
           << "," << r.triple_ops << "," << r.aux_elems << "\n";
}

double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    const size_t n = xs.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        const double lx = std::log(xs[i]);
        const double ly = std::log(ys[i]);
        sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

double linear_r2(const std::vector<double>& xs, const std::vector<double>& ys) {
    const size_t n = xs.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        sx += xs[i]; sy += ys[i]; sxx += xs[i] * xs[i]; sxy += xs[i] * ys[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double intercept = (sy - slope * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double mean_y = sy / n;
    for (size_t i = 0; i < n; ++i) {
        const double pred = slope * xs[i] + intercept;
        ss_res += (ys[i] - pred) * (ys[i] - pred);
        ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
    }
    return ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
}

}  // namespace ckd
