// Command-line front end: teacher training, distillation, evaluation,
// ablations, the window sweep, adaptive width/depth training, the
// compatibility matrix, gradient checking and the relation-kernel benchmark.
//
// Configuration comes from an optional key = value file (--config); every
// flag overrides its config key. --seed is mandatory for training commands.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "ckd/adaptive.hpp"
#include "ckd/baselines.hpp"
#include "ckd/tasks.hpp"
#include "ckd/train.hpp"

using namespace ckd;
namespace fs = std::filesystem;

namespace {

struct Settings {
    std::map<std::string, std::string> kv;

    std::string str(const std::string& key, const std::string& dflt) const {
        auto it = kv.find(key);
        return it == kv.end() ? dflt : it->second;
    }
    int num(const std::string& key, int dflt) const {
        auto it = kv.find(key);
        return it == kv.end() ? dflt : std::stoi(it->second);
    }
    double real(const std::string& key, double dflt) const {
        auto it = kv.find(key);
        return it == kv.end() ? dflt : std::stod(it->second);
    }
    bool flag(const std::string& key, bool dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        return it->second == "1" || it->second == "true" || it->second == "yes";
    }

    void load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw CLI::ValidationError("--config", "cannot open " + path);
        std::string line;
        while (std::getline(is, line)) {
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto trim = [](std::string str) {
                const auto b = str.find_first_not_of(" \t\r");
                const auto e = str.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : str.substr(b, e - b + 1);
            };
            const std::string key = trim(line.substr(0, eq));
            const std::string val = trim(line.substr(eq + 1));
            if (!key.empty()) kv[key] = val;
        }
    }
};

/// Registers --some-flag writing into the settings key; the config file is
/// loaded when --config is parsed, so a passed flag always wins.
void bind(CLI::App* cmd, Settings& s, const std::string& flag, const std::string& key,
          const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&s, key](const std::string& v) { s.kv[key] = v; }, help);
}

std::vector<double> parse_reals(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

std::vector<int> parse_ints(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

std::vector<uint64_t> parse_seeds(const std::string& csv) {
    std::vector<uint64_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
    return out;
}

TaskSpec task_from(const Settings& s) {
    TaskSpec t;
    t.kind = parse_task(s.str("task.kind", "local-pattern-classification"));
    t.vocab_size = s.num("task.vocab", 16);
    t.seq_len = s.num("task.seq_len", 16);
    t.num_classes = s.num("task.classes", t.kind == TaskKind::parity_marked ? 2 : 4);
    t.train_size = s.num("task.train_size", 2048);
    t.dev_size = s.num("task.dev_size", 512);
    t.test_size = s.num("task.test_size", 512);
    t.seed = static_cast<uint64_t>(s.num("task.seed", 5));
    return t;
}

ModelConfig model_from(const Settings& s, const TaskSpec& task, const std::string& prefix,
                       int layers, int hidden, int heads) {
    ModelConfig c;
    c.num_layers = s.num(prefix + ".layers", layers);
    c.hidden_dim = s.num(prefix + ".hidden", hidden);
    c.num_heads = s.num(prefix + ".heads", heads);
    c.ffn_dim = s.num(prefix + ".ffn", 2 * c.hidden_dim);
    c.vocab_size = task.vocab_size;
    c.embed_dim = c.hidden_dim;
    c.max_seq_len = task.seq_len;
    c.num_classes = task.num_classes;
    c.dropout = s.real(prefix + ".dropout", 0.0);
    return c;
}

DistillConfig distill_from(const Settings& s) {
    DistillConfig d;
    d.lambda_wr = s.real("distill.lambda_wr", d.lambda_wr);
    d.lambda_ltr = s.real("distill.lambda_ltr", d.lambda_ltr);
    d.lambda_ckd = s.real("distill.lambda_ckd", d.lambda_ckd);
    d.alpha = s.real("distill.alpha", d.alpha);
    d.temperature = s.real("distill.temperature", d.temperature);
    d.delta = s.num("distill.delta", d.delta);
    const std::string mk = s.str("distill.match_kind", "huber");
    d.match_kind = mk == "l1" ? MatchKind::l1 : (mk == "l2" ? MatchKind::l2 : MatchKind::huber);
    d.pair_kind = s.str("distill.pair_kind", "cosine") == "l2" ? PairKind::l2 : PairKind::cosine;
    d.window_pairs = s.flag("distill.window_pairs", d.window_pairs);
    d.enable_wr = s.flag("distill.enable_wr", true);
    d.enable_ltr = s.flag("distill.enable_ltr", true);
    return d;
}

TrainConfig train_from(const Settings& s, uint64_t seed, int default_epochs) {
    TrainConfig t;
    t.epochs = s.num("train.epochs", default_epochs);
    t.batch_size = s.num("train.batch_size", 8);
    t.seed = seed;
    t.opt.lr = s.real("train.lr", 2e-3);
    t.opt.beta1 = s.real("train.beta1", 0.0);
    t.opt.beta2 = s.real("train.beta2", 0.999);
    t.opt.eps = s.real("train.eps", 1e-8);
    t.opt.weight_decay = s.real("train.weight_decay", 0.0);
    t.opt.warmup = s.real("train.warmup", 0.1);
    return t;
}

fs::path ensure_out(const Settings& s) {
    fs::path out(s.str("out.dir", "runs"));
    fs::create_directories(out);
    return out;
}

ModelConfig preset_from(const std::string& spec, const TaskSpec& task) {
    // "12/768" style presets
    const auto slash = spec.find('/');
    if (slash == std::string::npos)
        throw std::invalid_argument("expected layers/hidden, e.g. 12/768, got " + spec);
    return ModelConfig::preset(std::stoi(spec.substr(0, slash)),
                               std::stoi(spec.substr(slash + 1)), task.vocab_size,
                               task.seq_len, task.num_classes);
}

int cmd_train_teacher(const Settings& s, uint64_t seed) {
    const TaskSpec task = task_from(s);
    const Dataset data = generate_task(task);
    const ModelConfig cfg = model_from(s, task, "model", 4, 64, 4);
    const TrainConfig tcfg = train_from(s, seed, 3);
    TeacherResult r = train_teacher(data, cfg, tcfg, task);
    const fs::path out = ensure_out(s);
    const std::string ckpt = (out / "teacher.ckpt").string();
    save_checkpoint(ckpt, cfg, r.params, {{"kind", "teacher"}, {"task", task_name(task.kind)}});
    r.record.save((out / "teacher_record.json").string());
    std::cout << "teacher: dev " << r.record.metrics.dev_accuracy << ", test "
              << r.record.metrics.test_accuracy << ", " << r.record.steps << " steps, "
              << r.record.wall_time_s << " s\n"
              << "checkpoint: " << ckpt << "\n";
    return 0;
}

int cmd_distill(const Settings& s, uint64_t seed) {
    const TaskSpec task = task_from(s);
    const Dataset data = generate_task(task);
    const std::string teacher_path = s.str("teacher.ckpt", "runs/teacher.ckpt");
    Checkpoint teacher = load_checkpoint(teacher_path);
    const ModelConfig scfg = model_from(s, task, "student", 2, 32, 2);
    const ObjectiveKind objective = parse_objective(s.str("distill.objective", "ckd"));
    const DistillConfig dcfg = distill_from(s);
    const TrainConfig tcfg = train_from(s, seed, 2);
    const fs::path out = ensure_out(s);
    const std::string stream = (out / "losses.jsonl").string();
    DistillResult r = distill(teacher.cfg, teacher.params, scfg, objective, dcfg, data, tcfg,
                              task, teacher_path, stream);
    const std::string ckpt = (out / "student.ckpt").string();
    save_checkpoint(ckpt, scfg, r.params,
                    {{"kind", "student"}, {"objective", objective_name(objective)}});
    r.record.save((out / "distill_record.json").string());
    std::cout << objective_name(objective) << " student: dev " << r.record.metrics.dev_accuracy
              << ", test " << r.record.metrics.test_accuracy << ", " << r.record.steps
              << " steps, " << r.record.wall_time_s << " s\n"
              << "checkpoint: " << ckpt << "\nloss stream: " << stream << "\n";
    return 0;
}

int cmd_rerun(const Settings& s) {
    RunRecord record = RunRecord::load(s.str("record", ""));
    Metrics m = rerun(record);
    std::cout << "rerun: dev " << m.dev_accuracy << ", test " << m.test_accuracy << "\n";
    const bool same = m.dev_accuracy == record.metrics.dev_accuracy &&
                      m.test_accuracy == record.metrics.test_accuracy;
    std::cout << (same ? "matches the recorded metrics exactly\n"
                       : "DOES NOT match the recorded metrics\n");
    return same ? 0 : 1;
}

int cmd_eval(const Settings& s) {
    const TaskSpec task = task_from(s);
    const Dataset data = generate_task(task);
    Checkpoint ck = load_checkpoint(s.str("ckpt", "runs/student.ckpt"));
    const std::string split = s.str("split", "dev");
    const auto& examples = split == "test" ? data.test : data.dev;

    const std::string widths_csv = s.str("widths", "");
    if (widths_csv.empty()) {
        std::cout << "accuracy: " << evaluate(ck.cfg, ck.params, examples) << "\n";
        return 0;
    }
    const auto widths = parse_reals(widths_csv);
    const auto depths = parse_reals(s.str("depths", "1.0"));
    std::ostringstream csv;
    csv << "m_w,m_d,accuracy\n";
    for (double w : widths)
        for (double d : depths) {
            const Structure st = subnet_structure(ck.cfg, {w, d});
            csv << w << "," << d << "," << evaluate(ck.cfg, ck.params, examples, &st) << "\n";
        }
    std::cout << csv.str();
    const fs::path out = ensure_out(s);
    std::ofstream((out / "eval_grid.csv").string()) << csv.str();
    return 0;
}

int cmd_ablate(const Settings& s, uint64_t seed) {
    const TaskSpec task = task_from(s);
    const Dataset data = generate_task(task);
    Checkpoint teacher = load_checkpoint(s.str("teacher.ckpt", "runs/teacher.ckpt"));
    const ModelConfig scfg = model_from(s, task, "student", 2, 32, 2);
    const TrainConfig tcfg = train_from(s, seed, 2);
    std::vector<uint64_t> seeds = parse_seeds(s.str("seeds", "1,2,3,4"));
    auto cells = ablation_suite(teacher.cfg, teacher.params, scfg, distill_from(s), data, tcfg,
                                task, seeds);
    std::ostringstream csv;
    csv << "cell,seed,dev_accuracy,test_accuracy\n";
    for (const auto& cell : cells)
        for (size_t i = 0; i < cell.dev_acc.size(); ++i)
            csv << cell.name << "," << seeds[i] << "," << cell.dev_acc[i] << ","
                << cell.test_acc[i] << "\n";
    const fs::path out = ensure_out(s);
    std::ofstream((out / "ablation.csv").string()) << csv.str();
    std::cout << "cell        mean dev   mean test\n";
    for (const auto& cell : cells)
        std::cout << cell.name << std::string(12 - cell.name.size(), ' ') << cell.mean_dev
                  << "     " << cell.mean_test << "\n";
    std::cout << "table: " << (out / "ablation.csv").string() << "\n";
    return 0;
}

int cmd_window_sweep(const Settings& s, uint64_t seed) {
    const TaskSpec task = task_from(s);
    const Dataset data = generate_task(task);
    Checkpoint teacher = load_checkpoint(s.str("teacher.ckpt", "runs/teacher.ckpt"));
    const ModelConfig scfg = model_from(s, task, "student", 2, 32, 2);
    const TrainConfig tcfg = train_from(s, seed, 2);
    std::vector<uint64_t> seeds = parse_seeds(s.str("seeds", "1,2"));
    std::vector<int> deltas = parse_ints(s.str("deltas", "1,2,4,8,16"));
    auto points = window_sweep(teacher.cfg, teacher.params, scfg, distill_from(s), data, tcfg,
                               task, deltas, seeds);
    std::ostringstream csv;
    csv << "delta,mean_dev_accuracy,per_seed\n";
    for (const auto& p : points) {
        csv << p.delta << "," << p.mean_dev << ",\"";
        for (size_t i = 0; i < p.dev_acc.size(); ++i)
            csv << (i ? ";" : "") << seeds[i] << ":" << p.dev_acc[i];
        csv << "\"\n";
    }
    const fs::path out = ensure_out(s);
    std::ofstream((out / "window_sweep.csv").string()) << csv.str();
    std::cout << csv.str() << "table: " << (out / "window_sweep.csv").string() << "\n";
    return 0;
}

int cmd_adaptive(const Settings& s, uint64_t seed) {
    const TaskSpec task = task_from(s);
    const Dataset data = generate_task(task);
    Checkpoint teacher = load_checkpoint(s.str("teacher.ckpt", "runs/teacher.ckpt"));
    const ModelConfig cfg = teacher.cfg;
    const DistillConfig dcfg = distill_from(s);
    TrainConfig tcfg = train_from(s, seed, 1);
    const auto widths = parse_reals(s.str("adaptive.widths", "1.0,0.75,0.5,0.25"));
    const auto depths = parse_reals(s.str("adaptive.depths", "1.0,0.75,0.5,0.25"));
    const int steps = s.num("adaptive.steps", 200);
    const std::string phase = s.str("phase", "all");
    const fs::path out = ensure_out(s);

    ParamSet current = teacher.params;
    if (phase == "1" || phase == "all") {
        ImportanceScores scores = estimate_importance(cfg, current, data.dev);
        current = rewire(cfg, current, scores);
        save_checkpoint((out / "rewired.ckpt").string(), cfg, current, {{"kind", "rewired"}});
        std::ostringstream csv;
        csv << "layer,unit,kind,score\n";
        for (size_t l = 0; l < scores.heads.size(); ++l) {
            for (size_t h = 0; h < scores.heads[l].size(); ++h)
                csv << l << "," << h << ",head," << scores.heads[l][h] << "\n";
            for (size_t k = 0; k < scores.neurons[l].size(); ++k)
                csv << l << "," << k << ",neuron," << scores.neurons[l][k] << "\n";
        }
        std::ofstream((out / "importance.csv").string()) << csv.str();
        std::cout << "phase 1: rewired network written to " << (out / "rewired.ckpt").string()
                  << "\n";
    } else if (phase == "2" || phase == "3") {
        current = load_checkpoint(s.str("init.ckpt", (out / "rewired.ckpt").string())).params;
    }

    auto grid_csv = [&](const ParamSet& params, const std::string& name) {
        std::ostringstream csv;
        csv << "m_w,m_d,accuracy\n";
        for (double w : widths)
            for (double d : depths) {
                const Structure st = subnet_structure(cfg, {w, d});
                csv << w << "," << d << "," << evaluate(cfg, params, data.dev, &st) << "\n";
            }
        std::ofstream((out / name).string()) << csv.str();
        std::cout << "grid: " << (out / name).string() << "\n";
    };

    if (phase == "2" || phase == "all") {
        AdaptiveResult r = train_adaptive_width(cfg, current, widths, data, dcfg, tcfg, steps);
        current = r.params;
        std::map<std::string, std::string> meta = {{"kind", "adaptive-width"}};
        for (size_t i = 0; i < widths.size(); ++i)
            meta["width" + std::to_string(i)] = std::to_string(widths[i]);
        save_checkpoint((out / "adaptive_w.ckpt").string(), cfg, current, meta);
        r.record.save((out / "adaptive_w_record.json").string());
        std::cout << "phase 2 probe loss per width:";
        for (size_t i = 0; i < widths.size(); ++i)
            std::cout << "  " << widths[i] << ": " << r.probe_initial[i] << " -> "
                      << r.probe_final[i];
        std::cout << "\n";
    }
    if (phase == "3" || phase == "all") {
        if (phase == "3")
            current =
                load_checkpoint(s.str("init.ckpt", (out / "adaptive_w.ckpt").string())).params;
        AdaptiveResult r =
            train_adaptive_full(cfg, current, widths, depths, data, dcfg, tcfg, steps);
        std::map<std::string, std::string> meta = {{"kind", "adaptive-full"}};
        for (size_t i = 0; i < widths.size(); ++i)
            meta["width" + std::to_string(i)] = std::to_string(widths[i]);
        for (size_t i = 0; i < depths.size(); ++i)
            meta["depth" + std::to_string(i)] = std::to_string(depths[i]);
        save_checkpoint((out / "adaptive_full.ckpt").string(), cfg, r.params, meta);
        r.record.save((out / "adaptive_full_record.json").string());
        grid_csv(r.params, "adaptive_grid.csv");
    }
    return 0;
}

int cmd_check_compat(const Settings& s) {
    TaskSpec task = task_from(s);
    task.vocab_size = std::max(task.vocab_size, 16);
    const ModelConfig teacher = preset_from(s.str("teacher.preset", "12/768"), task);
    std::vector<std::string> student_specs;
    {
        std::stringstream ss(s.str("student.presets", "6/768,4/512,4/256"));
        std::string item;
        while (std::getline(ss, item, ',')) student_specs.push_back(item);
    }
    const ObjectiveKind objectives[] = {ObjectiveKind::distilbert_cos,
                                        ObjectiveKind::pkd_patient, ObjectiveKind::tinybert,
                                        ObjectiveKind::minilm, ObjectiveKind::logit_only,
                                        ObjectiveKind::ckd};
    auto pad = [](std::string v, size_t width) {
        if (v.size() < width) v += std::string(width - v.size(), ' ');
        return v + " ";
    };
    std::cout << "teacher " << s.str("teacher.preset", "12/768") << "\n";
    std::cout << pad("objective", 16);
    for (const auto& sp : student_specs) std::cout << pad(sp, 14);
    std::cout << "\n";
    for (ObjectiveKind k : objectives) {
        std::cout << pad(objective_name(k), 16);
        for (const auto& sp : student_specs) {
            const ModelConfig student = preset_from(sp, task);
            const auto v = check_compatibility(teacher, student, k);
            std::cout << pad(v.empty() ? "ok" : v[0].constraint, 14);
        }
        std::cout << "\n";
    }
    return 0;
}

int cmd_gradcheck(const Settings& s) {
    // Random tiny teacher/student pair; checks the analytic parameter
    // gradient of the selected loss against central differences.
    const uint64_t seed = static_cast<uint64_t>(s.num("seed", 1));
    Rng rng(seed);
    TaskSpec task = task_from(s);
    task.vocab_size = std::max(task.vocab_size, 12);
    ModelConfig scfg = model_from(s, task, "student", 2, 16, 2);
    ModelConfig tcfg = model_from(s, task, "model", 3, 24, 2);
    const std::string which = s.str("loss", "total");
    if (which == "distilbert" || which == "pkd") {
        tcfg.hidden_dim = scfg.hidden_dim;  // these two require equal widths
        tcfg.embed_dim = scfg.embed_dim;
    }
    ParamSet sp = ParamSet::init(scfg, rng, 0.3);
    ParamSet tp = ParamSet::init(tcfg, rng, 0.3);
    TokenSequence tok;
    const int n = std::min(6, task.seq_len);
    for (int i = 0; i < n; ++i) {
        tok.ids.push_back(1 + rng.uniform_int(task.vocab_size - 1));
        tok.mask.push_back(i + 1 < n ? 1 : 0);
    }
    const int label = rng.uniform_int(task.num_classes);
    const DistillConfig dcfg = distill_from(s);
    const LayerAlignment al = align_layers(tcfg.num_layers, scfg.num_layers);
    const LayerStates ts = encoder_forward(tok, tp, tcfg).states;
    Mat proj = make_rep_projection(tcfg.hidden_dim, scfg.hidden_dim, rng);

    auto loss_and_grad = [&](const LayerStates& ss) -> std::pair<double, StateGrad> {
        if (which == "ckd_wr") {
            auto r = ckd_wr_loss(ss, ts, al, dcfg, tok.mask);
            return {r.value, std::move(r.grad)};
        }
        if (which == "ckd_ltr") {
            auto r = ckd_ltr_loss(ss, ts, al, dcfg, tok.mask);
            return {r.value, std::move(r.grad)};
        }
        if (which == "logit") {
            auto r = logit_kd_loss(ss.logits, ts.logits, label, dcfg.alpha, dcfg.temperature);
            StateGrad g = StateGrad::zeros_like(ss);
            g.d_logits += r.d_logits;
            return {r.value, std::move(g)};
        }
        if (which == "distilbert") {
            auto r = distilbert_cos_loss(ss, ts, al, tok.mask);
            return {r.value, std::move(r.grad)};
        }
        if (which == "pkd") {
            auto r = pkd_patient_loss(ss, ts, al, tok.mask);
            return {r.value, std::move(r.grad)};
        }
        if (which == "tinybert") {
            auto r = tinybert_loss(ss, ts, al, tok.mask, proj);
            return {r.value, std::move(r.grad)};
        }
        if (which == "minilm") {
            auto r = minilm_loss(ss, ts, tok.mask);
            return {r.value, std::move(r.grad)};
        }
        auto r = total_objective(ss, ts, label, al, dcfg, tok.mask);
        return {r.value, std::move(r.grad)};
    };

    ForwardCache fc = encoder_forward(tok, sp, scfg);
    auto [value, grad_seeds] = loss_and_grad(fc.states);
    ParamSet analytic = backward(sp, fc, grad_seeds);
    GradCheckReport rep = gradcheck_params(
        sp,
        [&](const ParamSet& q) {
            return loss_and_grad(encoder_forward(tok, q, scfg).states).first;
        },
        analytic, s.real("eps", 1e-5));
    std::cout << "loss " << which << ": value " << value << ", max relative error "
              << rep.max_rel_err << " at " << rep.worst_tensor << "[" << rep.worst_index
              << "] (analytic " << rep.analytic << ", fd " << rep.fd << ")\n";
    return rep.max_rel_err < 1e-4 ? 0 : 1;
}

int cmd_bench(const Settings& s) {
    const auto ns = parse_ints(s.str("ns", "32,64,128,256"));
    const auto deltas = parse_ints(s.str("deltas", "8,16,32"));
    const int d = s.num("dim", 16);
    auto rows = bench_relations(ns, deltas, d);
    const fs::path out = ensure_out(s);
    const std::string path = (out / "bench_relations.csv").string();
    write_bench_csv(rows, path);
    std::cout << "n,d,delta,variant,wall_ms,triple_ops,aux_elems\n";
    for (const auto& r : rows)
        std::cout << r.n << "," << r.d << "," << r.delta << "," << r.variant << ","
                  << r.wall_ms << "," << r.triple_ops << "," << r.aux_elems << "\n";
    std::cout << "table: " << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contextual relation distillation workbench"};
    app.require_subcommand(1);
    Settings s;
    app.add_option_function<std::string>(
        "--config", [&s](const std::string& p) { s.load_file(p); },
        "key = value configuration file");

    struct Cmd {
        CLI::App* sub = nullptr;
        std::optional<uint64_t> seed;
    };
    std::map<std::string, Cmd> cmds;

    auto add_cmd = [&](const std::string& name, const std::string& help, bool needs_seed) {
        CLI::App* sub = app.add_subcommand(name, help);
        cmds[name] = {sub, std::nullopt};
        if (needs_seed) {
            sub->add_option_function<uint64_t>(
                   "--seed", [&cmds, name](uint64_t v) { cmds[name].seed = v; },
                   "run seed (mandatory for training commands)")
                ->required();
        }
        for (const auto& [flag, key, help2] :
             std::vector<std::tuple<std::string, std::string, std::string>>{
                 {"--task", "task.kind", "task kind"},
                 {"--task-vocab", "task.vocab", "vocabulary size"},
                 {"--task-seq-len", "task.seq_len", "sequence length"},
                 {"--task-classes", "task.classes", "number of classes"},
                 {"--task-train-size", "task.train_size", "training examples"},
                 {"--task-dev-size", "task.dev_size", "dev examples"},
                 {"--task-test-size", "task.test_size", "test examples"},
                 {"--task-seed", "task.seed", "dataset seed"},
                 {"--out", "out.dir", "output directory"},
             })
            bind(sub, s, flag, key, help2);
        return sub;
    };

    {
        CLI::App* c = add_cmd("train-teacher", "train a teacher on a synthetic task", true);
        for (const auto& [f, k] : std::vector<std::pair<std::string, std::string>>{
                 {"--model-layers", "model.layers"},
                 {"--model-hidden", "model.hidden"},
                 {"--model-heads", "model.heads"},
                 {"--model-ffn", "model.ffn"},
                 {"--model-dropout", "model.dropout"},
                 {"--epochs", "train.epochs"},
                 {"--batch-size", "train.batch_size"},
                 {"--lr", "train.lr"}})
            bind(c, s, f, k, k);
    }
    {
        CLI::App* c = add_cmd("distill", "distill a teacher checkpoint into a student", true);
        for (const auto& [f, k] : std::vector<std::pair<std::string, std::string>>{
                 {"--teacher", "teacher.ckpt"},
                 {"--objective", "distill.objective"},
                 {"--student-layers", "student.layers"},
                 {"--student-hidden", "student.hidden"},
                 {"--student-heads", "student.heads"},
                 {"--student-ffn", "student.ffn"},
                 {"--alpha", "distill.alpha"},
                 {"--temperature", "distill.temperature"},
                 {"--lambda-ckd", "distill.lambda_ckd"},
                 {"--lambda-wr", "distill.lambda_wr"},
                 {"--lambda-ltr", "distill.lambda_ltr"},
                 {"--delta", "distill.delta"},
                 {"--match-kind", "distill.match_kind"},
                 {"--pair-kind", "distill.pair_kind"},
                 {"--epochs", "train.epochs"},
                 {"--batch-size", "train.batch_size"},
                 {"--lr", "train.lr"}})
            bind(c, s, f, k, k);
    }
    {
        CLI::App* c =
            add_cmd("eval", "evaluate a checkpoint, optionally over a width/depth grid", false);
        for (const auto& [f, k] : std::vector<std::pair<std::string, std::string>>{
                 {"--ckpt", "ckpt"}, {"--split", "split"}, {"--widths", "widths"},
                 {"--depths", "depths"}})
            bind(c, s, f, k, k);
    }
    {
        CLI::App* c = add_cmd("rerun", "replay a run record and compare metrics", false);
        bind(c, s, "--record", "record", "run record json");
    }
    {
        CLI::App* c = add_cmd("ablate", "run the component-removal ablation grid", true);
        for (const auto& [f, k] : std::vector<std::pair<std::string, std::string>>{
                 {"--teacher", "teacher.ckpt"},
                 {"--seeds", "seeds"},
                 {"--student-layers", "student.layers"},
                 {"--student-hidden", "student.hidden"},
                 {"--student-heads", "student.heads"},
                 {"--epochs", "train.epochs"}})
            bind(c, s, f, k, k);
    }
    {
        CLI::App* c = add_cmd("window-sweep", "distill across locality window sizes", true);
        for (const auto& [f, k] : std::vector<std::pair<std::string, std::string>>{
                 {"--teacher", "teacher.ckpt"},
                 {"--deltas", "deltas"},
                 {"--seeds", "seeds"},
                 {"--student-layers", "student.layers"},
                 {"--student-hidden", "student.hidden"},
                 {"--student-heads", "student.heads"},
                 {"--epochs", "train.epochs"}})
            bind(c, s, f, k, k);
    }
    {
        CLI::App* c = add_cmd("adaptive", "width/depth adaptive training (phases 1-3)", true);
        for (const auto& [f, k] : std::vector<std::pair<std::string, std::string>>{
                 {"--teacher", "teacher.ckpt"},
                 {"--phase", "phase"},
                 {"--init", "init.ckpt"},
                 {"--widths", "adaptive.widths"},
                 {"--depths", "adaptive.depths"},
                 {"--steps", "adaptive.steps"},
                 {"--batch-size", "train.batch_size"},
                 {"--lr", "train.lr"},
                 {"--lambda-ckd", "distill.lambda_ckd"}})
            bind(c, s, f, k, k);
    }
    {
        CLI::App* c = add_cmd("check-compat", "print the objective/architecture matrix", false);
        bind(c, s, "--teacher-preset", "teacher.preset", "teacher layers/hidden");
        bind(c, s, "--student-presets", "student.presets", "comma-separated layers/hidden list");
    }
    {
        CLI::App* c = add_cmd("gradcheck", "finite-difference check of one loss", false);
        for (const auto& [f, k] : std::vector<std::pair<std::string, std::string>>{
                 {"--loss", "loss"},
                 {"--eps", "eps"},
                 {"--check-seed", "seed"},
                 {"--student-layers", "student.layers"},
                 {"--student-hidden", "student.hidden"},
                 {"--student-heads", "student.heads"},
                 {"--model-layers", "model.layers"},
                 {"--model-hidden", "model.hidden"},
                 {"--model-heads", "model.heads"}})
            bind(c, s, f, k, k);
    }
    {
        CLI::App* c =
            add_cmd("bench-relations", "naive vs windowed relation kernel benchmark", false);
        for (const auto& [f, k] : std::vector<std::pair<std::string, std::string>>{
                 {"--ns", "ns"}, {"--deltas", "deltas"}, {"--dim", "dim"}})
            bind(c, s, f, k, k);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        for (auto& [name, cmd] : cmds) {
            if (!cmd.sub->parsed()) continue;
            const uint64_t seed = cmd.seed.value_or(0);
            if (name == "train-teacher") return cmd_train_teacher(s, seed);
            if (name == "distill") return cmd_distill(s, seed);
            if (name == "eval") return cmd_eval(s);
            if (name == "rerun") return cmd_rerun(s);
            if (name == "ablate") return cmd_ablate(s, seed);
            if (name == "window-sweep") return cmd_window_sweep(s, seed);
            if (name == "adaptive") return cmd_adaptive(s, seed);
            if (name == "check-compat") return cmd_check_compat(s);
            if (name == "gradcheck") return cmd_gradcheck(s);
            if (name == "bench-relations") return cmd_bench(s);
        }
    } catch (const ConstraintViolationError& e) {
        std::cerr << "refused: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
