#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ckd/baselines.hpp"
#include "ckd/distill.hpp"
#include "ckd/tasks.hpp"

namespace ckd {

// The update rule is adaptive-second-moment with bias correction and no
// first-moment term by default (beta1 = 0):
//   v      <- beta2 * v + (1 - beta2) * g^2
//   theta  <- theta - lr_t * g / (sqrt(v / (1 - beta2^t)) + eps)
// lr_t ramps linearly over the warmup fraction of total steps, then decays
// linearly to zero. Setting beta1 > 0 adds a bias-corrected first moment.
struct OptimizerConfig {
    double lr = 2e-3;
    double beta1 = 0.0;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled, applied with the scheduled lr
    double warmup = 0.1;
};

struct AdamState {
    Mat m, v;
};

struct Optimizer {
    OptimizerConfig cfg;
    int total_steps = 1;
    int t = 0;
    std::vector<AdamState> states;  // one per tensor in for_each_tensor order

    Optimizer(const ParamSet& shape, const OptimizerConfig& cfg, int total_steps);
    double lr_at(int step) const;
    /// One update; call exactly once per training step.
    void step(ParamSet& params, const ParamSet& grads);
    /// Joint update of an extra tensor (e.g. a learned rep projection).
    void step_extra(Mat& param, const Mat& grad, AdamState& state);
};

struct TrainConfig {
    int epochs = 3;
    int batch_size = 8;
    uint64_t seed = 1;
    OptimizerConfig opt;
};

struct Metrics {
    double dev_accuracy = 0.0;
    double test_accuracy = 0.0;
};

/// One run's provenance: enough configuration to replay it bit-exactly.
struct RunRecord {
    std::string schema = "ckd-run-record-v1";
    std::string kind;  // teacher | distill | adaptive-width | adaptive-full
    uint64_t seed = 0;
    nlohmann::json config;
    Metrics metrics;
    int steps = 0;
    double wall_time_s = 0.0;
    std::string loss_stream_path;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static RunRecord load(const std::string& path);
};

// JSON round-trips for every config the records snapshot.
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskSpec& s);
TaskSpec task_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DistillConfig& c);
DistillConfig distill_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

double evaluate(const ModelConfig& cfg, const ParamSet& params,
                const std::vector<Example>& split, const Structure* structure = nullptr);

struct TeacherResult {
    ParamSet params;
    RunRecord record;
};

/// Supervised training with cross-entropy; aborts with a diagnostic if the
/// loss goes non-finite.
TeacherResult train_teacher(const Dataset& data, const ModelConfig& cfg,
                            const TrainConfig& tcfg, const TaskSpec& task);

struct DistillResult {
    ParamSet params;
    RunRecord record;
};

/// Objective-selectable distillation. Refuses incompatible
/// (objective, architecture) pairs before any training work happens.
/// When loss_stream_path is non-empty, a JSON-lines loss breakdown is written
/// with one record per optimizer step.
DistillResult distill(const ModelConfig& teacher_cfg, const ParamSet& teacher_params,
                      const ModelConfig& student_cfg, ObjectiveKind objective,
                      const DistillConfig& dcfg, const Dataset& data, const TrainConfig& tcfg,
                      const TaskSpec& task, const std::string& teacher_ckpt_path = "",
                      const std::string& loss_stream_path = "");

/// Replays a recorded run (teacher or distill) and returns the fresh metrics.
Metrics rerun(const RunRecord& record);

struct AblationCell {
    std::string name;  // ckd | -WR | -LTR | -WR-LTR
    std::vector<double> dev_acc;
    std::vector<double> test_acc;
    double mean_dev = 0.0;
    double mean_test = 0.0;
};

std::vector<AblationCell> ablation_suite(const ModelConfig& teacher_cfg,
                                         const ParamSet& teacher_params,
                                         const ModelConfig& student_cfg,
                                         const DistillConfig& base, const Dataset& data,
                                         const TrainConfig& tcfg, const TaskSpec& task,
                                         const std::vector<uint64_t>& seeds);

struct SweepPoint {
    int delta = 0;
    std::vector<double> dev_acc;
    double mean_dev = 0.0;
};

std::vector<SweepPoint> window_sweep(const ModelConfig& teacher_cfg,
                                     const ParamSet& teacher_params,
                                     const ModelConfig& student_cfg, const DistillConfig& base,
                                     const Dataset& data, const TrainConfig& tcfg,
                                     const TaskSpec& task, const std::vector<int>& deltas,
                                     const std::vector<uint64_t>& seeds);

// ---- gradient checking ----------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_tensor;
    int worst_index = -1;
    double analytic = 0.0;
    double fd = 0.0;
};

/// Central differences over every parameter coordinate. Relative error uses
/// |fd - g| / max(|fd|, |g|, 1e-3) so that fd noise on near-zero coordinates
/// does not register as disagreement.
GradCheckReport gradcheck_params(ParamSet params,
                                 const std::function<double(const ParamSet&)>& loss,
                                 const ParamSet& analytic, double eps = 1e-5);

/// Same check over an arbitrary coordinate buffer (representation inputs).
GradCheckReport gradcheck_array(std::vector<double>& x, const std::function<double()>& loss,
                                const std::vector<double>& analytic, double eps = 1e-5,
                                const std::string& name = "array");

// ---- relation kernel benchmark ---------------------------------------------

struct BenchRow {
    std::string variant;  // naive | windowed
    int n = 0, d = 0, delta = 0;
    double wall_ms = 0.0;
    uint64_t triple_ops = 0;
    uint64_t aux_elems = 0;
};

std::vector<BenchRow> bench_relations(const std::vector<int>& ns,
                                      const std::vector<int>& deltas, int d,
                                      uint64_t seed = 7);
void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys);
/// Coefficient of determination of the affine least-squares fit y ~ a x + b.
double linear_r2(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace ckd
