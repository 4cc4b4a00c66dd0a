#pragma once

#include <vector>

#include "ckd/train.hpp"

namespace ckd {

/// Width and depth multipliers selecting a sub-network. Width keeps the
/// leading round(m_w * heads) attention heads and round(m_w * ffn) FFN
/// neurons of every retained layer; depth keeps round(m_d * L) layers at a
/// uniform stride.
struct SubnetSpec {
    double m_w = 1.0;
    double m_d = 1.0;
};

int retained_heads(const ModelConfig& cfg, double m_w);
int retained_ffn(const ModelConfig& cfg, double m_w);
int retained_depth(const ModelConfig& cfg, double m_d);
Structure subnet_structure(const ModelConfig& cfg, const SubnetSpec& spec);

ForwardCache subnet_forward(const ParamSet& params, const ModelConfig& cfg,
                            const SubnetSpec& spec, const TokenSequence& tokens);

/// 1.0 at every parameter coordinate the sub-network touches, 0 elsewhere.
ParamSet active_param_mask(const ModelConfig& cfg, const SubnetSpec& spec);

struct ImportanceScores {
    std::vector<std::vector<double>> heads;    // [layer][head]
    std::vector<std::vector<double>> neurons;  // [layer][ffn neuron]
};

/// First-order saliency |sum(activation * gradient)| of each head output and
/// FFN activation under the task loss, accumulated over the dev batches.
ImportanceScores estimate_importance(const ModelConfig& cfg, const ParamSet& params,
                                     const std::vector<Example>& dev);

/// Permutes heads and FFN neurons into descending-importance order (with the
/// adjoining projections permuted alike), so prefix truncation keeps the most
/// important units. The full-network function is unchanged.
ParamSet rewire(const ModelConfig& cfg, const ParamSet& params,
                const ImportanceScores& scores);

/// Gradients (and per-term mean losses) of the width-adaptive objective
/// accumulated over every width in one step:
///   SCE(student logits, teacher logits) + lambda_ckd * (L_WR + L_LTR).
struct AdaptiveGrads {
    ParamSet grads;
    std::vector<double> losses;  // one entry per sub-network term
};

AdaptiveGrads adaptive_width_gradients(const ModelConfig& cfg, const ParamSet& teacher,
                                       const ParamSet& student,
                                       const std::vector<double>& widths,
                                       const DistillConfig& dcfg,
                                       const std::vector<const Example*>& batch);

AdaptiveGrads adaptive_full_gradients(const ModelConfig& cfg, const ParamSet& teacher_w,
                                      const ParamSet& student,
                                      const std::vector<double>& widths,
                                      const std::vector<double>& depths,
                                      const DistillConfig& dcfg,
                                      const std::vector<const Example*>& batch);

struct AdaptiveResult {
    ParamSet params;
    std::vector<double> probe_initial;  // mean probe loss per term before training
    std::vector<double> probe_final;
    RunRecord record;
};

/// Width-adaptive training: the fixed teacher is the full (rewired) network
/// and each step accumulates gradients over every width before a single
/// optimizer update. The trainable student starts as a copy of the teacher
/// unless an explicit initialization is supplied.
AdaptiveResult train_adaptive_width(const ModelConfig& cfg, const ParamSet& rewired,
                                    const std::vector<double>& widths, const Dataset& data,
                                    const DistillConfig& dcfg, const TrainConfig& tcfg,
                                    int steps, const ParamSet* student_init = nullptr);

/// Width+depth training against a fixed width-adaptive teacher; per step the
/// teacher runs once per width and the student once per (width, depth).
AdaptiveResult train_adaptive_full(const ModelConfig& cfg, const ParamSet& teacher_w,
                                   const std::vector<double>& widths,
                                   const std::vector<double>& depths, const Dataset& data,
                                   const DistillConfig& dcfg, const TrainConfig& tcfg,
                                   int steps, const ParamSet* student_init = nullptr);

}  // namespace ckd
