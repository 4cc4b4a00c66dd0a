#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ckd/distill.hpp"
#include "ckd/model.hpp"

namespace ckd {

enum class ObjectiveKind {
    distilbert_cos,
    pkd_patient,
    tinybert,
    minilm,
    logit_only,
    ckd,
};

std::string objective_name(ObjectiveKind k);
ObjectiveKind parse_objective(const std::string& name);

/// An architectural incompatibility between a distillation objective and a
/// (teacher, student) pair: "Embedding size" or "Attention head".
struct Violation {
    std::string constraint;
    std::string detail;
};

/// Reports every constraint the pair violates for the given objective.
/// The relation-based objective and plain logit matching never violate any.
std::vector<Violation> check_compatibility(const ModelConfig& teacher,
                                           const ModelConfig& student,
                                           ObjectiveKind objective);

struct ConstraintViolationError : std::runtime_error {
    std::vector<Violation> violations;
    explicit ConstraintViolationError(std::vector<Violation> v);
};

struct BaselineLossResult {
    double value = 0.0;
    StateGrad grad;   // w.r.t. the student states
    Mat d_proj;       // w.r.t. the rep projection, where one is used
};

/// Per-token direction alignment, 1 - cos so a perfect match scores 0.
/// Requires equal hidden sizes.
BaselineLossResult distilbert_cos_loss(const LayerStates& student, const LayerStates& teacher,
                                       const LayerAlignment& alignment,
                                       const std::vector<uint8_t>& real_mask);

/// Mean-square loss between l2-normalized representation columns.
/// Requires equal hidden sizes.
BaselineLossResult pkd_patient_loss(const LayerStates& student, const LayerStates& teacher,
                                    const LayerAlignment& alignment,
                                    const std::vector<uint8_t>& real_mask);

/// Projected hidden-state MSE + per-head attention-map MSE + soft logit term.
/// proj maps student hidden vectors into the teacher space (d_t x d_s) and is
/// trained jointly; its gradient is returned in d_proj. Requires equal head
/// counts.
BaselineLossResult tinybert_loss(const LayerStates& student, const LayerStates& teacher,
                                 const LayerAlignment& alignment,
                                 const std::vector<uint8_t>& real_mask, const Mat& proj);

/// Identity-padded projection initializer for tinybert_loss.
Mat make_rep_projection(int teacher_dim, int student_dim, Rng& rng);

/// Last-layer self-attention distillation: per-head KL between attention maps
/// plus KL between column-softmaxed value-value relation matrices. Requires
/// equal head counts.
BaselineLossResult minilm_loss(const LayerStates& student, const LayerStates& teacher,
                               const std::vector<uint8_t>& real_mask);

}  // namespace ckd
