#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ckd/matrix.hpp"

namespace ckd {

struct ModelConfig {
    int num_layers = 0;   // L
    int hidden_dim = 0;   // d_r
    int num_heads = 0;    // h, hidden_dim % num_heads == 0
    int ffn_dim = 0;
    int vocab_size = 0;
    int embed_dim = 0;    // d_e, equal to hidden_dim here
    int max_seq_len = 0;
    int num_classes = 0;
    double dropout = 0.0; // applied to sub-layer outputs in train mode only

    int head_dim() const { return hidden_dim / num_heads; }
    void validate() const;

    /// (a/b)-style preset: a layers, b hidden, heads = b/64, ffn = 4b.
    static ModelConfig preset(int layers, int hidden, int vocab = 1024,
                              int max_seq_len = 128, int classes = 2);
};

struct TokenSequence {
    std::vector<int> ids;
    std::vector<uint8_t> mask;  // 1 = real token, 0 = padding

    int length() const { return static_cast<int>(ids.size()); }
    int real_count() const;
    void validate(const ModelConfig& cfg) const;
};

struct LayerParams {
    Mat wq, bq, wk, bk, wv, bv;  // packed projections, hidden x hidden / hidden x 1
    Mat wo, bo;
    Mat ln1_g, ln1_b;
    Mat w1, b1, w2, b2;          // FFN
    Mat ln2_g, ln2_b;
};

struct ParamSet {
    Mat tok_embed;  // embed_dim x vocab
    Mat pos_embed;  // embed_dim x max_seq_len
    std::vector<LayerParams> layers;
    Mat cls_w, cls_b;  // classifier head on position 0

    static ParamSet init(const ModelConfig& cfg, Rng& rng, double stddev = 0.02);
    static ParamSet zeros_like(const ParamSet& p);
};

/// Fixed-order traversal of every parameter tensor; the one ordering used by
/// the optimizer, checkpoints and finite differencing.
template <class PS, class F>
void for_each_tensor(PS& p, F&& f) {
    f("tok_embed", p.tok_embed);
    f("pos_embed", p.pos_embed);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        auto& lp = p.layers[l];
        f(pre + "wq", lp.wq); f(pre + "bq", lp.bq);
        f(pre + "wk", lp.wk); f(pre + "bk", lp.bk);
        f(pre + "wv", lp.wv); f(pre + "bv", lp.bv);
        f(pre + "wo", lp.wo); f(pre + "bo", lp.bo);
        f(pre + "ln1_g", lp.ln1_g); f(pre + "ln1_b", lp.ln1_b);
        f(pre + "w1", lp.w1); f(pre + "b1", lp.b1);
        f(pre + "w2", lp.w2); f(pre + "b2", lp.b2);
        f(pre + "ln2_g", lp.ln2_g); f(pre + "ln2_b", lp.ln2_b);
    }
    f("cls_w", p.cls_w);
    f("cls_b", p.cls_b);
}

/// Active sub-network: which layers run, and how many leading heads and FFN
/// neurons each active layer keeps. The full network is the default.
struct Structure {
    std::vector<int> layer_ids;  // ascending indices into ParamSet::layers
    int heads = 0;
    int ffn = 0;

    int depth() const { return static_cast<int>(layer_ids.size()); }
    static Structure full(const ModelConfig& cfg);
    void validate(const ModelConfig& cfg) const;
};

/// Everything a distillation objective can read from one forward pass.
/// reps[0] is the embedding output; reps[l] the output of the l-th active
/// layer, taken post-block (after the FFN residual and its layer norm; the
/// pre-norm alternative is not exposed). attn[l][h] columns are per-query
/// attention distributions.
struct LayerStates {
    Mat embeddings;
    std::vector<Mat> reps;
    std::vector<std::vector<Mat>> attn;
    std::vector<Mat> values;  // packed active-head value matrices per layer
    Mat logits;               // num_classes x 1
};

struct LnCache {
    std::vector<double> mean, inv_std;
    Mat xhat;
};

struct LayerCache {
    Mat q, k, v;        // packed active heads
    Mat head_concat;    // concatenated head outputs
    Mat mha_out;        // after output projection, before dropout
    Mat drop1, drop2;   // dropout masks (empty when dropout is off)
    Mat s1;             // residual sum before first layer norm
    LnCache ln1;
    Mat x1;             // after first layer norm
    Mat ffn_pre;        // W1 x + b1
    Mat gelu_out;
    Mat ffn_out;        // after dropout applied separately
    Mat s2;
    LnCache ln2;
};

struct ForwardCache {
    ModelConfig cfg;
    Structure structure;
    TokenSequence tokens;
    LayerStates states;
    std::vector<LayerCache> layers;
};

/// Upstream gradients attached to a forward pass; any subset may be filled.
struct StateGrad {
    Mat d_logits;
    std::vector<Mat> d_reps;
    std::vector<std::vector<Mat>> d_attn;
    std::vector<Mat> d_values;

    static StateGrad zeros_like(const LayerStates& s);
    void accumulate(const StateGrad& o, double scale = 1.0);
};

/// Per-head / per-FFN-neuron first-order saliency terms collected during one
/// backward call: sum over positions of activation * gradient.
struct Saliency {
    std::vector<std::vector<double>> head;
    std::vector<std::vector<double>> neuron;
};

Mat embed(const TokenSequence& tokens, const ParamSet& params, const ModelConfig& cfg);

/// One attention head: all projections are the per-head slices (head_dim rows).
/// Returns the head output (head_dim x n) and the attention map (n x n).
std::pair<Mat, Mat> attention_head(const Mat& r_prev, const Mat& wq, const Mat& bq,
                                   const Mat& wk, const Mat& bk, const Mat& wv,
                                   const Mat& bv, const std::vector<uint8_t>& mask);

ForwardCache encoder_forward(const TokenSequence& tokens, const ParamSet& params,
                             const ModelConfig& cfg);
ForwardCache encoder_forward(const TokenSequence& tokens, const ParamSet& params,
                             const ModelConfig& cfg, const Structure& structure,
                             Rng* dropout_rng = nullptr);

/// Reverse pass over a recorded forward. Gradients may be attached to the
/// logits, any representation matrix, any attention map and any value matrix
/// simultaneously. Returns parameter gradients shaped like the ParamSet
/// (inactive slices stay zero).
ParamSet backward(const ParamSet& params, const ForwardCache& cache,
                  const StateGrad& seeds, Saliency* saliency = nullptr);

double gelu(double x);
double gelu_grad(double x);

// ---- checkpoint container ----------------------------------------------

struct Checkpoint {
    ModelConfig cfg;
    ParamSet params;
    std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParamSet& params,
                     const std::map<std::string, std::string>& meta = {});
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ckd
