#include "ckd/model.hpp"

#include <cmath>
#include <stdexcept>

namespace ckd {

namespace {
constexpr double kLnEps = 1e-12;
}

void ModelConfig::validate() const {
    if (num_layers < 1) throw std::invalid_argument("num_layers must be >= 1");
    if (hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
    if (num_heads < 1 || hidden_dim % num_heads != 0)
        throw std::invalid_argument("hidden_dim must be divisible by num_heads");
    if (ffn_dim < 1) throw std::invalid_argument("ffn_dim must be >= 1");
    if (vocab_size < 1) throw std::invalid_argument("vocab_size must be >= 1");
    if (embed_dim != hidden_dim)
        throw std::invalid_argument("embed_dim must equal hidden_dim");
    if (max_seq_len < 1) throw std::invalid_argument("max_seq_len must be >= 1");
    if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::invalid_argument("dropout must be in [0, 1)");
}

ModelConfig ModelConfig::preset(int layers, int hidden, int vocab, int max_seq_len,
                                int classes) {
    if (hidden % 64 != 0)
        throw std::invalid_argument("preset hidden size must be a multiple of 64");
    ModelConfig cfg;
    cfg.num_layers = layers;
    cfg.hidden_dim = hidden;
    cfg.num_heads = hidden / 64;
    cfg.ffn_dim = 4 * hidden;
    cfg.vocab_size = vocab;
    cfg.embed_dim = hidden;
    cfg.max_seq_len = max_seq_len;
    cfg.num_classes = classes;
    return cfg;
}

int TokenSequence::real_count() const {
    int c = 0;
    for (uint8_t m : mask) c += (m != 0);
    return c;
}

void TokenSequence::validate(const ModelConfig& cfg) const {
    if (ids.empty() || ids.size() != mask.size())
        throw std::invalid_argument("token ids and mask must be non-empty and equal length");
    if (length() > cfg.max_seq_len)
        throw std::invalid_argument("sequence longer than max_seq_len");
    for (int id : ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw std::invalid_argument("token id out of vocabulary range");
    if (real_count() == 0)
        throw std::invalid_argument("sequence must contain at least one real token");
}

ParamSet ParamSet::init(const ModelConfig& cfg, Rng& rng, double stddev) {
    cfg.validate();
    ParamSet p;
    const int d = cfg.hidden_dim;
    p.tok_embed = random_normal(cfg.embed_dim, cfg.vocab_size, stddev, rng);
    p.pos_embed = random_normal(cfg.embed_dim, cfg.max_seq_len, stddev, rng);
    p.layers.resize(cfg.num_layers);
    for (auto& lp : p.layers) {
        lp.wq = random_normal(d, d, stddev, rng); lp.bq = Mat(d, 1);
        lp.wk = random_normal(d, d, stddev, rng); lp.bk = Mat(d, 1);
        lp.wv = random_normal(d, d, stddev, rng); lp.bv = Mat(d, 1);
        lp.wo = random_normal(d, d, stddev, rng); lp.bo = Mat(d, 1);
        lp.ln1_g = Mat(d, 1); for (double& v : lp.ln1_g.a) v = 1.0;
        lp.ln1_b = Mat(d, 1);
        lp.w1 = random_normal(cfg.ffn_dim, d, stddev, rng); lp.b1 = Mat(cfg.ffn_dim, 1);
        lp.w2 = random_normal(d, cfg.ffn_dim, stddev, rng); lp.b2 = Mat(d, 1);
        lp.ln2_g = Mat(d, 1); for (double& v : lp.ln2_g.a) v = 1.0;
        lp.ln2_b = Mat(d, 1);
    }
    p.cls_w = random_normal(cfg.num_classes, d, stddev, rng);
    p.cls_b = Mat(cfg.num_classes, 1);
    return p;
}

ParamSet ParamSet::zeros_like(const ParamSet& p) {
    ParamSet z = p;
    for_each_tensor(z, [](const std::string&, Mat& m) { m.zero(); });
    return z;
}

Structure Structure::full(const ModelConfig& cfg) {
    Structure s;
    s.layer_ids.resize(cfg.num_layers);
    for (int i = 0; i < cfg.num_layers; ++i) s.layer_ids[i] = i;
    s.heads = cfg.num_heads;
    s.ffn = cfg.ffn_dim;
    return s;
}

void Structure::validate(const ModelConfig& cfg) const {
    if (layer_ids.empty()) throw std::invalid_argument("structure retains no layers");
    if (heads < 1 || heads > cfg.num_heads)
        throw std::invalid_argument("structure head count out of range");
    if (ffn < 1 || ffn > cfg.ffn_dim)
        throw std::invalid_argument("structure ffn width out of range");
    int prev = -1;
    for (int id : layer_ids) {
        if (id <= prev || id >= cfg.num_layers)
            throw std::invalid_argument("structure layer ids must be ascending and valid");
        prev = id;
    }
}

StateGrad StateGrad::zeros_like(const LayerStates& s) {
    StateGrad g;
    g.d_logits = Mat(s.logits.rows, s.logits.cols);
    g.d_reps.reserve(s.reps.size());
    for (const Mat& r : s.reps) g.d_reps.emplace_back(r.rows, r.cols);
    g.d_attn.resize(s.attn.size());
    for (size_t l = 0; l < s.attn.size(); ++l) {
        g.d_attn[l].reserve(s.attn[l].size());
        for (const Mat& a : s.attn[l]) g.d_attn[l].emplace_back(a.rows, a.cols);
    }
    g.d_values.reserve(s.values.size());
    for (const Mat& v : s.values) g.d_values.emplace_back(v.rows, v.cols);
    return g;
}

void StateGrad::accumulate(const StateGrad& o, double scale) {
    if (!o.d_logits.empty()) add_scaled(d_logits, o.d_logits, scale);
    for (size_t i = 0; i < o.d_reps.size(); ++i)
        if (!o.d_reps[i].empty()) add_scaled(d_reps[i], o.d_reps[i], scale);
    for (size_t l = 0; l < o.d_attn.size(); ++l)
        for (size_t h = 0; h < o.d_attn[l].size(); ++h)
            if (!o.d_attn[l][h].empty()) add_scaled(d_attn[l][h], o.d_attn[l][h], scale);
    for (size_t l = 0; l < o.d_values.size(); ++l)
        if (!o.d_values[l].empty()) add_scaled(d_values[l], o.d_values[l], scale);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

Mat embed(const TokenSequence& tokens, const ParamSet& params, const ModelConfig& cfg) {
    tokens.validate(cfg);
    const int n = tokens.length();
    Mat e(cfg.embed_dim, n);
    for (int i = 0; i < n; ++i) {
        const double* tok = params.tok_embed.col(tokens.ids[static_cast<size_t>(i)]);
        const double* pos = params.pos_embed.col(i);
        double* ec = e.col(i);
        for (int r = 0; r < cfg.embed_dim; ++r) ec[r] = tok[r] + pos[r];
    }
    return e;
}

namespace {

/// Column-wise masked softmax attention core. q, k, v are one head's
/// projections (head_dim x n). Padded key positions get zero weight.
void attend(const Mat& q, const Mat& k, const Mat& v, const std::vector<uint8_t>& mask,
            Mat& attn_out, Mat& head_out) {
    const int n = q.cols;
    const int dh = q.rows;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    attn_out = Mat(n, n);
    for (int i = 0; i < n; ++i) {
        double* ac = attn_out.col(i);
        double mx = -1e300;
        for (int j = 0; j < n; ++j) {
            if (!mask[static_cast<size_t>(j)]) continue;
            ac[j] = dot(k.col(j), q.col(i), dh) * scale;
            mx = std::max(mx, ac[j]);
        }
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            if (!mask[static_cast<size_t>(j)]) { ac[j] = 0.0; continue; }
            ac[j] = std::exp(ac[j] - mx);
            z += ac[j];
        }
        for (int j = 0; j < n; ++j) ac[j] /= z;
    }
    head_out = matmul(v, attn_out);
}

void layer_norm_forward(const Mat& x, const Mat& g, const Mat& b, Mat& y, LnCache& c) {
    const int d = x.rows, n = x.cols;
    y = Mat(d, n);
    c.mean.assign(static_cast<size_t>(n), 0.0);
    c.inv_std.assign(static_cast<size_t>(n), 0.0);
    c.xhat = Mat(d, n);
    for (int i = 0; i < n; ++i) {
        const double* xc = x.col(i);
        double mu = 0.0;
        for (int r = 0; r < d; ++r) mu += xc[r];
        mu /= d;
        double var = 0.0;
        for (int r = 0; r < d; ++r) {
            const double dv = xc[r] - mu;
            var += dv * dv;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + kLnEps);
        c.mean[static_cast<size_t>(i)] = mu;
        c.inv_std[static_cast<size_t>(i)] = is;
        double* hc = c.xhat.col(i);
        double* yc = y.col(i);
        for (int r = 0; r < d; ++r) {
            hc[r] = (xc[r] - mu) * is;
            yc[r] = g.a[static_cast<size_t>(r)] * hc[r] + b.a[static_cast<size_t>(r)];
        }
    }
}

/// dx given dy, plus accumulation into dg/db.
Mat layer_norm_backward(const Mat& dy, const LnCache& c, const Mat& g, Mat& dg, Mat& db) {
    const int d = dy.rows, n = dy.cols;
    Mat dx(d, n);
    for (int i = 0; i < n; ++i) {
        const double* dyc = dy.col(i);
        const double* hc = c.xhat.col(i);
        const double is = c.inv_std[static_cast<size_t>(i)];
        double sum_dxh = 0.0, sum_dxh_h = 0.0;
        for (int r = 0; r < d; ++r) {
            dg.a[static_cast<size_t>(r)] += dyc[r] * hc[r];
            db.a[static_cast<size_t>(r)] += dyc[r];
            const double dxh = dyc[r] * g.a[static_cast<size_t>(r)];
            sum_dxh += dxh;
            sum_dxh_h += dxh * hc[r];
        }
        double* dxc = dx.col(i);
        for (int r = 0; r < d; ++r) {
            const double dxh = dyc[r] * g.a[static_cast<size_t>(r)];
            dxc[r] = is * (dxh - sum_dxh / d - hc[r] * sum_dxh_h / d);
        }
    }
    return dx;
}

Mat make_dropout_mask(int rows, int cols, double rate, Rng& rng) {
    Mat m(rows, cols);
    const double keep = 1.0 - rate;
    for (double& v : m.a) v = (rng.uniform() < keep) ? 1.0 / keep : 0.0;
    return m;
}

void apply_mask_inplace(Mat& x, const Mat& m) {
    for (size_t i = 0; i < x.a.size(); ++i) x.a[i] *= m.a[i];
}

}  // namespace

std::pair<Mat, Mat> attention_head(const Mat& r_prev, const Mat& wq, const Mat& bq,
                                   const Mat& wk, const Mat& bk, const Mat& wv,
                                   const Mat& bv, const std::vector<uint8_t>& mask) {
    if (wq.cols != r_prev.rows)
        throw std::logic_error("attention_head: projection width does not match input rows");
    Mat q = matmul(wq, r_prev); add_col_bias(q, bq);
    Mat k = matmul(wk, r_prev); add_col_bias(k, bk);
    Mat v = matmul(wv, r_prev); add_col_bias(v, bv);
    Mat attn, out;
    attend(q, k, v, mask, attn, out);
    return {out, attn};
}

ForwardCache encoder_forward(const TokenSequence& tokens, const ParamSet& params,
                             const ModelConfig& cfg) {
    return encoder_forward(tokens, params, cfg, Structure::full(cfg), nullptr);
}

ForwardCache encoder_forward(const TokenSequence& tokens, const ParamSet& params,
                             const ModelConfig& cfg, const Structure& structure,
                             Rng* dropout_rng) {
    cfg.validate();
    structure.validate(cfg);
    tokens.validate(cfg);

    const int n = tokens.length();
    const int dh = cfg.head_dim();
    const int ha = structure.heads;
    const int da = ha * dh;  // active packed width
    const bool drop = cfg.dropout > 0.0 && dropout_rng != nullptr;

    ForwardCache cache;
    cache.cfg = cfg;
    cache.structure = structure;
    cache.tokens = tokens;
    cache.layers.resize(structure.layer_ids.size());

    LayerStates& st = cache.states;
    st.embeddings = embed(tokens, params, cfg);
    st.reps.push_back(st.embeddings);
    st.attn.resize(structure.layer_ids.size());
    st.values.reserve(structure.layer_ids.size());

    Mat r = st.embeddings;
    for (size_t li = 0; li < structure.layer_ids.size(); ++li) {
        const LayerParams& lp = params.layers[static_cast<size_t>(structure.layer_ids[li])];
        LayerCache& lc = cache.layers[li];

        // Packed projections restricted to the first `ha` heads.
        lc.q = Mat(da, n); lc.k = Mat(da, n); lc.v = Mat(da, n);
        for (int i = 0; i < n; ++i) {
            const double* rc = r.col(i);
            double* qc = lc.q.col(i);
            double* kc = lc.k.col(i);
            double* vc = lc.v.col(i);
            for (int row = 0; row < da; ++row) {
                double sq = lp.bq.a[static_cast<size_t>(row)];
                double sk = lp.bk.a[static_cast<size_t>(row)];
                double sv = lp.bv.a[static_cast<size_t>(row)];
                for (int c = 0; c < cfg.hidden_dim; ++c) {
                    sq += lp.wq(row, c) * rc[c];
                    sk += lp.wk(row, c) * rc[c];
                    sv += lp.wv(row, c) * rc[c];
                }
                qc[row] = sq; kc[row] = sk; vc[row] = sv;
            }
        }

        lc.head_concat = Mat(da, n);
        st.attn[li].resize(static_cast<size_t>(ha));
        for (int h = 0; h < ha; ++h) {
            Mat qh(dh, n), kh(dh, n), vh(dh, n);
            for (int i = 0; i < n; ++i)
                for (int rr = 0; rr < dh; ++rr) {
                    qh(rr, i) = lc.q(h * dh + rr, i);
                    kh(rr, i) = lc.k(h * dh + rr, i);
                    vh(rr, i) = lc.v(h * dh + rr, i);
                }
            Mat attn, out;
            attend(qh, kh, vh, tokens.mask, attn, out);
            st.attn[li][static_cast<size_t>(h)] = std::move(attn);
            for (int i = 0; i < n; ++i)
                for (int rr = 0; rr < dh; ++rr) lc.head_concat(h * dh + rr, i) = out(rr, i);
        }
        st.values.push_back(lc.v);

        // Output projection uses only the active columns of wo.
        lc.mha_out = Mat(cfg.hidden_dim, n);
        for (int i = 0; i < n; ++i) {
            const double* oc = lc.head_concat.col(i);
            double* mc = lc.mha_out.col(i);
            for (int row = 0; row < cfg.hidden_dim; ++row) {
                double s = lp.bo.a[static_cast<size_t>(row)];
                for (int c = 0; c < da; ++c) s += lp.wo(row, c) * oc[c];
                mc[row] = s;
            }
        }

        Mat m = lc.mha_out;
        if (drop) {
            lc.drop1 = make_dropout_mask(m.rows, m.cols, cfg.dropout, *dropout_rng);
            apply_mask_inplace(m, lc.drop1);
        }
        lc.s1 = r;
        lc.s1 += m;
        layer_norm_forward(lc.s1, lp.ln1_g, lp.ln1_b, lc.x1, lc.ln1);

        // FFN restricted to the first `ffn` neurons.
        const int fa = structure.ffn;
        lc.ffn_pre = Mat(fa, n);
        for (int i = 0; i < n; ++i) {
            const double* xc = lc.x1.col(i);
            double* pc = lc.ffn_pre.col(i);
            for (int row = 0; row < fa; ++row) {
                double s = lp.b1.a[static_cast<size_t>(row)];
                for (int c = 0; c < cfg.hidden_dim; ++c) s += lp.w1(row, c) * xc[c];
                pc[row] = s;
            }
        }
        lc.gelu_out = Mat(fa, n);
        for (size_t i = 0; i < lc.ffn_pre.a.size(); ++i)
            lc.gelu_out.a[i] = gelu(lc.ffn_pre.a[i]);
        lc.ffn_out = Mat(cfg.hidden_dim, n);
        for (int i = 0; i < n; ++i) {
            const double* gc = lc.gelu_out.col(i);
            double* fc = lc.ffn_out.col(i);
            for (int row = 0; row < cfg.hidden_dim; ++row) {
                double s = lp.b2.a[static_cast<size_t>(row)];
                for (int c = 0; c < fa; ++c) s += lp.w2(row, c) * gc[c];
                fc[row] = s;
            }
        }
        Mat f = lc.ffn_out;
        if (drop) {
            lc.drop2 = make_dropout_mask(f.rows, f.cols, cfg.dropout, *dropout_rng);
            apply_mask_inplace(f, lc.drop2);
        }
        lc.s2 = lc.x1;
        lc.s2 += f;
        Mat out;
        layer_norm_forward(lc.s2, lp.ln2_g, lp.ln2_b, out, lc.ln2);

        st.reps.push_back(out);
        r = std::move(out);
    }

    // Sequence classifier reads position 0.
    st.logits = Mat(cfg.num_classes, 1);
    const double* pool = st.reps.back().col(0);
    for (int c = 0; c < cfg.num_classes; ++c) {
        double s = params.cls_b.a[static_cast<size_t>(c)];
        for (int r2 = 0; r2 < cfg.hidden_dim; ++r2) s += params.cls_w(c, r2) * pool[r2];
        st.logits.a[static_cast<size_t>(c)] = s;
    }
    return cache;
}

ParamSet backward(const ParamSet& params, const ForwardCache& cache,
                  const StateGrad& seeds, Saliency* saliency) {
    const ModelConfig& cfg = cache.cfg;
    const Structure& structure = cache.structure;
    const LayerStates& st = cache.states;
    const int n = cache.tokens.length();
    const int dh = cfg.head_dim();
    const int ha = structure.heads;
    const int da = ha * dh;
    const int la = structure.depth();

    auto bad = [](const char* what) { return std::logic_error(std::string("backward: ") + what); };
    if (!seeds.d_reps.empty() && static_cast<int>(seeds.d_reps.size()) != la + 1)
        throw bad("d_reps count does not match forward pass");
    if (!seeds.d_attn.empty() && static_cast<int>(seeds.d_attn.size()) != la)
        throw bad("d_attn count does not match forward pass");
    if (!seeds.d_values.empty() && static_cast<int>(seeds.d_values.size()) != la)
        throw bad("d_values count does not match forward pass");

    ParamSet grads = ParamSet::zeros_like(params);
    if (saliency) {
        saliency->head.assign(static_cast<size_t>(la), std::vector<double>(static_cast<size_t>(ha), 0.0));
        saliency->neuron.assign(static_cast<size_t>(la), std::vector<double>(static_cast<size_t>(structure.ffn), 0.0));
    }

    // Classifier head.
    Mat d_r(cfg.hidden_dim, n);
    if (!seeds.d_reps.empty() && !seeds.d_reps.back().empty()) {
        if (!seeds.d_reps.back().same_shape(st.reps.back())) throw bad("d_reps shape mismatch");
        d_r += seeds.d_reps.back();
    }
    if (!seeds.d_logits.empty()) {
        if (seeds.d_logits.rows != cfg.num_classes) throw bad("d_logits shape mismatch");
        const double* pool = st.reps.back().col(0);
        double* dp = d_r.col(0);
        for (int c = 0; c < cfg.num_classes; ++c) {
            const double g = seeds.d_logits.a[static_cast<size_t>(c)];
            grads.cls_b.a[static_cast<size_t>(c)] += g;
            for (int r = 0; r < cfg.hidden_dim; ++r) {
                grads.cls_w(c, r) += g * pool[r];
                dp[r] += g * params.cls_w(c, r);
            }
        }
    }

    const bool drop = cfg.dropout > 0.0 && !cache.layers.empty() && !cache.layers[0].drop1.empty();

    for (int li = la - 1; li >= 0; --li) {
        const LayerCache& lc = cache.layers[static_cast<size_t>(li)];
        const LayerParams& lp = params.layers[static_cast<size_t>(structure.layer_ids[static_cast<size_t>(li)])];
        LayerParams& gp = grads.layers[static_cast<size_t>(structure.layer_ids[static_cast<size_t>(li)])];
        const int fa = structure.ffn;

        // R_out = LN2(s2)
        Mat d_s2 = layer_norm_backward(d_r, lc.ln2, lp.ln2_g, gp.ln2_g, gp.ln2_b);

        // s2 = x1 + dropout(ffn_out)
        Mat d_x1 = d_s2;
        Mat d_f = std::move(d_s2);
        if (drop) apply_mask_inplace(d_f, lc.drop2);

        // ffn_out = w2[:, :fa] * gelu_out + b2
        Mat d_g(fa, n);
        for (int i = 0; i < n; ++i) {
            const double* dfc = d_f.col(i);
            const double* gc = lc.gelu_out.col(i);
            double* dgc = d_g.col(i);
            for (int row = 0; row < cfg.hidden_dim; ++row) {
                const double g = dfc[row];
                gp.b2.a[static_cast<size_t>(row)] += g;
                for (int c = 0; c < fa; ++c) {
                    gp.w2(row, c) += g * gc[c];
                    dgc[c] += g * lp.w2(row, c);
                }
            }
        }
        if (saliency) {
            auto& ns = saliency->neuron[static_cast<size_t>(li)];
            for (int i = 0; i < n; ++i) {
                const double* gc = lc.gelu_out.col(i);
                const double* dgc = d_g.col(i);
                for (int c = 0; c < fa; ++c) ns[static_cast<size_t>(c)] += gc[c] * dgc[c];
            }
        }
        Mat d_pre(fa, n);
        for (size_t i = 0; i < d_pre.a.size(); ++i)
            d_pre.a[i] = d_g.a[i] * gelu_grad(lc.ffn_pre.a[i]);
        for (int i = 0; i < n; ++i) {
            const double* xc = lc.x1.col(i);
            const double* dpc = d_pre.col(i);
            double* dxc = d_x1.col(i);
            for (int row = 0; row < fa; ++row) {
                const double g = dpc[row];
                gp.b1.a[static_cast<size_t>(row)] += g;
                for (int c = 0; c < cfg.hidden_dim; ++c) {
                    gp.w1(row, c) += g * xc[c];
                    dxc[c] += g * lp.w1(row, c);
                }
            }
        }

        // x1 = LN1(s1)
        Mat d_s1 = layer_norm_backward(d_x1, lc.ln1, lp.ln1_g, gp.ln1_g, gp.ln1_b);

        // s1 = r_in + dropout(mha_out)
        Mat d_rin = d_s1;
        Mat d_m = std::move(d_s1);
        if (drop) apply_mask_inplace(d_m, lc.drop1);

        // mha_out = wo[:, :da] * head_concat + bo
        Mat d_o(da, n);
        for (int i = 0; i < n; ++i) {
            const double* dmc = d_m.col(i);
            const double* oc = lc.head_concat.col(i);
            double* doc = d_o.col(i);
            for (int row = 0; row < cfg.hidden_dim; ++row) {
                const double g = dmc[row];
                gp.bo.a[static_cast<size_t>(row)] += g;
                for (int c = 0; c < da; ++c) {
                    gp.wo(row, c) += g * oc[c];
                    doc[c] += g * lp.wo(row, c);
                }
            }
        }

        Mat d_q(da, n), d_k(da, n), d_v(da, n);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int h = 0; h < ha; ++h) {
            const Mat& attn = st.attn[static_cast<size_t>(li)][static_cast<size_t>(h)];
            // dO_h and per-head slices.
            Mat doh(dh, n), qh(dh, n), kh(dh, n), vh(dh, n);
            for (int i = 0; i < n; ++i)
                for (int rr = 0; rr < dh; ++rr) {
                    doh(rr, i) = d_o(h * dh + rr, i);
                    qh(rr, i) = lc.q(h * dh + rr, i);
                    kh(rr, i) = lc.k(h * dh + rr, i);
                    vh(rr, i) = lc.v(h * dh + rr, i);
                }
            if (saliency) {
                double s = 0.0;
                for (int i = 0; i < n; ++i) {
                    const double* ohc = lc.head_concat.col(i) + h * dh;
                    const double* dohc = doh.col(i);
                    for (int rr = 0; rr < dh; ++rr) s += ohc[rr] * dohc[rr];
                }
                saliency->head[static_cast<size_t>(li)][static_cast<size_t>(h)] += s;
            }

            Mat d_attn = matmul_tn(vh, doh);  // from O_h = V_h A
            if (!seeds.d_attn.empty() && !seeds.d_attn[static_cast<size_t>(li)].empty()) {
                const Mat& seed = seeds.d_attn[static_cast<size_t>(li)][static_cast<size_t>(h)];
                if (!seed.empty()) {
                    if (!seed.same_shape(attn)) throw bad("d_attn shape mismatch");
                    d_attn += seed;
                }
            }
            Mat d_vh = matmul_nt(doh, attn);

            // Column-wise softmax backward; padded rows carry zero weight.
            Mat d_s(n, n);
            for (int i = 0; i < n; ++i) {
                const double* ac = attn.col(i);
                const double* dac = d_attn.col(i);
                double s = 0.0;
                for (int j = 0; j < n; ++j) s += ac[j] * dac[j];
                double* dsc = d_s.col(i);
                for (int j = 0; j < n; ++j) dsc[j] = ac[j] * (dac[j] - s);
            }
            // S = scale * K^T Q
            Mat d_qh = matmul(kh, d_s); d_qh *= scale;
            Mat d_kh = matmul_nt(qh, d_s); d_kh *= scale;
            for (int i = 0; i < n; ++i)
                for (int rr = 0; rr < dh; ++rr) {
                    d_q(h * dh + rr, i) += d_qh(rr, i);
                    d_k(h * dh + rr, i) += d_kh(rr, i);
                    d_v(h * dh + rr, i) += d_vh(rr, i);
                }
        }
        if (!seeds.d_values.empty() && !seeds.d_values[static_cast<size_t>(li)].empty()) {
            const Mat& seed = seeds.d_values[static_cast<size_t>(li)];
            if (!seed.same_shape(d_v)) throw bad("d_values shape mismatch");
            d_v += seed;
        }

        // Projections back to the layer input.
        const Mat& r_in = st.reps[static_cast<size_t>(li)];
        for (int i = 0; i < n; ++i) {
            const double* rc = r_in.col(i);
            const double* dqc = d_q.col(i);
            const double* dkc = d_k.col(i);
            const double* dvc = d_v.col(i);
            double* drc = d_rin.col(i);
            for (int row = 0; row < da; ++row) {
                const double gq = dqc[row], gk = dkc[row], gv = dvc[row];
                gp.bq.a[static_cast<size_t>(row)] += gq;
                gp.bk.a[static_cast<size_t>(row)] += gk;
                gp.bv.a[static_cast<size_t>(row)] += gv;
                for (int c = 0; c < cfg.hidden_dim; ++c) {
                    gp.wq(row, c) += gq * rc[c];
                    gp.wk(row, c) += gk * rc[c];
                    gp.wv(row, c) += gv * rc[c];
                    drc[c] += gq * lp.wq(row, c) + gk * lp.wk(row, c) + gv * lp.wv(row, c);
                }
            }
        }

        d_r = std::move(d_rin);
        if (!seeds.d_reps.empty() && !seeds.d_reps[static_cast<size_t>(li)].empty()) {
            if (!seeds.d_reps[static_cast<size_t>(li)].same_shape(d_r)) throw bad("d_reps shape mismatch");
            d_r += seeds.d_reps[static_cast<size_t>(li)];
        }
    }

    // d_r is now the gradient at the embedding output.
    for (int i = 0; i < n; ++i) {
        const double* dc = d_r.col(i);
        double* tc = grads.tok_embed.col(cache.tokens.ids[static_cast<size_t>(i)]);
        double* pc = grads.pos_embed.col(i);
        for (int r = 0; r < cfg.embed_dim; ++r) {
            tc[r] += dc[r];
            pc[r] += dc[r];
        }
    }
    return grads;
}

}  // namespace ckd
