#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ckd/model.hpp"
#include "ckd/train.hpp"

using namespace ckd;

namespace {

ModelConfig tiny_cfg(int layers = 1, int hidden = 8, int heads = 2, int ffn = 12,
                     int vocab = 9, int max_len = 8, int classes = 3) {
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

TokenSequence seq(std::vector<int> ids, std::vector<uint8_t> mask = {}) {
    TokenSequence t;
    t.ids = std::move(ids);
    t.mask = mask.empty() ? std::vector<uint8_t>(t.ids.size(), 1) : std::move(mask);
    return t;
}

}  // namespace

TEST_CASE("embed: zero table gives zero matrix") {
    ModelConfig cfg = tiny_cfg();
    Rng rng(1);
    ParamSet p = ParamSet::init(cfg, rng, 0.0);
    Mat e = embed(seq({1, 2, 3}), p, cfg);
    for (double v : e.a) CHECK(v == 0.0);
}

TEST_CASE("embed: single token gives single column") {
    ModelConfig cfg = tiny_cfg();
    Rng rng(2);
    ParamSet p = ParamSet::init(cfg, rng);
    Mat e = embed(seq({4}), p, cfg);
    CHECK(e.rows == cfg.embed_dim);
    CHECK(e.cols == 1);
}

TEST_CASE("embed: matches table lookup plus positional row") {
    ModelConfig cfg = tiny_cfg(1, 4, 2, 8, 8, 4, 2);
    Rng rng(7);
    ParamSet p = ParamSet::init(cfg, rng);
    Mat e = embed(seq({3, 1}), p, cfg);
    for (int r = 0; r < 4; ++r) {
        CHECK(e(r, 0) == doctest::Approx(p.tok_embed(r, 3) + p.pos_embed(r, 0)).epsilon(1e-15));
        CHECK(e(r, 1) == doctest::Approx(p.tok_embed(r, 1) + p.pos_embed(r, 1)).epsilon(1e-15));
    }
}

TEST_CASE("embed: out-of-range token id is an input error") {
    ModelConfig cfg = tiny_cfg();
    Rng rng(3);
    ParamSet p = ParamSet::init(cfg, rng);
    CHECK_THROWS_AS(embed(seq({99}), p, cfg), std::invalid_argument);
}

TEST_CASE("attention_head: identical keys make uniform attention over unmasked") {
    const int d = 6, dh = 3, n = 5;
    Rng rng(4);
    Mat wq = random_normal(dh, d, 0.3, rng), bq(dh, 1);
    Mat wk(dh, d), bk(dh, 1);  // zero keys: all scores equal
    Mat wv = random_normal(dh, d, 0.3, rng), bv(dh, 1);
    Mat r = random_normal(d, n, 1.0, rng);
    std::vector<uint8_t> mask = {1, 1, 1, 1, 0};
    auto [out, attn] = attention_head(r, wq, bq, wk, bk, wv, bv, mask);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 4; ++j) CHECK(attn(j, i) == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(attn(4, i) == 0.0);
    }
    (void)out;
}

TEST_CASE("attention_head: two tokens match a by-hand softmax") {
    // d_r = 2, one head with head_dim 2, hand-chosen projections.
    Mat wq(2, 2), wk(2, 2), wv(2, 2), bq(2, 1), bk(2, 1), bv(2, 1);
    wq(0, 0) = 1.0; wq(1, 1) = 1.0;
    wk(0, 0) = 1.0; wk(1, 1) = 1.0;
    wv(0, 0) = 2.0; wv(1, 1) = -1.0;
    Mat r(2, 2);
    r(0, 0) = 1.0; r(1, 0) = 0.0;
    r(0, 1) = 0.0; r(1, 1) = 1.0;
    auto [out, attn] = attention_head(r, wq, bq, wk, bk, wv, bv, {1, 1});
    // query 0 = (1,0): scores over keys are (1, 0)/sqrt(2)
    const double s = 1.0 / std::sqrt(2.0);
    const double a00 = std::exp(s) / (std::exp(s) + 1.0);
    CHECK(attn(0, 0) == doctest::Approx(a00).epsilon(1e-12));
    CHECK(attn(1, 0) == doctest::Approx(1.0 - a00).epsilon(1e-12));
    // output col 0 = V * a with v0 = (2,0), v1 = (0,-1)
    CHECK(out(0, 0) == doctest::Approx(2.0 * a00).epsilon(1e-12));
    CHECK(out(1, 0) == doctest::Approx(-(1.0 - a00)).epsilon(1e-12));
}

TEST_CASE("attention_head: single unmasked position gets one-hot attention") {
    const int d = 4, dh = 2, n = 4;
    Rng rng(5);
    Mat wq = random_normal(dh, d, 0.5, rng), bq(dh, 1);
    Mat wk = random_normal(dh, d, 0.5, rng), bk(dh, 1);
    Mat wv = random_normal(dh, d, 0.5, rng), bv(dh, 1);
    Mat r = random_normal(d, n, 1.0, rng);
    std::vector<uint8_t> mask = {0, 0, 1, 0};
    auto [out, attn] = attention_head(r, wq, bq, wk, bk, wv, bv, mask);
    for (int i = 0; i < n; ++i) {
        CHECK(attn(2, i) == doctest::Approx(1.0));
        CHECK(attn(0, i) == 0.0);
        CHECK(attn(3, i) == 0.0);
    }
    (void)out;
}

TEST_CASE("encoder_forward: single layer composes attention heads and FFN") {
    ModelConfig cfg = tiny_cfg(1, 4, 2, 6, 8, 6, 2);
    Rng rng(11);
    ParamSet p = ParamSet::init(cfg, rng);
    TokenSequence t = seq({1, 5, 2});
    ForwardCache fc = encoder_forward(t, p, cfg);

    // Rebuild layer 1 by hand from the public pieces.
    const Mat& e = fc.states.embeddings;
    const int dh = cfg.head_dim();
    Mat concat(cfg.hidden_dim, 3);
    for (int h = 0; h < cfg.num_heads; ++h) {
        Mat wq(dh, 4), wk(dh, 4), wv(dh, 4), bq(dh, 1), bk(dh, 1), bv(dh, 1);
        for (int r = 0; r < dh; ++r) {
            for (int c = 0; c < 4; ++c) {
                wq(r, c) = p.layers[0].wq(h * dh + r, c);
                wk(r, c) = p.layers[0].wk(h * dh + r, c);
                wv(r, c) = p.layers[0].wv(h * dh + r, c);
            }
            bq.a[r] = p.layers[0].bq.a[h * dh + r];
            bk.a[r] = p.layers[0].bk.a[h * dh + r];
            bv.a[r] = p.layers[0].bv.a[h * dh + r];
        }
        auto [out, attn] = attention_head(e, wq, bq, wk, bk, wv, bv, t.mask);
        CHECK(max_abs_diff(attn, fc.states.attn[0][h]) < 1e-12);
        for (int i = 0; i < 3; ++i)
            for (int r = 0; r < dh; ++r) concat(h * dh + r, i) = out(r, i);
    }
    Mat m = matmul(p.layers[0].wo, concat);
    add_col_bias(m, p.layers[0].bo);
    m += e;
    auto ln = [&](const Mat& x, const Mat& g, const Mat& b) {
        Mat y(x.rows, x.cols);
        for (int i = 0; i < x.cols; ++i) {
            double mu = 0, var = 0;
            for (int r = 0; r < x.rows; ++r) mu += x(r, i);
            mu /= x.rows;
            for (int r = 0; r < x.rows; ++r) var += (x(r, i) - mu) * (x(r, i) - mu);
            var /= x.rows;
            for (int r = 0; r < x.rows; ++r)
                y(r, i) = g.a[r] * (x(r, i) - mu) / std::sqrt(var + 1e-12) + b.a[r];
        }
        return y;
    };
    Mat x1 = ln(m, p.layers[0].ln1_g, p.layers[0].ln1_b);
    Mat pre = matmul(p.layers[0].w1, x1);
    add_col_bias(pre, p.layers[0].b1);
    Mat act(pre.rows, pre.cols);
    for (size_t i = 0; i < pre.a.size(); ++i) act.a[i] = gelu(pre.a[i]);
    Mat f = matmul(p.layers[0].w2, act);
    add_col_bias(f, p.layers[0].b2);
    f += x1;
    Mat expect = ln(f, p.layers[0].ln2_g, p.layers[0].ln2_b);
    CHECK(max_abs_diff(expect, fc.states.reps[1]) < 1e-10);
}

TEST_CASE("encoder_forward: deterministic") {
    ModelConfig cfg = tiny_cfg(2, 8, 2, 12, 9, 8, 3);
    Rng rng(13);
    ParamSet p = ParamSet::init(cfg, rng);
    TokenSequence t = seq({1, 2, 3, 4}, {1, 1, 1, 0});
    ForwardCache a = encoder_forward(t, p, cfg);
    ForwardCache b = encoder_forward(t, p, cfg);
    CHECK(a.states.logits.a == b.states.logits.a);
    for (size_t l = 0; l < a.states.reps.size(); ++l)
        CHECK(a.states.reps[l].a == b.states.reps[l].a);
}

TEST_CASE("encoder_forward: sequence longer than max_seq_len is an input error") {
    ModelConfig cfg = tiny_cfg(1, 8, 2, 12, 9, 3, 3);
    Rng rng(17);
    ParamSet p = ParamSet::init(cfg, rng);
    CHECK_THROWS_AS(encoder_forward(seq({1, 2, 3, 4}), p, cfg), std::invalid_argument);
}

TEST_CASE("encoder_forward: swapping two padded columns leaves logits unchanged") {
    ModelConfig cfg = tiny_cfg(2, 8, 2, 12, 9, 8, 3);
    Rng rng(19);
    ParamSet p = ParamSet::init(cfg, rng);
    TokenSequence a = seq({1, 2, 3, 4, 5}, {1, 1, 0, 1, 0});
    TokenSequence b = seq({1, 2, 5, 4, 3}, {1, 1, 0, 1, 0});  // padded ids swapped
    Mat za = encoder_forward(a, p, cfg).states.logits;
    Mat zb = encoder_forward(b, p, cfg).states.logits;
    CHECK(za.a == zb.a);
}

TEST_CASE("encoder_forward: mutating padded embedding columns never reaches real logits") {
    ModelConfig cfg = tiny_cfg(2, 8, 2, 12, 9, 8, 3);
    Rng rng(23);
    ParamSet p = ParamSet::init(cfg, rng);
    TokenSequence t = seq({1, 2, 3, 4}, {1, 1, 1, 0});
    Mat z0 = encoder_forward(t, p, cfg).states.logits;
    ParamSet p2 = p;
    // Perturb the positional embedding used only by the padded position.
    for (int r = 0; r < cfg.embed_dim; ++r) p2.pos_embed(r, 3) += 7.5;
    Mat z1 = encoder_forward(t, p2, cfg).states.logits;
    CHECK(z0.a == z1.a);
}

TEST_CASE("attention maps: columns are distributions, zero at padded rows") {
    ModelConfig cfg = tiny_cfg(2, 8, 2, 12, 9, 8, 3);
    Rng rng(29);
    ParamSet p = ParamSet::init(cfg, rng);
    TokenSequence t = seq({1, 2, 3, 4, 5}, {1, 0, 1, 1, 0});
    ForwardCache fc = encoder_forward(t, p, cfg);
    for (const auto& layer : fc.states.attn)
        for (const Mat& a : layer)
            for (int i = 0; i < a.cols; ++i) {
                double s = 0;
                for (int j = 0; j < a.rows; ++j) {
                    CHECK(a(j, i) >= 0.0);
                    if (!t.mask[j]) CHECK(a(j, i) == 0.0);
                    s += a(j, i);
                }
                CHECK(std::abs(s - 1.0) < 1e-9);
            }
}

TEST_CASE("backward: sum-of-logits loss makes classifier gradient the pooled activations") {
    ModelConfig cfg = tiny_cfg(1, 8, 2, 12, 9, 8, 3);
    Rng rng(31);
    ParamSet p = ParamSet::init(cfg, rng);
    TokenSequence t = seq({1, 2, 3});
    ForwardCache fc = encoder_forward(t, p, cfg);
    StateGrad seeds = StateGrad::zeros_like(fc.states);
    for (double& v : seeds.d_logits.a) v = 1.0;
    ParamSet g = backward(p, fc, seeds);
    const double* pool = fc.states.reps.back().col(0);
    for (int c = 0; c < cfg.num_classes; ++c) {
        CHECK(g.cls_b.a[c] == doctest::Approx(1.0));
        for (int r = 0; r < cfg.hidden_dim; ++r)
            CHECK(g.cls_w(c, r) == doctest::Approx(pool[r]).epsilon(1e-12));
    }
}

TEST_CASE("backward: zero upstream gradient gives zero parameter gradients") {
    ModelConfig cfg = tiny_cfg(2, 8, 2, 12, 9, 8, 3);
    Rng rng(37);
    ParamSet p = ParamSet::init(cfg, rng);
    ForwardCache fc = encoder_forward(seq({1, 2, 3, 4}), p, cfg);
    StateGrad seeds = StateGrad::zeros_like(fc.states);
    ParamSet g = backward(p, fc, seeds);
    for_each_tensor(g, [](const std::string&, Mat& m) {
        for (double v : m.a) CHECK(v == 0.0);
    });
}

TEST_CASE("backward: seed count mismatch is a usage error") {
    ModelConfig cfg = tiny_cfg(2, 8, 2, 12, 9, 8, 3);
    Rng rng(41);
    ParamSet p = ParamSet::init(cfg, rng);
    ForwardCache fc = encoder_forward(seq({1, 2}), p, cfg);
    StateGrad seeds = StateGrad::zeros_like(fc.states);
    seeds.d_reps.pop_back();
    CHECK_THROWS_AS(backward(p, fc, seeds), std::logic_error);
}

TEST_CASE("backward: analytic gradients match central differences (L=3, d=32 ceiling)") {
    // Seeds attached simultaneously to logits, a middle rep, an attention map
    // and a value matrix.
    ModelConfig cfg = tiny_cfg(3, 32, 4, 24, 9, 8, 3);
    Rng rng(43);
    ParamSet p = ParamSet::init(cfg, rng, 0.3);
    TokenSequence t = seq({1, 2, 3, 4, 5}, {1, 1, 1, 1, 0});

    auto loss_of_states = [&](const LayerStates& st) {
        double v = 0.0;
        for (size_t i = 0; i < st.logits.a.size(); ++i)
            v += std::sin(0.7 * static_cast<double>(i + 1)) * st.logits.a[i];
        const Mat& r2 = st.reps[2];
        for (size_t i = 0; i < r2.a.size(); ++i) v += 0.05 * r2.a[i] * r2.a[i];
        const Mat& a0 = st.attn[0][1];
        for (size_t i = 0; i < a0.a.size(); ++i)
            v += 0.3 * std::cos(static_cast<double>(i)) * a0.a[i];
        const Mat& vals = st.values[1];
        for (size_t i = 0; i < vals.a.size(); ++i) v += 0.02 * vals.a[i];
        return v;
    };

    ForwardCache fc = encoder_forward(t, p, cfg);
    StateGrad seeds = StateGrad::zeros_like(fc.states);
    for (size_t i = 0; i < seeds.d_logits.a.size(); ++i)
        seeds.d_logits.a[i] = std::sin(0.7 * static_cast<double>(i + 1));
    for (size_t i = 0; i < seeds.d_reps[2].a.size(); ++i)
        seeds.d_reps[2].a[i] = 0.1 * fc.states.reps[2].a[i];
    for (size_t i = 0; i < seeds.d_attn[0][1].a.size(); ++i)
        seeds.d_attn[0][1].a[i] = 0.3 * std::cos(static_cast<double>(i));
    for (size_t i = 0; i < seeds.d_values[1].a.size(); ++i) seeds.d_values[1].a[i] = 0.02;
    ParamSet analytic = backward(p, fc, seeds);

    GradCheckReport rep = gradcheck_params(
        p,
        [&](const ParamSet& q) { return loss_of_states(encoder_forward(t, q, cfg).states); },
        analytic, 1e-5);
    INFO("worst: ", rep.worst_tensor, "[", rep.worst_index, "] analytic=", rep.analytic,
         " fd=", rep.fd);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("dropout: train-mode forward is deterministic per rng seed and off in eval") {
    ModelConfig cfg = tiny_cfg(1, 8, 2, 12, 9, 8, 3);
    cfg.dropout = 0.4;
    Rng rng(47);
    ParamSet p = ParamSet::init(cfg, rng);
    TokenSequence t = seq({1, 2, 3});
    Rng d1(99), d2(99), d3(100);
    Mat a = encoder_forward(t, p, cfg, Structure::full(cfg), &d1).states.logits;
    Mat b = encoder_forward(t, p, cfg, Structure::full(cfg), &d2).states.logits;
    Mat c = encoder_forward(t, p, cfg, Structure::full(cfg), &d3).states.logits;
    Mat e = encoder_forward(t, p, cfg).states.logits;  // eval mode
    CHECK(a.a == b.a);
    CHECK(a.a != c.a);
    CHECK(a.a != e.a);
}

TEST_CASE("checkpoint: save/load round-trips bit-exactly") {
    ModelConfig cfg = tiny_cfg(2, 8, 2, 12, 9, 8, 3);
    Rng rng(53);
    ParamSet p = ParamSet::init(cfg, rng);
    const std::string path =
        (std::filesystem::temp_directory_path() / "ckd_ckpt_test.bin").string();
    save_checkpoint(path, cfg, p, {{"note", "round-trip"}});
    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.cfg.hidden_dim == cfg.hidden_dim);
    CHECK(ck.meta.at("note") == "round-trip");
    std::vector<const Mat*> orig, loaded;
    for_each_tensor(p, [&](const std::string&, Mat& m) { orig.push_back(&m); });
    for_each_tensor(ck.params, [&](const std::string&, Mat& m) { loaded.push_back(&m); });
    for (size_t i = 0; i < orig.size(); ++i) CHECK(orig[i]->a == loaded[i]->a);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint: corrupted magic is rejected") {
    const std::string path = (std::filesystem::temp_directory_path() / "ckd_bad.bin").string();
    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        std::fputs("NOTACKPT", f);
        std::fclose(f);
    }
    CHECK_THROWS(load_checkpoint(path));
    std::filesystem::remove(path);
}
