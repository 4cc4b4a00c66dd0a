#include "ckd/tasks.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace ckd {

std::string task_name(TaskKind k) {
    switch (k) {
        case TaskKind::parity_marked: return "parity-of-marked-tokens";
        case TaskKind::local_pattern: return "local-pattern-classification";
        case TaskKind::token_copy: return "token-copy-tagging";
    }
    return "?";
}

TaskKind parse_task(const std::string& name) {
    if (name == "parity-of-marked-tokens" || name == "parity") return TaskKind::parity_marked;
    if (name == "local-pattern-classification" || name == "local-pattern")
        return TaskKind::local_pattern;
    if (name == "token-copy-tagging" || name == "token-copy") return TaskKind::token_copy;
    throw std::invalid_argument("unknown task: " + name);
}

void TaskSpec::validate() const {
    if (seq_len < 4) throw std::invalid_argument("task: seq_len must be >= 4");
    if (train_size < 1 || dev_size < 1 || test_size < 1)
        throw std::invalid_argument("task: split sizes must be positive");
    switch (kind) {
        case TaskKind::parity_marked:
            if (num_classes != 2) throw std::invalid_argument("parity task has 2 classes");
            if (vocab_size < 6) throw std::invalid_argument("parity task: vocab too small");
            break;
        case TaskKind::local_pattern:
            // id 0 pad, 2 signature ids per class, at least 2 filler ids
            if (vocab_size < 1 + 2 * num_classes + 2)
                throw std::invalid_argument("local-pattern task: vocab too small");
            break;
        case TaskKind::token_copy:
            // id 0 pad, seq_len - 1 pointer ids, one content id per class
            if (vocab_size < seq_len + num_classes)
                throw std::invalid_argument("token-copy task: vocab too small");
            break;
    }
}

namespace {

Example make_parity(const TaskSpec& spec, Rng& rng) {
    // Marked ids live in the upper half of the vocabulary; k in 0..3 of them
    // are placed and the label is k mod 2.
    const int n = spec.seq_len;
    const int lo_marked = spec.vocab_size / 2;
    Example ex;
    ex.tokens.ids.assign(static_cast<size_t>(n), 0);
    ex.tokens.mask.assign(static_cast<size_t>(n), 1);
    for (int i = 0; i < n; ++i)
        ex.tokens.ids[static_cast<size_t>(i)] = 1 + rng.uniform_int(lo_marked - 1);
    const int k = rng.uniform_int(4);
    std::vector<int> positions(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;
    rng.shuffle(positions);
    for (int m = 0; m < k; ++m)
        ex.tokens.ids[static_cast<size_t>(positions[static_cast<size_t>(m)])] =
            lo_marked + rng.uniform_int(spec.vocab_size - lo_marked);
    ex.label = k % 2;
    return ex;
}

Example make_local_pattern(const TaskSpec& spec, Rng& rng) {
    // Signature bigram of class c is (1 + 2c, 2 + 2c); everything else is
    // filler, so the deciding evidence always sits inside a 2-token window.
    const int n = spec.seq_len;
    const int filler_lo = 1 + 2 * spec.num_classes;
    const int min_len = std::max(4, n - 4);
    const int len = min_len + rng.uniform_int(n - min_len + 1);
    Example ex;
    ex.tokens.ids.assign(static_cast<size_t>(n), 0);
    ex.tokens.mask.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < len; ++i) {
        ex.tokens.mask[static_cast<size_t>(i)] = 1;
        ex.tokens.ids[static_cast<size_t>(i)] =
            filler_lo + rng.uniform_int(spec.vocab_size - filler_lo);
    }
    const int c = rng.uniform_int(spec.num_classes);
    const int p = rng.uniform_int(len - 1);
    ex.tokens.ids[static_cast<size_t>(p)] = 1 + 2 * c;
    ex.tokens.ids[static_cast<size_t>(p + 1)] = 2 + 2 * c;
    ex.label = c;
    return ex;
}

Example make_token_copy(const TaskSpec& spec, Rng& rng) {
    // Position 0 points at a position; the label is the class of the content
    // token found there. Pointer ids are 1..n-1, content ids follow.
    const int n = spec.seq_len;
    const int content_lo = n;
    Example ex;
    ex.tokens.ids.assign(static_cast<size_t>(n), 0);
    ex.tokens.mask.assign(static_cast<size_t>(n), 1);
    for (int i = 1; i < n; ++i)
        ex.tokens.ids[static_cast<size_t>(i)] = content_lo + rng.uniform_int(spec.num_classes);
    const int target = 1 + rng.uniform_int(n - 1);
    ex.tokens.ids[0] = target;  // pointer id v names position v
    ex.label = ex.tokens.ids[static_cast<size_t>(target)] - content_lo;
    return ex;
}

}  // namespace

Dataset generate_task(const TaskSpec& spec) {
    spec.validate();
    Rng rng(spec.seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    const int total = spec.train_size + spec.dev_size + spec.test_size;

    Dataset ds;
    std::set<std::vector<int>> seen;
    int generated = 0;
    int attempts = 0;
    while (generated < total) {
        if (++attempts > 50 * total)
            throw std::invalid_argument("task: cannot generate enough distinct sequences");
        Example ex;
        switch (spec.kind) {
            case TaskKind::parity_marked: ex = make_parity(spec, rng); break;
            case TaskKind::local_pattern: ex = make_local_pattern(spec, rng); break;
            case TaskKind::token_copy: ex = make_token_copy(spec, rng); break;
        }
        if (!seen.insert(ex.tokens.ids).second) continue;
        if (generated < spec.train_size)
            ds.train.push_back(std::move(ex));
        else if (generated < spec.train_size + spec.dev_size)
            ds.dev.push_back(std::move(ex));
        else
            ds.test.push_back(std::move(ex));
        ++generated;
    }
    return ds;
}

}  // namespace ckd
