#pragma once

#include <string>
#include <vector>

#include "ckd/model.hpp"

namespace ckd {

enum class TaskKind {
    parity_marked,   // parity of the number of marked tokens (0-3 placed)
    local_pattern,   // class named by an adjacent signature bigram
    token_copy,      // class of the token at the position the first token names
};

std::string task_name(TaskKind k);
TaskKind parse_task(const std::string& name);

struct TaskSpec {
    TaskKind kind = TaskKind::local_pattern;
    int vocab_size = 16;
    int seq_len = 16;
    int num_classes = 4;
    int train_size = 2048;
    int dev_size = 512;
    int test_size = 512;
    uint64_t seed = 1;

    void validate() const;
};

struct Example {
    TokenSequence tokens;
    int label = 0;
};

struct Dataset {
    std::vector<Example> train, dev, test;
};

/// Deterministic function of the task spec (including its seed); the three splits
/// contain pairwise distinct token sequences. Token id 0 is reserved for
/// padding.
Dataset generate_task(const TaskSpec& spec);

}  // namespace ckd
