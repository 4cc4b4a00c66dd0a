#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ckd/model.hpp"

// Checkpoint container, little-endian binary:
//   magic "CKDCKPT1" | u32 version | config (8 x i32, 1 x f64)
//   u32 meta count   | per entry: u32 key len, key, u32 val len, val
//   u32 tensor count | per tensor: u32 name len, name, i32 rows, i32 cols,
//                      rows*cols f64 column-major
// Raw f64 bytes round-trip bit-exactly.

namespace ckd {

namespace {

constexpr char kMagic[8] = {'C', 'K', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
    const uint32_t len = get<uint32_t>(is);
    if (len > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParamSet& params,
                     const std::map<std::string, std::string>& meta) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    put<uint32_t>(os, kVersion);
    put<int32_t>(os, cfg.num_layers);
    put<int32_t>(os, cfg.hidden_dim);
    put<int32_t>(os, cfg.num_heads);
    put<int32_t>(os, cfg.ffn_dim);
    put<int32_t>(os, cfg.vocab_size);
    put<int32_t>(os, cfg.embed_dim);
    put<int32_t>(os, cfg.max_seq_len);
    put<int32_t>(os, cfg.num_classes);
    put<double>(os, cfg.dropout);
    put<uint32_t>(os, static_cast<uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        put_string(os, k);
        put_string(os, v);
    }
    uint32_t count = 0;
    for_each_tensor(const_cast<ParamSet&>(params), [&](const std::string&, Mat&) { ++count; });
    put<uint32_t>(os, count);
    for_each_tensor(const_cast<ParamSet&>(params), [&](const std::string& name, Mat& m) {
        put_string(os, name);
        put<int32_t>(os, m.rows);
        put<int32_t>(os, m.cols);
        os.write(reinterpret_cast<const char*>(m.a.data()),
                 static_cast<std::streamsize>(m.a.size() * sizeof(double)));
    });
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic: " + path);
    if (get<uint32_t>(is) != kVersion)
        throw std::runtime_error("checkpoint: unsupported version");

    Checkpoint ckpt;
    ckpt.cfg.num_layers = get<int32_t>(is);
    ckpt.cfg.hidden_dim = get<int32_t>(is);
    ckpt.cfg.num_heads = get<int32_t>(is);
    ckpt.cfg.ffn_dim = get<int32_t>(is);
    ckpt.cfg.vocab_size = get<int32_t>(is);
    ckpt.cfg.embed_dim = get<int32_t>(is);
    ckpt.cfg.max_seq_len = get<int32_t>(is);
    ckpt.cfg.num_classes = get<int32_t>(is);
    ckpt.cfg.dropout = get<double>(is);
    ckpt.cfg.validate();

    const uint32_t meta_count = get<uint32_t>(is);
    for (uint32_t i = 0; i < meta_count; ++i) {
        std::string k = get_string(is);
        ckpt.meta[k] = get_string(is);
    }

    // Build the expected shape, then fill by name.
    Rng rng(0);
    ckpt.params = ParamSet::init(ckpt.cfg, rng, 0.0);
    std::map<std::string, Mat*> by_name;
    for_each_tensor(ckpt.params, [&](const std::string& name, Mat& m) { by_name[name] = &m; });

    const uint32_t count = get<uint32_t>(is);
    if (count != by_name.size()) throw std::runtime_error("checkpoint: tensor count mismatch");
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = get_string(is);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint: unknown tensor " + name);
        const int32_t rows = get<int32_t>(is);
        const int32_t cols = get<int32_t>(is);
        if (rows != it->second->rows || cols != it->second->cols)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        is.read(reinterpret_cast<char*>(it->second->a.data()),
                static_cast<std::streamsize>(it->second->a.size() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
    }
    return ckpt;
}

}  // namespace ckd
