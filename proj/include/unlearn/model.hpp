#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "unlearn/optim.hpp"
#include "unlearn/tensor.hpp"

namespace unlearn {

struct ModelConfig {
    std::int64_t vocab_size = 0;
    std::int64_t max_len = 64;
    std::int64_t hidden_dim = 64;
    std::int64_t num_layers = 2;
    std::int64_t num_heads = 4;
    double dropout_rate = 0.1;
    std::int64_t num_classes = 0;

    void validate() const {
        if (vocab_size <= 0 || max_len <= 0 || hidden_dim <= 0 || num_layers <= 0 || num_heads <= 0 ||
            num_classes < 1)
            throw ParameterError("ModelConfig: all sizes must be positive");
        if (hidden_dim % num_heads != 0)
            throw ParameterError("ModelConfig: hidden_dim must be divisible by num_heads");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ParameterError("ModelConfig: dropout_rate must lie in [0,1)");
    }

    bool operator==(const ModelConfig&) const = default;
};

// Full parameter snapshot plus the config needed to interpret it.
struct ModelCheckpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    ModelConfig config;
    ParamMap params;
    std::uint64_t seed = 0;
    std::uint64_t step_count = 0;

    bool same_parameters(const ModelCheckpoint& o) const {
        if (params.size() != o.params.size()) return false;
        for (const auto& [name, t] : params) {
            auto it = o.params.find(name);
            if (it == o.params.end() || !t.same_values(it->second)) return false;
        }
        return true;
    }
};

// Parameter names and shapes implied by a config, in checkpoint order.
inline std::vector<std::pair<std::string, Shape>> expected_parameters(const ModelConfig& c) {
    std::int64_t d = c.hidden_dim, f = 4 * c.hidden_dim;
    std::vector<std::pair<std::string, Shape>> out = {
        {"tok_emb", {c.vocab_size, d}},
        {"pos_emb", {c.max_len, d}},
    };
    for (std::int64_t l = 0; l < c.num_layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        out.emplace_back(p + "ln1.gain", Shape{d});
        out.emplace_back(p + "ln1.bias", Shape{d});
        out.emplace_back(p + "wq", Shape{d, d});
        out.emplace_back(p + "bq", Shape{d});
        out.emplace_back(p + "wk", Shape{d, d});
        out.emplace_back(p + "bk", Shape{d});
        out.emplace_back(p + "wv", Shape{d, d});
        out.emplace_back(p + "bv", Shape{d});
        out.emplace_back(p + "wo", Shape{d, d});
        out.emplace_back(p + "bo", Shape{d});
        out.emplace_back(p + "ln2.gain", Shape{d});
        out.emplace_back(p + "ln2.bias", Shape{d});
        out.emplace_back(p + "w1", Shape{d, f});
        out.emplace_back(p + "b1", Shape{f});
        out.emplace_back(p + "w2", Shape{f, d});
        out.emplace_back(p + "b2", Shape{d});
    }
    out.emplace_back("final_ln.gain", Shape{d});
    out.emplace_back("final_ln.bias", Shape{d});
    out.emplace_back("cls.w", Shape{d, c.num_classes});
    out.emplace_back("cls.b", Shape{c.num_classes});
    return out;
}

// Scaled-uniform init (bound 1/sqrt(fan_in)); biases zero, norm gains one.
inline ModelCheckpoint init_parameters(const ModelConfig& config, Rng& rng) {
    config.validate();
    ModelCheckpoint ckpt;
    ckpt.config = config;
    ckpt.seed = rng.seed();
    for (const auto& [name, shape] : expected_parameters(config)) {
        std::string leaf = name.substr(name.find_last_of('.') + 1);
        if (leaf == "gain") {
            ckpt.params.emplace(name, Tensor::full(shape, 1.0));
            continue;
        }
        if (leaf[0] == 'b') {  // bq/bk/bv/bo/b1/b2/bias/b
            ckpt.params.emplace(name, Tensor::zeros(shape));
            continue;
        }
        std::int64_t fan_in = shape.size() == 2 ? shape[0] : shape.back();
        if (name == "tok_emb" || name == "pos_emb") fan_in = config.hidden_dim;
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
        for (auto& x : v) x = rng.uniform(-bound, bound);
        ckpt.params.emplace(name, Tensor(shape, std::move(v)));
    }
    return ckpt;
}

namespace detail {

inline Tensor attention_block(const ModelConfig& cfg, const ParamMap& p, const std::string& prefix,
                              const Tensor& x, Tape* tape) {
    std::int64_t d = cfg.hidden_dim, heads = cfg.num_heads, dh = d / heads;
    Tensor q = add_rowvec(tape, matmul(tape, x, p.at(prefix + "wq")), p.at(prefix + "bq"));
    Tensor k = add_rowvec(tape, matmul(tape, x, p.at(prefix + "wk")), p.at(prefix + "bk"));
    Tensor v = add_rowvec(tape, matmul(tape, x, p.at(prefix + "wv")), p.at(prefix + "bv"));
    std::vector<Tensor> heads_out;
    heads_out.reserve(static_cast<std::size_t>(heads));
    for (std::int64_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(tape, k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(tape, v, h * dh, (h + 1) * dh);
        Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), 1.0 / std::sqrt(double(dh)));
        Tensor attn = softmax_rows(tape, scores);
        heads_out.push_back(matmul(tape, attn, vh));
    }
    Tensor cat = concat_cols(tape, heads_out);
    return add_rowvec(tape, matmul(tape, cat, p.at(prefix + "wo")), p.at(prefix + "bo"));
}

}  // namespace detail

// z_i = Enc(x_i): token + positional embeddings through a pre-norm
// self-attention stack. Dropout is active only in train mode.
inline Tensor encode_tokens(const ModelConfig& cfg, const ParamMap& params,
                            const std::vector<int>& token_ids, bool train, Rng& rng,
                            Tape* tape = nullptr) {
    std::int64_t L = static_cast<std::int64_t>(token_ids.size());
    if (L == 0) throw ContractError("encode_tokens: empty token sequence");
    if (L > cfg.max_len)
        throw ContractError("encode_tokens: sequence length " + std::to_string(L) + " exceeds max_len " +
                            std::to_string(cfg.max_len) + " (data layer should have truncated)");
    for (int id : token_ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw DataError("encode_tokens: token id " + std::to_string(id) + " out of vocabulary");
    std::vector<int> positions(static_cast<std::size_t>(L));
    for (std::int64_t i = 0; i < L; ++i) positions[static_cast<std::size_t>(i)] = static_cast<int>(i);

    Tensor x = add(tape, embedding_rows(tape, params.at("tok_emb"), token_ids),
                   embedding_rows(tape, params.at("pos_emb"), positions));
    x = dropout(tape, x, cfg.dropout_rate, rng, train);
    for (std::int64_t l = 0; l < cfg.num_layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        Tensor h = layer_norm_rows(tape, x, params.at(p + "ln1.gain"), params.at(p + "ln1.bias"));
        h = detail::attention_block(cfg, params, p, h, tape);
        h = dropout(tape, h, cfg.dropout_rate, rng, train);
        x = add(tape, x, h);
        Tensor f = layer_norm_rows(tape, x, params.at(p + "ln2.gain"), params.at(p + "ln2.bias"));
        f = add_rowvec(tape, matmul(tape, f, params.at(p + "w1")), params.at(p + "b1"));
        f = gelu(tape, f);
        f = add_rowvec(tape, matmul(tape, f, params.at(p + "w2")), params.at(p + "b2"));
        f = dropout(tape, f, cfg.dropout_rate, rng, train);
        x = add(tape, x, f);
    }
    return layer_norm_rows(tape, x, params.at("final_ln.gain"), params.at("final_ln.bias"));
}

// logits[j][c] = theta_c . z_j + bias_c.
inline Tensor classify_tokens(const ModelConfig& cfg, const ParamMap& params, const Tensor& z,
                              Tape* tape = nullptr) {
    if (z.cols() != cfg.hidden_dim)
        throw DimensionError("classify_tokens: embedding width " + shape_str(z.shape) +
                             " does not match hidden_dim " + std::to_string(cfg.hidden_dim));
    return add_rowvec(tape, matmul(tape, z, params.at("cls.w")), params.at("cls.b"));
}

// Argmax over classes, ties broken by lowest class index.
inline std::vector<int> predict_labels(const Tensor& logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    std::int64_t c = logits.cols();
    for (std::int64_t i = 0; i < logits.rows(); ++i) {
        int best = 0;
        for (std::int64_t j = 1; j < c; ++j)
            if (logits(i, j) > logits(i, best)) best = static_cast<int>(j);
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence: magic "DCUT", version, config block, then named
// parameters as (name, rank, dims, raw little-endian doubles).
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw PersistenceError("checkpoint: truncated file");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace detail

inline void checkpoint_save(const ModelCheckpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw PersistenceError("checkpoint_save: cannot open " + path);
    os.write("DCUT", 4);
    detail::write_le<std::uint32_t>(os, ModelCheckpoint::kFormatVersion);
    const auto& c = ckpt.config;
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.vocab_size));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.max_len));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.hidden_dim));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.num_layers));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.num_heads));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.num_classes));
    detail::write_le<double>(os, c.dropout_rate);
    detail::write_le<std::uint64_t>(os, ckpt.seed);
    detail::write_le<std::uint64_t>(os, ckpt.step_count);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
        for (double x : t.vec()) detail::write_le<double>(os, x);
    }
    if (!os) throw PersistenceError("checkpoint_save: write failed for " + path);
}

inline ModelCheckpoint checkpoint_load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw PersistenceError("checkpoint_load: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "DCUT")
        throw PersistenceError("checkpoint_load: bad magic bytes in " + path);
    auto version = detail::read_le<std::uint32_t>(is);
    if (version != ModelCheckpoint::kFormatVersion)
        throw PersistenceError("checkpoint_load: format_version " + std::to_string(version) +
                               " unsupported (expected " + std::to_string(ModelCheckpoint::kFormatVersion) + ")");
    ModelCheckpoint ckpt;
    ckpt.config.vocab_size = detail::read_le<std::uint32_t>(is);
    ckpt.config.max_len = detail::read_le<std::uint32_t>(is);
    ckpt.config.hidden_dim = detail::read_le<std::uint32_t>(is);
    ckpt.config.num_layers = detail::read_le<std::uint32_t>(is);
    ckpt.config.num_heads = detail::read_le<std::uint32_t>(is);
    ckpt.config.num_classes = detail::read_le<std::uint32_t>(is);
    ckpt.config.dropout_rate = detail::read_le<double>(is);
    ckpt.seed = detail::read_le<std::uint64_t>(is);
    ckpt.step_count = detail::read_le<std::uint64_t>(is);
    auto count = detail::read_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name_len = detail::read_le<std::uint32_t>(is);
        if (name_len > 4096) throw PersistenceError("checkpoint_load: corrupted name length header");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw PersistenceError("checkpoint_load: truncated file");
        auto rank = detail::read_le<std::uint32_t>(is);
        if (rank > 8) throw PersistenceError("checkpoint_load: corrupted shape rank");
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r)
            shape.push_back(static_cast<std::int64_t>(detail::read_le<std::uint64_t>(is)));
        auto n = shape_numel(shape);
        if (n <= 0 || n > (std::int64_t{1} << 32))
            throw PersistenceError("checkpoint_load: corrupted length header for " + name);
        std::vector<double> data(static_cast<std::size_t>(n));
        for (auto& x : data) x = detail::read_le<double>(is);
        ckpt.params.emplace(name, Tensor(std::move(shape), std::move(data)));
    }
    // Shape validation against config-derived expectations.
    auto expected = expected_parameters(ckpt.config);
    if (expected.size() != ckpt.params.size())
        throw PersistenceError("checkpoint_load: parameter count " + std::to_string(ckpt.params.size()) +
                               " does not match config (expected " + std::to_string(expected.size()) + ")");
    for (const auto& [name, shape] : expected) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end())
            throw PersistenceError("checkpoint_load: missing parameter " + name);
        if (it->second.shape != shape)
            throw PersistenceError("checkpoint_load: shape of " + name + " is " +
                                   shape_str(it->second.shape) + ", config implies " + shape_str(shape) +
                                   " (check num_classes/hidden_dim fields)");
    }
    return ckpt;
}

}  // namespace unlearn
