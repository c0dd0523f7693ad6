#ifndef LAPAEL_CHECKPOINT_HPP
#define LAPAEL_CHECKPOINT_HPP

// Versioned named-tensor container: a text header (format version plus
// key=value metadata) followed by tensor entries, each a text descriptor
// line and raw little-endian doubles. The same container carries model
// and paraphraser parameters.

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lapael/model.hpp"
#include "lapael/paraphraser.hpp"
#include "lapael/tensor.hpp"

namespace lapael {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format stores raw little-endian doubles");

struct Checkpoint {
    static constexpr const char* kMagic = "lapael-checkpoint v1";

    std::map<std::string, std::string> meta; // ordered, so saves are canonical
    std::vector<std::pair<std::string, Tensor>> tensors;

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
        f << kMagic << '\n';
        for (const auto& [k, v] : meta) f << "meta " << k << '=' << v << '\n';
        f << "tensors " << tensors.size() << '\n';
        for (const auto& [name, t] : tensors) {
            f << "tensor " << name << " f64 " << t.rank();
            for (int d : t.shape()) f << ' ' << d;
            f << '\n';
            f.write(reinterpret_cast<const char*>(t.values().data()),
                    static_cast<std::streamsize>(t.numel() * sizeof(double)));
            f << '\n';
        }
        if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
        std::string line;
        if (!std::getline(f, line) || line != kMagic)
            throw std::runtime_error("checkpoint: version mismatch or not a checkpoint: " + path);
        Checkpoint ck;
        long remaining = -1;
        while (std::getline(f, line)) {
            if (line.rfind("meta ", 0) == 0) {
                const auto eq = line.find('=', 5);
                if (eq == std::string::npos)
                    throw std::runtime_error("checkpoint: malformed meta line");
                ck.meta[line.substr(5, eq - 5)] = line.substr(eq + 1);
            } else if (line.rfind("tensors ", 0) == 0) {
                remaining = std::stol(line.substr(8));
                break;
            } else {
                throw std::runtime_error("checkpoint: unexpected header line: " + line);
            }
        }
        if (remaining < 0) throw std::runtime_error("checkpoint: missing tensor count");
        for (long i = 0; i < remaining; ++i) {
            if (!std::getline(f, line))
                throw std::runtime_error("checkpoint: truncated tensor table");
            std::istringstream ss(line);
            std::string tag, name, dtype;
            int rank = 0;
            ss >> tag >> name >> dtype >> rank;
            if (tag != "tensor" || !ss || rank < 0)
                throw std::runtime_error("checkpoint: malformed tensor line: " + line);
            if (dtype != "f64")
                throw std::runtime_error("checkpoint: unsupported dtype " + dtype);
            Shape shape(static_cast<std::size_t>(rank));
            for (int r = 0; r < rank; ++r) ss >> shape[static_cast<std::size_t>(r)];
            if (!ss) throw std::runtime_error("checkpoint: malformed shape: " + line);
            std::vector<double> values(shape_numel(shape));
            f.read(reinterpret_cast<char*>(values.data()),
                   static_cast<std::streamsize>(values.size() * sizeof(double)));
            if (f.gcount() != static_cast<std::streamsize>(values.size() * sizeof(double)))
                throw std::runtime_error("checkpoint: truncated tensor data for " + name);
            f.get(); // trailing newline
            ck.tensors.emplace_back(name, Tensor::from(shape, std::move(values)));
        }
        return ck;
    }

    const Tensor& find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw std::runtime_error("checkpoint: missing tensor " + name);
    }
};

// ---- model <-> checkpoint ----

inline Checkpoint checkpoint_from_model(const TransformerParams& p) {
    Checkpoint ck;
    const ModelConfig& c = p.config;
    ck.meta["model.vocab_size"] = std::to_string(c.vocab_size);
    ck.meta["model.d_model"] = std::to_string(c.d_model);
    ck.meta["model.n_layers"] = std::to_string(c.n_layers);
    ck.meta["model.n_heads"] = std::to_string(c.n_heads);
    ck.meta["model.d_ff"] = std::to_string(c.d_ff);
    ck.meta["model.max_seq_len"] = std::to_string(c.max_seq_len);
    ck.meta["model.tie_embeddings"] = c.tie_embeddings ? "true" : "false";
    for (const auto& [name, t] : p.named_params()) ck.tensors.emplace_back(name, t);
    return ck;
}

inline TransformerParams model_from_checkpoint(const Checkpoint& ck) {
    ModelConfig c;
    c.vocab_size = std::stoi(ck.meta.at("model.vocab_size"));
    c.d_model = std::stoi(ck.meta.at("model.d_model"));
    c.n_layers = std::stoi(ck.meta.at("model.n_layers"));
    c.n_heads = std::stoi(ck.meta.at("model.n_heads"));
    c.d_ff = std::stoi(ck.meta.at("model.d_ff"));
    c.max_seq_len = std::stoi(ck.meta.at("model.max_seq_len"));
    c.tie_embeddings = ck.meta.at("model.tie_embeddings") == "true";
    Rng rng(0);
    TransformerParams p = TransformerParams::init(c, rng);
    for (auto& [name, t] : p.named_params()) {
        const Tensor& src = ck.find(name);
        if (src.shape() != t.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        t.values() = src.values();
    }
    return p;
}

// ---- paraphraser <-> checkpoint (shared container, "paraphraser." prefix) ----

inline void add_paraphraser(Checkpoint& ck, const ParaphraserParams& p, int d_model) {
    std::string blocks;
    for (int b : p.attached_blocks()) {
        if (!blocks.empty()) blocks += ',';
        blocks += std::to_string(b);
    }
    ck.meta["paraphraser.blocks"] = blocks;
    ck.meta["paraphraser.temperature"] = std::to_string(p.temperature);
    ck.meta["paraphraser.composition"] = to_string(p.composition);
    ck.meta["paraphraser.d_model"] = std::to_string(d_model);
    for (const auto& [name, t] : p.named_params()) ck.tensors.emplace_back(name, t);
}

inline ParaphraserParams paraphraser_from_checkpoint(const Checkpoint& ck) {
    if (!ck.meta.count("paraphraser.blocks"))
        throw std::runtime_error("checkpoint: missing paraphraser attached-block metadata");
    std::vector<int> blocks;
    std::istringstream ss(ck.meta.at("paraphraser.blocks"));
    std::string part;
    while (std::getline(ss, part, ',')) blocks.push_back(std::stoi(part));
    const int d = std::stoi(ck.meta.at("paraphraser.d_model"));
    Rng rng(0);
    ParaphraserParams p = ParaphraserParams::init(
        d, blocks, rng, std::stod(ck.meta.at("paraphraser.temperature")),
        composition_from_string(ck.meta.at("paraphraser.composition")));
    for (auto& [name, t] : p.named_params()) {
        const Tensor& src = ck.find(name);
        if (src.shape() != t.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        t.values() = src.values();
    }
    return p;
}

} // namespace lapael

#endif
