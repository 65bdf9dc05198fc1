#include "dnact/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace dnact {

namespace {

constexpr char kMagic[4] = {'D', 'N', 'C', 'P'};

template <typename T>
void write_pod(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw CheckpointError("checkpoint: truncated file");
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    const auto n = read_pod<std::uint32_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw CheckpointError("checkpoint: truncated string");
    return s;
}

}  // namespace

const ParamBlock* Checkpoint::find(const std::string& name) const {
    for (const auto& b : blocks)
        if (b.name == name) return &b;
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("checkpoint: cannot write " + path);
    out.write(kMagic, 4);
    write_pod<std::uint32_t>(out, Checkpoint::kVersion);
    write_string(out, ckpt.config_text);
    write_pod<std::uint64_t>(out, ckpt.config_hash);
    for (float v : ckpt.stats.lo) write_pod<float>(out, v);
    for (float v : ckpt.stats.hi) write_pod<float>(out, v);
    write_string(out, ckpt.rng_state);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.blocks.size()));
    for (const auto& b : ckpt.blocks) {
        write_string(out, b.name);
        write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(b.shape.size()));
        std::int64_t numel = 1;
        for (int d : b.shape) {
            write_pod<std::int32_t>(out, d);
            numel *= d;
        }
        if (numel != static_cast<std::int64_t>(b.data.size()))
            throw CheckpointError("checkpoint: block " + b.name + " shape/data mismatch");
        out.write(reinterpret_cast<const char*>(b.data.data()),
                  static_cast<std::streamsize>(b.data.size() * sizeof(float)));
    }
    if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path);
    const auto version = read_pod<std::uint32_t>(in);
    if (version != Checkpoint::kVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.config_text = read_string(in);
    ckpt.config_hash = read_pod<std::uint64_t>(in);
    for (float& v : ckpt.stats.lo) v = read_pod<float>(in);
    for (float& v : ckpt.stats.hi) v = read_pod<float>(in);
    ckpt.rng_state = read_string(in);
    const auto n_blocks = read_pod<std::uint32_t>(in);
    ckpt.blocks.resize(n_blocks);
    for (auto& b : ckpt.blocks) {
        b.name = read_string(in);
        const auto ndim = read_pod<std::uint8_t>(in);
        std::int64_t numel = 1;
        b.shape.clear();
        for (int i = 0; i < ndim; ++i) {
            const auto d = read_pod<std::int32_t>(in);
            if (d <= 0) throw CheckpointError("checkpoint: bad dimension in " + b.name);
            b.shape.push_back(d);
            numel *= d;
        }
        b.data.resize(static_cast<size_t>(numel));
        in.read(reinterpret_cast<char*>(b.data.data()),
                static_cast<std::streamsize>(b.data.size() * sizeof(float)));
        if (!in) throw CheckpointError("checkpoint: truncated block " + b.name);
    }
    return ckpt;
}

void blocks_from_params(const ParameterSet& ps, Checkpoint& ckpt) {
    for (const auto& [name, t] : ps.items()) {
        ParamBlock b;
        b.name = name;
        b.shape = t.shape();
        b.data.assign(t.data(), t.data() + t.numel());
        ckpt.blocks.push_back(std::move(b));
    }
}

void params_from_blocks(const Checkpoint& ckpt, ParameterSet& ps) {
    for (const auto& [name, unused] : ps.items()) {
        const auto* b = ckpt.find(name);
        if (!b) throw CheckpointError("checkpoint: missing block " + name);
        auto& t = ps.at(name);
        if (b->shape != t.shape())
            throw CheckpointError("checkpoint: shape mismatch for " + name);
        std::copy(b->data.begin(), b->data.end(), t.data());
    }
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
    std::mt19937_64 rng;
    std::istringstream is(s);
    is >> rng;
    if (!is) throw CheckpointError("checkpoint: bad RNG state");
    return rng;
}

std::uint64_t param_hash(const ParameterSet& ps) {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& [name, t] : ps.items()) {
        for (unsigned char c : name) {
            h ^= c;
            h *= 1099511628211ull;
        }
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
        for (std::int64_t i = 0; i < t.numel() * static_cast<std::int64_t>(sizeof(float)); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace dnact
