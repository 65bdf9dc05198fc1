#include "dnact/dataset.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dnact {

namespace {

constexpr char kMagic[4] = {'D', 'N', 'K', 'T'};

template <typename T>
void put(std::string& buf, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf.append(p, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& pos) {
    if (pos + sizeof(T) > buf.size()) throw DatasetError("episode: truncated frame");
    T v{};
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DatasetError("episode: truncated file");
    return v;
}

/// splitmix64 seed derivation so episode seeds do not collide across tasks.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace

void write_episode(const std::string& path, const sim::Demonstration& demo) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("episode: cannot write " + path);
    out.write(kMagic, 4);
    write_pod<std::uint16_t>(out, kEpisodeVersion);
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(demo.task));
    write_pod<std::uint64_t>(out, demo.variation_seed);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(demo.frames.size()));
    for (const auto& f : demo.frames) {
        std::string blob;
        put(blob, f.t);
        for (float v : f.velocity) put(blob, v);
        put(blob, f.pose.x);
        put(blob, f.pose.y);
        put(blob, f.pose.z);
        put(blob, f.open);
        put(blob, static_cast<std::uint32_t>(f.object_centers.size()));
        for (const auto& c : f.object_centers) {
            put(blob, c.x);
            put(blob, c.y);
            put(blob, c.z);
        }
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    if (!out) throw DatasetError("episode: write failed for " + path);
}

sim::Demonstration read_episode(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("episode: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DatasetError("episode: bad magic in " + path);
    const auto version = read_pod<std::uint16_t>(in);
    if (version != kEpisodeVersion)
        throw DatasetError("episode: unsupported version " + std::to_string(version));
    sim::Demonstration demo;
    demo.task = static_cast<sim::TaskId>(read_pod<std::uint8_t>(in));
    demo.variation_seed = read_pod<std::uint64_t>(in);
    demo.scene0 = sim::generate_scene(demo.task, demo.variation_seed);
    const auto n_frames = read_pod<std::uint32_t>(in);
    demo.frames.resize(n_frames);
    for (auto& f : demo.frames) {
        const auto len = read_pod<std::uint32_t>(in);
        std::string blob(len, '\0');
        in.read(blob.data(), static_cast<std::streamsize>(len));
        if (!in) throw DatasetError("episode: truncated frame in " + path);
        size_t pos = 0;
        f.t = take<double>(blob, pos);
        for (float& v : f.velocity) v = take<float>(blob, pos);
        f.pose.x = take<float>(blob, pos);
        f.pose.y = take<float>(blob, pos);
        f.pose.z = take<float>(blob, pos);
        f.open = take<float>(blob, pos);
        const auto n_obj = take<std::uint32_t>(blob, pos);
        f.object_centers.resize(n_obj);
        for (auto& c : f.object_centers) {
            c.x = take<float>(blob, pos);
            c.y = take<float>(blob, pos);
            c.z = take<float>(blob, pos);
        }
        if (pos != blob.size()) throw DatasetError("episode: trailing bytes in frame");
    }
    return demo;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw DatasetError("manifest: cannot write " + path);
    out << "file\ttask\tseed\tframes\n";
    for (const auto& e : entries)
        out << e.file << '\t' << sim::task_name(e.task) << '\t' << e.variation_seed << '\t'
            << e.n_frames << '\n';
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("manifest: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DatasetError("manifest: empty file");
    std::vector<ManifestEntry> entries;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        ManifestEntry e;
        std::string task;
        if (!(row >> e.file >> task >> e.variation_seed >> e.n_frames))
            throw DatasetError("manifest: bad row '" + line + "'");
        e.task = sim::task_from_name(task);
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<ManifestEntry> collect_corpus(const Config& cfg, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<ManifestEntry> entries;
    for (size_t ti = 0; ti < sim::kDeskTasks.size(); ++ti) {
        const auto task = sim::kDeskTasks[ti];
        for (int slot = 0; slot < cfg.demos_per_task; ++slot) {
            bool stored = false;
            for (int attempt = 0; attempt <= cfg.expert_retries && !stored; ++attempt) {
                const std::uint64_t vseed =
                    mix_seed(cfg.seed, (ti * 1000003ull + static_cast<std::uint64_t>(slot)) *
                                           (cfg.expert_retries + 1ull) +
                                           static_cast<std::uint64_t>(attempt));
                try {
                    auto scene = sim::generate_scene(task, vseed);
                    auto demo = sim::scripted_expert(scene, task);
                    auto final_scene = sim::scene_at_frame(demo, demo.frames.size() - 1);
                    if (!sim::check_success(final_scene, task)) continue;
                    ManifestEntry e;
                    e.file = sim::task_name(task) + "_" + std::to_string(slot) + ".dnkt";
                    e.task = task;
                    e.variation_seed = vseed;
                    e.n_frames = static_cast<std::uint32_t>(demo.frames.size());
                    write_episode((fs::path(dir) / e.file).string(), demo);
                    entries.push_back(std::move(e));
                    stored = true;
                } catch (const sim::PlacementError&) {
                } catch (const sim::ExpertError&) {
                }
            }
            if (!stored)
                throw DatasetError("collect: retry budget exhausted for " + sim::task_name(task) +
                                   " slot " + std::to_string(slot));
        }
    }
    write_manifest((fs::path(dir) / "manifest.tsv").string(), entries);
    return entries;
}

std::vector<sim::Demonstration> load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    auto entries = read_manifest((fs::path(dir) / "manifest.tsv").string());
    std::vector<sim::Demonstration> demos;
    demos.reserve(entries.size());
    for (const auto& e : entries)
        demos.push_back(read_episode((fs::path(dir) / e.file).string()));
    return demos;
}

}  // namespace dnact
