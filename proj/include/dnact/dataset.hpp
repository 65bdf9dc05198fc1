#pragma once

// Demonstration persistence: per-episode binary records ("DNKT", versioned,
// length-prefixed frames) plus a plain-text manifest, and deterministic
// corpus collection with a scripted-expert retry budget.

#include <cstdint>
#include <string>
#include <vector>

#include "dnact/config.hpp"
#include "dnact/sim.hpp"

namespace dnact {

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr std::uint16_t kEpisodeVersion = 1;

void write_episode(const std::string& path, const sim::Demonstration& demo);
sim::Demonstration read_episode(const std::string& path);

struct ManifestEntry {
    std::string file;
    sim::TaskId task;
    std::uint64_t variation_seed = 0;
    std::uint32_t n_frames = 0;
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

/// Collects demos_per_task successful expert episodes per desk task into
/// `dir` (episodes + manifest.tsv). Seeds derive from cfg.seed; failed expert
/// runs are resampled up to cfg.expert_retries per slot.
std::vector<ManifestEntry> collect_corpus(const Config& cfg, const std::string& dir);

std::vector<sim::Demonstration> load_corpus(const std::string& dir);

}  // namespace dnact
