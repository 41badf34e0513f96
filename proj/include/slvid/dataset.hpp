#pragma once

#include "slvid/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace slv {

// One recording: a T x F block of frame features plus its place in the
// region > city > speaker hierarchy.
struct Utterance {
    std::string id;
    std::string region;
    std::string city;
    std::string speaker;
    std::uint32_t sentence_id = 0;
    std::uint32_t num_frames = 0;
    std::uint32_t feature_dim = 0;
    std::vector<float> frames;  // row-major, num_frames x feature_dim

    float frame_value(std::size_t t, std::size_t f) const { return frames[t * feature_dim + f]; }
};

enum class Split { train, val, test };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct ManifestEntry {
    std::string id;
    std::string region;
    std::string city;
    std::string speaker;
    std::uint32_t sentence_id = 0;
    std::string path;  // relative to the corpus root
    std::uint32_t num_frames = 0;
};

struct CorpusManifest {
    std::filesystem::path root;
    std::uint32_t feature_dim = 0;
    std::vector<ManifestEntry> entries;
    std::map<std::string, Split> city_split;  // empty until build_splits

    // Sorted unique region names.
    std::vector<std::string> regions() const;
    std::vector<std::string> cities_of(const std::string& region) const;
    std::vector<const ManifestEntry*> entries_in(Split split) const;
};

struct SyntheticConfig {
    std::uint32_t n_regions = 17;
    std::uint32_t cities_per_region = 3;
    std::uint32_t speakers_per_city = 1;
    std::uint32_t sentences = 10;
    std::uint32_t repeats = 5;
    std::uint32_t latent_dim = 16;
    std::uint32_t feature_dim = 24;
    std::uint32_t frames_mean = 40;
    std::uint32_t frames_jitter = 10;
    double sigma_region = 1.0;
    double sigma_city = 0.15;
    double sigma_speaker = 0.1;
    double sigma_sentence = 0.5;
    double sigma_noise = 1.0;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SyntheticCorpus {
    CorpusManifest manifest;
    std::vector<Utterance> utterances;  // same order as manifest.entries
};

// Hierarchical Gaussian sampler. Deterministic in cfg (including seed).
SyntheticCorpus synthesize_corpus(const SyntheticConfig& cfg);

// synthesize_corpus + write manifest and feature files under out_dir.
CorpusManifest generate_corpus(const SyntheticConfig& cfg, const std::filesystem::path& out_dir);

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

inline constexpr std::size_t kMinCitiesPerRegion = 3;

// City-disjoint split. Regions with fewer than three cities are dropped; each
// surviving region gets one random city in val and one in test, then the rest
// are assigned greedily towards the requested sample fractions.
CorpusManifest build_splits(const CorpusManifest& manifest, SplitFractions fractions, std::uint64_t seed);

std::vector<Utterance> load_batch(const CorpusManifest& manifest, std::span<const std::string> ids);

void write_utterance(const std::filesystem::path& path, const Utterance& utt);

inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kSplitFile = "splits.txt";

std::string format_manifest(const CorpusManifest& manifest);
std::string format_splits(const CorpusManifest& manifest);
void write_manifest(const CorpusManifest& manifest, const std::filesystem::path& dir);
CorpusManifest read_manifest(const std::filesystem::path& dir);

// Utterances decoded to double frames with integer region labels, the form
// the encoder consumes. Labels index into region_names.
struct LabeledSet {
    std::vector<std::string> region_names;
    std::vector<std::string> ids;
    std::vector<Matrix> frames;
    std::vector<int> labels;

    std::size_t size() const noexcept { return frames.size(); }
    bool empty() const noexcept { return frames.empty(); }
};

LabeledSet make_labeled_set(std::span<const Utterance> utterances, const std::vector<std::string>& region_names);

struct CorpusSplits {
    std::vector<std::string> regions;  // sorted; the classifier's label space
    LabeledSet train;
    LabeledSet val;
    LabeledSet test;
};

// Splits read from disk (manifest must carry a split assignment).
CorpusSplits load_splits(const CorpusManifest& manifest);
// Same, but taking frames from an in-memory corpus whose entries are a superset of manifest's.
CorpusSplits assemble_splits(const CorpusManifest& manifest, std::span<const Utterance> utterances);

} // namespace slv
