#include "slvid/dataset.hpp"

#include "slvid/binary_io.hpp"
#include "slvid/rng.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace slv {

namespace {

enum StreamTag : std::uint64_t {
    kRegionStream = 1,
    kCityStream = 2,
    kSpeakerStream = 3,
    kSentenceStream = 4,
    kMixingStream = 5,
    kUtteranceStream = 6,
};

std::string padded(const char* prefix, std::uint32_t v, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%0*u", prefix, width, v);
    return buf;
}

std::vector<double> gaussian_vector(Rng& rng, std::size_t n, double sigma) {
    std::vector<double> v(n, 0.0);
    if (sigma == 0.0) {
        return v;
    }
    std::normal_distribution<double> normal(0.0, sigma);
    for (double& x : v) {
        x = normal(rng);
    }
    return v;
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::uint32_t parse_u32(const std::string& s, const char* what) {
    std::uint32_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw std::runtime_error(std::string("bad ") + what + " field: '" + s + "'");
    }
    return v;
}

} // namespace

const char* split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw std::runtime_error("unknown split name: " + name);
}

std::vector<std::string> CorpusManifest::regions() const {
    std::set<std::string> names;
    for (const auto& e : entries) {
        names.insert(e.region);
    }
    return {names.begin(), names.end()};
}

std::vector<std::string> CorpusManifest::cities_of(const std::string& region) const {
    std::set<std::string> names;
    for (const auto& e : entries) {
        if (e.region == region) {
            names.insert(e.city);
        }
    }
    return {names.begin(), names.end()};
}

std::vector<const ManifestEntry*> CorpusManifest::entries_in(Split split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
        const auto it = city_split.find(e.city);
        if (it != city_split.end() && it->second == split) {
            out.push_back(&e);
        }
    }
    return out;
}

void SyntheticConfig::validate() const {
    if (n_regions == 0 || speakers_per_city == 0 || sentences == 0 || repeats == 0 || latent_dim == 0 ||
        feature_dim == 0 || frames_mean == 0) {
        throw std::invalid_argument("synthetic config: counts must be >= 1");
    }
    if (cities_per_region < kMinCitiesPerRegion) {
        throw std::invalid_argument("synthetic config: cities_per_region must be >= 3");
    }
    if (frames_jitter >= frames_mean) {
        throw std::invalid_argument("synthetic config: frames_jitter must be < frames_mean");
    }
    for (double s : {sigma_region, sigma_city, sigma_speaker, sigma_sentence, sigma_noise}) {
        if (!(s >= 0.0) || !std::isfinite(s)) {
            throw std::invalid_argument("synthetic config: spreads must be finite and >= 0");
        }
    }
}

SyntheticCorpus synthesize_corpus(const SyntheticConfig& cfg) {
    cfg.validate();
    const std::size_t D = cfg.latent_dim;
    const std::size_t F = cfg.feature_dim;

    // Fixed D -> F mixing map, entries N(0, 1/D).
    std::vector<double> mixing;
    {
        Rng rng = make_stream(cfg.seed, {kMixingStream});
        mixing = gaussian_vector(rng, D * F, 1.0 / std::sqrt(static_cast<double>(D)));
    }
    std::vector<std::vector<double>> sentence_patterns(cfg.sentences);
    for (std::uint32_t k = 0; k < cfg.sentences; ++k) {
        Rng rng = make_stream(cfg.seed, {kSentenceStream, k});
        sentence_patterns[k] = gaussian_vector(rng, D, cfg.sigma_sentence);
    }

    SyntheticCorpus corpus;
    corpus.manifest.feature_dim = cfg.feature_dim;
    const int region_width = cfg.n_regions > 100 ? 3 : 2;
    std::uint64_t utt_index = 0;
    std::vector<double> latent(D);

    for (std::uint32_t r = 0; r < cfg.n_regions; ++r) {
        Rng region_rng = make_stream(cfg.seed, {kRegionStream, r});
        const std::vector<double> region_centroid = gaussian_vector(region_rng, D, cfg.sigma_region);
        const std::string region = padded("reg", r, region_width);

        for (std::uint32_t c = 0; c < cfg.cities_per_region; ++c) {
            Rng city_rng = make_stream(cfg.seed, {kCityStream, r, c});
            std::vector<double> city_centroid = gaussian_vector(city_rng, D, cfg.sigma_city);
            for (std::size_t d = 0; d < D; ++d) {
                city_centroid[d] += region_centroid[d];
            }
            const std::string city = region + padded("_c", c, 2);

            for (std::uint32_t s = 0; s < cfg.speakers_per_city; ++s) {
                Rng speaker_rng = make_stream(cfg.seed, {kSpeakerStream, r, c, s});
                const std::vector<double> speaker_offset = gaussian_vector(speaker_rng, D, cfg.sigma_speaker);
                const std::string speaker = city + padded("_s", s, 2);

                for (std::uint32_t k = 0; k < cfg.sentences; ++k) {
                    for (std::size_t d = 0; d < D; ++d) {
                        latent[d] = city_centroid[d] + speaker_offset[d] + sentence_patterns[k][d];
                    }
                    std::vector<double> clean(F, 0.0);
                    for (std::size_t d = 0; d < D; ++d) {
                        for (std::size_t f = 0; f < F; ++f) {
                            clean[f] += latent[d] * mixing[d * F + f];
                        }
                    }

                    for (std::uint32_t rep = 0; rep < cfg.repeats; ++rep, ++utt_index) {
                        Rng rng = make_stream(cfg.seed, {kUtteranceStream, utt_index});
                        std::uniform_int_distribution<std::int64_t> jitter(-static_cast<std::int64_t>(cfg.frames_jitter),
                                                                           static_cast<std::int64_t>(cfg.frames_jitter));
                        const auto T = static_cast<std::uint32_t>(static_cast<std::int64_t>(cfg.frames_mean) + jitter(rng));
                        std::normal_distribution<double> noise(0.0, cfg.sigma_noise > 0.0 ? cfg.sigma_noise : 1.0);

                        Utterance utt;
                        utt.id = speaker + padded("_k", k, 3) + padded("_r", rep, 2);
                        utt.region = region;
                        utt.city = city;
                        utt.speaker = speaker;
                        utt.sentence_id = k;
                        utt.num_frames = T;
                        utt.feature_dim = cfg.feature_dim;
                        utt.frames.resize(static_cast<std::size_t>(T) * F);
                        for (std::size_t t = 0; t < T; ++t) {
                            for (std::size_t f = 0; f < F; ++f) {
                                const double eps = cfg.sigma_noise > 0.0 ? noise(rng) : 0.0;
                                utt.frames[t * F + f] = static_cast<float>(clean[f] + eps);
                            }
                        }

                        ManifestEntry entry;
                        entry.id = utt.id;
                        entry.region = region;
                        entry.city = city;
                        entry.speaker = speaker;
                        entry.sentence_id = k;
                        entry.path = "feats/" + utt.id + ".slv1";
                        entry.num_frames = T;
                        corpus.manifest.entries.push_back(std::move(entry));
                        corpus.utterances.push_back(std::move(utt));
                    }
                }
            }
        }
    }
    return corpus;
}

void write_utterance(const std::filesystem::path& path, const Utterance& utt) {
    io::FeatureBlock block;
    block.rows = utt.num_frames;
    block.cols = utt.feature_dim;
    block.values = utt.frames;
    io::write_feature_file(path, block);
}

CorpusManifest generate_corpus(const SyntheticConfig& cfg, const std::filesystem::path& out_dir) {
    SyntheticCorpus corpus = synthesize_corpus(cfg);
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "feats", ec);
    if (ec) {
        throw std::runtime_error("cannot create output directory: " + out_dir.string());
    }
    corpus.manifest.root = out_dir;
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
        write_utterance(out_dir / corpus.manifest.entries[i].path, corpus.utterances[i]);
    }
    write_manifest(corpus.manifest, out_dir);
    return corpus.manifest;
}

CorpusManifest build_splits(const CorpusManifest& manifest, SplitFractions fractions, std::uint64_t seed) {
    if (!(fractions.train > 0.0 && fractions.val > 0.0 && fractions.test > 0.0) ||
        std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
        throw std::invalid_argument("split fractions must be positive and sum to 1");
    }

    // City sizes and the region each city belongs to.
    std::map<std::string, std::size_t> city_size;
    std::map<std::string, std::string> city_region;
    for (const auto& e : manifest.entries) {
        ++city_size[e.city];
        const auto [it, inserted] = city_region.emplace(e.city, e.region);
        if (!inserted && it->second != e.region) {
            throw std::invalid_argument("city '" + e.city + "' appears in more than one region");
        }
    }
    std::map<std::string, std::vector<std::string>> region_cities;
    for (const auto& [city, region] : city_region) {
        region_cities[region].push_back(city);
    }
    std::erase_if(region_cities, [](const auto& kv) { return kv.second.size() < kMinCitiesPerRegion; });
    if (region_cities.empty()) {
        throw std::invalid_argument("no region has at least three cities");
    }

    Rng rng = make_stream(seed, {0x5b11u});
    std::map<std::string, Split> assignment;
    std::array<double, 3> load{0.0, 0.0, 0.0};
    std::vector<std::string> remaining;
    std::size_t total = 0;
    for (auto& [region, cities] : region_cities) {
        std::shuffle(cities.begin(), cities.end(), rng);
        assignment[cities[0]] = Split::val;
        assignment[cities[1]] = Split::test;
        load[1] += static_cast<double>(city_size[cities[0]]);
        load[2] += static_cast<double>(city_size[cities[1]]);
        for (std::size_t i = 0; i < cities.size(); ++i) {
            total += city_size[cities[i]];
            if (i >= 2) {
                remaining.push_back(cities[i]);
            }
        }
    }
    std::shuffle(remaining.begin(), remaining.end(), rng);

    const std::array<double, 3> target{fractions.train * static_cast<double>(total),
                                       fractions.val * static_cast<double>(total),
                                       fractions.test * static_cast<double>(total)};
    constexpr std::array<Split, 3> kOrder{Split::train, Split::val, Split::test};
    for (const auto& city : remaining) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < 3; ++s) {
            if (target[s] - load[s] > target[best] - load[best]) {
                best = s;
            }
        }
        assignment[city] = kOrder[best];
        load[best] += static_cast<double>(city_size[city]);
    }

    CorpusManifest out;
    out.root = manifest.root;
    out.feature_dim = manifest.feature_dim;
    for (const auto& e : manifest.entries) {
        if (assignment.contains(e.city)) {
            out.entries.push_back(e);
        }
    }
    out.city_split = std::move(assignment);
    return out;
}

std::vector<Utterance> load_batch(const CorpusManifest& manifest, std::span<const std::string> ids) {
    std::unordered_map<std::string, const ManifestEntry*> index;
    index.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        index.emplace(e.id, &e);
    }
    std::vector<Utterance> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const auto it = index.find(id);
        if (it == index.end()) {
            throw std::runtime_error("unknown utterance: " + id);
        }
        const ManifestEntry& e = *it->second;
        io::FeatureBlock block = io::read_feature_file(manifest.root / e.path);
        if (block.cols != manifest.feature_dim) {
            throw std::runtime_error("dimension mismatch in " + e.path + ": file F=" + std::to_string(block.cols) +
                                     ", manifest F=" + std::to_string(manifest.feature_dim));
        }
        if (block.rows != e.num_frames || block.rows == 0) {
            throw std::runtime_error("header mismatch in " + e.path + ": file T=" + std::to_string(block.rows) +
                                     ", manifest T=" + std::to_string(e.num_frames));
        }
        for (float v : block.values) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("non-finite feature value (NaN) in " + e.path);
            }
        }
        Utterance utt;
        utt.id = e.id;
        utt.region = e.region;
        utt.city = e.city;
        utt.speaker = e.speaker;
        utt.sentence_id = e.sentence_id;
        utt.num_frames = block.rows;
        utt.feature_dim = block.cols;
        utt.frames = std::move(block.values);
        out.push_back(std::move(utt));
    }
    return out;
}

std::string format_manifest(const CorpusManifest& manifest) {
    std::ostringstream out;
    out << "#F=" << manifest.feature_dim << '\n';
    for (const auto& e : manifest.entries) {
        out << e.id << '|' << e.region << '|' << e.city << '|' << e.speaker << '|' << e.sentence_id << '|' << e.path
            << '|' << e.num_frames << '\n';
    }
    return out.str();
}

std::string format_splits(const CorpusManifest& manifest) {
    std::ostringstream out;
    for (const auto& [city, split] : manifest.city_split) {
        out << city << '|' << split_name(split) << '\n';
    }
    return out.str();
}

void write_manifest(const CorpusManifest& manifest, const std::filesystem::path& dir) {
    io::write_text_file(dir / kManifestFile, format_manifest(manifest));
    if (!manifest.city_split.empty()) {
        io::write_text_file(dir / kSplitFile, format_splits(manifest));
    }
}

CorpusManifest read_manifest(const std::filesystem::path& dir) {
    CorpusManifest manifest;
    manifest.root = dir;
    std::istringstream in(io::read_text_file(dir / kManifestFile));
    std::string line;
    if (!std::getline(in, line) || line.rfind("#F=", 0) != 0) {
        throw std::runtime_error("manifest header '#F=<dim>' missing in " + (dir / kManifestFile).string());
    }
    manifest.feature_dim = parse_u32(line.substr(3), "feature_dim");
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto f = split_fields(line, '|');
        if (f.size() != 7) {
            throw std::runtime_error("manifest line must have 7 fields: " + line);
        }
        ManifestEntry e{f[0], f[1], f[2], f[3], parse_u32(f[4], "sentence_id"), f[5], parse_u32(f[6], "T")};
        manifest.entries.push_back(std::move(e));
    }
    if (std::filesystem::exists(dir / kSplitFile)) {
        std::istringstream sin(io::read_text_file(dir / kSplitFile));
        while (std::getline(sin, line)) {
            if (line.empty()) {
                continue;
            }
            const auto f = split_fields(line, '|');
            if (f.size() != 2) {
                throw std::runtime_error("split line must be city|split: " + line);
            }
            manifest.city_split[f[0]] = parse_split(f[1]);
        }
    }
    return manifest;
}

} // namespace slv

namespace slv {

LabeledSet make_labeled_set(std::span<const Utterance> utterances, const std::vector<std::string>& region_names) {
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < region_names.size(); ++i) {
        index.emplace(region_names[i], static_cast<int>(i));
    }
    LabeledSet set;
    set.region_names = region_names;
    for (const auto& utt : utterances) {
        const auto it = index.find(utt.region);
        if (it == index.end()) {
            throw std::invalid_argument("utterance " + utt.id + " has region '" + utt.region +
                                        "' outside the label space");
        }
        Matrix m(utt.num_frames, utt.feature_dim);
        for (std::size_t i = 0; i < utt.frames.size(); ++i) {
            m.data()[i] = static_cast<double>(utt.frames[i]);
        }
        set.ids.push_back(utt.id);
        set.frames.push_back(std::move(m));
        set.labels.push_back(it->second);
    }
    return set;
}

namespace {

std::vector<std::string> split_ids(const CorpusManifest& manifest, Split split) {
    std::vector<std::string> ids;
    for (const ManifestEntry* e : manifest.entries_in(split)) {
        ids.push_back(e->id);
    }
    return ids;
}

void require_splits(const CorpusManifest& manifest) {
    if (manifest.city_split.empty()) {
        throw std::invalid_argument("corpus has no split assignment");
    }
}

} // namespace

CorpusSplits load_splits(const CorpusManifest& manifest) {
    require_splits(manifest);
    CorpusSplits out;
    out.regions = manifest.regions();
    const auto load = [&](Split s) {
        const auto ids = split_ids(manifest, s);
        const auto utts = load_batch(manifest, ids);
        return make_labeled_set(utts, out.regions);
    };
    out.train = load(Split::train);
    out.val = load(Split::val);
    out.test = load(Split::test);
    return out;
}

CorpusSplits assemble_splits(const CorpusManifest& manifest, std::span<const Utterance> utterances) {
    require_splits(manifest);
    std::unordered_map<std::string, const Utterance*> by_id;
    for (const auto& u : utterances) {
        by_id.emplace(u.id, &u);
    }
    CorpusSplits out;
    out.regions = manifest.regions();
    const auto gather = [&](Split s) {
        std::vector<Utterance> utts;
        for (const auto& id : split_ids(manifest, s)) {
            const auto it = by_id.find(id);
            if (it == by_id.end()) {
                throw std::runtime_error("unknown utterance: " + id);
            }
            utts.push_back(*it->second);
        }
        return make_labeled_set(utts, out.regions);
    };
    out.train = gather(Split::train);
    out.val = gather(Split::val);
    out.test = gather(Split::test);
    return out;
}

} // namespace slv
