#include "slvid/config.hpp"

#include "slvid/binary_io.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace slv {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string to_text(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
    T v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + text + "'");
    }
    return v;
}

double parse_real(const std::string& key, const std::string& text) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty()) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
    }
    return v;
}

template <typename T>
void read_int(const KeyValueConfig& kv, const std::string& key, T& out) {
    if (const auto v = kv.get(key)) {
        out = parse_integer<T>(key, *v);
    }
}

void read_real(const KeyValueConfig& kv, const std::string& key, double& out) {
    if (const auto v = kv.get(key)) {
        out = parse_real(key, *v);
    }
}

template <typename F>
auto rethrow_as_config(F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

} // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
    KeyValueConfig kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        kv.set(key, trim(line.substr(eq + 1)));
    }
    return kv;
}

KeyValueConfig KeyValueConfig::from_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError("config file not found: " + path.string());
    }
    return parse(io::read_text_file(path));
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    return it->second;
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
    for (const auto& [k, v] : other.values_) {
        values_[k] = v;
    }
}

std::string KeyValueConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k + " = " + v + "\n";
    }
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        seeds.push_back(parse_integer<std::uint64_t>("seeds", trim(item)));
    }
    if (seeds.empty()) {
        throw ConfigError("config key 'seeds': empty list");
    }
    return seeds;
}

std::string format_seed_list(const std::vector<std::uint64_t>& seeds) {
    std::string out;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        out += (i ? "," : "") + std::to_string(seeds[i]);
    }
    return out;
}

SyntheticConfig synthetic_config_from(const KeyValueConfig& kv) {
    SyntheticConfig c;
    read_int(kv, "regions", c.n_regions);
    read_int(kv, "cities_per_region", c.cities_per_region);
    read_int(kv, "speakers_per_city", c.speakers_per_city);
    read_int(kv, "sentences", c.sentences);
    read_int(kv, "repeats", c.repeats);
    read_int(kv, "latent_dim", c.latent_dim);
    read_int(kv, "feature_dim", c.feature_dim);
    read_int(kv, "frames_mean", c.frames_mean);
    read_int(kv, "frames_jitter", c.frames_jitter);
    read_real(kv, "sigma_region", c.sigma_region);
    read_real(kv, "sigma_city", c.sigma_city);
    read_real(kv, "sigma_speaker", c.sigma_speaker);
    read_real(kv, "sigma_sentence", c.sigma_sentence);
    read_real(kv, "sigma_noise", c.sigma_noise);
    read_int(kv, "seed", c.seed);
    rethrow_as_config([&] { c.validate(); return 0; });
    return c;
}

SplitSettings split_settings_from(const KeyValueConfig& kv) {
    SplitSettings s;
    read_real(kv, "split_train", s.fractions.train);
    read_real(kv, "split_val", s.fractions.val);
    read_real(kv, "split_test", s.fractions.test);
    read_int(kv, "split_seed", s.seed);
    const auto& f = s.fractions;
    if (!(f.train > 0 && f.val > 0 && f.test > 0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be positive and sum to 1");
    }
    return s;
}

RunConfig run_config_from(const KeyValueConfig& kv) {
    RunConfig c;
    rethrow_as_config([&] {
        if (const auto v = kv.get("regime")) c.regime.kind = parse_regime(*v);
        if (const auto v = kv.get("loss")) c.regime.loss = parse_loss(*v);
        return 0;
    });
    read_real(kv, "ctr_weight", c.regime.ctr_weight);
    read_int(kv, "batch_size", c.batch_size);
    read_int(kv, "max_epochs", c.max_epochs);
    read_int(kv, "hidden_dim", c.hidden_dim);
    if (const auto v = kv.get("seeds")) c.seeds = parse_seed_list(*v);
    read_real(kv, "lr", c.optimizer.peak_lr);
    read_real(kv, "weight_decay", c.optimizer.weight_decay);
    read_real(kv, "adam_beta1", c.optimizer.beta1);
    read_real(kv, "adam_beta2", c.optimizer.beta2);
    read_real(kv, "adam_eps", c.optimizer.eps);
    read_real(kv, "warmup_fraction", c.optimizer.warmup_fraction);
    read_real(kv, "tau", c.contrastive.tau);
    read_real(kv, "margin", c.contrastive.margin);
    read_real(kv, "alpha", c.contrastive.alpha);
    read_real(kv, "beta", c.contrastive.beta);
    read_real(kv, "lambda", c.contrastive.lambda);
    read_real(kv, "epsilon", c.contrastive.epsilon);
    if (const auto v = kv.get("similarity")) {
        if (*v == "cosine") c.contrastive.similarity = Similarity::cosine;
        else if (*v == "dot") c.contrastive.similarity = Similarity::dot;
        else throw ConfigError("unknown similarity '" + *v + "' (valid: cosine, dot)");
    }
    if (const auto v = kv.get("supcon_denominator")) {
        if (*v == "negatives_only") c.contrastive.supcon_denominator = SupconDenominator::negatives_only;
        else if (*v == "all") c.contrastive.supcon_denominator = SupconDenominator::all;
        else throw ConfigError("unknown supcon_denominator '" + *v + "' (valid: negatives_only, all)");
    }
    rethrow_as_config([&] { c.validate(); return 0; });
    return c;
}

TsneConfig tsne_config_from(const KeyValueConfig& kv) {
    TsneConfig c;
    read_real(kv, "perplexity", c.perplexity);
    read_int(kv, "tsne_iter", c.n_iter);
    read_real(kv, "tsne_lr", c.learning_rate);
    read_int(kv, "tsne_seed", c.seed);
    if (!(c.perplexity > 1.0) || c.n_iter < 250 || !(c.learning_rate > 0.0)) {
        throw ConfigError("tsne: need perplexity > 1, tsne_iter >= 250, tsne_lr > 0");
    }
    return c;
}

void put_synthetic_config(KeyValueConfig& kv, const SyntheticConfig& c) {
    kv.set("regions", std::to_string(c.n_regions));
    kv.set("cities_per_region", std::to_string(c.cities_per_region));
    kv.set("speakers_per_city", std::to_string(c.speakers_per_city));
    kv.set("sentences", std::to_string(c.sentences));
    kv.set("repeats", std::to_string(c.repeats));
    kv.set("latent_dim", std::to_string(c.latent_dim));
    kv.set("feature_dim", std::to_string(c.feature_dim));
    kv.set("frames_mean", std::to_string(c.frames_mean));
    kv.set("frames_jitter", std::to_string(c.frames_jitter));
    kv.set("sigma_region", to_text(c.sigma_region));
    kv.set("sigma_city", to_text(c.sigma_city));
    kv.set("sigma_speaker", to_text(c.sigma_speaker));
    kv.set("sigma_sentence", to_text(c.sigma_sentence));
    kv.set("sigma_noise", to_text(c.sigma_noise));
    kv.set("seed", std::to_string(c.seed));
}

void put_split_settings(KeyValueConfig& kv, const SplitSettings& s) {
    kv.set("split_train", to_text(s.fractions.train));
    kv.set("split_val", to_text(s.fractions.val));
    kv.set("split_test", to_text(s.fractions.test));
    kv.set("split_seed", std::to_string(s.seed));
}

void put_run_config(KeyValueConfig& kv, const RunConfig& c) {
    kv.set("regime", regime_name(c.regime.kind));
    kv.set("loss", loss_name(c.regime.loss));
    kv.set("ctr_weight", to_text(c.regime.ctr_weight));
    kv.set("batch_size", std::to_string(c.batch_size));
    kv.set("max_epochs", std::to_string(c.max_epochs));
    kv.set("hidden_dim", std::to_string(c.hidden_dim));
    kv.set("seeds", format_seed_list(c.seeds));
    kv.set("lr", to_text(c.optimizer.peak_lr));
    kv.set("weight_decay", to_text(c.optimizer.weight_decay));
    kv.set("adam_beta1", to_text(c.optimizer.beta1));
    kv.set("adam_beta2", to_text(c.optimizer.beta2));
    kv.set("adam_eps", to_text(c.optimizer.eps));
    kv.set("warmup_fraction", to_text(c.optimizer.warmup_fraction));
    kv.set("tau", to_text(c.contrastive.tau));
    kv.set("margin", to_text(c.contrastive.margin));
    kv.set("alpha", to_text(c.contrastive.alpha));
    kv.set("beta", to_text(c.contrastive.beta));
    kv.set("lambda", to_text(c.contrastive.lambda));
    kv.set("epsilon", to_text(c.contrastive.epsilon));
    kv.set("similarity", c.contrastive.similarity == Similarity::cosine ? "cosine" : "dot");
    kv.set("supcon_denominator",
           c.contrastive.supcon_denominator == SupconDenominator::all ? "all" : "negatives_only");
}

void put_tsne_config(KeyValueConfig& kv, const TsneConfig& c) {
    kv.set("perplexity", to_text(c.perplexity));
    kv.set("tsne_iter", std::to_string(c.n_iter));
    kv.set("tsne_lr", to_text(c.learning_rate));
    kv.set("tsne_seed", std::to_string(c.seed));
}

} // namespace slv
