#include "slvid/cli.hpp"

#include "slvid/analysis.hpp"
#include "slvid/binary_io.hpp"
#include "slvid/config.hpp"
#include "slvid/dataset.hpp"
#include "slvid/evaluation.hpp"
#include "slvid/training.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <map>
#include <sstream>

namespace slv::cli {

namespace {

namespace fs = std::filesystem;

struct KeySpec {
    const char* key;
    const char* help;
};

constexpr KeySpec kSyntheticKeys[] = {
    {"regions", "number of regions"},
    {"cities_per_region", "cities per region (>= 3)"},
    {"speakers_per_city", "speakers per city"},
    {"sentences", "number of shared sentences"},
    {"repeats", "recordings per (speaker, sentence)"},
    {"latent_dim", "latent dimension D"},
    {"feature_dim", "frame feature dimension F"},
    {"frames_mean", "mean frames per utterance"},
    {"frames_jitter", "max deviation from frames_mean"},
    {"sigma_region", "region centroid spread"},
    {"sigma_city", "city offset spread"},
    {"sigma_speaker", "speaker offset spread"},
    {"sigma_sentence", "sentence pattern spread"},
    {"sigma_noise", "per-frame noise"},
    {"seed", "generator seed"},
};

constexpr KeySpec kSplitKeys[] = {
    {"split_train", "train sample fraction"},
    {"split_val", "validation sample fraction"},
    {"split_test", "test sample fraction"},
    {"split_seed", "split seed"},
};

constexpr KeySpec kRunKeys[] = {
    {"regime", "clf | ctr-pt | ctr-ft | ctr-pt+clf | ctr-pt+ctr-ft"},
    {"loss", "sc | tm | ms"},
    {"seeds", "comma-separated training seeds"},
    {"ctr_weight", "weight of the auxiliary contrastive term"},
    {"batch_size", "batch size"},
    {"max_epochs", "epochs per phase"},
    {"hidden_dim", "encoder width H"},
    {"lr", "peak learning rate"},
    {"weight_decay", "decoupled weight decay"},
    {"adam_beta1", "AdamW beta1"},
    {"adam_beta2", "AdamW beta2"},
    {"adam_eps", "AdamW epsilon"},
    {"warmup_fraction", "fraction of steps spent warming up"},
    {"tau", "SC temperature"},
    {"margin", "TM margin"},
    {"alpha", "MS positive scale"},
    {"beta", "MS negative scale"},
    {"lambda", "MS similarity offset"},
    {"epsilon", "MS mining slack"},
    {"similarity", "cosine | dot (normalization before SC/MS)"},
    {"supcon_denominator", "negatives_only | all"},
};

constexpr KeySpec kTsneKeys[] = {
    {"perplexity", "t-SNE perplexity"},
    {"tsne_iter", "t-SNE iterations"},
    {"tsne_lr", "t-SNE learning rate"},
    {"tsne_seed", "t-SNE seed"},
};

std::string dashed(const char* key) {
    std::string s = key;
    std::replace(s.begin(), s.end(), '_', '-');
    return "--" + s;
}

// Options whose values land in a KeyValueConfig when given.
class KeyOptions {
public:
    void add(CLI::App& app, std::span<const KeySpec> keys) {
        for (const auto& k : keys) {
            app.add_option(dashed(k.key), values_[k.key], k.help);
            names_.emplace_back(k.key);
        }
    }

    KeyValueConfig collect(const CLI::App& app) const {
        KeyValueConfig kv;
        for (const auto& name : names_) {
            if (app.count(dashed(name.c_str())) > 0) {
                kv.set(name, values_.at(name));
            }
        }
        return kv;
    }

private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> names_;
};

KeyValueConfig resolve(const std::string& config_path, const KeyValueConfig& flags) {
    KeyValueConfig kv;
    if (!config_path.empty()) {
        kv = KeyValueConfig::from_file(config_path);
    }
    kv.merge(flags);
    return kv;
}

struct LoadedCorpus {
    CorpusSplits splits;
    std::string description;
};

LoadedCorpus load_corpus(const std::string& corpus_dir, const KeyValueConfig& kv, KeyValueConfig& resolved) {
    const SplitSettings split = split_settings_from(kv);
    put_split_settings(resolved, split);
    LoadedCorpus out;
    if (!corpus_dir.empty()) {
        CorpusManifest manifest = read_manifest(corpus_dir);
        if (manifest.city_split.empty()) {
            manifest = build_splits(manifest, split.fractions, split.seed);
        }
        out.splits = load_splits(manifest);
        resolved.set("corpus", corpus_dir);
    } else {
        const SyntheticConfig syn = synthetic_config_from(kv);
        put_synthetic_config(resolved, syn);
        const SyntheticCorpus corpus = synthesize_corpus(syn);
        const CorpusManifest manifest = build_splits(corpus.manifest, split.fractions, split.seed);
        out.splits = assemble_splits(manifest, corpus.utterances);
        resolved.set("corpus", "synthetic");
    }
    return out;
}

int cmd_gen(const KeyValueConfig& kv, const std::string& out_dir, std::ostream& out) {
    const SyntheticConfig syn = synthetic_config_from(kv);
    const SplitSettings split = split_settings_from(kv);
    KeyValueConfig resolved;
    put_synthetic_config(resolved, syn);
    put_split_settings(resolved, split);

    const CorpusManifest generated = generate_corpus(syn, out_dir);
    const CorpusManifest with_splits = build_splits(generated, split.fractions, split.seed);
    write_manifest(with_splits, out_dir);
    io::write_text_file(fs::path(out_dir) / "config.used", resolved.to_text());

    std::size_t counts[3] = {0, 0, 0};
    for (const auto& [city, s] : with_splits.city_split) {
        ++counts[static_cast<int>(s)];
    }
    out << "generated " << with_splits.entries.size() << " utterances, " << with_splits.regions().size()
        << " regions; cities train/val/test = " << counts[0] << '/' << counts[1] << '/' << counts[2] << '\n';
    return kExitOk;
}

int cmd_train(const KeyValueConfig& kv, const std::string& corpus_dir, const std::string& out_dir, std::ostream& out) {
    const RunConfig cfg = run_config_from(kv);
    KeyValueConfig resolved;
    put_run_config(resolved, cfg);
    const LoadedCorpus corpus = load_corpus(corpus_dir, kv, resolved);

    fs::create_directories(out_dir);
    io::write_text_file(fs::path(out_dir) / "config.used", resolved.to_text());
    std::vector<EvalReport> reports;
    for (std::uint64_t seed : cfg.seeds) {
        const RunResult result = run_regime(corpus.splits, cfg, seed);
        KeyValueConfig seed_cfg = resolved;
        seed_cfg.set("run_seed", std::to_string(seed));
        write_run_dir(fs::path(out_dir) / ("seed_" + std::to_string(seed)), result, corpus.splits, seed_cfg.to_text());
        out << "seed " << seed << ": accuracy " << format_percent(result.test_report.accuracy) << ", macro-F1 "
            << format_percent(result.test_report.macro_f1) << '\n';
        reports.push_back(result.test_report);
    }
    const EvalReport agg = aggregate(reports);
    io::write_text_file(fs::path(out_dir) / "aggregate_report.tsv", format_report_tsv(agg));
    out << regime_name(cfg.regime.kind) << '/' << loss_name(cfg.regime.loss) << " over " << reports.size()
        << " seeds: accuracy " << format_percent(agg.accuracy) << ", macro-F1 " << format_percent(agg.macro_f1) << '\n';
    return kExitOk;
}

std::vector<fs::path> seed_dirs(const fs::path& run) {
    std::vector<fs::path> dirs;
    if (fs::exists(run / "test_report.tsv")) {
        dirs.push_back(run);
        return dirs;
    }
    if (fs::is_directory(run)) {
        for (const auto& e : fs::directory_iterator(run)) {
            if (e.is_directory() && fs::exists(e.path() / "test_report.tsv")) {
                dirs.push_back(e.path());
            }
        }
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) {
        throw std::runtime_error("no run outputs found in " + run.string());
    }
    return dirs;
}

std::string run_name(const fs::path& run) {
    fs::path p = run;
    if (!p.has_filename()) {
        p = p.parent_path();
    }
    return p.filename().string();
}

int cmd_report(const KeyValueConfig& kv, const std::vector<std::string>& runs, const std::string& out_dir, bool want_tsne,
               bool want_confusion, bool raw_counts, std::ostream& out) {
    const TsneConfig tsne_cfg = tsne_config_from(kv);
    fs::create_directories(out_dir);

    std::ostringstream table;
    table << "run\tloss\tCtr-PT\tCtr-FT\tClf-FT\taccuracy\tmacro_f1\tn_runs\n";
    for (const auto& run_arg : runs) {
        const fs::path run(run_arg);
        const auto dirs = seed_dirs(run);
        std::vector<EvalReport> reports;
        for (const auto& d : dirs) {
            reports.push_back(parse_report_tsv(io::read_text_file(d / "test_report.tsv")));
        }
        const EvalReport agg = aggregate(reports);
        const KeyValueConfig used = KeyValueConfig::from_file(dirs.front() / "config.used");
        const RunConfig rc = run_config_from(used);
        const bool pt = rc.regime.has_pretraining();
        const bool ctr_ft = rc.regime.fine_tune_contrastive();
        const bool clf_ft = rc.regime.kind == RegimeKind::clf_only || rc.regime.kind == RegimeKind::ctr_pt_then_clf;
        const std::string name = run_name(run);
        table << name << '\t' << loss_name(rc.regime.loss) << '\t' << (pt ? "x" : "-") << '\t' << (ctr_ft ? "x" : "-")
              << '\t' << (clf_ft ? "x" : "-") << '\t' << format_percent(agg.accuracy) << '\t'
              << format_percent(agg.macro_f1) << '\t' << agg.n_runs << '\n';

        if (want_confusion) {
            io::write_text_file(fs::path(out_dir) / ("confusion_" + name + ".svg"),
                                render_confusion(agg.confusion, !raw_counts));
        }
        if (want_tsne) {
            const fs::path first = dirs.front();
            const io::FeatureBlock emb = io::read_feature_file(first / "embeddings.slv1");
            Matrix x(emb.rows, emb.cols);
            for (std::size_t i = 0; i < emb.values.size(); ++i) {
                x.data()[i] = emb.values[i];
            }
            std::vector<std::string> labels;
            std::istringstream lin(io::read_text_file(first / "embeddings.labels"));
            std::string line;
            while (std::getline(lin, line)) {
                if (!line.empty()) {
                    labels.push_back(line.substr(line.rfind('|') + 1));
                }
            }
            const Projection proj = tsne(x, labels, tsne_cfg);
            io::write_text_file(fs::path(out_dir) / ("tsne_" + name + ".svg"), render_scatter(proj));
        }
    }
    io::write_text_file(fs::path(out_dir) / "report.tsv", table.str());
    out << table.str();
    return kExitOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Region identification with supervised contrastive objectives", "slvid"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all help");

    std::string config_path;
    std::string out_dir;
    std::string corpus_dir;
    std::vector<std::string> runs;
    bool want_tsne = false;
    bool want_confusion = false;
    bool raw_counts = false;

    auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus with city-disjoint splits");
    KeyOptions gen_keys;
    gen->add_option("--config", config_path, "key = value config file");
    gen->add_option("--out", out_dir, "output corpus directory")->required();
    gen_keys.add(*gen, kSyntheticKeys);
    gen_keys.add(*gen, kSplitKeys);

    auto* train = app.add_subcommand("train", "Train one regime over several seeds");
    KeyOptions train_keys;
    train->add_option("--config", config_path, "key = value config file");
    train->add_option("--corpus", corpus_dir, "corpus directory (default: synthesize in memory)");
    train->add_option("--out", out_dir, "output directory")->required();
    train_keys.add(*train, kRunKeys);
    train_keys.add(*train, kSyntheticKeys);
    train_keys.add(*train, kSplitKeys);

    auto* report = app.add_subcommand("report", "Tabulate runs and render t-SNE / confusion figures");
    KeyOptions report_keys;
    report->add_option("--config", config_path, "key = value config file");
    report->add_option("--runs", runs, "run directories written by train")->required();
    report->add_option("--out", out_dir, "output directory (default: .)");
    report->add_flag("--tsne", want_tsne, "render tsne_<run>.svg");
    report->add_flag("--confusion", want_confusion, "render confusion_<run>.svg");
    report->add_flag("--raw-counts", raw_counts, "shade confusion cells by raw counts instead of row-normalized");
    report_keys.add(*report, kTsneKeys);

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kExitConfigError;
    }

    try {
        if (gen->parsed()) {
            return cmd_gen(resolve(config_path, gen_keys.collect(*gen)), out_dir, out);
        }
        if (train->parsed()) {
            return cmd_train(resolve(config_path, train_keys.collect(*train)), corpus_dir, out_dir, out);
        }
        if (report->parsed()) {
            return cmd_report(resolve(config_path, report_keys.collect(*report)), runs,
                              out_dir.empty() ? std::string(".") : out_dir, want_tsne, want_confusion, raw_counts, out);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntimeError;
    }
    return kExitConfigError;
}

} // namespace slv::cli
