#include "slvid/training.hpp"

#include "slvid/binary_io.hpp"
#include "slvid/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace slv {

namespace {

constexpr std::array<char, 4> kCheckpointMagic{'S', 'L', 'V', 'M'};

bool contrastive_in_phase(Phase phase, const Regime& regime) {
    return phase == Phase::contrastive_pretraining || regime.fine_tune_contrastive();
}

// A zero-weight auxiliary term changes nothing, so it does not trigger the
// small-batch skip either.
bool contrastive_effective(Phase phase, const Regime& regime) {
    return phase == Phase::contrastive_pretraining || (regime.fine_tune_contrastive() && regime.ctr_weight != 0.0);
}

bool uses_normalized_embeddings(const RunConfig& cfg) {
    return cfg.regime.loss != LossKind::tm && cfg.contrastive.similarity == Similarity::cosine;
}

std::vector<std::size_t> sizes_of(const EncoderParams& p) {
    std::vector<std::size_t> out;
    for (const auto& t : p.tensors()) {
        out.push_back(t.size());
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

bool Regime::has_pretraining() const {
    return kind == RegimeKind::ctr_pt_only || kind == RegimeKind::ctr_pt_then_ctr_ft || kind == RegimeKind::ctr_pt_then_clf;
}

bool Regime::fine_tune_contrastive() const {
    return kind == RegimeKind::ctr_ft || kind == RegimeKind::ctr_pt_then_ctr_ft;
}

std::string regime_name(RegimeKind kind) {
    switch (kind) {
    case RegimeKind::clf_only: return "clf";
    case RegimeKind::ctr_pt_only: return "ctr-pt";
    case RegimeKind::ctr_ft: return "ctr-ft";
    case RegimeKind::ctr_pt_then_ctr_ft: return "ctr-pt+ctr-ft";
    case RegimeKind::ctr_pt_then_clf: return "ctr-pt+clf";
    }
    return "?";
}

RegimeKind parse_regime(const std::string& name) {
    for (RegimeKind k : {RegimeKind::clf_only, RegimeKind::ctr_pt_only, RegimeKind::ctr_ft,
                         RegimeKind::ctr_pt_then_ctr_ft, RegimeKind::ctr_pt_then_clf}) {
        if (regime_name(k) == name) {
            return k;
        }
    }
    throw std::invalid_argument("unknown regime '" + name + "' (valid: clf, ctr-pt, ctr-ft, ctr-pt+clf, ctr-pt+ctr-ft)");
}

std::string loss_name(LossKind loss) {
    switch (loss) {
    case LossKind::sc: return "sc";
    case LossKind::tm: return "tm";
    case LossKind::ms: return "ms";
    }
    return "?";
}

LossKind parse_loss(const std::string& name) {
    if (name == "sc") return LossKind::sc;
    if (name == "tm") return LossKind::tm;
    if (name == "ms") return LossKind::ms;
    throw std::invalid_argument("unknown loss '" + name + "' (valid: sc, tm, ms)");
}

const char* phase_name(Phase p) { return p == Phase::contrastive_pretraining ? "ctr-pt" : "fine-tune"; }

void RunConfig::validate() const {
    contrastive.validate();
    if (batch_size == 0 || max_epochs == 0 || hidden_dim == 0) {
        throw std::invalid_argument("run config: batch_size, max_epochs and hidden_dim must be >= 1");
    }
    const bool any_contrastive = regime.has_pretraining() || regime.fine_tune_contrastive();
    if (any_contrastive && batch_size < 2) {
        throw std::invalid_argument("contrastive requires batch >= 2");
    }
    if (!(regime.ctr_weight >= 0.0) || !std::isfinite(regime.ctr_weight)) {
        throw std::invalid_argument("run config: ctr_weight must be finite and >= 0");
    }
    if (seeds.empty()) {
        throw std::invalid_argument("run config: at least one seed is required");
    }
    if (!(optimizer.peak_lr > 0.0) || !(optimizer.weight_decay >= 0.0) || !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
        !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) || !(optimizer.eps > 0.0)) {
        throw std::invalid_argument("run config: invalid optimizer hyperparameters");
    }
}

BatchLoss batch_loss(const EncoderParams& params, const LabeledSet& data, std::span<const std::size_t> indices,
                     Phase phase, const RunConfig& cfg, EncoderParams* grads) {
    const std::size_t m = indices.size();
    const bool classification = phase == Phase::fine_tuning;
    const bool contrastive = contrastive_in_phase(phase, cfg.regime);
    BatchLoss out;
    if (m == 0 || (m < 2 && contrastive_effective(phase, cfg.regime))) {
        out.skipped = true;
        return out;
    }
    const std::size_t H = params.hidden_dim;

    std::vector<ForwardResult> fwd;
    fwd.reserve(m);
    for (std::size_t idx : indices) {
        fwd.push_back(forward(params, data.frames[idx]));
    }

    std::vector<std::vector<double>> grad_logits(m);
    if (classification) {
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t b = 0; b < m; ++b) {
            CrossEntropy ce = cross_entropy(fwd[b].logits, static_cast<std::size_t>(data.labels[indices[b]]));
            out.ce += ce.loss;
            for (double& g : ce.grad_logits) {
                g *= inv_m;
            }
            grad_logits[b] = std::move(ce.grad_logits);
        }
        out.ce *= inv_m;
    }

    std::vector<std::vector<double>> grad_pooled(m);
    out.total = out.ce;
    if (contrastive && m >= 2) {
        const double weight = phase == Phase::contrastive_pretraining ? 1.0 : cfg.regime.ctr_weight;
        const bool normalize = uses_normalized_embeddings(cfg);
        // All-zero pooled embeddings (every unit dead) have no direction; they
        // sit out the contrastive term.
        std::vector<std::size_t> members;
        for (std::size_t b = 0; b < m; ++b) {
            double sq = 0.0;
            for (double v : fwd[b].pooled) {
                sq += v * v;
            }
            if (!normalize || std::sqrt(sq) > kMinEmbeddingNorm) {
                members.push_back(b);
            }
        }
        out.degenerate = m - members.size();
        if (members.size() >= 2) {
            const std::size_t k = members.size();
            std::vector<Normalized> norms;
            Matrix z(k, H);
            std::vector<int> labels(k);
            for (std::size_t r = 0; r < k; ++r) {
                const std::size_t b = members[r];
                labels[r] = data.labels[indices[b]];
                if (normalize) {
                    norms.push_back(l2_normalize(fwd[b].pooled));
                    std::copy(norms.back().unit.begin(), norms.back().unit.end(), z.row(r).begin());
                } else {
                    std::copy(fwd[b].pooled.begin(), fwd[b].pooled.end(), z.row(r).begin());
                }
            }
            LossOutput lo;
            switch (cfg.regime.loss) {
            case LossKind::sc: lo = sc_loss(z, mine(labels), cfg.contrastive); break;
            case LossKind::tm: lo = tm_loss(z, mine(labels), cfg.contrastive); break;
            case LossKind::ms: lo = ms_loss(z, labels, cfg.contrastive); break;
            }
            out.ctr = lo.value;
            if (grads != nullptr) {
                for (std::size_t r = 0; r < k; ++r) {
                    std::vector<double> g(lo.grad.row(r).begin(), lo.grad.row(r).end());
                    if (normalize) {
                        g = l2_normalize_backward(norms[r], g);
                    }
                    for (double& v : g) {
                        v *= weight;
                    }
                    grad_pooled[members[r]] = std::move(g);
                }
            }
        }
        out.total = phase == Phase::contrastive_pretraining ? out.ctr : out.ce + weight * out.ctr;
    }

    if (grads != nullptr) {
        for (std::size_t b = 0; b < m; ++b) {
            accumulate_backward(params, fwd[b].cache, grad_pooled[b], grad_logits[b], *grads);
        }
    }
    return out;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

EpochStats train_epoch(ModelState& state, const LabeledSet& train, Phase phase, const RunConfig& cfg,
                       std::uint64_t seed, std::size_t epoch) {
    if (train.empty()) {
        throw std::invalid_argument("train_epoch: empty training split");
    }
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_stream(seed, {0x7a1, static_cast<std::uint64_t>(phase), epoch});
    std::shuffle(order.begin(), order.end(), rng);

    EncoderParams& params = state.params;
    EpochStats stats;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        const std::span<const std::size_t> batch(order.data() + start, stop - start);
        EncoderParams grads = params.zeros_like();
        const BatchLoss bl = batch_loss(params, train, batch, phase, cfg, &grads);
        if (bl.skipped) {
            ++stats.skipped_batches;
            continue;
        }
        stats.train_ce += bl.ce;
        stats.train_ctr += bl.ctr;
        stats.train_total += bl.total;
        ++stats.batches;

        const auto values = params.tensors();
        const auto gvalues = std::as_const(grads).tensors();
        std::array<ParamSlot, EncoderParams::kNumTensors> slots;
        std::array<std::span<const double>, EncoderParams::kNumTensors> gspans;
        for (std::size_t k = 0; k < EncoderParams::kNumTensors; ++k) {
            const bool head = EncoderParams::is_head_tensor(k);
            slots[k] = ParamSlot{EncoderParams::kTensorNames[k], values[k], EncoderParams::kTensorNames[k] != "head_b",
                                 !(head && phase == Phase::contrastive_pretraining)};
            gspans[k] = gvalues[k];
        }
        adamw_step(slots, gspans, state.optimizer);
        ++params.version;
    }
    if (stats.batches > 0) {
        const double n = static_cast<double>(stats.batches);
        stats.train_ce /= n;
        stats.train_ctr /= n;
        stats.train_total /= n;
    }
    return stats;
}

double validation_loss(const EncoderParams& params, const LabeledSet& val, Phase phase, const RunConfig& cfg) {
    if (val.empty()) {
        throw std::invalid_argument("validation_loss: empty validation split");
    }
    std::vector<std::size_t> order(val.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        const BatchLoss bl =
            batch_loss(params, val, std::span<const std::size_t>(order.data() + start, stop - start), phase, cfg, nullptr);
        if (bl.skipped) {
            continue;
        }
        sum += bl.total;
        ++batches;
    }
    if (batches == 0) {
        throw std::invalid_argument("validation_loss: every validation batch was skipped");
    }
    return sum / static_cast<double>(batches);
}

std::size_t select_best(std::span<const double> val_losses) {
    if (val_losses.empty()) {
        throw std::invalid_argument("select_best: no completed epochs");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < val_losses.size(); ++i) {
        if (val_losses[i] < val_losses[best]) {
            best = i;
        }
    }
    return best;
}

PhaseResult run_phase(const EncoderParams& init, const CorpusSplits& data, Phase phase, const RunConfig& cfg,
                      std::uint64_t seed, std::size_t epoch_offset) {
    const std::uint64_t total_steps = cfg.max_epochs * batches_per_epoch(data.train.size(), cfg.batch_size);
    ModelState state{init, OptimizerState(cfg.optimizer,
                                          LrSchedule::warmup_linear(cfg.optimizer.peak_lr, total_steps,
                                                                    cfg.optimizer.warmup_fraction),
                                          sizes_of(init))};
    PhaseResult result;
    std::vector<double> val_losses;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const EpochStats st = train_epoch(state, data.train, phase, cfg, seed, epoch);
        const double vl = validation_loss(state.params, data.val, phase, cfg);
        val_losses.push_back(vl);
        result.history.push_back({epoch_offset + epoch, phase, st.train_ce, st.train_ctr, vl, st.skipped_batches});
        result.checkpoints.push_back(state);
    }
    result.best_index = select_best(val_losses);
    result.best = result.checkpoints[result.best_index];
    return result;
}

EncoderParams initial_params(const CorpusSplits& data, const RunConfig& cfg, std::uint64_t seed) {
    if (data.train.empty()) {
        throw std::invalid_argument("training split is empty");
    }
    return EncoderParams::glorot(data.train.frames.front().cols(), cfg.hidden_dim, data.regions.size(),
                                 stream_seed(seed, {0x1a17}));
}

RunResult run_regime(const CorpusSplits& data, const RunConfig& cfg, std::uint64_t seed, const EncoderParams* init) {
    cfg.validate();
    if (data.val.empty() || data.test.empty()) {
        throw std::invalid_argument("run_regime: validation and test splits must be non-empty");
    }
    EncoderParams params = init != nullptr ? *init : initial_params(data, cfg, seed);
    if (params.num_regions != data.regions.size()) {
        throw std::invalid_argument("run_regime: encoder region count does not match the corpus");
    }

    RunResult out;
    std::optional<ModelState> best;
    const auto absorb = [&](PhaseResult&& pr) {
        out.history.insert(out.history.end(), pr.history.begin(), pr.history.end());
        for (auto& ck : pr.checkpoints) {
            out.checkpoints.push_back(std::move(ck));
        }
        best = std::move(pr.best);
    };
    if (cfg.regime.has_pretraining()) {
        absorb(run_phase(params, data, Phase::contrastive_pretraining, cfg, seed, out.history.size()));
        params = best->params;
    }
    if (cfg.regime.has_fine_tuning()) {
        absorb(run_phase(params, data, Phase::fine_tuning, cfg, seed, out.history.size()));
    }
    out.best = std::move(*best);

    out.test_report = evaluate(out.best.params, data.test);
    out.test_embeddings = Matrix(data.test.size(), out.best.params.hidden_dim);
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        const ForwardResult fr = forward(out.best.params, data.test.frames[i]);
        std::copy(fr.pooled.begin(), fr.pooled.end(), out.test_embeddings.row(i).begin());
    }
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const ModelState& state) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path.string());
    }
    const EncoderParams& p = state.params;
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    io::write_u32(out, kCheckpointVersion);
    io::write_u32(out, static_cast<std::uint32_t>(p.input_dim));
    io::write_u32(out, static_cast<std::uint32_t>(p.hidden_dim));
    io::write_u32(out, static_cast<std::uint32_t>(p.num_regions));
    for (const auto& t : p.tensors()) {
        for (double v : t) {
            io::write_f32(out, static_cast<float>(v));
        }
    }
    const auto sizes = sizes_of(p);
    for (const auto* moments : {&state.optimizer.first_moment, &state.optimizer.second_moment}) {
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            for (std::size_t i = 0; i < sizes[k]; ++i) {
                const double v = k < moments->size() ? (*moments)[k][i] : 0.0;
                io::write_f32(out, static_cast<float>(v));
            }
        }
    }
    io::write_u64(out, state.optimizer.step);
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

ModelState read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("missing checkpoint: " + path.string());
    }
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kCheckpointMagic) {
        throw std::runtime_error("bad checkpoint magic: " + path.string());
    }
    if (io::read_u32(in) != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version: " + path.string());
    }
    const std::size_t F = io::read_u32(in);
    const std::size_t H = io::read_u32(in);
    const std::size_t R = io::read_u32(in);
    ModelState state{EncoderParams::zeros(F, H, R), {}};
    for (auto t : state.params.tensors()) {
        for (double& v : t) {
            v = io::read_f32(in);
        }
    }
    const auto sizes = sizes_of(state.params);
    for (auto* moments : {&state.optimizer.first_moment, &state.optimizer.second_moment}) {
        for (std::size_t n : sizes) {
            std::vector<double> m(n);
            for (double& v : m) {
                v = io::read_f32(in);
            }
            moments->push_back(std::move(m));
        }
    }
    state.optimizer.step = io::read_u64(in);
    return state;
}

std::string format_metrics_tsv(std::span<const EpochRecord> history) {
    std::ostringstream out;
    out << "epoch\tphase\ttrain_ce\ttrain_ctr\tval_loss\n";
    for (const auto& r : history) {
        out << r.epoch << '\t' << phase_name(r.phase) << '\t' << format_double(r.train_ce) << '\t'
            << format_double(r.train_ctr) << '\t' << format_double(r.val_loss) << '\n';
    }
    return out.str();
}

void write_run_dir(const std::filesystem::path& dir, const RunResult& result, const CorpusSplits& data,
                   const std::string& resolved_config) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw std::runtime_error("cannot create run directory: " + dir.string());
    }
    io::write_text_file(dir / "config.used", resolved_config);
    for (std::size_t i = 0; i < result.checkpoints.size(); ++i) {
        write_checkpoint(dir / ("epoch_" + std::to_string(result.history[i].epoch) + ".ckpt"), result.checkpoints[i]);
    }
    write_checkpoint(dir / "best.ckpt", result.best);
    io::write_text_file(dir / "metrics.tsv", format_metrics_tsv(result.history));
    io::write_text_file(dir / "test_report.tsv", format_report_tsv(result.test_report));

    io::FeatureBlock block;
    block.rows = static_cast<std::uint32_t>(result.test_embeddings.rows());
    block.cols = static_cast<std::uint32_t>(result.test_embeddings.cols());
    for (double v : result.test_embeddings.data()) {
        block.values.push_back(static_cast<float>(v));
    }
    io::write_feature_file(dir / "embeddings.slv1", block);

    std::ostringstream labels;
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        labels << i << '|' << data.test.ids[i] << '|' << data.regions[static_cast<std::size_t>(data.test.labels[i])]
               << '\n';
    }
    io::write_text_file(dir / "embeddings.labels", labels.str());
}

} // namespace slv
