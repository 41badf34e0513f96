#pragma once

#include "slvid/contrastive.hpp"
#include "slvid/dataset.hpp"
#include "slvid/encoder.hpp"
#include "slvid/evaluation.hpp"
#include "slvid/optimizer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace slv {

enum class RegimeKind { clf_only, ctr_pt_only, ctr_ft, ctr_pt_then_ctr_ft, ctr_pt_then_clf };
enum class LossKind { sc, tm, ms };

struct Regime {
    RegimeKind kind = RegimeKind::clf_only;
    LossKind loss = LossKind::ms;
    double ctr_weight = 1.0;

    bool has_pretraining() const;
    bool has_fine_tuning() const { return kind != RegimeKind::ctr_pt_only; }
    bool fine_tune_contrastive() const;
};

// CLI spellings: clf, ctr-pt, ctr-ft, ctr-pt+clf, ctr-pt+ctr-ft / sc, tm, ms.
std::string regime_name(RegimeKind kind);
RegimeKind parse_regime(const std::string& name);
std::string loss_name(LossKind loss);
LossKind parse_loss(const std::string& name);

struct RunConfig {
    Regime regime;
    ContrastiveParams contrastive;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 10;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::size_t hidden_dim = 64;
    AdamWConfig optimizer;

    void validate() const;
};

enum class Phase { contrastive_pretraining, fine_tuning };
const char* phase_name(Phase p);

struct ModelState {
    EncoderParams params;
    OptimizerState optimizer;
};

struct BatchLoss {
    double ce = 0.0;     // mean cross-entropy over the batch
    double ctr = 0.0;    // contrastive loss of the batch
    double total = 0.0;  // ce + w * ctr (ctr alone during pre-training)
    bool skipped = false;
    std::size_t degenerate = 0;  // zero pooled embeddings left out of the contrastive term
};

// Loss of one batch and, when grads is non-null, its gradient added into grads.
// The contrastive path never reaches the classifier head.
BatchLoss batch_loss(const EncoderParams& params, const LabeledSet& data, std::span<const std::size_t> indices,
                     Phase phase, const RunConfig& cfg, EncoderParams* grads);

struct EpochStats {
    double train_ce = 0.0;
    double train_ctr = 0.0;
    double train_total = 0.0;
    std::size_t batches = 0;
    std::size_t skipped_batches = 0;
};

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size);

// Seeded shuffle, last short batch kept, one optimizer step per batch.
EpochStats train_epoch(ModelState& state, const LabeledSet& train, Phase phase, const RunConfig& cfg,
                       std::uint64_t seed, std::size_t epoch);

// Mean batch total loss over the split in index order.
double validation_loss(const EncoderParams& params, const LabeledSet& val, Phase phase, const RunConfig& cfg);

// Index of the minimum; ties resolve to the earliest epoch.
std::size_t select_best(std::span<const double> val_losses);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based, counted across phases
    Phase phase = Phase::fine_tuning;
    double train_ce = 0.0;
    double train_ctr = 0.0;
    double val_loss = 0.0;
    std::size_t skipped_batches = 0;
};

struct PhaseResult {
    ModelState best;
    std::size_t best_index = 0;
    std::vector<EpochRecord> history;
    std::vector<ModelState> checkpoints;
};

PhaseResult run_phase(const EncoderParams& init, const CorpusSplits& data, Phase phase, const RunConfig& cfg,
                      std::uint64_t seed, std::size_t epoch_offset);

struct RunResult {
    ModelState best;
    EvalReport test_report;
    Matrix test_embeddings;  // pooled embedding per test utterance
    std::vector<EpochRecord> history;
    std::vector<ModelState> checkpoints;  // one per history entry
};

EncoderParams initial_params(const CorpusSplits& data, const RunConfig& cfg, std::uint64_t seed);

// Optional contrastive pre-training, then the regime's fine-tuning phase,
// then test evaluation of the selected model. init overrides the seeded initialization.
RunResult run_regime(const CorpusSplits& data, const RunConfig& cfg, std::uint64_t seed,
                     const EncoderParams* init = nullptr);

// "SLVM", version, F, H, R, parameters, first moments, second moments, step.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void write_checkpoint(const std::filesystem::path& path, const ModelState& state);
ModelState read_checkpoint(const std::filesystem::path& path);

std::string format_metrics_tsv(std::span<const EpochRecord> history);

// config.used, epoch_<n>.ckpt, best.ckpt, metrics.tsv, test_report.tsv,
// embeddings.slv1, embeddings.labels.
void write_run_dir(const std::filesystem::path& dir, const RunResult& result, const CorpusSplits& data,
                   const std::string& resolved_config);

} // namespace slv
