#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "genqc/dataset_forge.hpp"
#include "genqc/diffusion_core.hpp"
#include "genqc/gate_codec.hpp"
#include "genqc/quantum_sim.hpp"
#include "genqc/trainer.hpp"

namespace genqc {

/// Number of entangled qubits, i.e. entries equal to 2.
int entangled_count(const SchmidtRankVector& srv);

/// All rank vectors over {1,2}^qubits with no lone entangled qubit, in
/// lexicographic order. The conventional condition grid for SRV evaluation.
std::vector<SchmidtRankVector> physical_srvs(int qubits);

/// Canonical form for novelty and uniqueness counting: trailing padding
/// stripped and all-background columns removed, so spacing differences do
/// not make two equal circuits look distinct.
TokenMatrix canonical_tokens(const TokenMatrix& m, const GateVocabulary& v);

/// Stable string key of a token matrix for set membership.
std::string tokens_key(const TokenMatrix& m);

/// Condition tensors for sampling, evaluated in inference mode.
Tensor materialize_condition(const ModelBundle& m, const std::string& prompt,
                             const std::optional<CMatrix>& unitary = std::nullopt);
Tensor materialize_null(const ModelBundle& m);

/// Rejection-samples random circuits from the pool until count of them
/// produce the target rank vector. Throws std::runtime_error when the
/// attempt budget runs out first.
std::vector<TokenMatrix> random_circuits_with_srv(const SchmidtRankVector& target,
                                                  const GateVocabulary& v,
                                                  const std::vector<std::string>& pool,
                                                  int max_gates, int count, Rng& rng,
                                                  int64_t max_tries = 200000);

/// Fixed-width histogram over [lo, hi]; values land in bin
/// floor((v - lo) / width) with the top edge closed. Out-of-range values
/// are clamped into the outermost bins.
struct Histogram {
    std::vector<double> edges;    // bins + 1 ascending edges
    std::vector<int64_t> counts;  // one per bin
};

Histogram make_histogram(const std::vector<double>& values, int bins, double lo, double hi);

/// Rows are conditions, columns the observed outcomes plus a trailing
/// "invalid" bucket for samples that failed to decode, so every row sums
/// to the sample count of its condition.
struct ConfusionMatrix {
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<std::vector<int64_t>> counts;
};

/// Per-condition tallies of one SRV evaluation. Rates derive from the raw
/// counts downstream; decoded is the denominator for correctness, novelty
/// and distinctness.
struct SrvConditionStats {
    std::string prompt;
    SchmidtRankVector srv;
    int entangled = 0;
    int64_t samples = 0;
    int64_t decoded = 0;
    int64_t correct = 0;
    int64_t novel = 0;
    int64_t distinct_count = 0;
    double baseline_accuracy = 0.0;  // random-circuit hit rate, same oracle
    std::map<int, int64_t> length_counts;  // decoded gate count -> samples
};

/// Per-unitary tallies of one compilation evaluation. best_frobenius and
/// baseline_best are infinity when no candidate decoded.
struct UnitaryCompileStats {
    std::string prompt;
    int64_t samples = 0;
    int64_t decoded = 0;
    int64_t exact = 0;           // strict matches within exact_tol
    int64_t distinct_exact = 0;  // distinct canonical circuits among them
    int64_t phase_exact = 0;     // equal up to a global phase
    double best_frobenius = 0.0;
    double baseline_best = 0.0;
};

/// One (initial SRV, target SRV) cell of the editing grid.
struct EditCellStats {
    std::string srv_initial;
    std::string srv_target;
    int64_t initials = 0;
    int64_t samples = 0;
    int64_t decoded = 0;
    int64_t correct = 0;          // valid, prefix intact, target SRV reached
    int64_t solved_initials = 0;  // initial circuits with at least one hit
};

/// Evaluation output for every task; sections unused by a task stay empty.
/// accuracy is always consistent with the per-section counts: the confusion
/// diagonal over decoded samples for srv, the exact fraction for compile,
/// and correct over decoded for edit.
struct EvalReport {
    int schema_version = 1;
    std::string task;  // "srv" | "compile" | "edit"
    uint64_t seed = 0;

    double conversion_rate = 0.0;
    double accuracy = 0.0;
    double novelty = 0.0;
    double uniqueness = 0.0;

    std::vector<SrvConditionStats> srv_conditions;
    std::map<int, double> accuracy_by_entangled;  // pooled over conditions
    ConfusionMatrix confusion;
    std::map<int, std::map<int, int64_t>> lengths_by_entangled;

    std::vector<UnitaryCompileStats> unitaries;
    double exact_fraction = 0.0;  // unitaries with at least one exact hit
    Histogram model_distances;
    Histogram baseline_distances;

    std::vector<EditCellStats> edit_cells;
    double editable_fraction = 0.0;  // initials solved at least once, any cell
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
void write_report(const std::string& path, const EvalReport& r);
EvalReport read_report(const std::string& path);

/// Sampling and baseline knobs shared by the evaluation entry points.
struct EvalConfig {
    GuidanceConfig guidance;    // t_start is only consulted by eval_edit
    uint64_t seed = 0;
    int baseline_samples = 0;   // per condition or unitary; 0: match model
    double exact_tol = 1e-9;
    int hist_bins = 20;
};

/// Samples per SRV condition, decodes, simulates and tallies accuracy,
/// novelty against the corpus, in-sample uniqueness, confusion counts,
/// length distributions and a random-circuit baseline accuracy computed
/// through the same decoding and simulation path. Deterministic in
/// (model, conditions, cfg.seed).
EvalReport eval_srv(const ModelBundle& model, const std::vector<SchmidtRankVector>& conditions,
                    int samples_per_condition, int max_gates,
                    const std::vector<DatasetRecord>& corpus, const EvalConfig& cfg);

/// Samples per target unitary under its gate-set prompt and counts exact,
/// distinct-exact and phase-equal compilations plus best Frobenius
/// distances against a random-circuit baseline drawn from the same pool
/// and length bounds. Requires a model with a unitary branch.
EvalReport eval_compile(const ModelBundle& model,
                        const std::vector<std::pair<CMatrix, std::string>>& unitaries,
                        int samples_per_unitary, int max_gates, const EvalConfig& cfg);

struct EditTask {
    TokenMatrix initial;
    SchmidtRankVector srv_initial;
};

/// Fixes each initial circuit's columns via inpainting and samples the
/// remainder toward every target SRV, reporting accuracy per (initial,
/// target) cell and the fraction of initials with at least one solution.
/// Defaults t_start to the top of the strided chain when unset.
EvalReport eval_edit(const ModelBundle& model, const std::vector<EditTask>& initials,
                     const std::vector<SchmidtRankVector>& targets, int samples_per_initial,
                     int max_gates, const EvalConfig& cfg);

/// Static plots for a report, keyed by file name: accuracy bars, confusion
/// heatmap, distance histograms, length distributions or the editing grid,
/// depending on the task. Values are complete SVG documents.
std::map<std::string, std::string> render_report_svgs(const EvalReport& r);

/// Parses "[1, 2, 2]" (spaces optional) into a rank vector.
SchmidtRankVector parse_srv_text(const std::string& text);

/// Parses a semicolon-separated list of rank vectors.
std::vector<SchmidtRankVector> parse_srv_list(const std::string& text);

/// (qubits, timesteps) 0/1 mask from {"cells":[[q,t],..],"rows":[..],
/// "cols":[..]}; listed rows and columns block entirely. Throws
/// std::invalid_argument on out-of-range indices.
Tensor mask_from_json(const nlohmann::json& j, int qubits, int timesteps);

}  // namespace genqc
