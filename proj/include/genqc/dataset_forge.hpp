#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "genqc/gate_codec.hpp"
#include "genqc/quantum_sim.hpp"
#include "genqc/rng.hpp"

namespace genqc {

enum class Task { srv, compile };

struct QubitGateRange {
    int qubits = 0;
    int min_gates = 0;
    int max_gates = 0;
};

struct SamplingSpec {
    std::vector<QubitGateRange> ranges;  // qubit counts drawn uniformly
    std::vector<std::string> gate_pool;
    int64_t target_size = 0;  // records generated before dedup
    uint64_t seed = 0;
};

/// Default sampling tables per task.
SamplingSpec srv_table_spec();           // 3..8 qubits, pool H, CX
SamplingSpec srv_finetune_table_spec();  // 9..10 qubits, pool H, CX
SamplingSpec compile_table_spec();       // 3 qubits, pool H, CX, Z, X, CCX, SWAP

struct DatasetRecord {
    TokenMatrix tokens;
    std::string prompt;
    std::optional<SchmidtRankVector> srv_label;
    std::optional<CMatrix> unitary_label;
    int qubits = 0;
    int gate_count = 0;
};

struct BalanceConfig {
    double quantile = 0.25;        // 0.05 for fine-tune sets
    int64_t per_prompt_target = 0;  // 0: downsample to the smallest prompt bin
    uint64_t seed = 0;
};

/// One random circuit: uniform qubit range, uniform non-empty feasible gate
/// subset, uniform gate count in [min,max], one uniformly placed gate per
/// column. Token ids come from v, which must cover the pool. Throws when no
/// pool gate fits the qubit count.
TokenMatrix random_circuit(const SamplingSpec& spec, const GateVocabulary& v, Rng& rng,
                           std::vector<std::string>* used_subset = nullptr);

/// Fixpoint cancellation of adjacent identical self-inverse gates (adjacency
/// up to commuting past gates on disjoint qubits), with empty columns removed.
/// Preserves the circuit unitary and never increases the gate count.
TokenMatrix optimize_circuit(const TokenMatrix& m, const GateVocabulary& v);

/// Number of placed gates (columns containing gate nodes).
int count_gates(const TokenMatrix& m, const GateVocabulary& v);

std::string srv_prompt(const SchmidtRankVector& srv);             // "Generate SRV: [1, 2, 2]"
std::string compile_prompt(std::vector<std::string> gate_names);  // "Compile using: [cx, h, x]"

std::pair<std::string, SchmidtRankVector> label_srv(const TokenMatrix& m, const GateVocabulary& v);
std::pair<std::string, CMatrix> label_unitary(const TokenMatrix& m, const GateVocabulary& v,
                                              const std::vector<std::string>& pool_subset);

/// Remove exact duplicates by (prompt, token matrix); stable first-wins order.
std::vector<DatasetRecord> dedup(const std::vector<DatasetRecord>& records);

struct BalancePromptStats {
    std::string prompt;
    size_t step1_count = 0;  // bin size after prompt equalization
    int q_len = 0;           // q-quantile gate count within the bin
    size_t cap = 0;          // applied per-gate-count bucket cap
    size_t final_count = 0;
};

struct BalanceResult {
    std::vector<DatasetRecord> records;
    std::vector<BalancePromptStats> prompts;
};

/// Two-step balance: equalize per-prompt counts, then cap each gate-count
/// bucket within a prompt bin at the size of the q-quantile-length bucket.
/// A final equalization keeps per-prompt counts equal on output; the applied
/// caps are reported so the bucket invariant can be asserted downstream.
BalanceResult balance_with_stats(const std::vector<DatasetRecord>& records,
                                 const BalanceConfig& cfg);
std::vector<DatasetRecord> balance(const std::vector<DatasetRecord>& records,
                                   const BalanceConfig& cfg);

/// Generate, optimize, label, and dedup target_size draws.
std::vector<DatasetRecord> generate_dataset(const SamplingSpec& spec, const GateVocabulary& v,
                                            Task task);

void write_dataset_jsonl(const std::string& path, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_dataset_jsonl(const std::string& path);

}  // namespace genqc
