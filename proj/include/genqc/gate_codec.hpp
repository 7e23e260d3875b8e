#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "genqc/tensor.hpp"

namespace genqc {

struct GateInfo {
    std::string name;  // canonical upper-case
    int controls = 0;
    int targets = 0;
    // Node sign multiset expected in a column placing this gate. Usually
    // positive=controls and negative=targets; SWAP encodes both nodes positive.
    int positive_nodes = 0;
    int negative_nodes = 0;
};

/// Token ids: 0 = background, 1..N = gates, N+1 = padding.
/// A negative id marks a target node of the corresponding gate.
struct GateVocabulary {
    std::vector<GateInfo> gates;  // index i holds token id i+1
    int d = 0;
    uint64_t seed = 0;
    Tensor embeddings;  // (N+2, d), row k = v_k, orthonormal

    int n_gates() const { return static_cast<int>(gates.size()); }
    int padding_id() const { return n_gates() + 1; }
    const GateInfo& gate(int id) const;           // id in 1..N
    int id_of(const std::string& name) const;     // case-insensitive, 0 if absent
    const double* embedding(int id) const { return embeddings.ptr() + static_cast<int64_t>(id) * d; }
};

/// Supported gate registry lookup; throws on unknown names.
GateInfo gate_info(const std::string& name);

/// d >= N+2 orthonormal embeddings from seeded Gaussian draws (modified Gram-Schmidt).
GateVocabulary build_vocabulary(const std::vector<std::string>& gate_names, int d, uint64_t seed = 7);

struct TokenMatrix {
    int qubits = 0;
    int timesteps = 0;
    std::vector<int> cells;  // row-major (qubit, timestep)

    TokenMatrix() = default;
    TokenMatrix(int q, int t) : qubits(q), timesteps(t), cells(static_cast<size_t>(q) * t, 0) {}
    int& at(int q, int t) { return cells[static_cast<size_t>(q) * timesteps + t]; }
    int at(int q, int t) const { return cells[static_cast<size_t>(q) * timesteps + t]; }
    bool operator==(const TokenMatrix& o) const {
        return qubits == o.qubits && timesteps == o.timesteps && cells == o.cells;
    }
};

/// Write one gate's nodes into column t. For SWAP pass both qubits as targets.
void place_gate(TokenMatrix& m, const GateVocabulary& v, int gate_id, int column,
                const std::vector<int>& control_qubits, const std::vector<int>& target_qubits);

/// Continuous (qubits, timesteps, d) tensor; cell (q,t) = sign(token) * v_|token|.
using CircuitTensor = Tensor;

CircuitTensor encode(const TokenMatrix& m, const GateVocabulary& v);

enum class DecodeErrorKind {
    MultipleGatesPerTimestep,
    MalformedNodes,
    InteriorPadding,
};

const char* to_string(DecodeErrorKind k);

struct DecodeError {
    DecodeErrorKind kind;
    int column = -1;  // first violated column (-1 when row-structural)
    std::string message;
};

struct DecodeDiagnostics {
    std::vector<std::pair<int, int>> tie_cells;   // equal |cosine|, lowest id chosen
    std::vector<std::pair<int, int>> zero_cells;  // zero vector, classified background
};

struct DecodeResult {
    TokenMatrix tokens;  // raw per-cell tokenization, always populated
    std::optional<DecodeError> error;
    DecodeDiagnostics diagnostics;

    bool ok() const { return !error.has_value(); }
};

/// Per-cell nearest-token assignment by |cosine similarity| with sign rule,
/// then column-structure validation. Never throws on tensor content.
DecodeResult decode(const CircuitTensor& x, const GateVocabulary& v);

/// The tokenization step of decode, without validation.
TokenMatrix tokenize_cells(const CircuitTensor& x, const GateVocabulary& v,
                           DecodeDiagnostics* diag = nullptr);

/// Structural validation: padding confined to trailing rows/columns, one gate
/// per column, node signs matching the gate signature.
std::optional<DecodeError> validate_tokens(const TokenMatrix& m, const GateVocabulary& v);

/// Append padding rows/columns up to the targets.
TokenMatrix pad_tokens(const TokenMatrix& m, const GateVocabulary& v, int target_qubits,
                       int target_timesteps);

/// Remove trailing all-padding columns and rows; inverse of pad_tokens on its image.
TokenMatrix strip_padding(const TokenMatrix& m, const GateVocabulary& v);

/// Circuits side by side on the same qubits: m1's columns then m2's.
TokenMatrix concat_time(const TokenMatrix& m1, const TokenMatrix& m2);

}  // namespace genqc
