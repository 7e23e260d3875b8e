#include "genqc/gate_codec.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "genqc/rng.hpp"

namespace genqc {

namespace {

std::string upper(const std::string& s) {
    std::string out = s;
    for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

const std::vector<GateInfo>& registry() {
    static const std::vector<GateInfo> table = {
        {"H", 0, 1, 0, 1},  {"X", 0, 1, 0, 1},    {"Z", 0, 1, 0, 1},
        {"CX", 1, 1, 1, 1}, {"CCX", 2, 1, 2, 1},  {"SWAP", 0, 2, 2, 0},
    };
    return table;
}

}  // namespace

GateInfo gate_info(const std::string& name) {
    std::string key = upper(name);
    for (const GateInfo& g : registry())
        if (g.name == key) return g;
    throw std::invalid_argument("unknown gate: " + name);
}

const GateInfo& GateVocabulary::gate(int id) const {
    if (id < 1 || id > n_gates()) throw std::out_of_range("gate id out of range");
    return gates[static_cast<size_t>(id - 1)];
}

int GateVocabulary::id_of(const std::string& name) const {
    std::string key = upper(name);
    for (int i = 0; i < n_gates(); ++i)
        if (gates[static_cast<size_t>(i)].name == key) return i + 1;
    return 0;
}

GateVocabulary build_vocabulary(const std::vector<std::string>& gate_names, int d, uint64_t seed) {
    int n = static_cast<int>(gate_names.size());
    if (n == 0) throw std::invalid_argument("empty gate set");
    if (d < n + 2)
        throw std::invalid_argument("embedding dimension " + std::to_string(d) +
                                    " too small for " + std::to_string(n) + " gates (need >= N+2)");
    GateVocabulary v;
    v.d = d;
    v.seed = seed;
    for (const std::string& name : gate_names) {
        GateInfo g = gate_info(name);
        for (const GateInfo& prev : v.gates)
            if (prev.name == g.name) throw std::invalid_argument("duplicate gate: " + name);
        v.gates.push_back(std::move(g));
    }

    // Modified Gram-Schmidt over seeded Gaussian draws; rows of the result are
    // the N+2 orthonormal token embeddings.
    Rng rng(seed);
    int rows = n + 2;
    v.embeddings = Tensor({rows, d});
    for (int k = 0; k < rows; ++k) {
        double* vk = v.embeddings.ptr() + static_cast<int64_t>(k) * d;
        double norm = 0.0;
        do {
            for (int j = 0; j < d; ++j) vk[j] = rng.normal();
            for (int p = 0; p < k; ++p) {
                const double* vp = v.embeddings.ptr() + static_cast<int64_t>(p) * d;
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += vk[j] * vp[j];
                for (int j = 0; j < d; ++j) vk[j] -= dot * vp[j];
            }
            norm = 0.0;
            for (int j = 0; j < d; ++j) norm += vk[j] * vk[j];
            norm = std::sqrt(norm);
        } while (norm < 1e-8);
        for (int j = 0; j < d; ++j) vk[j] /= norm;
    }
    return v;
}

void place_gate(TokenMatrix& m, const GateVocabulary& v, int gate_id, int column,
                const std::vector<int>& control_qubits, const std::vector<int>& target_qubits) {
    const GateInfo& g = v.gate(gate_id);
    if (static_cast<int>(control_qubits.size()) != g.controls ||
        static_cast<int>(target_qubits.size()) != g.targets)
        throw std::invalid_argument("node count does not match " + g.name + " signature");
    if (column < 0 || column >= m.timesteps) throw std::out_of_range("column out of range");
    auto put = [&](int q, int token) {
        if (q < 0 || q >= m.qubits) throw std::out_of_range("qubit out of range");
        if (m.at(q, column) != 0) throw std::invalid_argument("column cell already occupied");
        m.at(q, column) = token;
    };
    for (int q : control_qubits) put(q, gate_id);
    bool symmetric = g.negative_nodes == 0 && g.targets > 0;  // SWAP-style gates
    for (int q : target_qubits) put(q, symmetric ? gate_id : -gate_id);
}

CircuitTensor encode(const TokenMatrix& m, const GateVocabulary& v) {
    int pad_id = v.padding_id();
    Tensor x({m.qubits, m.timesteps, v.d});
    for (int q = 0; q < m.qubits; ++q)
        for (int t = 0; t < m.timesteps; ++t) {
            int token = m.at(q, t);
            int id = std::abs(token);
            if (id > pad_id)
                throw std::invalid_argument("invalid token " + std::to_string(token) +
                                            " for vocabulary of " + std::to_string(v.n_gates()) +
                                            " gates");
            double sign = token < 0 ? -1.0 : 1.0;
            const double* vk = v.embedding(id);
            double* cell = x.ptr() + (static_cast<int64_t>(q) * m.timesteps + t) * v.d;
            for (int j = 0; j < v.d; ++j) cell[j] = sign * vk[j];
        }
    return x;
}

TokenMatrix tokenize_cells(const CircuitTensor& x, const GateVocabulary& v,
                           DecodeDiagnostics* diag) {
    if (x.rank() != 3 || x.dim(2) != v.d)
        throw std::invalid_argument("tensor shape does not match vocabulary dimension");
    int qubits = static_cast<int>(x.dim(0));
    int steps = static_cast<int>(x.dim(1));
    int pad_id = v.padding_id();
    TokenMatrix m(qubits, steps);
    for (int q = 0; q < qubits; ++q)
        for (int t = 0; t < steps; ++t) {
            const double* cell = x.ptr() + (static_cast<int64_t>(q) * steps + t) * v.d;
            double norm2 = 0.0;
            for (int j = 0; j < v.d; ++j) norm2 += cell[j] * cell[j];
            if (norm2 == 0.0) {
                m.at(q, t) = 0;
                if (diag) diag->zero_cells.emplace_back(q, t);
                continue;
            }
            // Embeddings are unit vectors, so |cosine| ordering equals |dot| ordering.
            int best = 0;
            double best_dot = 0.0, best_abs = -1.0;
            bool tied = false;
            for (int k = 0; k <= pad_id; ++k) {
                const double* vk = v.embedding(k);
                double dot = 0.0;
                for (int j = 0; j < v.d; ++j) dot += cell[j] * vk[j];
                double a = std::abs(dot);
                if (a > best_abs) {
                    best_abs = a;
                    best_dot = dot;
                    best = k;
                    tied = false;
                } else if (a == best_abs) {
                    tied = true;
                }
            }
            if (tied && diag) diag->tie_cells.emplace_back(q, t);
            int token = best_dot < 0.0 ? -best : best;
            if (best == pad_id) token = pad_id;  // padding carries no node role
            m.at(q, t) = token;
        }
    return m;
}

namespace {

bool row_all_padding(const TokenMatrix& m, int q, int pad_id) {
    for (int t = 0; t < m.timesteps; ++t)
        if (std::abs(m.at(q, t)) != pad_id) return false;
    return m.timesteps > 0;
}

}  // namespace

std::optional<DecodeError> validate_tokens(const TokenMatrix& m, const GateVocabulary& v) {
    int pad_id = v.padding_id();

    // Padding must form the complement of a top-left core rectangle: some
    // count of trailing all-padding rows, and within the live rows some count
    // of trailing all-padding columns.
    int core_rows = m.qubits;
    while (core_rows > 0 && row_all_padding(m, core_rows - 1, pad_id)) --core_rows;
    for (int q = 0; q < core_rows; ++q)
        if (row_all_padding(m, q, pad_id))
            return DecodeError{DecodeErrorKind::InteriorPadding, -1,
                               "all-padding row " + std::to_string(q) + " precedes live rows"};

    auto col_all_padding = [&](int t) {
        for (int q = 0; q < core_rows; ++q)
            if (std::abs(m.at(q, t)) != pad_id) return false;
        return core_rows > 0;
    };
    int core_cols = m.timesteps;
    while (core_cols > 0 && col_all_padding(core_cols - 1)) --core_cols;

    for (int t = 0; t < core_cols; ++t) {
        int gate_id = 0, positive = 0, negative = 0;
        for (int q = 0; q < core_rows; ++q) {
            int token = m.at(q, t);
            if (token == 0) continue;
            int id = std::abs(token);
            if (id == pad_id)
                return DecodeError{DecodeErrorKind::InteriorPadding, t,
                                   "padding cell inside live region at column " + std::to_string(t)};
            if (id > pad_id)
                return DecodeError{DecodeErrorKind::MalformedNodes, t,
                                   "token " + std::to_string(token) + " out of vocabulary"};
            if (gate_id == 0) gate_id = id;
            if (id != gate_id)
                return DecodeError{DecodeErrorKind::MultipleGatesPerTimestep, t,
                                   "column " + std::to_string(t) + " mixes gate ids " +
                                       std::to_string(gate_id) + " and " + std::to_string(id)};
            (token > 0 ? positive : negative)++;
        }
        if (gate_id == 0) continue;
        const GateInfo& g = v.gate(gate_id);
        if (positive != g.positive_nodes || negative != g.negative_nodes)
            return DecodeError{DecodeErrorKind::MalformedNodes, t,
                               "column " + std::to_string(t) + " has " + std::to_string(positive) +
                                   "+/" + std::to_string(negative) + "- nodes, " + g.name +
                                   " needs " + std::to_string(g.positive_nodes) + "+/" +
                                   std::to_string(g.negative_nodes) + "-"};
    }
    return std::nullopt;
}

DecodeResult decode(const CircuitTensor& x, const GateVocabulary& v) {
    DecodeResult r;
    r.tokens = tokenize_cells(x, v, &r.diagnostics);
    r.error = validate_tokens(r.tokens, v);
    return r;
}

TokenMatrix pad_tokens(const TokenMatrix& m, const GateVocabulary& v, int target_qubits,
                       int target_timesteps) {
    if (target_qubits < m.qubits || target_timesteps < m.timesteps)
        throw std::invalid_argument("pad_tokens cannot shrink a matrix");
    int pad_id = v.padding_id();
    TokenMatrix out(target_qubits, target_timesteps);
    for (int q = 0; q < target_qubits; ++q)
        for (int t = 0; t < target_timesteps; ++t)
            out.at(q, t) = (q < m.qubits && t < m.timesteps) ? m.at(q, t) : pad_id;
    return out;
}

TokenMatrix strip_padding(const TokenMatrix& m, const GateVocabulary& v) {
    int pad_id = v.padding_id();
    int rows = m.qubits, cols = m.timesteps;
    bool changed = true;
    while (changed) {
        changed = false;
        auto col_pad = [&](int t) {
            for (int q = 0; q < rows; ++q)
                if (std::abs(m.at(q, t)) != pad_id) return false;
            return rows > 0;
        };
        auto row_pad = [&](int q) {
            for (int t = 0; t < cols; ++t)
                if (std::abs(m.at(q, t)) != pad_id) return false;
            return cols > 0;
        };
        while (cols > 0 && col_pad(cols - 1)) {
            --cols;
            changed = true;
        }
        while (rows > 0 && row_pad(rows - 1)) {
            --rows;
            changed = true;
        }
    }
    if (rows == 0 || cols == 0) return TokenMatrix(0, 0);
    TokenMatrix out(rows, cols);
    for (int q = 0; q < rows; ++q)
        for (int t = 0; t < cols; ++t) out.at(q, t) = m.at(q, t);
    return out;
}

TokenMatrix concat_time(const TokenMatrix& m1, const TokenMatrix& m2) {
    if (m1.qubits != m2.qubits) throw std::invalid_argument("concat_time: qubit count mismatch");
    TokenMatrix out(m1.qubits, m1.timesteps + m2.timesteps);
    for (int q = 0; q < out.qubits; ++q) {
        for (int t = 0; t < m1.timesteps; ++t) out.at(q, t) = m1.at(q, t);
        for (int t = 0; t < m2.timesteps; ++t) out.at(q, m1.timesteps + t) = m2.at(q, t);
    }
    return out;
}

const char* to_string(DecodeErrorKind k) {
    switch (k) {
        case DecodeErrorKind::MultipleGatesPerTimestep: return "MultipleGatesPerTimestep";
        case DecodeErrorKind::MalformedNodes: return "MalformedNodes";
        case DecodeErrorKind::InteriorPadding: return "InteriorPadding";
    }
    return "unknown";
}

}  // namespace genqc
