#include "genqc/quantum_sim.hpp"

#include <cmath>
#include <stdexcept>

namespace genqc {

namespace {

constexpr double kSqrtHalf = 0.7071067811865475244;

struct ColumnGate {
    const GateInfo* info = nullptr;
    std::vector<int> controls;
    std::vector<int> targets;   // for SWAP these are the two swapped qubits
};

/// Extract the single gate placed in a column, or nullptr info for identity.
ColumnGate read_column(const TokenMatrix& m, const GateVocabulary& v, int t) {
    ColumnGate cg;
    int pad_id = v.padding_id();
    int gate_id = 0;
    for (int q = 0; q < m.qubits; ++q) {
        int token = m.at(q, t);
        int id = std::abs(token);
        if (id == 0 || id == pad_id) continue;
        gate_id = id;
        if (token > 0) cg.controls.push_back(q);
        else cg.targets.push_back(q);
    }
    if (gate_id == 0) return cg;
    cg.info = &v.gate(gate_id);
    if (cg.info->negative_nodes == 0 && cg.info->targets > 0) {  // SWAP-style
        cg.targets = std::move(cg.controls);
        cg.controls.clear();
    }
    return cg;
}

uint64_t control_mask(const std::vector<int>& controls) {
    uint64_t mask = 0;
    for (int c : controls) mask |= uint64_t{1} << c;
    return mask;
}

/// Apply a 2x2 unitary on `target`, conditioned on all `controls` being 1.
void apply_controlled_1q(CVector& psi, int target, const std::vector<int>& controls,
                         Complex u00, Complex u01, Complex u10, Complex u11) {
    uint64_t n = static_cast<uint64_t>(psi.size());
    uint64_t tbit = uint64_t{1} << target;
    uint64_t cmask = control_mask(controls);
    for (uint64_t i = 0; i < n; ++i) {
        if (i & tbit) continue;
        if ((i & cmask) != cmask) continue;
        uint64_t j = i | tbit;
        Complex a = psi[static_cast<Eigen::Index>(i)];
        Complex b = psi[static_cast<Eigen::Index>(j)];
        psi[static_cast<Eigen::Index>(i)] = u00 * a + u01 * b;
        psi[static_cast<Eigen::Index>(j)] = u10 * a + u11 * b;
    }
}

void apply_swap(CVector& psi, int qa, int qb) {
    uint64_t n = static_cast<uint64_t>(psi.size());
    uint64_t abit = uint64_t{1} << qa;
    uint64_t bbit = uint64_t{1} << qb;
    for (uint64_t i = 0; i < n; ++i) {
        if ((i & abit) && !(i & bbit)) {
            uint64_t j = (i ^ abit) | bbit;
            std::swap(psi[static_cast<Eigen::Index>(i)], psi[static_cast<Eigen::Index>(j)]);
        }
    }
}

void apply_column(CVector& psi, const ColumnGate& cg) {
    if (!cg.info) return;
    const std::string& name = cg.info->name;
    if (name == "H") {
        apply_controlled_1q(psi, cg.targets[0], cg.controls, kSqrtHalf, kSqrtHalf, kSqrtHalf,
                            -kSqrtHalf);
    } else if (name == "X" || name == "CX" || name == "CCX") {
        apply_controlled_1q(psi, cg.targets[0], cg.controls, 0.0, 1.0, 1.0, 0.0);
    } else if (name == "Z") {
        apply_controlled_1q(psi, cg.targets[0], cg.controls, 1.0, 0.0, 0.0, -1.0);
    } else if (name == "SWAP") {
        apply_swap(psi, cg.targets[0], cg.targets[1]);
    } else {
        throw std::logic_error("no simulator rule for gate " + name);
    }
}

void require_valid(const TokenMatrix& m, const GateVocabulary& v) {
    if (auto err = validate_tokens(m, v))
        throw std::invalid_argument(std::string("invalid circuit: ") + err->message);
}

}  // namespace

Statevector zero_state(int n_qubits) {
    Statevector s;
    s.n_qubits = n_qubits;
    s.amps = CVector::Zero(int64_t{1} << n_qubits);
    s.amps[0] = 1.0;
    return s;
}

Statevector apply_circuit(const TokenMatrix& m, const GateVocabulary& v, const Statevector& input) {
    require_valid(m, v);
    if (input.n_qubits != m.qubits || input.amps.size() != (int64_t{1} << m.qubits))
        throw std::invalid_argument("statevector dimension does not match circuit qubits");
    Statevector out = input;
    for (int t = 0; t < m.timesteps; ++t) apply_column(out.amps, read_column(m, v, t));
    return out;
}

Statevector apply_circuit(const TokenMatrix& m, const GateVocabulary& v) {
    return apply_circuit(m, v, zero_state(m.qubits));
}

CMatrix circuit_unitary(const TokenMatrix& m, const GateVocabulary& v) {
    require_valid(m, v);
    int64_t dim = int64_t{1} << m.qubits;
    std::vector<ColumnGate> cols;
    cols.reserve(static_cast<size_t>(m.timesteps));
    for (int t = 0; t < m.timesteps; ++t) cols.push_back(read_column(m, v, t));
    CMatrix u(dim, dim);
    CVector psi(dim);
    for (int64_t j = 0; j < dim; ++j) {
        psi.setZero();
        psi[j] = 1.0;
        for (const ColumnGate& cg : cols) apply_column(psi, cg);
        u.col(j) = psi;
    }
    return u;
}

SchmidtRankVector srv(const Statevector& s, double rank_tol) {
    double norm = s.amps.norm();
    if (std::abs(norm - 1.0) > 1e-6)
        throw std::invalid_argument("statevector norm deviates from 1: " + std::to_string(norm));
    int64_t dim = s.amps.size();
    SchmidtRankVector ranks(static_cast<size_t>(s.n_qubits), 1);
    for (int q = 0; q < s.n_qubits; ++q) {
        uint64_t qbit = uint64_t{1} << q;
        // 2x2 reduced density matrix over qubit q.
        double r00 = 0.0, r11 = 0.0;
        Complex r01 = 0.0;
        for (int64_t i = 0; i < dim; ++i) {
            uint64_t iu = static_cast<uint64_t>(i);
            if (iu & qbit) continue;
            Complex a0 = s.amps[i];
            Complex a1 = s.amps[static_cast<Eigen::Index>(iu | qbit)];
            r00 += std::norm(a0);
            r11 += std::norm(a1);
            r01 += a0 * std::conj(a1);
        }
        double tr = r00 + r11;
        double det = r00 * r11 - std::norm(r01);
        double disc = std::sqrt(std::max(0.0, tr * tr - 4.0 * det));
        double lam1 = 0.5 * (tr + disc);
        double lam2 = 0.5 * (tr - disc);
        ranks[static_cast<size_t>(q)] = (lam1 > rank_tol ? 1 : 0) + (lam2 > rank_tol ? 1 : 0);
        if (ranks[static_cast<size_t>(q)] == 0) ranks[static_cast<size_t>(q)] = 1;
    }
    return ranks;
}

bool srv_is_physical(const SchmidtRankVector& r) {
    int entangled = 0;
    for (int e : r) {
        if (e != 1 && e != 2) return false;
        if (e == 2) ++entangled;
    }
    return entangled != 1;
}

double frobenius_distance(const CMatrix& u_t, const CMatrix& u_g) {
    if (u_t.rows() != u_g.rows() || u_t.cols() != u_g.cols())
        throw std::invalid_argument("unitary dimension mismatch");
    return 0.5 * (u_t - u_g).squaredNorm();
}

bool exact_match(const CMatrix& u_t, const CMatrix& u_g, double tol) {
    return frobenius_distance(u_t, u_g) <= tol;
}

double phase_invariant_distance(const CMatrix& u_t, const CMatrix& u_g) {
    if (u_t.rows() != u_g.rows() || u_t.cols() != u_g.cols())
        throw std::invalid_argument("unitary dimension mismatch");
    return static_cast<double>(u_t.rows()) - std::abs((u_t.adjoint() * u_g).trace());
}

}  // namespace genqc
