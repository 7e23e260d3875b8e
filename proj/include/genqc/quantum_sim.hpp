#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "genqc/gate_codec.hpp"

namespace genqc {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

/// Amplitudes in little-endian order: qubit 0 is the least significant bit
/// of the amplitude index.
struct Statevector {
    int n_qubits = 0;
    CVector amps;
};

using SchmidtRankVector = std::vector<int>;

Statevector zero_state(int n_qubits);

/// Apply columns left to right; background and padding cells are identity.
/// The matrix must be structurally valid for the vocabulary.
Statevector apply_circuit(const TokenMatrix& m, const GateVocabulary& v, const Statevector& input);
Statevector apply_circuit(const TokenMatrix& m, const GateVocabulary& v);  // from |0...0>

/// Product of per-column gate matrices, later columns applied on the left.
CMatrix circuit_unitary(const TokenMatrix& m, const GateVocabulary& v);

/// Per-qubit rank of the 2x2 reduced density matrix, counting eigenvalues
/// above rank_tol. Entries are 1 or 2.
SchmidtRankVector srv(const Statevector& s, double rank_tol = 1e-8);

/// A rank vector is physical iff it never has exactly one entangled qubit.
bool srv_is_physical(const SchmidtRankVector& r);

/// (1/2) * ||U_t - U_g||_F^2
double frobenius_distance(const CMatrix& u_t, const CMatrix& u_g);

bool exact_match(const CMatrix& u_t, const CMatrix& u_g, double tol = 1e-9);

/// Global-phase-quotiented distance: 2^n - |tr(U_t^dag U_g)|; zero iff the
/// unitaries agree up to a phase factor.
double phase_invariant_distance(const CMatrix& u_t, const CMatrix& u_g);

}  // namespace genqc
