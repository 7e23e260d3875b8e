#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/SVD>

#include "genqc/gate_codec.hpp"
#include "genqc/quantum_sim.hpp"
#include "genqc/rng.hpp"

using namespace genqc;

namespace {

const std::vector<std::string> kAllGates = {"H", "CX", "Z", "X", "CCX", "SWAP"};

TokenMatrix random_valid_matrix(const GateVocabulary& v, int qubits, int steps, Rng& rng) {
    TokenMatrix m(qubits, steps);
    for (int t = 0; t < steps; ++t) {
        if (rng.uniform() < 0.2) continue;
        int gate_id = static_cast<int>(rng.integer(static_cast<uint64_t>(v.n_gates()))) + 1;
        const GateInfo& g = v.gate(gate_id);
        int nodes = g.controls + g.targets;
        if (nodes > qubits) continue;
        std::vector<int> qs(static_cast<size_t>(qubits));
        for (int q = 0; q < qubits; ++q) qs[static_cast<size_t>(q)] = q;
        rng.shuffle(qs);
        std::vector<int> controls(qs.begin(), qs.begin() + g.controls);
        std::vector<int> targets(qs.begin() + g.controls, qs.begin() + nodes);
        place_gate(m, v, gate_id, t, controls, targets);
    }
    return m;
}

/// Independent SRV oracle: Schmidt rank of the (qubit q | rest) bipartition
/// from the singular values of the reshaped amplitude matrix.
SchmidtRankVector srv_by_svd(const Statevector& s, double rank_tol = 1e-8) {
    SchmidtRankVector out(static_cast<size_t>(s.n_qubits), 1);
    int64_t rest_dim = s.amps.size() / 2;
    for (int q = 0; q < s.n_qubits; ++q) {
        CMatrix m(2, rest_dim);
        uint64_t qbit = uint64_t{1} << q;
        for (int64_t i = 0; i < s.amps.size(); ++i) {
            uint64_t iu = static_cast<uint64_t>(i);
            int b = (iu & qbit) ? 1 : 0;
            uint64_t low = iu & (qbit - 1);
            uint64_t high = (iu >> (q + 1)) << q;
            int64_t rest = static_cast<int64_t>(low | high);
            m(b, rest) = s.amps[i];
        }
        Eigen::JacobiSVD<CMatrix> svd(m);
        int rank = 0;
        for (int k = 0; k < svd.singularValues().size(); ++k)
            if (std::pow(svd.singularValues()[k], 2) > rank_tol) ++rank;
        out[static_cast<size_t>(q)] = std::max(rank, 1);
    }
    return out;
}

GateVocabulary hx_vocab() { return build_vocabulary({"H", "CX", "X", "Z"}, 6); }

}  // namespace

TEST_CASE("little-endian amplitude ordering") {
    GateVocabulary v = hx_vocab();
    TokenMatrix m0(2, 1);
    place_gate(m0, v, v.id_of("X"), 0, {}, {0});
    Statevector s0 = apply_circuit(m0, v);
    CHECK(std::abs(s0.amps[1] - 1.0) < 1e-12);  // |01> in index bits

    TokenMatrix m1(2, 1);
    place_gate(m1, v, v.id_of("X"), 0, {}, {1});
    Statevector s1 = apply_circuit(m1, v);
    CHECK(std::abs(s1.amps[2] - 1.0) < 1e-12);
}

TEST_CASE("Bell pair from H then CX") {
    GateVocabulary v = hx_vocab();
    TokenMatrix m(2, 2);
    place_gate(m, v, v.id_of("H"), 0, {}, {0});
    place_gate(m, v, v.id_of("CX"), 1, {0}, {1});
    Statevector s = apply_circuit(m, v);
    double r = 1.0 / std::sqrt(2.0);
    CHECK(std::abs(s.amps[0] - r) < 1e-12);
    CHECK(std::abs(s.amps[1]) < 1e-12);
    CHECK(std::abs(s.amps[2]) < 1e-12);
    CHECK(std::abs(s.amps[3] - r) < 1e-12);
}

TEST_CASE("empty and padding columns act as identity") {
    GateVocabulary v = hx_vocab();
    Rng rng(31);
    TokenMatrix empty(3, 4);
    Statevector in = zero_state(3);
    for (int i = 0; i < 8; ++i) in.amps[i] = Complex(rng.normal(), rng.normal());
    in.amps.normalize();
    Statevector out = apply_circuit(empty, v, in);
    CHECK((out.amps - in.amps).norm() < 1e-12);

    TokenMatrix padded = pad_tokens(empty, v, 3, 8);
    Statevector out2 = apply_circuit(padded, v, in);
    CHECK((out2.amps - in.amps).norm() < 1e-12);
}

TEST_CASE("single-gate unitaries") {
    GateVocabulary v = hx_vocab();
    TokenMatrix x1(1, 1);
    place_gate(x1, v, v.id_of("X"), 0, {}, {0});
    CMatrix ux = circuit_unitary(x1, v);
    CHECK(std::abs(ux(0, 0)) < 1e-12);
    CHECK(std::abs(ux(0, 1) - 1.0) < 1e-12);
    CHECK(std::abs(ux(1, 0) - 1.0) < 1e-12);
    CHECK(std::abs(ux(1, 1)) < 1e-12);

    TokenMatrix empty(2, 3);
    CMatrix id = circuit_unitary(empty, v);
    CHECK((id - CMatrix::Identity(4, 4)).norm() < 1e-12);

    TokenMatrix xx(1, 2);
    place_gate(xx, v, v.id_of("X"), 0, {}, {0});
    place_gate(xx, v, v.id_of("X"), 1, {}, {0});
    CHECK((circuit_unitary(xx, v) - CMatrix::Identity(2, 2)).norm() < 1e-12);
}

TEST_CASE("SWAP and CCX semantics") {
    GateVocabulary v = build_vocabulary(kAllGates, 8);
    TokenMatrix sw(2, 1);
    place_gate(sw, v, v.id_of("SWAP"), 0, {}, {0, 1});
    CMatrix u = circuit_unitary(sw, v);
    CMatrix expect = CMatrix::Zero(4, 4);
    expect(0, 0) = 1;
    expect(1, 2) = 1;  // |01> -> |10>
    expect(2, 1) = 1;
    expect(3, 3) = 1;
    CHECK((u - expect).norm() < 1e-12);

    TokenMatrix ccx(3, 1);
    place_gate(ccx, v, v.id_of("CCX"), 0, {0, 1}, {2});
    CMatrix ut = circuit_unitary(ccx, v);
    CMatrix et = CMatrix::Identity(8, 8);
    et(3, 3) = 0;
    et(7, 7) = 0;
    et(3, 7) = 1;  // |011> <-> |111>
    et(7, 3) = 1;
    CHECK((ut - et).norm() < 1e-12);
}

TEST_CASE("apply_circuit columns match circuit_unitary") {
    GateVocabulary v = build_vocabulary(kAllGates, 8);
    Rng rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        TokenMatrix m = random_valid_matrix(v, 3, 10, rng);
        CMatrix u = circuit_unitary(m, v);
        for (int64_t j = 0; j < 8; ++j) {
            Statevector e = zero_state(3);
            e.amps.setZero();
            e.amps[j] = 1.0;
            Statevector out = apply_circuit(m, v, e);
            CHECK((out.amps - u.col(j)).norm() < 1e-10);
        }
    }
}

TEST_CASE("composition: unitary of concatenation is the product") {
    GateVocabulary v = build_vocabulary(kAllGates, 8);
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        int qubits = 3 + static_cast<int>(rng.integer(2));
        TokenMatrix m1 = random_valid_matrix(v, qubits, 6, rng);
        TokenMatrix m2 = random_valid_matrix(v, qubits, 6, rng);
        CMatrix lhs = circuit_unitary(concat_time(m1, m2), v);
        CMatrix rhs = circuit_unitary(m2, v) * circuit_unitary(m1, v);
        CHECK((lhs - rhs).norm() < 1e-9);
    }
}

TEST_CASE("all produced matrices are unitary") {
    GateVocabulary v = build_vocabulary(kAllGates, 8);
    Rng rng(34);
    for (int trial = 0; trial < 30; ++trial) {
        TokenMatrix m = random_valid_matrix(v, 4, 12, rng);
        CMatrix u = circuit_unitary(m, v);
        CHECK((u.adjoint() * u - CMatrix::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("srv: product, GHZ, Bell-times-idle") {
    GateVocabulary v = hx_vocab();
    CHECK(srv(zero_state(3)) == SchmidtRankVector{1, 1, 1});

    TokenMatrix ghz(3, 3);
    place_gate(ghz, v, v.id_of("H"), 0, {}, {0});
    place_gate(ghz, v, v.id_of("CX"), 1, {0}, {1});
    place_gate(ghz, v, v.id_of("CX"), 2, {1}, {2});
    CHECK(srv(apply_circuit(ghz, v)) == SchmidtRankVector{2, 2, 2});

    TokenMatrix bell(3, 2);
    place_gate(bell, v, v.id_of("H"), 0, {}, {0});
    place_gate(bell, v, v.id_of("CX"), 1, {0}, {1});
    Statevector s = apply_circuit(bell, v);
    SchmidtRankVector expect = {2, 2, 1};
    CHECK(srv(s) == expect);
    CHECK(srv_by_svd(s) == expect);
}

TEST_CASE("srv matches independent SVD oracle on random circuits") {
    GateVocabulary v = build_vocabulary(kAllGates, 8);
    Rng rng(35);
    for (int trial = 0; trial < 100; ++trial) {
        TokenMatrix m = random_valid_matrix(v, 4, 10, rng);
        Statevector s = apply_circuit(m, v);
        CHECK(srv(s) == srv_by_svd(s));
    }
}

TEST_CASE("srv invariant under appended single-qubit gates") {
    GateVocabulary v = build_vocabulary(kAllGates, 8);
    Rng rng(36);
    const char* singles[] = {"H", "X", "Z"};
    for (int trial = 0; trial < 50; ++trial) {
        TokenMatrix m = random_valid_matrix(v, 3, 8, rng);
        SchmidtRankVector before = srv(apply_circuit(m, v));
        TokenMatrix tail(3, 1);
        int g = static_cast<int>(rng.integer(3));
        int q = static_cast<int>(rng.integer(3));
        place_gate(tail, v, v.id_of(singles[g]), 0, {}, {q});
        SchmidtRankVector after = srv(apply_circuit(concat_time(m, tail), v));
        CHECK(before == after);
    }
}

TEST_CASE("srv rejects unnormalized states") {
    Statevector s = zero_state(2);
    s.amps[0] = 2.0;
    CHECK_THROWS(srv(s));
}

TEST_CASE("srv physicality: exactly one entangled qubit is impossible") {
    CHECK(srv_is_physical({1, 1, 1}));
    CHECK(srv_is_physical({2, 2, 1}));
    CHECK(srv_is_physical({2, 2, 2}));
    CHECK_FALSE(srv_is_physical({2, 1, 1}));
    CHECK_FALSE(srv_is_physical({1, 3, 2}));
}

TEST_CASE("frobenius_distance values") {
    GateVocabulary v = hx_vocab();
    Rng rng(37);
    TokenMatrix m = random_valid_matrix(v, 3, 8, rng);
    CMatrix u = circuit_unitary(m, v);
    CHECK(frobenius_distance(u, u) == 0.0);
    CHECK(frobenius_distance(u, -u) == doctest::Approx(16.0));  // 2*||U||_F^2 = 2*8

    TokenMatrix x3(3, 1);
    place_gate(x3, v, v.id_of("X"), 0, {}, {0});
    CMatrix ux = circuit_unitary(x3, v);
    CMatrix id = CMatrix::Identity(8, 8);
    double direct = 0.0;  // entrywise oracle
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) direct += std::norm(id(i, j) - ux(i, j));
    CHECK(frobenius_distance(id, ux) == doctest::Approx(0.5 * direct));
    CHECK(frobenius_distance(id, ux) == doctest::Approx(8.0));

    CHECK_THROWS(frobenius_distance(id, CMatrix::Identity(4, 4)));
}

TEST_CASE("exact_match and phase-invariant distance") {
    GateVocabulary v = hx_vocab();
    Rng rng(38);
    TokenMatrix m = random_valid_matrix(v, 3, 8, rng);
    CMatrix u = circuit_unitary(m, v);
    CHECK(exact_match(u, u));
    CHECK_FALSE(exact_match(u, -u));

    TokenMatrix h3(3, 1);
    place_gate(h3, v, v.id_of("H"), 0, {}, {0});
    CHECK_FALSE(exact_match(CMatrix::Identity(8, 8), circuit_unitary(h3, v)));

    CHECK(phase_invariant_distance(u, u) == doctest::Approx(0.0));
    CHECK(phase_invariant_distance(u, -u) == doctest::Approx(0.0));
    TokenMatrix x3(3, 1);
    place_gate(x3, v, v.id_of("X"), 0, {}, {0});
    CHECK(phase_invariant_distance(CMatrix::Identity(8, 8), circuit_unitary(x3, v)) ==
          doctest::Approx(8.0));
}

TEST_CASE("apply_circuit validates structure and dimensions") {
    GateVocabulary v = hx_vocab();
    TokenMatrix bad(2, 1);
    bad.at(0, 0) = v.id_of("CX");
    bad.at(1, 0) = v.id_of("CX");  // two positive nodes
    CHECK_THROWS(apply_circuit(bad, v));

    TokenMatrix ok(2, 1);
    CHECK_THROWS(apply_circuit(ok, v, zero_state(3)));
}
