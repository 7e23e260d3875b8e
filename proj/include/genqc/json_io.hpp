#pragma once

#include <json.hpp>

#include "genqc/gate_codec.hpp"
#include "genqc/quantum_sim.hpp"

namespace genqc {

/// {"qubits":int,"timesteps":int,"tokens":[[signed int]]} with qubit rows.
nlohmann::json token_matrix_to_json(const TokenMatrix& m);
TokenMatrix token_matrix_from_json(const nlohmann::json& j);

/// {"dim":int,"re":[[f64]],"im":[[f64]]}
nlohmann::json unitary_to_json(const CMatrix& u);
CMatrix unitary_from_json(const nlohmann::json& j);

}  // namespace genqc
