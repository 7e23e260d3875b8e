#include "genqc/json_io.hpp"

#include <stdexcept>

namespace genqc {

nlohmann::json token_matrix_to_json(const TokenMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int q = 0; q < m.qubits; ++q) {
        nlohmann::json row = nlohmann::json::array();
        for (int t = 0; t < m.timesteps; ++t) row.push_back(m.at(q, t));
        rows.push_back(std::move(row));
    }
    return {{"qubits", m.qubits}, {"timesteps", m.timesteps}, {"tokens", std::move(rows)}};
}

TokenMatrix token_matrix_from_json(const nlohmann::json& j) {
    TokenMatrix m(j.at("qubits").get<int>(), j.at("timesteps").get<int>());
    const auto& rows = j.at("tokens");
    if (static_cast<int>(rows.size()) != m.qubits)
        throw std::invalid_argument("token matrix row count mismatch");
    for (int q = 0; q < m.qubits; ++q) {
        const auto& row = rows[static_cast<size_t>(q)];
        if (static_cast<int>(row.size()) != m.timesteps)
            throw std::invalid_argument("token matrix column count mismatch");
        for (int t = 0; t < m.timesteps; ++t) m.at(q, t) = row[static_cast<size_t>(t)].get<int>();
    }
    return m;
}

nlohmann::json unitary_to_json(const CMatrix& u) {
    int dim = static_cast<int>(u.rows());
    nlohmann::json re = nlohmann::json::array();
    nlohmann::json im = nlohmann::json::array();
    for (int i = 0; i < dim; ++i) {
        nlohmann::json rr = nlohmann::json::array();
        nlohmann::json ri = nlohmann::json::array();
        for (int k = 0; k < dim; ++k) {
            rr.push_back(u(i, k).real());
            ri.push_back(u(i, k).imag());
        }
        re.push_back(std::move(rr));
        im.push_back(std::move(ri));
    }
    return {{"dim", dim}, {"re", std::move(re)}, {"im", std::move(im)}};
}

CMatrix unitary_from_json(const nlohmann::json& j) {
    int dim = j.at("dim").get<int>();
    const auto& re = j.at("re");
    const auto& im = j.at("im");
    if (static_cast<int>(re.size()) != dim || static_cast<int>(im.size()) != dim)
        throw std::invalid_argument("unitary row count mismatch");
    CMatrix u(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int k = 0; k < dim; ++k)
            u(i, k) = Complex(re[static_cast<size_t>(i)][static_cast<size_t>(k)].get<double>(),
                              im[static_cast<size_t>(i)][static_cast<size_t>(k)].get<double>());
    return u;
}

}  // namespace genqc
