#include "genqc/dataset_forge.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "genqc/json_io.hpp"

namespace genqc {

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

struct PlacedGate {
    int id = 0;
    std::vector<int> positive;  // sorted qubit indices of positive nodes
    std::vector<int> negative;  // sorted qubit indices of negative nodes

    bool operator==(const PlacedGate& o) const {
        return id == o.id && positive == o.positive && negative == o.negative;
    }
    bool touches(const PlacedGate& o) const {
        auto overlap = [](const std::vector<int>& a, const std::vector<int>& b) {
            for (int x : a)
                if (std::find(b.begin(), b.end(), x) != b.end()) return true;
            return false;
        };
        return overlap(positive, o.positive) || overlap(positive, o.negative) ||
               overlap(negative, o.positive) || overlap(negative, o.negative);
    }
};

std::vector<PlacedGate> extract_gates(const TokenMatrix& m, const GateVocabulary& v) {
    std::vector<PlacedGate> gates;
    int pad_id = v.padding_id();
    for (int t = 0; t < m.timesteps; ++t) {
        PlacedGate g;
        for (int q = 0; q < m.qubits; ++q) {
            int token = m.at(q, t);
            int id = std::abs(token);
            if (id == 0 || id == pad_id) continue;
            g.id = id;
            (token > 0 ? g.positive : g.negative).push_back(q);
        }
        if (g.id == 0) continue;
        std::sort(g.positive.begin(), g.positive.end());
        std::sort(g.negative.begin(), g.negative.end());
        gates.push_back(std::move(g));
    }
    return gates;
}

TokenMatrix rebuild(const std::vector<PlacedGate>& gates, int qubits) {
    TokenMatrix m(qubits, static_cast<int>(gates.size()));
    for (size_t t = 0; t < gates.size(); ++t) {
        for (int q : gates[t].positive) m.at(q, static_cast<int>(t)) = gates[t].id;
        for (int q : gates[t].negative) m.at(q, static_cast<int>(t)) = -gates[t].id;
    }
    return m;
}

std::string record_key(const DatasetRecord& r) {
    std::ostringstream os;
    os << r.prompt << '\n' << r.tokens.qubits << 'x' << r.tokens.timesteps << ':';
    for (int token : r.tokens.cells) os << token << ',';
    return os.str();
}

/// Uniform k-subset of indices, order preserved (Algorithm R).
std::vector<size_t> reservoir_select(const std::vector<size_t>& idx, size_t k, Rng& rng) {
    if (k >= idx.size()) return idx;
    std::vector<size_t> picked(idx.begin(), idx.begin() + static_cast<int64_t>(k));
    for (size_t i = k; i < idx.size(); ++i) {
        uint64_t j = rng.integer(i + 1);
        if (j < k) picked[static_cast<size_t>(j)] = idx[i];
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

nlohmann::json record_to_json(const DatasetRecord& r) {
    nlohmann::json j;
    j["qubits"] = r.qubits;
    j["gate_count"] = r.gate_count;
    j["prompt"] = r.prompt;
    j["tokens"] = token_matrix_to_json(r.tokens);
    if (r.srv_label) j["srv"] = *r.srv_label;
    if (r.unitary_label) j["unitary"] = unitary_to_json(*r.unitary_label);
    return j;
}

DatasetRecord record_from_json(const nlohmann::json& j) {
    DatasetRecord r;
    r.qubits = j.at("qubits").get<int>();
    r.gate_count = j.at("gate_count").get<int>();
    r.prompt = j.at("prompt").get<std::string>();
    r.tokens = token_matrix_from_json(j.at("tokens"));
    if (j.contains("srv")) r.srv_label = j["srv"].get<SchmidtRankVector>();
    if (j.contains("unitary")) r.unitary_label = unitary_from_json(j["unitary"]);
    return r;
}

}  // namespace

SamplingSpec srv_table_spec() {
    SamplingSpec s;
    s.ranges = {{3, 2, 16}, {4, 3, 20}, {5, 4, 28}, {6, 5, 40}, {7, 6, 52}, {8, 7, 52}};
    s.gate_pool = {"H", "CX"};
    return s;
}

SamplingSpec srv_finetune_table_spec() {
    SamplingSpec s;
    s.ranges = {{9, 8, 36}, {10, 9, 36}};
    s.gate_pool = {"H", "CX"};
    return s;
}

SamplingSpec compile_table_spec() {
    SamplingSpec s;
    s.ranges = {{3, 2, 12}};
    s.gate_pool = {"H", "CX", "Z", "X", "CCX", "SWAP"};
    return s;
}

TokenMatrix random_circuit(const SamplingSpec& spec, const GateVocabulary& v, Rng& rng,
                           std::vector<std::string>* used_subset) {
    if (spec.ranges.empty() || spec.gate_pool.empty())
        throw std::invalid_argument("sampling spec needs qubit ranges and a gate pool");
    const QubitGateRange& range =
        spec.ranges[static_cast<size_t>(rng.integer(spec.ranges.size()))];
    if (range.min_gates > range.max_gates || range.min_gates < 0)
        throw std::invalid_argument("invalid gate-count bounds");

    std::vector<int> feasible;
    for (const std::string& name : spec.gate_pool) {
        int id = v.id_of(name);
        if (id == 0) throw std::invalid_argument("pool gate " + name + " missing from vocabulary");
        const GateInfo& g = v.gate(id);
        if (g.controls + g.targets <= range.qubits) feasible.push_back(id);
    }
    if (feasible.empty())
        throw std::invalid_argument("no gate in the pool fits " + std::to_string(range.qubits) +
                                    " qubits");

    uint64_t mask = rng.integer((uint64_t{1} << feasible.size()) - 1) + 1;
    std::vector<int> subset;
    for (size_t i = 0; i < feasible.size(); ++i)
        if (mask & (uint64_t{1} << i)) subset.push_back(feasible[i]);
    if (used_subset) {
        used_subset->clear();
        for (int id : subset) used_subset->push_back(v.gate(id).name);
    }

    int n_gates = static_cast<int>(rng.range(range.min_gates, range.max_gates));
    TokenMatrix m(range.qubits, n_gates);
    std::vector<int> qubit_order(static_cast<size_t>(range.qubits));
    for (int q = 0; q < range.qubits; ++q) qubit_order[static_cast<size_t>(q)] = q;
    for (int t = 0; t < n_gates; ++t) {
        int gate_id = subset[static_cast<size_t>(rng.integer(subset.size()))];
        const GateInfo& g = v.gate(gate_id);
        rng.shuffle(qubit_order);
        std::vector<int> controls(qubit_order.begin(), qubit_order.begin() + g.controls);
        std::vector<int> targets(qubit_order.begin() + g.controls,
                                 qubit_order.begin() + g.controls + g.targets);
        place_gate(m, v, gate_id, t, controls, targets);
    }
    return m;
}

TokenMatrix optimize_circuit(const TokenMatrix& m, const GateVocabulary& v) {
    if (auto err = validate_tokens(m, v))
        throw std::invalid_argument(std::string("invalid circuit: ") + err->message);
    std::vector<PlacedGate> gates = extract_gates(m, v);
    bool changed = true;
    while (changed) {
        changed = false;
        for (size_t i = 0; i + 1 < gates.size() && !changed; ++i) {
            // First later gate sharing a qubit either cancels or blocks.
            for (size_t j = i + 1; j < gates.size(); ++j) {
                if (!gates[i].touches(gates[j])) continue;
                if (gates[i] == gates[j]) {
                    gates.erase(gates.begin() + static_cast<int64_t>(j));
                    gates.erase(gates.begin() + static_cast<int64_t>(i));
                    changed = true;
                }
                break;
            }
        }
    }
    return rebuild(gates, m.qubits);
}

int count_gates(const TokenMatrix& m, const GateVocabulary& v) {
    return static_cast<int>(extract_gates(m, v).size());
}

std::string srv_prompt(const SchmidtRankVector& srv) {
    std::ostringstream os;
    os << "Generate SRV: [";
    for (size_t i = 0; i < srv.size(); ++i) {
        if (i) os << ", ";
        os << srv[i];
    }
    os << "]";
    return os.str();
}

std::string compile_prompt(std::vector<std::string> gate_names) {
    for (std::string& g : gate_names) g = lower(g);
    std::sort(gate_names.begin(), gate_names.end());
    gate_names.erase(std::unique(gate_names.begin(), gate_names.end()), gate_names.end());
    std::ostringstream os;
    os << "Compile using: [";
    for (size_t i = 0; i < gate_names.size(); ++i) {
        if (i) os << ", ";
        os << gate_names[i];
    }
    os << "]";
    return os.str();
}

std::pair<std::string, SchmidtRankVector> label_srv(const TokenMatrix& m,
                                                    const GateVocabulary& v) {
    SchmidtRankVector r = srv(apply_circuit(m, v));
    return {srv_prompt(r), r};
}

std::pair<std::string, CMatrix> label_unitary(const TokenMatrix& m, const GateVocabulary& v,
                                              const std::vector<std::string>& pool_subset) {
    return {compile_prompt(pool_subset), circuit_unitary(m, v)};
}

std::vector<DatasetRecord> dedup(const std::vector<DatasetRecord>& records) {
    std::vector<DatasetRecord> out;
    std::unordered_set<std::string> seen;
    for (const DatasetRecord& r : records)
        if (seen.insert(record_key(r)).second) out.push_back(r);
    return out;
}

BalanceResult balance_with_stats(const std::vector<DatasetRecord>& records,
                                 const BalanceConfig& cfg) {
    if (cfg.quantile <= 0.0 || cfg.quantile > 1.0)
        throw std::invalid_argument("quantile must be in (0, 1]");
    BalanceResult result;
    if (records.empty()) return result;
    Rng rng(cfg.seed);

    std::vector<std::string> prompt_order;
    std::map<std::string, std::vector<size_t>> bins;
    for (size_t i = 0; i < records.size(); ++i) {
        auto [it, fresh] = bins.try_emplace(records[i].prompt);
        if (fresh) prompt_order.push_back(records[i].prompt);
        it->second.push_back(i);
    }

    size_t min_bin = records.size();
    for (const std::string& p : prompt_order) min_bin = std::min(min_bin, bins[p].size());
    size_t step1_target =
        cfg.per_prompt_target > 0 ? static_cast<size_t>(cfg.per_prompt_target) : min_bin;

    std::map<std::string, std::vector<size_t>> balanced;
    for (const std::string& p : prompt_order)
        balanced[p] = reservoir_select(bins[p], step1_target, rng);

    // Step 2: within a prompt bin, cap every gate-count bucket at the size of
    // the bucket holding the q-quantile length.
    for (const std::string& p : prompt_order) {
        std::vector<size_t>& bin = balanced[p];
        BalancePromptStats stats;
        stats.prompt = p;
        stats.step1_count = bin.size();
        std::vector<int> lengths;
        lengths.reserve(bin.size());
        for (size_t i : bin) lengths.push_back(records[i].gate_count);
        std::sort(lengths.begin(), lengths.end());
        stats.q_len =
            lengths[static_cast<size_t>(cfg.quantile * static_cast<double>(lengths.size() - 1))];
        stats.cap = static_cast<size_t>(std::count(lengths.begin(), lengths.end(), stats.q_len));

        std::map<int, std::vector<size_t>> buckets;
        for (size_t i : bin) buckets[records[i].gate_count].push_back(i);
        std::vector<size_t> kept;
        for (auto& [len, idx] : buckets) {
            std::vector<size_t> sel = reservoir_select(idx, stats.cap, rng);
            kept.insert(kept.end(), sel.begin(), sel.end());
        }
        std::sort(kept.begin(), kept.end());
        bin = std::move(kept);
        result.prompts.push_back(std::move(stats));
    }

    // Final equalization so per-prompt counts stay equal after the length caps.
    size_t final_target = records.size();
    for (const std::string& p : prompt_order)
        final_target = std::min(final_target, balanced[p].size());
    std::vector<size_t> all;
    for (size_t k = 0; k < prompt_order.size(); ++k) {
        std::vector<size_t> sel = reservoir_select(balanced[prompt_order[k]], final_target, rng);
        result.prompts[k].final_count = sel.size();
        all.insert(all.end(), sel.begin(), sel.end());
    }
    std::sort(all.begin(), all.end());

    result.records.reserve(all.size());
    for (size_t i : all) result.records.push_back(records[i]);
    return result;
}

std::vector<DatasetRecord> balance(const std::vector<DatasetRecord>& records,
                                   const BalanceConfig& cfg) {
    return balance_with_stats(records, cfg).records;
}

std::vector<DatasetRecord> generate_dataset(const SamplingSpec& spec, const GateVocabulary& v,
                                            Task task) {
    std::vector<DatasetRecord> records;
    records.reserve(static_cast<size_t>(spec.target_size));
    for (int64_t i = 0; i < spec.target_size; ++i) {
        Rng rng = Rng::child(spec.seed, static_cast<uint64_t>(i));
        std::vector<std::string> subset;
        TokenMatrix raw = random_circuit(spec, v, rng, &subset);
        DatasetRecord r;
        r.tokens = optimize_circuit(raw, v);
        r.qubits = r.tokens.qubits;
        r.gate_count = count_gates(r.tokens, v);
        if (task == Task::srv) {
            auto [prompt, rank] = label_srv(r.tokens, v);
            r.prompt = std::move(prompt);
            r.srv_label = std::move(rank);
        } else {
            auto [prompt, u] = label_unitary(r.tokens, v, subset);
            r.prompt = std::move(prompt);
            r.unitary_label = std::move(u);
        }
        records.push_back(std::move(r));
    }
    return dedup(records);
}

void write_dataset_jsonl(const std::string& path, const std::vector<DatasetRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (const DatasetRecord& r : records) out << record_to_json(r).dump() << '\n';
}

std::vector<DatasetRecord> read_dataset_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<DatasetRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(record_from_json(nlohmann::json::parse(line)));
    }
    return records;
}

}  // namespace genqc
