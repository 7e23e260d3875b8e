#include "genqc/eval_cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "genqc/condition_encoder.hpp"

namespace genqc {

namespace {

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
constexpr uint64_t kCondStream = 0x01000000ULL;
constexpr uint64_t kBaselineStream = 0x02000000ULL;
constexpr uint64_t kEditStream = 0x03000000ULL;

// Seed for an independent task, matching Rng::child's derivation so
// sample_batch's own child streams stay decorrelated across tasks.
uint64_t task_seed(uint64_t seed, uint64_t stream) { return seed + kGolden * (stream + 1); }

int64_t round_up(int64_t value, int64_t multiple) {
    return ((value + multiple - 1) / multiple) * multiple;
}

std::string srv_label(const SchmidtRankVector& srv) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < srv.size(); ++i) {
        if (i) os << ", ";
        os << srv[i];
    }
    os << "]";
    return os.str();
}

void check_srv_entries(const SchmidtRankVector& srv) {
    if (srv.empty()) throw std::invalid_argument("rank vector is empty");
    for (int r : srv) {
        if (r != 1 && r != 2) {
            throw std::invalid_argument("rank vector entries must be 1 or 2, got " +
                                        std::to_string(r));
        }
    }
}

void check_eval_args(int samples, int max_gates, const EvalConfig& cfg) {
    if (samples < 1) throw std::invalid_argument("samples per task must be at least 1");
    if (max_gates < 1) throw std::invalid_argument("max_gates must be at least 1");
    if (cfg.hist_bins < 1) throw std::invalid_argument("hist_bins must be at least 1");
    if (cfg.baseline_samples < 0) throw std::invalid_argument("baseline_samples must be >= 0");
    if (!(cfg.exact_tol > 0.0)) throw std::invalid_argument("exact_tol must be positive");
}

SchmidtRankVector simulated_srv(const TokenMatrix& m, const GateVocabulary& v) {
    return srv(apply_circuit(m, v));
}

double safe_ratio(int64_t num, int64_t den) {
    return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

}  // namespace

int entangled_count(const SchmidtRankVector& srv) {
    int n = 0;
    for (int r : srv) n += (r == 2);
    return n;
}

std::vector<SchmidtRankVector> physical_srvs(int qubits) {
    if (qubits < 1) throw std::invalid_argument("physical_srvs: qubits must be at least 1");
    if (qubits > 20) throw std::invalid_argument("physical_srvs: qubit count too large");
    std::vector<SchmidtRankVector> out;
    for (uint32_t m = 0; m < (1u << qubits); ++m) {
        SchmidtRankVector srv(qubits, 1);
        for (int q = 0; q < qubits; ++q) {
            if (m & (1u << q)) srv[q] = 2;
        }
        if (srv_is_physical(srv)) out.push_back(std::move(srv));
    }
    std::sort(out.begin(), out.end());
    return out;
}

TokenMatrix canonical_tokens(const TokenMatrix& m, const GateVocabulary& v) {
    TokenMatrix stripped = strip_padding(m, v);
    std::vector<int> keep;
    for (int t = 0; t < stripped.timesteps; ++t) {
        bool empty = true;
        for (int q = 0; q < stripped.qubits && empty; ++q) {
            if (stripped.at(q, t) != 0) empty = false;
        }
        if (!empty) keep.push_back(t);
    }
    TokenMatrix out(stripped.qubits, static_cast<int>(keep.size()));
    for (int q = 0; q < out.qubits; ++q) {
        for (size_t i = 0; i < keep.size(); ++i) {
            out.at(q, static_cast<int>(i)) = stripped.at(q, keep[i]);
        }
    }
    return out;
}

std::string tokens_key(const TokenMatrix& m) {
    std::ostringstream os;
    os << m.qubits << "x" << m.timesteps << ":";
    for (size_t i = 0; i < m.cells.size(); ++i) {
        if (i) os << ",";
        os << m.cells[i];
    }
    return os.str();
}

Tensor materialize_condition(const ModelBundle& m, const std::string& prompt,
                             const std::optional<CMatrix>& unitary) {
    ad::Tape tape;
    nn::Bound p = nn::bind(tape, m.store, false);
    ad::Val pe = m.encoder->embed_prompt(tape, p, prompt);
    std::optional<ad::Val> ue;
    if (unitary) ue = m.encoder->encode_unitary(tape, p, *unitary, false);
    ad::Val c = m.encoder->assemble_condition(tape, p, pe, ue, false);
    return tape.val(c).clone();
}

Tensor materialize_null(const ModelBundle& m) {
    ad::Tape tape;
    nn::Bound p = nn::bind(tape, m.store, false);
    return tape.val(m.encoder->null_condition(tape, p)).clone();
}

std::vector<TokenMatrix> random_circuits_with_srv(const SchmidtRankVector& target,
                                                  const GateVocabulary& v,
                                                  const std::vector<std::string>& pool,
                                                  int max_gates, int count, Rng& rng,
                                                  int64_t max_tries) {
    check_srv_entries(target);
    if (count < 1) throw std::invalid_argument("random_circuits_with_srv: count must be >= 1");
    SamplingSpec spec;
    spec.ranges = {{static_cast<int>(target.size()), 1, max_gates}};
    spec.gate_pool = pool;
    std::vector<TokenMatrix> out;
    for (int64_t tries = 0; tries < max_tries && static_cast<int>(out.size()) < count; ++tries) {
        TokenMatrix m = optimize_circuit(random_circuit(spec, v, rng), v);
        // A draw can cancel down to the empty circuit; edits need a real prefix.
        if (count_gates(m, v) < 1) continue;
        if (simulated_srv(m, v) == target) out.push_back(std::move(m));
    }
    if (static_cast<int>(out.size()) < count) {
        throw std::runtime_error("random_circuits_with_srv: attempt budget exhausted for " +
                                 srv_label(target));
    }
    return out;
}

Histogram make_histogram(const std::vector<double>& values, int bins, double lo, double hi) {
    if (bins < 1) throw std::invalid_argument("make_histogram: bins must be >= 1");
    if (!(hi > lo)) throw std::invalid_argument("make_histogram: hi must exceed lo");
    Histogram h;
    h.edges.resize(static_cast<size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) {
        h.edges[static_cast<size_t>(b)] = lo + (hi - lo) * static_cast<double>(b) / bins;
    }
    h.counts.assign(static_cast<size_t>(bins), 0);
    for (double x : values) {
        if (!std::isfinite(x)) continue;
        auto b = static_cast<int64_t>(std::floor((x - lo) / (hi - lo) * bins));
        b = std::clamp<int64_t>(b, 0, bins - 1);
        ++h.counts[static_cast<size_t>(b)];
    }
    return h;
}

EvalReport eval_srv(const ModelBundle& model, const std::vector<SchmidtRankVector>& conditions,
                    int samples_per_condition, int max_gates,
                    const std::vector<DatasetRecord>& corpus, const EvalConfig& cfg) {
    if (conditions.empty()) throw std::invalid_argument("eval_srv: no conditions");
    check_eval_args(samples_per_condition, max_gates, cfg);
    cfg.guidance.validate(model.schedule);

    const GateVocabulary& v = model.vocab;
    const int64_t t_round = round_up(max_gates, model.denoiser->time_multiple());

    std::unordered_set<std::string> corpus_keys;
    for (const DatasetRecord& rec : corpus) {
        corpus_keys.insert(tokens_key(canonical_tokens(rec.tokens, v)));
    }

    Tensor null_cond = materialize_null(model);

    EvalReport r;
    r.task = "srv";
    r.seed = cfg.seed;

    std::vector<std::map<SchmidtRankVector, int64_t>> generated(conditions.size());
    std::vector<int64_t> invalid(conditions.size(), 0);

    for (size_t i = 0; i < conditions.size(); ++i) {
        const SchmidtRankVector& target = conditions[i];
        check_srv_entries(target);
        const int qubits = static_cast<int>(target.size());

        SrvConditionStats st;
        st.prompt = srv_prompt(target);
        st.srv = target;
        st.entangled = entangled_count(target);
        st.samples = samples_per_condition;

        Tensor cond = materialize_condition(model, st.prompt);
        std::vector<Tensor> draws =
            sample_batch(samples_per_condition, {qubits, t_round, v.d}, cond, null_cond,
                         model.store, *model.denoiser, model.schedule, cfg.guidance,
                         task_seed(cfg.seed, kCondStream + i));

        std::unordered_set<std::string> distinct;
        for (const Tensor& x : draws) {
            DecodeResult dr = decode(x, v);
            if (!dr.ok()) {
                ++invalid[i];
                continue;
            }
            ++st.decoded;
            std::string key = tokens_key(canonical_tokens(dr.tokens, v));
            distinct.insert(key);
            if (!corpus_keys.count(key)) ++st.novel;
            SchmidtRankVector got = simulated_srv(dr.tokens, v);
            ++generated[i][got];
            if (got == target) ++st.correct;
            ++st.length_counts[count_gates(dr.tokens, v)];
        }
        st.distinct_count = static_cast<int64_t>(distinct.size());

        const int nb = cfg.baseline_samples > 0 ? cfg.baseline_samples : samples_per_condition;
        SamplingSpec bspec;
        bspec.ranges = {{qubits, 1, static_cast<int>(t_round)}};
        bspec.gate_pool = model.config.gates;
        Rng brng = Rng::child(cfg.seed, kBaselineStream + i);
        int64_t hits = 0;
        for (int b = 0; b < nb; ++b) {
            if (simulated_srv(random_circuit(bspec, v, brng), v) == target) ++hits;
        }
        st.baseline_accuracy = safe_ratio(hits, nb);

        for (const auto& [len, cnt] : st.length_counts) {
            r.lengths_by_entangled[st.entangled][len] += cnt;
        }
        r.srv_conditions.push_back(std::move(st));
    }

    int64_t total = 0, decoded = 0, correct = 0, novel = 0, distinct = 0;
    std::map<int, std::pair<int64_t, int64_t>> by_entangled;  // correct, decoded
    for (const SrvConditionStats& st : r.srv_conditions) {
        total += st.samples;
        decoded += st.decoded;
        correct += st.correct;
        novel += st.novel;
        distinct += st.distinct_count;
        by_entangled[st.entangled].first += st.correct;
        by_entangled[st.entangled].second += st.decoded;
    }
    r.conversion_rate = safe_ratio(decoded, total);
    r.accuracy = safe_ratio(correct, decoded);
    r.novelty = safe_ratio(novel, decoded);
    r.uniqueness = safe_ratio(distinct, decoded);
    for (const auto& [k, cd] : by_entangled) {
        r.accuracy_by_entangled[k] = safe_ratio(cd.first, cd.second);
    }

    std::set<SchmidtRankVector> col_set;
    for (const SchmidtRankVector& c : conditions) col_set.insert(c);
    for (const auto& counts : generated) {
        for (const auto& [srv, n] : counts) col_set.insert(srv);
    }
    std::vector<SchmidtRankVector> cols(col_set.begin(), col_set.end());
    for (const SchmidtRankVector& c : cols) r.confusion.col_labels.push_back(srv_label(c));
    r.confusion.col_labels.push_back("invalid");
    for (size_t i = 0; i < conditions.size(); ++i) {
        r.confusion.row_labels.push_back(srv_label(conditions[i]));
        std::vector<int64_t> row;
        for (const SchmidtRankVector& c : cols) {
            auto it = generated[i].find(c);
            row.push_back(it == generated[i].end() ? 0 : it->second);
        }
        row.push_back(invalid[i]);
        r.confusion.counts.push_back(std::move(row));
    }
    return r;
}

EvalReport eval_compile(const ModelBundle& model,
                        const std::vector<std::pair<CMatrix, std::string>>& unitaries,
                        int samples_per_unitary, int max_gates, const EvalConfig& cfg) {
    if (unitaries.empty()) throw std::invalid_argument("eval_compile: no unitaries");
    check_eval_args(samples_per_unitary, max_gates, cfg);
    cfg.guidance.validate(model.schedule);
    if (model.config.compile_qubits < 1) {
        throw std::invalid_argument("eval_compile: model has no unitary branch");
    }

    const GateVocabulary& v = model.vocab;
    const int qubits = model.config.compile_qubits;
    const int64_t dim = int64_t{1} << qubits;
    const int64_t t_round = round_up(max_gates, model.denoiser->time_multiple());
    const double inf = std::numeric_limits<double>::infinity();

    Tensor null_cond = materialize_null(model);

    EvalReport r;
    r.task = "compile";
    r.seed = cfg.seed;

    std::vector<double> model_best, baseline_best;
    int64_t total = 0, decoded = 0, solved = 0;

    for (size_t j = 0; j < unitaries.size(); ++j) {
        const CMatrix& u = unitaries[j].first;
        const std::string& prompt = unitaries[j].second;
        if (u.rows() != dim || u.cols() != dim) {
            throw std::invalid_argument("eval_compile: unitary " + std::to_string(j) +
                                        " does not match the model's " + std::to_string(qubits) +
                                        "-qubit branch");
        }
        ParsedPrompt pp = parse_prompt(prompt, model.encoder->config().gate_names);
        if (pp.task != ParsedPrompt::Task::Compile) {
            throw std::invalid_argument("eval_compile: prompt " + std::to_string(j) +
                                        " is not a compile prompt");
        }

        UnitaryCompileStats st;
        st.prompt = prompt;
        st.samples = samples_per_unitary;

        Tensor cond = materialize_condition(model, prompt, u);
        std::vector<Tensor> draws =
            sample_batch(samples_per_unitary, {qubits, t_round, v.d}, cond, null_cond,
                         model.store, *model.denoiser, model.schedule, cfg.guidance,
                         task_seed(cfg.seed, kCondStream + j));

        std::unordered_set<std::string> exact_keys;
        double best = inf;
        for (const Tensor& x : draws) {
            DecodeResult dr = decode(x, v);
            if (!dr.ok()) continue;
            ++st.decoded;
            CMatrix ug = circuit_unitary(dr.tokens, v);
            best = std::min(best, frobenius_distance(u, ug));
            if (exact_match(u, ug, cfg.exact_tol)) {
                ++st.exact;
                exact_keys.insert(tokens_key(canonical_tokens(dr.tokens, v)));
            }
            if (phase_invariant_distance(u, ug) <= cfg.exact_tol) ++st.phase_exact;
        }
        st.distinct_exact = static_cast<int64_t>(exact_keys.size());
        st.best_frobenius = best;

        const int nb = cfg.baseline_samples > 0 ? cfg.baseline_samples : samples_per_unitary;
        SamplingSpec bspec;
        bspec.ranges = {{qubits, 1, static_cast<int>(t_round)}};
        bspec.gate_pool = pp.gates;
        Rng brng = Rng::child(cfg.seed, kBaselineStream + j);
        double bbest = inf;
        for (int b = 0; b < nb; ++b) {
            bbest = std::min(bbest,
                             frobenius_distance(u, circuit_unitary(random_circuit(bspec, v, brng), v)));
        }
        st.baseline_best = bbest;

        total += st.samples;
        decoded += st.decoded;
        solved += (st.exact > 0);
        if (std::isfinite(best)) model_best.push_back(best);
        if (std::isfinite(bbest)) baseline_best.push_back(bbest);
        r.unitaries.push_back(std::move(st));
    }

    r.conversion_rate = safe_ratio(decoded, total);
    r.exact_fraction = safe_ratio(solved, static_cast<int64_t>(unitaries.size()));
    r.accuracy = r.exact_fraction;

    double hi = 0.0;
    for (double x : model_best) hi = std::max(hi, x);
    for (double x : baseline_best) hi = std::max(hi, x);
    hi = std::max(hi, 1e-9);
    r.model_distances = make_histogram(model_best, cfg.hist_bins, 0.0, hi);
    r.baseline_distances = make_histogram(baseline_best, cfg.hist_bins, 0.0, hi);
    return r;
}

EvalReport eval_edit(const ModelBundle& model, const std::vector<EditTask>& initials,
                     const std::vector<SchmidtRankVector>& targets, int samples_per_initial,
                     int max_gates, const EvalConfig& cfg) {
    if (initials.empty()) throw std::invalid_argument("eval_edit: no initial circuits");
    if (targets.empty()) throw std::invalid_argument("eval_edit: no target rank vectors");
    check_eval_args(samples_per_initial, max_gates, cfg);

    const GateVocabulary& v = model.vocab;
    const int qubits = initials.front().initial.qubits;
    const int64_t t_round = round_up(max_gates, model.denoiser->time_multiple());

    GuidanceConfig guidance = cfg.guidance;
    if (!guidance.t_start) guidance.t_start = guidance.steps - 1;
    guidance.validate(model.schedule);

    std::vector<TokenMatrix> templates;
    std::vector<int> prefix_len;
    for (const EditTask& task : initials) {
        check_srv_entries(task.srv_initial);
        TokenMatrix stripped = strip_padding(task.initial, v);
        if (count_gates(stripped, v) < 1) {
            throw std::invalid_argument("eval_edit: initial circuit has no gates");
        }
        if (stripped.qubits != qubits ||
            static_cast<int>(task.srv_initial.size()) != qubits) {
            throw std::invalid_argument("eval_edit: initial circuits must share one qubit count");
        }
        if (stripped.timesteps > max_gates) {
            throw std::invalid_argument("eval_edit: initial circuit longer than max_gates");
        }
        prefix_len.push_back(stripped.timesteps);
        templates.push_back(pad_tokens(stripped, v, qubits, static_cast<int>(t_round)));
    }
    for (const SchmidtRankVector& t : targets) {
        check_srv_entries(t);
        if (static_cast<int>(t.size()) != qubits) {
            throw std::invalid_argument("eval_edit: target rank vector size mismatch");
        }
    }

    Tensor null_cond = materialize_null(model);
    std::vector<Tensor> target_conds;
    for (const SchmidtRankVector& t : targets) {
        target_conds.push_back(materialize_condition(model, srv_prompt(t)));
    }

    EvalReport r;
    r.task = "edit";
    r.seed = cfg.seed;

    std::map<std::pair<std::string, std::string>, EditCellStats> cells;
    int64_t total = 0, decoded = 0, correct = 0, initial_slots = 0, solved_slots = 0;

    uint64_t task_idx = 0;
    for (size_t j = 0; j < initials.size(); ++j) {
        const TokenMatrix& tmpl = templates[j];
        const int fixed_cols = prefix_len[j];
        Tensor mask({qubits, t_round});
        for (int q = 0; q < qubits; ++q) {
            for (int t = 0; t < fixed_cols; ++t) mask[static_cast<int64_t>(q) * t_round + t] = 1.0;
        }
        const std::string row_label = srv_label(initials[j].srv_initial);

        for (size_t k = 0; k < targets.size(); ++k) {
            const SchmidtRankVector& target = targets[k];
            EditCellStats& cell = cells[{row_label, srv_label(target)}];
            cell.srv_initial = row_label;
            cell.srv_target = srv_label(target);
            ++cell.initials;

            Rng rng = Rng::child(cfg.seed, kEditStream + task_idx);
            ++task_idx;
            bool solved = false;
            for (int s = 0; s < samples_per_initial; ++s) {
                Tensor x = sample_inpaint(tmpl, v, mask, target_conds[k], null_cond, model.store,
                                          *model.denoiser, model.schedule, guidance, rng);
                ++cell.samples;
                DecodeResult dr = decode(x, v);
                if (!dr.ok()) continue;
                ++cell.decoded;
                bool prefix_ok = true;
                for (int q = 0; q < qubits && prefix_ok; ++q) {
                    for (int t = 0; t < fixed_cols && prefix_ok; ++t) {
                        if (dr.tokens.at(q, t) != tmpl.at(q, t)) prefix_ok = false;
                    }
                }
                if (prefix_ok && simulated_srv(dr.tokens, v) == target) {
                    ++cell.correct;
                    solved = true;
                }
            }
            if (solved) ++cell.solved_initials;
        }
    }

    for (auto& [key, cell] : cells) {
        total += cell.samples;
        decoded += cell.decoded;
        correct += cell.correct;
        initial_slots += cell.initials;
        solved_slots += cell.solved_initials;
        r.edit_cells.push_back(cell);
    }
    r.conversion_rate = safe_ratio(decoded, total);
    r.accuracy = safe_ratio(correct, decoded);
    r.editable_fraction = safe_ratio(solved_slots, initial_slots);
    return r;
}

namespace {

nlohmann::json histogram_to_json(const Histogram& h) {
    return nlohmann::json{{"edges", h.edges}, {"counts", h.counts}};
}

Histogram histogram_from_json(const nlohmann::json& j) {
    Histogram h;
    h.edges = j.at("edges").get<std::vector<double>>();
    h.counts = j.at("counts").get<std::vector<int64_t>>();
    return h;
}

nlohmann::json finite_or_null(double x) {
    if (std::isfinite(x)) return x;
    return nullptr;
}

double finite_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::numeric_limits<double>::infinity();
    return j.get<double>();
}

template <typename K, typename V>
nlohmann::json int_map_to_json(const std::map<K, V>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["schema_version"] = r.schema_version;
    j["task"] = r.task;
    j["seed"] = r.seed;
    j["conversion_rate"] = r.conversion_rate;
    j["accuracy"] = r.accuracy;
    j["novelty"] = r.novelty;
    j["uniqueness"] = r.uniqueness;

    j["srv_conditions"] = nlohmann::json::array();
    for (const SrvConditionStats& st : r.srv_conditions) {
        nlohmann::json c;
        c["prompt"] = st.prompt;
        c["srv"] = st.srv;
        c["entangled"] = st.entangled;
        c["samples"] = st.samples;
        c["decoded"] = st.decoded;
        c["correct"] = st.correct;
        c["novel"] = st.novel;
        c["distinct"] = st.distinct_count;
        c["baseline_accuracy"] = st.baseline_accuracy;
        c["length_counts"] = int_map_to_json(st.length_counts);
        j["srv_conditions"].push_back(std::move(c));
    }
    j["accuracy_by_entangled"] = int_map_to_json(r.accuracy_by_entangled);
    j["confusion"] = {{"rows", r.confusion.row_labels},
                      {"cols", r.confusion.col_labels},
                      {"counts", r.confusion.counts}};
    nlohmann::json lengths = nlohmann::json::object();
    for (const auto& [ent, hist] : r.lengths_by_entangled) {
        lengths[std::to_string(ent)] = int_map_to_json(hist);
    }
    j["lengths_by_entangled"] = std::move(lengths);

    j["unitaries"] = nlohmann::json::array();
    for (const UnitaryCompileStats& st : r.unitaries) {
        nlohmann::json u;
        u["prompt"] = st.prompt;
        u["samples"] = st.samples;
        u["decoded"] = st.decoded;
        u["exact"] = st.exact;
        u["distinct_exact"] = st.distinct_exact;
        u["phase_exact"] = st.phase_exact;
        u["best_frobenius"] = finite_or_null(st.best_frobenius);
        u["baseline_best"] = finite_or_null(st.baseline_best);
        j["unitaries"].push_back(std::move(u));
    }
    j["exact_fraction"] = r.exact_fraction;
    j["model_distances"] = histogram_to_json(r.model_distances);
    j["baseline_distances"] = histogram_to_json(r.baseline_distances);

    j["edit_cells"] = nlohmann::json::array();
    for (const EditCellStats& st : r.edit_cells) {
        nlohmann::json c;
        c["srv_initial"] = st.srv_initial;
        c["srv_target"] = st.srv_target;
        c["initials"] = st.initials;
        c["samples"] = st.samples;
        c["decoded"] = st.decoded;
        c["correct"] = st.correct;
        c["solved_initials"] = st.solved_initials;
        j["edit_cells"].push_back(std::move(c));
    }
    j["editable_fraction"] = r.editable_fraction;
    return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        r.schema_version = j.at("schema_version").get<int>();
        if (r.schema_version != 1) {
            throw std::runtime_error("unsupported report schema version " +
                                     std::to_string(r.schema_version));
        }
        r.task = j.at("task").get<std::string>();
        r.seed = j.at("seed").get<uint64_t>();
        r.conversion_rate = j.at("conversion_rate").get<double>();
        r.accuracy = j.at("accuracy").get<double>();
        r.novelty = j.at("novelty").get<double>();
        r.uniqueness = j.at("uniqueness").get<double>();

        for (const auto& c : j.at("srv_conditions")) {
            SrvConditionStats st;
            st.prompt = c.at("prompt").get<std::string>();
            st.srv = c.at("srv").get<SchmidtRankVector>();
            st.entangled = c.at("entangled").get<int>();
            st.samples = c.at("samples").get<int64_t>();
            st.decoded = c.at("decoded").get<int64_t>();
            st.correct = c.at("correct").get<int64_t>();
            st.novel = c.at("novel").get<int64_t>();
            st.distinct_count = c.at("distinct").get<int64_t>();
            st.baseline_accuracy = c.at("baseline_accuracy").get<double>();
            for (const auto& [k, v] : c.at("length_counts").items()) {
                st.length_counts[std::stoi(k)] = v.get<int64_t>();
            }
            r.srv_conditions.push_back(std::move(st));
        }
        for (const auto& [k, v] : j.at("accuracy_by_entangled").items()) {
            r.accuracy_by_entangled[std::stoi(k)] = v.get<double>();
        }
        r.confusion.row_labels = j.at("confusion").at("rows").get<std::vector<std::string>>();
        r.confusion.col_labels = j.at("confusion").at("cols").get<std::vector<std::string>>();
        r.confusion.counts =
            j.at("confusion").at("counts").get<std::vector<std::vector<int64_t>>>();
        for (const auto& [ent, hist] : j.at("lengths_by_entangled").items()) {
            for (const auto& [len, cnt] : hist.items()) {
                r.lengths_by_entangled[std::stoi(ent)][std::stoi(len)] = cnt.get<int64_t>();
            }
        }

        for (const auto& u : j.at("unitaries")) {
            UnitaryCompileStats st;
            st.prompt = u.at("prompt").get<std::string>();
            st.samples = u.at("samples").get<int64_t>();
            st.decoded = u.at("decoded").get<int64_t>();
            st.exact = u.at("exact").get<int64_t>();
            st.distinct_exact = u.at("distinct_exact").get<int64_t>();
            st.phase_exact = u.at("phase_exact").get<int64_t>();
            st.best_frobenius = finite_from_json(u.at("best_frobenius"));
            st.baseline_best = finite_from_json(u.at("baseline_best"));
            r.unitaries.push_back(std::move(st));
        }
        r.exact_fraction = j.at("exact_fraction").get<double>();
        r.model_distances = histogram_from_json(j.at("model_distances"));
        r.baseline_distances = histogram_from_json(j.at("baseline_distances"));

        for (const auto& c : j.at("edit_cells")) {
            EditCellStats st;
            st.srv_initial = c.at("srv_initial").get<std::string>();
            st.srv_target = c.at("srv_target").get<std::string>();
            st.initials = c.at("initials").get<int64_t>();
            st.samples = c.at("samples").get<int64_t>();
            st.decoded = c.at("decoded").get<int64_t>();
            st.correct = c.at("correct").get<int64_t>();
            st.solved_initials = c.at("solved_initials").get<int64_t>();
            r.edit_cells.push_back(std::move(st));
        }
        r.editable_fraction = j.at("editable_fraction").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed report: ") + e.what());
    }
    return r;
}

void write_report(const std::string& path, const EvalReport& r) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report to " + path);
    out << to_json(r).dump(2) << "\n";
    if (!out) throw std::runtime_error("short write to " + path);
}

EvalReport read_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read report from " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed report: ") + e.what());
    }
    return eval_report_from_json(j);
}

namespace {

const char* kPalette[] = {"#4878c0", "#e08030", "#50a060", "#c05070",
                          "#8060b0", "#b0a040", "#40a0a8", "#a06848"};
constexpr int kPaletteSize = 8;

std::string svg_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += ch;
        }
    }
    return out;
}

std::string fmt(double x, int precision = 3) {
    std::ostringstream os;
    os.precision(precision);
    os << std::fixed << x;
    return os.str();
}

void svg_header(std::ostringstream& os, int w, int h) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" viewBox=\"0 0 " << w << " " << h
       << "\" font-family=\"monospace\" font-size=\"11\">\n"
       << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"#ffffff\"/>\n";
}

std::string svg_accuracy_bars(const EvalReport& r) {
    const int label_w = 200, bar_w = 360, row_h = 22, top = 40;
    const int n = static_cast<int>(r.srv_conditions.size());
    const int w = label_w + bar_w + 60;
    const int h = top + n * row_h + 40;
    std::ostringstream os;
    svg_header(os, w, h);
    os << "<text x=\"10\" y=\"20\" font-size=\"13\">accuracy per condition"
          " (bar: model, tick: random baseline)</text>\n";
    for (int g = 0; g <= 4; ++g) {
        int x = label_w + bar_w * g / 4;
        os << "<line x1=\"" << x << "\" y1=\"" << top << "\" x2=\"" << x << "\" y2=\""
           << top + n * row_h << "\" stroke=\"#dddddd\"/>\n"
           << "<text x=\"" << x - 8 << "\" y=\"" << top + n * row_h + 16 << "\">"
           << fmt(g / 4.0, 2) << "</text>\n";
    }
    for (int i = 0; i < n; ++i) {
        const SrvConditionStats& st = r.srv_conditions[static_cast<size_t>(i)];
        double acc = st.decoded > 0 ? static_cast<double>(st.correct) / st.decoded : 0.0;
        int y = top + i * row_h;
        os << "<text x=\"10\" y=\"" << y + 15 << "\">" << svg_escape(srv_label(st.srv))
           << "</text>\n"
           << "<rect x=\"" << label_w << "\" y=\"" << y + 4 << "\" width=\""
           << static_cast<int>(acc * bar_w) << "\" height=\"" << row_h - 8
           << "\" fill=\"" << kPalette[1] << "\"/>\n";
        int bx = label_w + static_cast<int>(st.baseline_accuracy * bar_w);
        os << "<line x1=\"" << bx << "\" y1=\"" << y + 2 << "\" x2=\"" << bx << "\" y2=\""
           << y + row_h - 2 << "\" stroke=\"" << kPalette[0] << "\" stroke-width=\"2\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_confusion(const ConfusionMatrix& m, const std::string& title) {
    const int cell = 42, left = 110, top = 70;
    const int rows = static_cast<int>(m.row_labels.size());
    const int cols = static_cast<int>(m.col_labels.size());
    const int w = left + cols * cell + 20;
    const int h = top + rows * cell + 20;
    std::ostringstream os;
    svg_header(os, w, h);
    os << "<text x=\"10\" y=\"20\" font-size=\"13\">" << svg_escape(title) << "</text>\n";
    for (int c = 0; c < cols; ++c) {
        os << "<text x=\"" << left + c * cell + 4 << "\" y=\"" << top - 8
           << "\" transform=\"rotate(-35 " << left + c * cell + 4 << " " << top - 8 << ")\">"
           << svg_escape(m.col_labels[static_cast<size_t>(c)]) << "</text>\n";
    }
    for (int r = 0; r < rows; ++r) {
        os << "<text x=\"6\" y=\"" << top + r * cell + cell / 2 + 4 << "\">"
           << svg_escape(m.row_labels[static_cast<size_t>(r)]) << "</text>\n";
        int64_t row_sum = 0;
        for (int64_t v : m.counts[static_cast<size_t>(r)]) row_sum += v;
        for (int c = 0; c < cols; ++c) {
            int64_t v = m.counts[static_cast<size_t>(r)][static_cast<size_t>(c)];
            double frac = row_sum > 0 ? static_cast<double>(v) / row_sum : 0.0;
            os << "<rect x=\"" << left + c * cell << "\" y=\"" << top + r * cell
               << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << kPalette[1]
               << "\" fill-opacity=\"" << fmt(frac, 3)
               << "\" stroke=\"#cccccc\"/>\n"
               << "<text x=\"" << left + c * cell + 4 << "\" y=\""
               << top + r * cell + cell / 2 + 4 << "\">" << v << "</text>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_distance_hist(const EvalReport& r) {
    const Histogram& a = r.model_distances;
    const Histogram& b = r.baseline_distances;
    const int bins = static_cast<int>(a.counts.size());
    const int bin_w = 22, plot_h = 220, left = 50, top = 50;
    const int w = left + bins * bin_w + 30;
    const int h = top + plot_h + 50;
    int64_t peak = 1;
    for (int64_t v : a.counts) peak = std::max(peak, v);
    for (int64_t v : b.counts) peak = std::max(peak, v);
    std::ostringstream os;
    svg_header(os, w, h);
    os << "<text x=\"10\" y=\"20\" font-size=\"13\">best Frobenius distance per unitary</text>\n"
       << "<rect x=\"" << left << "\" y=\"28\" width=\"10\" height=\"10\" fill=\"" << kPalette[1]
       << "\"/><text x=\"" << left + 14 << "\" y=\"37\">model</text>\n"
       << "<rect x=\"" << left + 80 << "\" y=\"28\" width=\"10\" height=\"10\" fill=\""
       << kPalette[0] << "\"/><text x=\"" << left + 94 << "\" y=\"37\">random</text>\n";
    for (int i = 0; i < bins; ++i) {
        int x = left + i * bin_w;
        int ha = static_cast<int>(plot_h * static_cast<double>(a.counts[static_cast<size_t>(i)]) /
                                  static_cast<double>(peak));
        int hb = static_cast<int>(plot_h * static_cast<double>(b.counts[static_cast<size_t>(i)]) /
                                  static_cast<double>(peak));
        os << "<rect x=\"" << x << "\" y=\"" << top + plot_h - ha << "\" width=\"" << bin_w / 2
           << "\" height=\"" << ha << "\" fill=\"" << kPalette[1] << "\"/>\n"
           << "<rect x=\"" << x + bin_w / 2 << "\" y=\"" << top + plot_h - hb << "\" width=\""
           << bin_w / 2 << "\" height=\"" << hb << "\" fill=\"" << kPalette[0] << "\"/>\n";
    }
    os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\""
       << left + bins * bin_w << "\" y2=\"" << top + plot_h << "\" stroke=\"#333333\"/>\n"
       << "<text x=\"" << left << "\" y=\"" << top + plot_h + 16 << "\">"
       << fmt(a.edges.front(), 2) << "</text>\n"
       << "<text x=\"" << left + bins * bin_w - 30 << "\" y=\"" << top + plot_h + 16 << "\">"
       << fmt(a.edges.back(), 2) << "</text>\n"
       << "<text x=\"" << 8 << "\" y=\"" << top + 10 << "\">" << peak << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::string svg_lengths(const EvalReport& r) {
    int max_len = 1;
    int64_t peak = 1;
    for (const auto& [ent, hist] : r.lengths_by_entangled) {
        for (const auto& [len, cnt] : hist) {
            max_len = std::max(max_len, len);
            peak = std::max(peak, cnt);
        }
    }
    const int plot_w = 420, plot_h = 200, left = 50, top = 50;
    const int w = left + plot_w + 130;
    const int h = top + plot_h + 50;
    std::ostringstream os;
    svg_header(os, w, h);
    os << "<text x=\"10\" y=\"20\" font-size=\"13\">generated circuit length by entangled"
          " qubits</text>\n";
    int series = 0;
    for (const auto& [ent, hist] : r.lengths_by_entangled) {
        const char* color = kPalette[series % kPaletteSize];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (int len = 0; len <= max_len; ++len) {
            auto it = hist.find(len);
            int64_t cnt = it == hist.end() ? 0 : it->second;
            double x = left + plot_w * static_cast<double>(len) / max_len;
            double y = top + plot_h * (1.0 - static_cast<double>(cnt) / static_cast<double>(peak));
            os << fmt(x, 1) << "," << fmt(y, 1) << " ";
        }
        os << "\"/>\n"
           << "<text x=\"" << left + plot_w + 14 << "\" y=\"" << top + 14 + series * 16
           << "\" fill=\"" << color << "\">" << ent << " entangled</text>\n";
        ++series;
    }
    os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
       << "\" y2=\"" << top + plot_h << "\" stroke=\"#333333\"/>\n"
       << "<text x=\"" << left << "\" y=\"" << top + plot_h + 16 << "\">0</text>\n"
       << "<text x=\"" << left + plot_w - 10 << "\" y=\"" << top + plot_h + 16 << "\">"
       << max_len << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::string svg_edit_grid(const EvalReport& r) {
    std::set<std::string> row_set, col_set;
    for (const EditCellStats& c : r.edit_cells) {
        row_set.insert(c.srv_initial);
        col_set.insert(c.srv_target);
    }
    std::vector<std::string> rows(row_set.begin(), row_set.end());
    std::vector<std::string> cols(col_set.begin(), col_set.end());
    const int cell = 64, left = 110, top = 70;
    const int w = left + static_cast<int>(cols.size()) * cell + 20;
    const int h = top + static_cast<int>(rows.size()) * cell + 20;
    std::ostringstream os;
    svg_header(os, w, h);
    os << "<text x=\"10\" y=\"20\" font-size=\"13\">edit accuracy (fill) and solved initials"
          " (text), initial SRV x target SRV</text>\n";
    for (size_t c = 0; c < cols.size(); ++c) {
        os << "<text x=\"" << left + static_cast<int>(c) * cell + 4 << "\" y=\"" << top - 8
           << "\">" << svg_escape(cols[c]) << "</text>\n";
    }
    for (size_t ri = 0; ri < rows.size(); ++ri) {
        os << "<text x=\"6\" y=\"" << top + static_cast<int>(ri) * cell + cell / 2 << "\">"
           << svg_escape(rows[ri]) << "</text>\n";
    }
    for (const EditCellStats& c : r.edit_cells) {
        auto ri = static_cast<int>(std::find(rows.begin(), rows.end(), c.srv_initial) -
                                   rows.begin());
        auto ci = static_cast<int>(std::find(cols.begin(), cols.end(), c.srv_target) -
                                   cols.begin());
        double acc = c.decoded > 0 ? static_cast<double>(c.correct) / c.decoded : 0.0;
        double solved = c.initials > 0 ? static_cast<double>(c.solved_initials) / c.initials : 0.0;
        int x = left + ci * cell, y = top + ri * cell;
        os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\""
           << cell << "\" fill=\"" << kPalette[2] << "\" fill-opacity=\"" << fmt(acc, 3)
           << "\" stroke=\"#cccccc\"/>\n"
           << "<text x=\"" << x + 8 << "\" y=\"" << y + cell / 2 + 4 << "\">" << fmt(solved, 2)
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace

std::map<std::string, std::string> render_report_svgs(const EvalReport& r) {
    std::map<std::string, std::string> out;
    if (!r.srv_conditions.empty()) {
        out["accuracy.svg"] = svg_accuracy_bars(r);
        out["confusion.svg"] = svg_confusion(r.confusion, "confusion matrix (rows: condition)");
    }
    if (!r.lengths_by_entangled.empty()) out["lengths.svg"] = svg_lengths(r);
    if (!r.unitaries.empty()) out["distances.svg"] = svg_distance_hist(r);
    if (!r.edit_cells.empty()) out["edit_grid.svg"] = svg_edit_grid(r);
    return out;
}

SchmidtRankVector parse_srv_text(const std::string& text) {
    size_t lo = text.find('[');
    size_t hi = text.rfind(']');
    if (lo == std::string::npos || hi == std::string::npos || hi <= lo) {
        throw std::invalid_argument("rank vector must look like [1, 2, 2], got \"" + text + "\"");
    }
    std::string body = text.substr(lo + 1, hi - lo - 1);
    SchmidtRankVector srv;
    std::istringstream is(body);
    std::string item;
    while (std::getline(is, item, ',')) {
        size_t pos = item.find_first_not_of(" \t");
        if (pos == std::string::npos) {
            throw std::invalid_argument("empty rank entry in \"" + text + "\"");
        }
        size_t end = item.find_last_not_of(" \t");
        std::string digits = item.substr(pos, end - pos + 1);
        if (digits != "1" && digits != "2") {
            throw std::invalid_argument("rank entries must be 1 or 2, got \"" + digits + "\"");
        }
        srv.push_back(digits == "2" ? 2 : 1);
    }
    check_srv_entries(srv);
    return srv;
}

std::vector<SchmidtRankVector> parse_srv_list(const std::string& text) {
    std::vector<SchmidtRankVector> out;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ';')) {
        if (item.find_first_not_of(" \t") == std::string::npos) continue;
        out.push_back(parse_srv_text(item));
    }
    if (out.empty()) throw std::invalid_argument("no rank vectors in \"" + text + "\"");
    return out;
}

Tensor mask_from_json(const nlohmann::json& j, int qubits, int timesteps) {
    if (qubits < 1 || timesteps < 1) {
        throw std::invalid_argument("mask dimensions must be positive");
    }
    Tensor mask({qubits, timesteps});
    auto block = [&](int q, int t) {
        if (q < 0 || q >= qubits || t < 0 || t >= timesteps) {
            throw std::invalid_argument("mask cell (" + std::to_string(q) + ", " +
                                        std::to_string(t) + ") is outside the " +
                                        std::to_string(qubits) + "x" + std::to_string(timesteps) +
                                        " grid");
        }
        mask[static_cast<int64_t>(q) * timesteps + t] = 1.0;
    };
    if (j.contains("cells")) {
        for (const auto& cell : j.at("cells")) {
            if (!cell.is_array() || cell.size() != 2) {
                throw std::invalid_argument("mask cells must be [qubit, timestep] pairs");
            }
            block(cell[0].get<int>(), cell[1].get<int>());
        }
    }
    if (j.contains("rows")) {
        for (const auto& q : j.at("rows")) {
            for (int t = 0; t < timesteps; ++t) block(q.get<int>(), t);
        }
    }
    if (j.contains("cols")) {
        for (const auto& t : j.at("cols")) {
            for (int q = 0; q < qubits; ++q) block(q, t.get<int>());
        }
    }
    return mask;
}

}  // namespace genqc
