#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "genqc/dataset_forge.hpp"
#include "genqc/diffusion_core.hpp"
#include "genqc/eval_cli.hpp"
#include "genqc/gate_codec.hpp"
#include "genqc/json_io.hpp"
#include "genqc/quantum_sim.hpp"
#include "genqc/trainer.hpp"

namespace {

using nlohmann::json;
using namespace genqc;

void print_error(const std::string& type, const std::string& message) {
    std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << "\n";
}

json load_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

void emit(const json& j, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << j.dump(2) << "\n";
}

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        size_t lo = item.find_first_not_of(" \t");
        if (lo == std::string::npos) continue;
        size_t hi = item.find_last_not_of(" \t");
        out.push_back(item.substr(lo, hi - lo + 1));
    }
    if (out.empty()) throw std::invalid_argument("empty list \"" + text + "\"");
    return out;
}

int64_t round_up(int64_t value, int64_t multiple) {
    return ((value + multiple - 1) / multiple) * multiple;
}

// Flag bundles shared by every sampling-style subcommand.
struct SamplingFlags {
    uint64_t seed = 0;
    int n = 64;
    int max_gates = 16;
    double g = 7.5;
    double phi = 0.7;
    int steps = 20;
    int t_start = -1;
    CLI::Option* seed_opt = nullptr;

    void attach(CLI::App* cmd) {
        seed_opt = cmd->add_option("--seed", seed, "Random seed (falls back to GENQC_SEED)");
        cmd->add_option("--n", n, "Samples to draw");
        cmd->add_option("--max-gates", max_gates, "Circuit length budget");
        cmd->add_option("--g", g, "Guidance scale");
        cmd->add_option("--phi", phi, "Guidance rescale mix");
        cmd->add_option("--steps", steps, "Denoising steps");
        cmd->add_option("--t-start", t_start, "Inpainting start index on the strided chain");
    }

    void resolve_seed() {
        if (seed_opt && seed_opt->count() > 0) return;
        if (const char* env = std::getenv("GENQC_SEED")) seed = std::stoull(env);
    }

    GuidanceConfig guidance() const {
        GuidanceConfig cfg;
        cfg.guidance_scale = g;
        cfg.phi = phi;
        cfg.steps = steps;
        if (t_start >= 0) cfg.t_start = t_start;
        return cfg;
    }
};

json circuit_entry(const DecodeResult& dr, const GateVocabulary& v) {
    json e;
    e["valid"] = dr.ok();
    if (dr.ok()) {
        TokenMatrix canon = canonical_tokens(dr.tokens, v);
        e["tokens"] = token_matrix_to_json(canon);
        e["gates"] = count_gates(dr.tokens, v);
        e["srv"] = srv(apply_circuit(dr.tokens, v));
    } else {
        e["error"] = dr.error->message;
    }
    return e;
}

int run_dataset(const std::string& task, const std::string& out, int64_t target, uint64_t seed,
                const std::string& pool_csv, int min_qubits, int max_qubits, int min_gates,
                int max_gates, double quantile, int64_t per_prompt, bool no_balance) {
    SamplingSpec spec;
    Task task_kind = Task::srv;
    double default_q = 0.25;
    if (task == "srv") {
        spec = srv_table_spec();
    } else if (task == "srv-finetune") {
        spec = srv_finetune_table_spec();
        default_q = 0.05;
    } else if (task == "compile") {
        spec = compile_table_spec();
        task_kind = Task::compile;
    } else {
        throw std::invalid_argument("unknown dataset task \"" + task +
                                    "\" (srv, srv-finetune, compile)");
    }
    if (!pool_csv.empty()) spec.gate_pool = split_csv(pool_csv);
    if (min_qubits > 0 || max_qubits > 0) {
        if (min_qubits < 1 || max_qubits < min_qubits) {
            throw std::invalid_argument("qubit range must satisfy 1 <= min <= max");
        }
        int lo_g = min_gates > 0 ? min_gates : spec.ranges.front().min_gates;
        int hi_g = max_gates > 0 ? max_gates : spec.ranges.front().max_gates;
        spec.ranges.clear();
        for (int q = min_qubits; q <= max_qubits; ++q) spec.ranges.push_back({q, lo_g, hi_g});
    } else if (min_gates > 0 || max_gates > 0) {
        for (QubitGateRange& r : spec.ranges) {
            if (min_gates > 0) r.min_gates = min_gates;
            if (max_gates > 0) r.max_gates = max_gates;
        }
    }
    if (target > 0) spec.target_size = target;
    spec.seed = seed;

    GateVocabulary v = build_vocabulary(spec.gate_pool, static_cast<int>(spec.gate_pool.size()) + 2);
    std::vector<DatasetRecord> records = generate_dataset(spec, v, task_kind);
    size_t generated = records.size();

    json stats;
    if (!no_balance) {
        BalanceConfig bc;
        bc.quantile = quantile > 0 ? quantile : default_q;
        bc.per_prompt_target = per_prompt;
        bc.seed = seed;
        BalanceResult res = balance_with_stats(records, bc);
        records = std::move(res.records);
        json prompts = json::array();
        for (const BalancePromptStats& p : res.prompts) {
            prompts.push_back({{"prompt", p.prompt},
                               {"after_prompt_balance", p.step1_count},
                               {"final", p.final_count}});
        }
        stats["prompts"] = std::move(prompts);
    }
    write_dataset_jsonl(out, records);
    stats["generated"] = generated;
    stats["written"] = records.size();
    stats["path"] = out;
    std::cout << stats.dump(2) << "\n";
    return 0;
}

int run_train(bool finetune, const std::string& config_path, const std::string& data,
              const std::string& base, const std::string& out, const json& overrides,
              int64_t desk_target) {
    json cfg_json = config_path.empty() ? json::object() : load_json_file(config_path);

    TrainConfig tc;
    if (finetune) tc = finetune_config();
    if (cfg_json.contains("train")) {
        // Partial sections are fine: user keys override the defaults.
        json merged = to_json(tc);
        merged.update(cfg_json.at("train"));
        tc = train_config_from_json(merged);
    }
    if (overrides.contains("stage")) tc.stage = train_stage_from_string(overrides.at("stage"));
    if (overrides.contains("lr")) tc.lr = overrides.at("lr").get<double>();
    if (overrides.contains("epochs")) tc.epochs = overrides.at("epochs").get<int>();
    if (overrides.contains("batch")) tc.batch = overrides.at("batch").get<int>();
    if (overrides.contains("seed")) tc.seed = overrides.at("seed").get<uint64_t>();
    if (overrides.contains("val_fraction")) {
        tc.val_fraction = overrides.at("val_fraction").get<double>();
    }
    tc.dataset_path = data;

    std::vector<DatasetRecord> records = read_dataset_jsonl(data);
    if (desk_target > 0) tc = desk_scale(tc, static_cast<int64_t>(records.size()), desk_target);

    TrainResult result;
    ModelConfig arch;
    if (finetune) {
        ModelBundle bundle = load_checkpoint(base);
        arch = bundle.config;
        result = fine_tune(std::move(bundle), records, tc);
    } else {
        if (cfg_json.contains("model")) {
            json merged = to_json(arch);
            merged.update(cfg_json.at("model"));
            arch = model_config_from_json(merged);
        }
        if (overrides.contains("gates")) {
            arch.gates = split_csv(overrides.at("gates").get<std::string>());
        }
        if (overrides.contains("compile_qubits")) {
            arch.compile_qubits = overrides.at("compile_qubits").get<int>();
        }
        result = train(arch, tc, records);
    }

    save_checkpoint(out, result.model.config, result.model.store);
    json manifest = run_manifest(arch, tc, result.metrics);
    std::ofstream mf(out + ".manifest.json", std::ios::binary);
    if (!mf) throw std::runtime_error("cannot write " + out + ".manifest.json");
    mf << manifest.dump(2) << "\n";

    json summary;
    summary["checkpoint"] = out;
    summary["manifest"] = out + ".manifest.json";
    summary["steps"] = result.metrics.steps_completed;
    if (!result.metrics.loss.empty()) summary["final_loss"] = result.metrics.loss.back();
    if (!result.metrics.validation.empty()) {
        summary["final_validation_loss"] = result.metrics.validation.back().loss;
    }
    std::cout << summary.dump(2) << "\n";

    if (result.metrics.aborted) {
        print_error("training_aborted", result.metrics.abort_reason);
        return 3;
    }
    return 0;
}

int run_sample(const std::string& ckpt, const std::string& prompt, int qubits,
               const std::string& unitary_path, const SamplingFlags& fl,
               const std::string& out) {
    ModelBundle model = load_checkpoint(ckpt);
    const GateVocabulary& v = model.vocab;
    ParsedPrompt pp = parse_prompt(prompt, model.encoder->config().gate_names);

    std::optional<CMatrix> unitary;
    if (!unitary_path.empty()) unitary = unitary_from_json(load_json_file(unitary_path));

    int q = 0;
    if (pp.task == ParsedPrompt::Task::Srv) {
        q = static_cast<int>(pp.srv.size());
    } else {
        q = model.config.compile_qubits;
        if (q < 1) throw std::invalid_argument("model has no unitary branch for compile prompts");
    }
    if (qubits > 0 && qubits != q) {
        throw std::invalid_argument("--qubits " + std::to_string(qubits) +
                                    " contradicts the prompt's " + std::to_string(q) + " qubits");
    }

    GuidanceConfig guidance = fl.guidance();
    guidance.validate(model.schedule);
    int64_t t_round = round_up(fl.max_gates, model.denoiser->time_multiple());
    Tensor cond = materialize_condition(model, prompt, unitary);
    Tensor null_cond = materialize_null(model);
    std::vector<Tensor> draws = sample_batch(fl.n, {q, t_round, v.d}, cond, null_cond,
                                             model.store, *model.denoiser, model.schedule,
                                             guidance, fl.seed);

    json circuits = json::array();
    int valid = 0;
    for (const Tensor& x : draws) {
        DecodeResult dr = decode(x, v);
        valid += dr.ok();
        circuits.push_back(circuit_entry(dr, v));
    }
    json j;
    j["prompt"] = prompt;
    j["samples"] = fl.n;
    j["valid"] = valid;
    j["conversion_rate"] = fl.n > 0 ? static_cast<double>(valid) / fl.n : 0.0;
    j["circuits"] = std::move(circuits);
    emit(j, out);
    return 0;
}

int run_compile(const std::string& ckpt, const std::string& unitary_path,
                const std::string& pool_csv, const SamplingFlags& fl, const std::string& out) {
    ModelBundle model = load_checkpoint(ckpt);
    const GateVocabulary& v = model.vocab;
    if (model.config.compile_qubits < 1) {
        throw std::invalid_argument("model has no unitary branch");
    }
    CMatrix u = unitary_from_json(load_json_file(unitary_path));
    int q = model.config.compile_qubits;
    if (u.rows() != (int64_t{1} << q)) {
        throw std::invalid_argument("unitary dimension does not match the model's " +
                                    std::to_string(q) + "-qubit branch");
    }
    std::string prompt = compile_prompt(split_csv(pool_csv));
    parse_prompt(prompt, model.encoder->config().gate_names);

    GuidanceConfig guidance = fl.guidance();
    guidance.validate(model.schedule);
    int64_t t_round = round_up(fl.max_gates, model.denoiser->time_multiple());
    Tensor cond = materialize_condition(model, prompt, u);
    Tensor null_cond = materialize_null(model);
    std::vector<Tensor> draws = sample_batch(fl.n, {q, t_round, v.d}, cond, null_cond,
                                             model.store, *model.denoiser, model.schedule,
                                             guidance, fl.seed);

    struct Candidate {
        double distance;
        json entry;
    };
    std::vector<Candidate> candidates;
    int valid = 0, exact = 0;
    for (const Tensor& x : draws) {
        DecodeResult dr = decode(x, v);
        if (!dr.ok()) continue;
        ++valid;
        CMatrix ug = circuit_unitary(dr.tokens, v);
        double dist = frobenius_distance(u, ug);
        bool hit = exact_match(u, ug);
        exact += hit;
        json e = circuit_entry(dr, v);
        e["frobenius_distance"] = dist;
        e["exact"] = hit;
        candidates.push_back({dist, std::move(e)});
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.distance < b.distance; });
    json circuits = json::array();
    for (Candidate& c : candidates) circuits.push_back(std::move(c.entry));

    json j;
    j["prompt"] = prompt;
    j["samples"] = fl.n;
    j["valid"] = valid;
    j["exact"] = exact;
    if (!candidates.empty()) j["best_frobenius"] = candidates.front().distance;
    j["circuits"] = std::move(circuits);
    emit(j, out);
    return 0;
}

int run_edit(const std::string& ckpt, const std::string& circuit_path,
             const std::string& target_text, int fixed_cols, const SamplingFlags& fl,
             const std::string& out) {
    ModelBundle model = load_checkpoint(ckpt);
    const GateVocabulary& v = model.vocab;
    TokenMatrix initial = strip_padding(token_matrix_from_json(load_json_file(circuit_path)), v);
    if (auto err = validate_tokens(initial, v)) {
        throw std::invalid_argument("initial circuit is malformed: " + err->message);
    }
    SchmidtRankVector target = parse_srv_text(target_text);
    if (static_cast<int>(target.size()) != initial.qubits) {
        throw std::invalid_argument("target SRV size does not match the circuit's qubit count");
    }
    if (initial.timesteps > fl.max_gates) {
        throw std::invalid_argument("initial circuit longer than --max-gates");
    }

    GuidanceConfig guidance = fl.guidance();
    if (!guidance.t_start) guidance.t_start = guidance.steps - 1;
    guidance.validate(model.schedule);

    int64_t t_round = round_up(fl.max_gates, model.denoiser->time_multiple());
    int prefix = fixed_cols > 0 ? std::min(fixed_cols, initial.timesteps) : initial.timesteps;
    TokenMatrix tmpl = pad_tokens(initial, v, initial.qubits, static_cast<int>(t_round));
    Tensor mask({initial.qubits, t_round});
    for (int qq = 0; qq < initial.qubits; ++qq) {
        for (int t = 0; t < prefix; ++t) mask[static_cast<int64_t>(qq) * t_round + t] = 1.0;
    }

    Tensor cond = materialize_condition(model, srv_prompt(target));
    Tensor null_cond = materialize_null(model);
    Rng rng(fl.seed);

    json circuits = json::array();
    int valid = 0, correct = 0;
    for (int s = 0; s < fl.n; ++s) {
        Tensor x = sample_inpaint(tmpl, v, mask, cond, null_cond, model.store, *model.denoiser,
                                  model.schedule, guidance, rng);
        DecodeResult dr = decode(x, v);
        json e = circuit_entry(dr, v);
        if (dr.ok()) {
            ++valid;
            bool prefix_ok = true;
            for (int qq = 0; qq < initial.qubits && prefix_ok; ++qq) {
                for (int t = 0; t < prefix && prefix_ok; ++t) {
                    if (dr.tokens.at(qq, t) != tmpl.at(qq, t)) prefix_ok = false;
                }
            }
            bool hit = prefix_ok && srv(apply_circuit(dr.tokens, v)) == target;
            e["prefix_intact"] = prefix_ok;
            e["target_reached"] = hit;
            correct += hit;
        }
        circuits.push_back(std::move(e));
    }
    json j;
    j["target_srv"] = target;
    j["fixed_columns"] = prefix;
    j["samples"] = fl.n;
    j["valid"] = valid;
    j["correct"] = correct;
    j["circuits"] = std::move(circuits);
    emit(j, out);
    return 0;
}

int run_mask(const std::string& ckpt, const std::string& mask_path, const std::string& prompt,
             int qubits, const SamplingFlags& fl, const std::string& out) {
    ModelBundle model = load_checkpoint(ckpt);
    const GateVocabulary& v = model.vocab;
    ParsedPrompt pp = parse_prompt(prompt, model.encoder->config().gate_names);
    int q = pp.task == ParsedPrompt::Task::Srv ? static_cast<int>(pp.srv.size()) : qubits;
    if (q < 1) throw std::invalid_argument("qubit count unresolved; pass --qubits");

    GuidanceConfig guidance = fl.guidance();
    if (!guidance.t_start) guidance.t_start = guidance.steps - 1;
    guidance.validate(model.schedule);

    int64_t t_round = round_up(fl.max_gates, model.denoiser->time_multiple());
    Tensor mask = mask_from_json(load_json_file(mask_path), q, static_cast<int>(t_round));
    TokenMatrix tmpl(q, static_cast<int>(t_round));  // all background: masked cells stay empty

    Tensor cond = materialize_condition(model, prompt);
    Tensor null_cond = materialize_null(model);
    Rng rng(fl.seed);

    json circuits = json::array();
    int valid = 0, clean = 0;
    for (int s = 0; s < fl.n; ++s) {
        Tensor x = sample_inpaint(tmpl, v, mask, cond, null_cond, model.store, *model.denoiser,
                                  model.schedule, guidance, rng);
        DecodeResult dr = decode(x, v);
        json e = circuit_entry(dr, v);
        if (dr.ok()) {
            ++valid;
            bool ok = true;
            for (int qq = 0; qq < q && ok; ++qq) {
                for (int t = 0; t < t_round && ok; ++t) {
                    if (mask[static_cast<int64_t>(qq) * t_round + t] != 0.0 &&
                        dr.tokens.at(qq, t) != 0) {
                        ok = false;
                    }
                }
            }
            e["mask_respected"] = ok;
            clean += ok;
        }
        circuits.push_back(std::move(e));
    }
    json j;
    j["prompt"] = prompt;
    j["samples"] = fl.n;
    j["valid"] = valid;
    j["mask_respected"] = clean;
    j["circuits"] = std::move(circuits);
    emit(j, out);
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& task, const std::string& out,
             const SamplingFlags& fl, const std::string& conditions_text, int qubits,
             const std::string& data, const std::string& unitaries_path, int take,
             const std::string& initial_srvs, const std::string& target_srvs, int n_initials,
             int max_initial_gates, int baseline_n, int bins) {
    ModelBundle model = load_checkpoint(ckpt);
    EvalConfig cfg;
    cfg.guidance = fl.guidance();
    cfg.seed = fl.seed;
    cfg.baseline_samples = baseline_n;
    cfg.hist_bins = bins;

    EvalReport report;
    if (task == "srv") {
        std::vector<SchmidtRankVector> conditions;
        if (!conditions_text.empty()) {
            conditions = parse_srv_list(conditions_text);
        } else if (qubits > 0) {
            conditions = physical_srvs(qubits);
        } else {
            throw std::invalid_argument("srv eval needs --conditions or --qubits");
        }
        std::vector<DatasetRecord> corpus;
        if (!data.empty()) corpus = read_dataset_jsonl(data);
        report = eval_srv(model, conditions, fl.n, fl.max_gates, corpus, cfg);
    } else if (task == "compile") {
        std::vector<std::pair<CMatrix, std::string>> unitaries;
        if (!unitaries_path.empty()) {
            std::ifstream in(unitaries_path, std::ios::binary);
            if (!in) throw std::runtime_error("cannot open " + unitaries_path);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                json j = json::parse(line);
                unitaries.emplace_back(unitary_from_json(j.at("unitary")),
                                       j.at("prompt").get<std::string>());
            }
        } else if (!data.empty()) {
            for (const DatasetRecord& rec : read_dataset_jsonl(data)) {
                if (!rec.unitary_label) continue;
                unitaries.emplace_back(*rec.unitary_label, rec.prompt);
                if (take > 0 && static_cast<int>(unitaries.size()) >= take) break;
            }
        } else {
            throw std::invalid_argument("compile eval needs --unitaries or --data");
        }
        report = eval_compile(model, unitaries, fl.n, fl.max_gates, cfg);
    } else if (task == "edit") {
        if (initial_srvs.empty() || target_srvs.empty()) {
            throw std::invalid_argument("edit eval needs --initial-srvs and --target-srvs");
        }
        std::vector<EditTask> initials;
        Rng rng = Rng::child(fl.seed, 0x05000000ULL);
        for (const SchmidtRankVector& srv_i : parse_srv_list(initial_srvs)) {
            for (TokenMatrix& m : random_circuits_with_srv(srv_i, model.vocab,
                                                           model.config.gates, max_initial_gates,
                                                           n_initials, rng)) {
                initials.push_back({std::move(m), srv_i});
            }
        }
        report = eval_edit(model, initials, parse_srv_list(target_srvs), fl.n, fl.max_gates, cfg);
    } else {
        throw std::invalid_argument("unknown eval task \"" + task + "\" (srv, compile, edit)");
    }

    write_report(out, report);
    json summary;
    summary["report"] = out;
    summary["task"] = report.task;
    summary["conversion_rate"] = report.conversion_rate;
    summary["accuracy"] = report.accuracy;
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int run_report(const std::string& in, const std::string& out_dir) {
    EvalReport report = read_report(in);
    std::filesystem::create_directories(out_dir);
    json files = json::array();
    for (const auto& [name, svg] : render_report_svgs(report)) {
        std::string path = (std::filesystem::path(out_dir) / name).string();
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + path);
        f << svg;
        files.push_back(path);
    }
    std::cout << json{{"plots", files}}.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"genqc: diffusion-based quantum circuit synthesis"};
    app.require_subcommand(1);
    int rc = 0;

    // dataset
    auto* c_dataset = app.add_subcommand("dataset", "Generate, balance and write a dataset");
    struct {
        std::string task = "srv", out, pool;
        int64_t target = 0, per_prompt = 0;
        uint64_t seed = 0;
        int min_qubits = 0, max_qubits = 0, min_gates = 0, max_gates = 0;
        double quantile = 0.0;
        bool no_balance = false;
        CLI::Option* seed_opt = nullptr;
    } ds;
    c_dataset->add_option("--task", ds.task, "srv | srv-finetune | compile");
    c_dataset->add_option("--out", ds.out, "Output JSONL path")->required();
    c_dataset->add_option("--target", ds.target, "Records to draw before dedup");
    ds.seed_opt = c_dataset->add_option("--seed", ds.seed, "Random seed");
    c_dataset->add_option("--pool", ds.pool, "Gate pool override, e.g. \"h,cx\"");
    c_dataset->add_option("--min-qubits", ds.min_qubits, "Smallest qubit count");
    c_dataset->add_option("--max-qubits", ds.max_qubits, "Largest qubit count");
    c_dataset->add_option("--min-gates", ds.min_gates, "Smallest circuit length");
    c_dataset->add_option("--max-gates", ds.max_gates, "Largest circuit length");
    c_dataset->add_option("--quantile", ds.quantile, "Length balance quantile");
    c_dataset->add_option("--per-prompt", ds.per_prompt, "Per-prompt record target");
    c_dataset->add_flag("--no-balance", ds.no_balance, "Skip dataset balancing");
    c_dataset->callback([&] {
        if (ds.seed_opt->count() == 0) {
            if (const char* env = std::getenv("GENQC_SEED")) ds.seed = std::stoull(env);
        }
        rc = run_dataset(ds.task, ds.out, ds.target, ds.seed, ds.pool, ds.min_qubits,
                         ds.max_qubits, ds.min_gates, ds.max_gates, ds.quantile, ds.per_prompt,
                         ds.no_balance);
    });

    // train / finetune
    struct TrainFlags {
        std::string config, data, base, out, stage, gates;
        double lr = 0;
        int epochs = 0, batch = 0, compile_qubits = -1;
        double val_fraction = -1;
        uint64_t seed = 0;
        int64_t desk_scale = 0;
        CLI::Option *lr_o = nullptr, *ep_o = nullptr, *ba_o = nullptr, *se_o = nullptr,
                    *st_o = nullptr, *vf_o = nullptr, *ga_o = nullptr, *cq_o = nullptr;

        void attach(CLI::App* cmd, bool finetune) {
            cmd->add_option("--config", config, "JSON file with model/train sections");
            cmd->add_option("--data", data, "Training dataset JSONL")->required();
            cmd->add_option("--out", out, "Checkpoint output path")->required();
            if (finetune) cmd->add_option("--base", base, "Base checkpoint")->required();
            st_o = cmd->add_option("--stage", stage, "max_pad | bucket_pad");
            lr_o = cmd->add_option("--lr", lr, "Peak learning rate");
            ep_o = cmd->add_option("--epochs", epochs, "Training epochs");
            ba_o = cmd->add_option("--batch", batch, "Batch size");
            se_o = cmd->add_option("--seed", seed, "Random seed (falls back to GENQC_SEED)");
            vf_o = cmd->add_option("--val-fraction", val_fraction, "Validation holdout share");
            if (!finetune) {
                ga_o = cmd->add_option("--gates", gates, "Model gate pool, e.g. \"h,cx\"");
                cq_o = cmd->add_option("--compile-qubits", compile_qubits,
                                       "Unitary branch qubit count (0: none)");
            }
            cmd->add_option("--desk-scale", desk_scale,
                            "Rescale epochs toward this optimizer step target");
        }

        json overrides() const {
            json j = json::object();
            if (st_o->count()) j["stage"] = stage;
            if (lr_o->count()) j["lr"] = lr;
            if (ep_o->count()) j["epochs"] = epochs;
            if (ba_o->count()) j["batch"] = batch;
            if (se_o->count()) {
                j["seed"] = seed;
            } else if (const char* env = std::getenv("GENQC_SEED")) {
                j["seed"] = std::stoull(env);
            }
            if (vf_o->count()) j["val_fraction"] = val_fraction;
            if (ga_o && ga_o->count()) j["gates"] = gates;
            if (cq_o && cq_o->count()) j["compile_qubits"] = compile_qubits;
            return j;
        }
    };
    auto* c_train = app.add_subcommand("train", "Train a model from scratch");
    auto tf = std::make_shared<TrainFlags>();
    tf->attach(c_train, false);
    c_train->callback([&rc, tf] {
        rc = run_train(false, tf->config, tf->data, "", tf->out, tf->overrides(),
                       tf->desk_scale);
    });
    auto* c_finetune = app.add_subcommand("finetune", "Continue training a checkpoint");
    auto ff = std::make_shared<TrainFlags>();
    ff->attach(c_finetune, true);
    c_finetune->callback([&rc, ff] {
        rc = run_train(true, ff->config, ff->data, ff->base, ff->out, ff->overrides(),
                       ff->desk_scale);
    });

    // sample
    auto* c_sample = app.add_subcommand("sample", "Sample circuits for a prompt");
    struct {
        std::string ckpt, prompt, unitary, out;
        int qubits = 0;
        SamplingFlags fl;
    } sa;
    c_sample->add_option("--ckpt", sa.ckpt, "Checkpoint path")->required();
    c_sample->add_option("--prompt", sa.prompt, "Conditioning prompt")->required();
    c_sample->add_option("--qubits", sa.qubits, "Expected qubit count (validated)");
    c_sample->add_option("--unitary", sa.unitary, "Unitary JSON for compile prompts");
    c_sample->add_option("--out", sa.out, "Output JSON path (default: stdout)");
    sa.fl.attach(c_sample);
    c_sample->callback([&] {
        sa.fl.resolve_seed();
        rc = run_sample(sa.ckpt, sa.prompt, sa.qubits, sa.unitary, sa.fl, sa.out);
    });

    // compile
    auto* c_compile = app.add_subcommand("compile", "Compile a unitary into circuits");
    struct {
        std::string ckpt, unitary, pool, out;
        SamplingFlags fl;
    } co;
    c_compile->add_option("--ckpt", co.ckpt, "Checkpoint path")->required();
    c_compile->add_option("--unitary", co.unitary, "Target unitary JSON")->required();
    c_compile->add_option("--pool", co.pool, "Gate set, e.g. \"cx,h,x\"")->required();
    c_compile->add_option("--out", co.out, "Output JSON path (default: stdout)");
    co.fl.attach(c_compile);
    c_compile->callback([&] {
        co.fl.resolve_seed();
        rc = run_compile(co.ckpt, co.unitary, co.pool, co.fl, co.out);
    });

    // edit
    auto* c_edit = app.add_subcommand("edit", "Extend a fixed circuit toward a target SRV");
    struct {
        std::string ckpt, circuit, target, out;
        int fixed_cols = 0;
        SamplingFlags fl;
    } ed;
    c_edit->add_option("--ckpt", ed.ckpt, "Checkpoint path")->required();
    c_edit->add_option("--circuit", ed.circuit, "Initial circuit JSON")->required();
    c_edit->add_option("--target-srv", ed.target, "Target SRV, e.g. \"[2, 2]\"")->required();
    c_edit->add_option("--fixed-cols", ed.fixed_cols, "Columns to pin (default: all)");
    c_edit->add_option("--out", ed.out, "Output JSON path (default: stdout)");
    ed.fl.attach(c_edit);
    c_edit->callback([&] {
        ed.fl.resolve_seed();
        rc = run_edit(ed.ckpt, ed.circuit, ed.target, ed.fixed_cols, ed.fl, ed.out);
    });

    // mask
    auto* c_mask = app.add_subcommand("mask", "Sample circuits that avoid masked cells");
    struct {
        std::string ckpt, mask, prompt, out;
        int qubits = 0;
        SamplingFlags fl;
    } ma;
    c_mask->add_option("--ckpt", ma.ckpt, "Checkpoint path")->required();
    c_mask->add_option("--mask", ma.mask, "Mask JSON with cells/rows/cols")->required();
    c_mask->add_option("--prompt", ma.prompt, "Conditioning prompt")->required();
    c_mask->add_option("--qubits", ma.qubits, "Qubit count for compile prompts");
    c_mask->add_option("--out", ma.out, "Output JSON path (default: stdout)");
    ma.fl.attach(c_mask);
    c_mask->callback([&] {
        ma.fl.resolve_seed();
        rc = run_mask(ma.ckpt, ma.mask, ma.prompt, ma.qubits, ma.fl, ma.out);
    });

    // eval
    auto* c_eval = app.add_subcommand("eval", "Run a metrics evaluation and write a report");
    struct {
        std::string ckpt, task = "srv", out = "report.json", conditions, data, unitaries;
        std::string initial_srvs, target_srvs;
        int qubits = 0, take = 0, n_initials = 4, max_initial_gates = 6;
        int baseline_n = 0, bins = 20;
        SamplingFlags fl;
    } ev;
    c_eval->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
    c_eval->add_option("--task", ev.task, "srv | compile | edit");
    c_eval->add_option("--out", ev.out, "Report JSON path");
    c_eval->add_option("--conditions", ev.conditions, "SRV list, e.g. \"[1,2,2];[2,2,2]\"");
    c_eval->add_option("--qubits", ev.qubits, "Use all physical SRVs of this qubit count");
    c_eval->add_option("--data", ev.data, "Dataset JSONL (novelty corpus or unitary source)");
    c_eval->add_option("--unitaries", ev.unitaries, "JSONL of {unitary, prompt} targets");
    c_eval->add_option("--take", ev.take, "Max unitaries to read from --data");
    c_eval->add_option("--initial-srvs", ev.initial_srvs, "Edit grid initial SRVs");
    c_eval->add_option("--target-srvs", ev.target_srvs, "Edit grid target SRVs");
    c_eval->add_option("--n-initials", ev.n_initials, "Initial circuits per SRV");
    c_eval->add_option("--max-initial-gates", ev.max_initial_gates,
                       "Length budget for initial circuits");
    c_eval->add_option("--baseline-n", ev.baseline_n, "Baseline draws (default: --n)");
    c_eval->add_option("--bins", ev.bins, "Histogram bins");
    ev.fl.attach(c_eval);
    c_eval->callback([&] {
        ev.fl.resolve_seed();
        rc = run_eval(ev.ckpt, ev.task, ev.out, ev.fl, ev.conditions, ev.qubits, ev.data,
                      ev.unitaries, ev.take, ev.initial_srvs, ev.target_srvs, ev.n_initials,
                      ev.max_initial_gates, ev.baseline_n, ev.bins);
    });

    // report
    auto* c_report = app.add_subcommand("report", "Render plots from a report JSON");
    struct {
        std::string in, out_dir = "plots";
    } re;
    c_report->add_option("--in", re.in, "Report JSON path")->required();
    c_report->add_option("--out-dir", re.out_dir, "Directory for SVG plots");
    c_report->callback([&] { rc = run_report(re.in, re.out_dir); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        int code = e.get_exit_code();
        return code != 0 ? code : 1;
    } catch (const std::invalid_argument& e) {
        print_error("invalid_argument", e.what());
        return 2;
    } catch (const std::runtime_error& e) {
        print_error("runtime_error", e.what());
        return 3;
    } catch (const std::exception& e) {
        print_error("error", e.what());
        return 4;
    }
    return rc;
}
