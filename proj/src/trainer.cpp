#include "genqc/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace genqc {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr char kMagic[8] = {'G', 'E', 'N', 'Q', 'C', 'K', 'P', 'T'};

// RNG stream ids derived from the training seed. Epoch and step offsets
// are spaced so the families cannot collide for any realistic run length.
constexpr uint64_t kSplitStream = 1;
constexpr uint64_t kValPlanStream = 2;
constexpr uint64_t kValNoiseStream = 3;
constexpr uint64_t kEpochStreamBase = 0x10000000ULL;
constexpr uint64_t kStepStreamBase = 0x20000000ULL;

std::string lowercase(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

int64_t round_up(int64_t n, int64_t multiple) {
    if (n < 1) n = 1;
    return ((n + multiple - 1) / multiple) * multiple;
}

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.batch < 1) throw std::invalid_argument("batch size must be at least 1");
    if (cfg.epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr))
        throw std::invalid_argument("learning rate must be positive and finite");
    if (cfg.gamma < 0.0) throw std::invalid_argument("gamma must be non-negative");
    if (cfg.cond_drop_prob < 0.0 || cfg.cond_drop_prob > 1.0)
        throw std::invalid_argument("cond_drop_prob must lie in [0, 1]");
    if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0)
        throw std::invalid_argument("val_fraction must lie in [0, 1)");
}

int64_t batches_per_epoch(const std::vector<DatasetRecord>& records,
                          const std::vector<int>& subset, TrainStage stage, int batch) {
    if (stage == TrainStage::max_pad)
        return (static_cast<int64_t>(subset.size()) + batch - 1) / batch;
    std::map<int, int64_t> counts;
    for (int idx : subset) counts[records[static_cast<size_t>(idx)].qubits] += 1;
    int64_t total = 0;
    for (const auto& [q, n] : counts) total += (n + batch - 1) / batch;
    return total;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"gates", cfg.gates},
                          {"embed_d", cfg.embed_d},
                          {"vocab_seed", cfg.vocab_seed},
                          {"l_text", cfg.l_text},
                          {"c_cond", cfg.c_cond},
                          {"cond_heads", cfg.cond_heads},
                          {"compile_qubits", cfg.compile_qubits},
                          {"enc_dropout", cfg.enc_dropout},
                          {"widths", cfg.widths},
                          {"f", cfg.f},
                          {"unet_heads", cfg.unet_heads},
                          {"groups", cfg.groups},
                          {"time_dim", cfg.time_dim},
                          {"use_positional_encoding", cfg.use_positional_encoding},
                          {"skip_scale", cfg.skip_scale},
                          {"T", cfg.T},
                          {"s", cfg.s},
                          {"init_seed", cfg.init_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.gates = j.at("gates").get<std::vector<std::string>>();
    cfg.embed_d = j.at("embed_d").get<int>();
    cfg.vocab_seed = j.at("vocab_seed").get<uint64_t>();
    cfg.l_text = j.at("l_text").get<int>();
    cfg.c_cond = j.at("c_cond").get<int>();
    cfg.cond_heads = j.at("cond_heads").get<int>();
    cfg.compile_qubits = j.at("compile_qubits").get<int>();
    cfg.enc_dropout = j.at("enc_dropout").get<double>();
    cfg.widths = j.at("widths").get<std::vector<int64_t>>();
    cfg.f = j.at("f").get<int>();
    cfg.unet_heads = j.at("unet_heads").get<int>();
    cfg.groups = j.at("groups").get<int>();
    cfg.time_dim = j.at("time_dim").get<int64_t>();
    cfg.use_positional_encoding = j.at("use_positional_encoding").get<bool>();
    cfg.skip_scale = j.at("skip_scale").get<double>();
    cfg.T = j.at("T").get<int>();
    cfg.s = j.at("s").get<double>();
    cfg.init_seed = j.at("init_seed").get<uint64_t>();
    return cfg;
}

ModelBundle build_model(const ModelConfig& cfg) {
    ModelBundle m;
    m.config = cfg;
    for (std::string& g : m.config.gates) g = lowercase(g);
    const int d = m.config.resolved_d();
    m.vocab = build_vocabulary(m.config.gates, d, m.config.vocab_seed);
    m.schedule = cosine_schedule(m.config.T, m.config.s);

    Rng init(m.config.init_seed);
    ConditionEncoderConfig ec;
    ec.l_text = m.config.l_text;
    ec.c_cond = m.config.c_cond;
    ec.heads = m.config.cond_heads;
    ec.compile_qubits = m.config.compile_qubits;
    ec.dropout = m.config.enc_dropout;
    ec.gate_names = m.config.gates;
    m.encoder = std::make_unique<ConditionEncoder>(m.store, ec, init);

    DenoiserConfig dc;
    dc.in_channels = d;
    dc.widths = m.config.widths;
    dc.f = m.config.f;
    dc.heads = m.config.unet_heads;
    dc.groups = m.config.groups;
    dc.cond_dim = m.config.c_cond;
    dc.time_dim = m.config.time_dim;
    dc.use_positional_encoding = m.config.use_positional_encoding;
    dc.skip_scale = m.config.skip_scale;
    m.denoiser = std::make_unique<DenoiserUNet>(m.store, dc, init);
    return m;
}

const char* to_string(TrainStage stage) {
    return stage == TrainStage::max_pad ? "max_pad" : "bucket_pad";
}

TrainStage train_stage_from_string(const std::string& s) {
    if (s == "max_pad") return TrainStage::max_pad;
    if (s == "bucket_pad") return TrainStage::bucket_pad;
    throw std::invalid_argument("unknown training stage: " + s);
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return nlohmann::json{{"stage", to_string(cfg.stage)},
                          {"lr", cfg.lr},
                          {"epochs", cfg.epochs},
                          {"batch", cfg.batch},
                          {"seed", cfg.seed},
                          {"gamma", cfg.gamma},
                          {"cond_drop_prob", cfg.cond_drop_prob},
                          {"dataset_path", cfg.dataset_path},
                          {"val_fraction", cfg.val_fraction},
                          {"epoch_scale", cfg.epoch_scale}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.stage = train_stage_from_string(j.at("stage").get<std::string>());
    cfg.lr = j.at("lr").get<double>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch = j.at("batch").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.gamma = j.at("gamma").get<double>();
    cfg.cond_drop_prob = j.at("cond_drop_prob").get<double>();
    cfg.dataset_path = j.at("dataset_path").get<std::string>();
    cfg.val_fraction = j.at("val_fraction").get<double>();
    cfg.epoch_scale = j.at("epoch_scale").get<double>();
    return cfg;
}

TrainConfig stage1_config() {
    TrainConfig cfg;
    cfg.stage = TrainStage::max_pad;
    cfg.lr = 3e-4;
    cfg.epochs = 75;
    cfg.batch = 256;
    return cfg;
}

TrainConfig stage2_config() {
    TrainConfig cfg;
    cfg.stage = TrainStage::bucket_pad;
    cfg.lr = 5e-5;
    cfg.epochs = 50;
    cfg.batch = 256;
    return cfg;
}

TrainConfig finetune_config() {
    TrainConfig cfg;
    cfg.stage = TrainStage::bucket_pad;
    cfg.lr = 5e-5;
    cfg.epochs = 25;
    cfg.batch = 256;
    return cfg;
}

TrainConfig compile_config() {
    TrainConfig cfg;
    cfg.stage = TrainStage::bucket_pad;
    cfg.lr = 3e-4;
    cfg.epochs = 150;
    cfg.batch = 256;
    return cfg;
}

TrainConfig desk_scale(TrainConfig reference, int64_t dataset_records, int64_t target_steps) {
    if (dataset_records < 1) throw std::invalid_argument("desk_scale needs a dataset size");
    if (target_steps < 1) throw std::invalid_argument("desk_scale needs a step target");
    TrainConfig out = reference;
    out.batch = 64;
    const int64_t heldout =
        static_cast<int64_t>(reference.val_fraction * static_cast<double>(dataset_records));
    const int64_t train_n = std::max<int64_t>(1, dataset_records - heldout);
    const int64_t per_epoch = (train_n + out.batch - 1) / out.batch;
    const int64_t epochs = std::max<int64_t>(1, (target_steps + per_epoch / 2) / per_epoch);
    out.epochs = static_cast<int>(epochs);
    out.epoch_scale = static_cast<double>(epochs) / static_cast<double>(reference.epochs);
    return out;
}

double one_cycle_lr(int64_t step, int64_t total_steps, double max_lr) {
    if (total_steps < 1) total_steps = 1;
    step = std::clamp<int64_t>(step, 0, total_steps - 1);
    const double initial = max_lr / 25.0;
    const double floor_lr = initial * 1e-4;
    const int64_t warm =
        std::max<int64_t>(1, std::llround(0.3 * static_cast<double>(total_steps)));
    // Two-product interpolation so both endpoints are hit exactly.
    if (step <= warm) {
        const double p = static_cast<double>(step) / static_cast<double>(warm);
        const double w = (1.0 + std::cos(kPi * p)) / 2.0;
        return initial * w + max_lr * (1.0 - w);
    }
    const int64_t span = std::max<int64_t>(1, total_steps - 1 - warm);
    const double q = static_cast<double>(step - warm) / static_cast<double>(span);
    const double w = (1.0 + std::cos(kPi * q)) / 2.0;
    return max_lr * w + floor_lr * (1.0 - w);
}

std::vector<TrainBatch> plan_batches(const std::vector<DatasetRecord>& records,
                                     const std::vector<int>& subset, TrainStage stage, int batch,
                                     int round_to, Rng& rng) {
    if (batch < 1) throw std::invalid_argument("batch size must be at least 1");
    if (round_to < 1) throw std::invalid_argument("round_to must be at least 1");
    if (subset.empty()) throw std::invalid_argument("cannot plan batches over an empty subset");

    int max_q = 0;
    for (int idx : subset) max_q = std::max(max_q, records.at(static_cast<size_t>(idx)).qubits);

    // Bucket key is the qubit count under bucket padding and a single
    // shared bin otherwise; std::map keeps the bucket order deterministic.
    std::map<int, std::vector<int>> buckets;
    for (int idx : subset) {
        const int key =
            stage == TrainStage::bucket_pad ? records[static_cast<size_t>(idx)].qubits : 0;
        buckets[key].push_back(idx);
    }

    std::vector<TrainBatch> out;
    for (auto& [key, idxs] : buckets) {
        rng.shuffle(idxs);
        for (size_t start = 0; start < idxs.size(); start += static_cast<size_t>(batch)) {
            TrainBatch b;
            const size_t end = std::min(idxs.size(), start + static_cast<size_t>(batch));
            b.indices.assign(idxs.begin() + static_cast<ptrdiff_t>(start),
                             idxs.begin() + static_cast<ptrdiff_t>(end));
            b.qubits = stage == TrainStage::bucket_pad ? key : max_q;
            int longest = 0;
            for (int idx : b.indices)
                longest = std::max(longest, records[static_cast<size_t>(idx)].tokens.timesteps);
            b.timesteps = static_cast<int>(round_up(longest, round_to));
            out.push_back(std::move(b));
        }
    }
    if (stage == TrainStage::bucket_pad) rng.shuffle(out);
    return out;
}

TrainingExample encode_record(const DatasetRecord& rec, const GateVocabulary& v, int qubits,
                              int timesteps) {
    const TokenMatrix padded = pad_tokens(rec.tokens, v, qubits, timesteps);
    TrainingExample ex;
    ex.x0 = encode(padded, v);
    ex.prompt = rec.prompt;
    ex.unitary = rec.unitary_label;
    return ex;
}

std::pair<std::vector<int>, std::vector<int>> split_validation(
    const std::vector<DatasetRecord>& records, double val_fraction, uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw std::invalid_argument("val_fraction must lie in [0, 1)");

    // Prompt bins in first-appearance order.
    std::vector<std::pair<std::string, std::vector<int>>> bins;
    std::unordered_map<std::string, size_t> bin_of;
    for (size_t i = 0; i < records.size(); ++i) {
        auto [it, inserted] = bin_of.try_emplace(records[i].prompt, bins.size());
        if (inserted) bins.push_back({records[i].prompt, {}});
        bins[it->second].second.push_back(static_cast<int>(i));
    }

    Rng rng = Rng::child(seed, kSplitStream);
    std::vector<int> train, val;
    for (auto& [prompt, idxs] : bins) {
        rng.shuffle(idxs);
        const size_t n_val = static_cast<size_t>(val_fraction * static_cast<double>(idxs.size()));
        for (size_t i = 0; i < idxs.size(); ++i)
            (i < n_val ? val : train).push_back(idxs[i]);
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {std::move(train), std::move(val)};
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const nn::ParamStore& store) {
    nlohmann::json tensors = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& e : store.entries()) {
        tensors.push_back({{"name", e.name},
                           {"shape", e.value.shape()},
                           {"dtype", "f32"},
                           {"offset", offset}});
        offset += static_cast<uint64_t>(e.value.numel()) * 4;
    }
    const nlohmann::json manifest{{"format_version", 1},
                                  {"model", to_json(cfg)},
                                  {"tensors", tensors},
                                  {"blob_bytes", offset}};
    const std::string text = manifest.dump();

    // Write to a sibling temp file and rename so a reader either sees the
    // previous checkpoint or the complete new one. Multi-byte fields are
    // little-endian; only little-endian hosts are supported.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
        out.write(kMagic, sizeof(kMagic));
        const uint64_t manifest_size = text.size();
        out.write(reinterpret_cast<const char*>(&manifest_size), sizeof(manifest_size));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        std::vector<float> buf;
        for (const auto& e : store.entries()) {
            buf.resize(static_cast<size_t>(e.value.numel()));
            for (int64_t i = 0; i < e.value.numel(); ++i)
                buf[static_cast<size_t>(i)] = static_cast<float>(e.value[i]);
            out.write(reinterpret_cast<const char*>(buf.data()),
                      static_cast<std::streamsize>(buf.size() * sizeof(float)));
        }
        if (!out) throw std::runtime_error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

ModelBundle load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    const uint64_t file_size = std::filesystem::file_size(path);

    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error(path + ": not a checkpoint file");
    uint64_t manifest_size = 0;
    in.read(reinterpret_cast<char*>(&manifest_size), sizeof(manifest_size));
    if (!in || sizeof(kMagic) + sizeof(manifest_size) + manifest_size > file_size)
        throw std::runtime_error(path + ": truncated manifest");
    std::string text(manifest_size, '\0');
    in.read(text.data(), static_cast<std::streamsize>(manifest_size));
    if (!in) throw std::runtime_error(path + ": truncated manifest");

    ModelBundle m;
    uint64_t blob_bytes = 0;
    try {
        const nlohmann::json manifest = nlohmann::json::parse(text);
        if (manifest.at("format_version").get<int>() != 1)
            throw std::runtime_error(path + ": unsupported checkpoint format version");
        m = build_model(model_config_from_json(manifest.at("model")));

        const nlohmann::json& tensors = manifest.at("tensors");
        if (static_cast<int>(tensors.size()) != m.store.size())
            throw std::runtime_error(path + ": tensor count does not match the architecture");
        uint64_t offset = 0;
        for (int i = 0; i < m.store.size(); ++i) {
            const nlohmann::json& tj = tensors.at(static_cast<size_t>(i));
            const std::string name = tj.at("name").get<std::string>();
            if (name != m.store.name(i))
                throw std::runtime_error(path + ": unexpected tensor " + name);
            const Tensor& dst = m.store.value(i);
            if (tj.at("shape").get<std::vector<int64_t>>() != dst.shape())
                throw std::runtime_error(path + ": shape mismatch for " + name);
            if (tj.at("dtype").get<std::string>() != "f32")
                throw std::runtime_error(path + ": unsupported dtype for " + name);
            if (tj.at("offset").get<uint64_t>() != offset)
                throw std::runtime_error(path + ": offset mismatch for " + name);
            offset += static_cast<uint64_t>(dst.numel()) * 4;
        }
        if (manifest.at("blob_bytes").get<uint64_t>() != offset)
            throw std::runtime_error(path + ": blob size mismatch");
        blob_bytes = offset;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": malformed checkpoint manifest: " + e.what());
    }
    if (sizeof(kMagic) + sizeof(manifest_size) + manifest_size + blob_bytes != file_size)
        throw std::runtime_error(path + ": blob size mismatch");

    std::vector<float> buf;
    for (int i = 0; i < m.store.size(); ++i) {
        Tensor& dst = m.store.value(i);
        buf.resize(static_cast<size_t>(dst.numel()));
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw std::runtime_error(path + ": truncated blob");
        for (int64_t k = 0; k < dst.numel(); ++k)
            dst[k] = static_cast<double>(buf[static_cast<size_t>(k)]);
    }
    return m;
}

namespace {

TrainResult train_loop(ModelBundle model, const TrainConfig& cfg,
                       const std::vector<DatasetRecord>& dataset) {
    validate_train_config(cfg);
    if (dataset.empty()) throw std::invalid_argument("cannot train on an empty dataset");

    auto [train_idx, val_idx] = split_validation(dataset, cfg.val_fraction, cfg.seed);
    const int round_to =
        static_cast<int>(std::max<int64_t>(4, model.denoiser->time_multiple()));
    const int64_t per_epoch = batches_per_epoch(dataset, train_idx, cfg.stage, cfg.batch);
    const int64_t total_steps = per_epoch * cfg.epochs;
    const int val_every = std::max(1, cfg.epochs / 20);

    nn::Adam adam(model.store);
    TrainMetrics metrics;
    metrics.loss.reserve(static_cast<size_t>(total_steps));
    metrics.lr.reserve(static_cast<size_t>(total_steps));
    TrainingLossOptions opts;
    opts.gamma = cfg.gamma;
    opts.cond_drop_prob = cfg.cond_drop_prob;
    opts.train_mode = true;

    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs && !metrics.aborted; ++epoch) {
        Rng plan_rng = Rng::child(cfg.seed, kEpochStreamBase + static_cast<uint64_t>(epoch));
        const auto batches =
            plan_batches(dataset, train_idx, cfg.stage, cfg.batch, round_to, plan_rng);
        for (const TrainBatch& b : batches) {
            std::vector<TrainingExample> examples;
            examples.reserve(b.indices.size());
            for (int idx : b.indices)
                examples.push_back(encode_record(dataset[static_cast<size_t>(idx)], model.vocab,
                                                 b.qubits, b.timesteps));
            const double lr = one_cycle_lr(step, total_steps, cfg.lr);
            Rng step_rng = Rng::child(cfg.seed, kStepStreamBase + static_cast<uint64_t>(step));
            LossResult result;
            try {
                result = training_loss(examples, model.store, *model.denoiser, *model.encoder,
                                       model.schedule, step_rng, opts);
            } catch (const std::runtime_error& e) {
                // The loss throws before any update, so the parameters are
                // still the state of the last completed step.
                metrics.aborted = true;
                metrics.abort_reason = e.what();
                break;
            }
            adam.step(model.store, result.grads, lr);
            metrics.loss.push_back(result.loss);
            metrics.lr.push_back(lr);
            ++step;
        }
        const bool last_epoch = epoch == cfg.epochs - 1;
        if (!metrics.aborted && !val_idx.empty() &&
            ((epoch + 1) % val_every == 0 || last_epoch)) {
            metrics.validation.push_back({step, validation_loss(model, dataset, val_idx, cfg)});
        }
    }
    metrics.steps_completed = step;
    return {std::move(model), std::move(metrics)};
}

}  // namespace

TrainResult train(const ModelConfig& arch, const TrainConfig& cfg,
                  const std::vector<DatasetRecord>& dataset) {
    return train_loop(build_model(arch), cfg, dataset);
}

TrainResult fine_tune(ModelBundle base, const std::vector<DatasetRecord>& new_dataset,
                      TrainConfig cfg) {
    check_vocabulary(new_dataset, base.vocab, base.encoder->config().gate_names);
    cfg.stage = TrainStage::bucket_pad;
    return train_loop(std::move(base), cfg, new_dataset);
}

double validation_loss(ModelBundle& model, const std::vector<DatasetRecord>& records,
                       const std::vector<int>& subset, const TrainConfig& cfg) {
    if (subset.empty()) throw std::invalid_argument("empty validation subset");
    const int round_to =
        static_cast<int>(std::max<int64_t>(4, model.denoiser->time_multiple()));
    Rng plan_rng = Rng::child(cfg.seed, kValPlanStream);
    const auto batches =
        plan_batches(records, subset, cfg.stage, cfg.batch, round_to, plan_rng);
    Rng noise = Rng::child(cfg.seed, kValNoiseStream);
    TrainingLossOptions opts;
    opts.gamma = 0.0;
    opts.cond_drop_prob = 0.0;
    opts.train_mode = false;

    double weighted = 0.0;
    int64_t count = 0;
    for (const TrainBatch& b : batches) {
        std::vector<TrainingExample> examples;
        examples.reserve(b.indices.size());
        for (int idx : b.indices)
            examples.push_back(encode_record(records[static_cast<size_t>(idx)], model.vocab,
                                             b.qubits, b.timesteps));
        const LossResult result = training_loss(examples, model.store, *model.denoiser,
                                                *model.encoder, model.schedule, noise, opts);
        weighted += result.loss * static_cast<double>(examples.size());
        count += static_cast<int64_t>(examples.size());
    }
    return weighted / static_cast<double>(count);
}

void check_vocabulary(const std::vector<DatasetRecord>& records, const GateVocabulary& v,
                      const std::vector<std::string>& gate_names) {
    for (size_t i = 0; i < records.size(); ++i) {
        const std::string where = "record " + std::to_string(i);
        for (int tok : records[i].tokens.cells) {
            if (std::abs(tok) > v.padding_id())
                throw std::invalid_argument("vocabulary mismatch: " + where + " uses token id " +
                                            std::to_string(tok) +
                                            " outside the model's gate table");
        }
        if (auto err = validate_tokens(records[i].tokens, v))
            throw std::invalid_argument("vocabulary mismatch: " + where +
                                        " does not decode under the model's gate table: " +
                                        err->message);
        try {
            parse_prompt(records[i].prompt, gate_names);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("vocabulary mismatch: " + where + " prompt: " + e.what());
        }
    }
}

nlohmann::json run_manifest(const ModelConfig& arch, const TrainConfig& cfg,
                            const TrainMetrics& metrics) {
    nlohmann::json j{
        {"format_version", 1},
        {"model", to_json(arch)},
        {"train", to_json(cfg)},
        {"optimizer",
         {{"name", "adam"}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
        {"lr_policy",
         {{"name", "one_cycle"},
          {"warmup_fraction", 0.3},
          {"div_factor", 25.0},
          {"final_div_factor", 1e4}}},
        {"steps_completed", metrics.steps_completed},
        {"aborted", metrics.aborted}};
    if (!metrics.loss.empty()) j["final_loss"] = metrics.loss.back();
    if (!metrics.abort_reason.empty()) j["abort_reason"] = metrics.abort_reason;
    nlohmann::json val = nlohmann::json::array();
    for (const ValidationPoint& p : metrics.validation) val.push_back({p.step, p.loss});
    j["validation"] = val;
    return j;
}

}  // namespace genqc
