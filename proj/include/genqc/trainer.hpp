#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "genqc/condition_encoder.hpp"
#include "genqc/dataset_forge.hpp"
#include "genqc/denoiser_unet.hpp"
#include "genqc/diffusion_core.hpp"
#include "genqc/gate_codec.hpp"
#include "genqc/nn.hpp"
#include "genqc/rng.hpp"

namespace genqc {

/// Everything needed to rebuild a model from scratch: gate vocabulary,
/// conditioning stack, U-Net layout and noise schedule. Stored inside
/// checkpoints and run manifests so a saved model is self-describing.
struct ModelConfig {
    std::vector<std::string> gates = {"h", "cx"};  // lowercase pool
    int embed_d = 0;  // embedding width; 0 resolves to gates + 2
    uint64_t vocab_seed = 7;

    int l_text = 16;
    int c_cond = 64;
    int cond_heads = 4;
    int compile_qubits = 0;  // 0: no unitary branch
    double enc_dropout = 0.1;

    std::vector<int64_t> widths = {64, 128};
    int f = 3;
    int unet_heads = 4;
    int groups = 8;
    int64_t time_dim = 0;
    bool use_positional_encoding = true;
    double skip_scale = 0.70710678118654752;

    int T = 1000;
    double s = 0.008;
    uint64_t init_seed = 1;

    int resolved_d() const {
        return embed_d > 0 ? embed_d : static_cast<int>(gates.size()) + 2;
    }
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// A constructed model. The parameter layout (encoder first, then
/// denoiser, one shared init stream) is part of the checkpoint contract;
/// changing it would orphan saved blobs.
struct ModelBundle {
    ModelConfig config;
    GateVocabulary vocab;
    nn::ParamStore store;
    std::unique_ptr<ConditionEncoder> encoder;
    std::unique_ptr<DenoiserUNet> denoiser;
    NoiseSchedule schedule;
};

ModelBundle build_model(const ModelConfig& cfg);

enum class TrainStage { max_pad, bucket_pad };

const char* to_string(TrainStage stage);
TrainStage train_stage_from_string(const std::string& s);

/// One training recipe. The *_config() factories below give the
/// full-scale reference rows; desk_scale() shrinks one to laptop size.
struct TrainConfig {
    TrainStage stage = TrainStage::max_pad;
    double lr = 3e-4;
    int epochs = 75;
    int batch = 256;
    uint64_t seed = 0;
    double gamma = 0.1;
    double cond_drop_prob = 0.1;
    std::string dataset_path;
    double val_fraction = 0.05;  // prompt-stratified holdout share
    double epoch_scale = 1.0;    // factor desk_scale applied to the epochs
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Reference recipes at full scale.
TrainConfig stage1_config();    // max pad, lr 3e-4, 75 epochs, batch 256
TrainConfig stage2_config();    // bucket pad, lr 5e-5, 50 epochs, batch 256
TrainConfig finetune_config();  // bucket pad, lr 5e-5, 25 epochs, batch 256
TrainConfig compile_config();   // bucket pad, lr 3e-4, 150 epochs, batch 256

/// Desk-scale variant of a reference recipe: batch 64, epochs rescaled so
/// the run lands near target_steps optimizer steps on a dataset of the
/// given size. The applied factor is kept in epoch_scale and surfaces in
/// the run manifest.
TrainConfig desk_scale(TrainConfig reference, int64_t dataset_records,
                       int64_t target_steps = 10000);

/// One-cycle policy: cosine warmup from max_lr / 25 to max_lr over the
/// first 30% of steps, then cosine decay to a floor of max_lr / 25 * 1e-4.
/// step is clamped into [0, total_steps).
double one_cycle_lr(int64_t step, int64_t total_steps, double max_lr);

/// One planned batch: record indices plus padded target dims. qubits is
/// the subset-wide maximum under max_pad and the bucket's count under
/// bucket_pad; timesteps is the longest circuit in the batch rounded up
/// to round_to, so cropping never drops a placed gate.
struct TrainBatch {
    std::vector<int> indices;
    int qubits = 0;
    int timesteps = 0;
};

/// Deterministic epoch plan over subset (indices into records). max_pad
/// shuffles the subset into fixed-size batches; bucket_pad batches within
/// single-qubit-count buckets, then shuffles the batch order.
std::vector<TrainBatch> plan_batches(const std::vector<DatasetRecord>& records,
                                     const std::vector<int>& subset, TrainStage stage, int batch,
                                     int round_to, Rng& rng);

/// Pads a record to the batch dims and encodes it for the loss.
TrainingExample encode_record(const DatasetRecord& rec, const GateVocabulary& v, int qubits,
                              int timesteps);

/// Prompt-stratified split: per prompt bin, floor(val_fraction * size)
/// records go to validation. Returns (train, validation) index lists,
/// each sorted ascending.
std::pair<std::vector<int>, std::vector<int>> split_validation(
    const std::vector<DatasetRecord>& records, double val_fraction, uint64_t seed);

/// Serializes the config and parameters: a fixed magic, a JSON manifest
/// (format version, model config, named tensor index with shapes, dtype
/// and byte offsets) and a contiguous little-endian float32 blob in store
/// order. The file is written to a temp path and renamed into place, so
/// readers never observe a partial checkpoint. Values round to float32.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const nn::ParamStore& store);

/// Rebuilds the model from the stored config and fills its parameters
/// from the blob. Throws std::runtime_error when the magic, version,
/// tensor names, shapes, dtypes, offsets or blob size do not line up with
/// the architecture the config describes.
ModelBundle load_checkpoint(const std::string& path);

struct ValidationPoint {
    int64_t step = 0;
    double loss = 0.0;
};

struct TrainMetrics {
    std::vector<double> loss;  // one entry per optimizer step
    std::vector<double> lr;
    std::vector<ValidationPoint> validation;
    int64_t steps_completed = 0;
    bool aborted = false;
    std::string abort_reason;
};

struct TrainResult {
    ModelBundle model;
    TrainMetrics metrics;
};

/// Trains a fresh model built from arch: per epoch plans stage-appropriate
/// batches, then runs training_loss plus one Adam update per batch under
/// the one-cycle policy. Validates on the held-out split on a cadence of
/// at most ~20 passes per run. A non-finite loss or gradient aborts the
/// run before the offending update, so the returned parameters are the
/// state of the last completed step.
TrainResult train(const ModelConfig& arch, const TrainConfig& cfg,
                  const std::vector<DatasetRecord>& dataset);

/// Continues training an existing model on new data; the stage is forced
/// to bucket_pad. Throws std::invalid_argument when the data does not fit
/// the model's gate vocabulary (token ids outside the table, or prompts
/// naming unknown gates).
TrainResult fine_tune(ModelBundle base, const std::vector<DatasetRecord>& new_dataset,
                      TrainConfig cfg);

/// Mean loss over the subset in eval mode: no condition dropout, no input
/// perturbation, and a noise stream derived only from cfg.seed, so values
/// from successive calls are comparable.
double validation_loss(ModelBundle& model, const std::vector<DatasetRecord>& records,
                       const std::vector<int>& subset, const TrainConfig& cfg);

/// The compatibility scan fine_tune runs before touching the optimizer.
void check_vocabulary(const std::vector<DatasetRecord>& records, const GateVocabulary& v,
                      const std::vector<std::string>& gate_names);

/// All resolved hyperparameters and seeds for one run, including the
/// optimizer and LR-policy constants and the desk-scale factor.
nlohmann::json run_manifest(const ModelConfig& arch, const TrainConfig& cfg,
                            const TrainMetrics& metrics);

}  // namespace genqc
