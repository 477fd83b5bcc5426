#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "pfr/data.hpp"
#include "pfr/model.hpp"
#include "pfr/tensor.hpp"

namespace pfr {

/// Training hyperparameters.
struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch = 2;
    std::size_t window = 64;  // L
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;   // epochs between checkpoints; 0 = final only
    std::size_t windows_per_epoch = 0;  // 0 = 4 * floor(train_len / window)

    void validate(std::size_t train_len) const;
};

/// Adaptive-moment gradient descent with global gradient-norm clipping.
class AdamOptimizer {
public:
    explicit AdamOptimizer(const TrainConfig& cfg)
        : lr_(cfg.lr), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps),
          weight_decay_(cfg.weight_decay), clip_norm_(cfg.clip_norm) {}

    void step(std::vector<std::pair<std::string, Tensor*>>& params,
              const std::vector<Tensor>& grads);

    std::uint64_t step_count() const { return step_; }

    /// Moment tensors under "adam.m." / "adam.v." keys for checkpointing.
    void export_state(std::map<std::string, Tensor>& out) const;
    void import_state(const std::map<std::string, Tensor>& in);

private:
    double lr_, beta1_, beta2_, eps_, weight_decay_, clip_norm_;
    std::uint64_t step_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

/// Mean absolute error as a differentiable scalar (shapes must match).
Tensor mae_loss(const Tensor& pred, const Tensor& target);

/// Metrics on plain values.
double mae_value(const Tensor& pred, const Tensor& target);
double max_ae(const Tensor& pred, const Tensor& target);

/// In-memory dataset: frames plus precomputed sensor readings.
struct Dataset {
    std::vector<Tensor> fields;  // S frames of [H,W]
    SensorLayout layout;
    std::vector<double> sensors;  // [S * N_s] row-major
    std::size_t height = 0, width = 0;

    std::size_t steps() const { return fields.size(); }
    static Dataset load(const std::string& archive_path, const SensorLayout& layout);
    static Dataset from_frames(std::vector<FieldSnapshot> frames, const SensorLayout& layout);
};

/// Per-interval evaluation results (five intervals plus averages).
struct EvalReport {
    struct Interval {
        std::size_t begin = 0, end = 0;
        double mae = 0.0;
        double max_ae = 0.0;
    };
    std::vector<Interval> intervals;
    double mae_avg = 0.0;
    double max_ae_avg = 0.0;
    double wall_seconds = 0.0;
    std::string config_fingerprint;
};

void write_eval_report_csv(const EvalReport& report, std::ostream& os);
std::string format_eval_report(const EvalReport& report);

/// Training output: per-step and per-epoch loss curves plus the final state.
struct TrainResult {
    std::vector<double> step_losses;
    std::vector<double> epoch_losses;
    Checkpoint final_state;
};

/// Window-sampled training loop. Deterministic given cfg.seed. Throws
/// DivergenceError naming the step if the loss turns non-finite. When
/// checkpoint_path is non-empty, checkpoints are written there.
TrainResult train(Reconstructor& model, const Dataset& data, const DatasetSplit& split,
                  const TrainConfig& cfg, const std::string& checkpoint_path = "",
                  std::ostream* log = nullptr);

/// Reconstruct the field at absolute step t from the causal sensor window
/// ending at t (window length capped by available history).
Tensor reconstruct_step(const Reconstructor& model, const Dataset& data, std::size_t t,
                        std::size_t window);

/// Evaluate every test snapshot; reports MAE / Max-AE per interval T1..T5.
EvalReport evaluate(const Reconstructor& model, const Dataset& data, const DatasetSplit& split,
                    std::size_t window);

// ---- acceptance baselines ------------------------------------------------------

/// Mean training field, evaluated on the test range.
double persistence_baseline_mae(const Dataset& data, const DatasetSplit& split);

/// Per-step linear least-squares map sensors -> field (with intercept),
/// fitted on the training range; returns its test MAE.
double linear_baseline_mae(const Dataset& data, const DatasetSplit& split);

// ---- ablation harness ------------------------------------------------------------

struct AblationRow {
    std::size_t n_layer = 0;
    std::size_t state_dim = 0;
    bool fno1d = true;
    bool fno2d = true;
    double mae = 0.0;
    double max_ae = 0.0;
};

/// Depth x state-dim grid: n_layer in {5,10,20} x state_dim in {8,16,32},
/// each trained with the shared budget in cfg.
std::vector<AblationRow> ablate_depth_grid(const ModelConfig& base, const TrainConfig& cfg,
                                           const Dataset& data, const DatasetSplit& split,
                                           std::ostream* log = nullptr);

/// Operator ablation rows: (off,off), (on,off), (on,on).
std::vector<AblationRow> ablate_fno(const ModelConfig& base, const TrainConfig& cfg,
                                    const Dataset& data, const DatasetSplit& split,
                                    std::ostream* log = nullptr);

void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& os);
std::string format_ablation_tables(const std::vector<AblationRow>& grid_rows,
                                   const std::vector<AblationRow>& fno_rows);

/// Ground truth, reconstruction, and |error| per requested step as 16-bit P5
/// graymaps (min-max scaled; scales recorded in a sidecar) plus raw FFR1
/// archives of the same frames.
void export_error_maps(const Reconstructor& model, const Dataset& data,
                       const std::vector<std::size_t>& steps, std::size_t window,
                       const std::string& out_dir);

}  // namespace pfr
