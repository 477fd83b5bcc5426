#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pfr/fno.hpp"
#include "pfr/nn.hpp"
#include "pfr/ssm.hpp"
#include "pfr/tensor.hpp"

namespace pfr {

/// Architecture hyperparameters. Field names follow the block structure:
/// feature_dim is the residual-stream width, state_dim the per-channel state
/// count, fno_* the spectral-branch sizes.
struct ModelConfig {
    std::size_t n_layer = 2;
    std::size_t feature_dim = 32;  // M
    std::size_t state_dim = 8;     // N
    std::size_t fno_dim = 16;      // d, lift width shared by both operators
    std::size_t fno_modes = 8;     // m, retained 1D modes
    std::size_t fno_layers = 4;    // T
    std::size_t fno2d_layers = 2;  // T2
    std::size_t modes_h = 8;
    std::size_t modes_w = 8;
    std::size_t height = 32;   // H
    std::size_t width = 24;    // W
    std::size_t channels = 1;  // C
    std::size_t sensor_count = 16;  // N_s
    std::size_t conv_width = 4;
    std::uint64_t seed = 0;
    bool use_fno1d = true;
    bool use_fno2d = true;
    bool fno_bias = true;
    bool pre_norm = false;
    Activation fno_activation = Activation::Silu;

    void validate() const;  // throws ConfigError
    bool operator==(const ModelConfig&) const = default;
};

/// Gated fusion exactly as composed in the block:
/// gate (.) e_t + gate (.) e_s + e_prev.
Tensor fuse(const Tensor& e_t, const Tensor& e_s, const Tensor& gate, const Tensor& e_prev);

/// One residual block: temporal branch, optional spatial branch, gated fusion.
class FusionBlock {
public:
    FusionBlock() = default;
    FusionBlock(const ModelConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& e_prev) const;
    void visit_params(const std::string& prefix, const ParamVisitor& v);

private:
    TemporalBranch temporal_;
    FnoStack spatial_;
    bool use_fno1d_ = true;
    bool pre_norm_ = false;
    Tensor norm_scale_;  // [M], only when pre_norm
};

/// Sensor sequence -> reconstructed field sequence.
class Reconstructor {
public:
    explicit Reconstructor(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    /// Per-step linear sensor embedding [B,L,N_s] -> [B,L,M].
    Tensor stem(const Tensor& x_seq) const;

    /// FFN head [B,L,M] -> [B,L,H,W,C].
    Tensor head(const Tensor& e_f) const;

    /// Full pipeline: stem -> blocks -> head -> 2D spectral refinement.
    /// Throws DivergenceError naming the first stage that produced
    /// non-finite values.
    Tensor forward(const Tensor& x_seq) const;

    const std::vector<FusionBlock>& blocks() const { return blocks_; }

    void visit_params(const ParamVisitor& v);
    std::vector<std::pair<std::string, Tensor*>> named_parameters();

    /// Replace every parameter with a tape-watched copy / a detached copy.
    void watch_all(Tape& tape);
    void detach_all();

private:
    ModelConfig cfg_;
    Linear stem_;
    std::vector<FusionBlock> blocks_;
    Linear head_fc1_;  // M -> 4M
    Linear head_fc2_;  // 4M -> H*W*C
    Fno2dRefiner refiner_;
};

/// Number of learnable scalars implied by a config (closed form).
std::size_t parameter_count(const ModelConfig& cfg);

/// Serialized training state: parameters plus any extra named tensors the
/// trainer wants carried along (optimizer moments, under "adam." prefixes).
struct Checkpoint {
    ModelConfig config;
    std::map<std::string, Tensor> tensors;
    std::uint64_t step = 0;
    std::uint64_t rng_state = 0;
};

/// "FRMB" binary format; save -> load -> save is byte-identical.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Capture a model's parameters into / restore them from a checkpoint.
/// restore() throws ShapeError naming the first mismatched tensor.
Checkpoint snapshot(Reconstructor& model, std::uint64_t step = 0, std::uint64_t rng_state = 0);
void restore(Reconstructor& model, const Checkpoint& ckpt);

}  // namespace pfr
