#include "pfr/model.hpp"

#include <fstream>

#include "binio.hpp"

namespace pfr {

void ModelConfig::validate() const {
    if (n_layer < 1) throw ConfigError("n_layer must be >= 1");
    if (feature_dim < 1 || state_dim < 1) throw ConfigError("feature/state dims must be >= 1");
    if (fno_modes > feature_dim / 2 + 1) {
        throw ConfigError("fno_modes " + std::to_string(fno_modes) +
                          " exceeds floor(M/2)+1 for feature_dim " + std::to_string(feature_dim));
    }
    if (modes_h > height / 2 + 1 || modes_w > width / 2 + 1) {
        throw ConfigError("2D modes exceed the conjugate-completion bound for the grid");
    }
    if (height < 1 || width < 1 || channels < 1) throw ConfigError("field shape must be positive");
    if (sensor_count < 1) throw ConfigError("sensor_count must be >= 1");
    if (conv_width < 1) throw ConfigError("conv_width must be >= 1");
}

Tensor fuse(const Tensor& e_t, const Tensor& e_s, const Tensor& gate, const Tensor& e_prev) {
    if (e_t.shape() != e_s.shape() || e_t.shape() != gate.shape() ||
        e_t.shape() != e_prev.shape()) {
        throw ShapeError("fuse expects equal shapes, got " + shape_str(e_t.shape()) + ", " +
                         shape_str(e_s.shape()) + ", " + shape_str(gate.shape()) + ", " +
                         shape_str(e_prev.shape()));
    }
    return add(add(mul(gate, e_t), mul(gate, e_s)), e_prev);
}

namespace {

/// RMS normalization over the trailing feature axis with a learnable gain:
/// x * gain / sqrt(mean(x^2) + eps), built from differentiable primitives
/// (rsqrt(z) = exp(-0.5 * log1p(z - 1))).
Tensor rms_norm(const Tensor& x, const Tensor& gain) {
    const std::size_t M = x.shape().back();
    const Tensor mean_w = Tensor::full({M, 1}, 1.0 / static_cast<double>(M));
    const Tensor msq = matmul(mul(x, x), mean_w);  // [..., 1]
    const Tensor inv = exp_op(scale(log1p_op(add(msq, Tensor::scalar(1e-8 - 1.0))), -0.5));
    return mul(mul(x, inv), gain);
}

}  // namespace

// -- FusionBlock ---------------------------------------------------------------

FusionBlock::FusionBlock(const ModelConfig& cfg, Rng& rng)
    : use_fno1d_(cfg.use_fno1d), pre_norm_(cfg.pre_norm) {
    Rng rt = rng.split(0);
    temporal_ = TemporalBranch(cfg.feature_dim, cfg.state_dim, cfg.conv_width, rt);
    if (use_fno1d_) {
        Rng rs = rng.split(1);
        spatial_ = FnoStack(cfg.feature_dim, cfg.fno_dim, cfg.fno_modes, cfg.fno_layers,
                            cfg.fno_activation, cfg.fno_bias, rs);
    }
    if (pre_norm_) norm_scale_ = Tensor::full({cfg.feature_dim}, 1.0);
}

Tensor FusionBlock::forward(const Tensor& e_prev) const {
    Tensor h = e_prev;
    if (pre_norm_) h = rms_norm(h, norm_scale_);
    SelectiveInputs sel;
    const Tensor e_t = temporal_.forward(h, &sel);
    if (!use_fno1d_) {
        return add(mul(sel.x_emb2, e_t), e_prev);
    }
    const Tensor e_s = spatial_.forward(sel.x_emb1);
    return fuse(e_t, e_s, sel.x_emb2, e_prev);
}

void FusionBlock::visit_params(const std::string& prefix, const ParamVisitor& v) {
    temporal_.visit_params(prefix + ".temporal", v);
    if (use_fno1d_) spatial_.visit_params(prefix + ".fno1d", v);
    if (pre_norm_) v(prefix + ".norm_scale", norm_scale_);
}

// -- Reconstructor ---------------------------------------------------------------

Reconstructor::Reconstructor(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng root(cfg.seed);
    Rng r_stem = root.split(1);
    stem_ = Linear::init(cfg.sensor_count, cfg.feature_dim, r_stem);
    blocks_.reserve(cfg.n_layer);
    for (std::size_t i = 0; i < cfg.n_layer; ++i) {
        Rng rb = root.split(100 + i);
        blocks_.emplace_back(cfg, rb);
    }
    const std::size_t out_width = cfg.height * cfg.width * cfg.channels;
    Rng r_h1 = root.split(2);
    Rng r_h2 = root.split(3);
    head_fc1_ = Linear::init(cfg.feature_dim, 4 * cfg.feature_dim, r_h1);
    head_fc2_ = Linear::init(4 * cfg.feature_dim, out_width, r_h2);
    if (cfg.use_fno2d) {
        Rng r_r = root.split(4);
        refiner_ = Fno2dRefiner(cfg.height, cfg.width, cfg.channels, cfg.fno_dim, cfg.modes_h,
                                cfg.modes_w, cfg.fno2d_layers, cfg.fno_activation, cfg.fno_bias,
                                r_r);
    }
}

Tensor Reconstructor::stem(const Tensor& x_seq) const {
    if (x_seq.rank() != 3 || x_seq.shape()[2] != cfg_.sensor_count) {
        throw ShapeError("stem expects [B,L," + std::to_string(cfg_.sensor_count) + "], got " +
                         shape_str(x_seq.shape()));
    }
    return stem_.forward(x_seq);
}

Tensor Reconstructor::head(const Tensor& e_f) const {
    const std::size_t B = e_f.shape()[0], L = e_f.shape()[1];
    const Tensor hidden = silu(head_fc1_.forward(e_f));
    const Tensor flat = head_fc2_.forward(hidden);
    return reshape(flat, {B, L, cfg_.height, cfg_.width, cfg_.channels});
}

namespace {

void check_finite(const Tensor& t, const std::string& stage) {
    if (has_nonfinite(t)) {
        throw DivergenceError("non-finite values after " + stage);
    }
}

}  // namespace

Tensor Reconstructor::forward(const Tensor& x_seq) const {
    Tensor e = stem(x_seq);
    check_finite(e, "stem");
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        e = blocks_[i].forward(e);
        check_finite(e, "block" + std::to_string(i));
    }
    Tensor u = head(e);
    check_finite(u, "head");
    if (cfg_.use_fno2d) {
        u = refiner_.refine(u);
        check_finite(u, "fno2d");
    }
    return u;
}

void Reconstructor::visit_params(const ParamVisitor& v) {
    stem_.visit("stem", v);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].visit_params("block" + std::to_string(i), v);
    }
    head_fc1_.visit("head.fc1", v);
    head_fc2_.visit("head.fc2", v);
    if (cfg_.use_fno2d) refiner_.visit_params("fno2d", v);
}

std::vector<std::pair<std::string, Tensor*>> Reconstructor::named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    visit_params([&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

void Reconstructor::watch_all(Tape& tape) {
    visit_params([&](const std::string&, Tensor& t) { t = tape.watch(t.detached()); });
}

void Reconstructor::detach_all() {
    visit_params([](const std::string&, Tensor& t) { t = t.detached(); });
}

std::size_t parameter_count(const ModelConfig& cfg) {
    const std::size_t M = cfg.feature_dim, N = cfg.state_dim, d = cfg.fno_dim;
    const std::size_t bias = cfg.fno_bias ? 1 : 0;
    std::size_t count = cfg.sensor_count * M + M;  // stem
    std::size_t per_block = 0;
    per_block += M * M + M;             // emb1_proj
    per_block += M * cfg.conv_width;    // conv kernel
    per_block += M * M + M;             // emb2_proj
    per_block += 2 * (M * N + N);       // b_proj, c_proj
    per_block += M * M;                 // dt_proj (no bias)
    per_block += M;                     // dt_bias
    per_block += M * N;                 // a_log
    per_block += M * M + M;             // out_proj
    if (cfg.use_fno1d) {
        per_block += 1 * d + bias * d;  // lift
        per_block += cfg.fno_layers * (2 * cfg.fno_modes * d * d + d * d + bias * d);
        per_block += d * 1 + bias * 1;  // proj
    }
    if (cfg.pre_norm) per_block += M;
    count += cfg.n_layer * per_block;
    const std::size_t out_width = cfg.height * cfg.width * cfg.channels;
    count += M * 4 * M + 4 * M;            // head fc1
    count += 4 * M * out_width + out_width;  // head fc2
    if (cfg.use_fno2d) {
        count += cfg.channels * d + bias * d;
        count += cfg.fno2d_layers * (2 * cfg.modes_h * cfg.modes_w * d * d + d * d + bias * d);
        count += d * cfg.channels + bias * cfg.channels;
    }
    return count;
}

// -- checkpoint serialization ----------------------------------------------------

namespace {

constexpr char kMagic[4] = {'F', 'R', 'M', 'B'};
constexpr std::uint16_t kVersion = 1;

void write_config(std::ostream& os, const ModelConfig& c) {
    using namespace binio;
    write_u32(os, static_cast<std::uint32_t>(c.n_layer));
    write_u32(os, static_cast<std::uint32_t>(c.feature_dim));
    write_u32(os, static_cast<std::uint32_t>(c.state_dim));
    write_u32(os, static_cast<std::uint32_t>(c.fno_dim));
    write_u32(os, static_cast<std::uint32_t>(c.fno_modes));
    write_u32(os, static_cast<std::uint32_t>(c.fno_layers));
    write_u32(os, static_cast<std::uint32_t>(c.fno2d_layers));
    write_u32(os, static_cast<std::uint32_t>(c.modes_h));
    write_u32(os, static_cast<std::uint32_t>(c.modes_w));
    write_u32(os, static_cast<std::uint32_t>(c.height));
    write_u32(os, static_cast<std::uint32_t>(c.width));
    write_u32(os, static_cast<std::uint32_t>(c.channels));
    write_u32(os, static_cast<std::uint32_t>(c.sensor_count));
    write_u32(os, static_cast<std::uint32_t>(c.conv_width));
    write_u64(os, c.seed);
    unsigned char flags = 0;
    if (c.use_fno1d) flags |= 1;
    if (c.use_fno2d) flags |= 2;
    if (c.fno_bias) flags |= 4;
    if (c.pre_norm) flags |= 8;
    write_bytes(os, &flags, 1);
    const unsigned char act = static_cast<unsigned char>(c.fno_activation);
    write_bytes(os, &act, 1);
}

ModelConfig read_config(std::istream& is) {
    using namespace binio;
    ModelConfig c;
    c.n_layer = read_u32(is, "config");
    c.feature_dim = read_u32(is, "config");
    c.state_dim = read_u32(is, "config");
    c.fno_dim = read_u32(is, "config");
    c.fno_modes = read_u32(is, "config");
    c.fno_layers = read_u32(is, "config");
    c.fno2d_layers = read_u32(is, "config");
    c.modes_h = read_u32(is, "config");
    c.modes_w = read_u32(is, "config");
    c.height = read_u32(is, "config");
    c.width = read_u32(is, "config");
    c.channels = read_u32(is, "config");
    c.sensor_count = read_u32(is, "config");
    c.conv_width = read_u32(is, "config");
    c.seed = read_u64(is, "config");
    unsigned char flags = 0, act = 0;
    read_bytes(is, &flags, 1, "config");
    read_bytes(is, &act, 1, "config");
    c.use_fno1d = flags & 1;
    c.use_fno2d = flags & 2;
    c.fno_bias = flags & 4;
    c.pre_norm = flags & 8;
    if (act > 2) throw FormatError("unknown activation code in checkpoint");
    c.fno_activation = static_cast<Activation>(act);
    return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    binio::write_bytes(os, kMagic, 4);
    binio::write_u16(os, kVersion);
    write_config(os, ckpt.config);
    binio::write_u64(os, ckpt.step);
    binio::write_u64(os, ckpt.rng_state);
    binio::write_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        binio::write_u32(os, static_cast<std::uint32_t>(name.size()));
        binio::write_bytes(os, name.data(), name.size());
        binio::write_u32(os, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t e : tensor.shape()) binio::write_u32(os, static_cast<std::uint32_t>(e));
        binio::write_f64_block(os, tensor.data());
    }
    os.flush();
    if (!os) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    binio::read_bytes(is, magic, 4, "magic");
    if (std::string(magic, 4) != std::string(kMagic, 4)) {
        throw FormatError("bad checkpoint magic in " + path);
    }
    const std::uint16_t version = binio::read_u16(is, "version");
    if (version != kVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config = read_config(is);
    ckpt.step = binio::read_u64(is, "step");
    ckpt.rng_state = binio::read_u64(is, "rng state");
    const std::uint32_t count = binio::read_u32(is, "tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = binio::read_u32(is, "tensor name length");
        std::string name(name_len, '\0');
        binio::read_bytes(is, name.data(), name_len, "tensor name");
        const std::uint32_t rank = binio::read_u32(is, "tensor rank");
        Shape shape(rank);
        std::size_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape[r] = binio::read_u32(is, "tensor extent");
            n *= shape[r];
        }
        std::vector<double> values = binio::read_f64_block(is, n, name.c_str());
        ckpt.tensors.emplace(std::move(name), Tensor::from(std::move(shape), std::move(values)));
    }
    return ckpt;
}

Checkpoint snapshot(Reconstructor& model, std::uint64_t step, std::uint64_t rng_state) {
    Checkpoint ckpt;
    ckpt.config = model.config();
    ckpt.step = step;
    ckpt.rng_state = rng_state;
    model.visit_params(
        [&](const std::string& name, Tensor& t) { ckpt.tensors.emplace(name, t.detached()); });
    return ckpt;
}

void restore(Reconstructor& model, const Checkpoint& ckpt) {
    model.visit_params([&](const std::string& name, Tensor& t) {
        const auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) {
            throw ShapeError("checkpoint does not contain tensor '" + name + "'");
        }
        if (it->second.shape() != t.shape()) {
            throw ShapeError("checkpoint tensor '" + name + "' has shape " +
                             shape_str(it->second.shape()) + ", model expects " +
                             shape_str(t.shape()));
        }
        t = it->second.detached();
    });
}

}  // namespace pfr
