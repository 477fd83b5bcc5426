#include "pfr/traineval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "binio.hpp"
#include "pfr/rng.hpp"

namespace pfr {

void TrainConfig::validate(std::size_t train_len) const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (window < 1) throw ConfigError("window must be >= 1");
    if (window > train_len) {
        throw ConfigError("window " + std::to_string(window) + " exceeds train range " +
                          std::to_string(train_len));
    }
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
}

// ---- optimizer -----------------------------------------------------------------

void AdamOptimizer::step(std::vector<std::pair<std::string, Tensor*>>& params,
                         const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) {
        throw UsageError("optimizer got " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    }
    double sq_norm = 0.0;
    for (const Tensor& g : grads) {
        for (double v : g.data()) sq_norm += v * v;
    }
    const double norm = std::sqrt(sq_norm);
    const double gscale = (clip_norm_ > 0.0 && norm > clip_norm_) ? clip_norm_ / norm : 1.0;

    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params[i].first;
        Tensor& p = *params[i].second;
        const auto& gd = grads[i].data();
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            mit = m_.emplace(name, Tensor::zeros(p.shape())).first;
            v_.emplace(name, Tensor::zeros(p.shape()));
        }
        std::vector<double> m = mit->second.data();
        std::vector<double> v = v_.at(name).data();
        std::vector<double> pv = p.data();
        for (std::size_t j = 0; j < pv.size(); ++j) {
            const double g = gd[j] * gscale;
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            pv[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * pv[j]);
        }
        mit->second = Tensor::from(p.shape(), std::move(m));
        v_.at(name) = Tensor::from(p.shape(), std::move(v));
        p = Tensor::from(p.shape(), std::move(pv));
    }
}

void AdamOptimizer::export_state(std::map<std::string, Tensor>& out) const {
    for (const auto& [name, t] : m_) out.emplace("adam.m." + name, t);
    for (const auto& [name, t] : v_) out.emplace("adam.v." + name, t);
}

void AdamOptimizer::import_state(const std::map<std::string, Tensor>& in) {
    m_.clear();
    v_.clear();
    for (const auto& [name, t] : in) {
        if (name.rfind("adam.m.", 0) == 0) m_.emplace(name.substr(7), t);
        if (name.rfind("adam.v.", 0) == 0) v_.emplace(name.substr(7), t);
    }
}

// ---- metrics --------------------------------------------------------------------

Tensor mae_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("mae_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    }
    const double inv = 1.0 / static_cast<double>(pred.size());
    return scale(sum_all(abs_op(sub(pred, target))), inv);
}

double mae_value(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("mae shape mismatch: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    }
    const auto& a = pred.data();
    const auto& b = target.data();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

double max_ae(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("max_ae shape mismatch: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    }
    const auto& a = pred.data();
    const auto& b = target.data();
    double mx = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mx = std::max(mx, std::abs(a[i] - b[i]));
    return mx;
}

// ---- dataset ----------------------------------------------------------------------

Dataset Dataset::from_frames(std::vector<FieldSnapshot> frames, const SensorLayout& layout) {
    if (frames.empty()) throw ConfigError("dataset needs at least one frame");
    Dataset ds;
    ds.height = frames.front().field.shape()[0];
    ds.width = frames.front().field.shape()[1];
    layout.validate(ds.height, ds.width);
    ds.layout = layout;
    const std::size_t ns = layout.count();
    ds.sensors.resize(frames.size() * ns);
    ds.fields.reserve(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const Tensor x = sample_sensors(frames[t], layout);
        std::copy(x.data().begin(), x.data().end(), ds.sensors.begin() + t * ns);
        ds.fields.push_back(frames[t].field);
    }
    return ds;
}

Dataset Dataset::load(const std::string& archive_path, const SensorLayout& layout) {
    return from_frames(read_archive(archive_path), layout);
}

namespace {

/// Sensor window [first, first+len) as [1, len, N_s] rows.
void fill_window(const Dataset& data, std::size_t first, std::size_t len, double* out) {
    const std::size_t ns = data.layout.count();
    std::copy(data.sensors.begin() + first * ns, data.sensors.begin() + (first + len) * ns, out);
}

std::string fingerprint(const ModelConfig& cfg) {
    // FNV-1a over the checkpoint-format config encoding.
    std::ostringstream os;
    Checkpoint tmp;
    tmp.config = cfg;
    os << cfg.n_layer << '.' << cfg.feature_dim << '.' << cfg.state_dim << '.' << cfg.fno_dim
       << '.' << cfg.fno_modes << '.' << cfg.fno_layers << '.' << cfg.fno2d_layers << '.'
       << cfg.modes_h << '.' << cfg.modes_w << '.' << cfg.height << '.' << cfg.width << '.'
       << cfg.channels << '.' << cfg.sensor_count << '.' << cfg.conv_width << '.' << cfg.seed
       << '.' << cfg.use_fno1d << cfg.use_fno2d << cfg.fno_bias << cfg.pre_norm
       << static_cast<int>(cfg.fno_activation);
    const std::string s = os.str();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace

// ---- training -----------------------------------------------------------------------

TrainResult train(Reconstructor& model, const Dataset& data, const DatasetSplit& split,
                  const TrainConfig& cfg, const std::string& checkpoint_path, std::ostream* log) {
    cfg.validate(split.train_len());
    const ModelConfig& mc = model.config();
    if (data.layout.count() != mc.sensor_count || data.height != mc.height ||
        data.width != mc.width) {
        throw ConfigError("dataset (" + std::to_string(data.height) + "x" +
                          std::to_string(data.width) + ", " +
                          std::to_string(data.layout.count()) + " sensors) does not match the model config");
    }
    const std::size_t L = cfg.window;
    const std::size_t B = cfg.batch;
    const std::size_t ns = mc.sensor_count;
    const std::size_t field_n = mc.height * mc.width * mc.channels;
    const std::size_t wpe =
        cfg.windows_per_epoch > 0 ? cfg.windows_per_epoch : 4 * (split.train_len() / L);
    const std::size_t steps_per_epoch = std::max<std::size_t>(1, (wpe + B - 1) / B);
    const std::size_t start_lo = split.train_begin;
    const std::size_t start_hi = split.train_end - L;  // inclusive

    Rng rng(cfg.seed);
    AdamOptimizer opt(cfg);
    TrainResult result;
    auto params = model.named_parameters();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_sum = 0.0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            std::vector<double> xw(B * L * ns);
            std::vector<double> tw(B * L * field_n);
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t first =
                    start_lo + static_cast<std::size_t>(rng.below(start_hi - start_lo + 1));
                fill_window(data, first, L, xw.data() + b * L * ns);
                for (std::size_t l = 0; l < L; ++l) {
                    const auto& f = data.fields[first + l].data();
                    std::copy(f.begin(), f.end(), tw.begin() + (b * L + l) * field_n);
                }
            }
            const Tensor x = Tensor::from({B, L, ns}, std::move(xw));
            const Tensor target =
                Tensor::from({B, L, mc.height, mc.width, mc.channels}, std::move(tw));

            Tape tape;
            double loss_val = 0.0;
            const std::string where =
                "epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(step + 1);
            {
                Tape::Scope scope(tape);
                model.watch_all(tape);
                Tensor loss;
                try {
                    loss = mae_loss(model.forward(x), target);
                } catch (const DivergenceError& e) {
                    throw DivergenceError(std::string(e.what()) + " at " + where);
                }
                loss_val = loss.item();
                if (!std::isfinite(loss_val)) {
                    throw DivergenceError("non-finite loss at " + where);
                }
                tape.backward(loss);
            }
            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (auto& [name, t] : params) grads.push_back(tape.grad(*t));
            model.detach_all();
            opt.step(params, grads);

            result.step_losses.push_back(loss_val);
            epoch_sum += loss_val;
        }
        const double epoch_loss = epoch_sum / static_cast<double>(steps_per_epoch);
        result.epoch_losses.push_back(epoch_loss);
        if (log) {
            (*log) << "epoch " << epoch + 1 << "/" << cfg.epochs << " train_mae " << epoch_loss;
            const std::size_t cadence = std::max<std::size_t>(1, cfg.epochs / 5);
            if ((epoch + 1) % cadence == 0 || epoch + 1 == cfg.epochs) {
                // Sparse test probe: every fifth test step keeps the log cheap.
                double probe_sum = 0.0;
                std::size_t probe_n = 0;
                for (std::size_t t = split.test_begin; t < split.test_end; t += 5) {
                    const Tensor pred = reconstruct_step(model, data, t, L);
                    const Tensor truth = reshape(data.fields[t].detached(),
                                                 {mc.height, mc.width, mc.channels});
                    probe_sum += mae_value(pred, truth);
                    ++probe_n;
                }
                (*log) << " test_mae~" << probe_sum / static_cast<double>(probe_n);
            }
            (*log) << std::endl;
        }
        if (!checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
            (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
            Checkpoint ck = snapshot(model, opt.step_count(), rng.state());
            opt.export_state(ck.tensors);
            save_checkpoint(ck, checkpoint_path);
        }
    }

    result.final_state = snapshot(model, opt.step_count(), rng.state());
    opt.export_state(result.final_state.tensors);
    if (!checkpoint_path.empty()) save_checkpoint(result.final_state, checkpoint_path);
    return result;
}

// ---- evaluation -----------------------------------------------------------------------

Tensor reconstruct_step(const Reconstructor& model, const Dataset& data, std::size_t t,
                        std::size_t window) {
    const ModelConfig& mc = model.config();
    if (t >= data.steps()) throw ConfigError("step " + std::to_string(t) + " outside dataset");
    const std::size_t first = t + 1 >= window ? t + 1 - window : 0;
    const std::size_t len = t + 1 - first;
    if (len < mc.conv_width) {
        throw ConfigError("window ending at step " + std::to_string(t) +
                          " is shorter than the model's conv width");
    }
    std::vector<double> xw(len * mc.sensor_count);
    fill_window(data, first, len, xw.data());
    const Tensor x = Tensor::from({1, len, mc.sensor_count}, std::move(xw));
    const Tensor u = model.forward(x);
    // Last window position is the reconstruction for step t.
    const auto& ud = u.data();
    const std::size_t fn = mc.height * mc.width * mc.channels;
    std::vector<double> out(ud.end() - static_cast<std::ptrdiff_t>(fn), ud.end());
    return Tensor::from({mc.height, mc.width, mc.channels}, std::move(out));
}

EvalReport evaluate(const Reconstructor& model, const Dataset& data, const DatasetSplit& split,
                    std::size_t window) {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig& mc = model.config();
    if (split.test_end > data.steps()) {
        throw ConfigError("split test range extends past the dataset (" +
                          std::to_string(split.test_end) + " > " +
                          std::to_string(data.steps()) + ")");
    }
    const std::size_t fn = mc.height * mc.width * mc.channels;
    const std::size_t L = window;
    const std::size_t group = 8;  // windows per batched forward

    EvalReport report;
    report.config_fingerprint = fingerprint(mc);
    double mae_sum_total = 0.0;
    for (const auto& [ibegin, iend] : split.intervals) {
        EvalReport::Interval iv;
        iv.begin = ibegin;
        iv.end = iend;
        double mae_sum = 0.0;
        for (std::size_t t = ibegin; t < iend; t += group) {
            const std::size_t gcount = std::min(group, iend - t);
            // All grouped windows share length L (test steps always have
            // at least L-1 steps of history at desk scale).
            std::vector<double> xw(gcount * L * mc.sensor_count);
            for (std::size_t g = 0; g < gcount; ++g) {
                const std::size_t tt = t + g;
                if (tt + 1 < L) throw ConfigError("test step has insufficient history");
                fill_window(data, tt + 1 - L, L, xw.data() + g * L * mc.sensor_count);
            }
            const Tensor u =
                model.forward(Tensor::from({gcount, L, mc.sensor_count}, std::move(xw)));
            const auto& ud = u.data();
            for (std::size_t g = 0; g < gcount; ++g) {
                const std::size_t tt = t + g;
                const double* pred = ud.data() + ((g * L) + (L - 1)) * fn;
                const auto& truth = data.fields[tt].data();
                double local_max = 0.0;
                double local_sum = 0.0;
                for (std::size_t i = 0; i < fn; ++i) {
                    const double d = std::abs(pred[i] - truth[i]);
                    local_sum += d;
                    local_max = std::max(local_max, d);
                }
                mae_sum += local_sum / static_cast<double>(fn);
                iv.max_ae = std::max(iv.max_ae, local_max);
            }
        }
        iv.mae = mae_sum / static_cast<double>(iend - ibegin);
        mae_sum_total += iv.mae;
        report.intervals.push_back(iv);
    }
    report.mae_avg = mae_sum_total / static_cast<double>(report.intervals.size());
    double mx = 0.0;
    for (const auto& iv : report.intervals) mx += iv.max_ae;
    report.max_ae_avg = mx / static_cast<double>(report.intervals.size());
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

void write_eval_report_csv(const EvalReport& report, std::ostream& os) {
    os << "interval,begin,end,mae,max_ae\n";
    char buf[64];
    for (std::size_t i = 0; i < report.intervals.size(); ++i) {
        const auto& iv = report.intervals[i];
        std::snprintf(buf, sizeof buf, "%.12e,%.12e", iv.mae, iv.max_ae);
        os << "T" << i + 1 << "," << iv.begin << "," << iv.end << "," << buf << "\n";
    }
    std::snprintf(buf, sizeof buf, "%.12e,%.12e", report.mae_avg, report.max_ae_avg);
    os << "average,,," << buf << "\n";
}

std::string format_eval_report(const EvalReport& report) {
    std::ostringstream os;
    os << "interval      steps          MAE        Max-AE\n";
    char line[128];
    for (std::size_t i = 0; i < report.intervals.size(); ++i) {
        const auto& iv = report.intervals[i];
        std::snprintf(line, sizeof line, "T%-8zu %5zu-%-5zu %12.5e %12.5e\n", i + 1, iv.begin,
                      iv.end, iv.mae, iv.max_ae);
        os << line;
    }
    std::snprintf(line, sizeof line, "average    %11s %12.5e %12.5e\n", "", report.mae_avg,
                  report.max_ae_avg);
    os << line;
    os << "fingerprint " << report.config_fingerprint << ", wall " << report.wall_seconds
       << " s\n";
    return os.str();
}

// ---- baselines ---------------------------------------------------------------------

double persistence_baseline_mae(const Dataset& data, const DatasetSplit& split) {
    const std::size_t n = data.height * data.width;
    std::vector<double> mean(n, 0.0);
    for (std::size_t t = split.train_begin; t < split.train_end; ++t) {
        const auto& f = data.fields[t].data();
        for (std::size_t i = 0; i < n; ++i) mean[i] += f[i];
    }
    const double inv = 1.0 / static_cast<double>(split.train_len());
    for (double& v : mean) v *= inv;

    double sum = 0.0;
    for (std::size_t t = split.test_begin; t < split.test_end; ++t) {
        const auto& f = data.fields[t].data();
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += std::abs(f[i] - mean[i]);
        sum += s / static_cast<double>(n);
    }
    return sum / static_cast<double>(split.test_len());
}

namespace {

/// Solve the SPD system G x = b in place by Gaussian elimination with
/// partial pivoting (tiny systems only).
std::vector<double> solve_dense(std::vector<double> g, std::vector<double> b, std::size_t n) {
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(g[r * n + col]) > std::abs(g[piv * n + col])) piv = r;
        }
        if (std::abs(g[piv * n + col]) < 1e-300) {
            throw UsageError("singular normal equations in the linear baseline");
        }
        if (piv != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(g[col * n + c], g[piv * n + c]);
            std::swap(b[col], b[piv]);
        }
        const double d = g[col * n + col];
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = g[r * n + col] / d;
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) g[r * n + c] -= f * g[col * n + c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t r = n; r-- > 0;) {
        double acc = b[r];
        for (std::size_t c = r + 1; c < n; ++c) acc -= g[r * n + c] * x[c];
        x[r] = acc / g[r * n + r];
    }
    return x;
}

}  // namespace

double linear_baseline_mae(const Dataset& data, const DatasetSplit& split) {
    const std::size_t ns = data.layout.count();
    const std::size_t k = ns + 1;  // + intercept
    const std::size_t fn = data.height * data.width;

    // Normal equations shared across output pixels: G = X^T X, rhs per pixel.
    std::vector<double> gram(k * k, 0.0);
    std::vector<double> xt_u(k * fn, 0.0);
    std::vector<double> row(k);
    for (std::size_t t = split.train_begin; t < split.train_end; ++t) {
        for (std::size_t i = 0; i < ns; ++i) row[i] = data.sensors[t * ns + i];
        row[ns] = 1.0;
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) gram[i * k + j] += row[i] * row[j];
        }
        const auto& f = data.fields[t].data();
        for (std::size_t i = 0; i < k; ++i) {
            const double ri = row[i];
            double* dst = xt_u.data() + i * fn;
            for (std::size_t p = 0; p < fn; ++p) dst[p] += ri * f[p];
        }
    }
    // Tiny ridge keeps the solve well-posed if sensors are degenerate.
    for (std::size_t i = 0; i < k; ++i) gram[i * k + i] += 1e-10;

    // Solve for all pixels: W [k, fn], column p solves G w = xt_u[:,p].
    std::vector<double> weights(k * fn);
    std::vector<double> rhs(k);
    for (std::size_t p = 0; p < fn; ++p) {
        for (std::size_t i = 0; i < k; ++i) rhs[i] = xt_u[i * fn + p];
        const std::vector<double> w = solve_dense(gram, rhs, k);
        for (std::size_t i = 0; i < k; ++i) weights[i * fn + p] = w[i];
    }

    double sum = 0.0;
    std::vector<double> pred(fn);
    for (std::size_t t = split.test_begin; t < split.test_end; ++t) {
        std::fill(pred.begin(), pred.end(), 0.0);
        for (std::size_t i = 0; i < ns; ++i) {
            const double xv = data.sensors[t * ns + i];
            const double* wrow = weights.data() + i * fn;
            for (std::size_t p = 0; p < fn; ++p) pred[p] += xv * wrow[p];
        }
        const double* intercept = weights.data() + ns * fn;
        const auto& f = data.fields[t].data();
        double s = 0.0;
        for (std::size_t p = 0; p < fn; ++p) s += std::abs(pred[p] + intercept[p] - f[p]);
        sum += s / static_cast<double>(fn);
    }
    return sum / static_cast<double>(split.test_len());
}

// ---- ablation ------------------------------------------------------------------------

namespace {

AblationRow run_one(const ModelConfig& cfg, const TrainConfig& tcfg, const Dataset& data,
                    const DatasetSplit& split, std::ostream* log) {
    Reconstructor model(cfg);
    train(model, data, split, tcfg, "", log);
    const EvalReport report = evaluate(model, data, split, tcfg.window);
    AblationRow row;
    row.n_layer = cfg.n_layer;
    row.state_dim = cfg.state_dim;
    row.fno1d = cfg.use_fno1d;
    row.fno2d = cfg.use_fno2d;
    row.mae = report.mae_avg;
    row.max_ae = report.max_ae_avg;
    return row;
}

}  // namespace

std::vector<AblationRow> ablate_depth_grid(const ModelConfig& base, const TrainConfig& cfg,
                                           const Dataset& data, const DatasetSplit& split,
                                           std::ostream* log) {
    std::vector<AblationRow> rows;
    for (std::size_t n_layer : {5u, 10u, 20u}) {
        for (std::size_t state : {8u, 16u, 32u}) {
            ModelConfig mc = base;
            mc.n_layer = n_layer;
            mc.state_dim = state;
            if (log) (*log) << "[ablate] n_layer=" << n_layer << " state_dim=" << state << "\n";
            rows.push_back(run_one(mc, cfg, data, split, nullptr));
        }
    }
    return rows;
}

std::vector<AblationRow> ablate_fno(const ModelConfig& base, const TrainConfig& cfg,
                                    const Dataset& data, const DatasetSplit& split,
                                    std::ostream* log) {
    std::vector<AblationRow> rows;
    const std::pair<bool, bool> variants[] = {{false, false}, {true, false}, {true, true}};
    for (const auto& [f1, f2] : variants) {
        ModelConfig mc = base;
        mc.use_fno1d = f1;
        mc.use_fno2d = f2;
        if (log) (*log) << "[ablate] fno1d=" << f1 << " fno2d=" << f2 << "\n";
        rows.push_back(run_one(mc, cfg, data, split, nullptr));
    }
    return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& os) {
    os << "n_layer,state_dim,fno1d,fno2d,mae,max_ae\n";
    char buf[64];
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%.12e,%.12e", r.mae, r.max_ae);
        os << r.n_layer << "," << r.state_dim << "," << (r.fno1d ? 1 : 0) << ","
           << (r.fno2d ? 1 : 0) << "," << buf << "\n";
    }
}

std::string format_ablation_tables(const std::vector<AblationRow>& grid_rows,
                                   const std::vector<AblationRow>& fno_rows) {
    std::ostringstream os;
    char line[160];
    if (!grid_rows.empty()) {
        os << "depth x state-dim grid (MAE / Max-AE)\n";
        os << "n_layer |        D = 8         |        D = 16        |        D = 32\n";
        for (std::size_t nl : {5u, 10u, 20u}) {
            std::string row = "  " + std::to_string(nl) + (nl < 10 ? "    " : "   ");
            for (std::size_t st : {8u, 16u, 32u}) {
                for (const AblationRow& r : grid_rows) {
                    if (r.n_layer == nl && r.state_dim == st) {
                        std::snprintf(line, sizeof line, " | %.3e / %.3e", r.mae, r.max_ae);
                        row += line;
                    }
                }
            }
            os << row << "\n";
        }
    }
    if (!fno_rows.empty()) {
        os << "operator ablation\n";
        os << "fno1d fno2d          MAE       Max-AE\n";
        for (const AblationRow& r : fno_rows) {
            std::snprintf(line, sizeof line, "%5s %5s %12.5e %12.5e\n", r.fno1d ? "yes" : "-",
                          r.fno2d ? "yes" : "-", r.mae, r.max_ae);
            os << line;
        }
    }
    return os.str();
}

// ---- error maps ----------------------------------------------------------------------

namespace {

void write_pgm16(const std::string& path, const std::vector<double>& vals, std::size_t height,
                 std::size_t width, double lo, double hi) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write graymap: " + path);
    os << "P5\n" << width << " " << height << "\n65535\n";
    const double span = hi - lo;
    std::vector<unsigned char> buf(vals.size() * 2);
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double unit = span > 0.0 ? (vals[i] - lo) / span : 0.0;
        const unsigned v = static_cast<unsigned>(std::lround(unit * 65535.0));
        buf[2 * i] = static_cast<unsigned char>((v >> 8) & 0xff);  // PGM is big-endian
        buf[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace

void export_error_maps(const Reconstructor& model, const Dataset& data,
                       const std::vector<std::size_t>& steps, std::size_t window,
                       const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory " + out_dir + ": " + ec.message());

    const std::size_t h = data.height, w = data.width;
    std::ofstream sidecar(out_dir + "/scales.txt", std::ios::trunc);
    if (!sidecar) throw IoError("cannot write sidecar in " + out_dir);
    sidecar << "# image min max [flat]\n";

    std::vector<FieldSnapshot> truth_frames, pred_frames, err_frames;
    for (std::size_t t : steps) {
        const Tensor pred3 = reconstruct_step(model, data, t, window);
        const Tensor pred = reshape(pred3, {h, w});
        const Tensor& truth = data.fields[t];
        std::vector<double> err(h * w);
        for (std::size_t i = 0; i < h * w; ++i) {
            err[i] = std::abs(pred.data()[i] - truth.data()[i]);
        }
        const Tensor err_t = Tensor::from({h, w}, err);

        char stem[32];
        std::snprintf(stem, sizeof stem, "step%05zu", t);
        const struct {
            const char* tag;
            const Tensor* img;
        } kinds[] = {{"truth", &truth}, {"pred", &pred}, {"err", &err_t}};
        for (const auto& k : kinds) {
            const auto& vals = k.img->data();
            double lo = vals[0], hi = vals[0];
            for (double v : vals) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            const std::string name = std::string(stem) + "_" + k.tag + ".pgm";
            write_pgm16(out_dir + "/" + name, vals, h, w, lo, hi);
            sidecar << name << " " << lo << " " << hi << (hi == lo ? " flat" : "") << "\n";
        }
        truth_frames.push_back({t, truth});
        pred_frames.push_back({t, pred});
        err_frames.push_back({t, err_t});
    }
    if (!sidecar) throw IoError("sidecar write failed in " + out_dir);
    write_archive(truth_frames, out_dir + "/truth.ffr1");
    write_archive(pred_frames, out_dir + "/pred.ffr1");
    write_archive(err_frames, out_dir + "/err.ffr1");
}

}  // namespace pfr
