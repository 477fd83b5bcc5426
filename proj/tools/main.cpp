// Command-line front end: data generation, training, evaluation,
// reconstruction, ablation sweeps, and error-map export.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pfr/data.hpp"
#include "pfr/model.hpp"
#include "pfr/traineval.hpp"

namespace {

using namespace pfr;

struct ModelFlags {
    ModelConfig cfg;
    std::string activation = "silu";

    void attach(CLI::App* cmd) {
        cmd->add_option("--layers", cfg.n_layer, "block count");
        cmd->add_option("--feature-dim", cfg.feature_dim, "residual stream width M");
        cmd->add_option("--state-dim", cfg.state_dim, "state dimension N per channel");
        cmd->add_option("--fno-dim", cfg.fno_dim, "spectral lift width d");
        cmd->add_option("--fno-modes", cfg.fno_modes, "retained 1D modes m");
        cmd->add_option("--fno-layers", cfg.fno_layers, "1D operator layers T");
        cmd->add_option("--fno2d-layers", cfg.fno2d_layers, "2D operator layers");
        cmd->add_option("--modes-h", cfg.modes_h, "retained 2D row modes");
        cmd->add_option("--modes-w", cfg.modes_w, "retained 2D column modes");
        cmd->add_option("--conv-width", cfg.conv_width, "causal conv kernel width");
        cmd->add_flag("--no-fno1d", "disable the per-step spectral branch");
        cmd->add_flag("--no-fno2d", "disable the 2D output refiner");
        cmd->add_flag("--no-fno-bias", "drop bias terms in the spectral stacks");
        cmd->add_flag("--pre-norm", "enable RMS pre-normalization in each block");
        cmd->add_option("--activation", activation, "spectral activation: silu|gelu|relu")
            ->check(CLI::IsMember({"silu", "gelu", "relu"}));
    }

    ModelConfig resolve(const CLI::App* cmd, const Dataset& data, std::uint64_t seed) {
        cfg.height = data.height;
        cfg.width = data.width;
        cfg.channels = 1;
        cfg.sensor_count = data.layout.count();
        cfg.seed = seed;
        cfg.use_fno1d = cmd->count("--no-fno1d") == 0;
        cfg.use_fno2d = cmd->count("--no-fno2d") == 0;
        cfg.fno_bias = cmd->count("--no-fno-bias") == 0;
        cfg.pre_norm = cmd->count("--pre-norm") > 0;
        if (activation == "gelu") cfg.fno_activation = Activation::Gelu;
        else if (activation == "relu") cfg.fno_activation = Activation::Relu;
        else cfg.fno_activation = Activation::Silu;
        cfg.validate();
        return cfg;
    }
};

struct TrainFlags {
    TrainConfig cfg;

    void attach(CLI::App* cmd) {
        cmd->add_option("--epochs", cfg.epochs, "training epochs");
        cmd->add_option("--batch", cfg.batch, "windows per optimizer step");
        cmd->add_option("--window", cfg.window, "training window length L");
        cmd->add_option("--lr", cfg.lr, "learning rate");
        cmd->add_option("--beta1", cfg.beta1, "first-moment decay");
        cmd->add_option("--beta2", cfg.beta2, "second-moment decay");
        cmd->add_option("--adam-eps", cfg.eps, "optimizer epsilon");
        cmd->add_option("--clip-norm", cfg.clip_norm, "global gradient-norm clip (0 = off)");
        cmd->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
        cmd->add_option("--windows-per-epoch", cfg.windows_per_epoch,
                        "windows sampled per epoch (0 = 4*floor(train/L))");
        cmd->add_option("--checkpoint-every", cfg.checkpoint_every,
                        "write the checkpoint every this many epochs");
    }
};

Dataset load_dataset(const std::string& data_path, const std::string& layout_path) {
    const SensorLayout layout = SensorLayout::load(layout_path);
    return Dataset::load(data_path, layout);
}

/// Flat key=value config: keys are the subcommand's own flag names without
/// dashes. Flags already set on the command line keep their values.
void apply_flat_config(CLI::App* cmd, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("bad line " + std::to_string(lineno) + " in " + path +
                              " (expected key=value)");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (!opt || key == "config") {
            throw ConfigError("unknown config key '" + key + "' in " + path);
        }
        if (opt->count() > 0) continue;  // the command line wins
        opt->add_result(value);
        opt->run_callback();
    }
}

std::vector<std::size_t> parse_steps(const std::string& expr) {
    std::vector<std::size_t> steps;
    std::stringstream ss(expr);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto dash = item.find('-');
        if (dash == std::string::npos) {
            steps.push_back(std::stoul(item));
        } else {
            const std::size_t lo = std::stoul(item.substr(0, dash));
            const std::size_t hi = std::stoul(item.substr(dash + 1));
            if (hi < lo) throw ConfigError("bad step range: " + item);
            for (std::size_t t = lo; t <= hi; ++t) steps.push_back(t);
        }
    }
    if (steps.empty()) throw ConfigError("no steps given");
    return steps;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os << text;
    if (!os) throw IoError("write failed: " + path);
}

int run(int argc, char** argv) {
    CLI::App app{"time-series physical field reconstruction from sparse sensors"};
    app.require_subcommand(1);

    // Every subcommand accepts a flat key=value config file whose keys are its
    // own flag names (without dashes); explicit command-line flags win.
    std::string config_path;
    auto with_config = [&config_path](CLI::App* cmd) {
        cmd->add_option("--config", config_path,
                        "flat key=value config file; command line overrides");
        return cmd;
    };

    // ---- generate-data ----
    auto* gen = with_config(app.add_subcommand("generate-data", "synthesize a vortex-street archive"));
    VortexStreetConfig vcfg;
    std::string gen_out = "fields.ffr1";
    std::string gen_layout = "sensors.txt";
    std::size_t sensor_rows = 4, sensor_cols = 4;
    gen->add_option("--out", gen_out, "output FFR1 archive");
    gen->add_option("--layout-out", gen_layout, "output sensor layout (row,col lines)");
    gen->add_option("--height", vcfg.height, "grid rows");
    gen->add_option("--width", vcfg.width, "grid columns");
    gen->add_option("--steps", vcfg.total_steps, "snapshot count");
    gen->add_option("--vortices", vcfg.n_vortex, "vortex count (alternating signs)");
    gen->add_option("--speed", vcfg.advection_speed, "advection speed, cells/step");
    gen->add_option("--sigma", vcfg.core_width, "vortex core width, cells");
    gen->add_option("--amplitude", vcfg.amplitude, "peak vorticity");
    gen->add_option("--spacing", vcfg.shedding_spacing, "distance between same-sign vortices");
    gen->add_option("--seed", vcfg.seed, "generator seed");
    gen->add_option("--sensor-rows", sensor_rows, "sensor lattice rows");
    gen->add_option("--sensor-cols", sensor_cols, "sensor lattice columns");

    // ---- train ----
    auto* tr = with_config(app.add_subcommand("train", "train a reconstruction model"));
    std::string tr_data, tr_layout, tr_ckpt = "model.frmb", tr_curve, tr_report;
    std::uint64_t tr_seed = 0;
    std::size_t tr_train_ratio = 4, tr_test_ratio = 1;
    ModelFlags tr_model;
    TrainFlags tr_train;
    tr->add_option("--data", tr_data, "FFR1 archive")->required();
    tr->add_option("--layout", tr_layout, "sensor layout file")->required();
    tr->add_option("--checkpoint", tr_ckpt, "output checkpoint path");
    tr->add_option("--loss-curve", tr_curve, "write per-step losses as CSV");
    tr->add_option("--report", tr_report, "write the final evaluation CSV");
    tr->add_option("--seed", tr_seed, "seed for init and window sampling");
    tr->add_option("--train-ratio", tr_train_ratio, "train split weight");
    tr->add_option("--test-ratio", tr_test_ratio, "test split weight");
    tr_model.attach(tr);
    tr_train.attach(tr);

    // ---- evaluate ----
    auto* ev = with_config(app.add_subcommand("evaluate", "evaluate a checkpoint on the test range"));
    std::string ev_data, ev_layout, ev_ckpt, ev_report;
    std::size_t ev_window = 64, ev_train_ratio = 4, ev_test_ratio = 1;
    bool ev_baselines = false;
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--layout", ev_layout)->required();
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--report", ev_report, "write the interval CSV here");
    ev->add_option("--window", ev_window, "causal window length");
    ev->add_option("--train-ratio", ev_train_ratio);
    ev->add_option("--test-ratio", ev_test_ratio);
    ev->add_flag("--baselines", ev_baselines, "also report the trivial baselines");

    // ---- reconstruct ----
    auto* rc = with_config(app.add_subcommand("reconstruct", "write reconstructed fields for given steps"));
    std::string rc_data, rc_layout, rc_ckpt, rc_steps, rc_out = "reconstruction.ffr1";
    std::size_t rc_window = 64;
    rc->add_option("--data", rc_data)->required();
    rc->add_option("--layout", rc_layout)->required();
    rc->add_option("--checkpoint", rc_ckpt)->required();
    rc->add_option("--steps", rc_steps, "e.g. 800-999 or 800,810,820")->required();
    rc->add_option("--out", rc_out, "output FFR1 archive");
    rc->add_option("--window", rc_window);

    // ---- ablate ----
    auto* ab = with_config(app.add_subcommand("ablate", "train the ablation grid with a shared budget"));
    std::string ab_data, ab_layout, ab_mode = "all", ab_csv = "ablation.csv", ab_table;
    std::uint64_t ab_seed = 0;
    std::size_t ab_train_ratio = 4, ab_test_ratio = 1;
    ModelFlags ab_model;
    TrainFlags ab_train;
    ab->add_option("--data", ab_data)->required();
    ab->add_option("--layout", ab_layout)->required();
    ab->add_option("--mode", ab_mode, "grid|fno|all")->check(CLI::IsMember({"grid", "fno", "all"}));
    ab->add_option("--out-csv", ab_csv, "machine-readable rows");
    ab->add_option("--out-table", ab_table, "aligned text tables");
    ab->add_option("--seed", ab_seed);
    ab->add_option("--train-ratio", ab_train_ratio);
    ab->add_option("--test-ratio", ab_test_ratio);
    ab_model.attach(ab);
    ab_train.attach(ab);

    // ---- export-error-maps ----
    auto* em = with_config(app.add_subcommand(
        "export-error-maps", "write truth/reconstruction/|error| maps for given steps"));
    std::string em_data, em_layout, em_ckpt, em_steps, em_dir = "error_maps";
    std::size_t em_window = 64;
    em->add_option("--data", em_data)->required();
    em->add_option("--layout", em_layout)->required();
    em->add_option("--checkpoint", em_ckpt)->required();
    em->add_option("--steps", em_steps)->required();
    em->add_option("--out-dir", em_dir);
    em->add_option("--window", em_window);

    CLI11_PARSE(app, argc, argv);

    if (!config_path.empty()) {
        for (CLI::App* cmd : {gen, tr, ev, rc, ab, em}) {
            if (cmd->parsed()) apply_flat_config(cmd, config_path);
        }
    }

    if (gen->parsed()) {
        vcfg.validate();
        const auto frames = generate_vortex_street(vcfg);
        write_archive(frames, gen_out);
        const SensorLayout layout =
            SensorLayout::uniform_grid(vcfg.height, vcfg.width, sensor_rows, sensor_cols);
        layout.save(gen_layout);
        std::cout << "wrote " << frames.size() << " frames (" << vcfg.height << "x" << vcfg.width
                  << ") to " << gen_out << " and " << layout.count() << " sensors to "
                  << gen_layout << "\n";
        return 0;
    }

    if (tr->parsed()) {
        Dataset data = load_dataset(tr_data, tr_layout);
        const DatasetSplit split = make_split(data.steps(), tr_train_ratio, tr_test_ratio);
        const ModelConfig mcfg = tr_model.resolve(tr, data, tr_seed);
        tr_train.cfg.seed = tr_seed;
        Reconstructor model(mcfg);
        std::cout << "training " << parameter_count(mcfg) << " parameters\n";
        const TrainResult result = train(model, data, split, tr_train.cfg, tr_ckpt, &std::cout);
        if (!tr_curve.empty()) {
            std::ostringstream os;
            os << "step,train_mae\n";
            for (std::size_t i = 0; i < result.step_losses.size(); ++i) {
                os << i << "," << result.step_losses[i] << "\n";
            }
            write_text_file(tr_curve, os.str());
        }
        const EvalReport report = evaluate(model, data, split, tr_train.cfg.window);
        std::cout << format_eval_report(report);
        if (!tr_report.empty()) {
            std::ostringstream os;
            write_eval_report_csv(report, os);
            write_text_file(tr_report, os.str());
        }
        std::cout << "checkpoint written to " << tr_ckpt << "\n";
        return 0;
    }

    if (ev->parsed()) {
        Dataset data = load_dataset(ev_data, ev_layout);
        const DatasetSplit split = make_split(data.steps(), ev_train_ratio, ev_test_ratio);
        const Checkpoint ckpt = load_checkpoint(ev_ckpt);
        Reconstructor model(ckpt.config);
        restore(model, ckpt);
        const EvalReport report = evaluate(model, data, split, ev_window);
        std::cout << format_eval_report(report);
        if (ev_baselines) {
            std::cout << "persistence baseline MAE " << persistence_baseline_mae(data, split)
                      << "\nlinear baseline MAE      " << linear_baseline_mae(data, split)
                      << "\n";
        }
        if (!ev_report.empty()) {
            std::ostringstream os;
            write_eval_report_csv(report, os);
            write_text_file(ev_report, os.str());
        }
        return 0;
    }

    if (rc->parsed()) {
        Dataset data = load_dataset(rc_data, rc_layout);
        const Checkpoint ckpt = load_checkpoint(rc_ckpt);
        Reconstructor model(ckpt.config);
        restore(model, ckpt);
        std::vector<FieldSnapshot> frames;
        for (std::size_t t : parse_steps(rc_steps)) {
            const Tensor pred = reconstruct_step(model, data, t, rc_window);
            frames.push_back({t, reshape(pred, {data.height, data.width})});
        }
        write_archive(frames, rc_out);
        std::cout << "wrote " << frames.size() << " reconstructed frames to " << rc_out << "\n";
        return 0;
    }

    if (ab->parsed()) {
        Dataset data = load_dataset(ab_data, ab_layout);
        const DatasetSplit split = make_split(data.steps(), ab_train_ratio, ab_test_ratio);
        const ModelConfig base = ab_model.resolve(ab, data, ab_seed);
        ab_train.cfg.seed = ab_seed;
        std::vector<AblationRow> grid, fno;
        if (ab_mode == "grid" || ab_mode == "all") {
            grid = ablate_depth_grid(base, ab_train.cfg, data, split, &std::cout);
        }
        if (ab_mode == "fno" || ab_mode == "all") {
            fno = ablate_fno(base, ab_train.cfg, data, split, &std::cout);
        }
        std::vector<AblationRow> rows = grid;
        rows.insert(rows.end(), fno.begin(), fno.end());
        {
            std::ostringstream os;
            write_ablation_csv(rows, os);
            write_text_file(ab_csv, os.str());
        }
        const std::string tables = format_ablation_tables(grid, fno);
        std::cout << tables;
        if (!ab_table.empty()) write_text_file(ab_table, tables);
        return 0;
    }

    if (em->parsed()) {
        Dataset data = load_dataset(em_data, em_layout);
        const Checkpoint ckpt = load_checkpoint(em_ckpt);
        Reconstructor model(ckpt.config);
        restore(model, ckpt);
        export_error_maps(model, data, parse_steps(em_steps), em_window, em_dir);
        std::cout << "error maps written to " << em_dir << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const pfr::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const pfr::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const pfr::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const pfr::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const pfr::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
