#include "pfr/data.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "pfr/rng.hpp"

namespace pfr {

void SensorLayout::validate(std::size_t height, std::size_t width) const {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& [r, c] : positions) {
        if (r >= height || c >= width) {
            throw ConfigError("sensor (" + std::to_string(r) + "," + std::to_string(c) +
                              ") outside grid " + std::to_string(height) + "x" +
                              std::to_string(width));
        }
        if (!seen.insert({r, c}).second) {
            throw ConfigError("duplicate sensor (" + std::to_string(r) + "," + std::to_string(c) +
                              ")");
        }
    }
}

SensorLayout SensorLayout::uniform_grid(std::size_t height, std::size_t width, std::size_t rows,
                                        std::size_t cols) {
    SensorLayout layout;
    for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t r = (2 * i + 1) * height / (2 * rows);
        for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t c = (2 * j + 1) * width / (2 * cols);
            layout.positions.emplace_back(r, c);
        }
    }
    layout.validate(height, width);
    return layout;
}

SensorLayout SensorLayout::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open sensor layout: " + path);
    SensorLayout layout;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        long r = -1, c = -1;
        char comma = 0;
        ss >> r >> comma >> c;
        if (!ss || comma != ',' || r < 0 || c < 0) {
            throw FormatError("bad sensor line " + std::to_string(lineno) + " in " + path);
        }
        layout.positions.emplace_back(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    }
    return layout;
}

void SensorLayout::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write sensor layout: " + path);
    for (const auto& [r, c] : positions) os << r << "," << c << "\n";
    if (!os) throw IoError("write failed: " + path);
}

void VortexStreetConfig::validate() const {
    if (height < 2 || width < 2) throw ConfigError("grid must be at least 2x2");
    if (core_width <= 0.0) throw ConfigError("core_width must be positive");
    if (advection_speed <= 0.0) throw ConfigError("advection_speed must be positive");
    if (shedding_spacing <= 2.0 * core_width) {
        throw ConfigError("shedding_spacing must exceed twice the core width");
    }
    if (n_vortex < 1) throw ConfigError("need at least one vortex");
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
}

namespace {

/// Signed minimal horizontal distance on the periodic width.
double wrap_dx(double v, double width) {
    double dx = std::fmod(v, width);
    if (dx > 0.5 * width) dx -= width;
    if (dx <= -0.5 * width) dx += width;
    return dx;
}

struct Vortex {
    double row, col, sign;
};

std::vector<Vortex> vortex_set(const VortexStreetConfig& cfg) {
    // Integer phase offset keeps vortex centers on grid points at t = 0.
    Rng rng(cfg.seed);
    const double phase = std::floor(rng.uniform(0.0, static_cast<double>(cfg.width)));
    const double row_hi = std::floor(3.0 * static_cast<double>(cfg.height) / 8.0);
    const double row_lo = std::floor(5.0 * static_cast<double>(cfg.height) / 8.0);
    std::vector<Vortex> vs(cfg.n_vortex);
    for (std::size_t k = 0; k < cfg.n_vortex; ++k) {
        vs[k].col = phase + 0.5 * cfg.shedding_spacing * static_cast<double>(k);
        vs[k].row = (k % 2 == 0) ? row_hi : row_lo;
        vs[k].sign = (k % 2 == 0) ? 1.0 : -1.0;
    }
    return vs;
}

}  // namespace

double vortex_street_value(const VortexStreetConfig& cfg, double row, double col, double t) {
    const std::vector<Vortex> vs = vortex_set(cfg);
    const double inv2s2 = 1.0 / (2.0 * cfg.core_width * cfg.core_width);
    const double w = static_cast<double>(cfg.width);
    double sum = 0.0;
    for (const Vortex& v : vs) {
        const double dx = wrap_dx(col - v.col - cfg.advection_speed * t, w);
        const double dy = row - v.row;
        sum += v.sign * cfg.amplitude * std::exp(-(dx * dx + dy * dy) * inv2s2);
    }
    return sum;
}

std::vector<FieldSnapshot> generate_vortex_street(const VortexStreetConfig& cfg) {
    cfg.validate();
    const std::vector<Vortex> vs = vortex_set(cfg);
    const double inv2s2 = 1.0 / (2.0 * cfg.core_width * cfg.core_width);
    const double w = static_cast<double>(cfg.width);
    std::vector<FieldSnapshot> frames(cfg.total_steps);
    for (std::size_t t = 0; t < cfg.total_steps; ++t) {
        std::vector<double> field(cfg.height * cfg.width, 0.0);
        for (const Vortex& v : vs) {
            const double ct = v.col + cfg.advection_speed * static_cast<double>(t);
            for (std::size_t r = 0; r < cfg.height; ++r) {
                const double dy = static_cast<double>(r) - v.row;
                const double ey = std::exp(-dy * dy * inv2s2);
                double* rowp = field.data() + r * cfg.width;
                for (std::size_t c = 0; c < cfg.width; ++c) {
                    const double dx = wrap_dx(static_cast<double>(c) - ct, w);
                    rowp[c] += v.sign * cfg.amplitude * ey * std::exp(-dx * dx * inv2s2);
                }
            }
        }
        frames[t].t_index = t;
        frames[t].field = Tensor::from({cfg.height, cfg.width}, std::move(field));
    }
    return frames;
}

Tensor sample_sensors(const FieldSnapshot& snap, const SensorLayout& layout) {
    const Shape& s = snap.field.shape();
    layout.validate(s[0], s[1]);
    const auto& fd = snap.field.data();
    std::vector<double> out(layout.positions.size());
    for (std::size_t i = 0; i < layout.positions.size(); ++i) {
        const auto& [r, c] = layout.positions[i];
        out[i] = fd[r * s[1] + c];
    }
    return Tensor::from({layout.positions.size()}, std::move(out));
}

DatasetSplit make_split(std::size_t total_steps, std::size_t train_ratio,
                        std::size_t test_ratio) {
    if (train_ratio < 1 || test_ratio < 1) throw ConfigError("split ratios must be >= 1");
    const std::size_t parts = train_ratio + test_ratio;
    if (total_steps < parts || total_steps % parts != 0) {
        throw ConfigError("total steps " + std::to_string(total_steps) +
                          " not divisible by ratio sum " + std::to_string(parts));
    }
    const std::size_t unit = total_steps / parts;
    DatasetSplit split;
    split.train_begin = 0;
    split.train_end = unit * train_ratio;
    split.test_begin = split.train_end;
    split.test_end = total_steps;
    const std::size_t test_len = split.test_end - split.test_begin;
    if (test_len % 5 != 0) {
        throw ConfigError("test span " + std::to_string(test_len) +
                          " does not divide into five equal intervals");
    }
    const std::size_t step = test_len / 5;
    for (std::size_t i = 0; i < 5; ++i) {
        split.intervals.emplace_back(split.test_begin + i * step,
                                     split.test_begin + (i + 1) * step);
    }
    return split;
}

// ---- FFR1 archive -------------------------------------------------------------

namespace {
constexpr char kArchiveMagic[4] = {'F', 'F', 'R', '1'};
constexpr std::uint16_t kArchiveVersion = 1;
}  // namespace

void write_archive(const std::vector<FieldSnapshot>& snaps, const std::string& path) {
    if (snaps.empty()) throw ConfigError("cannot write an empty archive");
    const Shape shape = snaps.front().field.shape();
    if (shape.size() != 2) throw ShapeError("archive frames must be [H,W]");
    for (const FieldSnapshot& s : snaps) {
        if (s.field.shape() != shape) {
            throw ShapeError("inconsistent frame shapes: " + shape_str(shape) + " vs " +
                             shape_str(s.field.shape()));
        }
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    binio::write_bytes(os, kArchiveMagic, 4);
    binio::write_u16(os, kArchiveVersion);
    binio::write_u32(os, static_cast<std::uint32_t>(shape[0]));
    binio::write_u32(os, static_cast<std::uint32_t>(shape[1]));
    binio::write_u32(os, static_cast<std::uint32_t>(snaps.size()));
    for (const FieldSnapshot& s : snaps) binio::write_f64_block(os, s.field.data());
    os.flush();
    if (!os) throw IoError("write failed: " + path);
}

std::vector<FieldSnapshot> read_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    binio::read_bytes(is, magic, 4, "magic");
    if (std::string(magic, 4) != std::string(kArchiveMagic, 4)) {
        throw FormatError("bad archive magic in " + path);
    }
    const std::uint16_t version = binio::read_u16(is, "version");
    if (version != kArchiveVersion) {
        throw FormatError("unsupported archive version " + std::to_string(version));
    }
    const std::uint32_t h = binio::read_u32(is, "height");
    const std::uint32_t w = binio::read_u32(is, "width");
    const std::uint32_t count = binio::read_u32(is, "frame count");
    if (h == 0 || w == 0) throw FormatError("archive has a degenerate frame shape");
    std::vector<FieldSnapshot> snaps(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        snaps[t].t_index = t;
        snaps[t].field = Tensor::from(
            {h, w}, binio::read_f64_block(is, static_cast<std::size_t>(h) * w, "frame"));
    }
    return snaps;
}

}  // namespace pfr
