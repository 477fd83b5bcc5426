#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pfr/tensor.hpp"

namespace pfr {

/// One vorticity field frame on the grid.
struct FieldSnapshot {
    std::size_t t_index = 0;
    Tensor field;  // [H,W]
};

/// Sensor grid positions as (row, col) indices.
struct SensorLayout {
    std::vector<std::pair<std::size_t, std::size_t>> positions;

    std::size_t count() const { return positions.size(); }
    void validate(std::size_t height, std::size_t width) const;

    /// Centered regular rows x cols lattice via the even-spacing rule
    /// cell = floor((i + 0.5) * extent / count).
    static SensorLayout uniform_grid(std::size_t height, std::size_t width, std::size_t rows,
                                     std::size_t cols);

    /// Plain-text "row,col" lines, one sensor per line.
    static SensorLayout load(const std::string& path);
    void save(const std::string& path) const;
};

/// Synthetic von Karman-style street: alternating-sign Gaussian vortices on
/// two staggered rows, advected periodically along the width.
struct VortexStreetConfig {
    std::size_t height = 32;
    std::size_t width = 24;
    std::size_t n_vortex = 4;        // alternating-sign vortices, spaced spacing/2 apart
    double advection_speed = 0.25;   // cells per step
    double core_width = 1.6;         // sigma, cells
    double amplitude = 1.0;
    double shedding_spacing = 12.0;  // lambda, cells (one +/- pair per lambda)
    std::size_t total_steps = 1000;
    std::uint64_t seed = 0;

    void validate() const;  // sigma > 0, speed > 0, lambda > 2 sigma
};

/// Closed-form field value at grid point (row, col) and time t.
double vortex_street_value(const VortexStreetConfig& cfg, double row, double col, double t);

std::vector<FieldSnapshot> generate_vortex_street(const VortexStreetConfig& cfg);

/// Exact grid lookup of the sensor readings: -> Tensor [N_s].
Tensor sample_sensors(const FieldSnapshot& snap, const SensorLayout& layout);

/// Contiguous train/test ranges with the test range cut into five equal
/// evaluation intervals.
struct DatasetSplit {
    std::size_t train_begin = 0;
    std::size_t train_end = 0;  // exclusive
    std::size_t test_begin = 0;
    std::size_t test_end = 0;  // exclusive
    std::vector<std::pair<std::size_t, std::size_t>> intervals;  // five [begin,end) spans

    std::size_t train_len() const { return train_end - train_begin; }
    std::size_t test_len() const { return test_end - test_begin; }
};

/// Ratio split (default 4:1). The total must divide evenly by the ratio sum
/// and the test span by five; anything else is a configuration error.
DatasetSplit make_split(std::size_t total_steps, std::size_t train_ratio = 4,
                        std::size_t test_ratio = 1);

/// "FFR1" archive: magic, version u16, H u32, W u32, S u32, then S row-major
/// little-endian float64 frames. The header is exactly 18 bytes.
void write_archive(const std::vector<FieldSnapshot>& snaps, const std::string& path);
std::vector<FieldSnapshot> read_archive(const std::string& path);

}  // namespace pfr
