#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <vector>

#include "doctest.h"
#include "pfr/data.hpp"
#include "test_support.hpp"

using namespace pfr;
using namespace testing_support;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& p) : path(p) {}
    ~TempFile() { std::remove(path.c_str()); }
};

VortexStreetConfig toy_cfg() {
    VortexStreetConfig cfg;
    cfg.height = 32;
    cfg.width = 24;
    cfg.n_vortex = 6;
    cfg.advection_speed = 0.25;
    cfg.core_width = 1.6;
    cfg.amplitude = 1.0;
    cfg.shedding_spacing = 8.0;
    cfg.total_steps = 100;
    cfg.seed = 3;
    return cfg;
}

/// Independent evaluation of the generator's closed form.
double oracle_value(const VortexStreetConfig& cfg, double row, double col, double t) {
    // Mirror of the documented construction: integer phase from the seed,
    // rows at floor(3H/8) and floor(5H/8), columns spaced lambda/2.
    Rng rng(cfg.seed);
    const double phase = std::floor(rng.uniform(0.0, static_cast<double>(cfg.width)));
    double sum = 0.0;
    for (std::size_t k = 0; k < cfg.n_vortex; ++k) {
        const double vrow = (k % 2 == 0) ? std::floor(3.0 * cfg.height / 8.0)
                                         : std::floor(5.0 * cfg.height / 8.0);
        const double vcol = phase + 0.5 * cfg.shedding_spacing * static_cast<double>(k);
        const double sign = (k % 2 == 0) ? 1.0 : -1.0;
        double dx = std::fmod(col - vcol - cfg.advection_speed * t, cfg.width);
        if (dx > 0.5 * cfg.width) dx -= cfg.width;
        if (dx <= -0.5 * cfg.width) dx += cfg.width;
        const double dy = row - vrow;
        sum += sign * cfg.amplitude *
               std::exp(-(dx * dx + dy * dy) / (2.0 * cfg.core_width * cfg.core_width));
    }
    return sum;
}

}  // namespace

TEST_CASE("single vortex: sensor at its center reads exactly the amplitude") {
    VortexStreetConfig cfg = toy_cfg();
    cfg.n_vortex = 1;
    cfg.amplitude = 0.8125;
    const auto frames = generate_vortex_street(cfg);
    // Locate the peak cell at t=0; the center sits on a grid point.
    const auto& f = frames[0].field;
    double best = -1.0;
    std::pair<std::size_t, std::size_t> at{0, 0};
    for (std::size_t r = 0; r < cfg.height; ++r) {
        for (std::size_t c = 0; c < cfg.width; ++c) {
            const double v = f.data()[r * cfg.width + c];
            if (v > best) {
                best = v;
                at = {r, c};
            }
        }
    }
    CHECK(best == cfg.amplitude);
    SensorLayout layout;
    layout.positions = {at};
    CHECK(sample_sensors(frames[0], layout).data()[0] == cfg.amplitude);
}

TEST_CASE("fields repeat after one advection period, bitwise") {
    VortexStreetConfig cfg = toy_cfg();
    cfg.total_steps = 100;
    const std::size_t period = static_cast<std::size_t>(cfg.width / cfg.advection_speed);  // 96
    REQUIRE(period < cfg.total_steps);
    const auto frames = generate_vortex_street(cfg);
    for (std::size_t i = 0; i < cfg.height * cfg.width; ++i) {
        CHECK(frames[0].field.data()[i] == frames[period].field.data()[i]);
    }
}

TEST_CASE("sensor readings match the closed-form oracle at 100 random points") {
    const VortexStreetConfig cfg = toy_cfg();
    const auto frames = generate_vortex_street(cfg);
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t r = rng.below(cfg.height);
        const std::size_t c = rng.below(cfg.width);
        const std::size_t t = rng.below(cfg.total_steps);
        const double got = frames[t].field.data()[r * cfg.width + c];
        const double want =
            oracle_value(cfg, static_cast<double>(r), static_cast<double>(c),
                         static_cast<double>(t));
        CHECK(got == doctest::Approx(want).epsilon(1e-13));
    }
}

TEST_CASE("discrete Laplacian is bounded by 4a/sigma^2") {
    const VortexStreetConfig cfg = toy_cfg();
    const auto frames = generate_vortex_street(cfg);
    const double bound = 4.0 * cfg.amplitude / (cfg.core_width * cfg.core_width);
    double worst = 0.0;
    for (std::size_t t = 0; t < frames.size(); t += 17) {
        const auto& f = frames[t].field.data();
        for (std::size_t r = 1; r + 1 < cfg.height; ++r) {
            for (std::size_t c = 1; c + 1 < cfg.width; ++c) {
                const double lap = f[(r + 1) * cfg.width + c] + f[(r - 1) * cfg.width + c] +
                                   f[r * cfg.width + c + 1] + f[r * cfg.width + c - 1] -
                                   4.0 * f[r * cfg.width + c];
                worst = std::max(worst, std::abs(lap));
            }
        }
    }
    CHECK(worst <= bound);
}

TEST_CASE("generator determinism: same config and seed produce identical archives") {
    const VortexStreetConfig cfg = toy_cfg();
    const auto a = generate_vortex_street(cfg);
    const auto b = generate_vortex_street(cfg);
    TempFile fa("gen_a.ffr1"), fb("gen_b.ffr1");
    write_archive(a, fa.path);
    write_archive(b, fb.path);
    std::ifstream ia(fa.path, std::ios::binary), ib(fb.path, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(ia)), std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(ib)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
}

TEST_CASE("sensor sampling basics and the projection property") {
    const Tensor uniform = Tensor::full({4, 5}, 2.5);
    FieldSnapshot snap{0, uniform};
    SensorLayout layout;
    layout.positions = {{0, 0}, {1, 3}, {3, 4}};
    const Tensor x = sample_sensors(snap, layout);
    for (double v : x.data()) CHECK(v == 2.5);

    Rng rng(5);
    FieldSnapshot snap2{0, rand_tensor(rng, {4, 5})};
    const Tensor x2 = sample_sensors(snap2, layout);
    CHECK(x2.data()[1] == snap2.field.data()[1 * 5 + 3]);

    // Writing the readings back and resampling reproduces the readings.
    std::vector<double> back(4 * 5, 0.0);
    for (std::size_t i = 0; i < layout.positions.size(); ++i) {
        back[layout.positions[i].first * 5 + layout.positions[i].second] = x2.data()[i];
    }
    const Tensor x3 = sample_sensors({0, Tensor::from({4, 5}, back)}, layout);
    for (std::size_t i = 0; i < 3; ++i) CHECK(x3.data()[i] == x2.data()[i]);

    SensorLayout bad;
    bad.positions = {{4, 0}};
    CHECK_THROWS_AS(sample_sensors(snap, bad), ConfigError);
}

TEST_CASE("uniform 4x4 layout on the 32x24 grid matches the hand-enumerated list") {
    const SensorLayout layout = SensorLayout::uniform_grid(32, 24, 4, 4);
    const std::vector<std::size_t> rows = {4, 12, 20, 28};
    const std::vector<std::size_t> cols = {3, 9, 15, 21};
    REQUIRE(layout.positions.size() == 16);
    std::size_t i = 0;
    for (std::size_t r : rows) {
        for (std::size_t c : cols) {
            CHECK(layout.positions[i].first == r);
            CHECK(layout.positions[i].second == c);
            ++i;
        }
    }
}

TEST_CASE("sensor layout save/load round-trip") {
    const SensorLayout layout = SensorLayout::uniform_grid(32, 24, 4, 4);
    TempFile f("layout.txt");
    layout.save(f.path);
    const SensorLayout loaded = SensorLayout::load(f.path);
    CHECK(loaded.positions == layout.positions);
}

TEST_CASE("make_split arithmetic, properties, and failure modes") {
    const DatasetSplit s1 = make_split(5000);
    CHECK(s1.train_begin == 0);
    CHECK(s1.train_end == 4000);
    CHECK(s1.test_begin == 4000);
    CHECK(s1.test_end == 5000);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(s1.intervals[i].first == 4000 + i * 200);
        CHECK(s1.intervals[i].second == 4000 + (i + 1) * 200);
    }

    const DatasetSplit s2 = make_split(500);
    CHECK(s2.train_end == 400);
    CHECK(s2.test_len() == 100);

    // Intervals tile the test range exactly and are pairwise disjoint.
    std::size_t covered = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        covered += s2.intervals[i].second - s2.intervals[i].first;
        if (i > 0) CHECK(s2.intervals[i].first == s2.intervals[i - 1].second);
    }
    CHECK(covered == s2.test_len());

    CHECK_THROWS_AS(make_split(501), ConfigError);
    CHECK_THROWS_AS(make_split(3), ConfigError);
}

TEST_CASE("archive round-trip is bitwise and the header is exactly 18 bytes") {
    Rng rng(7);
    std::vector<FieldSnapshot> snaps(100);
    for (std::size_t t = 0; t < snaps.size(); ++t) {
        snaps[t] = {t, rand_tensor(rng, {32, 24})};
    }
    TempFile f("frames.ffr1");
    write_archive(snaps, f.path);

    std::ifstream is(f.path, std::ios::binary);
    const std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(all.size() == 18 + 100 * 32 * 24 * 8);

    const auto loaded = read_archive(f.path);
    REQUIRE(loaded.size() == snaps.size());
    for (std::size_t t = 0; t < snaps.size(); ++t) {
        for (std::size_t i = 0; i < 32 * 24; ++i) {
            CHECK(loaded[t].field.data()[i] == snaps[t].field.data()[i]);
        }
    }
}

TEST_CASE("archive error paths: bad magic and truncation are distinct") {
    Rng rng(9);
    std::vector<FieldSnapshot> snaps = {{0, rand_tensor(rng, {4, 4})}};
    TempFile f("bad.ffr1");
    write_archive(snaps, f.path);
    {
        std::fstream fs(f.path, std::ios::binary | std::ios::in | std::ios::out);
        fs.write("NOPE", 4);
    }
    try {
        read_archive(f.path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }

    write_archive(snaps, f.path);
    {
        std::ifstream in(f.path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
        out.write(all.data(), static_cast<std::streamsize>(all.size() - 9));
    }
    try {
        read_archive(f.path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }

    // Inconsistent frame shapes are rejected at write time.
    std::vector<FieldSnapshot> mixed = {{0, Tensor::zeros({4, 4})}, {1, Tensor::zeros({4, 5})}};
    CHECK_THROWS_AS(write_archive(mixed, f.path), ShapeError);
}

TEST_CASE("generator config validation") {
    VortexStreetConfig cfg = toy_cfg();
    cfg.core_width = 0.0;
    CHECK_THROWS_AS(generate_vortex_street(cfg), ConfigError);
    cfg = toy_cfg();
    cfg.shedding_spacing = 2.0;  // <= 2 sigma
    CHECK_THROWS_AS(generate_vortex_street(cfg), ConfigError);
    cfg = toy_cfg();
    cfg.advection_speed = 0.0;
    CHECK_THROWS_AS(generate_vortex_street(cfg), ConfigError);
}
