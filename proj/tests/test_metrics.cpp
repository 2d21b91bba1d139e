#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "anchor/metrics.hpp"
#include "test_util.hpp"

using namespace anchor;

namespace {

AccuracyMatrix matrix_from(const std::vector<std::vector<double>>& rows) {
    AccuracyMatrix m;
    for (const auto& r : rows) m.append_stage(r);
    return m;
}

// Independent brute-force recomputation of both metrics, written as the
// plainest possible double loop over the definition.
double brute_average_accuracy(const AccuracyMatrix& m) {
    const auto& last = m.acc.back();
    double s = 0.0;
    for (double a : last) s += a;
    return s / static_cast<double>(last.size());
}

double brute_average_forgetting(const AccuracyMatrix& m) {
    const std::size_t stages = m.acc.size();
    const std::size_t tasks = m.acc.back().size();
    double total = 0.0;
    for (std::size_t t = 0; t < tasks; ++t) {
        double peak = 0.0;
        for (std::size_t s = 0; s < stages; ++s) {
            if (t < m.acc[s].size() && m.acc[s][t] > peak) peak = m.acc[s][t];
        }
        total += peak - m.acc[stages - 1][t];
    }
    return total / static_cast<double>(tasks);
}

}  // namespace

TEST_CASE("average_accuracy: mean of the final row") {
    const AccuracyMatrix m = matrix_from({{0.9}, {0.6, 0.8}});
    CHECK(average_accuracy(m) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(average_accuracy(matrix_from({{0.35}})) == 0.35);
    const AccuracyMatrix flat = matrix_from({{0.5}, {0.5, 0.5}, {0.5, 0.5, 0.5}});
    CHECK(average_accuracy(flat) == 0.5);
    CHECK_THROWS_AS((void)average_accuracy(AccuracyMatrix{}), std::invalid_argument);
}

TEST_CASE("average_forgetting: peak minus final") {
    // Task-0 column (0.9, 0.7, 0.8): forgetting 0.1.
    const AccuracyMatrix m = matrix_from({{0.9}, {0.7, 0.95}, {0.8, 0.9, 1.0}});
    const auto per_task = per_task_forgetting(m);
    REQUIRE(per_task.size() == 3);
    CHECK(per_task[0] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(per_task[1] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(per_task[2] == 0.0);  // first seen at the last stage
    CHECK(average_forgetting(m) == doctest::Approx(0.05).epsilon(1e-12));

    const AccuracyMatrix monotone = matrix_from({{0.5}, {0.6, 0.4}, {0.7, 0.5, 0.2}});
    CHECK(average_forgetting(monotone) == 0.0);
    CHECK(average_forgetting(matrix_from({{0.9}})) == 0.0);
}

TEST_CASE("average_forgetting is non-negative and zero iff final rows are maxima") {
    Rng rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t stages = 1 + rng.index(6);
        std::vector<std::vector<double>> rows;
        for (std::size_t s = 0; s < stages; ++s) {
            std::vector<double> row(s + 1);
            for (double& v : row) v = rng.uniform();
            rows.push_back(row);
        }
        const AccuracyMatrix m = matrix_from(rows);
        const double f = average_forgetting(m);
        CHECK(f >= 0.0);
        bool final_is_peak = true;
        for (std::size_t t = 0; t < stages; ++t) {
            for (std::size_t s = t; s < stages; ++s) {
                if (m.acc[s][t] > m.acc[stages - 1][t]) final_is_peak = false;
            }
        }
        CHECK((f == 0.0) == final_is_peak);
    }
}

TEST_CASE("metrics match an independent brute-force recomputation exactly") {
    Rng rng(909);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t stages = 1 + rng.index(8);
        std::vector<std::vector<double>> rows;
        for (std::size_t s = 0; s < stages; ++s) {
            std::vector<double> row(s + 1);
            for (double& v : row) v = rng.uniform();
            rows.push_back(row);
        }
        const AccuracyMatrix m = matrix_from(rows);
        CHECK(average_accuracy(m) == brute_average_accuracy(m));
        CHECK(average_forgetting(m) == brute_average_forgetting(m));
    }
}

TEST_CASE("accuracy matrix validation and CSV emission") {
    AccuracyMatrix m;
    m.append_stage({0.5});
    CHECK_THROWS_AS(m.append_stage({0.5}), std::invalid_argument);       // wrong width
    CHECK_THROWS_AS(m.append_stage({0.5, 1.5}), std::invalid_argument);  // out of range
    m.append_stage({0.25, 1.0});

    std::ostringstream csv;
    write_accuracy_csv(csv, m);
    CHECK(csv.str() == "stage,task_0,task_1\n0,0.5,\n1,0.25,1\n");
}

TEST_CASE("cka: self-similarity, symmetry, scaling") {
    Rng rng(5150);
    const Tensor x = anchor_test::random_batch(12, 5, rng);
    const Tensor y = anchor_test::random_batch(12, 7, rng);

    CHECK(cka(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cka(x, y) == doctest::Approx(cka(y, x)).epsilon(1e-12));

    Tensor x2 = x;
    for (double& v : x2.data()) v *= 2.0;
    CHECK(cka(x2, y) == doctest::Approx(cka(x, y)).epsilon(1e-12));

    const double value = cka(x, y);
    CHECK(value >= 0.0);
    CHECK(value <= 1.0);
}

TEST_CASE("cka: hand-computed 3x2 oracle") {
    Tensor x(3, 2);
    x(0, 0) = 1.0;  x(0, 1) = 2.0;
    x(1, 0) = 0.0;  x(1, 1) = -1.0;
    x(2, 0) = 2.0;  x(2, 1) = 0.5;
    Tensor y(3, 2);
    y(0, 0) = 0.5;  y(0, 1) = 1.0;
    y(1, 0) = -1.0; y(1, 1) = 0.0;
    y(2, 0) = 0.25; y(2, 1) = 2.0;

    // Independent direct computation: center columns, form the three Gram
    // matrices explicitly, take Frobenius norms.
    double xc[3][2], yc[3][2];
    for (int j = 0; j < 2; ++j) {
        double mx = 0.0, my = 0.0;
        for (int i = 0; i < 3; ++i) {
            mx += x(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
            my += y(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        }
        mx /= 3.0;
        my /= 3.0;
        for (int i = 0; i < 3; ++i) {
            xc[i][j] = x(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) - mx;
            yc[i][j] = y(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) - my;
        }
    }
    double xty[2][2] = {{0, 0}, {0, 0}}, xtx[2][2] = {{0, 0}, {0, 0}}, yty[2][2] = {{0, 0}, {0, 0}};
    for (int p = 0; p < 2; ++p) {
        for (int q = 0; q < 2; ++q) {
            for (int i = 0; i < 3; ++i) {
                xty[p][q] += xc[i][p] * yc[i][q];
                xtx[p][q] += xc[i][p] * xc[i][q];
                yty[p][q] += yc[i][p] * yc[i][q];
            }
        }
    }
    auto fro2 = [](double m[2][2]) {
        return m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1];
    };
    const double oracle = fro2(xty) / (std::sqrt(fro2(xtx)) * std::sqrt(fro2(yty)));

    CHECK(cka(x, y) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("cka: invariance under column-orthogonal transforms") {
    Rng rng(88);
    const Tensor x = anchor_test::random_batch(10, 2, rng);
    const Tensor y = anchor_test::random_batch(10, 3, rng);
    const double angle = 0.7;
    Tensor x_rot(10, 2);
    for (std::size_t i = 0; i < 10; ++i) {
        x_rot(i, 0) = std::cos(angle) * x(i, 0) - std::sin(angle) * x(i, 1);
        x_rot(i, 1) = std::sin(angle) * x(i, 0) + std::cos(angle) * x(i, 1);
    }
    CHECK(cka(x_rot, y) == doctest::Approx(cka(x, y)).epsilon(1e-10));
}

TEST_CASE("cka: degenerate input reports the undefined sentinel") {
    Tensor constant(4, 2);
    for (double& v : constant.data()) v = 3.0;
    Rng rng(3);
    const Tensor y = anchor_test::random_batch(4, 2, rng);
    CHECK(std::isnan(cka(constant, y)));
    CHECK(std::isnan(cka(y, constant)));
}

TEST_CASE("cka: input validation") {
    Tensor a(3, 2), b(4, 2), tiny(1, 2);
    CHECK_THROWS_AS((void)cka(a, b), std::invalid_argument);
    CHECK_THROWS_AS((void)cka(tiny, tiny), std::invalid_argument);
}

TEST_CASE("cka_profile: identical nets give all ones") {
    NetConfig cfg;
    cfg.input_dim = 6;
    cfg.hidden = {8, 7};
    cfg.head_classes = {3};
    cfg.seed = 12;
    MultiHeadNet net(cfg);
    Rng rng(71);
    const Tensor probe = anchor_test::random_batch(20, 6, rng);
    const auto profile = cka_profile(net, net, probe);
    REQUIRE(profile.size() == net.trunk_depth());
    for (double v : profile) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cka_profile: re-randomizing only the last trunk layer") {
    NetConfig cfg;
    cfg.input_dim = 6;
    cfg.hidden = {10, 9};
    cfg.head_classes = {3};
    cfg.seed = 21;
    MultiHeadNet ref(cfg);
    MultiHeadNet other = ref;

    // Scramble the deepest trunk layer's weights only.
    const LayerMap map = other.layer_map();
    ParamVector p = other.params();
    Rng rng(5005);
    for (const auto& seg : map.segments) {
        if (seg.layer_id == 1) {
            for (std::size_t k = seg.begin; k < seg.end; ++k) p[k] = rng.gaussian();
        }
    }
    other.set_params(p);

    Rng probe_rng(31);
    const Tensor probe = anchor_test::random_batch(24, 6, probe_rng);
    const auto profile = cka_profile(ref, other, probe);
    REQUIRE(profile.size() == 2);
    CHECK(profile[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(profile[1] < 0.999);

    NetConfig narrower = cfg;
    narrower.hidden = {10, 8};
    MultiHeadNet mismatched(narrower);
    CHECK_THROWS_AS((void)cka_profile(ref, mismatched, probe), std::invalid_argument);
}
