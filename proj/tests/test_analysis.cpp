#include <algorithm>
#include <cmath>
#include <filesystem>

#include "core/analysis.hpp"
#include "core/image_io.hpp"
#include "core/rng.hpp"
#include "core/sha256.hpp"
#include "core/trainer.hpp"
#include "doctest.h"

using namespace preview;
using namespace preview::analysis;

namespace {

std::vector<std::vector<float>> random_codes(size_t n, int d, std::uint64_t seed) {
    rng64 rng(seed);
    std::vector<std::vector<float>> codes(n, std::vector<float>(size_t(d)));
    for (auto& c : codes)
        for (auto& v : c) v = rng.normal_f(0.0f, 1.0f);
    return codes;
}

std::vector<std::string> ids_for(size_t n) {
    std::vector<std::string> ids;
    for (size_t i = 0; i < n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "g%05zu", i);
        ids.emplace_back(buf);
    }
    return ids;
}

}  // namespace

TEST_CASE("nearest neighbors finds the query itself first") {
    auto gallery = random_codes(50, 8, 1);
    auto gids = ids_for(50);
    std::vector<std::vector<float>> queries = {gallery[17]};
    std::vector<std::string> qids = {"q"};
    auto results = nearest_neighbors(queries, qids, gallery, gids, 3);
    REQUIRE(results.size() == 1);
    CHECK(results[0].neighbor_ids[0] == gids[17]);
    CHECK(results[0].distances[0] == doctest::Approx(0.0));
    CHECK(results[0].distances[1] >= 0.0);
    CHECK(std::is_sorted(results[0].distances.begin(), results[0].distances.end()));
}

TEST_CASE("k = 0 yields empty neighbor lists; oversized k errors") {
    auto gallery = random_codes(5, 4, 2);
    auto gids = ids_for(5);
    auto queries = random_codes(2, 4, 3);
    std::vector<std::string> qids = {"a", "b"};
    auto results = nearest_neighbors(queries, qids, gallery, gids, 0);
    for (const auto& r : results) CHECK(r.neighbor_ids.empty());
    CHECK_THROWS_AS((void)nearest_neighbors(queries, qids, gallery, gids, 6), error);
}

TEST_CASE("nearest neighbors matches the exhaustive oracle on 500 codes") {
    const int d = 16;
    auto gallery = random_codes(500, d, 4);
    auto gids = ids_for(500);
    auto queries = random_codes(20, d, 5);
    auto qids = ids_for(20);
    const size_t k = 7;
    auto results = nearest_neighbors(queries, qids, gallery, gids, k);

    for (size_t q = 0; q < queries.size(); ++q) {
        // Oracle: full sort of (distance, index) pairs.
        std::vector<std::pair<double, size_t>> all;
        for (size_t g = 0; g < gallery.size(); ++g) {
            double acc = 0;
            for (int i = 0; i < d; ++i) {
                const double diff = double(queries[q][size_t(i)]) - double(gallery[g][size_t(i)]);
                acc += diff * diff;
            }
            all.emplace_back(std::sqrt(acc), g);
        }
        std::sort(all.begin(), all.end());
        for (size_t i = 0; i < k; ++i) {
            CHECK(results[q].neighbor_ids[i] == gids[all[i].second]);
            CHECK(results[q].distances[i] == doctest::Approx(all[i].first).epsilon(1e-9));
        }
    }
}

TEST_CASE("nearest neighbors is stable under gallery permutation") {
    auto gallery = random_codes(100, 8, 6);
    auto gids = ids_for(100);
    auto queries = random_codes(5, 8, 7);
    auto qids = ids_for(5);
    auto a = nearest_neighbors(queries, qids, gallery, gids, 9);

    std::vector<size_t> perm(100);
    for (size_t i = 0; i < 100; ++i) perm[i] = (i * 37 + 11) % 100;
    std::vector<std::vector<float>> g2(100);
    std::vector<std::string> i2(100);
    for (size_t i = 0; i < 100; ++i) {
        g2[i] = gallery[perm[i]];
        i2[i] = gids[perm[i]];
    }
    auto b = nearest_neighbors(queries, qids, g2, i2, 9);
    for (size_t q = 0; q < 5; ++q) {
        // Same multiset of ids (generic random codes have no exact ties).
        auto sa = a[q].neighbor_ids, sb = b[q].neighbor_ids;
        std::sort(sa.begin(), sa.end());
        std::sort(sb.begin(), sb.end());
        CHECK(sa == sb);
    }
}

TEST_CASE("top activating samples") {
    std::vector<std::vector<float>> codes = {{0.1f, 0.5f}, {0.9f, 0.2f}, {0.5f, 0.7f}};
    std::vector<std::string> ids = {"a", "b", "c"};

    auto r = top_activating(codes, ids, 0, 1);
    CHECK(r.sample_ids == std::vector<std::string>{"b"});
    CHECK(r.activations[0] == doctest::Approx(0.9));

    // Constant activations: ties broken by ascending id.
    std::vector<std::vector<float>> constant = {{1.0f}, {1.0f}, {1.0f}};
    std::vector<std::string> cids = {"z", "m", "a"};
    auto rc = top_activating(constant, cids, 0, 3);
    CHECK(rc.sample_ids == std::vector<std::string>{"a", "m", "z"});

    CHECK_THROWS_AS((void)top_activating(codes, ids, 5, 1), error);
    CHECK_THROWS_AS((void)top_activating(codes, ids, 0, 4), error);
}

TEST_CASE("top activating matches a sort oracle and spans the set at full k") {
    auto codes = random_codes(80, 6, 8);
    auto ids = ids_for(80);
    const int neuron = 3;
    auto r = top_activating(codes, ids, neuron, 10);
    std::vector<std::pair<float, std::string>> oracle;
    for (size_t i = 0; i < codes.size(); ++i)
        oracle.emplace_back(-codes[i][size_t(neuron)], ids[i]);
    std::sort(oracle.begin(), oracle.end());
    for (size_t i = 0; i < 10; ++i) CHECK(r.sample_ids[i] == oracle[i].second);

    auto full = top_activating(codes, ids, neuron, codes.size());
    auto sorted_ids = full.sample_ids;
    std::sort(sorted_ids.begin(), sorted_ids.end());
    auto expect = ids;
    std::sort(expect.begin(), expect.end());
    CHECK(sorted_ids == expect);  // a permutation of the dataset
}

namespace {

// Minimal prepared dataset + trained/untrained checkpoints for grid tests.
struct grid_fixture {
    trainer::prepared_dataset data;
    nn::checkpoint trained, untrained;

    grid_fixture() {
        using namespace trainer;
        rng64 rng(31);
        data.joint_count = 4;
        data.crop.crop_cube_side_mm = 300.0;
        data.crop.depth_range_mm = 150.0;
        data.mean_com = {0, 0, 600};
        for (int i = 0; i < 96; ++i) {
            prepared_sample s;
            char buf[16];
            std::snprintf(buf, sizeof(buf), "p%04d", i);
            s.id = buf;
            s.has_view2 = true;
            s.labeled = false;
            // A bright square whose position encodes the "pose"; view 2
            // mirrors it.
            const int r0 = 8 + int(rng.index(32)), c0 = 8 + int(rng.index(32));
            s.crop1.fill(1.0f);
            s.crop2.fill(1.0f);
            for (int r = 0; r < 24; ++r)
                for (int c = 0; c < 24; ++c) {
                    const float shade = -0.8f + 0.05f * float(r % 8);
                    s.crop1[size_t(r0 + r) * 64 + size_t(c0 + c)] = shade;
                    s.crop2[size_t(r0 + r) * 64 + size_t(63 - (c0 + c))] = shade;
                }
            s.com1 = {0, 0, 600};
            s.com2 = s.com1;
            data.samples.push_back(std::move(s));
        }
        for (size_t i = 0; i < data.samples.size(); ++i) {
            data.by_id[data.samples[i].id] = i;
            if (i < 80)
                data.train_unlabeled.push_back(i);
            else
                data.test.push_back(i);
        }

        train_config cfg;
        cfg.mode = train_mode::preview;
        cfg.epochs = 80;
        cfg.batch_size = 16;
        cfg.learning_rate = 2e-3;
        cfg.seed = 9;
        cfg.net.d_t = 12;
        cfg.net.base_channels = 2;
        cfg.net.joint_count = 4;

        training_engine fresh(data, cfg);
        untrained = fresh.make_checkpoint("preview");
        trained = run_training(data, cfg).ck;
    }
};

double grid_foreground_correlation(const nn::checkpoint& ck,
                                   const trainer::prepared_dataset& data,
                                   std::span<const size_t> indices,
                                   const std::filesystem::path& path) {
    prediction_grid(ck, data, indices, path);
    auto img = read_pgm(path);
    double total = 0.0;
    for (size_t i = 0; i < indices.size(); ++i) {
        const auto& s = data.samples[indices[i]];
        // Pearson correlation between target and prediction tiles over the
        // target's foreground.
        std::vector<double> t, p;
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c) {
                if (s.crop2[size_t(r) * 64 + size_t(c)] >= 0.999f) continue;
                t.push_back(double(s.crop2[size_t(r) * 64 + size_t(c)]));
                p.push_back(double(img.at(int(i) * 64 + r, 2 * 64 + c)) / 127.5 - 1.0);
            }
        double mt = 0, mp = 0;
        for (size_t j = 0; j < t.size(); ++j) {
            mt += t[j];
            mp += p[j];
        }
        mt /= double(t.size());
        mp /= double(t.size());
        double num = 0, dt = 0, dp = 0;
        for (size_t j = 0; j < t.size(); ++j) {
            num += (t[j] - mt) * (p[j] - mp);
            dt += (t[j] - mt) * (t[j] - mt);
            dp += (p[j] - mp) * (p[j] - mp);
        }
        total += dt > 0 && dp > 0 ? num / std::sqrt(dt * dp) : 0.0;
    }
    return total / double(indices.size());
}

}  // namespace

TEST_CASE("prediction grid layout, determinism and learning signal") {
    grid_fixture fx;
    auto dir = std::filesystem::temp_directory_path() / "preview_test_grid";
    std::filesystem::create_directories(dir);

    // 1 sample: a 1 x 3 strip of 64 x 64 tiles.
    std::vector<size_t> one = {fx.data.test[0]};
    prediction_grid(fx.trained, fx.data, one, dir / "one.pgm");
    auto img1 = read_pgm(dir / "one.pgm");
    CHECK(img1.height == 64);
    CHECK(img1.width == 3 * 64);

    // 16 samples: 16 rows.
    std::vector<size_t> sixteen(fx.data.test.begin(), fx.data.test.begin() + 16);
    prediction_grid(fx.trained, fx.data, sixteen, dir / "grid.pgm");
    auto img16 = read_pgm(dir / "grid.pgm");
    CHECK(img16.height == 16 * 64);
    CHECK(img16.width == 3 * 64);

    // Deterministic bytes for a fixed checkpoint and sample list.
    prediction_grid(fx.trained, fx.data, sixteen, dir / "grid2.pgm");
    CHECK(sha256_file_hex(dir / "grid.pgm") == sha256_file_hex(dir / "grid2.pgm"));

    // Trained predictions correlate with the target view better than the
    // untrained decoder's output.
    const double trained_corr =
        grid_foreground_correlation(fx.trained, fx.data, sixteen, dir / "corr_t.pgm");
    const double untrained_corr =
        grid_foreground_correlation(fx.untrained, fx.data, sixteen, dir / "corr_u.pgm");
    CHECK(trained_corr > untrained_corr);

    std::filesystem::remove_all(dir);
}

TEST_CASE("prediction grid requires both views") {
    grid_fixture fx;
    fx.data.samples[fx.data.test[0]].has_view2 = false;
    std::vector<size_t> one = {fx.data.test[0]};
    auto path = std::filesystem::temp_directory_path() / "preview_test_grid_fail.pgm";
    CHECK_THROWS_AS(prediction_grid(fx.trained, fx.data, one, path), error);
}
