#include <cmath>
#include <filesystem>

#include "core/rng.hpp"
#include "core/synthgen.hpp"
#include "core/trainer.hpp"
#include "doctest.h"

using namespace preview;
using namespace preview::trainer;

namespace {

// Synthetic in-memory prepared dataset; crops are smooth random patterns and
// targets are the declared normalized joints, so probe/training protocols
// can run without touching disk.
prepared_dataset fake_prepared(int n_labeled, int n_unlabeled, int n_val, int n_test,
                               std::uint64_t seed, int joint_count = 4) {
    prepared_dataset out;
    out.joint_count = joint_count;
    out.crop.crop_cube_side_mm = 300.0;
    out.crop.depth_range_mm = 150.0;
    rng64 rng(seed);
    const int total = n_labeled + n_unlabeled + n_val + n_test;
    for (int i = 0; i < total; ++i) {
        prepared_sample s;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "f%05d", i);
        s.id = buf;
        s.has_view2 = true;
        const double ax = rng.uniform(0.02, 0.2), ay = rng.uniform(0.02, 0.2);
        const double phase = rng.uniform(0.0, 6.28);
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c) {
                const double v = std::sin(ax * r + phase) * std::cos(ay * c);
                s.crop1[size_t(r) * 64 + size_t(c)] = float(v);
                s.crop2[size_t(r) * 64 + size_t(c)] = float(-v);
            }
        s.com1 = {rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(550, 650)};
        s.com2 = s.com1;
        const bool labeled = i < n_labeled || i >= n_labeled + n_unlabeled;
        if (labeled) {
            s.labeled = true;
            // Targets derive from the crop's generative factors so they are
            // learnable from pixels.
            for (int j = 0; j < 3 * joint_count; ++j) {
                const double t = 0.7 * std::sin(phase + 0.9 * j) * (j % 2 ? ax : ay) * 5.0;
                s.target_norm.push_back(float(std::clamp(t, -0.9, 0.9)));
            }
            for (int j = 0; j < joint_count; ++j) {
                s.joints_mm.push_back(double(s.target_norm[size_t(3 * j)]) * 150.0 + s.com1.x);
                s.joints_mm.push_back(double(s.target_norm[size_t(3 * j + 1)]) * 150.0 +
                                      s.com1.y);
                s.joints_mm.push_back(double(s.target_norm[size_t(3 * j + 2)]) * 150.0 +
                                      s.com1.z);
            }
        }
        out.samples.push_back(std::move(s));
    }
    for (size_t i = 0; i < out.samples.size(); ++i) out.by_id[out.samples[i].id] = i;
    for (int i = 0; i < n_labeled; ++i) out.train_labeled.push_back(size_t(i));
    for (int i = 0; i < n_unlabeled; ++i) out.train_unlabeled.push_back(size_t(n_labeled + i));
    for (int i = 0; i < n_val; ++i) out.validation.push_back(size_t(n_labeled + n_unlabeled + i));
    for (int i = 0; i < n_test; ++i)
        out.test.push_back(size_t(n_labeled + n_unlabeled + n_val + i));
    out.mean_com = {0, 0, 600};
    return out;
}

train_config tiny_config(train_mode mode, std::uint64_t seed = 3) {
    train_config cfg;
    cfg.mode = mode;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e-3;
    cfg.seed = seed;
    cfg.net.d_t = 12;
    cfg.net.base_channels = 2;
    cfg.net.joint_count = 4;
    return cfg;
}

}  // namespace

TEST_CASE("balanced batches are exactly half labeled") {
    auto data = fake_prepared(100, 900, 0, 0, 1);
    for (int epoch = 0; epoch < 3; ++epoch) {
        auto batches = balanced_batches(data, 8, 7, epoch);
        CHECK(batches.size() == 225);  // 900 unlabeled / 4 per batch
        for (const auto& batch : batches) {
            REQUIRE(batch.size() % 2 == 0);
            size_t labeled = 0;
            for (size_t idx : batch) labeled += data.samples[idx].labeled ? 1 : 0;
            CHECK(labeled == batch.size() / 2);
        }
    }
    // Order differs between epochs but is deterministic per (seed, epoch).
    CHECK(balanced_batches(data, 8, 7, 0) == balanced_batches(data, 8, 7, 0));
    CHECK(balanced_batches(data, 8, 7, 0) != balanced_batches(data, 8, 7, 1));
}

TEST_CASE("pose-head parameters are bit-unchanged by a purely unlabeled batch") {
    auto data = fake_prepared(20, 60, 0, 0, 2);
    auto cfg = tiny_config(train_mode::semi);
    training_engine engine(data, cfg);

    const auto w_before = engine.head().fc.W.v;
    const auto b_before = engine.head().fc.b.v;

    std::vector<size_t> unlabeled_batch(data.train_unlabeled.begin(),
                                        data.train_unlabeled.begin() + 8);
    auto bs = engine.step_batch(unlabeled_batch);
    CHECK(bs.labeled_count == 0);
    CHECK(engine.head().fc.W.v == w_before);
    CHECK(engine.head().fc.b.v == b_before);

    // A mixed batch does update the head.
    std::vector<size_t> mixed(data.train_unlabeled.begin(), data.train_unlabeled.begin() + 4);
    mixed.insert(mixed.end(), data.train_labeled.begin(), data.train_labeled.begin() + 4);
    engine.step_batch(mixed);
    CHECK(engine.head().fc.W.v != w_before);
}

TEST_CASE("pretraining reduces the view-prediction loss and is deterministic") {
    auto data = fake_prepared(0, 160, 0, 0, 4);
    auto cfg = tiny_config(train_mode::preview);
    cfg.epochs = 5;

    auto a = run_training(data, cfg);
    CHECK(a.report.epochs.back().recon < a.report.epochs.front().recon);
    CHECK(a.report.mode == "preview");
    REQUIRE(a.report.epochs.size() == 5);

    auto b = run_training(data, cfg);
    CHECK(a.report.epochs.back().total == b.report.epochs.back().total);
    for (size_t e = 0; e < 5; ++e)
        CHECK(a.report.epochs[e].recon == b.report.epochs[e].recon);
    CHECK(a.ck.tensors.at("encoder.conv1.weight").v ==
          b.ck.tensors.at("encoder.conv1.weight").v);
}

TEST_CASE("autoencoder collapses onto a constant-image dataset") {
    auto data = fake_prepared(0, 448, 0, 0, 5);
    for (auto& s : data.samples) {
        s.crop1.fill(0.0f);
        s.crop2.fill(0.0f);
    }
    auto cfg = tiny_config(train_mode::autoencoder);
    cfg.epochs = 10;
    cfg.batch_size = 4;
    cfg.learning_rate = 5e-4;
    auto result = run_training(data, cfg);
    CHECK(result.report.epochs.back().recon <= 1e-3);
}

TEST_CASE("semi-supervised loss decomposition is recomputable from batch logs") {
    auto data = fake_prepared(24, 72, 8, 8, 6);
    auto cfg = tiny_config(train_mode::semi);
    cfg.weights.lambda_l = 10.0;
    auto result = run_training(data, cfg);

    REQUIRE(result.report.batches.size() == result.report.epochs.size());
    for (size_t e = 0; e < result.report.epochs.size(); ++e) {
        const auto& log = result.report.batches[e];
        double recon = 0, pose = 0, adv = 0, total = 0;
        for (const auto& b : log) {
            recon += b.recon;
            pose += b.pose;
            adv += b.adv;
            total += b.recon + cfg.weights.lambda_l * b.pose + cfg.weights.lambda_a * b.adv;
        }
        const double nb = double(log.size());
        CHECK(std::abs(result.report.epochs[e].recon - recon / nb) <= 1e-6);
        CHECK(std::abs(result.report.epochs[e].pose - pose / nb) <= 1e-6);
        CHECK(std::abs(result.report.epochs[e].total - total / nb) <= 1e-6);
    }
}

TEST_CASE("early stopping selects the epoch with minimum validation ME") {
    auto data = fake_prepared(48, 48, 12, 12, 7);
    auto cfg = tiny_config(train_mode::semi);
    cfg.epochs = 6;
    auto result = run_training(data, cfg);

    REQUIRE(result.report.best_epoch >= 0);
    double min_me = 1e30;
    int argmin = -1;
    for (size_t e = 0; e < result.report.epochs.size(); ++e) {
        if (result.report.epochs[e].val_me_mm < min_me) {
            min_me = result.report.epochs[e].val_me_mm;
            argmin = int(e);
        }
    }
    CHECK(result.report.best_epoch == argmin);
    CHECK(result.report.best_val_me_mm == doctest::Approx(min_me));
}

TEST_CASE("semi mode without unlabeled data falls back to supervised with a warning") {
    auto data = fake_prepared(32, 0, 8, 8, 8);
    auto cfg = tiny_config(train_mode::semi);
    auto result = run_training(data, cfg);
    CHECK(result.report.mode == "supervised");
    REQUIRE(!result.report.warnings.empty());
    CHECK(result.report.warnings[0].find("unlabeled") != std::string::npos);
}

TEST_CASE("supervised training overfits a single sample") {
    auto data = fake_prepared(1, 0, 0, 0, 9);
    auto cfg = tiny_config(train_mode::supervised);
    cfg.epochs = 2000;
    cfg.batch_size = 1;
    cfg.learning_rate = 2e-3;
    cfg.early_stopping = false;
    auto result = run_training(data, cfg);

    training_engine engine(data, cfg);
    engine.load_checkpoint_state(result.ck);
    const double me = engine.evaluate_me(data.train_labeled);
    CHECK(me <= 2.0);
}

TEST_CASE("supervised training is deterministic and beats the untrained net") {
    auto data = fake_prepared(128, 0, 16, 32, 10);
    auto cfg = tiny_config(train_mode::supervised);
    cfg.epochs = 80;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 32;

    training_engine untrained(data, cfg);
    const double untrained_me = untrained.evaluate_me(data.test);

    auto a = run_training(data, cfg);
    auto b = run_training(data, cfg);
    REQUIRE(a.report.epochs.size() == b.report.epochs.size());
    for (size_t e = 0; e < a.report.epochs.size(); ++e)
        CHECK(a.report.epochs[e].pose == b.report.epochs[e].pose);

    training_engine trained(data, cfg);
    trained.load_checkpoint_state(a.ck);
    const double trained_me = trained.evaluate_me(data.test);
    CHECK(std::isfinite(trained_me));
    CHECK(trained_me <= 0.5 * untrained_me);
}

TEST_CASE("probe with an oracle encoder reaches millimetre accuracy") {
    auto data = fake_prepared(200, 0, 60, 60, 11);
    probe_config pc;
    pc.n_labeled = 100;
    pc.repeats = 3;
    pc.seed = 5;
    const int d_t = 12;
    auto oracle = [&](const prepared_sample& s, std::span<float> out) {
        std::fill(out.begin(), out.end(), 0.0f);
        for (size_t j = 0; j < s.target_norm.size() && j < out.size(); ++j)
            out[j] = s.target_norm[j];
    };
    auto rep = linear_probe_with_latents(data, d_t, oracle, pc);
    CHECK(rep.mean_me_mm <= 1.0);
    REQUIRE(int(rep.per_repeat_me_mm.size()) == pc.repeats);

    // std is computed over the per-repeat values.
    double mean = 0;
    for (double v : rep.per_repeat_me_mm) mean += v;
    mean /= double(rep.per_repeat_me_mm.size());
    double var = 0;
    for (double v : rep.per_repeat_me_mm) var += (v - mean) * (v - mean);
    CHECK(rep.std_me_mm ==
          doctest::Approx(std::sqrt(var / double(rep.per_repeat_me_mm.size() - 1))));

    probe_config too_big;
    too_big.n_labeled = 1000;
    too_big.repeats = 1;
    CHECK_THROWS_AS((void)linear_probe_with_latents(data, d_t, oracle, too_big), error);
}

TEST_CASE("probe repeats differ with the sampled subsets") {
    auto data = fake_prepared(300, 0, 60, 60, 12);
    probe_config pc;
    pc.n_labeled = 40;
    pc.repeats = 4;
    pc.seed = 9;
    const int d_t = 12;
    // Noisy oracle: pose plus a deterministic per-sample perturbation, so
    // different subsets give different heads.
    auto latents = [&](const prepared_sample& s, std::span<float> out) {
        rng64 rng(fnv1a(s.id));
        for (size_t j = 0; j < out.size(); ++j) {
            const float base = j < s.target_norm.size() ? s.target_norm[j] : 0.0f;
            out[j] = base + rng.normal_f(0.0f, 0.3f);
        }
    };
    auto rep = linear_probe_with_latents(data, d_t, latents, pc);
    REQUIRE(rep.per_repeat_me_mm.size() == 4);
    bool any_diff = false;
    for (size_t i = 1; i < rep.per_repeat_me_mm.size(); ++i)
        any_diff |= rep.per_repeat_me_mm[i] != rep.per_repeat_me_mm[0];
    CHECK(any_diff);
    CHECK(rep.std_me_mm > 0.0);
}

TEST_CASE("adversarial mode with lambda_a = 0 reproduces the plain semi trajectory") {
    auto data = fake_prepared(24, 72, 8, 8, 13);

    auto cfg_semi = tiny_config(train_mode::semi, 21);
    cfg_semi.epochs = 2;
    auto semi = run_training(data, cfg_semi);

    auto cfg_adv = tiny_config(train_mode::semi_adversarial, 21);
    cfg_adv.epochs = 2;
    cfg_adv.weights.lambda_a = 0.0;
    cfg_adv.adv_conditioning = nn::conditioning::input_view;
    auto adv = run_training(data, cfg_adv);

    for (const char* name :
         {"encoder.conv1.weight", "encoder.conv5.weight", "decoder.tconv1.weight",
          "decoder.tconv5.weight", "pose_head.weight", "pose_head.bias"}) {
        CHECK(semi.ck.tensors.at(name).v == adv.ck.tensors.at(name).v);
    }
    // The discriminator itself did train.
    CHECK(adv.ck.tensors.count("discriminator.conv1.weight") == 1);
}

TEST_CASE("adversarial training separates real from generated views") {
    auto data = fake_prepared(32, 96, 8, 8, 14);
    auto cfg = tiny_config(train_mode::semi_adversarial, 22);
    cfg.epochs = 6;
    cfg.weights.lambda_a = 0.1;
    cfg.adv_conditioning = nn::conditioning::input_view;
    auto result = run_training(data, cfg);
    for (const auto& e : result.report.epochs) CHECK(std::isfinite(e.total));

    training_engine engine(data, cfg);
    engine.load_checkpoint_state(result.ck);
    REQUIRE(engine.disc() != nullptr);
    CHECK(engine.disc()->input_channels() == 2);

    std::vector<float> real, fake;
    engine.discriminator_scores(data.test, real, fake);
    double mr = 0, mf = 0;
    for (float v : real) mr += v;
    for (float v : fake) mf += v;
    CHECK(mr / double(real.size()) > mf / double(fake.size()));
}

TEST_CASE("pose conditioning requires labeled samples") {
    auto data = fake_prepared(0, 64, 0, 0, 15);
    auto cfg = tiny_config(train_mode::semi_adversarial);
    cfg.weights.lambda_a = 0.1;
    cfg.adv_conditioning = nn::conditioning::pose;
    CHECK_THROWS_AS((void)run_training(data, cfg), error);
}

TEST_CASE("train_config validation") {
    train_config cfg = tiny_config(train_mode::semi);
    cfg.batch_size = 7;  // semi needs balanced halves
    CHECK_THROWS_AS(cfg.validate(), error);
    cfg.batch_size = 8;
    CHECK_NOTHROW(cfg.validate());
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), error);
}

TEST_CASE("non-finite losses abort with the epoch and batch index") {
    auto data = fake_prepared(16, 48, 0, 0, 16);
    auto cfg = tiny_config(train_mode::semi);
    cfg.learning_rate = 1e30;  // guaranteed blow-up
    cfg.epochs = 2;
    try {
        (void)run_training(data, cfg);
        FAIL("expected a numeric abort");
    } catch (const error& e) {
        CHECK(e.code() == errc::numeric);
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

namespace {

// Masked L1: mean absolute difference over the target's foreground pixels.
double masked_l1(const trainer::prepared_dataset& data, const nn::checkpoint& ck,
                 std::span<const size_t> indices) {
    nn::encoder enc(ck.cfg);
    nn::decoder dec(ck.cfg);
    std::vector<nn::param_ref> params;
    std::vector<nn::buffer_ref> buffers;
    enc.collect(params, buffers);
    dec.collect(params, buffers);
    nn::restore_state(ck, params, buffers);

    double total = 0.0;
    size_t count = 0;
    for (size_t idx : indices) {
        const auto& s = data.samples[idx];
        nn::tensor x(1, 1, 64, 64), latent, zc, pred;
        std::copy(s.crop1.begin(), s.crop1.end(), x.data());
        enc.forward(x, latent, false);
        zc.resize(1, ck.cfg.decoder_input(), 1, 1);
        std::copy(latent.data(), latent.data() + ck.cfg.d_t, zc.data());
        if (ck.cfg.com_conditioning) {
            zc.v[size_t(ck.cfg.d_t)] = float((s.com1.x - data.mean_com.x) / 300.0);
            zc.v[size_t(ck.cfg.d_t) + 1] = float((s.com1.y - data.mean_com.y) / 300.0);
            zc.v[size_t(ck.cfg.d_t) + 2] = float((s.com1.z - data.mean_com.z) / 300.0);
        }
        dec.forward(zc, pred, false);
        for (int p = 0; p < 4096; ++p) {
            if (s.crop2[size_t(p)] >= 0.999f) continue;
            total += std::abs(double(pred.v[size_t(p)]) - double(s.crop2[size_t(p)]));
            ++count;
        }
    }
    return total / double(count);
}

}  // namespace

TEST_CASE("trained view prediction halves the masked L1 of the untrained net") {
    auto data = fake_prepared(0, 200, 0, 24, 19);
    auto cfg = tiny_config(train_mode::preview);
    cfg.epochs = 40;
    cfg.learning_rate = 2e-3;

    training_engine fresh(data, cfg);
    auto untrained = fresh.make_checkpoint("preview");
    auto trained = run_training(data, cfg).ck;

    const double before = masked_l1(data, untrained, data.test);
    const double after = masked_l1(data, trained, data.test);
    CHECK(after <= 0.5 * before);
}

TEST_CASE("preview mode rejects single-view datasets") {
    auto data = fake_prepared(0, 32, 0, 0, 17);
    for (auto& s : data.samples) s.has_view2 = false;
    auto cfg = tiny_config(train_mode::preview);
    CHECK_THROWS_AS((void)run_training(data, cfg), error);
}
