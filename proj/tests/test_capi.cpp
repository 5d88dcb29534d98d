#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "core/metrics.hpp"
#include "core/nets.hpp"
#include "core/preprocess.hpp"
#include "core/rng.hpp"
#include "core/synthgen.hpp"
#include "core/trainer.hpp"
#include "doctest.h"
#include "json.hpp"
#include "preview/preview.h"

using namespace preview;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("preview_capi_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string small_gen_config(const std::filesystem::path& out, int n, double labeled = 1.0) {
    nlohmann::ordered_json j;
    j["out_dir"] = out.string();
    j["n"] = n;
    j["labeled_fraction"] = labeled;
    j["seed"] = 9;
    j["height"] = 96;
    j["width"] = 96;
    j["fx"] = 110.0;
    j["fy"] = 110.0;
    return j.dump();
}

}  // namespace

TEST_CASE("version and error surface") {
    CHECK(std::string(pv_version()) == "1.0.0");
    CHECK(pv_run_train(nullptr) == PV_ERR_CONFIG);
    CHECK(std::strlen(pv_last_error()) > 0);
    CHECK(pv_run_train("{ not json") == PV_ERR_CONFIG);
    CHECK(pv_run_train(R"({"no_such_key": 1})") == PV_ERR_CONFIG);
    CHECK(std::string(pv_last_error()).find("no_such_key") != std::string::npos);
}

TEST_CASE("synth-gen + dataset handles through the shared library") {
    auto dir = temp_dir("gen");
    const auto cfg = small_gen_config(dir / "data", 6, 0.5);
    REQUIRE(pv_run_synth_gen(cfg.c_str()) == PV_OK);

    pv_dataset* ds = nullptr;
    REQUIRE(pv_dataset_open((dir / "data").string().c_str(), &ds) == PV_OK);
    int64_t n = 0, labeled = 0;
    CHECK(pv_dataset_num_samples(ds, &n) == PV_OK);
    CHECK(n == 6);
    CHECK(pv_dataset_num_labeled(ds, &labeled) == PV_OK);
    CHECK(labeled == 3);
    int32_t h = 0, w = 0;
    CHECK(pv_dataset_resolution(ds, &h, &w) == PV_OK);
    CHECK(h == 96);
    CHECK(w == 96);
    char buf[32];
    CHECK(pv_dataset_sample_id(ds, 0, buf, sizeof(buf)) == PV_OK);
    CHECK(std::string(buf) == "s000000");
    CHECK(pv_dataset_sample_id(ds, 99, buf, sizeof(buf)) == PV_ERR_CONFIG);
    pv_dataset_close(ds);

    CHECK(pv_dataset_open((dir / "missing").string().c_str(), &ds) == PV_ERR_IO);

    // Invalid labeled fraction is a config error naming the field.
    const auto bad = small_gen_config(dir / "bad", 3, 1.5);
    CHECK(pv_run_synth_gen(bad.c_str()) == PV_ERR_CONFIG);
    CHECK(std::string(pv_last_error()).find("labeled_fraction") != std::string::npos);

    std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint handles and encoding match the in-process encoder") {
    auto dir = temp_dir("encode");

    nn::network_config cfg;
    cfg.d_t = 16;
    cfg.base_channels = 2;
    cfg.joint_count = 5;
    nn::encoder enc(cfg);
    nn::decoder dec(cfg);
    nn::pose_head head(cfg);
    rng64 rng(3);
    enc.init(rng);
    dec.init(rng);
    head.init(rng);

    std::vector<nn::param_ref> params;
    std::vector<nn::buffer_ref> buffers;
    enc.collect(params, buffers);
    dec.collect(params, buffers);
    head.collect(params);
    nn::checkpoint_meta meta;
    meta.mode = "preview";
    const auto ck_path = dir / "ck.pvck";
    nn::save_checkpoint(ck_path, cfg, meta, params, buffers);

    pv_checkpoint* ck = nullptr;
    REQUIRE(pv_checkpoint_open(ck_path.string().c_str(), &ck) == PV_OK);
    int32_t d_t = 0, k = 0;
    CHECK(pv_checkpoint_latent_dim(ck, &d_t) == PV_OK);
    CHECK(d_t == 16);
    CHECK(pv_checkpoint_joint_count(ck, &k) == PV_OK);
    CHECK(k == 5);

    std::vector<float> crop(size_t(preprocess::k_crop_pixels));
    for (size_t i = 0; i < crop.size(); ++i) crop[i] = float(std::sin(0.02 * double(i)));
    std::vector<float> latent(16);
    REQUIRE(pv_encode(ck, crop.data(), latent.data()) == PV_OK);

    nn::tensor x(1, 1, 64, 64);
    std::copy(crop.begin(), crop.end(), x.data());
    nn::tensor expect;
    enc.forward(x, expect, false);
    for (int i = 0; i < 16; ++i) CHECK(latent[size_t(i)] == expect.v[size_t(i)]);

    std::vector<float> joints(size_t(3 * k));
    REQUIRE(pv_predict_pose(ck, crop.data(), joints.data()) == PV_OK);
    nn::tensor pose;
    head.forward(expect, pose);
    for (int i = 0; i < 3 * k; ++i) CHECK(joints[size_t(i)] == pose.v[size_t(i)]);

    pv_checkpoint_close(ck);
    std::filesystem::remove_all(dir);
}

TEST_CASE("metric entry points agree with the core") {
    rng64 rng(5);
    const int frames = 20, joints = 6;
    std::vector<double> preds, gts;
    for (int i = 0; i < frames * joints * 3; ++i) {
        const double g = rng.uniform(-100, 100);
        gts.push_back(g);
        preds.push_back(g + rng.uniform(-50, 50));
    }
    double me = 0, js80 = 0, fs80 = 0;
    REQUIRE(pv_mean_joint_error(preds.data(), gts.data(), frames, joints, &me) == PV_OK);
    REQUIRE(pv_eval_metrics(preds.data(), gts.data(), frames, joints, nullptr, &js80, &fs80) ==
            PV_OK);

    auto expect = metrics::evaluate(preds, gts, frames, joints);
    CHECK(me == doctest::Approx(expect.me_mm).epsilon(1e-12));
    CHECK(js80 == doctest::Approx(expect.js80).epsilon(1e-12));
    CHECK(fs80 == doctest::Approx(expect.fs80).epsilon(1e-12));
}

TEST_CASE("train / probe / eval / analyze drivers end to end") {
    auto dir = temp_dir("drivers");
    const auto data_dir = dir / "data";
    REQUIRE(pv_run_synth_gen(small_gen_config(data_dir, 60).c_str()) == PV_OK);

    nlohmann::ordered_json t;
    t["dataset"] = data_dir.string();
    t["out_dir"] = (dir / "run").string();
    t["mode"] = "preview";
    t["epochs"] = 2;
    t["batch_size"] = 16;
    t["d_t"] = 8;
    t["base_channels"] = 2;
    t["seed"] = 4;
    t["val_count"] = 6;
    t["test_count"] = 6;
    REQUIRE(pv_run_train(t.dump().c_str()) == PV_OK);
    CHECK(std::filesystem::exists(dir / "run" / "checkpoint.pvck"));
    CHECK(std::filesystem::exists(dir / "run" / "report.json"));
    CHECK(std::filesystem::exists(dir / "run" / "epochs.csv"));
    CHECK(std::filesystem::exists(dir / "run" / "config.json"));

    // The config snapshot carries the dataset fingerprint.
    {
        std::ifstream f(dir / "run" / "config.json");
        nlohmann::json snap = nlohmann::json::parse(f);
        CHECK(snap.at("dataset_manifest_sha256").get<std::string>().size() == 64);
        CHECK(snap.at("epochs").get<int>() == 2);
    }

    nlohmann::ordered_json p;
    p["dataset"] = data_dir.string();
    p["out_dir"] = (dir / "probe").string();
    p["checkpoint"] = (dir / "run" / "checkpoint.pvck").string();
    p["n_labeled"] = 10;
    p["repeats"] = 2;
    p["probe_epochs"] = 50;
    p["seed"] = 4;
    p["val_count"] = 6;
    p["test_count"] = 6;
    REQUIRE(pv_run_probe(p.dump().c_str()) == PV_OK);
    CHECK(std::filesystem::exists(dir / "probe" / "probe_report.json"));

    // Predictions covering every labeled id evaluate cleanly; a missing id
    // is a config error that names it.
    auto ds = dataio::dataset::load(data_dir / "manifest.json");
    nlohmann::ordered_json preds = nlohmann::ordered_json::object();
    for (const auto& id : ds.labeled_ids()) {
        auto rows = nlohmann::ordered_json::array();
        const auto& joints = ds.record_by_id(id).joints->positions;
        for (int kjoint = 0; kjoint < 10; ++kjoint)
            rows.push_back({joints[size_t(3 * kjoint)] + 5.0, joints[size_t(3 * kjoint + 1)],
                            joints[size_t(3 * kjoint + 2)]});
        preds[id] = rows;
    }
    {
        std::ofstream f(dir / "preds.json");
        f << preds.dump();
    }
    nlohmann::ordered_json e;
    e["dataset"] = data_dir.string();
    e["out_dir"] = (dir / "eval").string();
    e["predictions"] = (dir / "preds.json").string();
    REQUIRE(pv_run_eval(e.dump().c_str()) == PV_OK);
    {
        std::ifstream f(dir / "eval" / "eval_report.json");
        nlohmann::json report = nlohmann::json::parse(f);
        CHECK(report.at("me_mm").get<double>() == doctest::Approx(5.0).epsilon(1e-9));
        CHECK(report.at("js80").get<double>() > 0.9);
    }
    CHECK(std::filesystem::exists(dir / "eval" / "js_curve.csv"));

    preds.erase(preds.begin().key());
    {
        std::ofstream f(dir / "preds_missing.json");
        f << preds.dump();
    }
    e["predictions"] = (dir / "preds_missing.json").string();
    e["out_dir"] = (dir / "eval2").string();
    CHECK(pv_run_eval(e.dump().c_str()) == PV_ERR_CONFIG);
    CHECK(std::string(pv_last_error()).find("s000000") != std::string::npos);

    nlohmann::ordered_json a;
    a["dataset"] = data_dir.string();
    a["out_dir"] = (dir / "analyze").string();
    a["checkpoint"] = (dir / "run" / "checkpoint.pvck").string();
    a["analyze_mode"] = "grid";
    a["grid_count"] = 4;
    a["seed"] = 4;
    a["val_count"] = 6;
    a["test_count"] = 6;
    REQUIRE(pv_run_analyze(a.dump().c_str()) == PV_OK);
    CHECK(std::filesystem::exists(dir / "analyze" / "grid.pgm"));

    a["analyze_mode"] = "nn";
    a["out_dir"] = (dir / "analyze_nn").string();
    a["k"] = 3;
    REQUIRE(pv_run_analyze(a.dump().c_str()) == PV_OK);
    CHECK(std::filesystem::exists(dir / "analyze_nn" / "neighbors.json"));

    a["analyze_mode"] = "neurons";
    a["out_dir"] = (dir / "analyze_neurons").string();
    a["neuron"] = 2;
    REQUIRE(pv_run_analyze(a.dump().c_str()) == PV_OK);
    CHECK(std::filesystem::exists(dir / "analyze_neurons" / "neurons.json"));

    std::filesystem::remove_all(dir);
}
