#include "core/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "core/analysis.hpp"
#include "core/sha256.hpp"
#include "core/synthgen.hpp"
#include "json.hpp"

namespace preview::pipeline {

namespace {

using nlohmann::ordered_json;

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw_io("cannot write: " + path.string());
    f << text;
    if (!f) throw_io("write failed: " + path.string());
}

std::filesystem::path ensure_out_dir(const run_config& cfg) {
    require(!cfg.out_dir.empty(), errc::config, "config field 'out_dir' is required");
    std::filesystem::path dir(cfg.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw_io("cannot create out_dir: " + dir.string());
    return dir;
}

// Run provenance: resolved config, seed and the manifest fingerprint.
void write_snapshot(const std::filesystem::path& dir, const run_config& cfg,
                    const std::string& manifest_hash) {
    ordered_json j = ordered_json::parse(cfg.to_json());
    if (!manifest_hash.empty()) j["dataset_manifest_sha256"] = manifest_hash;
    write_text(dir / "config.json", j.dump(2) + "\n");
}

dataio::dataset open_dataset(const run_config& cfg, std::string* manifest_hash) {
    require(!cfg.dataset.empty(), errc::config, "config field 'dataset' is required");
    std::filesystem::path p(cfg.dataset);
    if (std::filesystem::is_directory(p)) p /= "manifest.json";
    auto ds = dataio::dataset::load(p);
    if (manifest_hash) *manifest_hash = sha256_file_hex(p);
    return ds;
}

size_t auto_count(std::uint64_t configured, size_t labeled_total) {
    if (configured > 0) return size_t(configured);
    return std::min<size_t>(labeled_total / 10, 2000);
}

dataio::dataset_split make_train_split(const dataio::dataset& ds, const run_config& cfg) {
    const size_t labeled_total = ds.labeled_ids().size();
    const size_t val = auto_count(cfg.val_count, labeled_total);
    const size_t test = auto_count(cfg.test_count, labeled_total);
    auto split = dataio::canonical_split(ds, val, test, cfg.seed);
    if (cfg.n_labeled > 0) {
        split = dataio::subsample_labeled(split, size_t(cfg.n_labeled), cfg.seed);
        split = dataio::subsample_validation(split, split.validation.size(), cfg.seed);
    }
    return split;
}

trainer::train_config to_train_config(const run_config& cfg) {
    trainer::train_config tc;
    tc.mode = trainer::mode_from_string(cfg.mode);
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.learning_rate = cfg.learning_rate;
    tc.beta1 = cfg.beta1;
    tc.beta2 = cfg.beta2;
    tc.seed = cfg.seed;
    tc.net.d_t = cfg.d_t;
    tc.net.base_channels = cfg.base_channels;
    tc.net.com_conditioning = cfg.com_conditioning;
    tc.weights.lambda_l = cfg.lambda_l;
    tc.weights.lambda_a = cfg.lambda_a;
    tc.weights.huber_epsilon = cfg.huber_epsilon;
    tc.weights.l_r = cfg.l_r;
    tc.weights.l_g = cfg.l_g;
    tc.adv_conditioning = nn::conditioning_from_string(cfg.adv_conditioning);
    tc.early_stopping = cfg.early_stopping;
    tc.crop.crop_cube_side_mm = cfg.crop_cube_side_mm;
    tc.crop.depth_range_mm = cfg.depth_range_mm;
    tc.crop.foreground_band_mm = cfg.foreground_band_mm;
    tc.crop.com_jitter_mm = cfg.com_jitter_mm;
    tc.crop.jitter_seed = cfg.seed;
    tc.crop.dropout_holes = cfg.dropout_holes;
    return tc;
}

}  // namespace

run_config apply_environment(run_config cfg) {
    const char* env = std::getenv("PREVIEW_DETERMINISTIC");
    if (env && std::string(env) == "1") cfg.deterministic = true;
    if (cfg.deterministic) omp_set_num_threads(1);
    return cfg;
}

void run_synth_gen(const run_config& cfg) {
    cfg.validate();
    require(!cfg.out_dir.empty(), errc::config, "config field 'out_dir' is required");

    synthgen::kinematic_model model = synthgen::default_hand();
    if (cfg.fingers != 3 || cfg.segments != 2) {
        model.finger_count = cfg.fingers;
        model.segments_per_finger = cfg.segments;
        model.segment_lengths.clear();
        model.segment_radii.clear();
        for (int f = 0; f < cfg.fingers; ++f) {
            for (int s = 0; s < cfg.segments; ++s) {
                model.segment_lengths.push_back(48.0 - 10.0 * s + 2.0 * (f % 3));
                model.segment_radii.push_back(7.0 - double(s));
            }
        }
    }
    model.validate();

    auto rig = synthgen::default_rig(cfg.height, cfg.width, cfg.fx, cfg.fy,
                                     cfg.view_separation_deg,
                                     0.5 * (cfg.translation_z_min_mm + cfg.translation_z_max_mm));
    synthgen::generator_options opts;
    opts.orientation_range_rad = cfg.orientation_range_deg * 3.14159265358979323846 / 180.0;
    opts.translation_min = {-cfg.translation_xy_mm, -cfg.translation_xy_mm,
                            cfg.translation_z_min_mm};
    opts.translation_max = {cfg.translation_xy_mm, cfg.translation_xy_mm,
                            cfg.translation_z_max_mm};
    opts.depth_noise_sigma_mm = cfg.noise_sigma_mm;

    synthgen::generate_dataset(model, rig, cfg.n, cfg.labeled_fraction, cfg.seed,
                               cfg.out_dir, opts);
    const auto hash = sha256_file_hex(std::filesystem::path(cfg.out_dir) / "manifest.json");
    write_snapshot(cfg.out_dir, cfg, hash);
}

trainer::train_report run_train(const run_config& cfg) {
    cfg.validate();
    auto dir = ensure_out_dir(cfg);
    std::string hash;
    auto ds = open_dataset(cfg, &hash);
    auto split = make_train_split(ds, cfg);
    dataio::split_view view(ds, split);

    auto result = trainer::run_training(view, to_train_config(cfg));
    const auto ck_path = dir / "checkpoint.pvck";
    {
        // Persist through the engine-independent writer so bytes are stable.
        std::vector<nn::param_ref> params;
        std::vector<nn::buffer_ref> buffers;
        // The checkpoint already holds the tensors; serialize them directly.
        nn::checkpoint& ck = result.ck;
        std::vector<std::pair<std::string, nn::tensor*>> ordered;
        for (auto& [name, t] : ck.tensors) ordered.emplace_back(name, &t);
        for (auto& [name, t] : ordered) params.push_back({name, t, nullptr});
        nn::save_checkpoint(ck_path, ck.cfg, ck.meta, params, buffers);
    }
    result.report.checkpoint_path = ck_path.string();
    write_text(dir / "report.json", result.report.to_json());
    write_text(dir / "epochs.csv", result.report.epochs_csv());
    write_snapshot(dir, cfg, hash);
    return result.report;
}

trainer::probe_report run_probe(const run_config& cfg) {
    cfg.validate();
    require(!cfg.checkpoint.empty(), errc::config, "config field 'checkpoint' is required");
    auto dir = ensure_out_dir(cfg);
    std::string hash;
    auto ds = open_dataset(cfg, &hash);
    // Probe subsampling happens per repeat; the base split keeps the full
    // labeled pool.
    const size_t labeled_total = ds.labeled_ids().size();
    auto split = dataio::canonical_split(ds, auto_count(cfg.val_count, labeled_total),
                                         auto_count(cfg.test_count, labeled_total), cfg.seed);
    dataio::split_view view(ds, split);
    auto ck = nn::load_checkpoint(cfg.checkpoint);

    preprocess::crop_params crop{ck.meta.crop_cube_side_mm, ck.meta.depth_range_mm,
                                 cfg.foreground_band_mm, ck.meta.com_jitter_mm,
                                 ck.meta.jitter_seed, ck.meta.dropout_holes};
    auto prepared = trainer::prepare_dataset(view, crop);

    trainer::probe_config pc;
    pc.n_labeled = cfg.n_labeled > 0 ? size_t(cfg.n_labeled) : prepared.train_labeled.size();
    pc.repeats = cfg.repeats;
    pc.seed = cfg.seed;
    pc.epochs = cfg.probe_epochs;
    pc.learning_rate = cfg.probe_learning_rate;
    pc.batch_size = cfg.batch_size;
    pc.huber_epsilon = cfg.huber_epsilon;

    auto report = trainer::linear_probe(prepared, ck, pc);
    write_text(dir / "probe_report.json", report.to_json());
    write_snapshot(dir, cfg, hash);
    return report;
}

metrics::eval_report run_eval(const run_config& cfg) {
    cfg.validate();
    require(!cfg.predictions.empty(), errc::config, "config field 'predictions' is required");
    auto dir = ensure_out_dir(cfg);
    std::string hash;
    auto ds = open_dataset(cfg, &hash);

    std::ifstream f(cfg.predictions);
    if (!f) throw_io("cannot open predictions: " + cfg.predictions);
    ordered_json j;
    try {
        j = ordered_json::parse(f);
    } catch (const std::exception& e) {
        throw_io(std::string("predictions are not valid JSON: ") + e.what());
    }
    require(j.is_object(), errc::config, "predictions must map sample ids to K x 3 arrays");

    // Every labeled sample needs a prediction.
    std::vector<std::string> missing;
    std::vector<double> preds, gts;
    int frames = 0, joint_count = 0;
    for (const auto& id : ds.labeled_ids()) {
        auto it = j.find(id);
        if (it == j.end()) {
            missing.push_back(id);
            continue;
        }
        const auto& rec = ds.record_by_id(id);
        const auto& gt = rec.joints->positions;
        const int k = rec.joints->joint_count();
        require(joint_count == 0 || joint_count == k, errc::config,
                "eval: inconsistent joint counts in ground truth");
        joint_count = k;
        require(it->is_array() && int(it->size()) == k, errc::config,
                "eval: prediction for '" + id + "' must be K x 3");
        for (const auto& row : *it) {
            require(row.is_array() && row.size() == 3, errc::config,
                    "eval: prediction for '" + id + "' must be K x 3");
            for (const auto& v : row) preds.push_back(v.get<double>());
        }
        gts.insert(gts.end(), gt.begin(), gt.end());
        ++frames;
    }
    if (!missing.empty()) {
        std::string msg = "predictions missing for " + std::to_string(missing.size()) +
                          " sample id(s):";
        for (size_t i = 0; i < std::min<size_t>(missing.size(), 20); ++i) msg += " " + missing[i];
        throw_config(msg);
    }
    require(frames > 0, errc::config, "eval: dataset has no labeled samples");

    auto report = metrics::evaluate(preds, gts, frames, joint_count);

    ordered_json out;
    out["me_mm"] = report.me_mm;
    out["js80"] = report.js80;
    out["fs80"] = report.fs80;
    out["frame_count"] = report.frame_count;
    out["joint_count"] = report.joint_count;
    write_text(dir / "eval_report.json", out.dump(2) + "\n");

    auto curve_csv = [](const metrics::curve& c) {
        std::string s = "threshold_mm,rate\n";
        for (const auto& [t, r] : c) s += std::to_string(t) + "," + std::to_string(r) + "\n";
        return s;
    };
    write_text(dir / "js_curve.csv", curve_csv(report.js_curve));
    write_text(dir / "fs_curve.csv", curve_csv(report.fs_curve));
    write_snapshot(dir, cfg, hash);
    return report;
}

void run_analyze(const run_config& cfg) {
    cfg.validate();
    require(!cfg.checkpoint.empty(), errc::config, "config field 'checkpoint' is required");
    auto dir = ensure_out_dir(cfg);
    std::string hash;
    auto ds = open_dataset(cfg, &hash);
    auto ck = nn::load_checkpoint(cfg.checkpoint);

    const size_t labeled_total = ds.labeled_ids().size();
    auto split = dataio::canonical_split(ds, auto_count(cfg.val_count, labeled_total),
                                         auto_count(cfg.test_count, labeled_total), cfg.seed);
    dataio::split_view view(ds, split);
    preprocess::crop_params crop{ck.meta.crop_cube_side_mm, ck.meta.depth_range_mm,
                                 cfg.foreground_band_mm, ck.meta.com_jitter_mm,
                                 ck.meta.jitter_seed, ck.meta.dropout_holes};
    auto prepared = trainer::prepare_dataset(view, crop);

    auto ids_of = [&](const std::vector<size_t>& idxs) {
        std::vector<std::string> ids;
        for (size_t i : idxs) ids.push_back(prepared.samples[i].id);
        return ids;
    };

    if (cfg.analyze_mode == "nn") {
        const size_t k = cfg.k > 0 ? size_t(cfg.k) : 8;
        std::vector<size_t> queries = prepared.validation;
        std::sort(queries.begin(), queries.end());
        if (queries.size() > size_t(cfg.query_count)) queries.resize(size_t(cfg.query_count));
        std::vector<size_t> gallery = prepared.train_labeled;
        gallery.insert(gallery.end(), prepared.train_unlabeled.begin(),
                       prepared.train_unlabeled.end());
        std::sort(gallery.begin(), gallery.end());
        require(k <= gallery.size(), errc::config, "analyze: k exceeds the gallery size");

        auto qcodes = trainer::compute_latents(prepared, ck, queries);
        auto gcodes = trainer::compute_latents(prepared, ck, gallery);
        auto results = analysis::nearest_neighbors(qcodes, ids_of(queries), gcodes,
                                                   ids_of(gallery), k);
        ordered_json out = ordered_json::array();
        for (const auto& r : results)
            out.push_back({{"query", r.query_id},
                           {"neighbors", r.neighbor_ids},
                           {"distances", r.distances}});
        write_text(dir / "neighbors.json", out.dump(2) + "\n");
    } else if (cfg.analyze_mode == "neurons") {
        const size_t k = cfg.k > 0 ? size_t(cfg.k) : 10;
        std::vector<size_t> pool = prepared.validation;
        std::sort(pool.begin(), pool.end());
        require(!pool.empty(), errc::config, "analyze: validation split is empty");
        auto codes = trainer::compute_latents(prepared, ck, pool);
        auto ids = ids_of(pool);
        ordered_json out = ordered_json::array();
        const int lo = cfg.neuron >= 0 ? cfg.neuron : 0;
        const int hi = cfg.neuron >= 0 ? cfg.neuron + 1 : ck.cfg.d_t;
        for (int nrn = lo; nrn < hi; ++nrn) {
            auto r = analysis::top_activating(codes, ids, nrn, std::min(k, pool.size()));
            out.push_back({{"neuron", r.neuron},
                           {"samples", r.sample_ids},
                           {"activations", r.activations}});
        }
        write_text(dir / "neurons.json", out.dump(2) + "\n");
    } else {
        std::vector<size_t> pool = prepared.validation.empty() ? prepared.test
                                                               : prepared.validation;
        std::sort(pool.begin(), pool.end());
        require(!pool.empty(), errc::config, "analyze: no samples available for the grid");
        if (pool.size() > size_t(cfg.grid_count)) pool.resize(size_t(cfg.grid_count));
        analysis::prediction_grid(ck, prepared, pool, dir / "grid.pgm");
    }
    write_snapshot(dir, cfg, hash);
}

}  // namespace preview::pipeline
