#include "preview/preview.h"

#include <cstring>
#include <span>
#include <string>

#include "core/metrics.hpp"
#include "core/nets.hpp"
#include "core/pipeline.hpp"
#include "core/preprocess.hpp"
#include "core/runconfig.hpp"
#include "core/tensor.hpp"

namespace {

thread_local std::string g_last_error;

pv_status to_status(preview::errc code) {
    switch (code) {
        case preview::errc::config: return PV_ERR_CONFIG;
        case preview::errc::io: return PV_ERR_IO;
        case preview::errc::numeric: return PV_ERR_NUMERIC;
    }
    return PV_ERR_CONFIG;
}

template <typename Fn>
pv_status wrap(Fn&& fn) {
    try {
        fn();
        return PV_OK;
    } catch (const preview::error& e) {
        g_last_error = e.what();
        return to_status(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return PV_ERR_IO;
    } catch (...) {
        g_last_error = "unknown error";
        return PV_ERR_IO;
    }
}

preview::run_config parse_config(const char* config_json) {
    if (!config_json) preview::throw_config("config_json is NULL");
    return preview::pipeline::apply_environment(
        preview::run_config::from_json(config_json));
}

}  // namespace

struct pv_dataset {
    preview::dataio::dataset ds;
};

struct pv_checkpoint {
    preview::nn::checkpoint ck;
};

extern "C" {

const char* pv_version(void) { return "1.0.0"; }

const char* pv_last_error(void) { return g_last_error.c_str(); }

pv_status pv_run_synth_gen(const char* config_json) {
    return wrap([&] { preview::pipeline::run_synth_gen(parse_config(config_json)); });
}

pv_status pv_run_train(const char* config_json) {
    return wrap([&] { preview::pipeline::run_train(parse_config(config_json)); });
}

pv_status pv_run_probe(const char* config_json) {
    return wrap([&] { preview::pipeline::run_probe(parse_config(config_json)); });
}

pv_status pv_run_eval(const char* config_json) {
    return wrap([&] { preview::pipeline::run_eval(parse_config(config_json)); });
}

pv_status pv_run_analyze(const char* config_json) {
    return wrap([&] { preview::pipeline::run_analyze(parse_config(config_json)); });
}

pv_status pv_dataset_open(const char* manifest_path, pv_dataset** out) {
    return wrap([&] {
        if (!manifest_path || !out) preview::throw_config("NULL argument");
        std::filesystem::path p(manifest_path);
        if (std::filesystem::is_directory(p)) p /= "manifest.json";
        *out = new pv_dataset{preview::dataio::dataset::load(p)};
    });
}

void pv_dataset_close(pv_dataset* ds) { delete ds; }

pv_status pv_dataset_num_samples(const pv_dataset* ds, int64_t* out) {
    return wrap([&] {
        if (!ds || !out) preview::throw_config("NULL argument");
        *out = int64_t(ds->ds.size());
    });
}

pv_status pv_dataset_num_labeled(const pv_dataset* ds, int64_t* out) {
    return wrap([&] {
        if (!ds || !out) preview::throw_config("NULL argument");
        *out = int64_t(ds->ds.labeled_ids().size());
    });
}

pv_status pv_dataset_sample_id(const pv_dataset* ds, int64_t index, char* buf, size_t buf_len) {
    return wrap([&] {
        if (!ds || !buf || buf_len == 0) preview::throw_config("NULL argument");
        preview::require(index >= 0 && size_t(index) < ds->ds.size(), preview::errc::config,
                         "sample index out of range");
        const std::string& id = ds->ds.record(size_t(index)).id;
        std::strncpy(buf, id.c_str(), buf_len - 1);
        buf[buf_len - 1] = '\0';
    });
}

pv_status pv_dataset_resolution(const pv_dataset* ds, int32_t* height, int32_t* width) {
    return wrap([&] {
        if (!ds || !height || !width) preview::throw_config("NULL argument");
        *height = ds->ds.info().height;
        *width = ds->ds.info().width;
    });
}

pv_status pv_checkpoint_open(const char* path, pv_checkpoint** out) {
    return wrap([&] {
        if (!path || !out) preview::throw_config("NULL argument");
        *out = new pv_checkpoint{preview::nn::load_checkpoint(path)};
    });
}

void pv_checkpoint_close(pv_checkpoint* ck) { delete ck; }

pv_status pv_checkpoint_latent_dim(const pv_checkpoint* ck, int32_t* out) {
    return wrap([&] {
        if (!ck || !out) preview::throw_config("NULL argument");
        *out = ck->ck.cfg.d_t;
    });
}

pv_status pv_checkpoint_joint_count(const pv_checkpoint* ck, int32_t* out) {
    return wrap([&] {
        if (!ck || !out) preview::throw_config("NULL argument");
        *out = ck->ck.cfg.joint_count;
    });
}

namespace {

void encode_crop(const preview::nn::checkpoint& ck, const float* crop, float* latent_out) {
    using namespace preview;
    nn::encoder enc(ck.cfg);
    std::vector<nn::param_ref> params;
    std::vector<nn::buffer_ref> buffers;
    enc.collect(params, buffers);
    nn::restore_state(ck, params, buffers);
    nn::tensor x(1, 1, preprocess::k_crop_resolution, preprocess::k_crop_resolution);
    std::copy(crop, crop + preprocess::k_crop_pixels, x.data());
    nn::tensor latent;
    enc.forward(x, latent, false);
    std::copy(latent.data(), latent.data() + ck.cfg.d_t, latent_out);
}

}  // namespace

pv_status pv_encode(const pv_checkpoint* ck, const float* crop_4096, float* latent_out) {
    return wrap([&] {
        if (!ck || !crop_4096 || !latent_out) preview::throw_config("NULL argument");
        encode_crop(ck->ck, crop_4096, latent_out);
    });
}

pv_status pv_predict_pose(const pv_checkpoint* ck, const float* crop_4096, float* joints_out) {
    return wrap([&] {
        using namespace preview;
        if (!ck || !crop_4096 || !joints_out) throw_config("NULL argument");
        std::vector<float> latent(size_t(ck->ck.cfg.d_t));
        encode_crop(ck->ck, crop_4096, latent.data());
        nn::pose_head head(ck->ck.cfg);
        std::vector<nn::param_ref> params;
        head.collect(params);
        nn::restore_state(ck->ck, params, {});
        nn::tensor z(1, ck->ck.cfg.d_t, 1, 1);
        std::copy(latent.begin(), latent.end(), z.data());
        nn::tensor joints;
        head.forward(z, joints);
        std::copy(joints.data(), joints.data() + 3 * ck->ck.cfg.joint_count, joints_out);
    });
}

pv_status pv_mean_joint_error(const double* preds, const double* gts, int64_t frames,
                              int32_t joints, double* me_mm) {
    return wrap([&] {
        using namespace preview;
        if (!preds || !gts || !me_mm) throw_config("NULL argument");
        const size_t n = size_t(frames) * size_t(joints) * 3;
        *me_mm = metrics::mean_joint_error(std::span<const double>(preds, n),
                                           std::span<const double>(gts, n), int(frames), joints);
    });
}

pv_status pv_eval_metrics(const double* preds, const double* gts, int64_t frames, int32_t joints,
                          double* me_mm, double* js80, double* fs80) {
    return wrap([&] {
        using namespace preview;
        if (!preds || !gts) throw_config("NULL argument");
        const size_t n = size_t(frames) * size_t(joints) * 3;
        auto report = metrics::evaluate(std::span<const double>(preds, n),
                                        std::span<const double>(gts, n), int(frames), joints);
        if (me_mm) *me_mm = report.me_mm;
        if (js80) *js80 = report.js80;
        if (fs80) *fs80 = report.fs80;
    });
}

}  // extern "C"
