#include "core/nets.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace preview::nn {

void network_config::validate() const {
    require(d_t >= 1 && d_t <= 512, errc::config, "network_config: d_t must be in [1, 512]");
    require(input_resolution == 64, errc::config,
            "network_config: this architecture ladder is built for 64x64 inputs");
    require(base_channels >= 1, errc::config, "network_config: base_channels must be >= 1");
    require(joint_count >= 1, errc::config, "network_config: joint_count must be >= 1");
}

// Counts, with c = base_channels, d = d_t, kk = 16 (4x4 kernels):
//   encoder: conv1 (16c + c) + conv2 32c^2 + conv3 128c^2 + conv4 512c^2
//            + bn2..bn4 (4c + 8c + 16c) + conv5 (128 c d + d)
size_t encoder_param_count(const network_config& cfg) {
    const size_t c = size_t(cfg.base_channels), d = size_t(cfg.d_t);
    return (16 * c + c) + 32 * c * c + 4 * c + 128 * c * c + 8 * c + 512 * c * c + 16 * c +
           128 * c * d + d;
}

//   decoder: tconv1 128 c z + bn1 16c + tconv2 512c^2 + bn2 8c + tconv3 128c^2
//            + bn3 4c + tconv4 32c^2 + bn4 2c + tconv5 (16c + 1),
//   with z = d_t (+3 when CoM-conditioned)
size_t decoder_param_count(const network_config& cfg) {
    const size_t c = size_t(cfg.base_channels), z = size_t(cfg.decoder_input());
    return 128 * c * z + 16 * c + 512 * c * c + 8 * c + 128 * c * c + 4 * c + 32 * c * c + 2 * c +
           16 * c + 1;
}

size_t pose_head_param_count(const network_config& cfg) {
    return size_t(cfg.d_t) * 3 * size_t(cfg.joint_count) + 3 * size_t(cfg.joint_count);
}

//   discriminator: conv1 (16 c ch + c) + conv2..conv4 and bn2..bn4 as the
//   encoder + score linear (128c [+ 8c with pose] + 1)
//   [+ pose projection (3K * 8c + 8c)]
size_t discriminator_param_count(const network_config& cfg, conditioning cond) {
    const size_t c = size_t(cfg.base_channels);
    const size_t ch = (cond == conditioning::input_view || cond == conditioning::input_and_pose)
                          ? 2
                          : 1;
    const bool pose = cond == conditioning::pose || cond == conditioning::input_and_pose;
    size_t count = (16 * c * ch + c) + 32 * c * c + 4 * c + 128 * c * c + 8 * c + 512 * c * c +
                   16 * c;
    count += 128 * c + (pose ? 8 * c : 0) + 1;                           // score layer
    if (pose) count += 3 * size_t(cfg.joint_count) * 8 * c + 8 * c;      // pose projection
    return count;
}

conditioning conditioning_from_string(const std::string& s) {
    if (s == "none") return conditioning::none;
    if (s == "input") return conditioning::input_view;
    if (s == "pose") return conditioning::pose;
    if (s == "input_pose") return conditioning::input_and_pose;
    throw_config("unknown conditioning '" + s + "' (expected none|input|pose|input_pose)");
}

std::string conditioning_to_string(conditioning c) {
    switch (c) {
        case conditioning::none: return "none";
        case conditioning::input_view: return "input";
        case conditioning::pose: return "pose";
        case conditioning::input_and_pose: return "input_pose";
    }
    return "none";
}

// ---------------------------------------------------------------------------
// encoder

encoder::encoder(const network_config& cfg_) : cfg(cfg_) {
    cfg.validate();
    const int c = cfg.base_channels;
    conv1 = conv2d(1, c, 4, 2, 1, true);
    conv2 = conv2d(c, 2 * c, 4, 2, 1, false);
    conv3 = conv2d(2 * c, 4 * c, 4, 2, 1, false);
    conv4 = conv2d(4 * c, 8 * c, 4, 2, 1, false);
    conv5 = conv2d(8 * c, cfg.d_t, 4, 1, 0, true);
    bn2 = batchnorm2d(2 * c);
    bn3 = batchnorm2d(4 * c);
    bn4 = batchnorm2d(8 * c);
}

void encoder::init(rng64& rng) {
    conv1.init(rng);
    conv2.init(rng);
    conv3.init(rng);
    conv4.init(rng);
    conv5.init(rng);
    bn2.init(rng);
    bn3.init(rng);
    bn4.init(rng);
}

void encoder::forward(const tensor& x, tensor& latent, bool training) {
    require(x.c == 1 && x.h == cfg.input_resolution && x.w == cfg.input_resolution, errc::config,
            "encoder: expected (N,1,64,64) input, got " + x.shape_str());
    conv1.forward(x, h1_);
    act1.forward(h1_, a1_);
    conv2.forward(a1_, h2_);
    bn2.forward(h2_, b2_, training);
    act2.forward(b2_, a2_);
    conv3.forward(a2_, h3_);
    bn3.forward(h3_, b3_, training);
    act3.forward(b3_, a3_);
    conv4.forward(a3_, h4_);
    bn4.forward(h4_, b4_, training);
    act4.forward(b4_, a4_);
    tensor out;
    conv5.forward(a4_, out);
    latent.resize(out.n, cfg.d_t, 1, 1);
    std::copy(out.v.begin(), out.v.end(), latent.v.begin());
}

void encoder::backward(const tensor& dlatent, tensor* dx) {
    tensor d(dlatent.n, cfg.d_t, 1, 1);
    d.v = dlatent.v;
    conv5.backward(d, &d4_);
    act4.backward(d4_, d4_);
    bn4.backward(d4_, &d4_);
    conv4.backward(d4_, &d3_);
    act3.backward(d3_, d3_);
    bn3.backward(d3_, &d3_);
    conv3.backward(d3_, &d2_);
    act2.backward(d2_, d2_);
    bn2.backward(d2_, &d2_);
    conv2.backward(d2_, &d1_);
    act1.backward(d1_, d1_);
    conv1.backward(d1_, dx);
}

void encoder::collect(std::vector<param_ref>& params, std::vector<buffer_ref>& buffers) {
    conv1.collect("encoder.conv1", params);
    conv2.collect("encoder.conv2", params);
    bn2.collect("encoder.bn2", params, buffers);
    conv3.collect("encoder.conv3", params);
    bn3.collect("encoder.bn3", params, buffers);
    conv4.collect("encoder.conv4", params);
    bn4.collect("encoder.bn4", params, buffers);
    conv5.collect("encoder.conv5", params);
}

size_t encoder::param_count() const {
    return conv1.param_count() + conv2.param_count() + conv3.param_count() +
           conv4.param_count() + conv5.param_count() + bn2.param_count() + bn3.param_count() +
           bn4.param_count();
}

// ---------------------------------------------------------------------------
// decoder

decoder::decoder(const network_config& cfg_) : cfg(cfg_) {
    cfg.validate();
    const int c = cfg.base_channels;
    tconv1 = conv_transpose2d(cfg.decoder_input(), 8 * c, 4, 1, 0, false);
    tconv2 = conv_transpose2d(8 * c, 4 * c, 4, 2, 1, false);
    tconv3 = conv_transpose2d(4 * c, 2 * c, 4, 2, 1, false);
    tconv4 = conv_transpose2d(2 * c, c, 4, 2, 1, false);
    tconv5 = conv_transpose2d(c, 1, 4, 2, 1, true);
    bn1 = batchnorm2d(8 * c);
    bn2 = batchnorm2d(4 * c);
    bn3 = batchnorm2d(2 * c);
    bn4 = batchnorm2d(c);
}

void decoder::init(rng64& rng) {
    tconv1.init(rng);
    tconv2.init(rng);
    tconv3.init(rng);
    tconv4.init(rng);
    tconv5.init(rng);
    bn1.init(rng);
    bn2.init(rng);
    bn3.init(rng);
    bn4.init(rng);
}

void decoder::forward(const tensor& z, tensor& image, bool training) {
    require(int(z.sample_stride()) == cfg.decoder_input(), errc::config,
            "decoder: expected latent width " + std::to_string(cfg.decoder_input()) + ", got " +
                z.shape_str());
    z4_.resize(z.n, cfg.decoder_input(), 1, 1);
    z4_.v = z.v;
    tconv1.forward(z4_, h1_);
    bn1.forward(h1_, b1_, training);
    act1.forward(b1_, a1_);
    tconv2.forward(a1_, h2_);
    bn2.forward(h2_, b2_, training);
    act2.forward(b2_, a2_);
    tconv3.forward(a2_, h3_);
    bn3.forward(h3_, b3_, training);
    act3.forward(b3_, a3_);
    tconv4.forward(a3_, h4_);
    bn4.forward(h4_, b4_, training);
    act4.forward(b4_, a4_);
    tconv5.forward(a4_, h5_);
    out_act.forward(h5_, image);
}

void decoder::backward(const tensor& dimage, tensor* dz) {
    out_act.backward(dimage, d5_);
    tconv5.backward(d5_, &d4_);
    act4.backward(d4_, d4_);
    bn4.backward(d4_, &d4_);
    tconv4.backward(d4_, &d3_);
    act3.backward(d3_, d3_);
    bn3.backward(d3_, &d3_);
    tconv3.backward(d3_, &d2_);
    act2.backward(d2_, d2_);
    bn2.backward(d2_, &d2_);
    tconv2.backward(d2_, &d1_);
    act1.backward(d1_, d1_);
    bn1.backward(d1_, &d1_);
    tconv1.backward(d1_, dz);
}

void decoder::collect(std::vector<param_ref>& params, std::vector<buffer_ref>& buffers) {
    tconv1.collect("decoder.tconv1", params);
    bn1.collect("decoder.bn1", params, buffers);
    tconv2.collect("decoder.tconv2", params);
    bn2.collect("decoder.bn2", params, buffers);
    tconv3.collect("decoder.tconv3", params);
    bn3.collect("decoder.bn3", params, buffers);
    tconv4.collect("decoder.tconv4", params);
    bn4.collect("decoder.bn4", params, buffers);
    tconv5.collect("decoder.tconv5", params);
}

size_t decoder::param_count() const {
    return tconv1.param_count() + tconv2.param_count() + tconv3.param_count() +
           tconv4.param_count() + tconv5.param_count() + bn1.param_count() + bn2.param_count() +
           bn3.param_count() + bn4.param_count();
}

// ---------------------------------------------------------------------------
// pose head

pose_head::pose_head(const network_config& cfg_) : cfg(cfg_) {
    cfg.validate();
    fc = linear(cfg.d_t, 3 * cfg.joint_count);
}

void pose_head::init(rng64& rng) { fc.init(rng); }

void pose_head::forward(const tensor& latent, tensor& joints) {
    require(int(latent.sample_stride()) == cfg.d_t, errc::config,
            "pose_head: latent width mismatch " + latent.shape_str());
    fc.forward(latent, joints);
}

void pose_head::backward(const tensor& djoints, tensor* dlatent) { fc.backward(djoints, dlatent); }

void pose_head::collect(std::vector<param_ref>& params) { fc.collect("pose_head", params); }

// ---------------------------------------------------------------------------
// discriminator

discriminator::discriminator(const network_config& cfg_, conditioning cond_)
    : cfg(cfg_), cond(cond_) {
    cfg.validate();
    const int c = cfg.base_channels;
    conv1 = conv2d(input_channels(), c, 4, 2, 1, true);
    conv2 = conv2d(c, 2 * c, 4, 2, 1, false);
    conv3 = conv2d(2 * c, 4 * c, 4, 2, 1, false);
    conv4 = conv2d(4 * c, 8 * c, 4, 2, 1, false);
    bn2 = batchnorm2d(2 * c);
    bn3 = batchnorm2d(4 * c);
    bn4 = batchnorm2d(8 * c);
    const int feat = 8 * c * 4 * 4;
    score = linear(feat + (uses_pose() ? cond_dim() : 0), 1);
    if (uses_pose()) pose_proj = linear(3 * cfg.joint_count, cond_dim());
}

void discriminator::init(rng64& rng) {
    conv1.init(rng);
    conv2.init(rng);
    conv3.init(rng);
    conv4.init(rng);
    bn2.init(rng);
    bn3.init(rng);
    bn4.init(rng);
    score.init(rng);
    if (uses_pose()) pose_proj.init(rng);
}

void discriminator::forward(const tensor& image, const tensor* pose, tensor& scores,
                            bool training) {
    require(image.c == input_channels() && image.h == 64 && image.w == 64, errc::config,
            "discriminator: expected (N," + std::to_string(input_channels()) +
                ",64,64) input, got " + image.shape_str());
    if (uses_pose()) {
        require(pose != nullptr && pose->n == image.n &&
                    int(pose->sample_stride()) == 3 * cfg.joint_count,
                errc::config, "discriminator: pose condition of width 3K required");
    } else {
        require(pose == nullptr, errc::config,
                "discriminator: pose condition passed but conditioning is disabled");
    }
    conv1.forward(image, h1_);
    act1.forward(h1_, a1_);
    conv2.forward(a1_, h2_);
    bn2.forward(h2_, b2_, training);
    act2.forward(b2_, a2_);
    conv3.forward(a2_, h3_);
    bn3.forward(h3_, b3_, training);
    act3.forward(b3_, a3_);
    conv4.forward(a3_, h4_);
    bn4.forward(h4_, b4_, training);
    act4.forward(b4_, a4_);

    const int feat_dim = 8 * cfg.base_channels * 16;
    const int total = feat_dim + (uses_pose() ? cond_dim() : 0);
    feat_.resize(image.n, total, 1, 1);
    if (uses_pose()) {
        proj_in_ = *pose;
        pose_proj.forward(proj_in_, proj_);
    }
    for (int n = 0; n < image.n; ++n) {
        std::copy(a4_.sample(n), a4_.sample(n) + feat_dim, feat_.sample(n));
        if (uses_pose())
            std::copy(proj_.sample(n), proj_.sample(n) + cond_dim(), feat_.sample(n) + feat_dim);
    }
    score.forward(feat_, scores);
}

void discriminator::backward(const tensor& dscores, tensor* dimage) {
    score.backward(dscores, &dfeat_);
    const int feat_dim = 8 * cfg.base_channels * 16;
    tensor da4(a4_.n, a4_.c, a4_.h, a4_.w);
    for (int n = 0; n < a4_.n; ++n)
        std::copy(dfeat_.sample(n), dfeat_.sample(n) + feat_dim, da4.sample(n));
    if (uses_pose()) {
        tensor dproj(dfeat_.n, cond_dim(), 1, 1);
        for (int n = 0; n < dfeat_.n; ++n)
            std::copy(dfeat_.sample(n) + feat_dim, dfeat_.sample(n) + feat_dim + cond_dim(),
                      dproj.sample(n));
        pose_proj.backward(dproj, nullptr);  // condition input is treated as constant
    }
    act4.backward(da4, da4);
    bn4.backward(da4, &d4_);
    conv4.backward(d4_, &d3_);
    act3.backward(d3_, d3_);
    bn3.backward(d3_, &d3_);
    conv3.backward(d3_, &d2_);
    act2.backward(d2_, d2_);
    bn2.backward(d2_, &d2_);
    conv2.backward(d2_, &d1_);
    act1.backward(d1_, d1_);
    conv1.backward(d1_, dimage);
}

void discriminator::collect(std::vector<param_ref>& params, std::vector<buffer_ref>& buffers) {
    conv1.collect("discriminator.conv1", params);
    conv2.collect("discriminator.conv2", params);
    bn2.collect("discriminator.bn2", params, buffers);
    conv3.collect("discriminator.conv3", params);
    bn3.collect("discriminator.bn3", params, buffers);
    conv4.collect("discriminator.conv4", params);
    bn4.collect("discriminator.bn4", params, buffers);
    score.collect("discriminator.score", params);
    if (uses_pose()) pose_proj.collect("discriminator.pose_proj", params);
}

size_t discriminator::param_count() const {
    size_t count = conv1.param_count() + conv2.param_count() + conv3.param_count() +
                   conv4.param_count() + bn2.param_count() + bn3.param_count() +
                   bn4.param_count() + score.param_count();
    if (uses_pose()) count += pose_proj.param_count();
    return count;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char k_magic[8] = {'P', 'V', 'C', 'K', '0', '0', '0', '1'};

using nlohmann::ordered_json;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const network_config& cfg,
                     const checkpoint_meta& meta, const std::vector<param_ref>& params,
                     const std::vector<buffer_ref>& buffers) {
    ordered_json header;
    header["version"] = 1;
    header["config"] = {{"d_t", cfg.d_t},
                        {"base_channels", cfg.base_channels},
                        {"input_resolution", cfg.input_resolution},
                        {"joint_count", cfg.joint_count},
                        {"com_conditioning", cfg.com_conditioning}};
    header["meta"] = {{"mean_com", {meta.mean_com.x, meta.mean_com.y, meta.mean_com.z}},
                      {"crop_cube_side_mm", meta.crop_cube_side_mm},
                      {"depth_range_mm", meta.depth_range_mm},
                      {"com_jitter_mm", meta.com_jitter_mm},
                      {"jitter_seed", meta.jitter_seed},
                      {"dropout_holes", meta.dropout_holes},
                      {"mode", meta.mode}};
    header["tensors"] = ordered_json::array();

    std::vector<const tensor*> order;
    size_t offset = 0;
    auto add = [&](const std::string& name, const tensor* t) {
        header["tensors"].push_back(
            {{"name", name}, {"shape", {t->n, t->c, t->h, t->w}}, {"offset", offset}});
        order.push_back(t);
        offset += t->size();
    };
    for (const auto& p : params) add(p.name, p.value);
    for (const auto& b : buffers) add(b.name, b.value);

    const std::string htext = header.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw_io("cannot write checkpoint: " + path.string());
    f.write(k_magic, 8);
    const std::uint64_t hlen = htext.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(htext.data(), std::streamsize(htext.size()));
    for (const tensor* t : order)
        f.write(reinterpret_cast<const char*>(t->data()),
                std::streamsize(t->size() * sizeof(float)));
    if (!f) throw_io("checkpoint write failed: " + path.string());
}

checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open checkpoint: " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, k_magic, 8) != 0)
        throw_io("not a checkpoint file (bad magic): " + path.string());
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    std::string htext(hlen, '\0');
    f.read(htext.data(), std::streamsize(hlen));
    if (!f) throw_io("truncated checkpoint header: " + path.string());

    ordered_json header;
    try {
        header = ordered_json::parse(htext);
    } catch (const std::exception& e) {
        throw_io("corrupt checkpoint header: " + std::string(e.what()));
    }

    checkpoint ck;
    ck.version = header.at("version").get<int>();
    require(ck.version == 1, errc::io, "unsupported checkpoint version");
    const auto& jc = header.at("config");
    ck.cfg.d_t = jc.at("d_t").get<int>();
    ck.cfg.base_channels = jc.at("base_channels").get<int>();
    ck.cfg.input_resolution = jc.at("input_resolution").get<int>();
    ck.cfg.joint_count = jc.at("joint_count").get<int>();
    ck.cfg.com_conditioning = jc.at("com_conditioning").get<bool>();
    const auto& jm = header.at("meta");
    ck.meta.mean_com = {jm.at("mean_com")[0].get<double>(), jm.at("mean_com")[1].get<double>(),
                        jm.at("mean_com")[2].get<double>()};
    ck.meta.crop_cube_side_mm = jm.at("crop_cube_side_mm").get<double>();
    ck.meta.depth_range_mm = jm.at("depth_range_mm").get<double>();
    ck.meta.com_jitter_mm = jm.at("com_jitter_mm").get<double>();
    ck.meta.jitter_seed = jm.at("jitter_seed").get<std::uint64_t>();
    ck.meta.dropout_holes = jm.at("dropout_holes").get<int>();
    ck.meta.mode = jm.at("mode").get<std::string>();

    for (const auto& jt : header.at("tensors")) {
        tensor t(jt.at("shape")[0].get<int>(), jt.at("shape")[1].get<int>(),
                 jt.at("shape")[2].get<int>(), jt.at("shape")[3].get<int>());
        f.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(float)));
        if (!f) throw_io("truncated checkpoint data: " + path.string());
        ck.tensors.emplace(jt.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

void restore_state(const checkpoint& ck, const std::vector<param_ref>& params,
                   const std::vector<buffer_ref>& buffers) {
    auto restore = [&](const std::string& name, tensor* dst) {
        auto it = ck.tensors.find(name);
        require(it != ck.tensors.end(), errc::io, "checkpoint is missing tensor '" + name + "'");
        require(it->second.same_shape(*dst), errc::io,
                "checkpoint tensor '" + name + "' has shape " + it->second.shape_str() +
                    ", expected " + dst->shape_str());
        dst->v = it->second.v;
    };
    for (const auto& p : params) restore(p.name, p.value);
    for (const auto& b : buffers) restore(b.name, b.value);
}

}  // namespace preview::nn
