#include "core/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "core/rng.hpp"
#include "json.hpp"

namespace preview::dataio {

namespace {

using nlohmann::ordered_json;

[[noreturn]] void parse_fail(const std::string& path, const std::string& what) {
    throw_io("manifest: field '" + path + "': " + what);
}

const ordered_json& expect(const ordered_json& j, const std::string& key,
                           const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) parse_fail(path + key, "missing");
    return *it;
}

double as_number(const ordered_json& j, const std::string& path) {
    if (!j.is_number()) parse_fail(path, "expected a number");
    return j.get<double>();
}

int as_int(const ordered_json& j, const std::string& path) {
    if (!j.is_number_integer()) parse_fail(path, "expected an integer");
    return j.get<int>();
}

std::string as_string(const ordered_json& j, const std::string& path) {
    if (!j.is_string()) parse_fail(path, "expected a string");
    return j.get<std::string>();
}

camera_view parse_view(const ordered_json& j, const std::string& path) {
    if (!j.is_object()) parse_fail(path, "expected an object");
    camera_view v;
    v.id = as_string(expect(j, "id", path + "."), path + ".id");
    v.fx = as_number(expect(j, "fx", path + "."), path + ".fx");
    v.fy = as_number(expect(j, "fy", path + "."), path + ".fy");
    v.cx = as_number(expect(j, "cx", path + "."), path + ".cx");
    v.cy = as_number(expect(j, "cy", path + "."), path + ".cy");
    const auto& ext = expect(j, "extrinsics", path + ".");
    if (!ext.is_array() || ext.size() != 16) parse_fail(path + ".extrinsics", "expected 16 reals");
    std::array<double, 16> m{};
    for (size_t i = 0; i < 16; ++i) m[i] = as_number(ext[i], path + ".extrinsics");
    v.extrinsics = mat4_to_rigid(m);
    if (!rotation_is_orthonormal(v.extrinsics.R, 1e-6))
        parse_fail(path + ".extrinsics", "rotation block is not orthonormal (tolerance 1e-6)");
    if (std::abs(m[12]) > 0 || std::abs(m[13]) > 0 || std::abs(m[14]) > 0 || m[15] != 1.0)
        parse_fail(path + ".extrinsics", "last row must be [0, 0, 0, 1]");
    return v;
}

}  // namespace

manifest parse_manifest_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw_io(std::string("manifest: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) parse_fail("", "expected a JSON object");

    static const std::unordered_set<std::string> known = {
        "name", "num_samples", "units", "resolution", "depth_format", "views", "samples", "meta"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) parse_fail(it.key(), "unknown key");

    manifest m;
    m.name = as_string(expect(j, "name", ""), "name");
    m.num_samples = as_int(expect(j, "num_samples", ""), "num_samples");
    if (as_string(expect(j, "units", ""), "units") != "mm")
        parse_fail("units", "must be \"mm\"");
    if (as_string(expect(j, "depth_format", ""), "depth_format") != "f32le")
        parse_fail("depth_format", "must be \"f32le\"");

    const auto& res = expect(j, "resolution", "");
    if (!res.is_array() || res.size() != 2) parse_fail("resolution", "expected [H, W]");
    m.height = as_int(res[0], "resolution[0]");
    m.width = as_int(res[1], "resolution[1]");
    if (m.height <= 0 || m.width <= 0) parse_fail("resolution", "must be positive");

    const auto& views = expect(j, "views", "");
    if (!views.is_array() || views.empty()) parse_fail("views", "expected a non-empty array");
    for (size_t i = 0; i < views.size(); ++i) {
        auto v = parse_view(views[i], "views[" + std::to_string(i) + "]");
        v.height = m.height;
        v.width = m.width;
        m.rig.views.push_back(std::move(v));
    }

    const auto& samples = expect(j, "samples", "");
    if (!samples.is_array()) parse_fail("samples", "expected an array");
    for (size_t i = 0; i < samples.size(); ++i) {
        const std::string path = "samples[" + std::to_string(i) + "]";
        const auto& js = samples[i];
        if (!js.is_object()) parse_fail(path, "expected an object");
        sample_record rec;
        rec.id = as_string(expect(js, "id", path + "."), path + ".id");
        const auto& files = expect(js, "files", path + ".");
        if (!files.is_object()) parse_fail(path + ".files", "expected an object");
        for (auto it = files.begin(); it != files.end(); ++it) {
            bool known_view = false;
            for (const auto& v : m.rig.views) known_view |= v.id == it.key();
            if (!known_view) parse_fail(path + ".files." + it.key(), "unknown view id");
            rec.files[it.key()] = as_string(it.value(), path + ".files." + it.key());
        }
        for (const auto& v : m.rig.views)
            if (!rec.files.count(v.id)) parse_fail(path + ".files", "missing view '" + v.id + "'");
        rec.labeled = false;
        if (auto it = js.find("labeled"); it != js.end()) {
            if (!it->is_boolean()) parse_fail(path + ".labeled", "expected a boolean");
            rec.labeled = it->get<bool>();
        }
        if (auto it = js.find("joints"); it != js.end() && !it->is_null()) {
            if (!it->is_array() || it->empty()) parse_fail(path + ".joints", "expected K x 3");
            joint_set joints;
            for (size_t k = 0; k < it->size(); ++k) {
                const auto& row = (*it)[k];
                if (!row.is_array() || row.size() != 3)
                    parse_fail(path + ".joints[" + std::to_string(k) + "]", "expected 3 reals");
                for (size_t c = 0; c < 3; ++c) {
                    double val = as_number(row[c], path + ".joints");
                    if (!std::isfinite(val)) parse_fail(path + ".joints", "non-finite value");
                    joints.positions.push_back(val);
                }
            }
            rec.joints = std::move(joints);
        }
        if (rec.labeled != rec.joints.has_value())
            parse_fail(path, "labeled flag and presence of joints must agree");
        m.samples.push_back(std::move(rec));
    }

    if (int(m.samples.size()) != m.num_samples)
        parse_fail("num_samples", "does not match the number of sample entries");
    return m;
}

std::string manifest_to_json(const manifest& m) {
    ordered_json j;
    j["name"] = m.name;
    j["num_samples"] = m.num_samples;
    j["units"] = "mm";
    j["resolution"] = {m.height, m.width};
    j["depth_format"] = "f32le";
    j["views"] = ordered_json::array();
    for (const auto& v : m.rig.views) {
        ordered_json jv;
        jv["id"] = v.id;
        jv["fx"] = v.fx;
        jv["fy"] = v.fy;
        jv["cx"] = v.cx;
        jv["cy"] = v.cy;
        jv["extrinsics"] = rigid_to_mat4(v.extrinsics);
        j["views"].push_back(std::move(jv));
    }
    j["samples"] = ordered_json::array();
    for (const auto& rec : m.samples) {
        ordered_json js;
        js["id"] = rec.id;
        js["files"] = ordered_json::object();
        for (const auto& [view_id, path] : rec.files) js["files"][view_id] = path;
        if (rec.joints) {
            ordered_json rows = ordered_json::array();
            for (int k = 0; k < rec.joints->joint_count(); ++k)
                rows.push_back({rec.joints->positions[size_t(3 * k)],
                                rec.joints->positions[size_t(3 * k + 1)],
                                rec.joints->positions[size_t(3 * k + 2)]});
            js["joints"] = std::move(rows);
        }
        js["labeled"] = rec.labeled;
        j["samples"].push_back(std::move(js));
    }
    return j.dump(2) + "\n";
}

void write_depth_raw(const std::filesystem::path& path, const depth_image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(img.values.data()),
            std::streamsize(img.values.size() * sizeof(float)));
    if (!f) throw_io("write failed: " + path.string());
}

depth_image read_depth_raw(const std::filesystem::path& path, int height, int width,
                           const std::string& sample_id) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw_io("sample '" + sample_id + "': missing depth file " + path.string());
    const auto bytes = size_t(f.tellg());
    const size_t expected = size_t(height) * size_t(width) * sizeof(float);
    if (bytes != expected)
        throw_io("sample '" + sample_id + "': depth file " + path.string() + " holds " +
                 std::to_string(bytes / sizeof(float)) + " values, expected " +
                 std::to_string(size_t(height) * size_t(width)));
    depth_image img;
    img.height = height;
    img.width = width;
    img.values.resize(size_t(height) * size_t(width));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(img.values.data()), std::streamsize(expected));
    if (!f) throw_io("sample '" + sample_id + "': short read from " + path.string());
    for (float v : img.values)
        if (!(v >= 0.0f) || !std::isfinite(v))
            throw_io("sample '" + sample_id + "': depth values must be finite and >= 0");
    return img;
}

dataset dataset::load(const std::filesystem::path& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw_io("cannot open manifest: " + manifest_path.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    dataset ds;
    ds.m_ = parse_manifest_json(text);
    ds.root_ = manifest_path.parent_path();
    ds.build_index();
    return ds;
}

dataset dataset::from_manifest(manifest m, std::filesystem::path root) {
    dataset ds;
    ds.m_ = std::move(m);
    ds.root_ = std::move(root);
    ds.build_index();
    return ds;
}

void dataset::build_index() {
    index_.clear();
    for (size_t i = 0; i < m_.samples.size(); ++i) {
        auto [_, inserted] = index_.emplace(m_.samples[i].id, i);
        if (!inserted) throw_io("manifest: duplicate sample id '" + m_.samples[i].id + "'");
    }
}

const sample_record& dataset::record_by_id(const std::string& id) const {
    auto it = index_.find(id);
    require(it != index_.end(), errc::config, "unknown sample id '" + id + "'");
    return m_.samples[it->second];
}

depth_image dataset::load_view(const sample_record& rec, const std::string& view_id) const {
    auto it = rec.files.find(view_id);
    require(it != rec.files.end(), errc::config,
            "sample '" + rec.id + "' has no file for view '" + view_id + "'");
    return read_depth_raw(root_ / it->second, m_.height, m_.width, rec.id);
}

multi_view_sample dataset::load_sample(const std::string& id) const {
    const auto& rec = record_by_id(id);
    require(m_.rig.views.size() >= 2, errc::config, "dataset has fewer than two views");
    multi_view_sample s;
    s.id = rec.id;
    s.view1 = load_view(rec, m_.rig.views[0].id);
    s.view2 = load_view(rec, m_.rig.views[1].id);
    s.joints = rec.joints;
    s.labeled = rec.labeled;
    return s;
}

std::vector<std::string> dataset::labeled_ids() const {
    std::vector<std::string> out;
    for (const auto& rec : m_.samples)
        if (rec.labeled) out.push_back(rec.id);
    return out;
}

std::vector<std::string> dataset::unlabeled_ids() const {
    std::vector<std::string> out;
    for (const auto& rec : m_.samples)
        if (!rec.labeled) out.push_back(rec.id);
    return out;
}

void dataset_split::validate_disjoint() const {
    std::unordered_set<std::string> seen;
    auto check = [&](const std::vector<std::string>& ids, const char* which) {
        for (const auto& id : ids)
            require(seen.insert(id).second, errc::config,
                    std::string("split: id '") + id + "' appears twice (in " + which + ")");
    };
    check(train_labeled, "train_labeled");
    check(train_unlabeled, "train_unlabeled");
    check(validation, "validation");
    check(test, "test");
}

namespace {

// Deterministic partial Fisher-Yates draw of n items.
std::vector<std::string> draw_without_replacement(std::vector<std::string> pool, size_t n,
                                                  rng64& rng) {
    require(n <= pool.size(), errc::config, "requested more items than the pool holds");
    for (size_t i = 0; i < n; ++i) {
        size_t j = i + size_t(rng.index(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    return pool;
}

}  // namespace

dataset_split canonical_split(const dataset& ds, size_t validation_count, size_t test_count,
                              std::uint64_t seed) {
    auto labeled = ds.labeled_ids();
    require(validation_count + test_count <= labeled.size(), errc::config,
            "canonical_split: not enough labeled samples for validation + test");
    rng64 rng(derive_seed(seed, "canonical_split"));
    auto shuffled = draw_without_replacement(labeled, labeled.size(), rng);
    dataset_split s;
    s.test.assign(shuffled.begin(), shuffled.begin() + ptrdiff_t(test_count));
    s.validation.assign(shuffled.begin() + ptrdiff_t(test_count),
                        shuffled.begin() + ptrdiff_t(test_count + validation_count));
    s.train_labeled.assign(shuffled.begin() + ptrdiff_t(test_count + validation_count),
                           shuffled.end());
    s.train_unlabeled = ds.unlabeled_ids();
    s.validate_disjoint();
    return s;
}

dataset_split subsample_labeled(const dataset_split& base, size_t n, std::uint64_t seed) {
    require(n <= base.train_labeled.size(), errc::config,
            "subsample_labeled: n exceeds the labeled pool (" +
                std::to_string(base.train_labeled.size()) + ")");
    rng64 rng(derive_seed(seed, "subsample_labeled"));
    auto chosen = draw_without_replacement(base.train_labeled, n, rng);
    std::unordered_set<std::string> keep(chosen.begin(), chosen.end());

    dataset_split s = base;
    s.train_labeled = std::move(chosen);
    for (const auto& id : base.train_labeled)
        if (!keep.count(id)) s.train_unlabeled.push_back(id);
    s.validate_disjoint();
    return s;
}

dataset_split subsample_labeled(const dataset& ds, size_t n, std::uint64_t seed) {
    dataset_split base;
    base.train_labeled = ds.labeled_ids();
    base.train_unlabeled = ds.unlabeled_ids();
    return subsample_labeled(base, n, seed);
}

dataset_split subsample_validation(const dataset_split& split, size_t original_validation_size,
                                   std::uint64_t seed) {
    require(split.train_labeled.size() >= 1, errc::config,
            "subsample_validation: labeled set is empty");
    require(original_validation_size <= split.validation.size(), errc::config,
            "subsample_validation: original_validation_size exceeds the validation set");
    const size_t cap = split.train_labeled.size() * 3 / 10;  // floor(0.3 |L|)
    dataset_split s = split;
    if (cap == 0) {
        s.validation.clear();
        s.validation_disabled = true;
        return s;
    }
    const size_t target = std::min(original_validation_size, cap);
    rng64 rng(derive_seed(seed, "subsample_validation"));
    std::vector<std::string> pool(split.validation.begin(),
                                  split.validation.begin() + ptrdiff_t(original_validation_size));
    s.validation = draw_without_replacement(std::move(pool), target, rng);
    s.validation_disabled = false;
    return s;
}

split_view::split_view(const dataset& ds, dataset_split split)
    : ds_(&ds), split_(std::move(split)) {
    split_.validate_disjoint();
    masked_.insert(split_.train_unlabeled.begin(), split_.train_unlabeled.end());
}

multi_view_sample split_view::load(const std::string& id) const {
    multi_view_sample s = ds_->load_sample(id);
    if (masked_.count(id)) {
        s.joints.reset();
        s.labeled = false;
    }
    return s;
}

}  // namespace preview::dataio
