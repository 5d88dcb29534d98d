#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "core/common.hpp"
#include "core/geometry.hpp"

namespace preview::dataio {

// Single-view depth map in millimetres. Background/invalid pixels are stored
// as exactly 0; valid pixels are strictly positive and finite.
struct depth_image {
    int height = 0, width = 0;
    std::vector<float> values;

    float at(int r, int c) const { return values[size_t(r) * size_t(width) + size_t(c)]; }
    float& at(int r, int c) { return values[size_t(r) * size_t(width) + size_t(c)]; }
    bool valid(int r, int c) const { return at(r, c) > 0.0f; }
    size_t pixel_count() const { return size_t(height) * size_t(width); }
};

// K x 3 joint positions in millimetres, expressed in the view-1 camera frame.
struct joint_set {
    std::vector<double> positions;

    int joint_count() const { return int(positions.size() / 3); }
};

struct sample_record {
    std::string id;
    std::map<std::string, std::string> files;  // view id -> path relative to the dataset root
    std::optional<joint_set> joints;
    bool labeled = false;
};

struct manifest {
    std::string name;
    int num_samples = 0;
    int height = 0, width = 0;
    camera_rig rig;
    std::vector<sample_record> samples;
};

// Parses and validates a manifest document. Errors carry the JSON field path.
manifest parse_manifest_json(const std::string& text);

// Canonical serialization; generating the same manifest twice yields
// identical bytes.
std::string manifest_to_json(const manifest& m);

struct multi_view_sample {
    std::string id;
    depth_image view1, view2;
    std::optional<joint_set> joints;
    bool labeled = false;
};

// Raw depth file format: little-endian float32, row-major, exactly H*W
// values, no header.
void write_depth_raw(const std::filesystem::path& path, const depth_image& img);
depth_image read_depth_raw(const std::filesystem::path& path, int height, int width,
                           const std::string& sample_id);

// Lazy dataset handle: the manifest is held in memory, depth files are read
// on demand.
class dataset {
  public:
    static dataset load(const std::filesystem::path& manifest_path);
    static dataset from_manifest(manifest m, std::filesystem::path root = {});

    const manifest& info() const { return m_; }
    size_t size() const { return m_.samples.size(); }
    const std::filesystem::path& root() const { return root_; }
    const camera_rig& rig() const { return m_.rig; }

    const sample_record& record(size_t index) const { return m_.samples[index]; }
    const sample_record& record_by_id(const std::string& id) const;
    bool contains(const std::string& id) const { return index_.count(id) > 0; }

    depth_image load_view(const sample_record& rec, const std::string& view_id) const;
    multi_view_sample load_sample(const std::string& id) const;

    std::vector<std::string> labeled_ids() const;
    std::vector<std::string> unlabeled_ids() const;

  private:
    manifest m_;
    std::filesystem::path root_;
    std::unordered_map<std::string, size_t> index_;

    void build_index();
};

struct dataset_split {
    std::vector<std::string> train_labeled;
    std::vector<std::string> train_unlabeled;
    std::vector<std::string> validation;
    std::vector<std::string> test;
    bool validation_disabled = false;

    void validate_disjoint() const;
};

// Initial split of a dataset: labeled samples are shuffled and dealt into
// test / validation / train_labeled; unlabeled samples go to train_unlabeled.
dataset_split canonical_split(const dataset& ds, size_t validation_count, size_t test_count,
                              std::uint64_t seed);

// Keeps n uniformly chosen labeled training ids; the rest move to the
// unlabeled pool (their annotations are masked by split_view).
dataset_split subsample_labeled(const dataset_split& base, size_t n, std::uint64_t seed);
dataset_split subsample_labeled(const dataset& ds, size_t n, std::uint64_t seed);

// |V| = min(original_validation_size, floor(0.3 |L|)), sampled uniformly from
// the split's validation set. A zero budget disables validation and sets the
// warning flag instead of throwing.
dataset_split subsample_validation(const dataset_split& split, size_t original_validation_size,
                                   std::uint64_t seed);

// Split-aware access: samples in train_unlabeled never expose annotations.
class split_view {
  public:
    split_view(const dataset& ds, dataset_split split);

    const dataset_split& split() const { return split_; }
    const dataset& data() const { return *ds_; }
    multi_view_sample load(const std::string& id) const;

  private:
    const dataset* ds_;
    dataset_split split_;
    std::unordered_set<std::string> masked_;
};

}  // namespace preview::dataio
