#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/adam.hpp"
#include "core/dataio.hpp"
#include "core/losses.hpp"
#include "core/nets.hpp"
#include "core/preprocess.hpp"

namespace preview::trainer {

enum class train_mode { preview, autoencoder, semi, semi_adversarial, supervised };

train_mode mode_from_string(const std::string& s);
std::string mode_to_string(train_mode m);

struct train_config {
    train_mode mode = train_mode::preview;
    int epochs = 100;
    int batch_size = 128;
    double learning_rate = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    std::uint64_t seed = 1;
    nn::network_config net;
    losses::loss_weights weights;
    nn::conditioning adv_conditioning = nn::conditioning::none;
    bool early_stopping = true;
    preprocess::crop_params crop;

    void validate() const;
};

struct batch_scalars {
    double recon = 0.0;  // mean reconstruction loss over the batch
    double pose = 0.0;   // mean pose loss contribution (unweighted, labeled rows / batch size)
    double adv = 0.0;    // mean generator adversarial loss
    double total = 0.0;  // recon + lambda_l * pose + lambda_a * adv
    int labeled_count = 0;
    int batch_size = 0;
};

struct epoch_scalars {
    double recon = 0.0, pose = 0.0, adv = 0.0, total = 0.0;
    double val_me_mm = std::numeric_limits<double>::quiet_NaN();
};

struct train_report {
    std::string mode;
    std::vector<epoch_scalars> epochs;
    std::vector<std::vector<batch_scalars>> batches;  // per epoch
    int best_epoch = -1;
    double best_val_me_mm = std::numeric_limits<double>::quiet_NaN();
    double wall_clock_sec = 0.0;
    std::string checkpoint_path;
    std::vector<std::string> warnings;

    std::string to_json() const;  // wall-clock and paths included; see docs
    std::string epochs_csv() const;
};

// ---------------------------------------------------------------------------
// Preprocessing cache: crops, CoMs and normalized supervision targets for
// every sample a protocol touches, computed once up front.

struct prepared_sample {
    std::string id;
    std::array<float, preprocess::k_crop_pixels> crop1{};
    std::array<float, preprocess::k_crop_pixels> crop2{};
    vec3 com1, com2;
    bool labeled = false;
    bool has_view2 = false;
    std::vector<float> target_norm;   // (joints - com1) / (side/2), 3K, labeled only
    std::vector<double> joints_mm;    // ground truth in the view-1 camera frame
};

struct prepared_dataset {
    std::vector<prepared_sample> samples;
    std::unordered_map<std::string, size_t> by_id;
    std::vector<size_t> train_labeled, train_unlabeled, validation, test;  // indices
    vec3 mean_com;  // over the training pool; decoder conditioning reference
    int joint_count = 0;
    preprocess::crop_params crop;

    const prepared_sample& at(const std::string& id) const;
    std::vector<size_t> indices_of(const std::vector<std::string>& ids) const;

    // Re-splits the training pool: samples in `unlabeled_ids` behave as
    // unlabeled (annotations masked for training; evaluation splits are
    // untouched).
    void set_training_split(const std::vector<std::string>& labeled_ids,
                            const std::vector<std::string>& unlabeled_ids);
};

prepared_dataset prepare_dataset(const dataio::split_view& view,
                                 const preprocess::crop_params& crop);

// ---------------------------------------------------------------------------
// Training engine: owns the networks and optimizers and performs one
// optimizer step per batch. The protocol drivers below feed it batches.

class training_engine {
  public:
    training_engine(const prepared_dataset& data, const train_config& cfg);

    batch_scalars step_batch(std::span<const size_t> indices);

    // Mean joint error (mm) of the current pose head over the given samples,
    // evaluated with frozen normalization statistics.
    double evaluate_me(std::span<const size_t> indices);

    // Mean reconstruction loss over the given samples in evaluation mode.
    double evaluate_recon(std::span<const size_t> indices);

    void snapshot_params();
    void restore_snapshot();

    nn::checkpoint make_checkpoint(const std::string& mode_name) const;
    void load_checkpoint_state(const nn::checkpoint& ck);

    nn::encoder& enc() { return enc_; }
    nn::decoder& dec() { return dec_; }
    nn::pose_head& head() { return head_; }
    nn::discriminator* disc() { return disc_ ? &*disc_ : nullptr; }

    // Discriminator scores in evaluation mode for real/generated second
    // views of the given samples (adversarial analysis + tests).
    void discriminator_scores(std::span<const size_t> indices, std::vector<float>& real,
                              std::vector<float>& fake);

  private:
    const prepared_dataset* data_;
    train_config cfg_;
    nn::encoder enc_;
    nn::decoder dec_;
    nn::pose_head head_;
    std::optional<nn::discriminator> disc_;
    nn::adam opt_main_;   // encoder + decoder (+ pose head handled separately)
    nn::adam opt_head_;
    nn::adam opt_disc_;
    std::vector<float> snapshot_;

    bool wants_decoder() const;
    bool wants_pose() const;
    void assemble_inputs(std::span<const size_t> indices, nn::tensor& x1, nn::tensor& cond,
                         nn::tensor& target, std::vector<char>& labeled_mask,
                         nn::tensor& gt_pose) const;
    void forward_generator(const nn::tensor& x1, const nn::tensor& cond, bool training,
                           nn::tensor& latent, nn::tensor& zc, nn::tensor& pred) ;
    void discriminator_update(const nn::tensor& x1, const nn::tensor& fake,
                              const nn::tensor& target, std::span<const char> labeled_mask,
                              const nn::tensor& gt_pose, const nn::tensor& pred_pose);
    double generator_adversarial(const nn::tensor& x1, const nn::tensor& fake,
                                 const nn::tensor& pred_pose, nn::tensor& dfake);
    std::vector<nn::param_ref> all_params();
    std::vector<nn::buffer_ref> all_buffers();

    friend struct engine_test_access;
};

// ---------------------------------------------------------------------------
// Protocol drivers.

struct train_result {
    train_report report;
    nn::checkpoint ck;
};

// Dispatches on cfg.mode: unsupervised pre-training (preview / autoencoder),
// semi-supervised training with balanced batches, the supervised-only
// ablation, or the adversarial variant.
train_result run_training(const dataio::split_view& data, const train_config& cfg);
train_result run_training(const prepared_dataset& prepared, const train_config& cfg);

struct probe_config {
    size_t n_labeled = 100;
    int repeats = 10;
    std::uint64_t seed = 1;
    int epochs = 300;             // pose-loss refinement after the warm start
    double learning_rate = 1e-3;  // decays 300x over the refinement
    int batch_size = 128;
    double huber_epsilon = 0.1;
};

struct probe_report {
    std::vector<double> per_repeat_me_mm;
    double mean_me_mm = 0.0;
    double std_me_mm = 0.0;
    size_t n_labeled = 0;
    int repeats = 0;

    std::string to_json() const;
};

// Latent codes for a sample, by any means (frozen encoder in production,
// oracles in tests).
using latent_fn = std::function<void(const prepared_sample&, std::span<float>)>;

// Frozen-encoder linear probe: per repeat, resample n labeled samples and a
// validation subset (|V| <= 0.3 |L|), train only the pose head, report the
// test-set mean joint error; mean and standard deviation over repeats.
probe_report linear_probe(const prepared_dataset& data, const nn::checkpoint& ck,
                          const probe_config& cfg);
probe_report linear_probe_with_latents(const prepared_dataset& data, int d_t,
                                       const latent_fn& latents, const probe_config& cfg);

// Frozen-encoder latent codes (evaluation mode) for the given samples.
std::vector<std::vector<float>> compute_latents(const prepared_dataset& data,
                                                const nn::checkpoint& ck,
                                                std::span<const size_t> indices);

// Balanced batch index stream for semi-supervised training: every batch is
// half labeled / half unlabeled; an epoch is one pass over the unlabeled
// pool; the labeled pool is reshuffled and reused as needed.
std::vector<std::vector<size_t>> balanced_batches(const prepared_dataset& data, int batch_size,
                                                  std::uint64_t seed, int epoch);

}  // namespace preview::trainer
