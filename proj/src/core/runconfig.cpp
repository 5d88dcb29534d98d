#include "core/runconfig.hpp"

#include <functional>
#include <vector>

#include "core/common.hpp"
#include "json.hpp"

namespace preview {

namespace {

using nlohmann::ordered_json;

struct field_desc {
    const char* name;
    std::function<void(run_config&, const ordered_json&)> set;
    std::function<ordered_json(const run_config&)> get;
};

template <typename T>
T checked(const ordered_json& j, const char* name) {
    try {
        if constexpr (std::is_same_v<T, std::string>) {
            require(j.is_string(), errc::config, std::string("config field '") + name +
                                                     "' must be a string");
            return j.get<std::string>();
        } else if constexpr (std::is_same_v<T, bool>) {
            require(j.is_boolean(), errc::config,
                    std::string("config field '") + name + "' must be a boolean");
            return j.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            require(j.is_number_integer(), errc::config,
                    std::string("config field '") + name + "' must be an integer");
            return j.get<T>();
        } else {
            require(j.is_number(), errc::config,
                    std::string("config field '") + name + "' must be a number");
            return j.get<T>();
        }
    } catch (const error&) {
        throw;
    } catch (const std::exception&) {
        throw_config(std::string("config field '") + name + "' has an invalid value");
    }
}

#define PV_FIELD(member)                                                                     \
    {#member,                                                                                \
     [](run_config& c, const ordered_json& j) {                                              \
         c.member = checked<decltype(run_config::member)>(j, #member);                       \
     },                                                                                      \
     [](const run_config& c) { return ordered_json(c.member); }}

const std::vector<field_desc>& fields() {
    static const std::vector<field_desc> f = {
        PV_FIELD(dataset),
        PV_FIELD(out_dir),
        PV_FIELD(checkpoint),
        PV_FIELD(predictions),
        PV_FIELD(seed),
        PV_FIELD(deterministic),
        PV_FIELD(n),
        PV_FIELD(labeled_fraction),
        PV_FIELD(height),
        PV_FIELD(width),
        PV_FIELD(fx),
        PV_FIELD(fy),
        PV_FIELD(view_separation_deg),
        PV_FIELD(fingers),
        PV_FIELD(segments),
        PV_FIELD(noise_sigma_mm),
        PV_FIELD(orientation_range_deg),
        PV_FIELD(translation_xy_mm),
        PV_FIELD(translation_z_min_mm),
        PV_FIELD(translation_z_max_mm),
        PV_FIELD(mode),
        PV_FIELD(epochs),
        PV_FIELD(batch_size),
        PV_FIELD(learning_rate),
        PV_FIELD(beta1),
        PV_FIELD(beta2),
        PV_FIELD(d_t),
        PV_FIELD(base_channels),
        PV_FIELD(com_conditioning),
        PV_FIELD(lambda_l),
        PV_FIELD(lambda_a),
        PV_FIELD(huber_epsilon),
        PV_FIELD(l_r),
        PV_FIELD(l_g),
        PV_FIELD(adv_conditioning),
        PV_FIELD(early_stopping),
        PV_FIELD(crop_cube_side_mm),
        PV_FIELD(depth_range_mm),
        PV_FIELD(foreground_band_mm),
        PV_FIELD(com_jitter_mm),
        PV_FIELD(dropout_holes),
        PV_FIELD(n_labeled),
        PV_FIELD(val_count),
        PV_FIELD(test_count),
        PV_FIELD(repeats),
        PV_FIELD(probe_epochs),
        PV_FIELD(probe_learning_rate),
        PV_FIELD(analyze_mode),
        PV_FIELD(k),
        PV_FIELD(neuron),
        PV_FIELD(grid_count),
        PV_FIELD(query_count),
    };
    return f;
}

#undef PV_FIELD

const field_desc& find_field(const std::string& name) {
    for (const auto& f : fields())
        if (name == f.name) return f;
    throw_config("unknown config key '" + name + "'");
}

}  // namespace

run_config run_config::from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw_config(std::string("config is not valid JSON: ") + e.what());
    }
    require(j.is_object(), errc::config, "config must be a JSON object");
    run_config cfg;
    for (auto it = j.begin(); it != j.end(); ++it) find_field(it.key()).set(cfg, it.value());
    cfg.validate();
    return cfg;
}

void run_config::apply_override(const std::string& key, const std::string& value) {
    ordered_json j;
    try {
        j = ordered_json::parse(value);
    } catch (const std::exception&) {
        j = value;  // plain strings need no quoting on the command line
    }
    find_field(key).set(*this, j);
}

std::string run_config::to_json() const {
    ordered_json j;
    for (const auto& f : fields()) j[f.name] = f.get(*this);
    return j.dump(2) + "\n";
}

void run_config::validate() const {
    require(labeled_fraction >= 0.0 && labeled_fraction <= 1.0, errc::config,
            "config field 'labeled_fraction' must lie in [0, 1]");
    require(n >= 1, errc::config, "config field 'n' must be >= 1");
    require(height > 0 && width > 0, errc::config, "config resolution must be positive");
    require(epochs >= 1, errc::config, "config field 'epochs' must be >= 1");
    require(batch_size >= 1, errc::config, "config field 'batch_size' must be >= 1");
    require(learning_rate > 0.0, errc::config, "config field 'learning_rate' must be > 0");
    require(repeats >= 1, errc::config, "config field 'repeats' must be >= 1");
    require(translation_z_min_mm > 0.0 && translation_z_max_mm > translation_z_min_mm,
            errc::config, "config translation depth range is invalid");
    require(analyze_mode == "nn" || analyze_mode == "neurons" || analyze_mode == "grid",
            errc::config, "config field 'analyze_mode' must be nn, neurons or grid");
}

}  // namespace preview
