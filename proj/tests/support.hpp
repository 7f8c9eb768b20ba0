#pragma once

#include <filesystem>
#include <memory>

#include "clockwork/profiles.hpp"

namespace clockwork::testing {

inline std::filesystem::path config_dir() { return CLOCKWORK_CONFIG_DIR; }

inline std::shared_ptr<const ModelCatalog> model_zoo() {
    static auto catalog = std::make_shared<const ModelCatalog>(
        load_catalog(config_dir() / "profiles" / "models.profiles"));
    return catalog;
}

inline const ModelProfile& zoo_profile(std::string_view name) {
    auto* entry = model_zoo()->find(name);
    if (!entry) throw std::out_of_range(std::string(name));
    return *entry->profile;
}

// Catalog of `copies` resnet50 instances.
inline std::shared_ptr<const ModelCatalog> resnet50_catalog(unsigned copies) {
    return std::make_shared<const ModelCatalog>(make_catalog(zoo_profile("resnet50"), copies));
}

}  // namespace clockwork::testing
