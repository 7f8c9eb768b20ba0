#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "clockwork/time.hpp"

namespace clockwork {

constexpr std::uint64_t kDefaultPageBytes = 16ull * 1024 * 1024;
constexpr Duration kDefaultIoTransfer = micros(50);

// Malformed profile/catalog text.
class ProfileParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Well-formed text describing a profile that violates an invariant.
class ProfileValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Timing and size ground truth for one compiled model. Durations are
// integer nanoseconds.
struct ModelProfile {
    std::string name;
    std::uint64_t weights_bytes = 0;
    Duration weights_transfer = 0;
    std::vector<unsigned> batch_sizes;
    std::vector<Duration> exec_duration;  // parallel to batch_sizes
    std::uint64_t input_bytes = 0;        // per request
    std::uint64_t output_bytes = 0;       // per request
    Duration input_transfer = kDefaultIoTransfer;   // per request
    Duration output_transfer = kDefaultIoTransfer;  // per request

    // Index of `batch_size` in batch_sizes, or -1.
    int batch_index(unsigned batch_size) const;
    bool supports(unsigned batch_size) const { return batch_index(batch_size) >= 0; }
    unsigned max_batch() const { return batch_sizes.empty() ? 0 : batch_sizes.back(); }

    // Throws std::out_of_range for unsupported batch sizes.
    Duration exec(unsigned batch_size) const;

    bool operator==(const ModelProfile&) const = default;
};

// Checks every profile invariant; throws ProfileValidationError naming the
// model and the violated rule.
void validate_profile(const ModelProfile& profile);

// Seed estimate used by the controller before any measurement exists.
Duration seed_estimate(const ModelProfile& profile, unsigned batch_size);

constexpr std::uint32_t pages_needed(std::uint64_t weights_bytes, std::uint64_t page_bytes) {
    return static_cast<std::uint32_t>((weights_bytes + page_bytes - 1) / page_bytes);
}

struct CatalogEntry {
    ModelId id = 0;
    std::string name;                             // unique instance name
    std::shared_ptr<const ModelProfile> profile;  // shared between replicas
    std::string replica_of;                       // base profile name
};

// The set of servable model instances. Ids are dense from 0.
class ModelCatalog {
public:
    explicit ModelCatalog(std::uint64_t page_bytes = kDefaultPageBytes);

    std::uint64_t page_bytes() const { return page_bytes_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    bool contains(ModelId id) const { return id < entries_.size(); }

    const CatalogEntry& at(ModelId id) const;
    const ModelProfile& profile(ModelId id) const { return *at(id).profile; }
    std::uint32_t pages_for(ModelId id) const;

    const std::vector<CatalogEntry>& entries() const { return entries_; }

    // Instance lookup by unique name; nullptr when absent.
    const CatalogEntry* find(std::string_view name) const;

    // Distinct profiles in first-appearance order.
    std::vector<std::shared_ptr<const ModelProfile>> profiles() const;

    // Appends one instance of `profile` (validated). Returns its id.
    ModelId add(std::shared_ptr<const ModelProfile> profile, std::string name = {});

private:
    std::uint64_t page_bytes_;
    std::vector<CatalogEntry> entries_;
};

// Parses catalog text. `base_dir` resolves `include` directives.
ModelCatalog parse_catalog(std::string_view text,
                           const std::filesystem::path& base_dir = {},
                           std::string_view source_name = "<string>");

ModelCatalog load_catalog(const std::filesystem::path& path);

// Canonical text form: page size, each distinct profile once, then one
// replicas directive per profile.
std::string format_catalog(const ModelCatalog& catalog);
void save_catalog(const ModelCatalog& catalog, const std::filesystem::path& path);

// Extends the catalog with `copies` new instances sharing the profile of the
// instance or profile named `base`. Throws std::invalid_argument if unknown.
ModelCatalog replicate_model(const ModelCatalog& catalog, std::string_view base,
                             unsigned copies);

// `count` instances of one profile.
ModelCatalog make_catalog(const ModelProfile& profile, unsigned count,
                          std::uint64_t page_bytes = kDefaultPageBytes);

}  // namespace clockwork
