#include "clockwork/profiles.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace clockwork {

int ModelProfile::batch_index(unsigned batch_size) const {
    auto it = std::find(batch_sizes.begin(), batch_sizes.end(), batch_size);
    return it == batch_sizes.end() ? -1 : static_cast<int>(it - batch_sizes.begin());
}

Duration ModelProfile::exec(unsigned batch_size) const {
    int i = batch_index(batch_size);
    if (i < 0) {
        throw std::out_of_range("model " + name + " has no batch size " +
                                std::to_string(batch_size));
    }
    return exec_duration[static_cast<std::size_t>(i)];
}

namespace {

[[noreturn]] void invalid(const ModelProfile& p, const std::string& what) {
    throw ProfileValidationError("model '" + p.name + "': " + what);
}

}  // namespace

void validate_profile(const ModelProfile& p) {
    if (p.name.empty()) throw ProfileValidationError("model with empty name");
    if (p.weights_bytes == 0) invalid(p, "weights_bytes must be > 0");
    if (p.weights_transfer <= 0) invalid(p, "weights_transfer must be > 0");
    if (p.input_transfer <= 0 || p.output_transfer <= 0) invalid(p, "io durations must be > 0");
    if (p.batch_sizes.empty()) invalid(p, "no batch sizes");
    if (p.batch_sizes.size() != p.exec_duration.size()) {
        invalid(p, "exec_duration must be defined for exactly the batch sizes");
    }
    for (std::size_t i = 0; i < p.batch_sizes.size(); i++) {
        if (p.batch_sizes[i] == 0) invalid(p, "batch sizes must be positive");
        if (p.exec_duration[i] <= 0) {
            invalid(p, "exec duration for batch " + std::to_string(p.batch_sizes[i]) +
                           " must be > 0");
        }
        if (i == 0) continue;
        unsigned b0 = p.batch_sizes[i - 1], b1 = p.batch_sizes[i];
        Duration d0 = p.exec_duration[i - 1], d1 = p.exec_duration[i];
        if (b1 <= b0) invalid(p, "batch sizes must be strictly increasing");
        if (d1 < d0) {
            invalid(p, "exec duration decreases from batch " + std::to_string(b0) + " to " +
                           std::to_string(b1));
        }
        // d0/b0 >= d1/b1, cross-multiplied to stay in integers
        if (static_cast<__int128>(d0) * b1 < static_cast<__int128>(d1) * b0) {
            invalid(p, "per-request exec time increases from batch " + std::to_string(b0) +
                           " to " + std::to_string(b1));
        }
    }
}

Duration seed_estimate(const ModelProfile& profile, unsigned batch_size) {
    return profile.exec(batch_size);
}

ModelCatalog::ModelCatalog(std::uint64_t page_bytes) : page_bytes_(page_bytes) {
    if (page_bytes_ == 0) throw ProfileValidationError("page_bytes must be > 0");
}

const CatalogEntry& ModelCatalog::at(ModelId id) const {
    if (id >= entries_.size()) {
        throw std::out_of_range("unknown model id " + std::to_string(id));
    }
    return entries_[id];
}

std::uint32_t ModelCatalog::pages_for(ModelId id) const {
    return pages_needed(at(id).profile->weights_bytes, page_bytes_);
}

const CatalogEntry* ModelCatalog::find(std::string_view name) const {
    for (auto& e : entries_) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

std::vector<std::shared_ptr<const ModelProfile>> ModelCatalog::profiles() const {
    std::vector<std::shared_ptr<const ModelProfile>> out;
    for (auto& e : entries_) {
        if (std::find(out.begin(), out.end(), e.profile) == out.end()) out.push_back(e.profile);
    }
    return out;
}

ModelId ModelCatalog::add(std::shared_ptr<const ModelProfile> profile, std::string name) {
    validate_profile(*profile);
    auto id = static_cast<ModelId>(entries_.size());
    if (name.empty()) name = profile->name;
    std::string base = profile->name;
    entries_.push_back(CatalogEntry{id, std::move(name), std::move(profile), std::move(base)});
    return id;
}

namespace {

std::vector<std::string_view> tokenize(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) i++;
        if (i >= line.size() || line[i] == '#') break;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') j++;
        out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

class CatalogParser {
public:
    void parse(std::string_view text, const std::filesystem::path& base_dir,
               std::string_view source, int depth) {
        if (depth > 16) throw ProfileParseError("include nesting too deep at " + std::string(source));
        std::size_t line_no = 0;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            std::size_t end = text.find('\n', pos);
            if (end == std::string_view::npos) end = text.size();
            std::string_view line = text.substr(pos, end - pos);
            pos = end + 1;
            line_no++;
            auto tok = tokenize(line);
            if (!tok.empty()) directive(tok, base_dir, source, line_no, depth);
            if (end == text.size()) break;
        }
        finish_record();
    }

    ModelCatalog build() {
        for (auto& p : profiles_) validate_profile(p);
        ModelCatalog catalog(page_bytes_.value_or(kDefaultPageBytes));
        std::map<std::string, unsigned> counts;
        for (auto& [name, count] : replicas_) counts[name] += count;
        for (auto& p : profiles_) {
            unsigned n = 1;
            if (!replicas_.empty()) {
                auto it = counts.find(p.name);
                n = it == counts.end() ? 0 : it->second;
            }
            auto shared = std::make_shared<const ModelProfile>(p);
            for (unsigned k = 0; k < n; k++) {
                catalog.add(shared, n == 1 ? p.name : p.name + ":" + std::to_string(k));
            }
        }
        return catalog;
    }

private:
    [[noreturn]] static void fail(std::string_view source, std::size_t line,
                                  const std::string& what) {
        throw ProfileParseError(std::string(source) + ":" + std::to_string(line) + ": " + what);
    }

    template <typename T>
    static T number(std::string_view tok, std::string_view source, std::size_t line) {
        T value{};
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
        if (ec != std::errc() || ptr != tok.data() + tok.size()) {
            fail(source, line, "expected integer, got '" + std::string(tok) + "'");
        }
        return value;
    }

    void expect_args(const std::vector<std::string_view>& tok, std::size_t n,
                     std::string_view source, std::size_t line) {
        if (tok.size() != n + 1) {
            fail(source, line, "'" + std::string(tok[0]) + "' expects " + std::to_string(n) +
                                   " argument(s)");
        }
    }

    ModelProfile& current(std::string_view key, std::string_view source, std::size_t line) {
        if (!current_) fail(source, line, "'" + std::string(key) + "' outside a model record");
        return *current_;
    }

    void finish_record() {
        if (!current_) return;
        profiles_.push_back(std::move(*current_));
        current_.reset();
    }

    void directive(const std::vector<std::string_view>& tok, const std::filesystem::path& base_dir,
                   std::string_view source, std::size_t line, int depth) {
        std::string_view key = tok[0];
        if (key == "model") {
            expect_args(tok, 1, source, line);
            finish_record();
            std::string name(tok[1]);
            for (auto& p : profiles_) {
                if (p.name == name) fail(source, line, "duplicate model '" + name + "'");
            }
            current_ = ModelProfile{};
            current_->name = name;
        } else if (key == "weights_bytes") {
            expect_args(tok, 1, source, line);
            current(key, source, line).weights_bytes = number<std::uint64_t>(tok[1], source, line);
        } else if (key == "weights_transfer_ns") {
            expect_args(tok, 1, source, line);
            current(key, source, line).weights_transfer = number<Duration>(tok[1], source, line);
        } else if (key == "io_ns") {
            expect_args(tok, 2, source, line);
            auto& p = current(key, source, line);
            p.input_transfer = number<Duration>(tok[1], source, line);
            p.output_transfer = number<Duration>(tok[2], source, line);
        } else if (key == "io_bytes") {
            expect_args(tok, 2, source, line);
            auto& p = current(key, source, line);
            p.input_bytes = number<std::uint64_t>(tok[1], source, line);
            p.output_bytes = number<std::uint64_t>(tok[2], source, line);
        } else if (key == "batch") {
            expect_args(tok, 2, source, line);
            auto& p = current(key, source, line);
            p.batch_sizes.push_back(number<unsigned>(tok[1], source, line));
            p.exec_duration.push_back(number<Duration>(tok[2], source, line));
        } else if (key == "page_bytes") {
            expect_args(tok, 1, source, line);
            finish_record();
            auto value = number<std::uint64_t>(tok[1], source, line);
            if (value == 0) fail(source, line, "page_bytes must be > 0");
            if (page_bytes_ && *page_bytes_ != value) fail(source, line, "conflicting page_bytes");
            page_bytes_ = value;
        } else if (key == "replicas") {
            expect_args(tok, 2, source, line);
            finish_record();
            replicas_.emplace_back(std::string(tok[1]), number<unsigned>(tok[2], source, line));
            pending_refs_.emplace_back(std::string(tok[1]), std::string(source) + ":" +
                                                                std::to_string(line));
        } else if (key == "include") {
            expect_args(tok, 1, source, line);
            finish_record();
            std::filesystem::path path = base_dir / std::filesystem::path(std::string(tok[1]));
            std::ifstream in(path);
            if (!in) fail(source, line, "cannot open include '" + path.string() + "'");
            std::stringstream ss;
            ss << in.rdbuf();
            std::string text = ss.str();
            parse(text, path.parent_path(), path.string(), depth + 1);
        } else {
            fail(source, line, "unknown directive '" + std::string(key) + "'");
        }
    }

public:
    void check_references() const {
        for (auto& [name, where] : pending_refs_) {
            bool known = std::any_of(profiles_.begin(), profiles_.end(),
                                     [&](const ModelProfile& p) { return p.name == name; });
            if (!known) throw ProfileParseError(where + ": replicas of unknown model '" + name + "'");
        }
    }

private:
    std::vector<ModelProfile> profiles_;
    std::optional<ModelProfile> current_;
    std::vector<std::pair<std::string, unsigned>> replicas_;
    std::vector<std::pair<std::string, std::string>> pending_refs_;
    std::optional<std::uint64_t> page_bytes_;
};

}  // namespace

ModelCatalog parse_catalog(std::string_view text, const std::filesystem::path& base_dir,
                           std::string_view source_name) {
    CatalogParser parser;
    parser.parse(text, base_dir, source_name, 0);
    parser.check_references();
    return parser.build();
}

ModelCatalog load_catalog(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ProfileParseError("cannot open catalog '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_catalog(ss.str(), path.parent_path(), path.string());
}

std::string format_catalog(const ModelCatalog& catalog) {
    std::ostringstream out;
    out << "page_bytes " << catalog.page_bytes() << "\n";
    auto profiles = catalog.profiles();
    for (auto& p : profiles) {
        out << "\nmodel " << p->name << "\n";
        out << "weights_bytes " << p->weights_bytes << "\n";
        out << "weights_transfer_ns " << p->weights_transfer << "\n";
        out << "io_bytes " << p->input_bytes << " " << p->output_bytes << "\n";
        out << "io_ns " << p->input_transfer << " " << p->output_transfer << "\n";
        for (std::size_t i = 0; i < p->batch_sizes.size(); i++) {
            out << "batch " << p->batch_sizes[i] << " " << p->exec_duration[i] << "\n";
        }
    }
    out << "\n";
    for (auto& p : profiles) {
        auto n = std::count_if(catalog.entries().begin(), catalog.entries().end(),
                               [&](const CatalogEntry& e) { return e.profile == p; });
        out << "replicas " << p->name << " " << n << "\n";
    }
    return out.str();
}

void save_catalog(const ModelCatalog& catalog, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write catalog '" + path.string() + "'");
    out << format_catalog(catalog);
}

ModelCatalog replicate_model(const ModelCatalog& catalog, std::string_view base,
                             unsigned copies) {
    const CatalogEntry* source = catalog.find(base);
    if (!source) {
        for (auto& e : catalog.entries()) {
            if (e.replica_of == base) {
                source = &e;
                break;
            }
        }
    }
    if (!source) throw std::invalid_argument("unknown model '" + std::string(base) + "'");

    ModelCatalog out = catalog;
    auto existing = std::count_if(catalog.entries().begin(), catalog.entries().end(),
                                  [&](const CatalogEntry& e) { return e.profile == source->profile; });
    for (unsigned k = 0; k < copies; k++) {
        out.add(source->profile,
                source->profile->name + ":" + std::to_string(existing + static_cast<long>(k)));
    }
    return out;
}

ModelCatalog make_catalog(const ModelProfile& profile, unsigned count, std::uint64_t page_bytes) {
    ModelCatalog catalog(page_bytes);
    auto shared = std::make_shared<const ModelProfile>(profile);
    for (unsigned k = 0; k < count; k++) {
        catalog.add(shared, count == 1 ? profile.name : profile.name + ":" + std::to_string(k));
    }
    return catalog;
}

}  // namespace clockwork
