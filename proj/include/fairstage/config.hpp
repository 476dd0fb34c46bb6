#pragma once

#include "fairstage/eval.hpp"
#include "fairstage/selector.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fairstage {

/// Flat `key = value` settings grouped under `[section]` headers. Keys are
/// stored qualified as `section.key`.
class ConfigMap {
public:
    static ConfigMap parse(std::istream& in);  // throws ParseError
    static ConfigMap load(const std::string& path);

    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    std::optional<std::string> get(const std::string& key) const;
    // Later layers win.
    void merge(const ConfigMap& over);
    const std::map<std::string, std::string>& entries() const noexcept { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

/// Resolved settings for every stage. Defaults reproduce the reference
/// experiment: m = 100000, lambda = 100, t_max = 50, alpha = 0.1, target
/// total 5, split 0.01/0.69/0.30, 50 replications.
struct RunConfig {
    std::string dataset = "synthetic";  // LETOR path or "synthetic"
    std::size_t synthetic_queries = 10000;
    int group_feature = 135;  // url click count in MSLR-WEB30K

    PipelineConfig pipeline;
    Rule rule = Rule::monotone;
    std::string target_mode = "equal-opportunity";  // or "explicit"

    std::size_t replications = 50;
    std::string sweep = "m";
    std::vector<double> sweep_values;

    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string out = "out";

    /// Applies every entry; unknown keys and malformed values throw
    /// std::invalid_argument naming the key.
    void apply(const ConfigMap& map);
    ConfigMap to_map() const;
    // Canonical snapshot: one `# config key = value` line per setting.
    std::string snapshot() const;
    void validate() const;
};

// defaults < file < flags
RunConfig resolve_config(const std::optional<std::string>& file, const ConfigMap& flags);

/// "synthetic" builds the default instance from run.seed; anything else is a
/// LETOR file, binarized, with groups from `group_feature` unless the file
/// already carries group annotations.
Dataset load_dataset(const RunConfig& config);

// Explicit targets, or equal-opportunity targets from the dataset's averages.
std::vector<double> resolve_targets(const RunConfig& config, const Dataset& dataset);

std::vector<double> parse_number_list(const std::string& text);

/// Writes through a sibling temporary file and renames it into place, so a
/// failed step never leaves a half-written artifact.
void write_atomic(const std::string& path, const std::function<void(std::ostream&)>& writer);

}  // namespace fairstage
