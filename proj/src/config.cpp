#include "fairstage/config.hpp"
#include "fairstage/error.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fairstage {

namespace {

std::string strip(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string num(double v) {
    // shortest text that reads back to the same double
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename T>
std::string join(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        if constexpr (std::is_floating_point_v<T>) {
            out += num(values[i]);
        } else {
            out += std::to_string(values[i]);
        }
    }
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        if (!v.empty() && v[0] != '-') {
            const auto u = std::stoull(v, &pos);
            if (pos == v.size()) return u;
        }
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
}

}  // namespace

ConfigMap ConfigMap::parse(std::istream& in) {
    ConfigMap map;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto text = strip(line);
        if (text.empty() || text[0] == '#' || text[0] == ';') continue;
        if (text.front() == '[') {
            if (text.back() != ']') throw ParseError(line_no, "unterminated section header");
            section = strip(text.substr(1, text.size() - 2));
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
        const auto key = strip(text.substr(0, eq));
        if (key.empty()) throw ParseError(line_no, "empty key");
        map.set(section.empty() ? key : section + "." + key, strip(text.substr(eq + 1)));
    }
    return map;
}

ConfigMap ConfigMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    return parse(in);
}

std::optional<std::string> ConfigMap::get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void ConfigMap::merge(const ConfigMap& over) {
    for (const auto& [k, v] : over.entries_) entries_[k] = v;
}

std::vector<double> parse_number_list(const std::string& text) {
    std::vector<double> out;
    if (strip(text).empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = strip(item);
        if (item.empty()) throw std::invalid_argument("empty entry in list '" + text + "'");
        out.push_back(to_double("list", item));
    }
    if (text.back() == ',') throw std::invalid_argument("empty entry in list '" + text + "'");
    return out;
}

void RunConfig::apply(const ConfigMap& map) {
    auto& p = pipeline;
    for (const auto& [key, v] : map.entries()) {
        if (key == "data.dataset") dataset = v;
        else if (key == "data.synthetic_queries") synthetic_queries = to_uint(key, v);
        else if (key == "data.group_feature") group_feature = static_cast<int>(to_uint(key, v));
        else if (key == "split.train") p.split.train = to_double(key, v);
        else if (key == "split.sim") p.split.sim = to_double(key, v);
        else if (key == "split.test") p.split.test = to_double(key, v);
        else if (key == "train.learning_rate") p.train.learning_rate = to_double(key, v);
        else if (key == "train.iterations") p.train.iterations = static_cast<int>(to_uint(key, v));
        else if (key == "train.l2") p.train.l2 = to_double(key, v);
        else if (key == "corrupt.epsilon") p.epsilon = to_double(key, v);
        else if (key == "corrupt.beta_a") p.beta_a = to_double(key, v);
        else if (key == "corrupt.beta_b") p.beta_b = to_double(key, v);
        else if (key == "corrupt.group") p.corrupt_group = v;
        else if (key == "simulate.m") p.m = to_uint(key, v);
        else if (key == "simulate.t_max") {
            p.t_max.clear();
            const auto values = parse_number_list(v);
            for (double t : values) {
                if (!(t >= 1.0) || t != std::floor(t)) {
                    throw std::invalid_argument(key + ": '" + v + "' is not a list of positive integers");
                }
            }
            if (values.size() == 1) {
                p.default_t_max = static_cast<std::size_t>(values[0]);
            } else {
                for (double t : values) p.t_max.push_back(static_cast<std::size_t>(t));
            }
        }
        else if (key == "select.lambda") p.lambda = to_double(key, v);
        else if (key == "select.alpha") p.alpha = to_double(key, v);
        else if (key == "select.rule") rule = parse_rule(v);
        else if (key == "select.target_total") p.target_total = to_double(key, v);
        else if (key == "select.target_mode") target_mode = v;
        else if (key == "select.targets") p.targets = parse_number_list(v);
        else if (key == "experiment.methods") {
            p.methods.clear();
            std::stringstream ss(v);
            std::string name;
            while (std::getline(ss, name, ',')) {
                if (!strip(name).empty()) p.methods.push_back(parse_method(strip(name)));
            }
        }
        else if (key == "experiment.replications") replications = to_uint(key, v);
        else if (key == "experiment.sweep") sweep = v;
        else if (key == "experiment.values") sweep_values = parse_number_list(v);
        else if (key == "run.seed") seed = to_uint(key, v);
        else if (key == "run.threads") threads = static_cast<unsigned>(to_uint(key, v));
        else if (key == "run.out") out = v;
        else throw std::invalid_argument("unknown config key '" + key + "'");
    }
}

ConfigMap RunConfig::to_map() const {
    const auto& p = pipeline;
    ConfigMap map;
    map.set("data.dataset", dataset);
    map.set("data.synthetic_queries", std::to_string(synthetic_queries));
    map.set("data.group_feature", std::to_string(group_feature));
    map.set("split.train", num(p.split.train));
    map.set("split.sim", num(p.split.sim));
    map.set("split.test", num(p.split.test));
    map.set("train.learning_rate", num(p.train.learning_rate));
    map.set("train.iterations", std::to_string(p.train.iterations));
    map.set("train.l2", num(p.train.l2));
    map.set("corrupt.epsilon", num(p.epsilon));
    map.set("corrupt.beta_a", num(p.beta_a));
    map.set("corrupt.beta_b", num(p.beta_b));
    map.set("corrupt.group", p.corrupt_group);
    map.set("simulate.m", std::to_string(p.m));
    map.set("simulate.t_max", p.t_max.empty() ? std::to_string(p.default_t_max) : join(p.t_max));
    map.set("select.lambda", num(p.lambda));
    map.set("select.alpha", num(p.alpha));
    map.set("select.rule", std::string(to_string(rule)));
    map.set("select.target_total", num(p.target_total));
    map.set("select.target_mode", target_mode);
    map.set("select.targets", join(p.targets));
    std::string methods;
    for (std::size_t i = 0; i < p.methods.size(); ++i) {
        methods += (i ? "," : "") + std::string(method_name(p.methods[i]));
    }
    map.set("experiment.methods", methods);
    map.set("experiment.replications", std::to_string(replications));
    map.set("experiment.sweep", sweep);
    map.set("experiment.values", join(sweep_values));
    map.set("run.seed", std::to_string(seed));
    map.set("run.threads", std::to_string(threads));
    map.set("run.out", out);
    return map;
}

std::string RunConfig::snapshot() const {
    std::string out;
    const auto map = to_map();
    for (const auto& [k, v] : map.entries()) {
        // threads and out change where and how fast, never what is written
        if (k == "run.threads" || k == "run.out") continue;
        out += "# config " + k + " = " + v + "\n";
    }
    return out;
}

void RunConfig::validate() const {
    pipeline.split.validate();
    if (target_mode != "equal-opportunity" && target_mode != "explicit") {
        throw std::invalid_argument("select.target_mode must be equal-opportunity or explicit");
    }
    if (target_mode == "explicit" && pipeline.targets.empty()) {
        throw std::invalid_argument("explicit target mode needs select.targets");
    }
    if (replications < 1) throw std::invalid_argument("experiment.replications must be >= 1");
    if (pipeline.m < 2) throw std::invalid_argument("simulate.m must be >= 2");
    if (!(pipeline.alpha > 0.0 && pipeline.alpha < 1.0)) throw std::invalid_argument("select.alpha must lie in (0, 1)");
    if (!(pipeline.lambda > 0.0)) throw std::invalid_argument("select.lambda must be positive");
    if (pipeline.epsilon < 0.0 || pipeline.epsilon > 1.0) throw std::invalid_argument("corrupt.epsilon must lie in [0, 1]");
    if (threads < 1) throw std::invalid_argument("run.threads must be >= 1");
}

RunConfig resolve_config(const std::optional<std::string>& file, const ConfigMap& flags) {
    ConfigMap layered;
    if (file) layered = ConfigMap::load(*file);
    layered.merge(flags);
    RunConfig config;
    config.apply(layered);
    if (config.target_mode == "equal-opportunity") config.pipeline.targets.clear();
    config.validate();
    return config;
}

Dataset load_dataset(const RunConfig& config) {
    if (config.dataset == "synthetic") {
        return synth_generate(default_synth_config(config.seed, config.synthetic_queries)).dataset;
    }
    Dataset dataset = parse_letor_file(config.dataset);
    binarize(dataset);
    if (dataset.groups.empty()) dataset = assign_groups(std::move(dataset), config.group_feature);
    return dataset;
}

std::vector<double> resolve_targets(const RunConfig& config, const Dataset& dataset) {
    if (config.target_mode == "explicit") {
        if (config.pipeline.targets.size() != dataset.groups.size()) {
            throw std::invalid_argument("select.targets needs one value per group");
        }
        return config.pipeline.targets;
    }
    std::vector<double> ar;
    for (std::size_t g = 0; g < dataset.groups.size(); ++g) ar.push_back(average_relevant(dataset, g));
    return equal_opportunity_targets(ar, config.pipeline.target_total);
}

void write_atomic(const std::string& path, const std::function<void(std::ostream&)>& writer) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        try {
            writer(out);
        } catch (...) {
            out.close();
            fs::remove(tmp);
            throw;
        }
        out.flush();
        if (!out) {
            fs::remove(tmp);
            throw std::runtime_error("write failed for '" + path + "'");
        }
    }
    fs::rename(tmp, target);
}

}  // namespace fairstage
