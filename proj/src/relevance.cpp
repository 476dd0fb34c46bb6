#include "fairstage/relevance.hpp"

#include "fairstage/clicklog.hpp"
#include "fairstage/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace fairstage {

double sigmoid(double z) noexcept {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace {

double softplus(double z) noexcept {
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double logit(double s) noexcept {
    constexpr double eps = 1e-12;
    s = std::clamp(s, eps, 1.0 - eps);
    return std::log(s) - std::log1p(-s);
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw std::invalid_argument("bad number '" + s + "' in model file");
    }
    return v;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(parse_double(tok));
    }
    return out;
}

using KeyValues = std::map<std::string, std::string>;

const std::string& require(const KeyValues& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("model file missing key '" + key + "'");
    return it->second;
}

}  // namespace

double PlattMap::apply(double score) const noexcept {
    return sigmoid(slope * logit(score) + intercept);
}

void CorruptionSpec::validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in [0,1]");
    if (!(beta_a > 0.0 && beta_b > 0.0)) throw std::invalid_argument("Beta parameters must be positive");
    if (target_group >= kMaxGroups) throw std::invalid_argument("target group out of range");
}

CorruptionDraw corruption_draw(const CorruptionSpec& spec, std::string_view query_id,
                               std::size_t item_index) {
    KeyedRng rng(mix_key(spec.seed, hash_bytes(query_id), item_index));
    CorruptionDraw draw;
    draw.replaced = rng.bernoulli(spec.epsilon);
    if (spec.beta_a == 1.0) {
        // Inverse CDF of Beta(1, b).
        draw.noise = 1.0 - std::pow(1.0 - rng.uniform(), 1.0 / spec.beta_b);
    } else {
        std::gamma_distribution<double> ga(spec.beta_a, 1.0);
        std::gamma_distribution<double> gb(spec.beta_b, 1.0);
        const double x = ga(rng);
        const double y = gb(rng);
        draw.noise = x / (x + y);
    }
    return draw;
}

RelevanceModel RelevanceModel::constant(double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw std::invalid_argument("constant score must lie in [0,1]");
    return RelevanceModel(Constant{value});
}

RelevanceModel RelevanceModel::logistic(std::vector<double> weights, double intercept) {
    return RelevanceModel(Logistic{std::move(weights), intercept});
}

RelevanceModel RelevanceModel::corrupted(RelevanceModel base, CorruptionSpec spec) {
    spec.validate();
    return RelevanceModel(Corrupted{std::make_shared<const RelevanceModel>(std::move(base)), spec});
}

RelevanceModel RelevanceModel::platt(RelevanceModel base, std::vector<PlattMap> maps, bool per_group) {
    if (maps.empty()) throw std::invalid_argument("Platt model needs at least one map");
    if (!per_group && maps.size() != 1) throw std::invalid_argument("global Platt model takes one map");
    return RelevanceModel(Platt{std::make_shared<const RelevanceModel>(std::move(base)), std::move(maps), per_group});
}

RelevanceModel::Kind RelevanceModel::kind() const noexcept {
    return static_cast<Kind>(impl_.index());
}

double RelevanceModel::score(const QueryInstance& query, std::size_t item_pos) const {
    const Item& item = query.items.at(item_pos);
    return std::visit(
        [&](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Constant>) {
                return m.value;
            } else if constexpr (std::is_same_v<T, Logistic>) {
                double z = m.intercept;
                for (const auto& [fid, value] : item.features) {
                    if (static_cast<std::size_t>(fid) > m.weights.size()) {
                        throw std::domain_error("feature index " + std::to_string(fid) +
                                                " beyond model dimension " +
                                                std::to_string(m.weights.size()));
                    }
                    z += m.weights[static_cast<std::size_t>(fid) - 1] * value;
                }
                return sigmoid(z);
            } else if constexpr (std::is_same_v<T, Corrupted>) {
                const double base = m.base->score(query, item_pos);
                if (!item.in_group(m.spec.target_group) || m.spec.epsilon == 0.0) return base;
                const auto draw = corruption_draw(m.spec, query.query_id, item.index);
                return draw.replaced ? draw.noise : base;
            } else {
                const double base = m.base->score(query, item_pos);
                std::size_t slot = 0;
                if (m.per_group) {
                    if (item.groups == 0) return base;
                    slot = static_cast<std::size_t>(std::countr_zero(item.groups));
                    if (slot >= m.maps.size()) return base;
                }
                return m.maps[slot].apply(base);
            }
        },
        impl_);
}

const std::vector<double>& RelevanceModel::weights() const {
    if (const auto* m = std::get_if<Logistic>(&impl_)) return m->weights;
    throw std::logic_error("weights() on a non-logistic model");
}

double RelevanceModel::intercept() const {
    if (const auto* m = std::get_if<Logistic>(&impl_)) return m->intercept;
    throw std::logic_error("intercept() on a non-logistic model");
}

const std::vector<PlattMap>& RelevanceModel::platt_maps() const {
    if (const auto* m = std::get_if<Platt>(&impl_)) return m->maps;
    throw std::logic_error("platt_maps() on a non-Platt model");
}

const RelevanceModel& RelevanceModel::base() const {
    if (const auto* m = std::get_if<Corrupted>(&impl_)) return *m->base;
    if (const auto* m = std::get_if<Platt>(&impl_)) return *m->base;
    throw std::logic_error("base() on a model without a base");
}

void RelevanceModel::serialize_into(std::string& out, const std::string& prefix) const {
    auto put = [&](const std::string& key, const std::string& value) {
        out += prefix + key + " = " + value + "\n";
    };
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Constant>) {
                put("kind", "constant");
                put("value", format_double(m.value));
            } else if constexpr (std::is_same_v<T, Logistic>) {
                put("kind", "logistic");
                put("intercept", format_double(m.intercept));
                std::string w;
                for (std::size_t k = 0; k < m.weights.size(); ++k) {
                    w += (k ? "," : "") + format_double(m.weights[k]);
                }
                put("weights", w);
            } else if constexpr (std::is_same_v<T, Corrupted>) {
                put("kind", "corrupted");
                put("epsilon", format_double(m.spec.epsilon));
                put("beta_a", format_double(m.spec.beta_a));
                put("beta_b", format_double(m.spec.beta_b));
                put("target_group", std::to_string(m.spec.target_group));
                put("seed", std::to_string(m.spec.seed));
                m.base->serialize_into(out, prefix + "base.");
            } else {
                put("kind", "platt");
                put("per_group", m.per_group ? "true" : "false");
                std::string maps;
                for (std::size_t k = 0; k < m.maps.size(); ++k) {
                    maps += (k ? "," : "") + format_double(m.maps[k].slope) + "," +
                            format_double(m.maps[k].intercept);
                }
                put("maps", maps);
                m.base->serialize_into(out, prefix + "base.");
            }
        },
        impl_);
}

std::string RelevanceModel::serialize() const {
    std::string out;
    serialize_into(out, "");
    return out;
}

namespace {

RelevanceModel build_model(const KeyValues& kv, const std::string& prefix) {
    const auto& kind = require(kv, prefix + "kind");
    if (kind == "constant") return RelevanceModel::constant(parse_double(require(kv, prefix + "value")));
    if (kind == "logistic") {
        return RelevanceModel::logistic(parse_list(require(kv, prefix + "weights")),
                                        parse_double(require(kv, prefix + "intercept")));
    }
    if (kind == "corrupted") {
        CorruptionSpec spec;
        spec.epsilon = parse_double(require(kv, prefix + "epsilon"));
        spec.beta_a = parse_double(require(kv, prefix + "beta_a"));
        spec.beta_b = parse_double(require(kv, prefix + "beta_b"));
        spec.target_group = std::stoul(require(kv, prefix + "target_group"));
        spec.seed = std::stoull(require(kv, prefix + "seed"));
        return RelevanceModel::corrupted(build_model(kv, prefix + "base."), spec);
    }
    if (kind == "platt") {
        const auto flat = parse_list(require(kv, prefix + "maps"));
        if (flat.size() % 2 != 0) throw std::invalid_argument("Platt maps need slope,intercept pairs");
        std::vector<PlattMap> maps;
        for (std::size_t k = 0; k < flat.size(); k += 2) maps.push_back({flat[k], flat[k + 1]});
        return RelevanceModel::platt(build_model(kv, prefix + "base."), std::move(maps),
                                     require(kv, prefix + "per_group") == "true");
    }
    throw std::invalid_argument("unknown model kind '" + kind + "'");
}

}  // namespace

RelevanceModel RelevanceModel::deserialize(std::string_view text) {
    KeyValues kv;
    std::stringstream ss{std::string(text)};
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto strip = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
        };
        kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
    }
    return build_model(kv, "");
}

std::string RelevanceModel::fingerprint() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_bytes(serialize())));
    return buf;
}

RelevanceModel train_logistic(const Dataset& train, const TrainOptions& options) {
    const auto dim = static_cast<std::size_t>(train.feature_count);
    std::vector<double> x;
    std::vector<double> y;
    for (const auto& query : train.queries) {
        for (const auto& item : query.items) {
            const auto row = x.size();
            x.resize(row + dim, 0.0);
            for (const auto& [fid, value] : item.features) x[row + static_cast<std::size_t>(fid) - 1] = value;
            y.push_back(item.relevance);
        }
    }
    const std::size_t n = y.size();
    const auto positives = std::count(y.begin(), y.end(), 1.0);
    if (positives == 0 || static_cast<std::size_t>(positives) == n) {
        throw std::invalid_argument(
            "training split contains a single relevance class; use RelevanceModel::constant instead");
    }

    std::vector<double> mean(dim, 0.0), scale(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < dim; ++k) mean[k] += x[i * dim + k];
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < dim; ++k) {
            const double d = x[i * dim + k] - mean[k];
            scale[k] += d * d;
        }
    }
    for (std::size_t k = 0; k < dim; ++k) scale[k] = std::sqrt(scale[k] / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < dim; ++k) {
            auto& v = x[i * dim + k];
            v = scale[k] > 0 ? (v - mean[k]) / scale[k] : 0.0;
        }
    }

    std::vector<double> w(dim, 0.0), grad(dim);
    double b = 0.0;
    for (int iter = 0; iter < options.iterations; ++iter) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double grad_b = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = &x[i * dim];
            double z = b;
            for (std::size_t k = 0; k < dim; ++k) z += w[k] * row[k];
            const double r = sigmoid(z) - y[i];
            for (std::size_t k = 0; k < dim; ++k) grad[k] += r * row[k];
            grad_b += r;
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t k = 0; k < dim; ++k) {
            w[k] -= options.learning_rate * (grad[k] * inv_n + options.l2 * w[k]);
        }
        b -= options.learning_rate * grad_b * inv_n;
    }

    std::vector<double> raw(dim, 0.0);
    double intercept = b;
    for (std::size_t k = 0; k < dim; ++k) {
        if (scale[k] > 0) {
            raw[k] = w[k] / scale[k];
            intercept -= raw[k] * mean[k];
        }
    }
    return RelevanceModel::logistic(std::move(raw), intercept);
}

RelevanceModel corrupt_scores(const RelevanceModel& base, const CorruptionSpec& spec) {
    return RelevanceModel::corrupted(base, spec);
}

namespace {

struct CalibrationPoint {
    double x;       // logit of the base score
    double count;   // impressions
    double target;  // sum of click / propensity
};

// Newton's method with backtracking on the convex weighted objective, ridge
// pulling toward the identity map.
PlattMap fit_platt(const std::vector<CalibrationPoint>& points, int max_iterations) {
    constexpr double ridge = 1e-4;
    double total = 0;
    for (const auto& p : points) total += p.count;

    auto objective = [&](double a, double b) {
        double f = 0;
        for (const auto& p : points) {
            const double z = a * p.x + b;
            f += p.count * softplus(z) - p.target * z;
        }
        return f / total + 0.5 * ridge * ((a - 1) * (a - 1) + b * b);
    };

    double a = 1.0, b = 0.0;
    double current = objective(a, b);
    for (int iter = 0; iter < max_iterations; ++iter) {
        double ga = 0, gb = 0, haa = 0, hab = 0, hbb = 0;
        for (const auto& p : points) {
            const double s = sigmoid(a * p.x + b);
            const double r = p.count * s - p.target;
            const double w = p.count * s * (1 - s);
            ga += r * p.x;
            gb += r;
            haa += w * p.x * p.x;
            hab += w * p.x;
            hbb += w;
        }
        ga = ga / total + ridge * (a - 1);
        gb = gb / total + ridge * b;
        haa = haa / total + ridge;
        hab /= total;
        hbb = hbb / total + ridge;
        const double det = haa * hbb - hab * hab;
        if (!(det > 0)) break;
        const double da = (hbb * ga - hab * gb) / det;
        const double db = (haa * gb - hab * ga) / det;

        double step = 1.0;
        double next = objective(a - da, b - db);
        while (next > current && step > 1e-10) {
            step *= 0.5;
            next = objective(a - step * da, b - step * db);
        }
        if (next > current) break;
        a -= step * da;
        b -= step * db;
        const bool done = std::max(std::abs(step * da), std::abs(step * db)) < 1e-10;
        current = next;
        if (done) break;
    }
    return {a, b};
}

}  // namespace

RelevanceModel platt_calibrate(const RelevanceModel& base, const InteractionLog& log,
                               const Dataset& sim, bool per_group, std::vector<std::string>* warnings,
                               int max_iterations) {
    if (log.size() == 0) throw std::invalid_argument("Platt calibration needs a nonempty log");

    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t q = 0; q < sim.queries.size(); ++q) by_id.emplace(sim.queries[q].query_id, q);

    // Aggregate impressions per (query, item, scope) before fitting.
    const std::size_t scopes = per_group ? log.group_count() : 1;
    std::vector<std::vector<std::pair<double, double>>> acc(sim.queries.size());
    for (std::size_t q = 0; q < sim.queries.size(); ++q) {
        acc[q].assign(sim.queries[q].items.size() * scopes, {0.0, 0.0});
    }
    for (std::size_t i = 0; i < log.size(); ++i) {
        auto it = by_id.find(log.query_id(i));
        if (it == by_id.end()) {
            throw std::invalid_argument("logged query '" + log.query_id(i) + "' not in the simulation split");
        }
        for (std::size_t g = 0; g < log.group_count(); ++g) {
            for (const auto& pos : log.slate(i, g)) {
                auto& cell = acc[it->second][static_cast<std::size_t>(pos.item) * scopes + (per_group ? g : 0)];
                cell.first += 1.0;
                cell.second += pos.click / pos.propensity;
            }
        }
    }

    std::vector<std::vector<CalibrationPoint>> points(scopes);
    for (std::size_t q = 0; q < sim.queries.size(); ++q) {
        for (std::size_t k = 0; k < acc[q].size(); ++k) {
            if (acc[q][k].first == 0) continue;
            const std::size_t item = k / scopes;
            const double s = base.score(sim.queries[q], item);
            points[k % scopes].push_back({logit(s), acc[q][k].first, acc[q][k].second});
        }
    }

    std::vector<PlattMap> maps(scopes);
    for (std::size_t s = 0; s < scopes; ++s) {
        if (points[s].empty()) {
            if (warnings) {
                warnings->push_back("no impressions for " +
                                    (per_group ? "group '" + log.groups()[s] + "'" : std::string("log")) +
                                    "; using the identity calibration map");
            }
            continue;
        }
        maps[s] = fit_platt(points[s], max_iterations);
    }
    return RelevanceModel::platt(base, std::move(maps), per_group);
}

}  // namespace fairstage
