#include "fairstage/clicklog.hpp"

#include "fairstage/error.hpp"
#include "fairstage/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace fairstage {

InteractionLog::InteractionLog(std::vector<std::string> groups, std::vector<std::size_t> depth,
                               std::string fingerprint)
    : groups_(std::move(groups)), depth_(std::move(depth)), fingerprint_(std::move(fingerprint)) {
    if (groups_.size() != depth_.size()) throw std::invalid_argument("one depth per group required");
}

void InteractionLog::add_request(std::uint64_t request_id, std::string query_id,
                                 const std::vector<std::vector<LoggedPosition>>& slates) {
    if (slates.size() != groups_.size()) throw std::invalid_argument("one slate per group required");
    for (std::size_t g = 0; g < slates.size(); ++g) {
        if (slates[g].size() > depth_[g]) throw std::invalid_argument("slate longer than the group's depth");
        positions_.insert(positions_.end(), slates[g].begin(), slates[g].end());
        offsets_.push_back(positions_.size());
    }
    request_ids_.push_back(request_id);
    query_ids_.push_back(std::move(query_id));
}

std::span<const LoggedPosition> InteractionLog::slate(std::size_t request, std::size_t group) const {
    if (request >= size() || group >= groups_.size()) throw std::out_of_range("slate index");
    const auto k = request * groups_.size() + group;
    return {positions_.data() + offsets_[k], offsets_[k + 1] - offsets_[k]};
}

void InteractionLog::validate() const {
    for (const auto& pos : positions_) {
        if (!(pos.propensity > 0.0 && pos.propensity <= 1.0)) {
            throw std::invalid_argument("logged propensity outside (0, 1]");
        }
        if (pos.click > 1) throw std::invalid_argument("click must be 0 or 1");
    }
}

void InteractionLog::write_csv(std::ostream& out) const {
    out << "# groups = ";
    for (std::size_t g = 0; g < groups_.size(); ++g) out << (g ? "," : "") << groups_[g];
    out << "\n# depth = ";
    for (std::size_t g = 0; g < depth_.size(); ++g) out << (g ? "," : "") << depth_[g];
    out << "\n# fingerprint = " << fingerprint_ << "\n# requests = " << size() << "\n";
    out << "request_id,query_id,group,rank,item_id,propensity,click\n";
    char prop[32];
    for (std::size_t i = 0; i < size(); ++i) {
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            const auto s = slate(i, g);
            for (std::size_t r = 0; r < s.size(); ++r) {
                std::snprintf(prop, sizeof prop, "%.17g", s[r].propensity);
                out << request_ids_[i] << ',' << query_ids_[i] << ',' << groups_[g] << ',' << r + 1 << ','
                    << s[r].item << ',' << prop << ',' << static_cast<int>(s[r].click) << '\n';
            }
        }
    }
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) out.push_back(tok);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

std::string strip(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
}

template <typename T>
T number(const std::string& token, std::size_t line) {
    T v{};
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
        throw ParseError(line, "bad number '" + token + "'");
    }
    return v;
}

}  // namespace

InteractionLog InteractionLog::read_csv(std::istream& in) {
    std::map<std::string, std::string> meta;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;

    std::optional<InteractionLog> log;
    std::uint64_t current_id = 0;
    std::string current_query;
    std::vector<std::vector<LoggedPosition>> slates;
    bool open = false;
    auto flush = [&] {
        if (open) log->add_request(current_id, current_query, slates);
        open = false;
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq != std::string::npos) meta[strip(line.substr(1, eq - 1))] = strip(line.substr(eq + 1));
            continue;
        }
        if (!header_seen) {
            if (strip(line) != "request_id,query_id,group,rank,item_id,propensity,click") {
                throw ParseError(line_no, "unexpected log header");
            }
            header_seen = true;
            auto groups = split_on(meta["groups"], ',');
            std::vector<std::size_t> depth;
            for (const auto& d : split_on(meta["depth"], ',')) depth.push_back(number<std::size_t>(d, line_no));
            if (groups.empty() || groups.size() != depth.size()) {
                throw ParseError(line_no, "log metadata must list groups and depth");
            }
            log.emplace(std::move(groups), std::move(depth), meta["fingerprint"]);
            slates.assign(log->group_count(), {});
            continue;
        }
        const auto fields = split_on(strip(line), ',');
        if (fields.size() != 7) throw ParseError(line_no, "expected 7 fields");
        const auto id = number<std::uint64_t>(fields[0], line_no);
        if (!open || id != current_id || fields[1] != current_query) {
            flush();
            current_id = id;
            current_query = fields[1];
            for (auto& s : slates) s.clear();
            open = true;
        }
        const auto& names = log->groups();
        const auto g = static_cast<std::size_t>(std::find(names.begin(), names.end(), fields[2]) - names.begin());
        if (g == names.size()) throw ParseError(line_no, "unknown group '" + fields[2] + "'");
        const auto rank = number<std::size_t>(fields[3], line_no);
        if (rank != slates[g].size() + 1) throw ParseError(line_no, "ranks must be consecutive from 1");
        LoggedPosition pos;
        pos.item = number<std::int32_t>(fields[4], line_no);
        pos.propensity = number<double>(fields[5], line_no);
        pos.click = static_cast<std::uint8_t>(number<int>(fields[6], line_no));
        slates[g].push_back(pos);
    }
    if (!header_seen) throw ParseError(line_no, "missing log header");
    flush();
    if (auto it = meta.find("requests"); it != meta.end() && number<std::size_t>(it->second, 0) != log->size()) {
        // Requests whose every slate is empty leave no rows behind.
        throw ParseError(line_no, "log declares " + it->second + " requests but contains " +
                                      std::to_string(log->size()));
    }
    log->validate();
    return std::move(*log);
}

std::vector<std::size_t> rank_group(const RelevanceModel& model, const QueryInstance& query,
                                    std::size_t group, std::size_t t_max) {
    if (t_max < 1) throw std::invalid_argument("t_max must be >= 1");
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t j = 0; j < query.items.size(); ++j) {
        if (query.items[j].in_group(group)) scored.emplace_back(model.score(query, j), j);
    }
    const auto keep = std::min(t_max, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      [](const auto& a, const auto& b) {
                          return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    std::vector<std::size_t> out(keep);
    for (std::size_t k = 0; k < keep; ++k) out[k] = scored[k].second;
    return out;
}

std::vector<QueryRanking> rank_queries(const Dataset& dataset, const RelevanceModel& model,
                                       std::span<const std::size_t> t_max) {
    std::vector<QueryRanking> out(dataset.queries.size());
    for (std::size_t q = 0; q < dataset.queries.size(); ++q) {
        const auto& query = dataset.queries[q];
        auto& ranking = out[q];
        ranking.items.resize(t_max.size());
        ranking.scores.resize(t_max.size());
        for (std::size_t g = 0; g < t_max.size(); ++g) {
            ranking.items[g] = rank_group(model, query, g, t_max[g]);
            for (auto j : ranking.items[g]) ranking.scores[g].push_back(model.score(query, j));
        }
    }
    return out;
}

InteractionLog simulate_log(const Dataset& sim, const RelevanceModel& model,
                            std::span<const std::size_t> t_max, std::size_t m, std::uint64_t seed,
                            RelevanceSource source) {
    if (sim.queries.empty()) throw std::invalid_argument("simulation split is empty");
    if (m < 2) throw std::invalid_argument("a log needs m > 1 requests");
    if (t_max.size() != sim.groups.size()) throw std::invalid_argument("one t_max per group required");

    const auto rankings = rank_queries(sim, model, t_max);
    InteractionLog log(sim.groups, {t_max.begin(), t_max.end()}, model.fingerprint());
    std::vector<std::vector<LoggedPosition>> slates(t_max.size());
    for (std::size_t i = 0; i < m; ++i) {
        KeyedRng rng(mix_key(seed, i, 0xc11c5ULL));
        const auto q = static_cast<std::size_t>(rng.below(sim.queries.size()));
        const auto& query = sim.queries[q];
        for (std::size_t g = 0; g < t_max.size(); ++g) {
            auto& slate = slates[g];
            slate.clear();
            const auto& ranked = rankings[q].items[g];
            for (std::size_t r = 0; r < ranked.size(); ++r) {
                const auto& item = query.items[ranked[r]];
                const double propensity = 1.0 / static_cast<double>(r + 1);
                const bool observed = rng.bernoulli(propensity);
                bool relevant = item.relevance != 0;
                if (source == RelevanceSource::resample) {
                    if (!item.relevance_prob) throw std::invalid_argument("resampling needs relevance probabilities");
                    relevant = rng.bernoulli(*item.relevance_prob);
                }
                slate.push_back({static_cast<std::int32_t>(ranked[r]),
                                 static_cast<std::uint8_t>(observed && relevant), propensity});
            }
        }
        log.add_request(i, query.query_id, slates);
    }
    return log;
}

double true_expected_relevant(const Dataset& test, const RelevanceModel& model, std::size_t group,
                              std::size_t t) {
    if (test.queries.empty() || t == 0) return 0.0;
    double total = 0;
    for (const auto& query : test.queries) {
        for (auto j : rank_group(model, query, group, t)) total += query.items[j].relevance;
    }
    return total / static_cast<double>(test.queries.size());
}

namespace {

template <typename Value>
OracleTable build_oracle(const Dataset& dataset, const RelevanceModel& model,
                         std::span<const std::size_t> t_max, Value value) {
    OracleTable table;
    for (std::size_t g = 0; g < t_max.size(); ++g) table.u.emplace_back(t_max[g] + 1, 0.0);
    if (dataset.queries.empty()) return table;
    for (const auto& query : dataset.queries) {
        for (std::size_t g = 0; g < t_max.size(); ++g) {
            const auto ranked = rank_group(model, query, g, t_max[g]);
            double running = 0;
            for (std::size_t t = 1; t <= t_max[g]; ++t) {
                if (t <= ranked.size()) running += value(query.items[ranked[t - 1]]);
                table.u[g][t] += running;
            }
        }
    }
    const double n = static_cast<double>(dataset.queries.size());
    for (auto& row : table.u) {
        for (auto& v : row) v /= n;
    }
    return table;
}

}  // namespace

OracleTable oracle_table(const Dataset& test, const RelevanceModel& model, std::span<const std::size_t> t_max) {
    return build_oracle(test, model, t_max, [](const Item& item) { return static_cast<double>(item.relevance); });
}

OracleTable exact_oracle_table(const Dataset& dataset, const RelevanceModel& model,
                               std::span<const std::size_t> t_max) {
    return build_oracle(dataset, model, t_max, [](const Item& item) {
        if (!item.relevance_prob) throw std::invalid_argument("exact oracle needs relevance probabilities");
        return *item.relevance_prob;
    });
}

}  // namespace fairstage
