#include "fairstage/corpus.hpp"

#include "fairstage/error.hpp"
#include "fairstage/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

namespace fairstage {

double Item::feature(int feature_index) const noexcept {
    auto it = std::lower_bound(features.begin(), features.end(), feature_index,
                               [](const auto& f, int idx) { return f.first < idx; });
    return (it != features.end() && it->first == feature_index) ? it->second : 0.0;
}

std::size_t Dataset::group_index(std::string_view name) const {
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g] == name) return g;
    }
    throw std::domain_error("unknown group '" + std::string(name) + "'");
}

std::size_t Dataset::item_count() const noexcept {
    std::size_t n = 0;
    for (const auto& q : queries) n += q.items.size();
    return n;
}

void SplitSpec::validate() const {
    if (train < 0 || sim < 0 || test < 0) {
        throw std::invalid_argument("split fractions must be nonnegative");
    }
    if (std::abs(train + sim + test - 1.0) > 1e-9) {
        throw std::invalid_argument("split fractions must sum to 1");
    }
}

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_names(std::string_view list) {
    std::vector<std::string_view> out;
    while (!list.empty()) {
        const auto comma = std::min(list.find(','), list.size());
        if (comma > 0) out.push_back(list.substr(0, comma));
        list = list.substr(std::min(comma + 1, list.size()));
    }
    return out;
}

std::size_t group_id(Dataset& dataset, std::string_view name) {
    for (std::size_t g = 0; g < dataset.groups.size(); ++g) {
        if (dataset.groups[g] == name) return g;
    }
    if (dataset.groups.size() == kMaxGroups) throw std::invalid_argument("more than 32 groups");
    dataset.groups.emplace_back(name);
    return dataset.groups.size() - 1;
}

template <typename T>
bool parse_number(std::string_view token, T& out) {
    const char* end = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), end, out);
    return ec == std::errc() && ptr == end;
}

}  // namespace

Dataset parse_letor(std::istream& in) {
    Dataset dataset;
    std::unordered_map<std::string, std::size_t> by_qid;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view body = line;
        std::string_view comment;
        if (auto hash = body.find('#'); hash != std::string_view::npos) {
            comment = trim(body.substr(hash + 1));
            body = body.substr(0, hash);
        }
        body = trim(body);
        if (body.empty()) {
            // A leading "# dataset groups=a,b" line fixes the group order.
            if (comment.starts_with("dataset groups=")) {
                for (auto name : split_names(comment.substr(15))) group_id(dataset, name);
            }
            continue;
        }

        std::vector<std::string_view> tokens;
        std::size_t pos = 0;
        while (pos < body.size()) {
            const auto start = body.find_first_not_of(" \t", pos);
            if (start == std::string_view::npos) break;
            auto stop = body.find_first_of(" \t", start);
            if (stop == std::string_view::npos) stop = body.size();
            tokens.push_back(body.substr(start, stop - start));
            pos = stop;
        }
        if (tokens.size() < 2) throw ParseError(line_no, "expected '<label> qid:<qid> ...'");

        Item item;
        if (!parse_number(tokens[0], item.raw_label) || item.raw_label < 0) {
            throw ParseError(line_no, "label must be a nonnegative integer, got '" +
                                          std::string(tokens[0]) + "'");
        }
        if (!tokens[1].starts_with("qid:") || tokens[1].size() == 4) {
            throw ParseError(line_no, "second field must be qid:<id>");
        }
        std::string qid(tokens[1].substr(4));

        for (std::size_t k = 2; k < tokens.size(); ++k) {
            const auto colon = tokens[k].find(':');
            int fid = 0;
            double value = 0;
            if (colon == std::string_view::npos || !parse_number(tokens[k].substr(0, colon), fid) ||
                fid < 1 || !parse_number(tokens[k].substr(colon + 1), value)) {
                throw ParseError(line_no, "malformed feature '" + std::string(tokens[k]) + "'");
            }
            item.features.emplace_back(fid, value);
            dataset.feature_count = std::max(dataset.feature_count, fid);
        }
        std::sort(item.features.begin(), item.features.end());
        for (std::size_t k = 1; k < item.features.size(); ++k) {
            if (item.features[k].first == item.features[k - 1].first) {
                throw ParseError(line_no, "duplicate feature index " +
                                              std::to_string(item.features[k].first));
            }
        }

        // Trailing "groups=a,b prob=p" annotations written by write_letor.
        while (!comment.empty()) {
            const auto stop = std::min(comment.find(' '), comment.size());
            const auto token = comment.substr(0, stop);
            comment = trim(comment.substr(stop));
            if (token.starts_with("groups=")) {
                for (auto name : split_names(token.substr(7))) {
                    item.groups |= GroupMask{1U} << group_id(dataset, name);
                }
            } else if (token.starts_with("prob=")) {
                double p = 0;
                if (!parse_number(token.substr(5), p) || p < 0.0 || p > 1.0) {
                    throw ParseError(line_no, "relevance probability must lie in [0, 1]");
                }
                item.relevance_prob = p;
            }
        }

        auto [it, inserted] = by_qid.try_emplace(qid, dataset.queries.size());
        if (inserted) dataset.queries.push_back(QueryInstance{qid, {}});
        auto& query = dataset.queries[it->second];
        item.index = query.items.size();
        query.items.push_back(std::move(item));
    }
    return dataset;
}

Dataset parse_letor_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
    return parse_letor(in);
}

void write_letor(std::ostream& out, const Dataset& dataset) {
    const auto old_precision = out.precision(17);
    if (!dataset.groups.empty()) {
        out << "# dataset groups=";
        for (std::size_t g = 0; g < dataset.groups.size(); ++g) out << (g ? "," : "") << dataset.groups[g];
        out << '\n';
    }
    for (const auto& query : dataset.queries) {
        for (const auto& item : query.items) {
            out << item.raw_label << " qid:" << query.query_id;
            for (const auto& [fid, value] : item.features) out << ' ' << fid << ':' << value;
            if (item.groups != 0) {
                out << " # groups=";
                bool first = true;
                for (std::size_t g = 0; g < dataset.groups.size(); ++g) {
                    if (!item.in_group(g)) continue;
                    out << (first ? "" : ",") << dataset.groups[g];
                    first = false;
                }
            }
            if (item.relevance_prob) out << (item.groups ? " " : " # ") << "prob=" << *item.relevance_prob;
            out << '\n';
        }
    }
    out.precision(old_precision);
}

int binarize_relevance(int raw_label) {
    if (raw_label < 0 || raw_label > 4) {
        throw std::domain_error("relevance label " + std::to_string(raw_label) + " outside 0..4");
    }
    return raw_label >= 2 ? 1 : 0;
}

void binarize(Dataset& dataset) {
    for (auto& query : dataset.queries) {
        for (auto& item : query.items) item.relevance = binarize_relevance(item.raw_label);
    }
}

Dataset assign_groups(Dataset dataset, int feature_index) {
    if (feature_index < 1) throw std::invalid_argument("feature index must be >= 1");
    dataset.groups = {"adv", "disadv"};
    for (auto& query : dataset.queries) {
        for (auto& item : query.items) {
            item.groups = item.feature(feature_index) == 0.0 ? GroupMask{1U << 1} : GroupMask{1U << 0};
        }
    }
    return dataset;
}

SplitResult split(const Dataset& dataset, const SplitSpec& spec) {
    spec.validate();
    if (dataset.queries.empty()) throw std::invalid_argument("cannot split an empty dataset");

    const std::size_t n = dataset.queries.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    KeyedRng rng(mix_key(spec.seed, 0x5b1170ULL));
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }

    const auto n_train = std::min<std::size_t>(n, std::llround(spec.train * static_cast<double>(n)));
    const auto n_sim =
        std::min<std::size_t>(n - n_train, std::llround(spec.sim * static_cast<double>(n)));

    auto take = [&](std::size_t begin, std::size_t end) {
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
        std::sort(idx.begin(), idx.end());
        Dataset part;
        part.groups = dataset.groups;
        part.feature_count = dataset.feature_count;
        part.queries.reserve(idx.size());
        for (auto i : idx) part.queries.push_back(dataset.queries[i]);
        return part;
    };
    return SplitResult{take(0, n_train), take(n_train, n_train + n_sim), take(n_train + n_sim, n)};
}

double average_relevant(const Dataset& dataset, std::size_t group) {
    if (group >= dataset.groups.size()) throw std::domain_error("unknown group index");
    if (dataset.queries.empty()) throw std::invalid_argument("average_relevant on empty dataset");
    double total = 0;
    for (const auto& query : dataset.queries) {
        for (const auto& item : query.items) {
            if (item.in_group(group)) total += item.relevance;
        }
    }
    return total / static_cast<double>(dataset.queries.size());
}

double average_relevant(const Dataset& dataset, std::string_view group) {
    return average_relevant(dataset, dataset.group_index(group));
}

std::vector<double> decaying_profile(std::size_t count, double head, double decay) {
    std::vector<double> p(count);
    for (std::size_t j = 0; j < count; ++j) {
        p[j] = head * std::exp(-static_cast<double>(j) / decay);
    }
    return p;
}

SynthResult synth_generate(const SynthConfig& config) {
    if (config.groups.empty() || config.groups.size() > kMaxGroups) {
        throw std::invalid_argument("synthetic config needs 1..32 groups");
    }
    SynthResult result;
    auto& dataset = result.dataset;
    dataset.feature_count = 3;
    for (const auto& group : config.groups) {
        for (double p : group.relevance_probs) {
            if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("relevance probability outside [0,1]");
        }
        dataset.groups.push_back(group.name);

        std::vector<double> sorted = group.relevance_probs;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        std::vector<double> u(sorted.size() + 1, 0.0);
        for (std::size_t t = 0; t < sorted.size(); ++t) u[t + 1] = u[t] + sorted[t];
        result.exact_u.push_back(std::move(u));
    }

    dataset.queries.reserve(config.num_queries);
    for (std::size_t q = 0; q < config.num_queries; ++q) {
        KeyedRng rng(mix_key(config.seed, q, 0x51a7ULL));
        auto gaussian = [&rng] {
            const double u1 = 1.0 - rng.uniform();
            const double u2 = rng.uniform();
            return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        };

        QueryInstance query;
        query.query_id = std::to_string(q + 1);
        for (std::size_t g = 0; g < config.groups.size(); ++g) {
            const auto& group = config.groups[g];
            for (double p : group.relevance_probs) {
                Item item;
                item.relevance_prob = p;
                item.relevance = rng.bernoulli(p) ? 1 : 0;
                item.raw_label = item.relevance ? 2 + static_cast<int>(rng.below(3))
                                                : static_cast<int>(rng.below(2));
                item.groups = GroupMask{1U} << g;
                const double clicks =
                    group.zero_clicks ? 0.0 : 1.0 + std::floor(-std::log(1.0 - rng.uniform()) * 20.0);
                item.features = {{1, clicks}, {2, p + config.feature_noise * gaussian()}, {3, gaussian()}};
                query.items.push_back(std::move(item));
            }
        }
        for (std::size_t i = query.items.size(); i > 1; --i) {
            std::swap(query.items[i - 1], query.items[rng.below(i)]);
        }
        for (std::size_t j = 0; j < query.items.size(); ++j) query.items[j].index = j;
        dataset.queries.push_back(std::move(query));
    }
    return result;
}

SynthConfig default_synth_config(std::uint64_t seed, std::size_t num_queries) {
    SynthConfig config;
    config.groups = {{"adv", decaying_profile(50, 0.5, 12.0), false},
                     {"disadv", decaying_profile(80, 0.44, 35.0), true}};
    config.num_queries = num_queries;
    config.feature_noise = 0.1;
    config.seed = seed;
    return config;
}

}  // namespace fairstage
