#pragma once

#include "fairstage/clicklog.hpp"
#include "fairstage/corpus.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace testutil {

using fairstage::Dataset;
using fairstage::Item;
using fairstage::QueryInstance;

// One-group dataset whose items carry the given feature-1 values (used as
// scores by a unit-weight logistic model) and relevances.
inline QueryInstance make_query(const std::string& id, const std::vector<double>& x,
                                const std::vector<int>& rel, const std::vector<std::uint32_t>& groups = {}) {
    QueryInstance q;
    q.query_id = id;
    for (std::size_t j = 0; j < x.size(); ++j) {
        Item item;
        item.index = j;
        item.features = {{1, x[j]}};
        item.relevance = rel.empty() ? 0 : rel[j];
        item.raw_label = item.relevance ? 2 : 0;
        item.groups = groups.empty() ? 1U : groups[j];
        q.items.push_back(item);
    }
    return q;
}

// A log with one group and one position per request: (propensity, click).
inline fairstage::InteractionLog single_rank_log(const std::vector<std::pair<double, int>>& rows,
                                                 std::size_t depth = 1) {
    fairstage::InteractionLog log({"g"}, {depth}, "fp");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        log.add_request(i, "q", {{{0, static_cast<std::uint8_t>(rows[i].second), rows[i].first}}});
    }
    return log;
}

}  // namespace testutil
