#pragma once

// Rehearsal memory, working sets, and the two memory update rules: top-M by
// sample weight (fairness selection) and classic reservoir sampling.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "clwrx/error.hpp"
#include "clwrx/rng.hpp"
#include "clwrx/wmmse.hpp"

namespace clwrx {

struct MemoryItem {
    LabeledSample sample;
    std::size_t inserted_at = 0;  // timestamp t at which the sample was revealed

    friend bool operator==(const MemoryItem&, const MemoryItem&) = default;
};

class MemoryBuffer {
public:
    MemoryBuffer() = default;
    explicit MemoryBuffer(std::size_t capacity) : capacity_(capacity) {}

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    bool full() const noexcept { return items_.size() >= capacity_; }

    const std::vector<MemoryItem>& items() const noexcept { return items_; }

    bool contains(std::uint64_t sample_id) const {
        return std::any_of(items_.begin(), items_.end(),
                           [&](const MemoryItem& m) { return m.sample.sample_id() == sample_id; });
    }

    void push(MemoryItem item) {
        if (full()) throw ConfigError("memory: insert into full buffer (capacity " + std::to_string(capacity_) + ")");
        if (contains(item.sample.sample_id()))
            throw DataError("memory: duplicate sample id " + std::to_string(item.sample.sample_id()));
        items_.push_back(std::move(item));
    }

    void replace(std::size_t slot, MemoryItem item) {
        if (slot >= items_.size()) throw ConfigError("memory: slot out of range");
        if (items_[slot].sample.sample_id() != item.sample.sample_id() && contains(item.sample.sample_id()))
            throw DataError("memory: duplicate sample id " + std::to_string(item.sample.sample_id()));
        items_[slot] = std::move(item);
    }

    // Number of stored samples per episode id.
    std::map<std::uint32_t, std::size_t> episode_composition() const {
        std::map<std::uint32_t, std::size_t> out;
        for (const auto& m : items_) ++out[m.sample.episode_id()];
        return out;
    }

private:
    std::size_t capacity_ = 0;
    std::vector<MemoryItem> items_;
};

// G_t = M_t followed by D_t ordered by sample id.
struct WorkingSet {
    std::vector<MemoryItem> items;

    std::size_t size() const noexcept { return items.size(); }
    const LabeledSample& sample(std::size_t i) const { return items[i].sample; }

    static WorkingSet build(const MemoryBuffer& memory, std::span<const LabeledSample> batch, std::size_t t) {
        WorkingSet ws;
        ws.items.reserve(memory.size() + batch.size());
        ws.items.insert(ws.items.end(), memory.items().begin(), memory.items().end());
        std::vector<const LabeledSample*> sorted;
        for (const auto& s : batch) sorted.push_back(&s);
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const auto* a, const auto* b) { return a->sample_id() < b->sample_id(); });
        for (const auto* s : sorted) ws.items.push_back(MemoryItem{*s, t});
        return ws;
    }
};

// Indices of the `m` entries ranked highest by (lambda, g, insertion time,
// sample id), all descending. Ties in lambda go to the worse-served sample,
// then the more recent one.
inline std::vector<std::size_t> top_m_indices(std::span<const double> lambda, std::span<const double> g,
                                              const WorkingSet& ws, std::size_t m) {
    detail::require(lambda.size() == ws.size() && g.size() == ws.size(), "top_m: lambda/g not aligned with working set");
    std::vector<std::size_t> idx(ws.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
        if (lambda[a] != lambda[b]) return lambda[a] > lambda[b];
        if (g[a] != g[b]) return g[a] > g[b];
        if (ws.items[a].inserted_at != ws.items[b].inserted_at) return ws.items[a].inserted_at > ws.items[b].inserted_at;
        return ws.sample(a).sample_id() > ws.sample(b).sample_id();
    };
    m = std::min(m, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m), idx.end(), better);
    idx.resize(m);
    return idx;
}

// Next memory from the final sample weights of a timestamp. `g` holds the
// current performance loss per working-set entry and is used for ties.
inline MemoryBuffer update_memory_topM(std::span<const double> lambda, const WorkingSet& ws, std::size_t capacity,
                                       std::span<const double> g) {
    MemoryBuffer next(capacity);
    if (ws.size() < capacity) {
        for (const auto& item : ws.items) next.push(item);
        return next;
    }
    for (auto i : top_m_indices(lambda, g, ws, capacity)) next.push(ws.items[i]);
    return next;
}

inline MemoryBuffer update_memory_topM(std::span<const double> lambda, const WorkingSet& ws, std::size_t capacity) {
    const std::vector<double> zeros(ws.size(), 0.0);
    return update_memory_topM(lambda, ws, capacity, zeros);
}

// Reservoir rule: fill while below capacity, afterwards replace a uniform
// slot with probability capacity / seen_count.
inline void reservoir_update(MemoryBuffer& mem, const MemoryItem& item, std::uint64_t seen_count, RandomStream& rng) {
    detail::require(seen_count >= 1, "reservoir_update: seen_count must be >= 1");
    if (mem.capacity() == 0) return;
    if (!mem.full()) {
        mem.push(item);
        return;
    }
    const auto j = rng.index(seen_count);
    if (j < mem.capacity()) mem.replace(static_cast<std::size_t>(j), item);
}

}  // namespace clwrx
