// Discrete-event replay of the stage graph. Independent of the closed-form
// evaluator in sim.cpp on purpose: the two must agree cycle-for-cycle, which
// the test suite checks on randomized workloads.

#include <deque>
#include <map>
#include <queue>

#include "mambaq/error.hpp"
#include "mambaq/sim.hpp"

namespace mambaq {

uint64_t replay_total_cycles(const std::vector<StageNode>& nodes) {
    const size_t n = nodes.size();
    if (n == 0) return 0;

    // units run their stages strictly in issue order (a static schedule)
    std::map<std::string, std::deque<size_t>> queues;
    for (size_t i = 0; i < n; ++i) queues[nodes[i].unit].push_back(i);
    std::vector<char> done(n, 0);
    std::map<std::string, char> busy;
    for (auto& [u, q] : queues) busy[u] = 0;

    auto ready = [&](size_t i) {
        for (int64_t d : nodes[i].deps)
            if (!done[static_cast<size_t>(d)]) return false;
        return true;
    };

    using Ev = std::pair<uint64_t, size_t>;  // (completion cycle, node)
    std::priority_queue<Ev, std::vector<Ev>, std::greater<Ev>> heap;

    auto try_start = [&](uint64_t now) {
        for (auto& [u, q] : queues) {
            if (busy[u] || q.empty()) continue;
            const size_t head = q.front();
            if (!ready(head)) continue;
            q.pop_front();
            busy[u] = 1;
            heap.push({now + nodes[head].duration, head});
        }
    };

    uint64_t total = 0;
    size_t completed = 0;
    try_start(0);
    while (!heap.empty()) {
        const auto [t, i] = heap.top();
        heap.pop();
        done[i] = 1;
        busy[nodes[i].unit] = 0;
        ++completed;
        total = std::max(total, t);
        try_start(t);
    }
    if (completed != n) throw Error("replay_total_cycles: stage graph deadlocked");
    return total;
}

int64_t fifo_depth_replay(int64_t E, int64_t par_p, int64_t par_c) {
    if (E <= 0 || par_p <= 0 || par_c <= 0) throw ConfigError("fifo_depth: arguments must be positive");
    int64_t produced = 0, q = 0, maxq = 0;
    while (produced < E || q > 0) {
        q -= std::min(par_c, q);  // consume what was present at cycle start
        const int64_t p = std::min(par_p, E - produced);
        produced += p;
        q += p;
        maxq = std::max(maxq, q);
    }
    return maxq;
}

}  // namespace mambaq
