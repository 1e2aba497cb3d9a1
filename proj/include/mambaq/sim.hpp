#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mambaq/model.hpp"

namespace mambaq {

struct MmuGeom {
    int64_t d_in = 16;
    int64_t d_out = 4;
};

struct SsmuGeom {
    int64_t emu_parallelism = 8;        // lanes per elementwise operator class
    int64_t nonlinear_parallelism = 0;  // 0 -> same as emu_parallelism
};

struct HtuGeom {
    int64_t pot_points = 128;    // FHT size the unit is built for
    int64_t small_points = 40;   // dense +/-1 stage size
    int64_t mm_parallelism = 0;  // 0 -> log2(pot_points) lanes (FHT stage-count parity)
    int64_t lanes = 1;           // parallel transform lanes for full-vector work
};

struct HwConfig {
    std::string name = "hw";
    double freq_mhz = 400.0;
    double dram_bandwidth_GBps = 12.0;
    double dram_efficiency = 0.85;  // achievable fraction of peak
    int64_t dsp_total = 1968;
    int64_t bram36_total = 967;
    int64_t uram_total = 463;
    MmuGeom mmu;
    SsmuGeom ssmu;
    HtuGeom htu;

    int64_t nl_parallelism() const {
        return ssmu.nonlinear_parallelism > 0 ? ssmu.nonlinear_parallelism : ssmu.emu_parallelism;
    }
    int64_t mm_par() const;
    double bytes_per_cycle() const { return dram_bandwidth_GBps * 1e9 * dram_efficiency / (freq_mhz * 1e6); }

    void validate() const;
    std::string to_json() const;
    static HwConfig from_json(const std::string& text);
    static HwConfig load(const std::string& path);
};

enum class Schedule { sequential, reordered, fine_tiled };
const char* schedule_name(Schedule s);
Schedule schedule_from_name(const std::string& s);

struct TileConfig {
    int64_t n_p = 4;
    int64_t p_p = 64;
};

struct Workload {
    MambaConfig cfg;
    int bits_w = 4;
    int bits_a = 4;
    int bits_ssm = 8;
    int64_t weight_group = 128;  // scale-metadata granularity for streamed weights
    Schedule schedule = Schedule::fine_tiled;
    TileConfig tile;

    void validate() const;  // bits in {4, 8, 16}
};

// --- unit latency models -------------------------------------------------

struct MmuCost {
    uint64_t compute_cycles = 0;  // ceil(K/d_in)*ceil(N/d_out) + tree fill
    uint64_t stream_cycles = 0;   // weight bytes at effective bandwidth
    uint64_t cycles = 0;          // max of the two (double-buffered)
    uint64_t dram_bytes = 0;
};
MmuCost mmu_latency(int64_t K, int64_t N, int bits_w, int64_t weight_group, const HwConfig& hw);

enum class HtuMode { fht, mm };
// Single n-point transform. fht: log2(n) butterfly stages at n/2 pairs each
// plus drain; mm: ceil(n/P_mm)*n with add/sub-only lanes. Lane parity for the
// comparison: the mm unit gets as many lanes as the FHT has stages.
uint64_t htu_latency(int64_t n, HtuMode mode, const HwConfig& hw);
// Full d_inner vector under the unit's Kronecker plan (pot FHT passes + small
// dense passes split across lanes). Falls back to a dense transform when the
// length has no supported plan.
uint64_t htu_vector_cycles(int64_t n, const HwConfig& hw);

struct SsmuCost {
    std::vector<std::pair<std::string, uint64_t>> op_cycles;  // per operator class, per head
    uint64_t pass_cycles = 0;   // coarse per-head pass: sum of classes + drain
    uint64_t fused_ii = 0;      // fused per-head cost: max class + drain
    uint64_t drain = 0;         // pipeline depth (number of classes)
    uint64_t conv_bc_cycles = 0;  // B/C channel conv, once per layer
    // analytic minimum queue depth per link in the fused pipeline
    std::vector<std::pair<std::string, int64_t>> fifo_depths;
};
SsmuCost ssmu_latency(const MambaConfig& cfg, TileConfig tile, const HwConfig& hw);

// closed-form max occupancy of a producer(par_p)/consumer(par_c) link moving
// E elements, consumer starting one cycle behind. sim_event replays it.
int64_t fifo_depth_analytic(int64_t elements, int64_t par_p, int64_t par_c);
int64_t fifo_depth_replay(int64_t elements, int64_t par_p, int64_t par_c);

// --- buffers --------------------------------------------------------------

struct BufferItem {
    std::string name;
    uint64_t bytes = 0;
    int64_t uram_blocks = 0;
    int64_t bram_blocks = 0;
};
struct BufferReport {
    std::vector<BufferItem> items;
    int64_t uram_used = 0;
    int64_t bram_used = 0;
    uint64_t total_bytes = 0;
    std::vector<std::string> notes;
};
// naive (sequential): persistent state plus every SSM intermediate at full
// [heads x P x N] size; reordered: per-head intermediates; fine_tiled:
// tile-sized intermediates. Buffers >= half a URAM block go to URAM (36 KB),
// smaller ones to BRAM (4.5 KB).
BufferReport buffer_report(const MambaConfig& cfg, Schedule sched, TileConfig tile, int bits_state);

// --- timeline -------------------------------------------------------------

struct StageNode {
    std::string unit;   // MMU | SSMU | HTU
    std::string label;
    uint64_t duration = 0;
    std::vector<int64_t> deps;
    uint64_t dram_bytes = 0;
};

struct TimelineEntry {
    std::string unit;
    std::string label;
    uint64_t start = 0;
    uint64_t end = 0;
};

// analytic evaluation: stages start at max(dep ends, unit free time), units
// process their stages in insertion order. sim_event.cpp replays the same
// graph with a discrete-event engine; the two must agree cycle-for-cycle.
std::vector<TimelineEntry> evaluate_timeline(const std::vector<StageNode>& nodes);
uint64_t replay_total_cycles(const std::vector<StageNode>& nodes);  // sim_event.cpp

struct SimReport {
    std::string schedule;
    double cycles_per_token = 0.0;
    double tokens_per_s = 0.0;
    double mmu_utilization = 0.0;
    double ssmu_utilization = 0.0;
    double bytes_streamed_per_token = 0.0;
    int64_t dsp_used = 0;
    int64_t uram_used = 0;
    int64_t bram_used = 0;
    bool feasible = true;
    std::vector<std::string> infeasible_reasons;
    std::vector<std::string> notes;
    std::vector<TimelineEntry> timeline;

    std::string to_json(bool with_timeline = true) const;
};

std::vector<StageNode> build_stage_graph(const Workload& wl, const HwConfig& hw);
SimReport schedule_timeline(const Workload& wl, const HwConfig& hw);
SimReport simulate(const Workload& wl, const HwConfig& hw);

}  // namespace mambaq
