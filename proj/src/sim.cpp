#include "mambaq/sim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "mambaq/error.hpp"
#include "mambaq/hadamard.hpp"

namespace mambaq {

namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

uint64_t ceil_div_u(uint64_t a, uint64_t b) { return (a + b - 1) / b; }

int log2_ceil(int64_t n) {
    int k = 0;
    while ((int64_t{1} << k) < n) ++k;
    return k;
}

int log2_floor(int64_t n) { return 63 - std::countl_zero(static_cast<uint64_t>(n)); }

uint64_t stream_cycles(uint64_t bytes, const HwConfig& hw) {
    if (bytes == 0) return 0;
    return static_cast<uint64_t>(std::ceil(static_cast<double>(bytes) / hw.bytes_per_cycle()));
}

}  // namespace

int64_t HwConfig::mm_par() const { return htu.mm_parallelism; }

void HwConfig::validate() const {
    auto pos = [](double v, const char* name) {
        if (!(v > 0)) throw ConfigError(std::string("hw config: ") + name + " must be positive");
    };
    pos(freq_mhz, "freq_mhz");
    pos(dram_bandwidth_GBps, "dram_bandwidth_GBps");
    if (!(dram_efficiency > 0.0) || dram_efficiency > 1.0)
        throw ConfigError("hw config: dram_efficiency must be in (0,1]");
    pos(static_cast<double>(dsp_total), "dsp_total");
    pos(static_cast<double>(bram36_total), "bram36_total");
    pos(static_cast<double>(uram_total), "uram_total");
    pos(static_cast<double>(mmu.d_in), "mmu.d_in");
    pos(static_cast<double>(mmu.d_out), "mmu.d_out");
    if (ssmu.emu_parallelism <= 0) throw ConfigError("hw config: ssmu.emu_parallelism must be positive");
    if (ssmu.nonlinear_parallelism < 0) throw ConfigError("hw config: ssmu.nonlinear_parallelism must be >= 0");
    pos(static_cast<double>(htu.pot_points), "htu.pot_points");
    pos(static_cast<double>(htu.small_points), "htu.small_points");
    if (htu.lanes <= 0) throw ConfigError("hw config: htu.lanes must be positive");
    if (mmu.d_in * mmu.d_out / 2 > dsp_total)
        throw ConfigError("hw config: MMU needs " + std::to_string(mmu.d_in * mmu.d_out / 2) +
                          " DSPs, budget is " + std::to_string(dsp_total));
}

std::string HwConfig::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["freq_mhz"] = freq_mhz;
    j["dram_bandwidth_GBps"] = dram_bandwidth_GBps;
    j["dram_efficiency"] = dram_efficiency;
    j["dsp_total"] = dsp_total;
    j["bram36_total"] = bram36_total;
    j["uram_total"] = uram_total;
    j["mmu"] = {{"d_in", mmu.d_in}, {"d_out", mmu.d_out}};
    j["ssmu"] = {{"emu_parallelism", ssmu.emu_parallelism}, {"nonlinear_parallelism", ssmu.nonlinear_parallelism}};
    j["htu"] = {{"pot_points", htu.pot_points},
                {"small_points", htu.small_points},
                {"mm_parallelism", htu.mm_parallelism},
                {"lanes", htu.lanes}};
    return j.dump(2);
}

HwConfig HwConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("hw config: ") + e.what());
    }
    HwConfig h;
    try {
        h.name = j.value("name", std::string("hw"));
        h.freq_mhz = j.at("freq_mhz").get<double>();
        h.dram_bandwidth_GBps = j.at("dram_bandwidth_GBps").get<double>();
        h.dram_efficiency = j.value("dram_efficiency", 0.85);
        h.dsp_total = j.at("dsp_total").get<int64_t>();
        h.bram36_total = j.at("bram36_total").get<int64_t>();
        h.uram_total = j.at("uram_total").get<int64_t>();
        h.mmu.d_in = j.at("mmu").at("d_in").get<int64_t>();
        h.mmu.d_out = j.at("mmu").at("d_out").get<int64_t>();
        h.ssmu.emu_parallelism = j.at("ssmu").at("emu_parallelism").get<int64_t>();
        h.ssmu.nonlinear_parallelism = j.at("ssmu").value("nonlinear_parallelism", int64_t{0});
        h.htu.pot_points = j.at("htu").at("pot_points").get<int64_t>();
        h.htu.small_points = j.at("htu").at("small_points").get<int64_t>();
        h.htu.mm_parallelism = j.at("htu").value("mm_parallelism", int64_t{0});
        h.htu.lanes = j.at("htu").value("lanes", int64_t{1});
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("hw config: ") + e.what());
    }
    h.validate();
    return h;
}

HwConfig HwConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read hw config " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json(text);
}

const char* schedule_name(Schedule s) {
    switch (s) {
        case Schedule::sequential: return "sequential";
        case Schedule::reordered: return "reordered";
        case Schedule::fine_tiled: return "fine_tiled";
    }
    return "?";
}

Schedule schedule_from_name(const std::string& s) {
    if (s == "sequential") return Schedule::sequential;
    if (s == "reordered") return Schedule::reordered;
    if (s == "fine_tiled") return Schedule::fine_tiled;
    throw ConfigError("unknown schedule '" + s + "' (sequential|reordered|fine_tiled)");
}

void Workload::validate() const {
    cfg.validate();
    auto okbits = [](int b) { return b == 4 || b == 8 || b == 16; };
    if (!okbits(bits_w) || !okbits(bits_a) || !okbits(bits_ssm))
        throw ConfigError("workload bits must be 4, 8 or 16");
    if (weight_group < 1) throw ConfigError("workload weight_group must be >= 1");
    if (tile.n_p < 1 || tile.p_p < 1) throw ConfigError("workload tile dims must be >= 1");
}

MmuCost mmu_latency(int64_t K, int64_t N, int bits_w, int64_t weight_group, const HwConfig& hw) {
    if (K <= 0 || N <= 0) throw DimError("mmu_latency: dims must be positive");
    MmuCost c;
    c.compute_cycles = static_cast<uint64_t>(ceil_div(K, hw.mmu.d_in)) * static_cast<uint64_t>(ceil_div(N, hw.mmu.d_out)) +
                       static_cast<uint64_t>(log2_ceil(hw.mmu.d_in));
    uint64_t bytes = (static_cast<uint64_t>(K) * static_cast<uint64_t>(N) * static_cast<uint64_t>(bits_w) + 7) / 8;
    // scale sidecars stream as fp16: one per output channel at 8-bit, one per
    // (K-group x channel) at 4-bit; the fp16 baseline carries none
    if (bits_w == 8)
        bytes += 2 * static_cast<uint64_t>(N);
    else if (bits_w == 4)
        bytes += 2 * static_cast<uint64_t>(ceil_div(K, weight_group)) * static_cast<uint64_t>(N);
    c.dram_bytes = bytes;
    c.stream_cycles = stream_cycles(bytes, hw);
    c.cycles = std::max(c.compute_cycles, c.stream_cycles);
    return c;
}

uint64_t htu_latency(int64_t n, HtuMode mode, const HwConfig& hw) {
    if (n < 2) throw DimError("htu_latency: n must be >= 2");
    if (mode == HtuMode::fht) {
        if (!is_pow2(n)) throw UnsupportedError("htu fht mode needs power-of-two points, got " + std::to_string(n));
        const uint64_t stages = static_cast<uint64_t>(log2_floor(n));
        return stages * static_cast<uint64_t>(n / 2) + static_cast<uint64_t>(n);
    }
    const int64_t par = hw.htu.mm_parallelism > 0 ? hw.htu.mm_parallelism : std::max<int64_t>(1, log2_floor(n));
    return static_cast<uint64_t>(ceil_div(n, par)) * static_cast<uint64_t>(n);
}

uint64_t htu_vector_cycles(int64_t n, const HwConfig& hw) {
    const int64_t lanes = hw.htu.lanes;
    HadamardPlan plan;
    try {
        plan = make_plan(n);
    } catch (const UnsupportedError&) {
        // no factorization: model a dense add/sub matrix pass
        const int64_t par = hw.htu.mm_parallelism > 0 ? hw.htu.mm_parallelism : std::max<int64_t>(1, log2_floor(n));
        return static_cast<uint64_t>(ceil_div(n, par)) * static_cast<uint64_t>(n);
    }
    if (plan.pure_pot()) {
        const uint64_t work = static_cast<uint64_t>(log2_floor(plan.pot_size)) * static_cast<uint64_t>(plan.pot_size / 2);
        return ceil_div_u(work, static_cast<uint64_t>(lanes)) + static_cast<uint64_t>(plan.pot_size);
    }
    // Kronecker: small_size column FHTs of pot_size points, then pot_size rows
    // through the dense small-matrix stage
    const uint64_t fht_work = static_cast<uint64_t>(plan.small_size) *
                              (static_cast<uint64_t>(log2_floor(plan.pot_size)) * static_cast<uint64_t>(plan.pot_size / 2));
    const int64_t par = hw.htu.mm_parallelism > 0 ? hw.htu.mm_parallelism
                                                  : std::max<int64_t>(1, log2_floor(plan.small_size));
    const uint64_t mm_row = static_cast<uint64_t>(ceil_div(plan.small_size, par)) * static_cast<uint64_t>(plan.small_size);
    const uint64_t mm_work = static_cast<uint64_t>(plan.pot_size) * mm_row;
    return ceil_div_u(fht_work, static_cast<uint64_t>(lanes)) + static_cast<uint64_t>(plan.pot_size) +
           ceil_div_u(mm_work, static_cast<uint64_t>(lanes)) + static_cast<uint64_t>(plan.small_size);
}

int64_t fifo_depth_analytic(int64_t E, int64_t par_p, int64_t par_c) {
    if (E <= 0 || par_p <= 0 || par_c <= 0) throw ConfigError("fifo_depth: arguments must be positive");
    const int64_t Kp = ceil_div(E, par_p);
    auto occ = [&](int64_t k) {
        const int64_t produced = std::min(E, k * par_p);
        const int64_t avail = std::min(E, (k - 1) * par_p);
        const int64_t consumed = std::min((k - 1) * par_c, avail);
        return produced - consumed;
    };
    // occupancy is piecewise linear in k with one knee where the final
    // (possibly partial) production chunk lands; the max sits at an end or
    // just before the knee
    int64_t best = std::max(occ(1), occ(Kp));
    if (Kp > 1) best = std::max(best, occ(Kp - 1));
    return best;
}

BufferReport buffer_report(const MambaConfig& cfg, Schedule sched, TileConfig tile, int bits_state) {
    if (bits_state != 4 && bits_state != 8 && bits_state != 16)
        throw ConfigError("buffer_report: bits_state must be 4, 8 or 16");
    const int64_t H = cfg.n_heads, P = cfg.head_dim, N = cfg.d_state;
    const int64_t n_p = std::max<int64_t>(1, std::min(tile.n_p, H));
    const int64_t p_p = std::max<int64_t>(1, std::min(tile.p_p, N));

    BufferReport r;
    auto add = [&](const std::string& name, uint64_t elems) {
        BufferItem it;
        it.name = name;
        it.bytes = (elems * static_cast<uint64_t>(bits_state) + 7) / 8;
        // half a URAM block or more -> URAM, otherwise BRAM
        if (it.bytes >= 18432)
            it.uram_blocks = static_cast<int64_t>(ceil_div_u(it.bytes, 36864));
        else
            it.bram_blocks = static_cast<int64_t>(ceil_div_u(std::max<uint64_t>(it.bytes, 1), 4608));
        r.items.push_back(it);
        r.uram_used += it.uram_blocks;
        r.bram_used += it.bram_blocks;
        r.total_bytes += it.bytes;
    };

    const uint64_t full = static_cast<uint64_t>(H) * P * N;
    add("h_state", full);  // persistent state, always resident
    uint64_t inter;
    switch (sched) {
        case Schedule::sequential: inter = full; break;
        case Schedule::reordered: inter = static_cast<uint64_t>(P) * N; break;  // one head in flight
        case Schedule::fine_tiled: inter = static_cast<uint64_t>(n_p) * P * p_p; break;
        default: inter = full; break;
    }
    add("bx", inter);
    add("ah", inter);
    add("h_next", inter);
    add("ch_partial", inter);
    // conv window keeps (k-1) fp16 samples per channel regardless of schedule
    add("conv_window", static_cast<uint64_t>(cfg.conv_channels()) * std::max<int64_t>(1, cfg.conv_kernel - 1) * 2 *
                           8 / static_cast<uint64_t>(bits_state));

    if (H % n_p != 0 || N % p_p != 0)
        r.notes.push_back("tile " + std::to_string(n_p) + "x" + std::to_string(p_p) +
                          " does not divide heads/state; remainder tiles are padded to full tile size");
    return r;
}

SsmuCost ssmu_latency(const MambaConfig& cfg, TileConfig tile, const HwConfig& hw) {
    const int64_t P = cfg.head_dim, N = cfg.d_state, k = cfg.conv_kernel;
    const int64_t emu = hw.ssmu.emu_parallelism, nl = hw.nl_parallelism();
    if (emu <= 0 || nl <= 0) throw ConfigError("ssmu_latency: zero parallelism");
    (void)tile;

    const int64_t PN = P * N;
    SsmuCost c;
    auto add = [&](const std::string& name, int64_t elems, int64_t par) {
        c.op_cycles.emplace_back(name, static_cast<uint64_t>(ceil_div(elems, par)));
    };
    add("conv_x", P * k, nl);       // depthwise conv for this head's channels
    add("dbx", PN, emu);            // delta*B (.) x
    add("ah", PN, emu);             // abar (.) h
    add("hadd", PN, emu);           // h' = ah + dbx
    add("writeback", PN, emu);      // h' store + readback
    add("ch", PN, emu);             // C (.) h'
    add("creduce", PN, emu);        // sum over state dim
    add("gate", 5 * P, nl);         // Dx, silu(z), gate mul, norm
    c.drain = c.op_cycles.size();

    uint64_t sum = 0, mx = 0;
    for (const auto& [name, cyc] : c.op_cycles) {
        sum += cyc;
        mx = std::max(mx, cyc);
    }
    c.pass_cycles = sum + c.drain;
    c.fused_ii = mx + c.drain;
    c.conv_bc_cycles = static_cast<uint64_t>(ceil_div(2 * cfg.n_groups * N * k, nl));

    const char* links[] = {"dbx->hadd", "ah->hadd", "hadd->writeback", "writeback->ch", "ch->creduce"};
    for (const char* l : links) c.fifo_depths.emplace_back(l, fifo_depth_analytic(PN, emu, emu));
    return c;
}

std::vector<TimelineEntry> evaluate_timeline(const std::vector<StageNode>& nodes) {
    std::vector<TimelineEntry> out(nodes.size());
    std::vector<uint64_t> ends(nodes.size(), 0);
    std::map<std::string, uint64_t> unit_free;
    for (size_t i = 0; i < nodes.size(); ++i) {
        const StageNode& n = nodes[i];
        uint64_t start = unit_free[n.unit];
        for (int64_t d : n.deps) {
            if (d < 0 || static_cast<size_t>(d) >= i) throw Error("stage graph: bad dependency index");
            start = std::max(start, ends[static_cast<size_t>(d)]);
        }
        const uint64_t end = start + n.duration;
        ends[i] = end;
        unit_free[n.unit] = end;
        out[i] = TimelineEntry{n.unit, n.label, start, end};
    }
    return out;
}

std::vector<StageNode> build_stage_graph(const Workload& wl, const HwConfig& hw) {
    wl.validate();
    hw.validate();
    const MambaConfig& cfg = wl.cfg;
    const int64_t H = cfg.n_heads, N = cfg.d_state, G = cfg.n_groups, P = cfg.head_dim;
    const int64_t di = cfg.d_inner();

    std::vector<StageNode> g;
    auto push = [&](std::string unit, std::string label, uint64_t dur, std::vector<int64_t> deps,
                    uint64_t bytes = 0) {
        g.push_back(StageNode{std::move(unit), std::move(label), dur, std::move(deps), bytes});
        return static_cast<int64_t>(g.size() - 1);
    };

    const SsmuCost sc = ssmu_latency(cfg, wl.tile, hw);
    const uint64_t pass = wl.schedule == Schedule::fine_tiled ? sc.fused_ii : sc.pass_cycles;
    const uint64_t htu = htu_vector_cycles(di, hw);

    const MmuCost in_c = mmu_latency(cfg.d_model, cfg.d_in_proj(), wl.bits_w, wl.weight_group, hw);
    const MmuCost out_c = mmu_latency(di, cfg.d_model, wl.bits_w, wl.weight_group, hw);
    const MmuCost head_c = mmu_latency(cfg.d_model, cfg.vocab_size, wl.bits_w, wl.weight_group, hw);

    // per-layer small parameters ride along with the in-projection stream
    uint64_t misc_bytes = (static_cast<uint64_t>(cfg.conv_channels()) * cfg.conv_kernel * wl.bits_w + 7) / 8;
    misc_bytes += 2 * static_cast<uint64_t>(cfg.conv_channels());                       // conv scales + bias (fp16)
    misc_bytes += 2 * static_cast<uint64_t>(cfg.d_model + di + 3 * H);                  // norms, A_log, dt_bias, D
    const uint64_t in_bytes = in_c.dram_bytes + misc_bytes;
    const uint64_t in_dur = std::max(in_c.compute_cycles, stream_cycles(in_bytes, hw));

    const uint64_t emb_bytes = (static_cast<uint64_t>(cfg.d_model) * wl.bits_w + 7) / 8;
    int64_t prev = push("MMU", "embed", stream_cycles(emb_bytes, hw), {}, emb_bytes);

    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const std::string L = "L" + std::to_string(l) + ".";
        if (wl.schedule == Schedule::sequential) {
            const int64_t n_in = push("MMU", L + "in_proj", in_dur, {prev}, in_bytes);
            int64_t p = push("SSMU", L + "ssm.h0", sc.conv_bc_cycles + pass, {n_in});
            for (int64_t h = 1; h < H; ++h) p = push("SSMU", L + "ssm.h" + std::to_string(h), pass, {p});
            const int64_t n_htu = push("HTU", L + "htu", htu, {p});
            prev = push("MMU", L + "out_proj", out_c.cycles, {n_htu}, out_c.dram_bytes);
            continue;
        }

        // reordered / fine_tiled: dbc columns first, then per-head x/z chunks.
        // Chunk boundaries partition the whole stage exactly, so reordering
        // never changes total MMU time.
        const int64_t total_cols = cfg.d_in_proj();
        const int64_t dbc_cols = 2 * G * N + H;
        uint64_t boundary_prev = 0;
        int64_t cum = dbc_cols;
        auto boundary = [&](int64_t cum_cols) {
            return static_cast<uint64_t>(static_cast<unsigned __int128>(in_dur) * static_cast<uint64_t>(cum_cols) /
                                         static_cast<uint64_t>(total_cols));
        };
        uint64_t b = boundary(cum);
        // the dbc chunk carries the layer's misc parameter bytes
        const uint64_t dbc_bytes =
            misc_bytes + static_cast<unsigned __int128>(in_c.dram_bytes) * static_cast<uint64_t>(dbc_cols) /
                             static_cast<uint64_t>(total_cols);
        int64_t chunk = push("MMU", L + "in.dbc", b - boundary_prev, {prev}, dbc_bytes);
        boundary_prev = b;
        std::vector<int64_t> xz(static_cast<size_t>(H));
        uint64_t xz_bytes_acc = 0;
        for (int64_t h = 0; h < H; ++h) {
            cum += 2 * P;
            b = boundary(cum);
            uint64_t bytes = 0;
            if (h == H - 1)
                bytes = in_bytes - dbc_bytes - xz_bytes_acc;  // remainder keeps totals exact
            else {
                bytes = static_cast<unsigned __int128>(in_c.dram_bytes) * static_cast<uint64_t>(2 * P) /
                        static_cast<uint64_t>(total_cols);
                xz_bytes_acc += bytes;
            }
            chunk = push("MMU", L + "in.xz" + std::to_string(h), b - boundary_prev, {chunk}, bytes);
            boundary_prev = b;
            xz[static_cast<size_t>(h)] = chunk;
        }
        int64_t p = push("SSMU", L + "ssm.h0", sc.conv_bc_cycles + pass, {xz[0]});
        for (int64_t h = 1; h < H; ++h)
            p = push("SSMU", L + "ssm.h" + std::to_string(h), pass, {xz[static_cast<size_t>(h)], p});
        const int64_t n_htu = push("HTU", L + "htu", htu, {p});
        prev = push("MMU", L + "out_proj", out_c.cycles, {n_htu}, out_c.dram_bytes);
    }

    const int64_t n_fin = push("SSMU", "final_norm",
                               static_cast<uint64_t>(ceil_div(cfg.d_model, hw.nl_parallelism())) + 4, {prev});
    push("MMU", "lm_head", head_c.cycles, {n_fin}, head_c.dram_bytes);
    return g;
}

SimReport schedule_timeline(const Workload& wl, const HwConfig& hw) { return simulate(wl, hw); }

SimReport simulate(const Workload& wl, const HwConfig& hw) {
    const std::vector<StageNode> g = build_stage_graph(wl, hw);
    const std::vector<TimelineEntry> tl = evaluate_timeline(g);

    uint64_t total = 0, mmu_busy = 0, ssmu_busy = 0, bytes = 0;
    for (size_t i = 0; i < g.size(); ++i) {
        total = std::max(total, tl[i].end);
        if (g[i].unit == "MMU") mmu_busy += g[i].duration;
        if (g[i].unit == "SSMU") ssmu_busy += g[i].duration;
        bytes += g[i].dram_bytes;
    }
    total = std::max<uint64_t>(total, 1);

    SimReport r;
    r.schedule = schedule_name(wl.schedule);
    r.timeline = tl;
    r.cycles_per_token = static_cast<double>(total);
    r.tokens_per_s = hw.freq_mhz * 1e6 / static_cast<double>(total);
    r.mmu_utilization = static_cast<double>(mmu_busy) / static_cast<double>(total);
    r.ssmu_utilization = static_cast<double>(ssmu_busy) / static_cast<double>(total);
    r.bytes_streamed_per_token = static_cast<double>(bytes);

    const BufferReport br = buffer_report(wl.cfg, wl.schedule, wl.tile, wl.bits_ssm);
    r.uram_used = br.uram_used;
    r.bram_used = br.bram_used + 5 /* ssm fifos */ + 2 /* staging */;
    r.dsp_used = hw.mmu.d_in * hw.mmu.d_out / 2                 // MMU MACs, DSP-packed
                 + (3 * hw.ssmu.emu_parallelism + 1) / 2        // EM lanes (dbx, ah, ch), packed
                 + 2 * hw.nl_parallelism();                     // nonlinear evaluators
    r.notes = br.notes;

    if (r.dsp_used > hw.dsp_total)
        r.infeasible_reasons.push_back("dsp_used " + std::to_string(r.dsp_used) + " > dsp_total " +
                                       std::to_string(hw.dsp_total));
    if (r.uram_used > hw.uram_total)
        r.infeasible_reasons.push_back("uram_used " + std::to_string(r.uram_used) + " > uram_total " +
                                       std::to_string(hw.uram_total));
    if (r.bram_used > hw.bram36_total)
        r.infeasible_reasons.push_back("bram_used " + std::to_string(r.bram_used) + " > bram36_total " +
                                       std::to_string(hw.bram36_total));
    r.feasible = r.infeasible_reasons.empty();
    return r;
}

std::string SimReport::to_json(bool with_timeline) const {
    nlohmann::json j;
    j["schedule"] = schedule;
    j["cycles_per_token"] = cycles_per_token;
    j["tokens_per_s"] = tokens_per_s;
    j["mmu_utilization"] = mmu_utilization;
    j["ssmu_utilization"] = ssmu_utilization;
    j["bytes_streamed_per_token"] = bytes_streamed_per_token;
    j["dsp_used"] = dsp_used;
    j["uram_used"] = uram_used;
    j["bram_used"] = bram_used;
    j["feasible"] = feasible;
    j["infeasible_reasons"] = infeasible_reasons;
    j["notes"] = notes;
    if (with_timeline) {
        nlohmann::json t = nlohmann::json::array();
        for (const TimelineEntry& e : timeline)
            t.push_back({{"unit", e.unit}, {"label", e.label}, {"start_cycle", e.start}, {"end_cycle", e.end}});
        j["timeline"] = t;
    }
    return j.dump(2);
}

}  // namespace mambaq
