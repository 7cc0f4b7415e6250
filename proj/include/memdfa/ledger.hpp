#ifndef MEMDFA_LEDGER_HPP
#define MEMDFA_LEDGER_HPP

#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace memdfa {

/// Which part of a training step an allocation belongs to. Local variants
/// are the per-layer recomputation sweep; everything outside a step
/// (dataset loading, weight init, evaluation) runs under Io.
enum class Phase : std::uint8_t { Forward, Backward, LocalForward, LocalBackward, Update, Io };

inline const char* phase_name(Phase p) {
    switch (p) {
        case Phase::Forward: return "forward";
        case Phase::Backward: return "backward";
        case Phase::LocalForward: return "local-forward";
        case Phase::LocalBackward: return "local-backward";
        case Phase::Update: return "update";
        case Phase::Io: return "io";
    }
    return "?";
}

inline Phase parse_phase(std::string_view s) {
    for (Phase p : {Phase::Forward, Phase::Backward, Phase::LocalForward, Phase::LocalBackward,
                    Phase::Update, Phase::Io})
        if (s == phase_name(p)) return p;
    throw std::invalid_argument("unknown phase name: " + std::string(s));
}

enum class EventKind : std::uint8_t { Alloc, Free };

/// One tensor allocation or free. `bytes` is the logical payload
/// (element count times element size); frees always carry the same byte
/// count and tag as the allocation they pair with.
struct AllocEvent {
    std::uint64_t seq = 0;
    EventKind kind = EventKind::Alloc;
    std::uint64_t bytes = 0;
    std::string tag;
    Phase phase = Phase::Io;
};

/// Restricts a live-bytes query. An empty filter means the whole curve.
///
/// tag_prefix selects which tensors are summed (e.g. "activation:" counts
/// only forward intermediates). phase samples the curve only at instants
/// whose event carries that phase, i.e. "peak while in this phase".
struct EventFilter {
    std::optional<Phase> phase;
    std::string tag_prefix;
};

/// Ordered log of allocation events plus the persistent-state bytes that
/// existed before the log started. All queries are pure prefix-sum walks.
struct MemoryTimeline {
    std::vector<AllocEvent> events;
    std::uint64_t baseline_bytes = 0;

    /// Append-only. seq must exceed every prior event's.
    void record(AllocEvent ev) {
        if (!events.empty() && ev.seq <= events.back().seq)
            throw std::invalid_argument("MemoryTimeline::record: seq must strictly increase");
        events.push_back(std::move(ev));
    }
};

namespace detail {

inline bool tag_matches(const AllocEvent& ev, const std::string& prefix) {
    return prefix.empty() || ev.tag.compare(0, prefix.size(), prefix) == 0;
}

// Walks the whole event list; the max is taken only over events inside
// [seq_begin, seq_end) that pass the phase filter, while the running sums
// always see every event so levels are correct at the window edges.
inline std::uint64_t peak_walk(const MemoryTimeline& tl, const EventFilter& f,
                               std::uint64_t seq_begin, std::uint64_t seq_end) {
    const bool whole_curve = f.tag_prefix.empty();
    std::int64_t live = whole_curve ? static_cast<std::int64_t>(tl.baseline_bytes) : 0;
    std::int64_t peak = (seq_begin == 0 && !f.phase) ? live : 0;
    for (const AllocEvent& ev : tl.events) {
        if (detail::tag_matches(ev, f.tag_prefix))
            live += ev.kind == EventKind::Alloc ? static_cast<std::int64_t>(ev.bytes)
                                                : -static_cast<std::int64_t>(ev.bytes);
        bool in_window = ev.seq >= seq_begin && ev.seq < seq_end;
        bool in_phase = !f.phase || ev.phase == *f.phase;
        if (in_window && in_phase && live > peak) peak = live;
    }
    return peak < 0 ? 0 : static_cast<std::uint64_t>(peak);
}

}  // namespace detail

/// Max live bytes over the whole timeline. Unfiltered queries include
/// baseline_bytes; tag-filtered queries count only matching tensors.
inline std::uint64_t peak_live_bytes(const MemoryTimeline& tl, const EventFilter& filter = {}) {
    return detail::peak_walk(tl, filter, 0, UINT64_MAX);
}

/// Max live bytes among events with seq in [seq_begin, seq_end) — used to
/// query one training step's slice of the run.
inline std::uint64_t peak_live_bytes_in_range(const MemoryTimeline& tl, const EventFilter& filter,
                                              std::uint64_t seq_begin, std::uint64_t seq_end) {
    return detail::peak_walk(tl, filter, seq_begin, seq_end);
}

/// Live bytes after the last event (tag-filtered sums exclude baseline).
inline std::int64_t live_bytes(const MemoryTimeline& tl, const std::string& tag_prefix = "") {
    std::int64_t live = tag_prefix.empty() ? static_cast<std::int64_t>(tl.baseline_bytes) : 0;
    for (const AllocEvent& ev : tl.events)
        if (detail::tag_matches(ev, tag_prefix))
            live += ev.kind == EventKind::Alloc ? static_cast<std::int64_t>(ev.bytes)
                                                : -static_cast<std::int64_t>(ev.bytes);
    return live;
}

/// Writes `seq,phase,kind,tag,bytes,live_bytes`, one row per event,
/// decimal integers, newline-terminated. live_bytes is the running
/// unfiltered level (baseline included) after the event.
inline void export_csv(const MemoryTimeline& tl, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("export_csv: cannot open " + path);
    out << "seq,phase,kind,tag,bytes,live_bytes\n";
    std::int64_t live = static_cast<std::int64_t>(tl.baseline_bytes);
    for (const AllocEvent& ev : tl.events) {
        live += ev.kind == EventKind::Alloc ? static_cast<std::int64_t>(ev.bytes)
                                            : -static_cast<std::int64_t>(ev.bytes);
        out << ev.seq << ',' << phase_name(ev.phase) << ','
            << (ev.kind == EventKind::Alloc ? "alloc" : "free") << ',' << ev.tag << ','
            << ev.bytes << ',' << live << '\n';
    }
    if (!out.flush()) throw std::runtime_error("export_csv: write failed for " + path);
}

struct CsvTimeline {
    MemoryTimeline timeline;
    std::vector<std::uint64_t> live_column;
};

/// Parses a file produced by export_csv. Throws std::runtime_error on any
/// structural problem (missing header, wrong field count, non-numeric cell).
inline CsvTimeline parse_timeline_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("parse_timeline_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "seq,phase,kind,tag,bytes,live_bytes")
        throw std::runtime_error("parse_timeline_csv: bad header in " + path);
    CsvTimeline out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i)
            if (i == line.size() || line[i] == ',') {
                cells.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        if (cells.size() != 6)
            throw std::runtime_error("parse_timeline_csv: expected 6 fields, got " +
                                     std::to_string(cells.size()) + " in " + path);
        AllocEvent ev;
        try {
            ev.seq = std::stoull(cells[0]);
            ev.phase = parse_phase(cells[1]);
            if (cells[2] == "alloc")
                ev.kind = EventKind::Alloc;
            else if (cells[2] == "free")
                ev.kind = EventKind::Free;
            else
                throw std::invalid_argument("kind " + cells[2]);
            ev.tag = cells[3];
            ev.bytes = std::stoull(cells[4]);
            out.live_column.push_back(std::stoull(cells[5]));
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("parse_timeline_csv: bad row (") + e.what() +
                                     ") in " + path);
        }
        out.timeline.record(std::move(ev));
    }
    return out;
}

struct OpCounters {
    std::uint64_t forward_matmuls = 0;
    std::uint64_t backward_matmuls = 0;
    std::uint64_t other_matmuls = 0;
    std::uint64_t feedback_projections = 0;
};

/// Process-wide recording facility. Tensors report every allocation and
/// free here; trainers bracket work with PhaseScope so events carry the
/// right phase. Event retention can be disabled (the numerics never depend
/// on it); matmul/projection counters stay on either way since the
/// compute-cost checks must not require a ledger.
class Ledger {
public:
    static Ledger& instance() {
        static Ledger inst;
        return inst;
    }

    /// Clears events and counters and bumps the generation: tensors
    /// allocated before a reset stop reporting, so the new timeline never
    /// sees a free without its alloc.
    void reset() {
        std::lock_guard lock(mu_);
        timeline_ = MemoryTimeline{};
        counters_ = OpCounters{};
        live_ = peak_ = 0;
        next_seq_ = 1;
        ++generation_;
    }

    void set_enabled(bool on) {
        std::lock_guard lock(mu_);
        enabled_ = on;
    }
    bool enabled() const { return enabled_; }

    /// Returns the generation handle the caller must pass to on_free, or 0
    /// if recording is off (in which case the free must not be reported).
    std::uint32_t on_alloc(std::uint64_t bytes, const std::string& tag) {
        std::lock_guard lock(mu_);
        if (!enabled_) return 0;
        live_ += bytes;
        if (live_ > peak_) peak_ = live_;
        timeline_.record({next_seq_++, EventKind::Alloc, bytes, tag, current_phase()});
        return generation_;
    }

    void on_free(std::uint64_t bytes, const std::string& tag, std::uint32_t gen) {
        std::lock_guard lock(mu_);
        if (gen != generation_) return;
        live_ -= bytes;
        timeline_.record({next_seq_++, EventKind::Free, bytes, tag, current_phase()});
    }

    void set_baseline(std::uint64_t bytes) {
        std::lock_guard lock(mu_);
        timeline_.baseline_bytes = bytes;
    }

    std::uint64_t live_now() const { return live_; }
    std::uint64_t peak_overall() const { return peak_ + timeline_.baseline_bytes; }
    std::uint64_t next_seq() const { return next_seq_; }

    /// Single-writer contract: call between steps, not concurrently with
    /// recording.
    const MemoryTimeline& timeline() const { return timeline_; }

    void count_matmul() {
        std::lock_guard lock(mu_);
        if (in_projection()) return;  // projections are counted once, as projections
        switch (current_phase()) {
            case Phase::Forward:
            case Phase::LocalForward: ++counters_.forward_matmuls; break;
            case Phase::Backward:
            case Phase::LocalBackward: ++counters_.backward_matmuls; break;
            default: ++counters_.other_matmuls; break;
        }
    }

    void count_projection() {
        std::lock_guard lock(mu_);
        ++counters_.feedback_projections;
    }

    OpCounters counters() const {
        std::lock_guard lock(mu_);
        return counters_;
    }

    static Phase& current_phase() {
        thread_local Phase phase = Phase::Io;
        return phase;
    }

    static bool& in_projection() {
        thread_local bool inside = false;
        return inside;
    }

private:
    Ledger() = default;

    mutable std::mutex mu_;
    MemoryTimeline timeline_;
    OpCounters counters_;
    std::uint64_t live_ = 0;
    std::uint64_t peak_ = 0;
    std::uint64_t next_seq_ = 1;
    std::uint32_t generation_ = 1;
    bool enabled_ = true;
};

class PhaseScope {
public:
    explicit PhaseScope(Phase p) : prev_(Ledger::current_phase()) { Ledger::current_phase() = p; }
    ~PhaseScope() { Ledger::current_phase() = prev_; }
    PhaseScope(const PhaseScope&) = delete;
    PhaseScope& operator=(const PhaseScope&) = delete;

private:
    Phase prev_;
};

/// Marks the inner matmul of a feedback projection so it is not
/// double-counted under backward_matmuls.
class ProjectionScope {
public:
    ProjectionScope() : prev_(Ledger::in_projection()) {
        Ledger::in_projection() = true;
        Ledger::instance().count_projection();
    }
    ~ProjectionScope() { Ledger::in_projection() = prev_; }
    ProjectionScope(const ProjectionScope&) = delete;
    ProjectionScope& operator=(const ProjectionScope&) = delete;

private:
    bool prev_;
};

}  // namespace memdfa

#endif  // MEMDFA_LEDGER_HPP
