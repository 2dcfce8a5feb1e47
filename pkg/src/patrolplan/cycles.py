"""Visiting-sequence construction and the revisit-time lower-bound metric.

A cycle is the periodic sequence of target visits an agent executes.  Cycles
are stored fully expanded: every adjacent instance pair is joined by a direct
graph edge, and multi-hop connections materialize their intermediate targets
as pass-through (non-dwell) instances.  The cheap metric used to rank cycles
is the worst per-target cost floor obtained from each target's maximum revisit
travel time, which never exceeds the realized cost of any dwell schedule on
the same cycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .config import DEFAULT_CONFIG, PlannerConfig
from .covariance import cov_norm, lower_bound, steady_states_for, SteadyStates
from .model import TargetNetwork, TargetSpec

__all__ = [
    "Instance",
    "Cycle",
    "CycleMetric",
    "SteadyStateCache",
    "tsp_heuristic",
    "cycle_lower_bound",
    "per_instance_floors",
    "enumerate_cmos",
    "improve_cycle",
    "greedy_construct",
    "cycle_to_document",
]


class Instance(NamedTuple):
    """One visit slot: which target, which visit ordinal, and whether the
    agent may dwell there (pass-through hops may not)."""

    target: int
    ordinal: int
    dwell_eligible: bool


class Cycle:
    """A closed visiting sequence with per-leg travel times.

    ``legs[j]`` is the direct travel time from ``instances[j]`` to
    ``instances[j + 1]`` (cyclically).  Ordinals are assigned in order of
    appearance.  Instances of the same target may repeat, including back to
    back across the wrap (a zero-length leg joins them).
    """

    def __init__(self, network: TargetNetwork, seq: list[tuple[int, bool]], legs: list[float]):
        if not seq:
            raise ValueError("cycle must contain at least one instance")
        if len(seq) > 1 and len(legs) != len(seq):
            raise ValueError("need one leg per instance in a closed cycle")
        self.network = network
        counts: dict[int, int] = {}
        self.instances: list[Instance] = []
        for target, eligible in seq:
            counts[target] = counts.get(target, 0) + 1
            self.instances.append(Instance(target, counts[target], eligible))
        self.legs = list(legs) if len(seq) > 1 else []
        self.travel_time = float(sum(self.legs))
        self._positions: dict[int, list[int]] = {}
        for pos, inst in enumerate(self.instances):
            self._positions.setdefault(inst.target, []).append(pos)

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_targets(cls, network: TargetNetwork, targets: list[int | tuple[int, bool]]) -> "Cycle":
        """Expand a target sequence into a physical cycle along fastest paths."""
        seq: list[tuple[int, bool]] = []
        for entry in targets:
            if isinstance(entry, tuple):
                seq.append((entry[0], entry[1]))
            else:
                seq.append((entry, True))
        if len(seq) == 1:
            return cls(network, seq, [])
        out_seq: list[tuple[int, bool]] = []
        out_legs: list[float] = []
        n = len(seq)
        for k in range(n):
            u, eligible = seq[k]
            v = seq[(k + 1) % n][0]
            out_seq.append((u, eligible))
            hops = [u] + network.path[u][v] + [v]
            for a, b in zip(hops[:-1], hops[1:]):
                out_legs.append(network.travel[a][b])
                if b != v:
                    out_seq.append((b, False))
        return cls(network, out_seq, out_legs)

    @classmethod
    def from_direct(cls, network: TargetNetwork, targets: list[int]) -> "Cycle":
        """Join consecutive targets by their direct edges, even if dominated.

        Used for externally specified tours; raises if an edge is missing.
        """
        seq = [(t, True) for t in targets]
        if len(seq) == 1:
            return cls(network, seq, [])
        legs = []
        n = len(targets)
        for k in range(n):
            u, v = targets[k], targets[(k + 1) % n]
            if (u, v) not in network.direct:
                raise ValueError(f"no direct edge between {u} and {v}")
            legs.append(network.direct[(u, v)])
        return cls(network, seq, legs)

    # -- views ---------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def target_ids(self) -> set[int]:
        return set(self._positions)

    @property
    def dwell_targets(self) -> set[int]:
        return {i.target for i in self.instances if i.dwell_eligible}

    def positions_of(self, target: int) -> list[int]:
        return self._positions.get(target, [])

    def visit_gaps(self) -> dict[int, list[float]]:
        """Per target, the travel time between consecutive visits (cyclic).

        ``gaps[t][k]`` is the zero-dwell revisit time ending at that target's
        (k+1)-th instance.  A single-instance target's gap is the whole tour.
        """
        n = len(self.instances)
        if n == 1:
            return {self.instances[0].target: [0.0]}
        cum = [0.0]
        for leg in self.legs:
            cum.append(cum[-1] + leg)
        total = cum[-1]
        gaps: dict[int, list[float]] = {}
        for target, positions in self._positions.items():
            m = len(positions)
            out = []
            for k in range(m):
                prev = positions[(k - 1) % m]
                here = positions[k]
                if m == 1:
                    out.append(total)
                elif here > prev:
                    out.append(cum[here] - cum[prev])
                else:
                    out.append(total - (cum[prev] - cum[here]))
            gaps[target] = out
        return gaps

    def sequence(self) -> list[tuple[int, bool]]:
        return [(i.target, i.dwell_eligible) for i in self.instances]

    def canonical_key(self) -> tuple:
        """Rotation/reflection-invariant identity for deduplication."""
        seq = tuple((i.target, i.dwell_eligible) for i in self.instances)
        legs = tuple(round(l, 12) for l in self.legs)
        n = len(seq)
        if n == 1:
            return (seq, legs)
        best = None
        rev_seq = tuple(reversed(seq))
        rev_legs = tuple(reversed(legs))
        # reversed traversal: leg k joins rev_seq[k] to rev_seq[k+1]
        for s, lg in ((seq, legs), (rev_seq, rev_legs[1:] + rev_legs[:1])):
            for r in range(n):
                cand = (s[r:] + s[:r], lg[r:] + lg[:r])
                if best is None or cand < best:
                    best = cand
        return best

    def __repr__(self) -> str:
        body = ",".join(
            f"{i.target}^{i.ordinal}" + ("" if i.dwell_eligible else "*")
            for i in self.instances
        )
        return f"Cycle[{body}]"


# ---------------------------------------------------------------------------
# steady-state cache
# ---------------------------------------------------------------------------

class SteadyStateCache:
    """Per-target steady states plus memoized cost-floor evaluations.

    Computed once per network and shared read-only by planners.
    """

    def __init__(self, network: TargetNetwork):
        self.network = network
        self._steady: dict[int, SteadyStates] = {}
        self._lb: dict[tuple[int, float], float] = {}

    def target(self, tid: int) -> TargetSpec:
        return self.network.target(tid)

    def steady(self, tid: int) -> SteadyStates:
        if tid not in self._steady:
            self._steady[tid] = steady_states_for(self.network.target(tid))
        return self._steady[tid]

    def lower_bound(self, tid: int, gap: float) -> float:
        key = (tid, gap)
        val = self._lb.get(key)
        if val is None:
            val = lower_bound(self.target(tid), gap, self.steady(tid).omega_ss)
            self._lb[key] = val
        return val

    def never_observed_cost(self, tid: int) -> float:
        """Steady cost when the target is never observed; +inf if unstable."""
        ss = self.steady(tid)
        if not ss.a_is_hurwitz:
            return math.inf
        return self.target(tid).g(cov_norm(ss.omega_inf_finite))

    def steady_cost(self, tid: int) -> float:
        return self.target(tid).g(cov_norm(self.steady(tid).omega_ss))


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------

@dataclass
class CycleMetric:
    """Worst cost floor over a cycle and where it is attained."""

    value: float
    critical_target: int
    critical_ordinal: int
    max_gap: dict[int, float]
    per_target: dict[int, float] = field(repr=False)
    missing_required: set[int] = field(default_factory=set)


def cycle_lower_bound(
    cycle: Cycle,
    cache: SteadyStateCache,
    required: set[int] | None = None,
) -> CycleMetric:
    """Evaluate the revisit-time cost floor of a cycle.

    ``required`` targets absent from the cycle contribute their never-observed
    cost; an absent unstable target makes the metric infinite.
    """
    gaps = cycle.visit_gaps()
    members = set(cycle.network.ids)
    per_target: dict[int, float] = {}
    max_gap: dict[int, float] = {}
    best_val = -math.inf
    best_pair = None
    for tid in sorted(gaps):
        if tid not in members:
            continue  # pass-through of a target this cycle is not responsible for
        t_bar = max(gaps[tid])
        max_gap[tid] = t_bar
        val = cache.lower_bound(tid, t_bar)
        per_target[tid] = val
        if best_pair is None or val > best_val:
            # tie-break: lowest target id, then lowest ordinal attaining the gap
            ordinal = next(k + 1 for k, w in enumerate(gaps[tid]) if w == t_bar)
            best_val = val
            best_pair = (tid, ordinal)
    missing = set()
    if required:
        for tid in sorted(required - cycle.target_ids):
            cost = cache.never_observed_cost(tid)
            missing.add(tid)
            if cost > best_val:
                best_val = cost
                best_pair = (tid, 0)
    return CycleMetric(
        value=best_val,
        critical_target=best_pair[0],
        critical_ordinal=best_pair[1],
        max_gap=max_gap,
        per_target=per_target,
        missing_required=missing,
    )


def per_instance_floors(cycle: Cycle, cache: SteadyStateCache) -> list[float | None]:
    """Cost floor of every instance's own revisit gap (diagram data)."""
    gaps = cycle.visit_gaps()
    members = set(cycle.network.ids)
    return [
        cache.lower_bound(inst.target, gaps[inst.target][inst.ordinal - 1])
        if inst.target in members else None
        for inst in cycle.instances
    ]


# ---------------------------------------------------------------------------
# tour seed
# ---------------------------------------------------------------------------

def tsp_heuristic(network: TargetNetwork, subset: set[int] | list[int]) -> Cycle:
    """Closed tour over ``subset`` by nearest neighbour plus full 2-opt.

    Tour edges follow fastest paths; intermediate hops become pass-through
    instances.  Deterministic for a given network.
    """
    ids = sorted(set(subset))
    if not ids:
        raise ValueError("subset must be non-empty")
    if len(ids) == 1:
        return Cycle.from_targets(network, ids)
    travel = network.travel
    # nearest neighbour from the lowest id
    tour = [ids[0]]
    remaining = set(ids[1:])
    while remaining:
        here = tour[-1]
        nxt = min(remaining, key=lambda j: (travel[here][j], j))
        tour.append(nxt)
        remaining.remove(nxt)
    tour = _two_opt(tour, travel)
    return Cycle.from_targets(network, tour)


def _two_opt(tour: list[int], travel) -> list[int]:
    n = len(tour)
    if n <= 3:
        return tour
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                a, b = tour[i], tour[i + 1]
                c, d = tour[j], tour[(j + 1) % n]
                delta = (travel[a][c] + travel[b][d]) - (travel[a][b] + travel[c][d])
                if delta < -1e-12:
                    tour[i + 1 : j + 1] = reversed(tour[i + 1 : j + 1])
                    improved = True
    return tour


# ---------------------------------------------------------------------------
# cycle modification operations
# ---------------------------------------------------------------------------

def _critical_span(cycle: Cycle, metric: CycleMetric) -> tuple[int, list[int]]:
    """Positions of the critical sub-cycle: from the previous visit of the
    critical target (exclusive) through the critical instance (inclusive)."""
    tid, ordinal = metric.critical_target, metric.critical_ordinal
    positions = cycle.positions_of(tid)
    here = positions[ordinal - 1]
    prev = positions[(ordinal - 2) % len(positions)]
    n = len(cycle.instances)
    span = []
    p = (prev + 1) % n
    while True:
        span.append(p)
        if p == here:
            break
        p = (p + 1) % n
    return prev, span


def _splice(cycle: Cycle, at: int, new_seq: list[tuple[int, bool]], new_legs: list[float]) -> Cycle:
    """Replace the adjacency after position ``at`` with a path of instances."""
    n = len(cycle.instances)
    seq = cycle.sequence()
    legs = list(cycle.legs)
    head_seq = seq[: at + 1]
    tail_seq = seq[at + 1 :]
    head_legs = legs[:at]
    tail_legs = legs[at + 1 :]
    return Cycle(cycle.network, head_seq + new_seq + tail_seq,
                 head_legs + new_legs + tail_legs)


def _path_between(network: TargetNetwork, u: int, v: int) -> tuple[list[tuple[int, bool]], list[float]]:
    """Expanded fastest path u -> v as (pass-through instances, leg times)."""
    hops = [u] + network.path[u][v] + [v]
    seq = [(h, False) for h in hops[1:-1]]
    legs = [network.travel[a][b] for a, b in zip(hops[:-1], hops[1:])]
    return seq, legs


def enumerate_cmos(cycle: Cycle, metric: CycleMetric) -> list[tuple[str, Cycle]]:
    """Candidate modifications of the critical sub-cycle.

    Three kinds, all reducing the critical revisit gap:
    I   replace a dominated direct leg with the fastest path;
    II  split an interior edge with an extra visit to the critical target;
    III detour to the critical target right after an interior instance.

    Returns (kind, candidate) pairs in deterministic order, deduplicated.
    """
    network = cycle.network
    tid = metric.critical_target
    if len(cycle.instances) == 1 or metric.critical_ordinal == 0:
        # nothing to modify, or the metric is driven by an absent target
        return []
    prev, span = _critical_span(cycle, metric)
    edge_positions = [prev] + span[:-1]  # legs traversed inside the sub-cycle
    candidates: list[tuple[str, Cycle]] = []
    seen = {cycle.canonical_key()}

    def push(kind: str, cand: Cycle):
        key = cand.canonical_key()
        if key not in seen:
            seen.add(key)
            candidates.append((kind, cand))

    n = len(cycle.instances)
    for pos in edge_positions:
        u = cycle.instances[pos].target
        v = cycle.instances[(pos + 1) % n].target
        if cycle.legs[pos] > network.travel[u][v] + 1e-12:
            seq, legs = _path_between(network, u, v)
            push("I", _splice(cycle, pos, seq, legs))
    for pos in edge_positions:
        u = cycle.instances[pos].target
        v = cycle.instances[(pos + 1) % n].target
        if u == tid or v == tid:
            continue
        seq_u, legs_u = _path_between(network, u, tid)
        seq_v, legs_v = _path_between(network, tid, v)
        push("II", _splice(cycle, pos, seq_u + [(tid, True)] + seq_v, legs_u + legs_v))
    eligible_targets = cycle.dwell_targets
    for pos in span[:-1]:
        j = cycle.instances[pos].target
        if j == tid:
            continue
        seq_a, legs_a = _path_between(network, j, tid)
        seq_b, legs_b = _path_between(network, tid, j)
        new_seq = seq_a + [(tid, True)] + seq_b + [(j, j in eligible_targets)]
        # the detour ends with the original outgoing leg, now leaving the
        # duplicated instance
        new_legs = legs_a + legs_b + [cycle.legs[pos]]
        push("III", _splice(cycle, pos, new_seq, new_legs))
    return candidates


def improve_cycle(
    cycle: Cycle,
    metric: CycleMetric,
    cache: SteadyStateCache,
    kinds: tuple[str, ...],
    config: PlannerConfig | None = None,
) -> tuple[Cycle, CycleMetric, list[float]]:
    """Apply best-gain modifications of the given kinds until none improves."""
    cfg = config or DEFAULT_CONFIG
    trace = []
    while True:
        eps = cfg.greedy_gain_rel * abs(metric.value) if math.isfinite(metric.value) else 0.0
        best = None
        for kind, cand in enumerate_cmos(cycle, metric):
            if kind not in kinds:
                continue
            cand_metric = cycle_lower_bound(cand, cache)
            gain = _gain(metric.value, cand_metric.value)
            if gain >= max(eps, 0.0) and gain > 0 and (best is None or gain > best[0] + 1e-15):
                best = (gain, kind, cand, cand_metric)
        if best is None:
            return cycle, metric, trace
        _, _, cycle, metric = best
        trace.append(metric.value)


def greedy_construct(
    network: TargetNetwork,
    subset: set[int] | list[int],
    cache: SteadyStateCache | None = None,
    config: PlannerConfig | None = None,
) -> tuple[Cycle, CycleMetric, list[float]]:
    """Greedy cycle construction: tour seed, then best-gain modifications.

    First pass applies only leg shortcuts (kind I), second pass the visit
    insertions (kinds II/III); each accepted step strictly lowers the metric.
    Returns the cycle, its metric, and the metric trace across accepted steps.
    """
    cfg = config or DEFAULT_CONFIG
    cache = cache or SteadyStateCache(network)
    cycle = tsp_heuristic(network, subset)
    metric = cycle_lower_bound(cycle, cache)
    trace = [metric.value]
    for kinds in (("I",), ("II", "III")):
        cycle, metric, steps = improve_cycle(cycle, metric, cache, kinds, cfg)
        trace.extend(steps)
    return cycle, metric, trace


def _gain(old: float, new: float) -> float:
    if math.isinf(old) and math.isinf(new):
        return 0.0
    if math.isinf(old):
        return math.inf
    return old - new


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def cycle_to_document(cycle: Cycle, metric: CycleMetric, cache: SteadyStateCache) -> dict:
    """Diagram-ready cycle description (instances, legs, per-instance floors)."""
    return {
        "instances": [
            {"target": i.target, "ordinal": i.ordinal, "dwell_eligible": i.dwell_eligible}
            for i in cycle.instances
        ],
        "leg_times": list(cycle.legs),
        "travel_time": cycle.travel_time,
        "per_instance_cost_floor": per_instance_floors(cycle, cache),
        "metric": metric.value,
        "critical": {"target": metric.critical_target, "ordinal": metric.critical_ordinal},
    }
