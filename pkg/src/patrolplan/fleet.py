"""Fleet planning: partition the target network and plan each cluster.

The partition quality hinges on the pairwise disparity metric: the cost floor
of the best single cycle covering both targets, estimated by greedily growing
a cycle from each start target and accumulating half the grown cycle's metric
whenever a target joins.  A Gaussian kernel turns disparities into
similarities, normalized spectral clustering splits the network, a greedy
cycle is built per cluster, and a target-exchange pass rebalances clusters
while it strictly improves the fleet's worst cost floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .config import DEFAULT_CONFIG, PlannerConfig
from .cycles import (
    Cycle,
    CycleMetric,
    SteadyStateCache,
    cycle_lower_bound,
    cycle_to_document,
    greedy_construct,
    improve_cycle,
)
from .dwell import Plan, plan_for_cycle
from .model import TargetNetwork

__all__ = [
    "FleetError",
    "DisparityMatrix",
    "SimilarityMatrix",
    "Partition",
    "enumerate_ceos",
    "disparity_matrix",
    "shortest_path_disparity",
    "similarity_from_disparity",
    "spectral_cluster",
    "cluster_subnetwork",
    "plan_fleet",
    "tes_refine",
    "partition_to_document",
]


class FleetError(RuntimeError):
    pass


@dataclass
class DisparityMatrix:
    ids: list[int]
    values: np.ndarray  # symmetric, zero diagonal

    def of(self, i: int, j: int) -> float:
        return float(self.values[self.ids.index(i), self.ids.index(j)])


@dataclass
class SimilarityMatrix:
    ids: list[int]
    values: np.ndarray
    sigma: float


@dataclass
class Partition:
    """Disjoint target clusters with their sub-networks, cycles and metrics."""

    network: TargetNetwork
    clusters: list[set[int]]
    subnetworks: list[TargetNetwork]
    cycles: list[Cycle]
    metrics: list[CycleMetric]
    tes_log: list[dict] = field(default_factory=list)
    plans: list[Plan] | None = None

    @property
    def fleet_metric(self) -> float:
        return max(m.value for m in self.metrics)

    @property
    def metric_ratio(self) -> float:
        values = [m.value for m in self.metrics]
        return max(values) / min(values)

    @property
    def fleet_cost(self) -> float:
        if self.plans is None:
            raise FleetError("dwell schedules have not been computed")
        return max(p.j_pred for p in self.plans)


# ---------------------------------------------------------------------------
# cycle expansion operations
# ---------------------------------------------------------------------------

def enumerate_ceos(cycle: Cycle, external: int, max_bypass: int = 2) -> list[Cycle]:
    """All expansions of ``cycle`` that add a visit to ``external``.

    Three kinds: insert on an edge, out-and-back after an instance, and
    replace a short run of instances (each appearing elsewhere too) with the
    external target.  Deduplicated; deterministic order.
    """
    network = cycle.network
    if external in cycle.target_ids and any(
        i.dwell_eligible and i.target == external for i in cycle.instances
    ):
        raise ValueError(f"target {external} is already part of the cycle")
    seq = cycle.sequence()
    n = len(seq)
    if n == 1:
        return [Cycle.from_targets(network, [seq[0][0], external])]
    legs = cycle.legs
    out: list[Cycle] = []
    seen = set()

    def push(new_seq, new_legs):
        key = (tuple(new_seq), tuple(round(l, 12) for l in new_legs))
        if key not in seen:
            seen.add(key)
            out.append(Cycle(network, new_seq, new_legs))

    def path(u, v):
        hops = [u] + network.path[u][v] + [v]
        mids = [(h, False) for h in hops[1:-1]]
        times = [network.travel[a][b] for a, b in zip(hops[:-1], hops[1:])]
        return mids, times

    # on-edge insertion
    for pos in range(n):
        u, v = seq[pos][0], seq[(pos + 1) % n][0]
        mids_u, legs_u = path(u, external)
        mids_v, legs_v = path(external, v)
        new_seq = seq[: pos + 1] + mids_u + [(external, True)] + mids_v + seq[pos + 1 :]
        new_legs = legs[:pos] + legs_u + legs_v + legs[pos + 1 :]
        push(new_seq, new_legs)
    # out-and-back detour after an instance; the duplicated instance takes
    # over the original outgoing leg
    for pos in range(n):
        j, j_elig = seq[pos]
        mids_a, legs_a = path(j, external)
        mids_b, legs_b = path(external, j)
        new_seq = (
            seq[: pos + 1]
            + mids_a + [(external, True)] + mids_b + [(j, j_elig)]
            + seq[pos + 1 :]
        )
        new_legs = legs[:pos] + legs_a + legs_b + [legs[pos]] + legs[pos + 1 :]
        push(new_seq, new_legs)
    # bypass a short interior run; every dwell visit removed must leave the
    # same target dwellable elsewhere in the cycle
    counts: dict[int, int] = {}
    for t, elig in seq:
        if elig:
            counts[t] = counts.get(t, 0) + 1
    for start in range(n):
        removed: dict[int, int] = {}
        for run in range(1, max_bypass + 1):
            mid_pos = (start + run) % n
            end_pos = (start + run + 1) % n
            t_mid, mid_elig = seq[mid_pos]
            if mid_elig:
                removed[t_mid] = removed.get(t_mid, 0) + 1
            if end_pos == start:
                break
            if any(removed[t] >= counts.get(t, 0) for t in removed):
                break
            u, v = seq[start][0], seq[end_pos][0]
            mids_u, legs_u = path(u, external)
            mids_v, legs_v = path(external, v)
            if end_pos > start:
                new_seq = seq[: start + 1] + mids_u + [(external, True)] + mids_v + seq[end_pos:]
                new_legs = legs[:start] + legs_u + legs_v + legs[end_pos:]
            else:
                new_seq = seq[end_pos : start + 1] + mids_u + [(external, True)] + mids_v
                new_legs = legs[end_pos:start] + legs_u + legs_v
            push(new_seq, new_legs)
    return out


# ---------------------------------------------------------------------------
# disparity
# ---------------------------------------------------------------------------

def disparity_matrix(
    network: TargetNetwork,
    cache: SteadyStateCache | None = None,
    config: PlannerConfig | None = None,
    method: str = "exact-pair",
) -> DisparityMatrix:
    """Covering-cycle disparity for every target pair.

    ``exact-pair`` (default) evaluates the definition directly: any cycle
    covering both targets forces each one's worst revisit gap to at least the
    round-trip travel between them, and the alternating two-target cycle
    attains that bound, so the best covering-cycle cost is
    ``max(L_i(2 T_ij), L_j(2 T_ij))``.

    ``greedy-sweep`` instead grows a cycle from each start target, always
    taking the expansion with the least metric increase, and credits half the
    grown cycle's metric to the pair (start, joined); each unordered pair
    receives exactly two contributions.  The sweep overestimates pairs that
    join late (their value reflects the whole grown club), which washes out
    the pairwise structure on larger networks; it is kept for comparison.
    """
    cfg = config or DEFAULT_CONFIG
    cache = cache or SteadyStateCache(network)
    ids = sorted(network.ids)
    index = {tid: k for k, tid in enumerate(ids)}
    m = len(ids)
    values = np.zeros((m, m))
    if method == "exact-pair":
        for a, i in enumerate(ids):
            for b in range(a + 1, m):
                j = ids[b]
                round_trip = 2.0 * network.travel[i][j]
                d = max(cache.lower_bound(i, round_trip),
                        cache.lower_bound(j, round_trip))
                values[a, b] = values[b, a] = d
        return DisparityMatrix(ids=ids, values=values)
    if method != "greedy-sweep":
        raise FleetError(f"unknown disparity method: {method}")
    for start in ids:
        cycle = Cycle.from_targets(network, [start])
        metric = cycle_lower_bound(cycle, cache)
        remaining = [t for t in ids if t != start]
        while remaining:
            best = None
            for j in remaining:
                for cand in enumerate_ceos(cycle, j):
                    cand_metric = cycle_lower_bound(cand, cache)
                    gain = metric.value - cand_metric.value
                    if best is None or gain > best[0] + 1e-15:
                        best = (gain, j, cand, cand_metric)
            _, joined, cycle, metric = best
            half = 0.5 * metric.value
            values[index[start], index[joined]] += half
            values[index[joined], index[start]] += half
            remaining.remove(joined)
    return DisparityMatrix(ids=ids, values=values)


def shortest_path_disparity(network: TargetNetwork) -> DisparityMatrix:
    """Plain fastest-travel-time disparity (the ablation baseline)."""
    ids = sorted(network.ids)
    m = len(ids)
    values = np.zeros((m, m))
    for a in range(m):
        for b in range(m):
            values[a, b] = network.travel[ids[a]][ids[b]]
    return DisparityMatrix(ids=ids, values=values)


def similarity_from_disparity(
    disparity: DisparityMatrix, sigma: float | None = None
) -> SimilarityMatrix:
    """Gaussian kernel similarity, self-similarity exactly one."""
    d = disparity.values
    if sigma is None:
        off = d[~np.eye(d.shape[0], dtype=bool)]
        sigma = float(np.median(off)) if off.size else 1.0
        if sigma <= 0:
            sigma = 1.0
    s = np.exp(-(d ** 2) / (2.0 * sigma ** 2))
    return SimilarityMatrix(ids=disparity.ids, values=s, sigma=sigma)


# ---------------------------------------------------------------------------
# spectral clustering
# ---------------------------------------------------------------------------

def _kmeans_plus_plus(points: np.ndarray, k: int, rng) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    for _ in range(k - 1):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(points[rng.integers(n)])
            continue
        probs = d2 / total
        centers.append(points[rng.choice(n, p=probs)])
    return np.array(centers)


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iters: int) -> tuple[np.ndarray, float]:
    k = centers.shape[0]
    labels = np.zeros(points.shape[0], dtype=int)
    for _ in range(max_iters):
        dists = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
        new_labels = dists.argmin(axis=1)
        for c in range(k):
            members = points[new_labels == c]
            if len(members) == 0:
                # reseed an empty cluster at the point farthest from its center
                far = dists.min(axis=1).argmax()
                centers[c] = points[far]
                new_labels[far] = c
            else:
                centers[c] = members.mean(axis=0)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    wcss = 0.0
    for c in range(k):
        members = points[labels == c]
        if len(members) == 0:
            return labels, math.inf
        wcss += float(((members - members.mean(axis=0)) ** 2).sum())
    return labels, wcss


def spectral_cluster(
    similarity: SimilarityMatrix,
    n_clusters: int,
    seed: int = 0,
    restarts: int | None = None,
) -> list[set[int]]:
    """Normalized spectral clustering of the similarity graph.

    Solves the generalized eigenproblem L u = lambda D u (the symmetric form
    of the random-walk normalized Laplacian), embeds targets into the first
    ``n_clusters`` eigenvectors, and k-means-clusters the rows with restarts.
    """
    cfg = DEFAULT_CONFIG
    restarts = cfg.kmeans_restarts if restarts is None else restarts
    ids = similarity.ids
    m = len(ids)
    if not 1 <= n_clusters <= m:
        raise FleetError(f"cannot split {m} targets into {n_clusters} clusters")
    if n_clusters == 1:
        return [set(ids)]
    W = similarity.values
    D = np.diag(W.sum(axis=1))
    L = D - W
    eigvals, eigvecs = scipy.linalg.eigh(L, D)
    U = eigvecs[:, :n_clusters]
    rng = np.random.default_rng(seed)
    best_labels, best_wcss = None, math.inf
    for _ in range(restarts):
        centers = _kmeans_plus_plus(U, n_clusters, rng)
        labels, wcss = _lloyd(U, centers.copy(), cfg.kmeans_max_iters)
        if len(set(labels.tolist())) < n_clusters:
            continue
        if wcss < best_wcss:
            best_labels, best_wcss = labels, wcss
    if best_labels is None:
        raise FleetError("k-means produced an empty cluster in every restart")
    clusters = [set() for _ in range(n_clusters)]
    for tid, lab in zip(ids, best_labels):
        clusters[lab].add(tid)
    clusters.sort(key=lambda c: min(c))
    return clusters


# ---------------------------------------------------------------------------
# sub-network assembly
# ---------------------------------------------------------------------------

def cluster_subnetwork(network: TargetNetwork, members: set[int]) -> TargetNetwork:
    """Induced sub-network over ``members`` with intra-cluster edges only.

    If that graph is disconnected, the fastest full-network paths between its
    components are re-added as composite connectors (their pass-through
    targets stay recorded for trajectory emission).
    """
    extra: list[tuple[int, int, float, list[int]]] = []
    while True:
        sub = network.subnetwork(members, extra_edges=extra)
        if sub.is_connected():
            return sub
        comp = _components(sub)
        base = comp[0]
        best = None
        for other in comp[1:]:
            for i in base:
                for j in other:
                    d = network.travel[i][j]
                    if best is None or d < best[0]:
                        best = (d, i, j)
        d, i, j = best
        extra.append((i, j, d, list(network.path[i][j])))


def _components(network: TargetNetwork) -> list[list[int]]:
    ids = network.ids
    seen: set[int] = set()
    comps = []
    for root in ids:
        if root in seen:
            continue
        comp = [t for t in ids if not math.isinf(network.travel[root][t])]
        seen.update(comp)
        comps.append(sorted(comp))
    return comps


# ---------------------------------------------------------------------------
# fleet pipeline
# ---------------------------------------------------------------------------

def _build_cluster(network, members, cache, cfg) -> tuple[TargetNetwork, Cycle, CycleMetric]:
    sub = cluster_subnetwork(network, members)
    cycle, metric, _ = greedy_construct(sub, sorted(members), cache, cfg)
    return sub, cycle, metric


def plan_fleet(
    network: TargetNetwork,
    num_agents: int,
    cache: SteadyStateCache | None = None,
    config: PlannerConfig | None = None,
    refine: bool = True,
    disparity: str = "covering-cycle",
    with_dwells: bool = True,
) -> Partition:
    """Cluster the network, build a cycle per cluster, optionally rebalance
    with target exchanges, then schedule dwells per cluster."""
    cfg = config or DEFAULT_CONFIG
    cache = cache or SteadyStateCache(network)
    if num_agents < 1:
        raise FleetError("need at least one agent")
    if num_agents > len(network.ids):
        raise FleetError("more agents than targets")
    if disparity == "covering-cycle":
        disp = disparity_matrix(network, cache, cfg)
    elif disparity == "shortest-path":
        disp = shortest_path_disparity(network)
    else:
        raise FleetError(f"unknown disparity kind: {disparity}")
    sim = similarity_from_disparity(disp, cfg.sigma)
    clusters = spectral_cluster(sim, num_agents, seed=cfg.seed, restarts=cfg.kmeans_restarts)
    subs, cycles, metrics = [], [], []
    for members in clusters:
        sub, cycle, metric = _build_cluster(network, members, cache, cfg)
        subs.append(sub)
        cycles.append(cycle)
        metrics.append(metric)
    partition = Partition(
        network=network,
        clusters=clusters,
        subnetworks=subs,
        cycles=cycles,
        metrics=metrics,
    )
    if refine and num_agents > 1:
        partition = tes_refine(partition, cache, cfg)
    if with_dwells:
        partition.plans = [
            plan_for_cycle(cycle, cache, cfg) for cycle in partition.cycles
        ]
    return partition


# ---------------------------------------------------------------------------
# target-exchange refinement
# ---------------------------------------------------------------------------

def _contracted_metric(network, cache, cfg, cycle, drop: int) -> float:
    keep = [t for t, elig in cycle.sequence() if elig and t != drop]
    if not keep:
        return math.inf
    members = set(keep)
    sub = cluster_subnetwork(network, members)
    cand = Cycle.from_targets(sub, sorted(members, key=lambda t: keep.index(t)))
    metric = cycle_lower_bound(cand, cache)
    cand, metric, _ = improve_cycle(cand, metric, cache, ("II", "III"), cfg)
    return metric.value


def _annex_gain(network, cache, cfg, cycle, members, join: int) -> float:
    prospective = cluster_subnetwork(network, set(members) | {join})
    base_seq = [t for t, elig in cycle.sequence() if elig]
    base = Cycle.from_targets(prospective, base_seq)
    base_metric = cycle_lower_bound(base, cache)
    best = -math.inf
    for cand in enumerate_ceos(base, join):
        val = cycle_lower_bound(cand, cache).value
        gain = base_metric.value - val
        if gain > best:
            best = gain
    return best


def tes_refine(partition: Partition, cache: SteadyStateCache | None = None,
               config: PlannerConfig | None = None) -> Partition:
    """Move targets out of the fleet-critical cluster while the fleet's worst
    cost floor improves, or, on a plateau, while the balance across clusters
    strictly improves.

    Candidates come from the critical sub-cycle; they are ranked by the
    estimated annex + removal gain and the first exchange whose full rebuild
    passes the commit test is applied.
    """
    cfg = config or DEFAULT_CONFIG
    cache = cache or SteadyStateCache(partition.network)
    network = partition.network
    clusters = [set(c) for c in partition.clusters]
    subs = list(partition.subnetworks)
    cycles = list(partition.cycles)
    metrics = list(partition.metrics)
    log: list[dict] = []

    for _ in range(cfg.tes_max_commits):
        fleet_val = max(m.value for m in metrics)
        ratio = max(m.value for m in metrics) / min(m.value for m in metrics)
        a_star = min(
            (k for k in range(len(clusters)) if metrics[k].value == fleet_val),
            default=None,
        )
        if a_star is None:
            break
        metric_a = metrics[a_star]
        cycle_a = cycles[a_star]
        span_targets = _critical_span_targets(cycle_a, metric_a)
        candidates = []
        for j in span_targets:
            if j not in clusters[a_star] or len(clusters[a_star]) <= 1:
                continue
            removal = metric_a.value - _contracted_metric(network, cache, cfg, cycle_a, j)
            for b in range(len(clusters)):
                if b == a_star:
                    continue
                annex = _annex_gain(network, cache, cfg, cycles[b], clusters[b], j)
                candidates.append((removal + annex, j, b))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        committed = False
        for est_gain, j, b in candidates:
            new_a = clusters[a_star] - {j}
            new_b = clusters[b] | {j}
            sub_a, cyc_a, met_a = _build_cluster(network, new_a, cache, cfg)
            sub_b, cyc_b, met_b = _build_cluster(network, new_b, cache, cfg)
            new_metrics = list(metrics)
            new_metrics[a_star] = met_a
            new_metrics[b] = met_b
            new_fleet = max(m.value for m in new_metrics)
            new_ratio = max(m.value for m in new_metrics) / min(m.value for m in new_metrics)
            # commit on a strictly lower worst cost floor, or on equal floor
            # with strictly better balance (escapes plateaus; the pair
            # (worst, ratio) decreases lexicographically, so this terminates)
            improves = new_fleet < fleet_val * (1.0 - 1e-12)
            rebalances = (
                new_fleet <= fleet_val * (1.0 + 1e-12)
                and new_ratio < ratio * (1.0 - 1e-9)
            )
            if improves or rebalances:
                clusters[a_star], clusters[b] = new_a, new_b
                subs[a_star], subs[b] = sub_a, sub_b
                cycles[a_star], cycles[b] = cyc_a, cyc_b
                metrics = new_metrics
                log.append({
                    "moved_target": j,
                    "from_cluster": a_star,
                    "to_cluster": b,
                    "estimated_gain": est_gain,
                    "fleet_metric_before": fleet_val,
                    "fleet_metric_after": new_fleet,
                    "ratio_before": ratio,
                    "ratio_after": new_ratio,
                })
                committed = True
                break
        if not committed:
            break
    return Partition(
        network=network,
        clusters=clusters,
        subnetworks=subs,
        cycles=cycles,
        metrics=metrics,
        tes_log=partition.tes_log + log,
        plans=None,
    )


def _critical_span_targets(cycle: Cycle, metric: CycleMetric) -> list[int]:
    """Member targets inside the critical sub-cycle, critical target included."""
    from .cycles import _critical_span

    members = set(cycle.network.ids)
    _, span = _critical_span(cycle, metric)
    out = []
    for pos in span:
        t = cycle.instances[pos].target
        if t in members and t not in out:
            out.append(t)
    return sorted(out)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def partition_to_document(partition: Partition, cache: SteadyStateCache | None = None) -> dict:
    cache = cache or SteadyStateCache(partition.network)
    doc = {
        "format": "fleet-plan",
        "num_agents": len(partition.clusters),
        "fleet_metric": partition.fleet_metric,
        "clusters": [sorted(c) for c in partition.clusters],
        "cluster_metrics": [m.value for m in partition.metrics],
        "cycles": [
            cycle_to_document(cycle, metric, cache)
            for cycle, metric in zip(partition.cycles, partition.metrics)
        ],
        "target_exchanges": partition.tes_log,
    }
    if partition.plans is not None:
        doc["fleet_cost"] = partition.fleet_cost
        doc["plans"] = [p.to_document() for p in partition.plans]
    return doc
