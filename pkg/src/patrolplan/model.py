"""Problem instances: target dynamics, travel network, fleet size.

An instance is a set of targets with linear-Gaussian internal dynamics, an
undirected travel-time graph over them, and an agent count.  Loading validates
every structural requirement (definiteness, observability, connectivity) and
precomputes the all-pairs fastest travel times with their physical paths.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import ParamRanges

__all__ = [
    "InstanceError",
    "TargetSpec",
    "TargetNetwork",
    "FleetSpec",
    "load_instance",
    "load_instance_file",
    "instance_to_document",
    "generate_random_instance",
]


class InstanceError(ValueError):
    """Raised when an instance document violates the schema or an invariant."""


def _as_matrix(value: Any, name: str, tid: int) -> np.ndarray:
    """Accept a bare number as a 1x1 matrix, else row-major nested lists."""
    if isinstance(value, (int, float)):
        return np.array([[float(value)]])
    try:
        mat = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"target {tid}: field {name} is not numeric") from exc
    if mat.ndim == 1:
        mat = mat.reshape(1, -1)
    if mat.ndim != 2:
        raise InstanceError(f"target {tid}: field {name} must be a matrix")
    return mat


def _check_spd(mat: np.ndarray, name: str, tid: int) -> None:
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise InstanceError(f"target {tid}: {name} is not symmetric")
    eigs = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if eigs.min() <= 0:
        raise InstanceError(f"target {tid}: {name} is not positive definite")


def _observability_rank(a: np.ndarray, h: np.ndarray) -> int:
    blocks = [h]
    for _ in range(a.shape[0] - 1):
        blocks.append(blocks[-1] @ a)
    return int(np.linalg.matrix_rank(np.vstack(blocks)))


@dataclass
class TargetSpec:
    """One target: drift A, process noise Q, observation map H, sensor noise R.

    ``G = H' R^-1 H`` is derived at construction.  ``weight_alpha`` scales the
    linear cost weight applied to the covariance trace.
    """

    id: int
    A: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    weight_alpha: float = 1.0
    G: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.A = _as_matrix(self.A, "A", self.id)
        dim = self.A.shape[0]
        if self.A.shape != (dim, dim):
            raise InstanceError(f"target {self.id}: A must be square")
        self.Q = _as_matrix(self.Q, "Q", self.id)
        self.H = _as_matrix(self.H, "H", self.id)
        self.R = _as_matrix(self.R, "R", self.id)
        if self.Q.shape != (dim, dim):
            raise InstanceError(f"target {self.id}: Q must match A's shape")
        if self.H.shape[1] != dim:
            raise InstanceError(f"target {self.id}: H must have {dim} columns")
        m = self.H.shape[0]
        if self.R.shape != (m, m):
            raise InstanceError(f"target {self.id}: R must be {m}x{m}")
        _check_spd(self.Q, "Q", self.id)
        _check_spd(self.R, "R", self.id)
        if self.weight_alpha <= 0:
            raise InstanceError(f"target {self.id}: weight_alpha must be positive")
        if _observability_rank(self.A, self.H) < dim:
            raise InstanceError(f"target {self.id}: (A, H) is not observable")
        self.G = self.H.T @ np.linalg.solve(self.R, self.H)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def is_scalar(self) -> bool:
        return self.dim == 1

    @property
    def is_hurwitz(self) -> bool:
        return bool(np.all(np.linalg.eigvals(self.A).real < 0))

    def g(self, x: float) -> float:
        """Cost weight: linear, g(x) = weight_alpha * x."""
        return self.weight_alpha * x


@dataclass
class FleetSpec:
    """Number of deployed agents."""

    num_agents: int

    def validate(self, num_targets: int) -> None:
        if self.num_agents < 1:
            raise InstanceError("agents.count must be >= 1")
        if self.num_agents > num_targets:
            raise InstanceError(
                f"agents.count {self.num_agents} exceeds number of targets {num_targets}"
            )


@dataclass
class TargetNetwork:
    """Targets plus the undirected travel graph and its shortest-path closure.

    ``travel[i][j]`` is the fastest travel time between targets i and j;
    ``path[i][j]`` lists the intermediate targets traversed (exclusive of the
    endpoints).  Indices are target ids.  Immutable after construction.
    """

    targets: list[TargetSpec]
    edges: list[tuple[int, int, float]]
    positions: dict[int, tuple[float, float]] = field(default_factory=dict)
    travel: dict[int, dict[int, float]] = field(init=False)
    path: dict[int, dict[int, list[int]]] = field(init=False)

    def __post_init__(self) -> None:
        ids = [t.id for t in self.targets]
        if len(set(ids)) != len(ids):
            raise InstanceError("duplicate target ids")
        id_set = set(ids)
        seen = set()
        for i, j, d in self.edges:
            if i not in id_set or j not in id_set:
                raise InstanceError(f"edge ({i}, {j}) references an unknown target")
            if i == j:
                raise InstanceError(f"edge ({i}, {j}) is a self-loop")
            if d < 0:
                raise InstanceError(f"edge ({i}, {j}) has negative travel time")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InstanceError(f"duplicate edge ({i}, {j})")
            seen.add(key)
        self._floyd_warshall()
        if len(self.targets) > 1:
            for i in ids:
                for j in ids:
                    if math.isinf(self.travel[i][j]):
                        raise InstanceError(
                            f"graph is disconnected: no route between {i} and {j}"
                        )

    def _floyd_warshall(self) -> None:
        ids = [t.id for t in self.targets]
        self.direct = {}
        for i, j, d in self.edges:
            self.direct[(i, j)] = d
            self.direct[(j, i)] = d
        dist = {i: {j: (0.0 if i == j else math.inf) for j in ids} for i in ids}
        nxt: dict[int, dict[int, int | None]] = {
            i: {j: None for j in ids} for i in ids
        }
        for i, j, d in self.edges:
            if d < dist[i][j]:
                dist[i][j] = dist[j][i] = d
                nxt[i][j] = j
                nxt[j][i] = i
        for i in ids:
            nxt[i][i] = i
        for k in ids:
            for i in ids:
                dik = dist[i][k]
                if math.isinf(dik):
                    continue
                row_i, row_k = dist[i], dist[k]
                for j in ids:
                    alt = dik + row_k[j]
                    if alt < row_i[j]:
                        row_i[j] = alt
                        dist[j][i] = alt
                        nxt[i][j] = nxt[i][k]
                        nxt[j][i] = nxt[j][k]
        self.travel = dist
        self.path = {i: {} for i in ids}
        for i in ids:
            for j in ids:
                if i == j or nxt[i][j] is None:
                    self.path[i][j] = []
                    continue
                hops = []
                cur = i
                while cur != j:
                    cur = nxt[cur][j]  # type: ignore[assignment]
                    hops.append(cur)
                self.path[i][j] = hops[:-1]

    @property
    def ids(self) -> list[int]:
        return [t.id for t in self.targets]

    def target(self, tid: int) -> TargetSpec:
        for t in self.targets:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def subnetwork(self, keep_ids: set[int], extra_edges: list[tuple[int, int, float, list[int]]] | None = None) -> "TargetNetwork":
        """Induced sub-network over ``keep_ids`` (intra edges only).

        ``extra_edges`` are composite connectors (i, j, d, via) whose ``via``
        lists pass-through targets outside the cluster; they are recorded so
        emitted trajectories stay physical.
        """
        targets = [t for t in self.targets if t.id in keep_ids]
        edges = [(i, j, d) for (i, j, d) in self.edges if i in keep_ids and j in keep_ids]
        sub = TargetNetwork.__new__(TargetNetwork)
        sub.targets = targets
        sub.edges = edges
        sub.positions = {i: p for i, p in self.positions.items() if i in keep_ids}
        sub._composite = {}
        if extra_edges:
            for i, j, d, via in extra_edges:
                sub.edges.append((i, j, d))
                sub._composite[(i, j)] = via
                sub._composite[(j, i)] = list(reversed(via))
        sub._floyd_warshall()
        # splice composite connectors back into physical paths
        if extra_edges:
            for i in sub.path:
                for j in sub.path[i]:
                    sub.path[i][j] = sub._expand_composite(i, j)
        return sub

    def _expand_composite(self, i: int, j: int) -> list[int]:
        comp = getattr(self, "_composite", {})
        if not comp or i == j:
            return self.path[i][j]
        nodes = [i] + self.path[i][j] + [j]
        out: list[int] = []
        for a, b in zip(nodes[:-1], nodes[1:]):
            out.extend(comp.get((a, b), []))
            out.append(b)
        return out[:-1]

    def is_connected(self) -> bool:
        ids = self.ids
        if len(ids) <= 1:
            return True
        return all(
            not math.isinf(self.travel[ids[0]][j]) for j in ids[1:]
        )


def _parse_targets(raw: Any) -> list[TargetSpec]:
    if not isinstance(raw, list) or not raw:
        raise InstanceError("'targets' must be a non-empty list")
    targets = []
    for entry in raw:
        if not isinstance(entry, dict):
            raise InstanceError("each target must be an object")
        missing = {"id", "A", "Q", "H", "R"} - entry.keys()
        if missing:
            raise InstanceError(f"target entry missing keys: {sorted(missing)}")
        targets.append(
            TargetSpec(
                id=int(entry["id"]),
                A=entry["A"],
                Q=entry["Q"],
                H=entry["H"],
                R=entry["R"],
                weight_alpha=float(entry.get("weight_alpha", 1.0)),
            )
        )
    return sorted(targets, key=lambda t: t.id)


def load_instance(document: dict) -> tuple[TargetNetwork, FleetSpec]:
    """Build and validate a network + fleet from a parsed instance document."""
    if not isinstance(document, dict):
        raise InstanceError("instance document must be an object")
    unknown = set(document.keys()) - {"targets", "edges", "agents"}
    if unknown:
        raise InstanceError(f"unknown top-level keys: {sorted(unknown)}")
    targets = _parse_targets(document.get("targets"))
    raw_edges = document.get("edges", [])
    if not isinstance(raw_edges, list):
        raise InstanceError("'edges' must be a list")
    edges = []
    for entry in raw_edges:
        if not isinstance(entry, dict) or {"i", "j", "d"} - entry.keys():
            raise InstanceError("each edge must be an object with keys i, j, d")
        edges.append((int(entry["i"]), int(entry["j"]), float(entry["d"])))
    network = TargetNetwork(targets=targets, edges=edges)
    agents_raw = document.get("agents", {"count": 1})
    if not isinstance(agents_raw, dict) or "count" not in agents_raw:
        raise InstanceError("'agents' must be an object with a 'count' key")
    fleet = FleetSpec(num_agents=int(agents_raw["count"]))
    fleet.validate(len(targets))
    return network, fleet


def load_instance_file(path: str) -> tuple[TargetNetwork, FleetSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            document = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"invalid JSON in {path}: {exc}") from exc
    return load_instance(document)


def _matrix_to_doc(mat: np.ndarray) -> Any:
    if mat.shape == (1, 1):
        return float(mat[0, 0])
    return [[float(x) for x in row] for row in mat]


def instance_to_document(network: TargetNetwork, fleet: FleetSpec) -> dict:
    """Serialize back to the instance schema (derived fields omitted)."""
    return {
        "targets": [
            {
                "id": t.id,
                "A": _matrix_to_doc(t.A),
                "Q": _matrix_to_doc(t.Q),
                "H": _matrix_to_doc(t.H),
                "R": _matrix_to_doc(t.R),
                "weight_alpha": t.weight_alpha,
            }
            for t in network.targets
        ],
        "edges": [
            {"i": i, "j": j, "d": d} for (i, j, d) in network.edges
        ],
        "agents": {"count": fleet.num_agents},
    }


def generate_random_instance(
    num_targets: int,
    seed: int,
    param_ranges: ParamRanges | None = None,
    num_agents: int = 1,
) -> tuple[TargetNetwork, FleetSpec]:
    """Random scalar-target instance: uniform positions, complete graph.

    Deterministic for a fixed seed.  Travel times are Euclidean distances
    between positions drawn uniformly from [0, box]^2.
    """
    if num_targets < 1:
        raise InstanceError("num_targets must be >= 1")
    ranges = param_ranges or ParamRanges()
    ranges.validate()
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, ranges.box, size=(num_targets, 2))
    n_stable = int(ranges.stable_fraction * num_targets)
    targets = []
    for k in range(num_targets):
        a_lo, a_hi = ranges.a_stable if k < n_stable else ranges.a
        targets.append(
            TargetSpec(
                id=k + 1,
                A=float(rng.uniform(a_lo, a_hi)),
                Q=float(rng.uniform(*ranges.q)),
                H=1.0,
                R=float(rng.uniform(*ranges.r)),
                weight_alpha=float(rng.uniform(*ranges.alpha)),
            )
        )
    edges = []
    for a in range(num_targets):
        for b in range(a + 1, num_targets):
            d = float(np.hypot(*(pos[a] - pos[b])))
            edges.append((a + 1, b + 1, d))
    network = TargetNetwork(
        targets=targets,
        edges=edges,
        positions={k + 1: (float(pos[k, 0]), float(pos[k, 1])) for k in range(num_targets)},
    )
    fleet = FleetSpec(num_agents=num_agents)
    fleet.validate(num_targets)
    return network, fleet
