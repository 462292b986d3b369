"""Grid data model, case ingestion and graph utilities.

Bus and branch indices are 0-based inside the library; user-facing reports
convert to 1-based numbering (see :func:`one_based`).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_TAU = 0.2
BUILTIN_CASES = ("case6ww", "case14", "case57")


class CaseError(ValueError):
    """Malformed or physically invalid case document."""


class PerturbationBoundError(ValueError):
    """Reactance perturbation outside the D-FACTS limits."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    has_dfacts: bool = True
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not self.x > 0:
            raise CaseError(f"branch reactance must be positive, got x={self.x}")
        if self.r < 0:
            raise CaseError(f"branch resistance must be non-negative, got r={self.r}")
        if not 0 <= self.tau < 1:
            raise CaseError(f"perturbation ratio must lie in [0, 1), got tau={self.tau}")
        if self.from_bus == self.to_bus:
            raise CaseError(f"self-loop branch at bus {self.from_bus}")


@dataclass(frozen=True)
class Generator:
    bus: int
    pg: float
    vg: float = 1.0


@dataclass(frozen=True)
class GridCase:
    """Immutable grid description.

    ``pd`` and ``qd`` are per-bus loads in p.u. Generators other than the one
    at ``ref_bus`` are treated as PV buses by the power-flow solver.
    """

    name: str
    ref_bus: int
    branches: tuple[Branch, ...]
    pd: np.ndarray
    qd: np.ndarray
    generators: tuple[Generator, ...] = ()
    base_mva: float = 100.0
    bus_ids: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "pd", _frozen(self.pd))
        object.__setattr__(self, "qd", _frozen(self.qd))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        if not self.bus_ids:
            object.__setattr__(self, "bus_ids", tuple(range(1, len(self.pd) + 1)))
        _validate_topology(self)

    @property
    def n_bus(self) -> int:
        return len(self.pd)

    @property
    def n_state(self) -> int:
        """Number of non-reference buses (``n`` in the angle-state model)."""
        return self.n_bus - 1

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def from_bus(self) -> np.ndarray:
        return np.array([b.from_bus for b in self.branches], dtype=int)

    @property
    def to_bus(self) -> np.ndarray:
        return np.array([b.to_bus for b in self.branches], dtype=int)

    @property
    def r(self) -> np.ndarray:
        return np.array([b.r for b in self.branches])

    @property
    def x(self) -> np.ndarray:
        return np.array([b.x for b in self.branches])

    @property
    def tau(self) -> np.ndarray:
        return np.array([b.tau for b in self.branches])

    @property
    def dfacts(self) -> np.ndarray:
        return np.array([b.has_dfacts for b in self.branches], dtype=bool)

    @property
    def non_ref(self) -> np.ndarray:
        return np.array([i for i in range(self.n_bus) if i != self.ref_bus], dtype=int)

    @property
    def v_ref(self) -> float:
        """Voltage set point of the reference bus (1.0 when no generator)."""
        for gen in self.generators:
            if gen.bus == self.ref_bus:
                return gen.vg
        return 1.0

    def with_dfacts(self, branches: Iterable[int] | None = None, tau: float | None = None) -> "GridCase":
        """Copy with D-FACTS on ``branches`` only (all when None) and optional uniform tau."""
        chosen = set(range(self.n_branch)) if branches is None else set(int(i) for i in branches)
        new = []
        for i, br in enumerate(self.branches):
            new.append(replace(br, has_dfacts=i in chosen, tau=br.tau if tau is None else tau))
        return replace(self, branches=tuple(new))

    def with_loads(self, pd, qd) -> "GridCase":
        return replace(self, pd=np.asarray(pd, float), qd=np.asarray(qd, float))


@dataclass(frozen=True)
class IncidenceSet:
    A: np.ndarray
    A_r: np.ndarray
    C_f: np.ndarray
    C_t: np.ndarray


@dataclass(frozen=True)
class MtdStrategy:
    """Per-branch reactance change ``delta_x`` (p.u.)."""

    delta_x: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "delta_x", _frozen(self.delta_x))

    @classmethod
    def zero(cls, case: GridCase) -> "MtdStrategy":
        return cls(np.zeros(case.n_branch))

    @classmethod
    def from_ratio(cls, case: GridCase, ratio) -> "MtdStrategy":
        """Strategy with ``delta_x = ratio * x`` (ratio per branch or scalar)."""
        return cls(np.broadcast_to(np.asarray(ratio, float), (case.n_branch,)) * case.x)

    def x_post(self, case: GridCase) -> np.ndarray:
        return case.x + self.delta_x


def validate_strategy(case: GridCase, strategy: MtdStrategy, atol: float = 1e-12) -> MtdStrategy:
    """Raise :class:`PerturbationBoundError` unless the D-FACTS limits hold."""
    dx = np.asarray(strategy.delta_x)
    if dx.shape != (case.n_branch,):
        raise PerturbationBoundError(
            f"strategy has {dx.shape} entries, case has {case.n_branch} branches")
    if not np.all(np.isfinite(dx)):
        raise PerturbationBoundError("non-finite reactance perturbation")
    limit = case.tau * case.x * case.dfacts
    bad = np.flatnonzero(np.abs(dx) > limit + atol)
    if bad.size:
        i = bad[0]
        raise PerturbationBoundError(
            f"branch {i + 1}: |dx|={abs(dx[i]):.6g} exceeds limit {limit[i]:.6g}"
            + ("" if case.dfacts[i] else " (no D-FACTS device)"))
    return strategy


def branch_admittance(case: GridCase, strategy: MtdStrategy | None = None):
    """Series conductance and susceptance ``(g, b)`` after applying ``strategy``."""
    if strategy is None:
        strategy = MtdStrategy.zero(case)
    validate_strategy(case, strategy)
    r = case.r
    x = strategy.x_post(case)
    d = r**2 + x**2
    return r / d, -x / d


def incidence(case: GridCase) -> IncidenceSet:
    m = case.n_branch
    C_f = np.zeros((m, case.n_bus))
    C_t = np.zeros((m, case.n_bus))
    rows = np.arange(m)
    C_f[rows, case.from_bus] = 1.0
    C_t[rows, case.to_bus] = 1.0
    A = C_f - C_t
    A_r = np.delete(A, case.ref_bus, axis=1)
    return IncidenceSet(_frozen(A), _frozen(A_r), _frozen(C_f), _frozen(C_t))


# ---------------------------------------------------------------- graph tools


def fundamental_cycles(edges: Sequence[tuple[int, int, int]]) -> list[list[int]]:
    """Cycle basis of a multigraph from a BFS spanning forest.

    ``edges`` holds ``(edge_id, u, v)`` triples. Each chord closes one cycle;
    the cycle is returned as the list of edge ids along it. Parallel edges
    yield 2-cycles.
    """
    adj: dict[int, list[tuple[int, int]]] = {}
    for eid, u, v in sorted(edges):
        adj.setdefault(u, []).append((eid, v))
        adj.setdefault(v, []).append((eid, u))
    parent: dict[int, tuple[int, int] | None] = {}
    depth: dict[int, int] = {}
    tree_edges = set()
    for root in sorted(adj):
        if root in parent:
            continue
        parent[root] = None
        depth[root] = 0
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for eid, v in adj[u]:
                if v not in parent:
                    parent[v] = (u, eid)
                    depth[v] = depth[u] + 1
                    tree_edges.add(eid)
                    queue.append(v)

    cycles = []
    for eid, u, v in sorted(edges):
        if eid in tree_edges:
            continue
        left, right = [], []
        a, b = u, v
        while depth[a] > depth[b]:
            pa, e = parent[a]
            left.append(e)
            a = pa
        while depth[b] > depth[a]:
            pb, e = parent[b]
            right.append(e)
            b = pb
        while a != b:
            pa, e = parent[a]
            left.append(e)
            a = pa
            pb, e = parent[b]
            right.append(e)
            b = pb
        cycles.append(left + [eid] + right[::-1])
    return cycles


def _edges(case: GridCase, subset: Iterable[int] | None = None):
    idx = range(case.n_branch) if subset is None else sorted(subset)
    return [(i, case.branches[i].from_bus, case.branches[i].to_bus) for i in idx]


def cycle_basis(case: GridCase, branches: Iterable[int] | None = None) -> list[list[int]]:
    """Independent cycles (branch-index lists) of the case or of a branch subset."""
    return fundamental_cycles(_edges(case, branches))


def cycle_buses(case: GridCase) -> set[int]:
    """Buses lying on at least one cycle."""
    buses = set()
    for cyc in cycle_basis(case):
        for i in cyc:
            buses.add(case.branches[i].from_bus)
            buses.add(case.branches[i].to_bus)
    return buses


def is_connected(n_bus: int, edges: Iterable[tuple[int, int]]) -> bool:
    parent = list(range(n_bus))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in edges:
        parent[find(u)] = find(v)
    return len({find(i) for i in range(n_bus)}) == 1


def _validate_topology(case: GridCase):
    n = case.n_bus
    if n < 2:
        raise CaseError("a case needs at least two buses")
    if len(case.qd) != n:
        raise CaseError("pd and qd lengths differ")
    if not 0 <= case.ref_bus < n:
        raise CaseError(f"reference bus index {case.ref_bus} out of range")
    for i, br in enumerate(case.branches):
        if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
            raise CaseError(f"branch {i + 1} references a missing bus")
    for gen in case.generators:
        if not 0 <= gen.bus < n:
            raise CaseError(f"generator at missing bus index {gen.bus}")
    if not is_connected(n, [(b.from_bus, b.to_bus) for b in case.branches]):
        raise CaseError("case graph is not connected")


# ------------------------------------------------------------------ loading


def _require(record: Mapping, key: str, where: str):
    if key not in record:
        raise CaseError(f"{where}: missing required field '{key}'")
    return record[key]


def parse_case(doc: Mapping, tau: float | None = None) -> GridCase:
    """Build a :class:`GridCase` from a decoded case document.

    ``tau`` overrides the per-branch perturbation ratio; otherwise each
    branch uses its own ``tau`` entry or :data:`DEFAULT_TAU`.
    """
    if not isinstance(doc, Mapping):
        raise CaseError("case document must be a mapping")
    buses = _require(doc, "buses", "case")
    branches = _require(doc, "branches", "case")
    ids = [int(_require(b, "id", f"bus {k + 1}")) for k, b in enumerate(buses)]
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus id")
    index = {bid: k for k, bid in enumerate(ids)}

    flagged = [int(b["id"]) for b in buses if b.get("ref")]
    ref_field = doc.get("ref_bus")
    if isinstance(ref_field, (list, tuple)):
        flagged += [int(r) for r in ref_field]
    elif ref_field is not None:
        flagged.append(int(ref_field))
    refs = sorted(set(flagged))
    if len(refs) == 0:
        raise CaseError("no reference bus given")
    if len(refs) > 1:
        raise CaseError(f"duplicate reference bus: {refs}")
    if refs[0] not in index:
        raise CaseError(f"reference bus {refs[0]} is not a bus id")

    default_tau = DEFAULT_TAU if tau is None else tau
    parsed = []
    for k, br in enumerate(branches):
        where = f"branch {k + 1}"
        f, t = int(_require(br, "from", where)), int(_require(br, "to", where))
        if f not in index or t not in index:
            raise CaseError(f"{where}: endpoint is not a bus id")
        try:
            parsed.append(Branch(
                index[f], index[t],
                float(br.get("r", 0.0)), float(_require(br, "x", where)),
                bool(br.get("dfacts", True)),
                float(default_tau if tau is not None else br.get("tau", default_tau)),
            ))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, CaseError):
                raise CaseError(f"{where}: {exc}") from None
            raise CaseError(f"{where}: {exc}") from exc

    gens = []
    for k, g in enumerate(doc.get("generators", [])):
        bus = int(_require(g, "bus", f"generator {k + 1}"))
        if bus not in index:
            raise CaseError(f"generator {k + 1}: bus {bus} is not a bus id")
        gens.append(Generator(index[bus], float(g.get("pg", 0.0)), float(g.get("vg", 1.0))))

    return GridCase(
        name=str(doc.get("name", "case")),
        ref_bus=index[refs[0]],
        branches=tuple(parsed),
        pd=[float(b.get("pd", 0.0)) for b in buses],
        qd=[float(b.get("qd", 0.0)) for b in buses],
        generators=tuple(gens),
        base_mva=float(doc.get("base_mva", 100.0)),
        bus_ids=tuple(ids),
    )


def load_case(source, tau: float | None = None) -> GridCase:
    """Load a case from a builtin name, a JSON path, a JSON string or a dict."""
    if isinstance(source, Mapping):
        return parse_case(source, tau)
    if isinstance(source, GridCase):
        return source if tau is None else source.with_dfacts(
            np.flatnonzero(source.dfacts), tau)
    text = None
    if isinstance(source, str) and source in BUILTIN_CASES:
        text = resources.files("mtdlab.cases").joinpath(f"{source}.json").read_text()
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        text = source
    elif isinstance(source, (str, Path)) and Path(source).is_file():
        text = Path(source).read_text()
    else:
        raise CaseError(f"unknown case source: {source!r}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"case document is not valid JSON: {exc}") from exc
    return parse_case(doc, tau)


def case_document(case: GridCase) -> dict:
    """Inverse of :func:`parse_case`."""
    ids = case.bus_ids
    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "ref_bus": ids[case.ref_bus],
        "buses": [{"id": ids[i], "pd": float(case.pd[i]), "qd": float(case.qd[i])}
                  for i in range(case.n_bus)],
        "generators": [{"bus": ids[g.bus], "pg": g.pg, "vg": g.vg} for g in case.generators],
        "branches": [{"from": ids[b.from_bus], "to": ids[b.to_bus], "r": b.r, "x": b.x,
                      "dfacts": b.has_dfacts, "tau": b.tau} for b in case.branches],
    }


def one_based(indices: Iterable[int]) -> list[int]:
    return [int(i) + 1 for i in indices]
