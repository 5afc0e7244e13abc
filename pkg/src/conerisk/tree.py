"""Finite event trees: the filtration, the reference measure and Q-conditional expectations.

A tree is built from a flat node list (``id``, ``time``, ``parent``) plus terminal
probabilities.  Construction never raises on structural problems; call
:func:`validate_tree` for a report or :meth:`ScenarioTree.require_valid` to raise.
All index structures are computed lazily on a valid tree and the tree is
immutable afterwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

PROB_TOL = 1e-12


class TreeError(ValueError):
    """Raised when a tree (or something indexed by it) is structurally invalid."""


@dataclass(frozen=True)
class Node:
    id: str
    time: int
    parent: str | None
    children: tuple[str, ...] = ()


@dataclass(frozen=True)
class TreeReport:
    ok: bool
    violation: str | None = None
    node: str | None = None

    def to_json(self) -> dict:
        return {"ok": self.ok, "violation": self.violation, "node": self.node}


class ScenarioTree:
    """Event tree with strictly positive terminal probabilities.

    Nodes are ordered by time and, within a time, by input order.  Terminal
    nodes ("leaves") are the time-``horizon`` nodes in that order; every
    terminal array in the package (claims, measures) is aligned with
    :attr:`leaves`.
    """

    def __init__(self, nodes: Sequence[Node], horizon: int, assets: int,
                 p: Mapping[str, float]):
        self.nodes = tuple(nodes)
        self.horizon = int(horizon)
        self.assets = int(assets)
        self.p = {str(k): float(v) for k, v in p.items()}

    # ------------------------------------------------------------------ io
    @classmethod
    def from_dict(cls, data: Mapping, prune: bool = True) -> "ScenarioTree":
        """Build from the JSON schema ``{"horizon", "assets", "nodes": [...]}``.

        With ``prune`` set, terminal nodes carrying probability 0 are dropped
        together with every ancestor left without children.
        """
        raw = []
        for entry in data["nodes"]:
            parent = entry.get("parent")
            raw.append({
                "id": str(entry["id"]),
                "time": int(entry["time"]),
                "parent": None if parent is None else str(parent),
                "p": entry.get("p"),
            })
        if prune:
            raw = _prune_null_leaves(raw)
        children: dict[str, list[str]] = {r["id"]: [] for r in raw}
        for r in raw:
            if r["parent"] is not None and r["parent"] in children:
                children[r["parent"]].append(r["id"])
        nodes = [Node(r["id"], r["time"], r["parent"], tuple(children[r["id"]])) for r in raw]
        p = {r["id"]: float(r["p"]) for r in raw if r["p"] is not None}
        return cls(nodes, data["horizon"], data["assets"], p)

    def to_dict(self) -> dict:
        out = []
        for n in self.nodes:
            entry = {"id": n.id, "time": n.time, "parent": n.parent}
            if n.id in self.p:
                entry["p"] = self.p[n.id]
            out.append(entry)
        return {"horizon": self.horizon, "assets": self.assets, "nodes": out}

    @classmethod
    def regular(cls, branching: Sequence[int] | int, horizon: int, assets: int,
                probs: Sequence[Sequence[float]] | None = None) -> "ScenarioTree":
        """Recombination-free tree where every time-t node has ``branching[t]`` children.

        Node ids are the root ``"0"`` followed by child-index strings, e.g. ``"0.1.0"``.
        ``probs[t]`` (optional) gives the one-step transition probabilities at time t;
        default is uniform.
        """
        if isinstance(branching, int):
            branching = [branching] * horizon
        nodes: list[dict] = [{"id": "0", "time": 0, "parent": None, "w": 1.0}]
        frontier = [nodes[0]]
        for t in range(horizon):
            b = branching[t]
            step = probs[t] if probs is not None else [1.0 / b] * b
            nxt = []
            for parent in frontier:
                for k in range(b):
                    child = {"id": f"{parent['id']}.{k}", "time": t + 1,
                             "parent": parent["id"], "w": parent["w"] * step[k]}
                    nodes.append(child)
                    nxt.append(child)
            frontier = nxt
        data = {"horizon": horizon, "assets": assets,
                "nodes": [{"id": n["id"], "time": n["time"], "parent": n["parent"],
                           **({"p": n["w"]} if n["time"] == horizon else {})}
                          for n in nodes]}
        return cls.from_dict(data)

    # ----------------------------------------------------------- validity
    def require_valid(self) -> "ScenarioTree":
        report = validate_tree(self)
        if not report.ok:
            raise TreeError(report.violation)
        return self

    # ------------------------------------------------------------ indexes
    @cached_property
    def _ix(self) -> "_Index":
        self.require_valid()
        return _Index(self)

    @property
    def d(self) -> int:
        return self.assets

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ix.ids

    @property
    def n_nodes(self) -> int:
        return len(self._ix.ids)

    @property
    def index(self) -> dict[str, int]:
        return self._ix.index

    @property
    def time(self) -> np.ndarray:
        return self._ix.time

    @property
    def parent(self) -> np.ndarray:
        return self._ix.parent

    @property
    def children(self) -> tuple[np.ndarray, ...]:
        return self._ix.children

    @property
    def leaves(self) -> np.ndarray:
        """Node indices of the terminal nodes."""
        return self._ix.leaves

    @property
    def n_leaves(self) -> int:
        return len(self._ix.leaves)

    @property
    def p_leaf(self) -> np.ndarray:
        return self._ix.p_leaf

    @property
    def mass(self) -> np.ndarray:
        """P-mass of every node (sum of terminal probabilities below it)."""
        return self._ix.mass

    def at_time(self, t: int) -> np.ndarray:
        self._check_time(t)
        return self._ix.at_time[t]

    def ancestor(self, t: int) -> np.ndarray:
        """For each node, the index of its time-t ancestor (-1 if the node is earlier)."""
        self._check_time(t)
        return self._ix.anc[t]

    def leaf_ancestor(self, t: int) -> np.ndarray:
        """For each leaf, the index of its time-t ancestor."""
        return self.ancestor(t)[self.leaves]

    def subtree_nodes(self, n: int) -> np.ndarray:
        return self._ix.sub_nodes[n]

    def subtree_leaves(self, n: int) -> np.ndarray:
        """Leaf positions (not node indices) below node ``n``."""
        return self._ix.sub_leaves[n]

    def transition(self) -> np.ndarray:
        """One-step transition probability P(node | parent); 1 at the root."""
        return self._ix.trans

    def path_matrix(self, n: int) -> np.ndarray:
        """Boolean matrix [leaf in subtree(n), node in subtree(n)]: node is on the leaf's path."""
        return self._ix.path_matrix(n)

    def lift(self, values: np.ndarray, t: int) -> np.ndarray:
        """Spread a time-t quantity (aligned with ``at_time(t)``) onto the leaves."""
        values = np.asarray(values)
        pos = self._ix.pos_in_time
        return values[pos[self.leaf_ancestor(t)]]

    def restrict(self, node_values: np.ndarray, t: int) -> np.ndarray:
        """Select the time-t entries of a node-indexed array."""
        return np.asarray(node_values)[self.at_time(t)]

    def aggregate(self, leaf_values: Sequence[float]) -> np.ndarray:
        """Exact (fsum) sum of a terminal quantity over each node's subtree."""
        leaf_values = np.asarray(leaf_values, dtype=float)
        return np.array([math.fsum(leaf_values[ls]) for ls in self._ix.sub_leaves])

    def _check_time(self, t: int) -> None:
        if not 0 <= t <= self.horizon:
            raise TreeError(f"time {t} outside 0..{self.horizon}")

    def __repr__(self) -> str:
        return f"ScenarioTree(T={self.horizon}, d={self.assets}, nodes={len(self.nodes)})"


class _Index:
    def __init__(self, tree: ScenarioTree):
        order = sorted(range(len(tree.nodes)), key=lambda k: (tree.nodes[k].time, k))
        nodes = [tree.nodes[k] for k in order]
        self.ids = tuple(n.id for n in nodes)
        self.index = {nid: k for k, nid in enumerate(self.ids)}
        n_nodes = len(nodes)
        T = tree.horizon
        self.time = np.array([n.time for n in nodes], dtype=int)
        self.parent = np.array([-1 if n.parent is None else self.index[n.parent] for n in nodes])
        kids: list[list[int]] = [[] for _ in range(n_nodes)]
        for k in range(n_nodes):
            if self.parent[k] >= 0:
                kids[self.parent[k]].append(k)
        self.children = tuple(np.array(c, dtype=int) for c in kids)
        self.at_time = [np.flatnonzero(self.time == t) for t in range(T + 1)]
        self.pos_in_time = np.zeros(n_nodes, dtype=int)
        for t in range(T + 1):
            self.pos_in_time[self.at_time[t]] = np.arange(len(self.at_time[t]))
        self.leaves = self.at_time[T]
        self.p_leaf = np.array([tree.p[self.ids[k]] for k in self.leaves])
        leaf_pos = {int(k): j for j, k in enumerate(self.leaves)}

        self.anc = []
        for t in range(T + 1):
            a = np.full(n_nodes, -1)
            for k in range(n_nodes):
                if self.time[k] >= t:
                    j = k
                    while self.time[j] > t:
                        j = self.parent[j]
                    a[k] = j
            self.anc.append(a)

        sub_leaves: list[list[int]] = [[] for _ in range(n_nodes)]
        sub_nodes: list[list[int]] = [[] for _ in range(n_nodes)]
        for k in range(n_nodes):
            for t in range(self.time[k] + 1):
                sub_nodes[self.anc[t][k]].append(k)
        for k in self.leaves:
            for t in range(T + 1):
                sub_leaves[self.anc[t][k]].append(leaf_pos[int(k)])
        self.sub_nodes = tuple(np.array(s, dtype=int) for s in sub_nodes)
        self.sub_leaves = tuple(np.array(s, dtype=int) for s in sub_leaves)
        self.mass = np.array([math.fsum(self.p_leaf[s]) for s in self.sub_leaves])
        self.trans = np.ones(n_nodes)
        has_parent = self.parent >= 0
        self.trans[has_parent] = self.mass[has_parent] / self.mass[self.parent[has_parent]]
        self._paths: dict[int, np.ndarray] = {}

    def path_matrix(self, n: int) -> np.ndarray:
        if n not in self._paths:
            leaves = self.leaves[self.sub_leaves[n]]
            nodes = self.sub_nodes[n]
            mat = np.zeros((len(leaves), len(nodes)), dtype=bool)
            for a, k in enumerate(nodes):
                mat[:, a] = self.anc[self.time[k]][leaves] == k
            self._paths[n] = mat
        return self._paths[n]


def _prune_null_leaves(raw: list[dict]) -> list[dict]:
    alive = list(raw)
    while True:
        null = {r["id"] for r in alive if r["p"] is not None and float(r["p"]) == 0.0}
        parents = {r["parent"] for r in alive if r["parent"] is not None}
        # interior nodes orphaned by a previous pruning round
        horizon = max((r["time"] for r in alive), default=0)
        orphan = {r["id"] for r in alive
                  if r["p"] is None and r["id"] not in parents and r["time"] < horizon}
        drop = null | orphan
        if not drop:
            return alive
        alive = [r for r in alive if r["id"] not in drop]


def validate_tree(tree: ScenarioTree) -> TreeReport:
    """Return the first violated structural invariant, or an ok report."""
    nodes = tree.nodes
    T = tree.horizon
    if T < 1:
        return TreeReport(False, f"horizon must be >= 1, got {T}")
    if tree.assets < 2:
        return TreeReport(False, f"need at least 2 assets (cash + one more), got {tree.assets}")
    ids = [n.id for n in nodes]
    seen: set[str] = set()
    for nid in ids:
        if nid in seen:
            return TreeReport(False, f"duplicate node id {nid!r}", nid)
        seen.add(nid)
    by_id = {n.id: n for n in nodes}
    roots = [n for n in nodes if n.parent is None]
    if len(roots) != 1:
        return TreeReport(False, f"expected exactly one root, found {len(roots)}")
    if roots[0].time != 0:
        return TreeReport(False, "root must be at time 0", roots[0].id)
    kids: dict[str, list[str]] = {nid: [] for nid in ids}
    for n in nodes:
        if not 0 <= n.time <= T:
            return TreeReport(False, f"node time {n.time} outside 0..{T}", n.id)
        if n.parent is None:
            continue
        if n.parent not in by_id:
            return TreeReport(False, f"unknown parent {n.parent!r}", n.id)
        if by_id[n.parent].time != n.time - 1:
            return TreeReport(False, "parent is not exactly one period earlier", n.id)
        kids[n.parent].append(n.id)
    for n in nodes:
        if n.children and set(n.children) != set(kids[n.id]):
            return TreeReport(False, "parent/child links are inconsistent", n.id)
    # reachability from the root; time strictly increases along edges so no cycles
    reached = {roots[0].id}
    stack = [roots[0].id]
    while stack:
        for c in kids[stack.pop()]:
            if c not in reached:
                reached.add(c)
                stack.append(c)
    if len(reached) != len(nodes):
        missing = next(nid for nid in ids if nid not in reached)
        return TreeReport(False, "node not reachable from the root", missing)
    for n in nodes:
        if not kids[n.id] and n.time != T:
            return TreeReport(False, "terminal node before horizon", n.id)
    leaves = [n.id for n in nodes if n.time == T]
    for nid in leaves:
        if nid not in tree.p:
            return TreeReport(False, "terminal node without probability", nid)
        if not tree.p[nid] > 0.0:
            return TreeReport(False, f"terminal probability {tree.p[nid]} is not strictly positive", nid)
    total = math.fsum(tree.p[nid] for nid in leaves)
    if abs(total - 1.0) > PROB_TOL:
        return TreeReport(False, f"probabilities sum to {total:.12g}")
    return TreeReport(True)


# ------------------------------------------------------------------ measures
@dataclass(frozen=True)
class MeasureQ:
    """Probability weights on the leaves, absolutely continuous w.r.t. the tree's P."""

    tree: ScenarioTree
    q: np.ndarray
    kind: str = "absolutely-continuous"

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (self.tree.n_leaves,):
            raise ValueError(f"measure needs {self.tree.n_leaves} leaf weights, got shape {q.shape}")
        if (q < 0).any():
            raise ValueError("measure weights must be nonnegative")
        if abs(math.fsum(q) - 1.0) > PROB_TOL:
            raise ValueError(f"measure weights sum to {math.fsum(q):.15g}")
        if self.kind not in ("absolutely-continuous", "equivalent"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.kind == "equivalent" and not (q > 0).all():
            raise ValueError("equivalent measure needs strictly positive weights")
        object.__setattr__(self, "q", q)

    @classmethod
    def from_weights(cls, tree: ScenarioTree, q: Iterable[float],
                     renormalize: bool = False) -> "MeasureQ":
        q = np.clip(np.asarray(list(q), dtype=float), 0.0, None)
        if renormalize:
            q = q / math.fsum(q)
        kind = "equivalent" if (q > 0).all() else "absolutely-continuous"
        return cls(tree, q, kind)

    @classmethod
    def reference(cls, tree: ScenarioTree) -> "MeasureQ":
        return cls(tree, tree.p_leaf.copy(), "equivalent")

    @cached_property
    def mass(self) -> np.ndarray:
        """Q-mass of every node."""
        return self.tree.aggregate(self.q)

    @cached_property
    def density(self) -> np.ndarray:
        """E[dQ/dP | node] for every node."""
        return self.mass / self.tree.mass

    def rebase(self, t: int) -> "MeasureQ":
        """The measure with density xi_bar_{t,T}: same conditionals, P-marginal on F_t."""
        xi = xi_bar(self, self.tree, t, self.tree.horizon)
        w = self.tree.p_leaf * xi
        return MeasureQ.from_weights(self.tree, w, renormalize=True)

    def to_json(self) -> dict:
        ids = self.tree.ids
        return {ids[k]: float(v) for k, v in zip(self.tree.leaves, self.q)}


def xi_bar(q: MeasureQ, tree: ScenarioTree, s: int, sigma: int) -> np.ndarray:
    """Ratio of conditional densities E[dQ/dP|F_sigma] / E[dQ/dP|F_s] at each time-sigma node.

    Falls back to 1 where the time-s density vanishes.
    """
    if s > sigma:
        raise TreeError(f"xi_bar needs s <= sigma, got s={s}, sigma={sigma}")
    nodes = tree.at_time(sigma)
    num = q.density[nodes]
    den = q.density[tree.ancestor(s)[nodes]]
    out = np.ones(len(nodes))
    pos = den > 0
    out[pos] = num[pos] / den[pos]
    return out


def cond_expect(q: MeasureQ, x: Sequence[float], t: int) -> np.ndarray:
    """E_Q[x | F_t] (P-a.s. version) as one value per time-t node.

    Where the node carries no Q-mass the conditional expectation is taken under P,
    matching the fallback value 1 of :func:`xi_bar`.
    """
    tree = q.tree
    x = np.asarray(x, dtype=float)
    if x.shape != (tree.n_leaves,):
        raise ValueError(f"terminal variable needs {tree.n_leaves} values, got shape {x.shape}")
    out = []
    for n in tree.at_time(t):
        ls = tree.subtree_leaves(n)
        qm = q.mass[n]
        if qm > 0:
            out.append(math.fsum(q.q[ls] * x[ls]) / qm)
        else:
            out.append(math.fsum(tree.p_leaf[ls] * x[ls]) / tree.mass[n])
    return np.array(out)
