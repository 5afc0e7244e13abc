"""JSON model bundles and report serialization.

A bundle is one JSON object::

    {"tree": {...}, "market": {"<node id>": <market entry>, ...},
     "claims": {"<name>": {"<leaf id>": [x_1, ..., x_d], ...}},
     "levels": [[...], ...]}

A market entry is ``{"bid": [...], "ask": [...]}`` (optional ``"cross"``),
``{"generators": [[...], ...]}`` or ``{"G": [[...]], "h": [...], "recession": [[...]]}``.
A bundle mixes no cone entries with region entries.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .market import BidAsk, ConeMarket, MarketError, RegionMarket, _Model
from .tree import ScenarioTree, TreeError


class BundleError(ValueError):
    """Malformed model bundle or claim file."""


@dataclass
class Bundle:
    model: _Model
    claims: dict[str, np.ndarray] = field(default_factory=dict)
    levels: np.ndarray | None = None


def _market_entry(entry: Mapping, node: str) -> tuple[str, Any]:
    if "bid" in entry or "ask" in entry:
        cross = entry.get("cross")
        return "cone", BidAsk(entry["bid"], entry["ask"],
                              None if cross is None else np.asarray(cross, dtype=float)).generators()
    if "generators" in entry:
        return "cone", np.asarray(entry["generators"], dtype=float)
    if "G" in entry:
        return "region", (np.asarray(entry["G"], dtype=float), np.asarray(entry["h"], dtype=float),
                          np.asarray(entry["recession"], dtype=float))
    raise BundleError(f"market entry at node {node} has none of bid/ask, generators, G/h")


def model_from_dict(data: Mapping, prune: bool = True) -> _Model:
    try:
        tree = ScenarioTree.from_dict(data["tree"], prune=prune)
    except KeyError as exc:
        raise BundleError(f"bundle is missing {exc}") from None
    market = data.get("market")
    if not isinstance(market, Mapping):
        raise BundleError("bundle needs a 'market' object keyed by node id")
    missing = [i for i in tree.ids if i not in market]
    if missing:
        raise BundleError(f"no market data for node(s) {', '.join(missing)}")
    entries = [_market_entry(market[i], i) for i in tree.ids]
    kinds = {k for k, _ in entries}
    if len(kinds) > 1:
        raise BundleError("bundle mixes cone and region market entries")
    if kinds == {"cone"}:
        return ConeMarket(tree, [g for _, g in entries])
    G, h, rec = zip(*(v for _, v in entries))
    return RegionMarket(tree, G, h, rec)


def claim_from_dict(data: Mapping, tree: ScenarioTree) -> np.ndarray:
    """Leaf-id keyed claim; leaves that are absent pay 0."""
    X = np.zeros((tree.n_leaves, tree.assets))
    leaf_ids = [tree.ids[j] for j in tree.leaves]
    pos = {nid: a for a, nid in enumerate(leaf_ids)}
    for nid, vec in data.items():
        if nid not in pos:
            raise BundleError(f"claim refers to unknown leaf {nid!r}")
        v = np.asarray(vec, dtype=float)
        if v.shape != (tree.assets,):
            raise BundleError(f"claim at leaf {nid} must have {tree.assets} entries")
        X[pos[nid]] = v
    return X


def claim_to_dict(X: np.ndarray, tree: ScenarioTree) -> dict:
    return {tree.ids[j]: [float(v) for v in X[a]] for a, j in enumerate(tree.leaves)}


def bundle_from_dict(data: Mapping) -> Bundle:
    try:
        model = model_from_dict(data)
        claims = {str(k): claim_from_dict(v, model.tree) for k, v in data.get("claims", {}).items()}
    except (TreeError, MarketError) as exc:
        raise BundleError(str(exc)) from None
    levels = data.get("levels")
    return Bundle(model, claims, None if levels is None else np.asarray(levels, dtype=float))


def load_json(path: str | Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise BundleError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path} is not valid JSON: {exc.msg} at line {exc.lineno}") from None


def load_bundle(path: str | Path) -> Bundle:
    data = load_json(path)
    if not isinstance(data, Mapping):
        raise BundleError(f"{path} must hold a JSON object")
    return bundle_from_dict(data)


def model_to_dict(model: _Model, claims: Mapping[str, np.ndarray] | None = None,
                  levels: np.ndarray | None = None) -> dict:
    tree = model.tree
    market = {}
    for n, nid in enumerate(tree.ids):
        if isinstance(model, RegionMarket):
            market[nid] = {"G": model.G[n].tolist(), "h": model.h[n].tolist(),
                           "recession": model.recession[n].tolist()}
        else:
            market[nid] = {"generators": model.cone_generators(n).tolist()}
    out = {"tree": tree.to_dict(), "market": market}
    if claims:
        out["claims"] = {k: claim_to_dict(v, tree) for k, v in claims.items()}
    if levels is not None:
        out["levels"] = np.asarray(levels).tolist()
    return out


def to_plain(obj: Any) -> Any:
    """Recursively convert numpy values and non-finite floats into JSON-safe data."""
    if hasattr(obj, "to_json") and callable(obj.to_json):
        return to_plain(obj.to_json())
    if isinstance(obj, Mapping):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("+inf" if v > 0 else "-inf" if v < 0 else "nan")
    return obj


def dumps(obj: Any) -> str:
    """Deterministic JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(to_plain(obj), sort_keys=True, indent=2) + "\n"


def flatten(obj: Any, prefix: str = "") -> list[tuple[str, Any]]:
    """Dotted-path rows for CSV output."""
    obj = to_plain(obj)
    if isinstance(obj, Mapping):
        rows = []
        for k in sorted(obj):
            rows += flatten(obj[k], f"{prefix}.{k}" if prefix else k)
        return rows
    if isinstance(obj, list):
        rows = []
        for i, v in enumerate(obj):
            rows += flatten(v, f"{prefix}[{i}]")
        return rows
    return [(prefix, obj)]
