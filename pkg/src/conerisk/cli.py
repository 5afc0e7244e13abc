"""Command line interface: ``conerisk <command> --model bundle.json ...``.

Exit codes: 0 when every check passes, 1 on check failures, 2 on input errors.
Reports are deterministic JSON (sorted keys) written to stdout or ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .io import (Bundle, BundleError, bundle_from_dict, claim_from_dict, claim_to_dict, dumps,
                 flatten, load_json, model_from_dict)
from .market import MarketError, RegionMarket, robust_na_check, validate_market
from .pricing import sample_price_systems
from .riskcore import (AVAR, KINDS, SHP_CONVEX, SHP_PROP, RiskError, RiskSpec, avar_composed,
                       cash_claim, pi_S, rho_dual_exact, rho_from_samples, rho_primal)
from .timecheck import (DETECT, TcReport, acceptance_decomposition_check, pi_recursion_check,
                        rho_recursion_check, rho_tc_falsify, supermartingale_check)
from .tree import ScenarioTree, TreeError, validate_tree
from .values import FINITE

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    pass


# ------------------------------------------------------------------ helpers
def worker_count(flag: int | None) -> int:
    env = os.environ.get("CONERISK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"CONERISK_THREADS must be an integer, got {env!r}") from None
    if flag:
        return max(1, flag)
    return os.cpu_count() or 1


def pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    """Ordered map; results are combined in input order so reductions stay deterministic."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


class CorruptedPi:
    """Deliberately wrong pi used to self-test the audit harness.

    ``pi_offset`` adds a constant on every nonzero claim (breaks the recursion);
    ``value_bump`` adds a constant at the horizon (breaks the supermartingale test).
    """

    def __init__(self, pi_offset: float = 0.0, value_bump: float = 0.0):
        self.pi_offset = pi_offset
        self.value_bump = value_bump

    def __call__(self, X, price, t, spec, model):
        v = pi_S(X, price, t, spec, model)
        shift = 0.0
        if self.pi_offset and np.any(np.asarray(X) != 0):
            shift += self.pi_offset
        if self.value_bump and t == model.tree.horizon:
            shift += self.value_bump
        if shift == 0.0:
            return v
        return type(v)(v.nodes, np.where(np.array(v.flags) == FINITE, v.raw + shift, v.raw), v.flags)


def _load(args) -> tuple[Bundle, dict]:
    data = load_json(args.model)
    if not isinstance(data, dict):
        raise InputError(f"{args.model} must hold a JSON object")
    return bundle_from_dict(data), data


def _spec(args, bundle: Bundle) -> RiskSpec:
    model = bundle.model
    kind = args.spec or (SHP_CONVEX if isinstance(model, RegionMarket) else SHP_PROP)
    levels = None
    if kind == AVAR:
        levels = _levels(args, bundle)
    spec = RiskSpec(kind, levels)
    spec.check_model(model)
    return spec


def _levels(args, bundle: Bundle) -> np.ndarray:
    tree = bundle.model.tree
    shape = (tree.horizon, tree.assets)
    if args.levels is None:
        if bundle.levels is None:
            raise InputError("avar-composed needs --levels or a 'levels' entry in the bundle")
        return np.broadcast_to(bundle.levels, shape).copy()
    try:
        return np.full(shape, float(args.levels))
    except ValueError:
        pass
    raw = load_json(args.levels)
    if isinstance(raw, dict):
        raw = raw.get("levels")
    return np.broadcast_to(np.asarray(raw, dtype=float), shape).copy()


def _claim(args, bundle: Bundle) -> tuple[str, np.ndarray]:
    tree = bundle.model.tree
    if args.claim is None:
        if len(bundle.claims) == 1:
            return next(iter(bundle.claims.items()))
        if not bundle.claims:
            return "zero", np.zeros((tree.n_leaves, tree.assets))
        raise InputError(f"bundle has several claims; pick one of {sorted(bundle.claims)}")
    if args.claim in bundle.claims:
        return args.claim, bundle.claims[args.claim]
    if not Path(args.claim).exists():
        raise InputError(f"claim {args.claim!r} is neither a bundle claim nor a file")
    raw = load_json(args.claim)
    if isinstance(raw, dict):
        raw = raw.get("X", raw.get("claim", raw))
    return Path(args.claim).stem, claim_from_dict(raw, tree)


def _times(args, tree: ScenarioTree) -> tuple[int, int | None]:
    t = args.t if args.t is not None else 0
    s = getattr(args, "s", None)
    if not 0 <= t <= tree.horizon:
        raise InputError(f"--t must lie in [0, {tree.horizon}]")
    if s is not None and not t < s <= tree.horizon:
        raise InputError(f"--s must satisfy t < s <= {tree.horizon}")
    return t, s


def _value_json(v, ids) -> dict:
    return v.to_json(ids)


# ----------------------------------------------------------------- commands
def cmd_validate(args) -> tuple[int, dict]:
    data = load_json(args.model)
    if not isinstance(data, dict) or "tree" not in data:
        raise InputError("bundle needs a 'tree' object")
    try:
        tree = ScenarioTree.from_dict(data["tree"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed tree: {exc}") from None
    report: dict[str, Any] = {"tree": validate_tree(tree).to_json()}
    if not report["tree"]["ok"]:
        report["passed"] = False
        return EXIT_FAIL, report
    try:
        model = model_from_dict(data)
    except (MarketError, TreeError) as exc:
        report.update(market={"ok": False, "violation": str(exc), "node": None}, passed=False)
        return EXIT_FAIL, report
    report["market"] = validate_market(model).to_json()
    if not report["market"]["ok"]:
        report["passed"] = False
        return EXIT_FAIL, report
    na = robust_na_check(model)
    report["robust_na"] = {"holds": na.holds, "margin": na.margin,
                           "violation": None if na.holds else "robust no-arbitrage fails"}
    report["passed"] = na.holds
    return (EXIT_OK if na.holds else EXIT_FAIL), report


def _sample(model, args):
    return sample_price_systems(model, args.samples, args.seed)


def cmd_price(args) -> tuple[int, dict]:
    bundle, _ = _load(args)
    model, tree = bundle.model, bundle.model.tree
    spec = _spec(args, bundle)
    name, X = _claim(args, bundle)
    t, _ = _times(args, tree)
    ids = tree.ids
    out: dict[str, Any] = {"claim": name, "spec": spec.kind, "t": t}
    tol = args.tol if args.tol is not None else DETECT
    passed = True
    if spec.kind == AVAR:
        samples = sample_price_systems(model, args.samples or 16, args.seed)
        out["avar_composed"] = _value_json(avar_composed(X, spec.levels, t, model, samples), ids)
        out["samples"] = len(samples)
    else:
        primal = rho_primal(X, t, spec, model)
        out["rho_primal"] = _value_json(primal, ids)
        if spec.kind == SHP_PROP:
            dual = rho_dual_exact(X, t, spec, model)
            out["rho_dual_exact"] = _value_json(dual, ids)
            if primal.all_finite and dual.all_finite:
                res = float(np.abs(primal.values - dual.values).max())
                out["residual"] = res
                passed = res <= tol * max(1.0, float(np.abs(primal.values).max()))
            else:
                passed = primal.flags == dual.flags
        if args.samples:
            samples = _sample(model, args)
            rep = rho_from_samples(X, t, spec, model, samples, exact=primal)
            out["sampled"] = rep.to_json(ids)
            out["samples"] = len(samples)
    out["passed"] = passed
    return (EXIT_OK if passed else EXIT_FAIL), out


def _pi_one(job):
    X, price, t, spec, model = job
    return pi_S(X, price, t, spec, model)


def cmd_pi(args) -> tuple[int, dict]:
    bundle, _ = _load(args)
    model, tree = bundle.model, bundle.model.tree
    spec = _spec(args, bundle)
    name, X = _claim(args, bundle)
    t, _ = _times(args, tree)
    samples = _sample(model, args)
    if not samples:
        raise InputError("no price system could be sampled (does the market admit one?)")
    values = pool_map(_pi_one, [(X, s.price, t, spec, model) for s in samples],
                      worker_count(args.workers))
    rows = [{"index": i, "price": s.price.to_json(), "pi": v.to_json(tree.ids)}
            for i, (s, v) in enumerate(zip(samples, values))]
    return EXIT_OK, {"claim": name, "spec": spec.kind, "t": t, "systems": rows}


def cmd_sample_prices(args) -> tuple[int, dict]:
    bundle, _ = _load(args)
    samples = _sample(bundle.model, args)
    return EXIT_OK, {"requested": args.samples, "seed": args.seed, "count": len(samples),
                     "systems": [s.to_json() for s in samples]}


def cmd_falsify(args) -> tuple[int, dict]:
    bundle, _ = _load(args)
    spec = _spec(args, bundle)
    rep = rho_tc_falsify(spec, bundle.model, args.trials, args.seed)
    out = rep.to_json()
    _attach_witness(out, rep, args, bundle.model.tree, "falsify")
    # a witness is the expected outcome under frictions, not a failure of the tool
    return EXIT_OK, out


def _attach_witness(out: dict, rep: TcReport, args, tree: ScenarioTree, tag: str) -> None:
    if rep.witness is None:
        return
    w = dict(rep.witness)
    for key in ("X", "Y", "claim"):
        if key in w and isinstance(w[key], np.ndarray) and w[key].shape == (tree.n_leaves, tree.assets):
            w[key] = claim_to_dict(w[key], tree)
    out["witness"] = w
    if args.out:
        path = Path(args.out) / f"witness-{tag}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(w), encoding="utf-8")
        out["witness_file"] = str(path)


def _audit_claims(bundle: Bundle, n: int, seed: int) -> list[np.ndarray]:
    tree = bundle.model.tree
    claims = [bundle.claims[k] for k in sorted(bundle.claims)]
    for k in range(n):
        rng = np.random.default_rng([seed, 1_000_000 + k])
        claims.append(rng.standard_normal((tree.n_leaves, tree.assets)))
    claims.append(cash_claim(tree, np.ones(tree.n_leaves)))
    return claims


def _worst(reports: list[TcReport], name: str) -> TcReport:
    failing = [r for r in reports if not r.passed]
    if failing:
        return max(failing, key=lambda r: r.worst)
    return TcReport(name, True, max((r.worst for r in reports), default=0.0))


def cmd_audit(args) -> tuple[int, dict]:
    bundle, data = _load(args)
    model, tree = bundle.model, bundle.model.tree
    spec = _spec(args, bundle)
    corrupt = data.get("corrupt") or {}
    pi = CorruptedPi(**corrupt) if corrupt else pi_S
    T = tree.horizon
    if args.t is not None or args.s is not None:
        t, s = _times(args, tree)
        pairs = [(t, s if s is not None else T)]
    else:
        pairs = [(t, s) for s in range(1, T + 1) for t in range(s)]
    samples = _sample(model, args)
    if not samples:
        raise InputError("no price system could be sampled (does the market admit one?)")
    claims = _audit_claims(bundle, args.claims, args.seed)
    tol = args.tol if args.tol is not None else DETECT
    rows: dict[str, TcReport] = {}
    rows["pi_recursion"] = _worst(
        [pi_recursion_check(X, sp.price, t, s, spec, model, pi=pi, tol=tol)
         for sp in samples for X in claims for t, s in pairs], "pi_recursion")
    rows["rho_recursion"] = _worst(
        [rho_recursion_check(X, t, s, spec, model, samples, pi=pi, tol=tol)
         for X in claims for t, s in pairs], "rho_recursion")
    rows["supermartingale"] = _worst(
        [supermartingale_check(X, sp.pair, spec, model, pi=pi)
         for sp in samples for X in claims], "supermartingale")
    if spec.kind != AVAR:
        rows["acceptance_decomposition"] = _worst(
            [acceptance_decomposition_check(t, s, sp.price, spec, model, n_random=3,
                                            seed=args.seed, pi=pi)
             for sp in samples[:4] for t, s in pairs], "acceptance_decomposition")
        fals = rho_tc_falsify(spec, model, args.trials, args.seed)
    else:
        fals = None
    out: dict[str, Any] = {"spec": spec.kind, "samples": len(samples), "claims": len(claims),
                           "checks": {}}
    for name, rep in rows.items():
        entry = rep.to_json()
        _attach_witness(entry, rep, args, tree, name)
        out["checks"][name] = entry
    if fals is not None:
        entry = fals.to_json()
        entry["informational"] = True
        _attach_witness(entry, fals, args, tree, "rho_tc_falsify")
        out["falsifier"] = entry
    passed = all(r.passed for r in rows.values())
    out["passed"] = passed
    return (EXIT_OK if passed else EXIT_FAIL), out


def _status_lines(command: str, code: int, report: dict) -> list[str]:
    if command == "audit":
        lines = []
        for name, entry in sorted(report["checks"].items()):
            tag = "PASS" if entry["passed"] else "FAIL"
            extra = f" witness={entry['witness_file']}" if "witness_file" in entry else ""
            lines.append(f"{tag} {name} worst={entry['worst']}{extra}")
        if "falsifier" in report:
            f = report["falsifier"]
            res = f["detail"].get("result")
            extra = f" witness={f['witness_file']}" if "witness_file" in f else ""
            lines.append(f"INFO rho_tc_falsify {res}{extra}")
        return lines
    return [f"{'PASS' if code == EXIT_OK else 'FAIL'} {command}"]


# --------------------------------------------------------------------- main
COMMANDS = {"validate": cmd_validate, "price": cmd_price, "pi": cmd_pi, "audit": cmd_audit,
            "sample-prices": cmd_sample_prices, "falsify": cmd_falsify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conerisk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--model", required=True, help="JSON model bundle")
        p.add_argument("--out", help="directory for report.json and witness files")
        p.add_argument("--csv", action="store_true", help="flatten the report to CSV rows")
        p.add_argument("--seed", type=int, default=0)
        if name == "validate":
            continue
        p.add_argument("--spec", choices=KINDS)
        p.add_argument("--levels", help="AV@R levels: a number or a JSON file")
        p.add_argument("--samples", type=int, default=16 if name != "price" else 0,
                       help="number of sampled price systems")
        p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
        p.add_argument("--tol", type=float, help="override the detection tolerance")
        if name in ("price", "pi", "audit"):
            p.add_argument("--claim", help="claim name in the bundle or a claim JSON file")
            p.add_argument("--t", type=int)
        if name == "audit":
            p.add_argument("--s", type=int)
            p.add_argument("--claims", type=int, default=10, help="random claims per check")
        if name in ("audit", "falsify"):
            p.add_argument("--trials", type=int, default=10_000)
    return parser


def _emit(report: dict, args) -> str:
    if args.csv:
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["key", "value"])
        writer.writerows(flatten(report))
        return buf.getvalue()
    return dumps(report)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "samples", 0) is not None and getattr(args, "samples", 0) < 0:
        print("error: --samples must be >= 0", file=sys.stderr)
        return EXIT_INPUT
    try:
        code, report = COMMANDS[args.command](args)
    except (InputError, BundleError, RiskError, MarketError, TreeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = _emit(report, args)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / ("report.csv" if args.csv else "report.json")).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    for line in _status_lines(args.command, code, report):
        print(line, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
