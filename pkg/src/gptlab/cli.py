"""Command-line surface: theory files, reports, and the demo models.

Commands: check (consistency), extend (n-partite cones), chsh (theory CHSH
value), iterate (repeater game), graph (d.o.f. graph analysis), demo
(write a built-in model and run its smoke checks).

Exit codes are the machine contract: 0 success/consistent, 1 inconsistent
input or failed assertion, 2 usage/parse errors. Reports are stable-ordered
for diffing; ``--json`` emits machine-readable reports matching the schema
shipped under ``gptlab/schemas/``. The environment variable GPTLAB_TOL
overrides the default tolerance 1e-9; ``--tol`` overrides both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import models
from .chsh import (
    ChshSetting,
    Strategy,
    iterate_game_exhaustive,
    iterate_game_fast,
    theory_chsh_value,
)
from .compgraph import SwapGraph, closure, max_chain_depth, validate
from .cones import ConeGenerators, default_tol
from .swap import ClosurePolicy
from .tensor import EFFECT, STATE, CoeffTensor, SystemKind, gbit_kind, pauli_qubit_kind
from .theory import CheckOptions, TheorySpec, check_consistency, derive_unipartite, extend_n

__all__ = ["main", "load_theory_file", "theory_to_dict", "load_graph_file"]

_BUILTIN_KINDS = {
    "pauli-qubit": pauli_qubit_kind,
    "gbit": gbit_kind,
}


def _kind_from_dict(data: dict) -> SystemKind:
    name = data.get("kind")
    if name in _BUILTIN_KINDS:
        return _BUILTIN_KINDS[name]()
    if name == "custom":
        custom = data.get("custom_kind")
        if not isinstance(custom, dict):
            raise ValueError("kind 'custom' requires a custom_kind object")
        return SystemKind("custom", int(custom["slot_dim"]),
                          np.array(custom["gram"], dtype=float),
                          np.array(custom["unit_effect"], dtype=float))
    raise ValueError(f"unknown kind {name!r} (expected pauli-qubit, gbit, or custom)")


def _kind_to_dict(kind: SystemKind) -> dict:
    if kind == pauli_qubit_kind():
        return {"kind": "pauli-qubit"}
    if kind == gbit_kind():
        return {"kind": "gbit"}
    return {"kind": "custom", "custom_kind": {
        "slot_dim": kind.slot_dim,
        "gram": kind.gram.tolist(),
        "unit_effect": kind.unit_effect.tolist(),
    }}


def _cone_from_lists(kind, rows, side, name, tags, where):
    dim = kind.slot_dim**2
    arr = []
    for i, row in enumerate(rows):
        if len(row) != dim:
            raise ValueError(f"{where}[{i}] has length {len(row)}, expected {dim}")
        arr.append(row)
    if tags is not None and len(tags) != len(rows):
        raise ValueError(f"{where}_tags has {len(tags)} entries for {len(rows)} generators")
    return ConeGenerators.from_rays(kind, 2, side, name, np.array(arr, dtype=float),
                                    tags=tags)


def load_theory_file(path) -> tuple[TheorySpec, Strategy | None]:
    """Parse a theory JSON file; raises ValueError with located diagnostics."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("theory file must be a JSON object")
    for key in ("kind", "P2", "D2"):
        if key not in data:
            raise ValueError(f"theory file is missing {key!r}")
    kind = _kind_from_dict(data)
    name = data.get("name", Path(path).stem)
    effects2 = _cone_from_lists(kind, data["P2"], EFFECT, f"{name}.effects2",
                                data.get("P2_tags"), "P2")
    states2 = _cone_from_lists(kind, data["D2"], STATE, f"{name}.states2",
                               data.get("D2_tags"), "D2")
    effect_space = None
    if data.get("effect_space") is not None:
        effect_space = []
        for i, row in enumerate(data["effect_space"]):
            if len(row) != kind.slot_dim:
                raise ValueError(
                    f"effect_space[{i}] has length {len(row)}, expected {kind.slot_dim}")
            effect_space.append(CoeffTensor(kind, 1, np.array(row, dtype=float), EFFECT))
    spec = TheorySpec(kind, effects2, states2, effect_space, name=name)

    strategy = None
    if data.get("strategy") is not None:
        raw = data["strategy"]
        for key in ("link_state", "measurement", "corrections", "correlators"):
            if key not in raw:
                raise ValueError(f"strategy block is missing {key!r}")
        corr = raw["correlators"]
        setting = ChshSetting(*(CoeffTensor(kind, 1, np.array(corr[k], dtype=float), EFFECT)
                                for k in ("A0", "A1", "B0", "B1")))
        strategy = Strategy(
            link_state=CoeffTensor(kind, 2, np.array(raw["link_state"], dtype=float), STATE),
            bob_measurement=[CoeffTensor(kind, 2, np.array(row, dtype=float), EFFECT)
                             for row in raw["measurement"]],
            corrections=[np.array(c, dtype=float) for c in raw["corrections"]],
            setting=setting,
            group_law=(np.array(raw["group_law"], dtype=int)
                       if raw.get("group_law") is not None else None),
        )
    return spec, strategy


def theory_to_dict(spec: TheorySpec, strategy: Strategy | None = None) -> dict:
    out = {"name": spec.name}
    out.update(_kind_to_dict(spec.kind))
    out["P2"] = spec.effects2.rays.tolist()
    out["D2"] = spec.states2.rays.tolist()
    if spec.effects2.tags is not None:
        out["P2_tags"] = list(spec.effects2.tags)
    if spec.states2.tags is not None:
        out["D2_tags"] = list(spec.states2.tags)
    if spec.effect_space_points is not None:
        out["effect_space"] = [p.coeffs.tolist() for p in spec.effect_space_points]
    if strategy is not None:
        s = strategy.setting
        out["strategy"] = {
            "link_state": strategy.link_state.coeffs.tolist(),
            "measurement": [e.coeffs.tolist() for e in strategy.bob_measurement],
            "corrections": [c.tolist() for c in strategy.corrections],
            "correlators": {"A0": s.a0.coeffs.tolist(), "A1": s.a1.coeffs.tolist(),
                            "B0": s.b0.coeffs.tolist(), "B1": s.b1.coeffs.tolist()},
        }
        if strategy.group_law is not None:
            out["strategy"]["group_law"] = strategy.group_law.tolist()
    return out


def load_graph_file(path) -> SwapGraph:
    """Graph JSON: {"m": int, "E": [[i, j], ...], "F": ...}, 1-based (v_i, w_j)."""
    with open(path) as fh:
        data = json.load(fh)
    for key in ("m", "E", "F"):
        if key not in data:
            raise ValueError(f"graph file is missing {key!r}")
    m = int(data["m"])
    def edges(rows, where):
        out = []
        for i, pair in enumerate(rows):
            if len(pair) != 2:
                raise ValueError(f"{where}[{i}] is not a pair")
            a, b = int(pair[0]), int(pair[1])
            if not (1 <= a <= m and 1 <= b <= m):
                raise ValueError(f"{where}[{i}] = ({a}, {b}) out of range 1..{m}")
            out.append((a - 1, b - 1))
        return frozenset(out)
    return SwapGraph(m, edges(data["E"], "E"), edges(data["F"], "F"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _emit(data, as_json: bool):
    if as_json:
        print(json.dumps(_jsonable(data), indent=2, sort_keys=True))


def _check_report_dict(report, tol):
    return {
        "name": report.name,
        "verdict": report.verdict,
        "tol": tol,
        "seconds": report.seconds,
        "checks": [
            {"id": c.check_id, "tag": c.tag, "passed": c.passed,
             "seconds": c.seconds, "details": _jsonable(c.details)}
            for c in report.checks
        ],
    }


def _cmd_check(args) -> int:
    spec, _ = load_theory_file(args.file)
    tol = args.tol if args.tol is not None else default_tol()
    policy = None
    if args.exhaustive:
        policy = ClosurePolicy()
    elif args.sample is not None or args.skip_factorizable:
        policy = ClosurePolicy(skip_factorizable=args.skip_factorizable,
                               sample=args.sample, seed=args.seed)
    report = check_consistency(spec, CheckOptions(tol=tol, closure=policy,
                                                  threads=args.threads,
                                                  seed=args.seed))
    if args.json:
        _emit(_check_report_dict(report, tol), True)
    else:
        print(report)
        fail = report.first_failure()
        if fail is not None:
            print(f"first failure: {fail.check_id} {fail.tag}")
            print(f"  details: {_jsonable(fail.details)}")
    return 0 if report.consistent else 1


def _cmd_extend(args) -> int:
    spec, _ = load_theory_file(args.file)
    tol = args.tol if args.tol is not None else default_tol()
    options = CheckOptions(tol=tol, threads=args.threads, seed=args.seed)
    try:
        effects_n, states_n = extend_n(spec, args.n, options=options)
    except ValueError as exc:
        if "inconsistent" in str(exc):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        raise
    out = {
        "name": spec.name, "n": args.n,
        **_kind_to_dict(spec.kind),
        "P": effects_n.rays.tolist(),
        "D": states_n.rays.tolist(),
    }
    if effects_n.tags is not None:
        out["P_tags"] = list(effects_n.tags)
    if states_n.tags is not None:
        out["D_tags"] = list(states_n.tags)
    target = args.out or f"{Path(args.file).stem}_n{args.n}.json"
    Path(target).write_text(json.dumps(out) + "\n")
    print(f"wrote {target}: {len(effects_n)} effect and {len(states_n)} state generators")
    return 0


def _cmd_chsh(args) -> int:
    spec, _ = load_theory_file(args.file)
    if spec.effect_space_points is None:
        print("error: theory file has no effect_space block "
              "(needed to enumerate correlators)", file=sys.stderr)
        return 2
    derive_unipartite(spec)
    best = theory_chsh_value(spec, args.tol)
    if args.json:
        _emit({"name": spec.name, "value": best.value, "signed": best.signed,
               "state_index": best.state_index,
               "correlator_indices": list(best.correlator_indices)}, True)
    else:
        print(f"{spec.name}: CHSH value {best.value:.9f}")
        print(f"  witness: state generator {best.state_index}, "
              f"correlators {best.correlator_indices}, raw value {best.signed:.9f}")
    return 0


def _cmd_iterate(args) -> int:
    spec, strategy = load_theory_file(args.file)
    if strategy is None:
        print("error: theory file has no strategy block", file=sys.stderr)
        return 2
    derive_unipartite(spec)
    results = {}
    try:
        if args.mode in ("exhaustive", "both"):
            results["exhaustive"] = iterate_game_exhaustive(strategy, args.rounds)
        if args.mode in ("fast", "both"):
            results["fast"] = iterate_game_fast(strategy, args.rounds)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    payload = {"name": spec.name, "rounds": args.rounds}
    for mode, res in results.items():
        payload[mode] = {"beta": res.beta, "beta_signed": res.beta_signed,
                         "probability_total": res.probability_total,
                         "class_table": _jsonable(res.class_table),
                         "notes": res.notes}
    if args.mode == "both":
        agree = abs(results["exhaustive"].beta - results["fast"].beta) <= 1e-9
        payload["agreement"] = agree
        if not agree:
            print("error: exhaustive and fast paths disagree", file=sys.stderr)
            _emit(payload, args.json)
            return 1
    if args.json:
        _emit(payload, True)
    else:
        for mode, res in results.items():
            print(f"{spec.name} rounds={args.rounds} [{mode}]: beta = {res.beta:.9f}")
            for note in res.notes:
                print(f"  note: {note}")
        if args.mode == "both":
            print("  exhaustive and fast paths agree to 1e-9")
    return 0


def _cmd_graph(args) -> int:
    g = load_graph_file(args.file)
    rep = validate(g)
    if not rep.valid:
        print(f"invalid graph: missing mirrors {rep.missing_mirrors}, "
              f"overlaps {rep.overlaps}", file=sys.stderr)
        return 2
    closed = closure(g)
    depth = max_chain_depth(g, args.limit)
    payload = {
        "m": g.m,
        "contradiction": closed.contradiction,
        "added_E": sorted(closed.added_e),
        "added_F": sorted(closed.added_f),
        "depth": depth.depth,
        "depth_saturated": depth.saturated,
    }
    if args.json:
        _emit(payload, True)
    else:
        print(f"graph over {g.m} d.o.f.: closure adds {len(closed.added_e)} E "
              f"and {len(closed.added_f)} F edges")
        print(f"  contradiction: {closed.contradiction}")
        print(f"  max chain depth: {depth}")
    return 1 if closed.contradiction else 0


def _demo_models(name: str):
    if name == "ost":
        m = models.build_oblate_stabilizer()
        return m.theory, m.strategy
    if name == "ost-r1":
        m = models.build_oblate_stabilizer(1.0)
        return m.theory, m.strategy
    if name == "gbit":
        return models.build_gbit().product_theory(), None
    if name == "composite":
        return models.build_composite().theory, None
    raise ValueError(f"unknown demo {name!r} (ost, ost-r1, gbit, composite)")


def _cmd_demo(args) -> int:
    spec, strategy = _demo_models(args.name)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / f"{args.name.replace('-', '_')}.json"
    target.write_text(json.dumps(theory_to_dict(spec, strategy)) + "\n")
    print(f"wrote {target}")
    ok = True

    if args.name == "composite":
        policy = ClosurePolicy(skip_factorizable=True, sample=2000,
                               entangled_cap=20000, seed=args.seed)
        report = check_consistency(spec, CheckOptions(closure=policy,
                                                      threads=args.threads))
        print(f"  consistency (sampled closure): {report.verdict}")
        ok &= report.consistent
        model = models.build_composite()
        for rounds, expect in ((1, 4.0), (2, 2.0)):
            res = models.composite_relay_chsh(model, rounds)
            good = abs(res["max_abs_chsh"] - expect) <= 1e-9
            print(f"  relay round {rounds}: CHSH {res['max_abs_chsh']:.9f} "
                  f"(expected {expect}) {'ok' if good else 'FAIL'}")
            ok &= good
        return 0 if ok else 1

    report = check_consistency(spec, CheckOptions(threads=args.threads))
    expected_verdict = "consistent"
    print(f"  consistency: {report.verdict}")
    ok &= report.verdict == expected_verdict
    if spec.effect_space_points is not None:
        best = theory_chsh_value(spec)
        print(f"  theory CHSH value: {best.value:.9f}")
    if strategy is not None:
        for n in (1, 2, 3):
            ex = iterate_game_exhaustive(strategy, n)
            fa = iterate_game_fast(strategy, n)
            good = abs(ex.beta - fa.beta) <= 1e-9
            print(f"  game n={n}: beta = {ex.beta:.9f} (fast {fa.beta:.9f}) "
                  f"{'ok' if good else 'FAIL'}")
            ok &= good
    return 0 if ok else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gptlab",
        description="Cone-based theories: consistency, swapping, iterated CHSH games")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_tol=True):
        if with_tol:
            p.add_argument("--tol", type=float, default=None,
                           help="relative tolerance (default GPTLAB_TOL or 1e-9)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("check", help="run the ten-condition consistency check")
    p.add_argument("file")
    p.add_argument("--sample", type=int, default=None,
                   help="sample this many closure triples (plus all fully-entangled)")
    p.add_argument("--skip-factorizable", action="store_true",
                   help="analytically skip product-factorizable closure triples")
    p.add_argument("--exhaustive", action="store_true",
                   help="force exhaustive closure enumeration")
    common(p)
    p.set_defaults(fn=_cmd_check)

    p = sub.add_parser("extend", help="construct n-partite generator lists")
    p.add_argument("file")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(fn=_cmd_extend)

    p = sub.add_parser("chsh", help="theory CHSH value with witness")
    p.add_argument("file")
    common(p)
    p.set_defaults(fn=_cmd_chsh)

    p = sub.add_parser("iterate", help="iterated CHSH game score")
    p.add_argument("file")
    p.add_argument("--rounds", type=int, required=True)
    p.add_argument("--mode", choices=("exhaustive", "fast", "both"), default="both")
    common(p)
    p.set_defaults(fn=_cmd_iterate)

    p = sub.add_parser("graph", help="validate/close a d.o.f. graph, report depth")
    p.add_argument("file")
    p.add_argument("--limit", type=int, default=32)
    common(p)
    p.set_defaults(fn=_cmd_graph)

    p = sub.add_parser("demo", help="write a built-in model and run smoke checks")
    p.add_argument("name")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(fn=_cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (json.JSONDecodeError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
