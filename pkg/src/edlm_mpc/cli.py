"""Command-line front end: run scenario files, reproduce the bundled examples, analyse loops."""

from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import char_poly_analysis1, char_poly_analysis2, stability_check, steady_state_error
from .control import ConstraintSet, ControllerConfig
from .edlm import PJM, HistoryWindow, Term, pjm_exact, pjm_secant, separable_plant
from .errors import EdlmMpcError, SimulationDiverged
from .prediction import horizon
from .sim import PLANTS, Scenario, Trace, metrics, run_closed_loop


class ScenarioError(ValueError):
    """Malformed scenario document."""


_TOP_KEYS = {
    "name", "plant", "controller", "constraints", "reference", "disturbance",
    "steps", "seed", "init_y", "init_u", "window", "expect",
}
_CTRL_KEYS = {"N", "lambda", "q", "mode", "pjm_mode", "ridge"}
_CONS_KEYS = {"u_min", "u_max", "energy_cap"}
_CUSTOM_KEYS = {"n_y", "n_u", "My", "Mu", "terms"}
_TERM_KEYS = {"out", "var", "ch", "lag", "coef", "power"}
_EXPECT_KEYS = {"steady_error", "atol", "max_violation", "ed_median_max", "unc_gap_max", "stable", "bounded"}


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ScenarioError(f"{where}: expected an object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _bounds(v, where):
    # null stands for an unbounded side
    try:
        return [(-math.inf if where == "u_min" else math.inf) if x is None else float(x) for x in v]
    except TypeError:
        raise ScenarioError(f"constraints.{where}: expected a list of numbers or nulls") from None


def scenario_from_dict(doc: dict, steps: Optional[int] = None, seed: Optional[int] = None) -> tuple:
    """Build a :class:`Scenario` and its ``expect`` block from a parsed document.

    Defaults: ``lambda = 0``, ``Q = I``, frozen PJM, ``seed = 42``,
    zero initial values.
    """
    _check_keys(doc, _TOP_KEYS, "scenario")
    if "plant" not in doc or "controller" not in doc:
        raise ScenarioError("scenario: 'plant' and 'controller' are required")

    plant_doc = doc["plant"]
    plant = None
    if isinstance(plant_doc, str):
        if plant_doc not in PLANTS:
            raise ScenarioError(f"plant: unknown id {plant_doc!r} (choose from {sorted(PLANTS)} or a custom object)")
        plant_id = plant_doc
    else:
        _check_keys(plant_doc, {"custom"}, "plant")
        c = plant_doc.get("custom")
        _check_keys(c, _CUSTOM_KEYS, "plant.custom")
        terms = []
        for i, t in enumerate(c.get("terms", [])):
            _check_keys(t, _TERM_KEYS, f"plant.custom.terms[{i}]")
            terms.append(Term(int(t["out"]), str(t["var"]), int(t["ch"]), int(t["lag"]), float(t["coef"]), int(t.get("power", 1))))
        try:
            plant = separable_plant(terms, int(c["n_y"]), int(c["n_u"]), int(c.get("My", 1)), int(c.get("Mu", 1)))
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"plant.custom: {exc}") from None
        plant_id = "custom"

    ctrl = doc["controller"]
    _check_keys(ctrl, _CTRL_KEYS, "controller")
    if "N" not in ctrl:
        raise ScenarioError("controller: 'N' is required")
    try:
        cfg = ControllerConfig(
            N=ctrl["N"],
            lam=float(ctrl.get("lambda", 0.0)),
            q=ctrl.get("q"),
            mode=ctrl.get("mode", "uiMPC"),
            pjm_mode=ctrl.get("pjm_mode", "frozen"),
            ridge=float(ctrl.get("ridge", 0.0)),
        )
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"controller: {exc}") from None

    cset = None
    if doc.get("constraints") is not None:
        cs = doc["constraints"]
        _check_keys(cs, _CONS_KEYS, "constraints")
        try:
            cset = ConstraintSet(_bounds(cs["u_min"], "u_min"), _bounds(cs["u_max"], "u_max"), cs.get("energy_cap"))
        except (KeyError, ValueError, EdlmMpcError) as exc:
            raise ScenarioError(f"constraints: {exc}") from None

    expect = doc.get("expect", {}) or {}
    _check_keys(expect, _EXPECT_KEYS, "expect")
    window = doc.get("window")
    try:
        s = Scenario(
            plant_id=plant_id,
            controller=cfg,
            constraints=cset,
            reference=doc.get("reference", "unit_ramp"),
            disturbance=doc.get("disturbance", "none"),
            steps=int(steps if steps is not None else doc.get("steps", 700)),
            seed=int(seed if seed is not None else doc.get("seed", 42)),
            init_y=float(doc.get("init_y", 0.0)),
            init_u=float(doc.get("init_u", 0.0)),
            plant=plant,
            window=tuple(window) if window is not None else None,
            name=str(doc.get("name", "")),
        )
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"scenario: {exc}") from None
    return s, expect


def load_scenario(path, steps: Optional[int] = None, seed: Optional[int] = None) -> tuple:
    """Parse a JSON scenario file; syntax errors report line and column."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc, steps, seed)


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("edlm_mpc") / "fixtures" / f"{name}.json"))


def load_fixture(name: str, **kw) -> tuple:
    return load_scenario(fixture_path(name), **kw)


def scenario_to_dict(s: Scenario) -> dict:
    cfg = s.controller
    d = {
        "name": s.name,
        "plant": s.plant_id,
        "controller": {
            "N": cfg.N,
            "lambda": cfg.lam,
            "q": None if cfg.q is None else cfg.q.tolist(),
            "mode": cfg.mode,
            "pjm_mode": cfg.pjm_mode,
            "ridge": cfg.ridge,
        },
        "constraints": None,
        "reference": s.reference if isinstance(s.reference, str) else np.asarray(s.reference).tolist(),
        "disturbance": s.disturbance,
        "steps": s.steps,
        "seed": s.seed,
        "init_y": s.init_y,
        "init_u": s.init_u,
        "window": list(s.window) if s.window else None,
    }
    if s.plant_id == "custom":
        d["plant"] = {
            "custom": {
                "n_y": s.plant.n_y, "n_u": s.plant.n_u, "My": s.plant.My, "Mu": s.plant.Mu,
                "terms": [t.__dict__.copy() for t in s.plant.terms],
            }
        }
    if s.constraints is not None:
        c = s.constraints
        d["constraints"] = {
            "u_min": [None if math.isinf(v) else float(v) for v in c.u_min],
            "u_max": [None if math.isinf(v) else float(v) for v in c.u_max],
            "energy_cap": c.energy_cap,
        }
    return d


# ---------------------------------------------------------------------------
# analysis at an operating point


def operating_pjm(s: Scenario, trace: Optional[Trace] = None):
    """PJM at the last logged step of ``trace``, or at the initial state."""
    plant = s.plant
    if trace is not None and len(trace):
        row = trace.pjm[-1]
        blocks, pos = [], 0
        for i in range(plant.Ly + plant.Lu):
            cols = plant.My if i < plant.Ly else plant.Mu
            blocks.append(row[pos : pos + plant.My * cols].reshape(plant.My, cols))
            pos += plant.My * cols
        return PJM(blocks, plant.Ly, plant.Lu)
    h = HistoryWindow(np.full((plant.Ly + 1, plant.My), s.init_y), np.full((plant.Lu + 1, plant.Mu), s.init_u))
    return pjm_exact(plant, h) if plant.exact_pjm is not None else pjm_secant(plant, h)


def analyze(s: Scenario, pjm=None) -> dict:
    """Stability and steady-state reports for both analysis forms where defined."""
    pjm = pjm if pjm is not None else operating_pjm(s)
    cfg = s.controller
    hm = horizon(pjm, cfg.N)
    out = {}
    for form, build in (("analysis1", char_poly_analysis1), ("analysis2", char_poly_analysis2)):
        entry: dict = {}
        try:
            m = build(pjm, hm, cfg)
            entry["stability"] = stability_check(m).to_dict()
            for kind in ("step", "ramp"):
                try:
                    entry[f"steady_state_{kind}"] = steady_state_error(m, kind).to_dict()
                except EdlmMpcError as exc:
                    entry[f"steady_state_{kind}"] = {"error": f"{type(exc).__name__}: {exc}"}
        except EdlmMpcError as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
        out[form] = entry
    return out


# ---------------------------------------------------------------------------
# checks


def _check(name, expected, observed, ok) -> dict:
    return {"name": name, "expected": expected, "observed": observed, "pass": bool(ok)}


def evaluate(s: Scenario, trace: Trace, expect: dict, diverged: bool) -> tuple:
    checks = []
    met = None
    if len(trace):
        window = s.window or (max(1, len(trace) // 2), len(trace))
        window = (min(window[0], len(trace)), min(window[1], len(trace)))
        ed_after = 20 if s.disturbance == "eq64" and len(trace) > 21 else None
        met = metrics(trace, window, ed_after=ed_after)
    bounded = not diverged
    if "bounded" in expect:
        checks.append(_check("bounded", expect["bounded"], bounded, bounded == expect["bounded"]))
    if met is None:
        return None, checks
    atol = float(expect.get("atol", 1e-6))
    if "steady_error" in expect:
        want = np.atleast_1d(np.asarray(expect["steady_error"], dtype=float))
        e = trace.e[met.window[0] - 1 : met.window[1]]
        worst = float(np.max(np.abs(e - want)))
        checks.append(_check("steady_error", want.tolist(), met.steady_error.tolist(), worst <= atol))
    if "max_violation" in expect:
        checks.append(
            _check("max_violation", expect["max_violation"], met.max_constraint_violation,
                   met.max_constraint_violation <= float(expect["max_violation"]))
        )
    if "ed_median_max" in expect and met.ed_median is not None:
        checks.append(
            _check("ed_median", expect["ed_median_max"], met.ed_median.tolist(),
                   bool(np.all(met.ed_median <= float(expect["ed_median_max"]))))
        )
    if "unc_gap_max" in expect:
        gaps = trace.unc_gap[np.isfinite(trace.unc_gap)]
        g = float(np.max(gaps)) if gaps.size else 0.0
        checks.append(_check("unc_gap", expect["unc_gap_max"], g, g <= float(expect["unc_gap_max"])))
    return met, checks


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def execute(s: Scenario, expect: dict, out_dir: Optional[Path]) -> dict:
    """Run, evaluate and (optionally) write trace.csv, pjm.csv and report.json."""
    diverged, diag = False, ""
    try:
        trace = run_closed_loop(s)
    except SimulationDiverged as exc:
        trace, diverged, diag = exc.trace, True, str(exc)
    met, checks = evaluate(s, trace, expect, diverged)
    try:
        analysis = analyze(s, operating_pjm(s, trace))
    except EdlmMpcError as exc:
        analysis = {"error": f"{type(exc).__name__}: {exc}"}
    report = {
        "scenario": scenario_to_dict(s),
        "rows": len(trace),
        "diverged": diverged,
        "diagnostic": diag,
        "metrics": met.to_dict() if met is not None else None,
        "analysis_at_last_step": analysis,
        "solver": {
            "pjm_mode": trace.pjm_mode,
            "unconverged_steps": int(np.sum(~trace.converged)),
            "max_iters": int(np.max(trace.iters)) if len(trace) else 0,
        },
        "checks": checks,
        "passed": all(c["pass"] for c in checks),
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        trace.write_csv(out_dir / "trace.csv")
        trace.write_pjm_csv(out_dir / "pjm.csv")
        write_json(out_dir / "report.json", report)
    report["_trace"] = trace
    return report


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    s, expect = load_scenario(args.file, steps=args.steps, seed=args.seed)
    rep = execute(s, expect, Path(args.out))
    met = rep["metrics"]
    print(f"{s.name or args.file}: {rep['rows']} rows -> {args.out}")
    if met is not None:
        print(f"  steady error over k in {met['window']}: {met['steady_error']}")
    if rep["diverged"]:
        print(f"  diverged: {rep['diagnostic']}", file=sys.stderr)
    for c in rep["checks"]:
        print(f"  [{'PASS' if c['pass'] else 'FAIL'}] {c['name']}: expected {c['expected']}, observed {c['observed']}")
    return 0 if rep["passed"] else 1


def _table1(out: Optional[Path], q_variant: bool) -> int:
    ok = True
    rows = []
    for lam_name in ("0.1", "1", "2"):
        s, expect = load_fixture(f"example1_lambda{lam_name}")
        if q_variant:
            s.controller.q = np.array([0.0, 0.0, 0.0, 1.0])
            s.name += "_qvariant"
        rep = execute(s, expect, None if out is None else out / s.name)
        ana = rep["analysis_at_last_step"]["analysis1"]["steady_state_ramp"].get("limit_error")
        lam = s.controller.lam
        rows.append((lam, rep["metrics"]["steady_error"][0], 2 * lam / 15, ana))
        ok &= rep["passed"]
        for c in rep["checks"]:
            if not c["pass"]:
                print(f"FAIL lambda={lam}: {c['name']} expected {c['expected']} observed {c['observed']}", file=sys.stderr)
    print(f"{'lambda':>8} {'simulated e(200..700)':>24} {'2*lambda/15':>16} {'analysis':>16}")
    for lam, sim, exact, ana in rows:
        print(f"{lam:>8g} {sim:>24.13f} {exact:>16.13f} {ana:>16.13f}")
    return 0 if ok else 1


_EXAMPLES = {
    "example1": ["example1_lambda0.1", "example1_lambda1", "example1_lambda2"],
    "example2": ["example2_uimpc", "example2_cimpc"],
    "example3": ["example3_uimpc_d", "example3_cimpc_d", "example3_uncompensated"],
    "example4": ["example4_uimpc"],
}


def cmd_reproduce(args) -> int:
    out = Path(args.out) if args.out else None
    if args.target == "table1":
        return _table1(out, args.q_variant)
    if args.target == "example1" and args.q_variant:
        return _table1(out or Path("out") / "example1", True)
    out = out or Path("out") / args.target
    ok = True
    reports = {}
    for name in _EXAMPLES[args.target]:
        s, expect = load_fixture(name)
        rep = execute(s, expect, out / name)
        reports[name] = rep
        ok &= rep["passed"]
        met = rep["metrics"] or {}
        print(f"{name}: rows={rep['rows']} diverged={rep['diverged']} rms={met.get('rms_error')}")
        if "ed_median_abs_diff" in met:
            print(f"  median |e - e_d| over k > 20: {met['ed_median_abs_diff']}")
        for c in rep["checks"]:
            print(f"  [{'PASS' if c['pass'] else 'FAIL'}] {c['name']}: expected {c['expected']}, observed {c['observed']}")
    if args.target == "example3":
        comp = reports["example3_uimpc_d"]["_trace"].e[100:]
        plain = reports["example3_uncompensated"]["_trace"].e[100:]
        rc = np.sqrt(np.mean(comp**2))
        rp = np.sqrt(np.mean(plain**2))
        ratio = rp / rc if rc > 0 else math.inf
        passed = ratio >= 100
        ok &= passed
        print(f"  [{'PASS' if passed else 'FAIL'}] compensation ratio: expected >= 100, observed {ratio:.6g} (rms {rc:.3e} vs {rp:.3e})")
        write_json(out / "compensation.json", {"rms_compensated": rc, "rms_uncompensated": rp, "ratio": ratio, "pass": passed})
    return 0 if ok else 1


def cmd_analyze(args) -> int:
    s, expect = load_scenario(args.file)
    rep = {"scenario": scenario_to_dict(s), "operating_point": "initial state", **analyze(s)}
    if s.controller.pjm_mode != "frozen":
        rep["note"] = "analysis uses the PJM frozen at the initial state"
    ok = True
    if "stable" in expect:
        st = rep["analysis1"].get("stability", {}).get("stable")
        rep["checks"] = [_check("stable", expect["stable"], st, st == expect["stable"])]
        ok = st == expect["stable"]
    print(json.dumps(_jsonable(rep), indent=2, sort_keys=True))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edlm-mpc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario file")
    r.add_argument("file")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.add_argument("--steps", type=int, default=None, help="override the number of steps")
    r.add_argument("--seed", type=int, default=None, help="override the noise seed")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("reproduce", help="rerun a bundled experiment")
    rp.add_argument("target", choices=["table1", "example1", "example2", "example3", "example4"])
    rp.add_argument("--out", default=None)
    rp.add_argument("--q-variant", action="store_true", help="weight only the last prediction (Q = diag(0, 0, 0, 1))")
    rp.set_defaults(func=cmd_reproduce)

    a = sub.add_parser("analyze", help="closed-loop stability and steady-state analysis")
    a.add_argument("file")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EdlmMpcError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
