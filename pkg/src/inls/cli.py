"""Command-line experiments for the weighted focusing NLS.

Each subcommand maps onto one experiment kind.  Settings come from an optional
JSON document (``--config``) overridden by explicit flags.  Errors are written
to stderr as a JSON object; exit codes are

    0  success
    2  parameter / regime / validation error
    3  solver failure
    4  outcome contradicts the stated expectation (blow-up vs global existence)
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import dynamics as D
from . import functionals as F
from . import groundstate as G
from . import normalized as Nz
from .grid import RadialField, default_radius, make_grid
from .model import ModelParams, ParameterError, Regime, classify_regime, is_mass_critical

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_EXPECTATION = 0, 2, 3, 4

KINDS = ("ground-state", "identities", "d-omega-sweep", "classify", "evolve", "stability",
         "instability", "mass-critical", "normalized", "m-c-sweep")

# settings each kind accepts, with defaults
KIND_DEFAULTS = {
    "ground-state": {},
    "identities": {"n_fields": 20},
    "d-omega-sweep": {"omegas": [0.25, 0.5, 1.0, 2.0, 4.0]},
    "classify": {"input": None, "d": None},
    "evolve": {"input": None, "datum": "gaussian", "amplitude": 1.0, "lam": 0.2, "T": 1.0,
               "sample_dt": 0.05, "dt": 1e-3, "expect": None},
    "stability": {"epsilon": 1e-2, "T": 20.0, "seeds": [0], "sample_dt": 0.1, "dt": 1e-3},
    "instability": {"lam": 0.2, "T": 5.0, "sample_dt": 0.01, "dt": 1e-3},
    "mass-critical": {"lams": [1.01, 1.1]},
    "normalized": {"c_factor": 1.0},
    "m-c-sweep": {"c0_factor": 0.5, "ratio": math.sqrt(2.0), "n": 5},
}

# normalized, m-c-sweep and d-omega-sweep fix their own frequencies
NEEDS_OMEGA = ("ground-state", "identities", "classify", "evolve", "stability", "instability")

GS_M = G.DEFAULT_M
DYN_M = 4096
# the dilated datum must have decayed below the variance-reliability level at R
INSTABILITY_R = 14.0


class ExpectationMismatch(RuntimeError):
    pass


def _fmt(x):
    """17 significant digits for every float, recursively."""
    if isinstance(x, (bool, np.bool_)) or x is None:
        return None if x is None else bool(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return float(f"{x:.17g}") if math.isfinite(x) else None
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, dict):
        return {k: _fmt(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_fmt(v) for v in x]
    return x


def _number(text):
    """Parse b or p exactly when the decimal literal allows it."""
    if isinstance(text, (int, float, Fraction)):
        return text
    try:
        fr = Fraction(str(text))
    except (ValueError, ZeroDivisionError):
        raise ParameterError(f"not a number: {text!r}")
    return fr.numerator if fr.denominator == 1 else fr


@dataclass
class Scenario:
    name: str
    kind: str
    params: ModelParams
    R: Optional[float] = None
    M: Optional[int] = None
    settings: dict = field(default_factory=dict)
    out: Optional[str] = None
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ParameterError(f"unknown experiment kind {self.kind!r}")
        unknown = set(self.settings) - set(KIND_DEFAULTS[self.kind])
        if unknown:
            raise ParameterError(f"unknown settings for {self.kind}: {sorted(unknown)}")
        regime = classify_regime(self.params.with_omega(None))
        if self.kind in ("stability", "normalized", "m-c-sweep") and regime is not Regime.MASS_SUBCRITICAL:
            raise ParameterError(f"{self.kind} needs the mass-subcritical regime, got {regime.value}")
        if self.kind == "mass-critical" and not is_mass_critical(self.params):
            raise ParameterError("mass-critical needs p = p_c")
        if self.kind in NEEDS_OMEGA and self.params.omega is None:
            raise ParameterError(f"{self.kind} needs --omega")
        if self.params.omega is not None and self.params.omega <= 0:
            raise G.NonexistenceError(f"no nontrivial solution for omega = {self.params.omega} <= 0")

    def setting(self, key):
        return self.settings.get(key, KIND_DEFAULTS[self.kind][key])


@dataclass
class ExperimentReport:
    name: str
    kind: str
    exit_code: int
    payload: dict
    files: list = field(default_factory=list)
    error: Optional[dict] = None


# ----------------------------------------------------------------------------- helpers
def _out_dir(s: Scenario) -> Optional[Path]:
    if s.out is None:
        return None
    p = Path(s.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write(s: Scenario, files: list, name: str, text: str) -> None:
    d = _out_dir(s)
    if d is None:
        return
    path = d / name
    with open(path, "w", newline="") as fh:
        fh.write(text)
    files.append(str(path))


def _json_text(obj) -> str:
    return json.dumps(_fmt(obj), indent=2, sort_keys=True) + "\n"


def _ground_state(s: Scenario, omega: Optional[float] = None, M: Optional[int] = None) -> G.GroundState:
    prm = s.params.with_omega(omega if omega is not None else s.params.omega)
    R = s.R or default_radius(prm.omega)
    M = M or s.M or GS_M
    grid = make_grid(prm.N, R, M)
    return G.solve_profile_shooting(prm, grid, check=M >= GS_M)


def _dyn_ground_state(s: Scenario) -> G.GroundState:
    """Q polished on the dynamics grid: the discrete flow keeps it exactly stationary."""
    return _ground_state(s, M=s.M or DYN_M)


# ----------------------------------------------------------------------------- experiment kinds
def _run_ground_state(s, files):
    Q = _ground_state(s)
    _write(s, files, "profile.csv", Q.profile.to_csv())
    _write(s, files, "diagnostics.json", Q.diagnostics_json() + "\n")
    return Q.diagnostics()


def _random_fields(grid, n, seed):
    rng = np.random.default_rng(seed)
    out = []
    r = np.asarray(grid.nodes)
    for _ in range(n):
        a, w, k = rng.uniform(0.2, 2.0), rng.uniform(0.5, 3.0), rng.uniform(0.0, 2.0)
        out.append(RadialField(grid, a * np.exp(-(r / w) ** 2) * (1.0 + 0.5 * np.cos(k * r))))
    return out


def _run_identities(s, files):
    Q = _ground_state(s)
    prm = Q.params
    N = prm.N
    kac_err, split_err, nehari_err = [], [], []
    for phi in _random_fields(Q.grid, int(s.setting("n_fields")), s.seed):
        kac = F.kac_functional(phi, prm, 1.0, -2.0 / N)
        two_p = 2.0 / N * F.virial(phi, prm)
        kac_err.append(abs(kac - two_p) / max(abs(two_p), 1e-300))
        split_err.append(abs(F.action(phi, prm) - F.energy(phi, prm) - 0.5 * prm.omega * F.mass(phi))
                         / abs(F.action(phi, prm)))
        _, proj = G.nehari_project(phi, prm)
        target = (prm.pf - 1.0) / (2.0 * (prm.pf + 1.0)) * F.potential(proj, prm)
        nehari_err.append(abs(F.action(proj, prm) - target) / abs(target))
    payload = {
        "params": prm.as_dict(),
        "pohozaev": list(Q.pohozaev),
        "nehari_relative": Q.nehari_relative,
        "kac_vs_virial_max_rel": max(kac_err),
        "action_split_max_rel": max(split_err),
        "projected_action_max_rel": max(nehari_err),
    }
    _write(s, files, "identities.json", _json_text(payload))
    return payload


def _run_d_sweep(s, files):
    Q1 = _ground_state(s, omega=1.0)
    rows = []
    for om in s.setting("omegas"):
        dn, dc = G.action_level_d(Q1.params.with_omega(float(om)), Q1)
        rows.append((float(om), dn, dc, abs(dn - dc) / abs(dc)))
    lines = ["omega,d_numeric,d_closed_form,rel_error"]
    lines += [",".join(f"{v:.17g}" for v in row) for row in rows]
    _write(s, files, "d_omega.csv", "\n".join(lines) + "\n")
    payload = {"params": Q1.params.with_omega(None).as_dict(), "sigma": G.action_exponent(Q1.params),
               "max_rel_error": max(r[3] for r in rows) if rows else 0.0,
               "rows": [dict(zip(("omega", "d_numeric", "d_closed_form", "rel_error"), r)) for r in rows]}
    return payload


def _read_field(s: Scenario) -> RadialField:
    path = s.setting("input")
    if path is None:
        raise ParameterError("this experiment needs --input FIELD.csv")
    return RadialField.from_csv(path, s.params.N)


def _run_classify(s, files):
    u0 = _read_field(s)
    d = s.setting("d")
    if d is None:
        s2 = Scenario(s.name, s.kind, s.params, u0.grid.R, u0.grid.M, s.settings, s.out, s.seed)
        d = _ground_state(s2).action_value
    cl = D.classify_initial_data(u0, s.params, float(d))
    payload = {"params": s.params.as_dict(), **cl.as_dict(),
               "variance_reliable": F.variance_reliable(u0)}
    _write(s, files, "classification.json", _json_text(payload))
    return payload


def _initial_datum(s: Scenario):
    """(u0, reference Q or None, d or None)."""
    datum = s.setting("datum")
    if s.setting("input") is not None:
        u0 = _read_field(s)
        return u0, None, None
    if datum == "gaussian":
        grid = make_grid(s.params.N, s.R or 12.0, s.M or DYN_M)
        a = float(s.setting("amplitude"))
        return RadialField.from_function(grid, lambda r: a * np.exp(-0.5 * r * r)), None, None
    Q = _dyn_ground_state(s)
    if datum == "Q":
        return float(s.setting("amplitude")) * Q.profile, Q.profile, Q.action_value
    if datum == "instability":
        return D.instability_family(Q, float(s.setting("lam")), grid=Q.grid), Q.profile, Q.action_value
    raise ParameterError(f"unknown datum {datum!r} (gaussian, Q, instability)")


def _trajectory_outputs(s, files, traj, cl=None):
    _write(s, files, "trajectory.csv", traj.to_csv())
    rep = traj.report(cl)
    _write(s, files, "report.json", _json_text(rep))
    return rep


def _check_expectation(expect, traj):
    if expect is None:
        return
    blew = traj.status in (D.Status.BLOWUP, D.Status.COLLAPSE)
    if expect == "blowup" and not blew:
        raise ExpectationMismatch(f"expected blow-up, run reached t = {traj.times[-1]:g}")
    if expect == "global" and blew:
        raise ExpectationMismatch(f"expected global existence, blow-up detected near t = {traj.blowup_time:g}")
    if expect not in ("blowup", "global"):
        raise ParameterError(f"expect must be 'blowup' or 'global', got {expect!r}")


def _run_evolve(s, files):
    u0, ref, d = _initial_datum(s)
    cl = D.classify_initial_data(u0, s.params, d) if d is not None else None
    traj = D.evolve(u0, s.params, float(s.setting("T")), float(s.setting("sample_dt")),
                    dt=float(s.setting("dt")), reference=ref)
    rep = _trajectory_outputs(s, files, traj, cl)
    _check_expectation(s.setting("expect"), traj)
    return rep


def _run_stability(s, files):
    Q = _dyn_ground_state(s)
    eps = float(s.setting("epsilon"))
    rows = []
    for seed in s.setting("seeds"):
        dist, traj = D.stability_experiment(Q, eps, float(s.setting("T")), int(seed),
                                            sample_dt=float(s.setting("sample_dt")), dt=float(s.setting("dt")))
        rows.append({"seed": int(seed), "max_distance": dist, "ratio_to_epsilon": dist / eps if eps else None,
                     "status": traj.status.value})
        _write(s, files, f"trajectory_seed{int(seed)}.csv", traj.to_csv())
    payload = {"params": Q.params.as_dict(), "epsilon": eps, "runs": rows}
    _write(s, files, "stability.json", _json_text(payload))
    if any(r["status"] != D.Status.FINISHED.value for r in rows):
        raise ExpectationMismatch("perturbed ground state did not exist globally")
    return payload


def _run_instability(s, files):
    if s.R is None:
        s = replace(s, R=max(INSTABILITY_R, default_radius(s.params.omega)))
    Q = _dyn_ground_state(s)
    lam = float(s.setting("lam"))
    u0 = D.instability_family(Q, lam, grid=Q.grid)
    cl = D.classify_initial_data(u0, Q.params, Q.action_value)
    traj = D.evolve(u0, Q.params, float(s.setting("T")), float(s.setting("sample_dt")),
                    dt=float(s.setting("dt")), reference=Q.profile)
    rep = _trajectory_outputs(s, files, traj, cl)
    rep["distance_u0_to_Q"] = F.phase_optimized_h1_distance(u0, Q.profile)
    rep["initial_variance_reliable"] = F.variance_reliable(u0)
    _check_expectation("blowup", traj)
    return rep


def _run_mass_critical(s, files):
    Q = _ground_state(s, omega=s.params.omega or 1.0)
    out = {"params": Q.params.as_dict(), "lambdas": []}
    for lam in s.setting("lams"):
        ids = D.mass_critical_identities(Q, float(lam))
        phi = D.mass_critical_family(Q, float(lam))
        ids["lambda"] = float(lam)
        ids["energy_negative"] = ids["energy"] < 0
        ids["grid_energy"] = F.energy(phi, Q.params)
        out["lambdas"].append(ids)
    _write(s, files, "mass_critical.json", _json_text(out))
    return out


def _run_normalized(s, files):
    prm = s.params.with_omega(None)
    Q1 = _ground_state(s, omega=1.0)
    c = float(s.setting("c_factor")) * Q1.report.mass
    ref = Nz.scaled_normalized_solution(c, prm, Q1)
    grid = Nz.default_descent_grid(c, prm, Q1.report.mass, s.M or 8192)
    sol = Nz.minimize_mass_constrained(c, prm, Nz.gaussian_initial(grid, c, 1.0 / math.sqrt(ref.omega_c)))
    payload = {
        "params": prm.as_dict(), "c": c, "m_c": sol.energy_value, "omega_c_fitted": sol.omega_c,
        "omega_c_closed_form": ref.omega_c, "lagrange_residual": sol.lagrange_residual,
        "iterations": sol.iterations, "energy_scaled_solution": ref.energy_value,
        "energy_rel_diff": abs(sol.energy_value - ref.energy_value) / abs(ref.energy_value),
    }
    _write(s, files, "normalized.csv", sol.profile.to_csv())
    _write(s, files, "normalized.json", _json_text(payload))
    return payload


def _run_m_c_sweep(s, files):
    Q1 = _ground_state(s, omega=1.0)
    cs = Nz.mass_ladder(float(s.setting("c0_factor")) * Q1.report.mass, float(s.setting("ratio")), int(s.setting("n")))
    rows = Nz.m_c_sweep(cs, s.params, Q1, s.M or 8192)
    _write(s, files, "m_c.csv", Nz.m_c_csv(rows))
    ms = [r[1] for r in rows]
    return {
        "params": s.params.with_omega(None).as_dict(),
        "rows": [dict(zip(("c", "m_c", "omega_c", "iterations", "residual"), r)) for r in rows],
        "strictly_decreasing": all(b < a for a, b in zip(ms, ms[1:])),
        "subadditive_pairs": all(rows[j][1] < rows[j][0] / rows[i][0] * rows[i][1]
                                 for i in range(len(rows)) for j in range(i + 1, len(rows))),
    }


RUNNERS = {
    "ground-state": _run_ground_state, "identities": _run_identities, "d-omega-sweep": _run_d_sweep,
    "classify": _run_classify, "evolve": _run_evolve, "stability": _run_stability,
    "instability": _run_instability, "mass-critical": _run_mass_critical,
    "normalized": _run_normalized, "m-c-sweep": _run_m_c_sweep,
}


def run_scenario(s: Scenario) -> ExperimentReport:
    files: list = []
    try:
        s.validate()
        payload = RUNNERS[s.kind](s, files)
        return ExperimentReport(s.name, s.kind, EXIT_OK, _fmt(payload), files)
    except ExpectationMismatch as e:
        code, err = EXIT_EXPECTATION, {"type": "ExpectationMismatch", "message": str(e)}
    except (ParameterError, F.DegenerateFieldError, ValueError) as e:
        code, err = EXIT_INVALID, {"type": type(e).__name__, "message": str(e)}
    except (G.SolverError, D.StepFailed, ArithmeticError, np.linalg.LinAlgError) as e:
        code, err = EXIT_SOLVER, {"type": type(e).__name__, "message": str(e)}
    except Exception as e:  # keep the JSON-on-stderr contract for anything unforeseen
        code, err = EXIT_SOLVER, {"type": type(e).__name__, "message": str(e)}
    return ExperimentReport(s.name, s.kind, code, {}, files, err)


def _run_for_pool(s: Scenario) -> ExperimentReport:
    return run_scenario(s)


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("INLS_THREADS", "1")))
    except ValueError:
        return 1


def sweep(scenarios: list, out: Optional[str] = None):
    """Run independent scenarios; return (rows sorted by name, summary CSV text, worst exit code)."""
    ordered = sorted(scenarios, key=lambda sc: sc.name)
    workers = min(max_workers(), len(ordered)) if ordered else 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_for_pool, ordered))
    else:
        reports = [run_scenario(sc) for sc in ordered]
    lines = ["name,kind,exit_code,error"]
    for r in reports:
        msg = "" if r.error is None else r.error["type"]
        lines.append(f"{r.name},{r.kind},{r.exit_code},{msg}")
    text = "\n".join(lines) + "\n"
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "summary.csv").write_text(text)
    worst = max((r.exit_code for r in reports), default=EXIT_OK)
    return reports, text, worst


# ----------------------------------------------------------------------------- argument parsing
def _list(conv):
    def parse(text):
        return [conv(t) for t in str(text).split(",") if t.strip()]
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("model and grid")
    g.add_argument("--N", type=int)
    g.add_argument("--b", type=str)
    g.add_argument("--p", type=str)
    g.add_argument("--omega", type=float)
    g.add_argument("--R", type=float)
    g.add_argument("--M", type=int)
    g.add_argument("--out", type=str, help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--config", type=str, help="JSON scenario document; flags take precedence")
    g.add_argument("--name", type=str)

    parser = argparse.ArgumentParser(prog="inls", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="kind", required=True)
    sub.add_parser("ground-state", parents=[common], help="solve Q_omega and write profile + diagnostics")
    sp = sub.add_parser("identities", parents=[common], help="stationary and algebraic identity checks")
    sp.add_argument("--n-fields", dest="n_fields", type=int)
    sp = sub.add_parser("d-omega-sweep", parents=[common], help="d(omega) against its closed form")
    sp.add_argument("--omegas", type=_list(float))
    sp = sub.add_parser("classify", parents=[common], help="K+/K- classification of a field CSV")
    sp.add_argument("--input", type=str)
    sp.add_argument("--d", type=float, help="threshold d(omega); solved on the field's grid if omitted")
    sp = sub.add_parser("evolve", parents=[common], help="time evolution with conservation monitors")
    sp.add_argument("--input", type=str)
    sp.add_argument("--datum", choices=("gaussian", "Q", "instability"))
    sp.add_argument("--amplitude", type=float)
    sp.add_argument("--lam", type=float)
    sp.add_argument("--T", type=float)
    sp.add_argument("--sample-dt", dest="sample_dt", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--expect", choices=("global", "blowup"))
    sp = sub.add_parser("stability", parents=[common], help="perturbed ground-state runs")
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--T", type=float)
    sp.add_argument("--seeds", type=_list(int))
    sp.add_argument("--sample-dt", dest="sample_dt", type=float)
    sp.add_argument("--dt", type=float)
    sp = sub.add_parser("instability", parents=[common], help="dilated ground state and blow-up")
    sp.add_argument("--lam", type=float)
    sp.add_argument("--T", type=float)
    sp.add_argument("--sample-dt", dest="sample_dt", type=float)
    sp.add_argument("--dt", type=float)
    sp = sub.add_parser("mass-critical", parents=[common], help="scaling identities at p = p_c")
    sp.add_argument("--lams", type=_list(float))
    sp = sub.add_parser("normalized", parents=[common], help="constrained minimiser vs scaled ground state")
    sp.add_argument("--c-factor", dest="c_factor", type=float, help="mass target in units of ||Q_1||^2")
    sp = sub.add_parser("m-c-sweep", parents=[common], help="m(c) on a geometric mass ladder")
    sp.add_argument("--c0-factor", dest="c0_factor", type=float)
    sp.add_argument("--ratio", type=float)
    sp.add_argument("--n", type=int)
    return parser


COMMON_KEYS = ("N", "b", "p", "omega", "R", "M", "out", "seed", "name")


def scenario_from_args(ns: argparse.Namespace) -> Scenario:
    doc = {}
    if ns.config:
        with open(ns.config) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ParameterError("config must be a JSON object")
    merged = {k: v for k, v in doc.items() if k != "settings"}
    settings = dict(doc.get("settings", {}))
    for k, v in vars(ns).items():
        if k in ("config", "kind") or v is None:
            continue
        if k in COMMON_KEYS:
            merged[k] = v
        else:
            settings[k] = v
    kind = doc.get("kind", ns.kind) if ns.kind is None else ns.kind
    for key in ("N", "b", "p"):
        if merged.get(key) is None:
            raise ParameterError(f"--{key} is required")
    params = ModelParams(int(merged["N"]), _number(merged["b"]), _number(merged["p"]),
                         None if merged.get("omega") is None else float(merged["omega"]))
    return Scenario(
        name=str(merged.get("name") or kind), kind=kind, params=params,
        R=None if merged.get("R") is None else float(merged["R"]),
        M=None if merged.get("M") is None else int(merged["M"]),
        settings=settings, out=merged.get("out"), seed=int(merged.get("seed") or 0),
    )


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        s = scenario_from_args(ns)
    except (ParameterError, ValueError, OSError) as e:
        sys.stderr.write(json.dumps({"type": type(e).__name__, "message": str(e), "exit_code": EXIT_INVALID}) + "\n")
        return EXIT_INVALID
    rep = run_scenario(s)
    if rep.error is not None:
        sys.stderr.write(json.dumps({**rep.error, "exit_code": rep.exit_code}) + "\n")
    else:
        sys.stdout.write(json.dumps({"name": rep.name, "kind": rep.kind, "files": rep.files,
                                     "result": rep.payload}, indent=2) + "\n")
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
