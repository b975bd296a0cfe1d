"""Command-line front end: declarative experiment configs, suites, CSV/JSON results.

Configs are INI-style text (``key = value`` under ``[sections]``), chosen so
experiment provenance diffs cleanly.  A run executes one experiment and
writes its outputs atomically (temp file + rename) into the output
directory; a suite runs a manifest of configs (optionally in parallel) and
writes a summary table.  Exit codes: 0 all declared checks pass, 1
experiment failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .fem import Coefficient, ConvergenceError, norms
from .homogenization import (
    PerforationSpec,
    corrector_experiment,
    discrete_capacity,
    homogenization_experiment,
)
from .mesh import Mesh, build_interval_mesh, build_rectangle_mesh, read_field_csv, write_field_csv
from .nonlinearity import (
    EigenTruncation,
    Nonlinearity,
    OscillatingPower,
    PowerLaw,
    TableMap,
    nonlinearity,
)
from .solver import SolverConfig, solve_singular
from .verification import (
    ExperimentOutcome,
    _lambda1,
    comparison_experiment,
    nonuniqueness_experiment,
    stability_experiment,
    uniqueness_experiment,
)

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "run", "suite", "main"]

KINDS = (
    "solve",
    "comparison",
    "uniqueness",
    "nonuniqueness",
    "stability",
    "homogenization",
    "corrector",
    "capacity",
)


class ConfigError(Exception):
    """Invalid configuration; carries the offending section/key."""

    def __init__(self, section: str, key: str, message: str):
        super().__init__(f"[{section}] {key}: {message}")
        self.section = section
        self.key = key


@dataclass
class RunConfig:
    """Parsed config: ordered mapping of sections to key/value strings."""

    sections: dict = field(default_factory=dict)
    path: str | None = None

    def get(self, section: str, key: str, default=None, required: bool = False) -> str:
        sec = self.sections.get(section, {})
        if key in sec:
            return sec[key]
        if required:
            raise ConfigError(section, key, "required key is missing")
        return default

    def get_float(self, section: str, key: str, default=None, required: bool = False,
                  positive: bool = False) -> float | None:
        raw = self.get(section, key, None, required)
        if raw is None:
            return default
        try:
            val = float(raw)
        except ValueError:
            raise ConfigError(section, key, f"not a number: {raw!r}") from None
        if positive and not val > 0:
            raise ConfigError(section, key, f"must be > 0, got {val!r}")
        return val

    def get_int(self, section: str, key: str, default=None, required: bool = False) -> int | None:
        raw = self.get(section, key, None, required)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(section, key, f"not an integer: {raw!r}") from None

    def to_text(self) -> str:
        """Canonical serialization; ``parse_config`` round-trips it unchanged."""
        out = io.StringIO()
        for section, kv in self.sections.items():
            out.write(f"[{section}]\n")
            for key, value in kv.items():
                out.write(f"{key} = {value}\n")
            out.write("\n")
        return out.getvalue()


def parse_config(text: str, path: str | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.Error as exc:
        raise ConfigError("-", "-", f"syntax error: {exc}") from None
    sections = {name: dict(parser[name]) for name in parser.sections()}
    return RunConfig(sections, path)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_field_csv(path, fld) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    write_field_csv(tmp, fld)
    os.replace(tmp, path)


def build_mesh(cfg: RunConfig) -> Mesh:
    dim = cfg.get_int("mesh", "dim", 2)
    nx = cfg.get_int("mesh", "nx", required=True)
    if dim == 1:
        length = cfg.get_float("mesh", "width", 1.0, positive=True)
        return build_interval_mesh(length, nx)
    if dim != 2:
        raise ConfigError("mesh", "dim", f"dim must be 1 or 2, got {dim}")
    ny = cfg.get_int("mesh", "ny", nx)
    width = cfg.get_float("mesh", "width", 1.0, positive=True)
    height = cfg.get_float("mesh", "height", 1.0, positive=True)
    try:
        return build_rectangle_mesh(width, height, nx, ny)
    except ValueError as exc:
        raise ConfigError("mesh", "nx", str(exc)) from None


def build_coefficient(cfg: RunConfig, mesh: Mesh) -> Coefficient:
    kind = cfg.get("coefficient", "kind", "identity")
    try:
        if kind == "identity":
            return Coefficient.identity(mesh)
        if kind == "isotropic":
            return Coefficient.isotropic(mesh, cfg.get_float("coefficient", "a", 1.0))
        if kind == "matrix":
            a11 = cfg.get_float("coefficient", "a11", 1.0)
            a12 = cfg.get_float("coefficient", "a12", 0.0)
            a21 = cfg.get_float("coefficient", "a21", 0.0)
            a22 = cfg.get_float("coefficient", "a22", 1.0)
            return Coefficient.constant(mesh, np.array([[a11, a12], [a21, a22]]))
    except ValueError as exc:
        raise ConfigError("coefficient", "kind", str(exc)) from None
    raise ConfigError("coefficient", "kind", f"unknown kind {kind!r}")


def _field_value(cfg: RunConfig, mesh: Mesh, section: str, key: str, default: str):
    raw = cfg.get(section, key, default)
    if raw.startswith("csv:"):
        rel = raw[4:]
        base = os.path.dirname(cfg.path) if cfg.path else "."
        path = os.path.join(base, rel)
        if not os.path.exists(path):
            raise ConfigError(section, key, f"referenced data file does not exist: {path}")
        return read_field_csv(mesh, path).values
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(section, key, f"expected a number or csv:<path>, got {raw!r}") from None


def build_nonlinearity(cfg: RunConfig, mesh: Mesh, coeff: Coefficient,
                       section: str = "nonlinearity") -> Nonlinearity:
    g_name = cfg.get(section, "g", "none")
    gamma = cfg.get_float(section, "gamma", None)
    if gamma is not None and not 0.0 < gamma <= 1.0:
        raise ConfigError(section, "gamma", f"gamma must satisfy 0 < gamma <= 1, got {gamma!r}")
    f_val = _field_value(cfg, mesh, section, "f", "0.0")
    l_val = _field_value(cfg, mesh, section, "l", "0.0")
    lam = cfg.get_float(section, "lambda_mono", None)

    if g_name == "none":
        g = PowerLaw(gamma if gamma is not None else 1.0)
        f_val = 0.0
    elif g_name == "power":
        g = PowerLaw(gamma if gamma is not None else 1.0)
    elif g_name == "oscillating":
        g = OscillatingPower(gamma if gamma is not None else 1.0)
    elif g_name == "eigen_trunc":
        k = cfg.get_float(section, "k", 1.0, positive=True)
        rate_raw = cfg.get(section, "rate", "auto")
        if rate_raw == "auto":
            rate, _ = _lambda1(mesh, coeff)
        else:
            try:
                rate = float(rate_raw)
            except ValueError:
                raise ConfigError(section, "rate", f"expected 'auto' or number, got {rate_raw!r}") from None
        g = EigenTruncation(rate, k)
    elif g_name == "table":
        try:
            s_pts = tuple(float(v) for v in cfg.get(section, "table_s", required=True).split(","))
            g_pts = tuple(float(v) for v in cfg.get(section, "table_g", required=True).split(","))
        except ValueError as exc:
            raise ConfigError(section, "table_s", f"bad table: {exc}") from None
        if len(s_pts) != len(g_pts) or len(s_pts) < 2:
            raise ConfigError(section, "table_s", "table_s and table_g need equal length >= 2")
        g = TableMap(s_pts, g_pts)
    else:
        raise ConfigError(section, "g", f"unknown nonlinearity kind {g_name!r}")
    try:
        return nonlinearity(mesh, g, f=f_val, l=l_val, gamma=gamma, lambda_mono=lam)
    except ValueError as exc:
        raise ConfigError(section, "g", str(exc)) from None


def build_solver_config(cfg: RunConfig) -> SolverConfig:
    base = SolverConfig()
    kw = {}
    for name, caster in [
        ("inner_tol", float), ("inner_tol_abs", float), ("max_inner", int),
        ("outer_tol", float), ("outer_tol_abs", float), ("max_levels", int),
        ("n_start", float), ("theta0", float), ("slope_damping", float),
        ("cg_tol", float),
    ]:
        raw = cfg.get("solver", name, None)
        if raw is not None:
            try:
                kw[name] = caster(raw)
            except ValueError:
                raise ConfigError("solver", name, f"not a number: {raw!r}") from None
            if name.endswith("tol") and not kw[name] > 0:
                raise ConfigError("solver", name, f"tolerance must be > 0, got {kw[name]!r}")
    return replace(base, **kw)


def _epsilon_list(cfg: RunConfig) -> list[float]:
    raw = cfg.get("homogenization", "epsilons", required=True)
    try:
        eps = [float(v) for v in raw.split(",")]
    except ValueError:
        raise ConfigError("homogenization", "epsilons", f"bad list: {raw!r}") from None
    if len(eps) < 2:
        raise ConfigError("homogenization", "epsilons", "sweep needs at least 2 epsilons")
    return eps


def _solve_outcome(cfg: RunConfig, mesh, coeff, F, scfg, out_dir) -> ExperimentOutcome:
    energy_tol = cfg.get_float("solve", "energy_tol", 1e-6, positive=True)
    report = solve_singular(mesh, coeff, F, scfg)
    nn = norms(report.u, coeff)
    min_u = float(report.u.values.min())
    passed = bool(report.converged and min_u >= -1e-12
                  and report.energy_identity_residual <= energy_tol)
    metrics = {
        "n_final": report.n_final,
        "outer_iters": report.outer_iters,
        "inner_iters": report.inner_iters,
        "energy_identity_residual": report.energy_identity_residual,
        "final_gap": report.final_gap,
        "l2": nn.l2,
        "h1semi": nn.h1semi,
        "linf": nn.linf,
        "energy": nn.energy,
        "min_u": min_u,
    }
    outcome = ExperimentOutcome("solve", passed, metrics, detail=report)
    _atomic_field_csv(os.path.join(out_dir, "solution.csv"), report.u)
    outcome.artifacts.append(os.path.join(out_dir, "solution.csv"))
    stats_lines = [
        json.dumps({"level": st.n, "iterations": st.iterations, "residual": st.residual,
                    "converged": st.converged, "theta": st.theta,
                    "cg_iterations": st.cg_iterations}, sort_keys=True)
        for st in report.level_stats
    ]
    _atomic_write(os.path.join(out_dir, "solver_stats.jsonl"), "\n".join(stats_lines) + "\n")
    return outcome


def _execute(cfg: RunConfig, out_dir: str, seed: int, threads: int = 1) -> ExperimentOutcome:
    kind = cfg.get("experiment", "kind", required=True)
    if kind not in KINDS:
        raise ConfigError("experiment", "kind", f"unknown kind {kind!r} (choose from {KINDS})")
    os.makedirs(out_dir, exist_ok=True)

    if kind == "capacity":
        r_outer = cfg.get_float("capacity", "r_outer", required=True, positive=True)
        r_inner = cfg.get_float("capacity", "r_inner", required=True, positive=True)
        h = cfg.get_float("capacity", "h", required=True, positive=True)
        tol = cfg.get_float("capacity", "rel_tol", 0.02, positive=True)
        value = discrete_capacity(r_outer, r_inner, h)
        exact = 2.0 * np.pi / np.log(r_outer / r_inner)
        rel = abs(value - exact) / exact
        return ExperimentOutcome("capacity", bool(rel <= tol), {
            "capacity": value, "annulus_formula": exact, "rel_error": rel, "rel_tol": tol,
        })

    mesh = build_mesh(cfg)
    coeff = build_coefficient(cfg, mesh)
    scfg = build_solver_config(cfg)

    if kind == "solve":
        F = build_nonlinearity(cfg, mesh, coeff)
        return _solve_outcome(cfg, mesh, coeff, F, scfg, out_dir)
    if kind == "comparison":
        F1 = build_nonlinearity(cfg, mesh, coeff, "nonlinearity")
        F2 = build_nonlinearity(cfg, mesh, coeff, "nonlinearity2")
        return comparison_experiment(mesh, coeff, F1, F2, scfg, out_dir=out_dir)
    if kind == "uniqueness":
        F = build_nonlinearity(cfg, mesh, coeff)
        n_starts = cfg.get_int("uniqueness", "n_starts", 3)
        return uniqueness_experiment(mesh, coeff, F, n_starts, scfg, seed=seed, out_dir=out_dir)
    if kind == "nonuniqueness":
        k = cfg.get_float("nonuniqueness", "k", 1.0, positive=True)
        ray_tol = cfg.get_float("nonuniqueness", "ray_tol", 1e-4, positive=True)
        return nonuniqueness_experiment(mesh, coeff, k, scfg, ray_tol=ray_tol, out_dir=out_dir)
    if kind == "stability":
        F = build_nonlinearity(cfg, mesh, coeff)
        raw = cfg.get("stability", "levels", "1,2,4,8,16")
        try:
            levels = [float(v) for v in raw.split(",")]
        except ValueError:
            raise ConfigError("stability", "levels", f"bad list: {raw!r}") from None
        return stability_experiment(mesh, coeff, F, levels, scfg, out_dir=out_dir)

    # homogenization and corrector share the sweep
    F = build_nonlinearity(cfg, mesh, coeff)
    mu = cfg.get_float("homogenization", "mu", required=True, positive=True)
    strategy = cfg.get("homogenization", "strategy", "resolved")
    defect_tol = cfg.get_float("homogenization", "defect_tol", 0.25, positive=True)
    try:
        specs = [PerforationSpec(epsilon=e, target_mu=mu, strategy=strategy)
                 for e in _epsilon_list(cfg)]
    except ValueError as exc:
        raise ConfigError("homogenization", "epsilons", str(exc)) from None
    h_out = homogenization_experiment(mesh, coeff, F, specs, scfg, out_dir=out_dir,
                                      defect_tol=defect_tol, threads=threads)
    if kind == "homogenization":
        return h_out
    return corrector_experiment(h_out)


def run(config_path, out_dir=None, threads: int = 1, seed: int = 0) -> int:
    """Execute one experiment config; returns the process exit code."""
    try:
        cfg = load_config(config_path)
        kind = cfg.get("experiment", "kind", required=True)
        name = cfg.get("experiment", "name", kind)
        if out_dir is None:
            out_dir = cfg.get("output", "dir", os.path.join("runs", name))
        outcome = _execute(cfg, out_dir, seed, threads=threads)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, ValueError) as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 1
    record = outcome.to_json_dict()
    record["config"] = str(config_path)
    record["seed"] = seed
    _atomic_write(os.path.join(out_dir, "results.jsonl"),
                  json.dumps(record, sort_keys=True) + "\n")
    status = "PASS" if outcome.passed else "FAIL"
    print(f"{status} {name}: " + ", ".join(
        f"{k}={v}" for k, v in list(outcome.metrics.items())[:6]))
    return 0 if outcome.passed else 1


def _run_one(entry, out_root, seed):
    name = os.path.splitext(os.path.basename(entry))[0]
    t0 = time.perf_counter()
    code = run(entry, out_dir=os.path.join(out_root, name), seed=seed)
    return name, code, time.perf_counter() - t0


def suite(manifest_path, out_dir=None, threads: int = 1, seed: int = 0) -> int:
    """Run every config listed in a manifest; write a summary table."""
    try:
        with open(manifest_path) as fh:
            lines = [ln.strip() for ln in fh]
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    base = os.path.dirname(os.path.abspath(manifest_path))
    entries = [os.path.join(base, ln) for ln in lines if ln and not ln.startswith("#")]
    out_root = out_dir or os.path.join("runs", "suite")
    os.makedirs(out_root, exist_ok=True)

    rows = []
    if threads > 1 and len(entries) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda e: _run_one(e, out_root, seed), entries))
    else:
        rows = [_run_one(e, out_root, seed) for e in entries]

    lines_out = ["name,pass,exit_code,wall_seconds"]
    for name, code, wall in rows:
        lines_out.append(f"{name},{'true' if code == 0 else 'false'},{code},{wall:.17g}")
    _atomic_write(os.path.join(out_root, "summary.csv"), "\n".join(lines_out) + "\n")
    for line in lines_out:
        print(line)
    if any(code == 2 for _, code, _ in rows):
        return 2
    return 0 if all(code == 0 for _, code, _ in rows) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mildsing",
                                     description="singular semilinear elliptic experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--seed", type=int, default=0)
    p_suite = sub.add_parser("suite", help="run a manifest of configs")
    p_suite.add_argument("--manifest", required=True)
    p_suite.add_argument("--out", default=None)
    p_suite.add_argument("--threads", type=int, default=1)
    p_suite.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, out_dir=args.out, threads=args.threads, seed=args.seed)
    return suite(args.manifest, out_dir=args.out, threads=args.threads, seed=args.seed)


if __name__ == "__main__":
    sys.exit(main())
