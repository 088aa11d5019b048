"""Command-line front end.

``nsls solve-regression``, ``nsls top-eigenvector``, ``nsls gen``,
``nsls stats`` and ``nsls verify``.  Every run is described by a
:class:`RunConfig`, echoed into its report, and ``--config run.json``
replays one.  Exit codes: 0 success, 2 non-convergence or failed
verification, 3 input error, 4 config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .eigensolver import DEFAULT_WINDOW, EigenAccelConfig, EigenConfig, top_eigenvector
from .generator import GenSpec, GeneratorError, generate, measure_family
from .oracle import DenseOracle, OracleLimitError, SingularError
from .regression import (AccelConfig, RegressionConfig, RegressionProblem, SingularMatrixError,
                         mu_search, solve)
from .report import _jsonable
from .rng import default_seed
from .sparse_matrix import (DENSE_ORACLE_LIMIT, MatrixMarketError, RowMatrix, SpectrumError,
                            load_matrix_market, write_matrix_market)
from .svrg import NotStronglyConvexError
from .verify import verify_matrix

log = logging.getLogger("nsls")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_INPUT = 3
EXIT_CONFIG = 4

COMMANDS = ("solve-regression", "top-eigenvector", "gen", "stats", "verify")


class InputError(Exception):
    pass


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a run depends on; ``seed`` is resolved before the run starts."""

    command: str
    input: Optional[str] = None
    gen: Optional[dict] = None
    rhs: Optional[str] = None
    epsilon: Optional[float] = None
    seed: Optional[int] = None
    accel: bool = False
    k: Optional[float] = None
    mu: Optional[float] = None
    lambda1: Optional[float] = None
    gap: Optional[float] = None
    accel_param: Optional[float] = None
    power_budget: Optional[int] = None
    shift_window: tuple = DEFAULT_WINDOW
    draws: int = 100_000
    output: Optional[str] = None
    format: str = "json"
    inject_bias: float = 0.0

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")
        if self.seed is None:
            self.seed = default_seed()
        self.shift_window = tuple(float(x) for x in self.shift_window)
        if self.command in ("solve-regression", "top-eigenvector", "stats", "verify"):
            if (self.input is None) == (self.gen is None):
                raise ConfigError("give exactly one of --input or the generator flags")
        if self.command == "gen" and self.gen is None:
            raise ConfigError("gen needs generator flags (--n, --d, ...)")
        if self.epsilon is not None and not (0 < self.epsilon < 1):
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.draws < 10_000:
            raise ConfigError("draws must be at least 10^4")

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**raw)


# -- inputs ---------------------------------------------------------------


def _gen_spec(raw: dict) -> GenSpec:
    try:
        return GenSpec(**raw)
    except (TypeError, GeneratorError) as exc:
        raise ConfigError(str(exc)) from exc


def load_input(cfg: RunConfig) -> RowMatrix:
    if cfg.gen is not None:
        return generate(_gen_spec(cfg.gen))
    try:
        return load_matrix_market(cfg.input)
    except MatrixMarketError as exc:
        raise InputError(f"{cfg.input}: {exc}") from exc
    except OSError as exc:
        raise InputError(f"{cfg.input}: {exc.strerror or exc}") from exc


def load_rhs(cfg: RunConfig, mat: RowMatrix) -> np.ndarray:
    """``--rhs`` file (one number per line) or, by default, ``b = A 1`` so ``x* = 1``."""
    if cfg.rhs is None:
        return mat.matvec(np.ones(mat.n_cols))
    try:
        b = np.atleast_1d(np.loadtxt(cfg.rhs, dtype=float))
    except (OSError, ValueError) as exc:
        raise InputError(f"{cfg.rhs}: {exc}") from exc
    if b.shape != (mat.n_rows,):
        raise InputError(f"{cfg.rhs}: expected {mat.n_rows} values, got {b.size}")
    return b


def _desk_scale(mat: RowMatrix) -> bool:
    return mat.n_rows * mat.n_cols <= DENSE_ORACLE_LIMIT


# -- commands -------------------------------------------------------------


def cmd_solve_regression(cfg: RunConfig) -> tuple[int, dict]:
    mat = load_input(cfg)
    b = load_rhs(cfg, mat)
    oracle = DenseOracle(mat) if _desk_scale(mat) else None
    mu_source = "given"
    mu = cfg.mu
    if mu is None:
        if oracle is not None:
            if oracle.is_singular():
                raise InputError("matrix appears singular (A^T A has a zero eigenvalue)")
            mu, mu_source = float(oracle.eig[0][-1]), "dense oracle"
        else:
            prob0 = RegressionProblem(mat, b)
            mu, mu_source = mu_search(prob0, RegressionConfig(seed=cfg.seed)).mu, "mu search"
    rcfg = RegressionConfig(epsilon=cfg.epsilon or 1e-6, k_override=cfg.k, seed=cfg.seed,
                            lambda1=cfg.lambda1,
                            accel=AccelConfig(enabled=cfg.accel, lam_override=cfg.accel_param))
    prob = RegressionProblem(mat, b, mu=mu)
    x, rep = solve(prob, rcfg)
    rep.config["mu_source"] = mu_source
    if oracle is not None:
        try:
            xs = oracle.solve(b)
        except SingularError:
            xs = None
        if xs is not None:
            e0 = mat.matvec(prob.x_init - xs)
            e = mat.matvec(x - xs)
            den = float(np.linalg.norm(e0))
            ratio = float(np.linalg.norm(e)) / den if den > 0 else 0.0
            rep.final_metrics["oracle_ata_ratio"] = ratio
            rep.final_metrics["oracle_ok"] = ratio <= rcfg.epsilon
    out = rep.to_dict()
    out["run_config"] = cfg.to_dict()
    out["solution"] = x.tolist()
    return (EXIT_OK if rep.converged else EXIT_NOT_CONVERGED), out


def cmd_top_eigenvector(cfg: RunConfig) -> tuple[int, dict]:
    mat = load_input(cfg)
    try:
        ecfg = EigenConfig(epsilon=cfg.epsilon or 1e-3, gap_lower_bound=cfg.gap, seed=cfg.seed,
                           accel=EigenAccelConfig(enabled=cfg.accel,
                                                  gamma_override=cfg.accel_param),
                           shift_window=cfg.shift_window, lambda1=cfg.lambda1,
                           power_budget=cfg.power_budget)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        v, rep = top_eigenvector(mat, ecfg)
    except SpectrumError as exc:
        raise InputError(str(exc)) from exc
    if _desk_scale(mat):
        sp = DenseOracle(mat).spectrum()
        rq = float(v @ mat.gram_matvec(v))
        rep.final_metrics["oracle_lambda1"] = sp.lambda1
        rep.final_metrics["oracle_gap"] = sp.gap
        rep.final_metrics["oracle_quality"] = rq / sp.lambda1 if sp.lambda1 > 0 else 1.0
        rep.final_metrics["oracle_ok"] = rq >= (1.0 - ecfg.epsilon) * sp.lambda1
    out = rep.to_dict()
    out["run_config"] = cfg.to_dict()
    out["eigenvector"] = v.tolist()
    return (EXIT_OK if rep.converged else EXIT_NOT_CONVERGED), out


def cmd_gen(cfg: RunConfig) -> tuple[int, dict]:
    spec = _gen_spec(cfg.gen)
    mat = generate(spec)
    out = {"run_config": cfg.to_dict(), "summary": measure_family(mat)}
    if cfg.output is not None:
        write_matrix_market(mat, cfg.output)
        out["matrix_path"] = cfg.output
    return EXIT_OK, out


def cmd_stats(cfg: RunConfig) -> tuple[int, dict]:
    mat = load_input(cfg)
    return EXIT_OK, {"run_config": cfg.to_dict(), "summary": measure_family(mat)}


def cmd_verify(cfg: RunConfig) -> tuple[int, dict]:
    mat = load_input(cfg)
    try:
        res = verify_matrix(mat, k=cfg.k or 1.0, draws=cfg.draws, seed=cfg.seed,
                            inject_bias=cfg.inject_bias)
    except (OracleLimitError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    for r in res:
        print(r.line(), file=sys.stderr)
    ok = all(r.passed for r in res)
    out = {"run_config": cfg.to_dict(), "passed": ok, "lemmas": [r.to_dict() for r in res]}
    return (EXIT_OK if ok else EXIT_NOT_CONVERGED), out


HANDLERS = {"solve-regression": cmd_solve_regression, "top-eigenvector": cmd_top_eigenvector,
            "gen": cmd_gen, "stats": cmd_stats, "verify": cmd_verify}


# -- output ---------------------------------------------------------------


def _flatten(d: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            if all(not isinstance(x, (dict, list)) for x in v):
                flat[key] = ";".join("" if x is None else str(x) for x in v)
        else:
            flat[key] = v
    return flat


def render(out: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(out, indent=2, sort_keys=True) + "\n"
    body = dict(out)
    body.pop("trace", None)
    flat = _flatten(body)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=sorted(flat), lineterminator="\n")
    w.writeheader()
    w.writerow(flat)
    return buf.getvalue()


def emit(out: dict, cfg: RunConfig) -> None:
    text = render(out, cfg.format)
    if cfg.output is not None and cfg.command != "gen":
        Path(cfg.output).write_text(text)
    else:
        sys.stdout.write(text)


# -- argument parsing -----------------------------------------------------


def _spectrum_arg(text: str):
    text = text.strip()
    if text.startswith("flat:"):
        return ("flat", float(text[5:]))
    return tuple(float(x) for x in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsls", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_input=True):
        sp.add_argument("--config", help="replay a RunConfig JSON file (other flags ignored)")
        if needs_input:
            sp.add_argument("--input", help="Matrix Market file")
        g = sp.add_argument_group("generated input")
        g.add_argument("--n", type=int)
        g.add_argument("--d", type=int)
        g.add_argument("--target-s", type=float, default=1.0)
        g.add_argument("--decay", type=float)
        g.add_argument("--spectrum", type=_spectrum_arg,
                       help="comma-separated singular values, or flat:VALUE")
        g.add_argument("--row-norm", type=float, default=1.0)
        g.add_argument("--gen-seed", type=int, default=0)
        sp.add_argument("--seed", type=int, help="solver seed (default: $NSLS_SEED or 0)")
        sp.add_argument("--output", help="report path (gen: Matrix Market path)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")

    sr = sub.add_parser("solve-regression", help="least squares min ||Ax - b||")
    common(sr)
    sr.add_argument("--rhs", help="text file with b (default b = A 1)")
    sr.add_argument("--epsilon", type=float, default=1e-6)
    sr.add_argument("--accel", action="store_true")
    sr.add_argument("--accel-lambda", dest="accel_param", type=float)
    sr.add_argument("--k", type=float)
    sr.add_argument("--mu", type=float)
    sr.add_argument("--lambda1", type=float)

    te = sub.add_parser("top-eigenvector", help="top eigenvector of A^T A")
    common(te)
    te.add_argument("--epsilon", type=float, default=1e-3)
    te.add_argument("--gap", type=float)
    te.add_argument("--accel", action="store_true")
    te.add_argument("--accel-gamma", dest="accel_param", type=float)
    te.add_argument("--lambda1", type=float)
    te.add_argument("--power-budget", type=int)
    te.add_argument("--shift-window", type=float, nargs=2, default=list(DEFAULT_WINDOW))

    gn = sub.add_parser("gen", help="generate a synthetic matrix")
    common(gn, needs_input=False)

    st = sub.add_parser("stats", help="numerical sparsity and spectral summary")
    common(st)

    vf = sub.add_parser("verify", help="check every estimator lemma on a matrix")
    common(vf)
    vf.add_argument("--k", type=float)
    vf.add_argument("--draws", type=int, default=100_000)
    vf.add_argument("--inject-bias", type=float, default=0.0, help=argparse.SUPPRESS)
    return p


def _gen_from_args(ns) -> Optional[dict]:
    if ns.n is None and ns.d is None:
        return None
    if ns.n is None or ns.d is None:
        raise ConfigError("generated input needs both --n and --d")
    spectrum = ns.spectrum
    if isinstance(spectrum, tuple) and spectrum and spectrum[0] == "flat":
        spectrum = [spectrum[1]] * min(ns.n, ns.d)
    return {"n": ns.n, "d": ns.d, "target_s": ns.target_s, "decay": ns.decay,
            "spectrum": list(spectrum) if spectrum is not None else None,
            "row_norm": ns.row_norm, "seed": ns.gen_seed}


def config_from_args(ns) -> RunConfig:
    if getattr(ns, "config", None):
        try:
            raw = json.loads(Path(ns.config).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{ns.config}: {exc}") from exc
        if raw.get("command", ns.command) != ns.command:
            raise ConfigError(f"config is for {raw['command']!r}, not {ns.command!r}")
        raw["command"] = ns.command
        return RunConfig.from_dict(raw)
    kw = dict(command=ns.command, gen=_gen_from_args(ns), seed=ns.seed, output=ns.output,
              format=ns.format)
    for name in ("input", "rhs", "epsilon", "accel", "k", "mu", "lambda1", "gap",
                 "accel_param", "power_budget", "draws", "inject_bias"):
        if hasattr(ns, name):
            kw[name] = getattr(ns, name)
    if hasattr(ns, "shift_window"):
        kw["shift_window"] = tuple(ns.shift_window)
    return RunConfig(**kw)


def run(cfg: RunConfig) -> tuple[int, dict]:
    """Execute ``cfg``; returns the exit code and the report (not written)."""
    return HANDLERS[cfg.command](cfg)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; 2 here means "not converged"
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if ns.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(ns)
        code, out = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, SingularMatrixError, NotStronglyConvexError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    emit(out, cfg)
    if code == EXIT_NOT_CONVERGED:
        print(f"not converged: {out.get('status', 'verification failed')}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
