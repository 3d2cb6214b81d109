"""Batch experiment runner.

    svde <command> --config <file> [--assert] [--out <csv>]

The config is flat ``key = value`` lines with ``#`` comments; lists are
comma-separated. Output is CSV with the columns in ``COLUMNS``. Exit codes:
0 success, 2 invalid config, 3 a statistical check failed under ``--assert``.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial

from . import girsanov, kernel, mollify, sensitivity, solver
from .grid_noise import make_grid, sample_brownian, sample_brownian_batch, zero_path

COMMANDS = ("solve", "girsanov-check", "oracle-compare", "derivative-check",
            "cauchy-check", "mollify-study", "holder-study")
KERNEL_PRESETS = ("none", "constant", "linear_x", "sign_x", "cos_x", "sin_x", "sin_kernel", "fractional", "poly")
COLUMNS = ("command", "kernel", "T", "N", "d", "n_paths", "seed", "metric", "value", "std_error", "status")

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT = 0, 2, 3

_KEYS = {
    "command", "kernel", "power", "c", "lambda", "scale", "field", "K_max", "alpha", "n_max",
    "powers", "fields", "T", "N", "d", "x", "seed", "n_paths", "phi", "levels", "quad_points",
    "noise", "t_index", "path_index", "method", "f", "degree", "k", "h", "tol", "fraction",
    "holder_exponents", "n_boot", "out", "z",
}


class ConfigError(ValueError):
    pass


def _floats(v: str) -> list[float]:
    return [float(p) for p in v.split(",") if p.strip()]


def _ints(v: str) -> list[int]:
    out = []
    for p in v.split(","):
        if p.strip():
            f = float(p)
            if f != int(f):
                raise ConfigError(f"expected integer, got {p!r}")
            out.append(int(f))
    return out


def parse_config(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        out[key] = val
    return out


@dataclass
class ExperimentConfig:
    command: str
    kernel: str = "constant"
    T: float = 1.0
    N: list[int] = field(default_factory=lambda: [100])
    d: int = 1
    x: np.ndarray = None
    seed: int = 0
    n_paths: int = 1000
    phi: list[str] = field(default_factory=lambda: ["id"])
    levels: list[int] = field(default_factory=lambda: [4, 16, 64])
    raw: dict = field(default_factory=dict)

    @property
    def grid(self):
        return make_grid(self.T, self.N[0])

    def get(self, key, default, conv=str):
        return conv(self.raw[key]) if key in self.raw else default

    @classmethod
    def from_mapping(cls, raw: dict[str, str], command: str | None = None) -> "ExperimentConfig":
        cmd = command or raw.get("command")
        if raw.get("command") and command and raw["command"] != command:
            raise ConfigError(f"config command {raw['command']!r} disagrees with {command!r}")
        if cmd not in COMMANDS:
            raise ConfigError(f"unknown command {cmd!r}; known: {', '.join(COMMANDS)}")
        try:
            cfg = cls(
                command=cmd,
                kernel=raw.get("kernel", "constant"),
                T=float(raw.get("T", 1.0)),
                N=_ints(raw.get("N", "100")),
                d=int(raw.get("d", 1)),
                seed=int(raw.get("seed", 0)),
                n_paths=int(float(raw.get("n_paths", 1000))),
                phi=[p.strip() for p in _split_phi(raw.get("phi", "id"))],
                levels=_ints(raw.get("levels", "4,16,64")),
                raw=dict(raw),
            )
            xs = _floats(raw.get("x", "0"))
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if cfg.kernel not in KERNEL_PRESETS:
            raise ConfigError(f"unknown kernel preset {cfg.kernel!r}")
        if not cfg.T > 0:
            raise ConfigError("T must be positive")
        if not cfg.N or min(cfg.N) < 1:
            raise ConfigError("N must be >= 1")
        if cfg.d < 1:
            raise ConfigError("d must be >= 1")
        if len(xs) not in (1, cfg.d):
            raise ConfigError(f"x needs 1 or d={cfg.d} values")
        cfg.x = np.full(cfg.d, xs[0]) if len(xs) == 1 else np.array(xs)
        if cfg.kernel == "fractional":
            alpha = cfg.get("alpha", -0.25, float)
            if not -0.5 < alpha < 0:
                raise ConfigError("fractional kernel needs alpha in (-1/2, 0)")
            if not cfg.T < 2:
                raise ConfigError("fractional kernel needs T < 2")
        for name in cfg.phi:
            girsanov.phi_preset(name)
        return cfg


def _split_phi(v: str) -> list[str]:
    # commas inside parentheses belong to the argument list
    out, depth, cur = [], 0, ""
    for ch in v:
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    out.append(cur)
    return [p for p in out if p.strip()]


def _field(cfg: ExperimentConfig, name: str) -> kernel.CoefficientField:
    params = {}
    if "c" in cfg.raw:
        params["c"] = _floats(cfg.raw["c"])
    if "lambda" in cfg.raw:
        params["lam"] = float(cfg.raw["lambda"])
    if "scale" in cfg.raw:
        params["scale"] = float(cfg.raw["scale"])
    return kernel.field_preset(name, **params)


def build_kernel(cfg: ExperimentConfig) -> kernel.KernelSeries:
    name, T = cfg.kernel, cfg.T
    if name == "none":
        return kernel.KernelSeries([], T)
    if name == "sin_kernel":
        return kernel.sin_kernel(_field(cfg, cfg.get("field", "cos_x")), cfg.get("K_max", 8, int), T)
    if name == "fractional":
        return kernel.fractional_kernel(cfg.get("alpha", -0.25, float), _field(cfg, cfg.get("field", "cos_x")),
                                        cfg.get("n_max", 50, int), T)
    if name == "poly":
        powers = _ints(cfg.get("powers", "0"))
        fields = [f.strip() for f in cfg.get("fields", "constant").split(",")]
        if len(powers) != len(fields):
            raise ConfigError("powers and fields need the same length")
        return kernel.KernelSeries([(m, _field(cfg, f)) for m, f in zip(powers, fields)], T)
    return kernel.KernelSeries([(cfg.get("power", 0, int), _field(cfg, name))], T)


# ---------------------------------------------------------------- commands

Row = tuple  # (metric, value, std_error, status)


def _solve(cfg, K):
    grid = cfg.grid
    if cfg.get("noise", "on") in ("off", "0", "false", "no"):
        B = zero_path(grid, cfg.d)
    else:
        B = sample_brownian(grid, cfg.d, cfg.seed, cfg.get("path_index", 0, int))
    X = solver.solve_euler(K, cfg.x, B, grid, cfg.get("method", "auto"))
    t = grid.nodes
    return [(f"X[t={t[i]:.17g},c={c}]", X.values[i, c], math.nan, "")
            for i in range(grid.N + 1) for c in range(cfg.d)]


def _girsanov_check(cfg, K):
    grid = cfg.grid
    t_index = cfg.get("t_index", grid.N, int)
    samples = girsanov.weighted_samples(K, cfg.x, t_index, grid, cfg.n_paths, cfg.seed)
    diag = girsanov.weight_diagnostics(samples)
    z = cfg.get("z", 3.0, float)
    ok = abs(diag["mean_weight"] - 1) <= z * diag["mean_weight_se"]
    ess_frac = diag["effective_sample_size"] / cfg.n_paths
    return [
        ("mean_weight", diag["mean_weight"], diag["mean_weight_se"], "PASS" if ok else "FAIL"),
        ("weight_variance", diag["weight_variance"], math.nan, ""),
        ("effective_sample_size", diag["effective_sample_size"], math.nan, ""),
        ("ess_fraction", ess_frac, math.nan, "PASS" if ess_frac >= 0.5 else "FAIL"),
    ]


def _oracle_compare(cfg, K):
    grid = cfg.grid
    t_index = cfg.get("t_index", grid.N, int)
    states = solver.euler_states(K, cfg.x, grid, cfg.n_paths, cfg.seed, t_index, cfg.get("method", "auto"))
    # independent noise for the weighted estimator
    g_seed = cfg.seed + 1
    samples = girsanov.weighted_samples(K, cfg.x, t_index, grid, cfg.n_paths, g_seed)
    w_states = np.array([s.terminal_state for s in samples])
    w = np.exp(np.array([s.log_weight for s in samples]))
    z = cfg.get("z", 3.0, float)
    rows = []
    n = cfg.n_paths
    for name in cfg.phi:
        phi = girsanov.phi_preset(name)
        ev, gv = phi(states), phi(w_states) * w
        e, e_se = ev.mean(), ev.std(ddof=1) / math.sqrt(n)
        g, g_se = gv.mean(), gv.std(ddof=1) / math.sqrt(n)
        comb = math.hypot(e_se, g_se)
        rows += [
            (f"euler_estimate[{name}]", e, e_se, ""),
            (f"girsanov_estimate[{name}]", g, g_se, ""),
            (f"difference[{name}]", e - g, comb, "PASS" if abs(e - g) <= z * comb else "FAIL"),
        ]
    return rows


def _derivative_check(cfg, K):
    grid = cfg.grid
    h = cfg.get("h", 1e-4, float)
    tol = cfg.get("tol", 1e-3, float)
    need = cfg.get("fraction", 0.95, float)
    B = sample_brownian_batch(grid, cfg.d, cfg.seed, range(cfg.n_paths))
    method = cfg.get("method", "auto")
    X = solver.solve_euler(K, cfg.x, B, grid, method)
    F = sensitivity.flow_derivative(K, X, method=method)[:, -1]
    errs = []
    for c in range(cfg.d):
        e = np.zeros(cfg.d)
        e[c] = h
        fd = (solver.solve_euler(K, cfg.x + e, B, grid, method).terminal
              - solver.solve_euler(K, cfg.x - e, B, grid, method).terminal) / (2 * h)
        errs.append(np.linalg.norm(fd - F[..., :, c], axis=-1) / np.linalg.norm(F[..., :, c], axis=-1))
    rel = np.max(np.stack(errs, axis=1), axis=1)
    frac = float(np.mean(rel <= tol))
    fro = np.linalg.norm(F, axis=(-2, -1))
    return [
        ("flow_fd_max_rel_error", float(rel.max()), math.nan, ""),
        ("flow_fd_fraction_within_tol", frac, math.nan, "PASS" if frac >= need else "FAIL"),
        ("flow_derivative_L2", float(np.sqrt(np.mean(fro ** 2))),
         float(np.std(fro ** 2, ddof=1) / math.sqrt(cfg.n_paths) / (2 * np.sqrt(np.mean(fro ** 2)))), ""),
    ]


def _cauchy_check(cfg, K):
    k = cfg.get("k", 2, int)
    f_name = cfg.get("f", "monomial")
    if f_name != "monomial":
        raise ConfigError("cauchy-check supports f = monomial")
    deg = cfg.get("degree", 1, int)
    f = Polynomial([0] * deg + [1])
    rows, res = [], []
    for N in cfg.N:
        r = kernel.cauchy_check(f, k, make_grid(cfg.T, N))
        res.append(r)
        rows.append((f"residual[N={N}]", r, math.nan, ""))
    rows.append(("residual_exact_quadrature", kernel.cauchy_check(f, k, cfg.grid, "exact"), math.nan, ""))
    if len(cfg.N) >= 2:
        order = np.polyfit(np.log(cfg.N), np.log(res), 1)[0] * -1
        ok = abs(order - 1.0) <= cfg.get("tol", 0.3, float)
        rows.append(("convergence_order", float(order), math.nan, "PASS" if ok else "FAIL"))
    return rows


def _mollify_study(cfg, K):
    grid = cfg.grid
    t_index = cfg.get("t_index", grid.N, int)
    q = cfg.get("quad_points", 16, int)
    Ks = [mollify.mollify_kernel(K, n, q, cfg.d) for n in cfg.levels]
    rows = []
    z = cfg.get("z", 3.0, float)
    for name in cfg.phi:
        tab = mollify.weak_convergence_study(Ks, cfg.x, name, t_index, grid, cfg.n_paths, cfg.seed,
                                             reference=K, levels=cfg.levels)
        for lv, est, se in tab.rows():
            rows.append((f"estimate[{name},n={lv}]", est, se, ""))
        rows.append((f"final_within_reference[{name}]", tab.estimates[-1] - tab.reference,
                     tab.combined_se(-1), "PASS" if tab.final_within(z) else "FAIL"))
        rows.append((f"trend[{name}]", abs(tab.estimates[-1] - tab.reference)
                     - abs(tab.estimates[0] - tab.reference), tab.combined_se(-1),
                     "PASS" if tab.trend_ok(z) else "FAIL"))
    return rows


def _holder_study(cfg, K):
    grid = cfg.grid
    exps = _ints(cfg.get("holder_exponents", "2,3,4,5,6"))
    pairs = sensitivity.dyadic_pairs(grid, exps)
    res = sensitivity.holder_statistic(K, cfg.x, grid, cfg.n_paths, cfg.seed, pairs,
                                       n_boot=cfg.get("n_boot", 200, int))
    rows = [(f"l2_difference[lag={lag:.17g}]", l2, math.nan, "")
            for lag, l2 in zip(res.lags, res.l2_differences)]
    rows.append(("holder_slope", res.slope, res.slope_se, "PASS" if res.positive else "FAIL"))
    rows.append(("holder_slope_ci_low", res.ci_low, math.nan, ""))
    return rows


HANDLERS = {
    "solve": _solve,
    "girsanov-check": _girsanov_check,
    "oracle-compare": _oracle_compare,
    "derivative-check": _derivative_check,
    "cauchy-check": _cauchy_check,
    "mollify-study": _mollify_study,
    "holder-study": _holder_study,
}


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else format(v, ".17g")


def run(cfg: ExperimentConfig) -> tuple[list[Row], str]:
    """Execute a study; returns the rows and the CSV text."""
    K = build_kernel(cfg)
    rows = HANDLERS[cfg.command](cfg, K)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    N = cfg.N[0] if len(cfg.N) == 1 else ";".join(map(str, cfg.N))
    for metric, value, se, status in rows:
        w.writerow([cfg.command, cfg.kernel, _fmt(cfg.T), N, cfg.d, cfg.n_paths, cfg.seed,
                    metric, _fmt(value), _fmt(se), status])
    return rows, buf.getvalue()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="svde", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--assert", dest="check", action="store_true",
                    help="exit 3 if any statistical check fails")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8")
        cfg = ExperimentConfig.from_mapping(parse_config(text), args.command)
        rows, out = run(cfg)
    except (OSError, UnicodeDecodeError, ValueError) as e:
        print(f"svde: {e}", file=sys.stderr)
        return EXIT_CONFIG
    dest = args.out or (Path(cfg.raw["out"]) if "out" in cfg.raw else None)
    if dest is None:
        sys.stdout.write(out)
    else:
        dest.write_text(out, encoding="utf-8", newline="\n")
    if args.check and any(r[3] == "FAIL" for r in rows):
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
