"""Command-line entry point: ``ruinlab {ruin,limits,validate,edpf} --config FILE``.

Exit codes: 0 success, 1 configuration error, 2 a tolerance check failed
(or a statistical check had too few paths to be decided).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigError, RuinLabError
from .estimator import BatchPlan, estimate_ruin_probability, reduce_batches, simulate_plan
from scipy import integrate

from .ladder_calculus import (
    DescendingRenewalEstimate,
    LadderSystem,
    asymptotic_ruin,
    finite_level_law,
    ladder_system,
    ruin_probability,
)
from .limit_laws import (
    edpf_limit_convolution,
    edpf_limit_cramer,
    overshoot_limit,
    q_infinity_mass,
    quintuple_limit_density,
    time_marginal_limit,
    undershoot_max_limit,
    undershoot_x_limit,
)
from .path_sim import simulate_descending_ladder_batch
from .rng import StreamSeed
from .validation import run_validation

EXIT_OK, EXIT_CONFIG, EXIT_TOLERANCE = 0, 1, 2
WORKERS_ENV = "RUINLAB_WORKERS"


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    formulas: tuple[str, ...] = ()


@dataclass
class Outcome:
    tables: list[Table]
    status: int = EXIT_OK


def _fmt_csv(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def provenance(cfg: ExperimentConfig, formulas: tuple[str, ...]) -> list[str]:
    m = cfg.model
    return [
        f"ruinlab {__version__}",
        f"model {m.fingerprint()} {json.dumps(m.as_dict(), sort_keys=True)}",
        f"seed {cfg.seed}",
        "formulas " + "; ".join(formulas),
    ]


def render_csv(table: Table, header: list[str]) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_fmt_csv(v) for v in row])
    return buf.getvalue()


def render_json(table: Table, header: list[str]) -> str:
    doc = {
        "provenance": header,
        "columns": table.columns,
        "rows": [[_json_value(v) for v in row] for row in table.rows],
    }
    return json.dumps(doc, indent=1) + "\n"


def write_outputs(cfg: ExperimentConfig, outcome: Outcome, out_dir: str, fmt: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for t in outcome.tables:
        header = provenance(cfg, t.formulas)
        text = render_csv(t, header) if fmt == "csv" else render_json(t, header)
        path = os.path.join(out_dir, f"{t.name}.{fmt}")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths.append(path)
    return paths


def _short(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return _fmt_csv(v)


def print_table(t: Table, stream=None) -> None:
    stream = sys.stdout if stream is None else stream
    cells = [t.columns] + [[_short(v) for v in r] for r in t.rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(t.columns))]
    stream.write(f"== {t.name}\n")
    for row in cells:
        stream.write("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")


def _system(cfg: ExperimentConfig) -> LadderSystem:
    return ladder_system(cfg.model)


def _auto_method(system: LadderSystem, u: float, analytic: float, paths: int) -> str:
    if u == 0 or analytic * paths >= 1000:
        return "plain"
    if system.regime.is_cramer:
        return "tilted"
    if system.regime.is_convolution_equivalent:
        return "mixture"
    return "plain"


def cmd_ruin(cfg: ExperimentConfig, workers: int | None) -> Outcome:
    """Analytic ruin probability, Monte Carlo estimate and large-u approximation per level."""
    sec = cfg.section("ruin")
    system = _system(cfg)
    table = Table("ruin", ["u", "analytic", "mc_estimate", "std_error", "asymptotic", "method", "z", "verdict"],
                  formulas=("P(tau(u)<inf) = q Vbar(u) (compound geometric renewal)",
                            "Cramer: (q/(alpha m*)) e^{-alpha u}; CE: q Pi_H(u,inf)/kappa(0,-alpha)^2"))
    status = EXIT_OK
    n_paths = sec["paths"] * sec["batches"]
    for i, u in enumerate(sec["u"]):
        if u < 0:
            raise ConfigError("reserve levels must be nonnegative", "ruin.u")
        analytic = float(ruin_probability(system, u))
        try:
            approx = float(asymptotic_ruin(system, u))
        except RuinLabError:
            approx = math.nan
        method = sec["method"] if sec["method"] != "auto" else _auto_method(system, u, analytic, n_paths)
        if method != "plain" and u == 0:
            method = "plain"
        plan = BatchPlan(sec["paths"], sec["batches"], cfg.seed, first_stream=i * 10_000)
        r = estimate_ruin_probability(cfg.model, u, plan, method, workers).against(analytic, sec["n_se"])
        if r.verdict == "fail":
            status = EXIT_TOLERANCE
        table.rows.append([u, analytic, r.estimate, r.std_error, approx, method, r.z_score, r.verdict])
    return Outcome([table], status)


def _law_table(name: str, law, x: np.ndarray, formula: str) -> Table:
    t = Table(name, ["x", "density", "tail", "atom", "total_mass", "convergence_mode"], formulas=(formula,))
    dens, tails = law.density(x), law.tail(x)
    for xi, di, ti in zip(x, dens, tails):
        t.rows.append([float(xi), float(di), float(ti), float(law.atom_at_zero), law.total_mass, law.convergence_mode])
    return t


def cmd_limits(cfg: ExperimentConfig, workers: int | None) -> Outcome:
    """Density grids of the limit laws, the joint density, passage-delay cells and a mass report."""
    sec = cfg.section("limits")
    out = cfg.output
    system = _system(cfg)
    x = np.arange(0.0, out["grid_end"] + 0.5 * out["grid_step"], out["grid_step"])
    over = overshoot_limit(system)
    umax = undershoot_max_limit(system)
    upath = undershoot_x_limit(system)
    tables = [
        _law_table("limit_overshoot", over, x, "(alpha/q) int e^{alpha y} pi_H(y+x) dy [+ (alpha/q) kappa(0,-alpha) e^{-alpha x}]"),
        _law_table("limit_undershoot_max", umax, x, "(alpha/q) e^{alpha y} Pi_H(y,inf)"),
        _law_table("limit_undershoot_path", upath, x, "(alpha/q) e^{alpha x} Pi_X(x,inf) int_0^x e^{-alpha v} hatV(dv)"),
    ]
    q5 = quintuple_limit_density(system)
    g = np.linspace(0.0, min(out["grid_end"], 5.0), 11)
    tq = Table("limit_joint_grid", ["y", "x", "v", "density"],
               formulas=("(alpha/q) e^{alpha y} 1(v>=y) hatV-density lambda f(v+x)",))
    tq.rows = [list(r) for r in q5.grid_rows(g, g, g)]
    tables.append(tq)
    edges = np.asarray(sec["quintuple_edges"], dtype=float)
    cells = q5.cell_masses(edges, edges, edges)
    tc = Table("limit_joint_cells", ["y_lo", "y_hi", "x_lo", "x_hi", "v_lo", "v_hi", "mass"],
               formulas=("cell integrals of the joint limit density",))
    for i in range(edges.size - 1):
        for j in range(edges.size - 1):
            for k in range(edges.size - 1):
                tc.rows.append([edges[i], edges[i + 1], edges[j], edges[j + 1], edges[k], edges[k + 1], cells[i, j, k]])
    tables.append(tc)

    time_edges = np.asarray(sec["time_edges"], dtype=float)
    horizon = max(sec["ladder_horizon"], float(time_edges[-1]))
    ladders = simulate_descending_ladder_batch(cfg.model, sec["ladder_paths"], horizon, StreamSeed(cfg.seed, 0))
    tl = time_marginal_limit(system, DescendingRenewalEstimate(ladders, time_edges, system.scale))
    tt = Table("limit_passage_delay", ["t_lo", "t_hi", "mass", "std_error"],
               formulas=("K(dt)/q, K(dt) = int (e^{alpha z}-1) Pi_{L^-1,H}(dt,dz) [+ CE term]",))
    for a, b, m, s in zip(time_edges[:-1], time_edges[1:], tl.mass, tl.std_error):
        tt.rows.append([a, b, m, s])
    tables.append(tt)

    qm = q_infinity_mass(system)
    mass = Table("limit_masses", ["law", "total_mass", "expected_mass", "convergence_mode", "status"],
                 formulas=("|Q_inf| = 1 - kappa(0,-alpha)/q",))
    status = EXIT_OK
    entries = [
        ("overshoot", over.total_mass, 1.0, over.convergence_mode, 1e-6),
        ("undershoot_max", umax.total_mass, qm, umax.convergence_mode, 1e-6),
        ("undershoot_path", upath.total_mass, qm, upath.convergence_mode, 1e-6),
        ("joint", q5.total_mass(), qm, umax.convergence_mode, 1e-6),
        ("passage_delay", tl.total_mass, 1.0, "weak", 3 * tl.total_std_error),
    ]
    for name, got, want, mode, tol in entries:
        ok = abs(got - want) <= tol
        status = status if ok else EXIT_TOLERANCE
        mass.rows.append([name, got, want, mode, "pass" if ok else "fail"])
    tables.append(mass)
    return Outcome(tables, status)


def cmd_validate(cfg: ExperimentConfig, workers: int | None) -> Outcome:
    """Run the invariant suite; any fail or undecided check gives exit code 2."""
    sec = cfg.section("validate")
    rows = run_validation(cfg.model, cfg.seed, sec["paths"], sec["batches"], sec["u_check"], workers)
    t = Table("validate", ["check", "kind", "value", "target", "tolerance", "status"],
              formulas=("see check names",))
    t.rows = [r.row() for r in rows]
    status = EXIT_OK if all(r.status == "pass" for r in rows) else EXIT_TOLERANCE
    return Outcome([t], status)


@dataclass(frozen=True)
class _Penalty:
    delta: float
    lam_p: float
    eta: float

    def __call__(self, b):
        with np.errstate(over="ignore"):
            return np.exp(-self.delta * b.passage_delay + self.lam_p * b.undershoot_max + self.eta * b.overshoot)


def _finite_exp_overshoot(system: LadderSystem, u: float, eta: float) -> float:
    """E[e^{eta O} | ruin] at level u from the exact finite-level overshoot law."""
    if eta == 0:
        return 1.0
    law = finite_level_law(system, u)
    f = lambda x: math.exp(eta * x) * float(law.overshoot_tail(x))
    head = integrate.quad(f, 0.0, 50.0, limit=200)[0]
    return 1.0 + eta * (head + integrate.quad(f, 50.0, math.inf, limit=200)[0])


def cmd_edpf(cfg: ExperimentConfig, workers: int | None) -> Outcome:
    """Limiting penalty functions over a parameter grid with a Monte Carlo column at level mc_u."""
    sec = cfg.section("edpf")
    system = _system(cfg)
    cramer = system.regime.is_cramer
    check = sec["mc_check"] if sec["mc_check"] is not None else cramer
    plan = BatchPlan(sec["paths"], sec["batches"], cfg.seed)
    method = "tilted" if cramer else "mixture"
    batches = simulate_plan(cfg.model, sec["mc_u"], plan, method, workers)
    status = EXIT_OK
    if cramer:
        t = Table("edpf", ["lam_p", "eta", "delta", "limit", "finite_u", "mc_estimate", "std_error", "z", "verdict"],
                  formulas=("alpha (kappa(d,-(lam_p+alpha)) - kappa(d,-eta)) / (q (eta-lam_p-alpha))",))
        grid = [(lp, e, d) for lp in sec["lam_p"] for e in sec["eta"] for d in sec["delta"]]
    else:
        t = Table("edpf", ["beta", "delta", "limit", "finite_u", "mc_estimate", "std_error", "z", "verdict"],
                  formulas=("-alpha psi(alpha)/(q (alpha-beta) hatkappa(d,alpha)) + alpha (kappa(d,-beta)-kappa(d,-alpha))/(q (alpha-beta))",))
        grid = [(0.0, b, d) for b in sec["beta"] for d in sec["delta"]]
    for lp, e, d in grid:
        try:
            if cramer:
                lim = edpf_limit_cramer(system, lp, e, d)
            else:
                lim = edpf_limit_convolution(system, None, e, d)
        except ValueError as exc:
            raise ConfigError(str(exc), "edpf") from None
        r = reduce_batches(batches, _Penalty(d, lp, e), method, plan, sec["mc_u"])
        verdict = "n/a"
        z = (r.estimate - lim) / r.std_error if r.std_error > 0 else math.nan
        if check:
            r = r.against(lim)
            verdict = r.verdict
            if verdict == "fail":
                status = EXIT_TOLERANCE
        finite = _finite_exp_overshoot(system, sec["mc_u"], e) if lp == 0 and d == 0 else math.nan
        row = [lp, e, d] if cramer else [e, d]
        t.rows.append(row + [lim, finite, r.estimate, r.std_error, z, verdict])
    return Outcome([t], status)


COMMANDS = {"ruin": cmd_ruin, "limits": cmd_limits, "validate": cmd_validate, "edpf": cmd_edpf}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ruinlab", description="Ruin probabilities and limit laws near ruin.")
    p.add_argument("--version", action="version", version=f"ruinlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--seed", type=int, default=None, metavar="N")
        sp.add_argument("--workers", type=int, default=None, metavar="N",
                        help=f"worker processes (default: ${WORKERS_ENV} or 1)")
        sp.add_argument("--out", default=None, metavar="DIR")
        sp.add_argument("--format", choices=("csv", "json"), default=None)
    return p


def _workers(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(WORKERS_ENV)
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must fit in 64 bits", "--seed")
            cfg = ExperimentConfig(cfg.model, args.seed, cfg.output, cfg.sections, cfg.source)
        workers = _workers(args.workers)
        if workers < 1:
            raise ConfigError("workers must be positive", "--workers")
        outcome = COMMANDS[args.command](cfg, workers)
    except ConfigError as exc:
        print(f"ruinlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or cfg.output["path"]
    fmt = args.format or cfg.output["format"]
    write_outputs(cfg, outcome, out_dir, fmt)
    for t in outcome.tables:
        if len(t.rows) <= 60:
            print_table(t)
        else:
            print(f"== {t.name}: {len(t.rows)} rows written")
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
