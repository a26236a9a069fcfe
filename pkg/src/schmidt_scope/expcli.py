"""Experiment drivers and command-line front-end.

Subcommands: survey (Monte-Carlo unfaithfulness fractions), scan (noise
thresholds of a noisy pure-state family by bisection), certify (all
criteria on one state file), activation (tensor-power faithfulness
activation), witness (violation search on a state file).

Seeding precedence: --seed flag, then SCHMIDT_SCOPE_SEED, then 0. Samples
derive per-index Philox streams from (seed, index), so survey results do
not depend on the worker count.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from schmidt_scope import criteria, qstate, witness
from schmidt_scope.qstate import (
    BipartiteState,
    PureBipartiteState,
    RngStream,
    StateValidationError,
    embed,
    max_entangled_pure,
    mix,
    noisy_state,
    pure_from_vector,
    tensor_power_bipartite,
)
from schmidt_scope.sdpsolve import MARGIN_BAND, SdpError

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_SOLVER_FAILURE = 3

_SAMPLERS = {
    "hs": qstate.sample_hs,
    "bures": qstate.sample_bures,
    "real": qstate.sample_real,
}


# ---------------------------------------------------------------------------
# named states


def activation_state() -> BipartiteState:
    """Unfaithful 3x3 state whose tensor square is faithful."""
    v1 = np.zeros(9)
    v1[1 * 3 + 1] = 0.628
    v1[2 * 3 + 2] = -0.778
    v2 = np.zeros(9)
    v2[0 * 3 + 1] = 0.807
    v2[0 * 3 + 2] = -0.185
    v2[1 * 3 + 0] = -0.102
    v2[1 * 3 + 1] = -0.027
    v2[1 * 3 + 2] = 0.011
    v2[2 * 3 + 0] = 0.551
    v2[2 * 3 + 1] = -0.024
    v2[2 * 3 + 2] = -0.022
    phi1 = pure_from_vector(v1, 3, 3, normalize=True)
    phi2 = pure_from_vector(v2, 3, 3, normalize=True)
    white = BipartiteState(np.eye(9, dtype=np.complex128) / 9, 3, 3)
    return mix(
        [
            (0.999 * 0.50179, phi1.to_state()),
            (0.999 * 0.49821, phi2.to_state()),
            (0.001, white),
        ]
    )


def rank3_faithful_unfaithful_state() -> BipartiteState:
    """4x4 state of Schmidt rank 3 that is 3-unfaithful yet 2-faithful."""
    psi3 = embed(max_entangled_pure(3), 4, 4)
    chi = np.zeros(16)
    chi[2 * 4 + 3] = 1.0
    chi[3 * 4 + 2] = 1.0
    chi_state = pure_from_vector(chi, 4, 4, normalize=True)
    return mix([(0.5, psi3.to_state()), (0.5, chi_state.to_state())])


# ---------------------------------------------------------------------------
# survey (Table-style unfaithfulness fractions)


@dataclass(frozen=True)
class SurveyConfig:
    d: int
    measure: str = "hs"
    samples: int = 1000
    seed: int = 0
    criteria_set: tuple = ("ppt", "unfaithful")
    workers: int = 1

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not self.criteria_set:
            raise ValueError("criteria set must be nonempty")
        if self.measure not in _SAMPLERS:
            raise ValueError(f"unknown measure {self.measure!r}")


@dataclass
class SurveyResult:
    config: SurveyConfig
    counts: dict
    wilson_ci: dict
    wall_s: float

    @property
    def fractions(self) -> dict:
        n = self.config.samples
        return {k: v / n for k, v in self.counts.items()}

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config) | {"criteria_set": list(self.config.criteria_set)},
            "counts": self.counts,
            "fractions": self.fractions,
            "wilson_ci": self.wilson_ci,
            "wall_s": self.wall_s,
        }


def wilson_interval(k: int, n: int, z: float = 1.959963984540054):
    """95% Wilson score interval for a binomial fraction."""
    if n == 0:
        return (0.0, 1.0)
    phat = k / n
    denom = 1.0 + z**2 / n
    center = (phat + z**2 / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z**2 / (4 * n**2)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def _classify_sample(args) -> str:
    seed, idx, d, measure = args
    try:
        state = _SAMPLERS[measure](d, RngStream(seed, idx))
        if criteria.ppt_check(state).inside:
            return "s1"
        # reduction membership is a constructive ~U_2 certificate (D = 2:
        # mu = 0, M_B = rho_B satisfies every SDP row)
        if criteria.reduction_check(state).inside:
            return "u2_not_s1"
        verdict = criteria.unfaithful_margin(state, 2)
        if verdict.note.startswith("solver status"):
            return "error"
        return "u2_not_s1" if verdict.inside else "other"
    except SdpError:
        return "error"


def run_survey(cfg: SurveyConfig) -> SurveyResult:
    t0 = time.time()
    jobs = [(cfg.seed, i, cfg.d, cfg.measure) for i in range(cfg.samples)]
    if cfg.workers > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(cfg.workers) as pool:
            labels = pool.map(_classify_sample, jobs, chunksize=64)
    else:
        labels = [_classify_sample(j) for j in jobs]
    counts = {"s1": 0, "u2_not_s1": 0, "other": 0, "error": 0}
    for lab in labels:
        counts[lab] += 1
    ci = {k: wilson_interval(v, cfg.samples) for k, v in counts.items()}
    return SurveyResult(cfg, counts, ci, time.time() - t0)


# ---------------------------------------------------------------------------
# scan (noise thresholds of rho(p) = p I/d^2 + (1-p) |psi><psi|)


@dataclass(frozen=True)
class ScanConfig:
    target: PureBipartiteState
    dim: int                       # D of the unfaithfulness question
    p_lo: float = 0.0
    p_hi: float = 1.0
    tolerance: float = 1e-3
    criteria_set: tuple = ("ppt", "unfaithful", "schmidt", "reduction")
    p_grid: tuple = ()

    def __post_init__(self):
        if self.tolerance < 1e-6:
            raise ValueError("bisection tolerance must be >= 1e-6")
        if not 0.0 <= self.p_lo < self.p_hi <= 1.0:
            raise ValueError("need 0 <= p_lo < p_hi <= 1")


class BracketingError(RuntimeError):
    """The scan bounds do not bracket a sign change."""


def _scan_margin(criterion: str, psi: PureBipartiteState, dim: int, p: float) -> float:
    state = noisy_state(psi, p)
    if criterion == "ppt":
        return criteria.ppt_check(state).margin
    if criterion == "reduction":
        return criteria.reduction_check(state).margin
    if criterion == "unfaithful":
        return criteria.unfaithful_margin(state, dim).margin
    if criterion == "schmidt":
        return criteria.schmidt_hierarchy_margin(state, dim - 1, 1, sign_exit=True).margin
    raise ValueError(f"unknown scan criterion {criterion!r}")


def bisect_threshold(fn, lo: float, hi: float, tol: float):
    """Root of the margin sign flip; raises BracketingError when signless."""
    f_lo, f_hi = fn(lo), fn(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise BracketingError(
            f"margins at the bounds have the same sign: f({lo}) = {f_lo:.3e}, "
            f"f({hi}) = {f_hi:.3e}"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if abs(f_mid) <= MARGIN_BAND:
            return mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    return 0.5 * (lo + hi)


def run_scan(cfg: ScanConfig) -> dict:
    t0 = time.time()
    edges = {}
    errors = {}
    for crit in cfg.criteria_set:
        fn = lambda p, c=crit: _scan_margin(c, cfg.target, cfg.dim, p)
        try:
            edges[crit] = bisect_threshold(fn, cfg.p_lo, cfg.p_hi, cfg.tolerance)
        except BracketingError as exc:
            errors[crit] = str(exc)
    window = None
    window_empty = None
    if "unfaithful" in edges and "schmidt" in edges:
        lo, hi = edges["unfaithful"], edges["schmidt"]
        window_empty = bool(lo >= hi - 2 * cfg.tolerance)
        window = None if window_empty else (lo, hi)
    grid_rows = []
    for p in cfg.p_grid:
        row = {"p": float(p)}
        for crit in cfg.criteria_set:
            row[f"{crit}_margin"] = _scan_margin(crit, cfg.target, cfg.dim, float(p))
        grid_rows.append(row)
    return {
        "config": {
            "d_a": cfg.target.d_a,
            "d_b": cfg.target.d_b,
            "dim": cfg.dim,
            "p_lo": cfg.p_lo,
            "p_hi": cfg.p_hi,
            "tolerance": cfg.tolerance,
            "criteria_set": list(cfg.criteria_set),
        },
        "edges": edges,
        "bracketing_errors": errors,
        "window": window,
        "window_empty": window_empty,
        "grid": grid_rows,
        "wall_s": time.time() - t0,
    }


# ---------------------------------------------------------------------------
# certify


def _verdict_dict(v: criteria.CriterionVerdict) -> dict:
    return {
        "margin": v.margin,
        "band": v.band,
        "interpretation": v.interpretation,
        "target_set": v.target_set,
        "note": v.note,
    }


def certify_state(state: BipartiteState, dim: int = 2, level: int = 1,
                  with_witness: bool = False, restarts: int = 64, seed: int = 0) -> dict:
    report = {
        "d_a": state.d_a,
        "d_b": state.d_b,
        "criteria": {
            "ppt": _verdict_dict(criteria.ppt_check(state)),
            f"dps_k{level}": _verdict_dict(criteria.dps_margin(state, level)),
            f"schmidt_D{dim}_k{level}": _verdict_dict(
                criteria.schmidt_hierarchy_margin(state, dim, level)
            ),
            f"unfaithful_D{dim}": _verdict_dict(criteria.unfaithful_margin(state, dim)),
            "reduction": _verdict_dict(criteria.reduction_check(state)),
        },
    }
    if with_witness:
        cand = witness.search_witness(state, dim, restarts=restarts, rng=RngStream(seed))
        report["witness"] = {
            "dimension": cand.dimension,
            "violation": cand.violation,
            "restarts": cand.restarts_used,
            "positive": bool(cand.violation > MARGIN_BAND),
        }
    return report


# ---------------------------------------------------------------------------
# activation


def run_activation(restarts: int = 512, seed: int = 0, control: bool = True) -> dict:
    rho = activation_state()
    leg_a = criteria.unfaithful_margin(rho, 2)
    squared = tensor_power_bipartite(rho, 2)
    leg_b = witness.search_witness(squared, 2, restarts=restarts, rng=RngStream(seed))
    report = {
        "unfaithful_margin": leg_a.margin,
        "unfaithful_band": leg_a.band,
        "squared_violation": leg_b.violation,
        "restarts": restarts,
        "passed": bool(leg_a.inside and leg_b.violation > MARGIN_BAND),
    }
    if control:
        # reducible-but-entangled control: its square must stay non-violating
        psi = embed(max_entangled_pure(2), 3, 3)
        ctrl = noisy_state(psi, 0.75)
        assert criteria.reduction_check(ctrl).inside
        ctrl_sq = tensor_power_bipartite(ctrl, 2)
        cand = witness.search_witness(ctrl_sq, 2, restarts=max(8, restarts // 16),
                                      rng=RngStream(seed + 1))
        report["control_violation"] = cand.violation
        report["control_ok"] = bool(cand.violation <= MARGIN_BAND)
        report["passed"] = report["passed"] and report["control_ok"]
    return report


# ---------------------------------------------------------------------------
# rendering


def _render_text(payload: dict) -> str:
    buf = io.StringIO()

    def walk(obj, indent=0):
        pad = "  " * indent
        if isinstance(obj, dict):
            width = max((len(str(k)) for k in obj), default=0)
            for k, v in obj.items():
                if isinstance(v, (dict, list)) and v:
                    buf.write(f"{pad}{k}:\n")
                    walk(v, indent + 1)
                else:
                    buf.write(f"{pad}{str(k):<{width}}  {_fmt(v)}\n")
        elif isinstance(obj, list):
            for item in obj:
                walk(item, indent)
                if isinstance(item, dict):
                    buf.write("\n")
        else:
            buf.write(f"{pad}{_fmt(obj)}\n")

    walk(payload)
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _grid_csv(rows, criteria_set) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    header = ["p"] + [f"{c}_margin" for c in criteria_set]
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{row['p']:.12g}"] + [f"{row[h]:.12g}" for h in header[1:]])
    return buf.getvalue()


def _survey_csv(result: SurveyResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["cell", "count", "fraction", "ci_lo", "ci_hi"])
    for cell, count in result.counts.items():
        lo, hi = result.wilson_ci[cell]
        writer.writerow([cell, count, f"{count / result.config.samples:.12g}",
                         f"{lo:.12g}", f"{hi:.12g}"])
    return buf.getvalue()


def _emit(text: str, out_path):
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------------------
# CLI


def _resolve_seed(flag_value):
    if flag_value is not None:
        return int(flag_value)
    return int(os.environ.get("SCHMIDT_SCOPE_SEED", "0"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="schmidt-scope",
        description="SDP certification of entanglement dimension and unfaithfulness",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="RNG seed (overrides SCHMIDT_SCOPE_SEED; default 0)")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--tolerance", type=float, default=1e-3)
    parser.add_argument("--out", default=None, help="write the report to a file")
    parser.add_argument("--format", choices=("json", "csv", "text"), default="text")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("survey", help="Monte-Carlo unfaithfulness fractions")
    p.add_argument("--d", type=int, required=True, help="local dimension")
    p.add_argument("--measure", choices=sorted(_SAMPLERS), default="hs")
    p.add_argument("--samples", type=int, default=1000)

    p = sub.add_parser("scan", help="noise thresholds of a noisy pure-state family")
    p.add_argument("--d", type=int, required=True, help="embedding local dimension")
    p.add_argument("--dim", type=int, default=2, help="unfaithfulness dimension D")
    p.add_argument("--target-rank", type=int, default=None,
                   help="Schmidt rank of the embedded maximally entangled target (default D)")
    p.add_argument("--criteria", default="ppt,unfaithful,schmidt,reduction")
    p.add_argument("--p-lo", type=float, default=0.0)
    p.add_argument("--p-hi", type=float, default=1.0)
    p.add_argument("--grid", default="", help="comma-separated p values for a margin CSV")

    p = sub.add_parser("certify", help="run every criterion on a state file")
    p.add_argument("state_file")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--witness", action="store_true", help="also search for a fidelity witness")
    p.add_argument("--restarts", type=int, default=64)

    p = sub.add_parser("activation", help="tensor-power faithfulness activation")
    p.add_argument("--restarts", type=int, default=512)
    p.add_argument("--no-control", action="store_true")

    p = sub.add_parser("witness", help="fidelity-witness search on a state file")
    p.add_argument("state_file")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--restarts", type=int, default=64)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    seed = _resolve_seed(args.seed)

    try:
        if args.command == "survey":
            cfg = SurveyConfig(d=args.d, measure=args.measure, samples=args.samples,
                               seed=seed, workers=args.workers)
            result = run_survey(cfg)
            if args.format == "csv":
                _emit(_survey_csv(result), args.out)
            elif args.format == "json":
                _emit(json.dumps(result.to_dict(), indent=2), args.out)
            else:
                _emit(_render_text(result.to_dict()), args.out)
            return EXIT_OK

        if args.command == "scan":
            rank = args.target_rank or args.dim
            target = embed(max_entangled_pure(rank), args.d, args.d)
            crits = tuple(c.strip() for c in args.criteria.split(",") if c.strip())
            grid = tuple(float(x) for x in args.grid.split(",") if x.strip())
            cfg = ScanConfig(target=target, dim=args.dim, p_lo=args.p_lo, p_hi=args.p_hi,
                             tolerance=args.tolerance, criteria_set=crits, p_grid=grid)
            report = run_scan(cfg)
            if args.format == "csv":
                _emit(_grid_csv(report["grid"], crits), args.out)
            elif args.format == "json":
                _emit(json.dumps(report, indent=2), args.out)
            else:
                _emit(_render_text(report), args.out)
            return EXIT_OK

        if args.command == "certify":
            state = qstate.load_state(args.state_file)
            report = certify_state(state, dim=args.dim, level=args.level,
                                   with_witness=args.witness, restarts=args.restarts,
                                   seed=seed)
            text = json.dumps(report, indent=2) if args.format == "json" else _render_text(report)
            _emit(text, args.out)
            return EXIT_OK

        if args.command == "activation":
            report = run_activation(restarts=args.restarts, seed=seed,
                                    control=not args.no_control)
            text = json.dumps(report, indent=2) if args.format == "json" else _render_text(report)
            _emit(text, args.out)
            return EXIT_OK if report["passed"] else 1

        if args.command == "witness":
            state = qstate.load_state(args.state_file)
            cand = witness.search_witness(state, args.dim, restarts=args.restarts,
                                          rng=RngStream(seed))
            report = {
                "dimension": cand.dimension,
                "violation": cand.violation,
                "restarts": cand.restarts_used,
                "positive": bool(cand.violation > MARGIN_BAND),
            }
            text = json.dumps(report, indent=2) if args.format == "json" else _render_text(report)
            _emit(text, args.out)
            return EXIT_OK

    except (StateValidationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (SdpError, criteria.MemoryGuardError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
