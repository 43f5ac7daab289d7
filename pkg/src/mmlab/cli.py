"""Command-line front end.

Input files are JSON: channels {"rows": [[...]]}, metrics {"values": [[...]]},
couplings {"per_input": [K x K tables]}, distributions {"probs": [...]}.
When --channel or --metric is omitted the built-in three-output example is
used. Text and CSV numbers are shown with 4 decimals (round half to even);
JSON reports carry full precision and re-parse into equal report objects.

Exit codes: 0 success, 1 invalid input or domain error, 2 usage error.
"""

from __future__ import annotations

import os


def _cap_threads():
    # must run before numpy loads its BLAS; ignored if numpy is already imported
    cap = os.environ.get("MMLAB_THREADS")
    if cap and cap.isdigit() and int(cap) > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_cap_threads()

import argparse  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
import tempfile  # noqa: E402
import time  # noqa: E402
from dataclasses import replace  # noqa: E402
from decimal import ROUND_HALF_EVEN, Decimal  # noqa: E402

import numpy as np  # noqa: E402

from . import instances  # noqa: E402
from .bounds import corollary1_bound, full_bound, prior_bound  # noqa: E402
from .descent import InnerOptions  # noqa: E402
from .exponent import EXPONENT_OPTIONS, esp_curve, finite_n_annotation  # noqa: E402
from .lp import LpNumericalError  # noqa: E402
from .maximality import (  # noqa: E402
    DEFAULT_TOL,
    additive_td,
    in_gamma_rho,
    in_gamma_star,
    in_theta_star,
    in_v_max,
    is_maximal,
    is_maximal_prior,
    is_maximal_td,
    is_maximal_universal,
    mmi_td,
    prior_violations,
)
from .probability import (  # noqa: E402
    Channel,
    Coupling,
    Distribution,
    DomainError,
    Metric,
    blahut_arimoto_capacity,
    marginal_yhat,
)
from .types_lab import TypeVector  # noqa: E402

SUM_TOL = 1e-12
DEFAULT_LOG_FLOOR = -1e9
SETS = ("mmax", "mmax-prior", "theta-star", "gamma-star", "gamma-rho", "vmax", "mmax-td")


class InputError(Exception):
    """Malformed input file; the message names the file, row and invariant."""


def fmt(x: float, places: int = 4) -> str:
    """Fixed-point text with round-half-even on the exact binary value."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    q = Decimal(1).scaleb(-places)
    s = str(Decimal(float(x)).quantize(q, rounding=ROUND_HALF_EVEN))
    return "0." + "0" * places if s == "-0." + "0" * places else s


def seed_from_env(default: int = 0) -> int:
    raw = os.environ.get("MMLAB_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"MMLAB_SEED: expected an integer, got {raw!r}") from None


# --------------------------------------------------------------------------
# File parsing


def _load_json(path: str, key: str):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise InputError(f"{path}: cannot read file ({e.strerror})") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(data, dict) or key not in data:
        raise InputError(f"{path}: expected a JSON object with key {key!r}")
    return data[key]


def _numbers(path: str, label: str, row) -> np.ndarray:
    if not isinstance(row, list) or not row:
        raise InputError(f"{path}: {label}: expected a non-empty list of numbers")
    out = []
    for i, v in enumerate(row):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InputError(f"{path}: {label}, entry {i + 1}: {v!r} is not a number")
        if not math.isfinite(v):
            raise InputError(f"{path}: {label}, entry {i + 1}: entries must be finite")
        out.append(float(v))
    return np.array(out)


def _table(path: str, rows, what: str) -> np.ndarray:
    if not isinstance(rows, list) or not rows:
        raise InputError(f"{path}: expected a non-empty list of {what} rows")
    arr = [_numbers(path, f"row {i + 1}", r) for i, r in enumerate(rows)]
    width = len(arr[0])
    for i, r in enumerate(arr):
        if len(r) != width:
            raise InputError(f"{path}: row {i + 1}: has {len(r)} entries, row 1 has {width}")
    return np.array(arr)


def _check_stochastic(path: str, label: str, r: np.ndarray):
    if np.any(r < 0):
        raise InputError(f"{path}: {label}: entries must be nonnegative")
    if abs(r.sum() - 1.0) > SUM_TOL:
        raise InputError(f"{path}: {label}: entries sum to {r.sum():.15g}, must sum to 1 within {SUM_TOL:g}")


def load_channel(path: str) -> Channel:
    t = _table(path, _load_json(path, "rows"), "channel")
    for i, r in enumerate(t):
        _check_stochastic(path, f"row {i + 1}", r)
    return Channel(t)


def load_metric(path: str) -> Metric:
    return Metric(_table(path, _load_json(path, "values"), "metric"))


def load_log_metric(path: str, floor: float = DEFAULT_LOG_FLOOR) -> Metric:
    """Elementwise natural log of a nonnegative table; zeros map to `floor`."""
    t = _table(path, _load_json(path, "values"), "metric")
    for i, r in enumerate(t):
        if np.any(r < 0):
            raise InputError(f"{path}: row {i + 1}: --metric-log-of needs nonnegative entries")
    return Metric(np.where(t > 0, np.log(np.where(t > 0, t, 1.0)), floor))


def load_distribution(path: str) -> Distribution:
    p = _numbers(path, "probs", _load_json(path, "probs"))
    _check_stochastic(path, "probs", p)
    return Distribution(p)


def load_coupling(path: str) -> Coupling:
    tables = _load_json(path, "per_input")
    if not isinstance(tables, list) or not tables:
        raise InputError(f"{path}: per_input must be a non-empty list of K x K tables")
    arr = []
    for j, t in enumerate(tables):
        a = _table(path, t, f"input {j + 1}")
        if a.shape[0] != a.shape[1]:
            raise InputError(f"{path}: input {j + 1}: table is {a.shape[0]} x {a.shape[1]}, must be square (K x K)")
        _check_stochastic(path, f"input {j + 1}", a.ravel())
        arr.append(a)
    K = arr[0].shape[0]
    for j, a in enumerate(arr):
        if a.shape[0] != K:
            raise InputError(f"{path}: input {j + 1}: table is {a.shape[0]} x {a.shape[0]}, input 1 is {K} x {K}")
    return Coupling(np.array(arr))


def parse_px(source: str | None, J: int) -> Distribution | None:
    if source is None:
        return None
    if source == "uniform":
        return Distribution(np.full(J, 1.0 / J))
    px = load_distribution(source)
    if len(px) != J:
        raise InputError(f"{source}: probs has {len(px)} entries, the channel has {J} inputs")
    return px


def _instance(args):
    w = load_channel(args.channel) if args.channel else instances.W_EXAMPLE
    if getattr(args, "metric_log_of", None):
        q = load_log_metric(args.metric_log_of, args.log_floor)
        src = args.metric_log_of
    elif args.metric:
        q = load_metric(args.metric)
        src = args.metric
    else:
        q, src = instances.Q_EXAMPLE, "built-in example metric"
    if q.values.shape != w.rows.shape:
        raise InputError(f"{src}: metric is {q.values.shape[0]} x {q.values.shape[1]}, channel is {w.J} x {w.K}")
    return w, q


def _coupling_for(args, w) -> Coupling:
    c = load_coupling(args.coupling) if args.coupling else instances.example_coupling()
    if c.per_input.shape[:2] != w.rows.shape:
        src = args.coupling or "built-in coupling"
        raise InputError(f"{src}: coupling is {c.J} x {c.K} x {c.K}, channel is {w.J} x {w.K}")
    return c


# --------------------------------------------------------------------------
# Output


def emit(text: str, out: str | None):
    """Write text to stdout, or atomically replace the file `out`."""
    if not text.endswith("\n"):
        text += "\n"
    if out is None:
        sys.stdout.write(text)
        return
    d = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".mmlab-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_json(d: dict) -> str:
    return json.dumps(d, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# Commands


def cmd_capacity(args) -> int:
    w = load_channel(args.channel) if args.channel else instances.W_EXAMPLE
    cap, px = blahut_arimoto_capacity(w, tol=args.tol)
    if args.json:
        emit(to_json({"capacity_bits": cap, "px": px.probs.tolist()}), args.out)
    else:
        emit(fmt(cap), args.out)
    return 0


def _membership(args, w, q, c, px):
    """(member, slack or None, details dict) for the chosen set."""
    s = args.set
    if s == "mmax-prior":
        bad = prior_violations(c, q)
        viol = [[j + 1, k1 + 1, k2 + 1, float(c.per_input[j, k1, k2])] for j, k1, k2 in bad]
        return is_maximal_prior(c, q), None, {"violations": viol}
    if s == "gamma-rho":
        if not args.rho:
            raise InputError("--set gamma-rho needs --rho FILE")
        rho = load_metric(args.rho)
        return in_gamma_rho(c, rho, q), None, {}
    if s == "vmax":
        v = load_channel(args.v) if args.v else marginal_yhat(c)
        if px is None:
            raise InputError("--set vmax needs --px")
        r = in_v_max(v, px, w, q, args.tol)
        return r.member, r.game_value - r.baseline, {"game_value": r.game_value, "baseline": r.baseline}
    if px is None:
        if s != "mmax":
            raise InputError(f"--set {s} needs --px")
        u = is_maximal_universal(c, q, args.grid_step, args.tol)
        det = {"worst_px": u.worst_px.tolist(), "grid_points": u.n_points, "caveat": u.caveat}
        return u.member, u.min_slack, det
    if s == "mmax":
        ok, cert = is_maximal(c, px, q, args.tol)
        return ok, cert.slack, {"certificate": cert.to_dict()}
    if s == "mmax-td":
        q_td = mmi_td() if args.td == "mmi" else additive_td(q)
        ok, cert = is_maximal_td(c, px, q_td, args.tol)
        return ok, cert.slack, {"certificate": cert.to_dict()}
    fn = in_theta_star if s == "theta-star" else in_gamma_star
    return fn(c, px, q, args.tol), None, {}


def cmd_check_maximal(args) -> int:
    w, q = _instance(args)
    c = _coupling_for(args, w)
    px = parse_px(args.px, w.J)
    member, slack, det = _membership(args, w, q, c, px)
    if args.json:
        emit(to_json({"set": args.set, "member": bool(member), "slack": slack, **det}), args.out)
        return 0
    line = "member" if member else "non-member"
    if slack is not None:
        line += f" slack={fmt(slack)}"
    if "worst_px" in det:
        line += " worst_px=" + ",".join(fmt(v) for v in det["worst_px"])
    for j, k1, k2, v in det.get("violations", []):
        line += f" violation=(j={j},k1={k1},k2={k2}):{fmt(v)}"
    emit(line, args.out)
    return 0


def cmd_bound(args) -> int:
    w, q = _instance(args)
    if args.mode == "corollary1":
        c = _coupling_for(args, w)
        rep = corollary1_bound(c, w, q, args.grid_step or 0.01, args.tol_marginal)
    elif args.mode == "prior":
        rep = prior_bound(w, q, args.grid_step or 0.005)
    else:
        rep = full_bound(w, q, args.grid_step or 0.02, InnerOptions(seed=seed_from_env()))
    if args.json:
        emit(to_json(rep.to_dict()), args.out)
    else:
        line = fmt(rep.value_bits)
        if not rep.certified:
            line += " (not certified: " + "; ".join(rep.caveats) + ")"
        emit(line, args.out)
    return 0


def cmd_exponent(args) -> int:
    w, q = _instance(args)
    px = parse_px(args.px or "uniform", w.J)
    opts = replace(EXPONENT_OPTIONS, seed=seed_from_env())
    ids = (args.channel or "example", args.metric or args.metric_log_of or "example")
    curve = esp_curve(px, w, q, args.r_min, args.r_max, args.steps, opts, ids)
    if args.n:
        curve = finite_n_annotation(curve, args.n, w.J, w.K)
    if args.json:
        emit(to_json(curve.to_dict()), args.out)
        return 0
    lines = ["rate_bits,exponent_bits,certified"]
    lines += [f"{fmt(r)},{fmt(e)},{str(bool(c)).lower()}" for r, e, _, c in curve.points]
    emit("\n".join(lines), args.out)
    return 0


def _composition(args, J: int, n: int) -> TypeVector:
    if args.composition:
        try:
            counts = [int(v) for v in args.composition.split(",")]
        except ValueError:
            raise InputError(f"--composition: expected comma-separated integers, got {args.composition!r}") from None
        if len(counts) != J or sum(counts) != n or min(counts) < 0:
            raise InputError(f"--composition: need {J} nonnegative counts summing to n={n}")
        return TypeVector(counts)
    base = [n // J] * J
    for i in range(n - sum(base)):
        base[i] += 1
    return TypeVector(base)


def cmd_simulate(args) -> int:
    from . import sim

    w, q = _instance(args)
    seed = args.seed if args.seed is not None else seed_from_env()
    comp = _composition(args, w.J, args.n)
    if args.mode == "ensemble":
        if args.rate is None:
            raise InputError("--mode ensemble needs --rate")
        rep = sim.estimate_pe_ensemble(args.n, comp, args.rate, w, q, args.trials, seed)
    else:
        if args.M is not None:
            M = args.M
        elif args.rate is not None:
            M = max(1, math.ceil(2.0 ** (args.n * args.rate)))
        else:
            raise InputError(f"--mode {args.mode} needs --M or --rate")
        cb = sim.sample_codebook(args.n, M, comp, seed)
        if args.mode == "pe-max":
            rep = sim.estimate_pe_max(cb, w, q, args.trials, seed, args.ties)
        elif args.mode == "exact":
            rep = sim.exact_pe_max(cb, w, q, args.ties)
        else:
            v = load_channel(args.v) if args.v else w
            if v.J != w.J:
                raise InputError(f"{args.v}: auxiliary channel has {v.J} inputs, expected {w.J}")
            rep = sim.estimate_type_conflict(cb, v, args.trials, seed, args.conflict_mode)
    if args.json:
        emit(to_json(rep.to_dict()), args.out)
    else:
        lo, hi = rep.interval
        emit(f"pe_max={fmt(rep.max_estimate)} interval=[{fmt(lo)},{fmt(hi)}] trials={rep.trials} ties={rep.ties} mode={rep.mode}", args.out)
    return 0


def cmd_self_check(args) -> int:
    from . import selfcheck

    seed = seed_from_env()
    results = selfcheck.SUITES[args.which](seed)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in results]
    emit("\n".join(lines), args.out)
    return 0 if all(ok for _, ok, _ in results) else 1


def cmd_reproduce_example(args) -> int:
    from . import selfcheck

    t0 = time.perf_counter()
    results = selfcheck.reproduce_example(quick=args.quick)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in results]
    lines.append(f"elapsed {time.perf_counter() - t0:.1f} s")
    emit("\n".join(lines), args.out)
    return 0 if all(ok for _, ok, _ in results) else 1


# --------------------------------------------------------------------------
# Parser


def _instance_args(p, coupling=False):
    p.add_argument("--channel", help="channel JSON {\"rows\": ...} (default: built-in example)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--metric", help="metric JSON {\"values\": ...} (default: built-in example)")
    g.add_argument("--metric-log-of", dest="metric_log_of", help="JSON table whose natural log is the metric")
    p.add_argument("--log-floor", dest="log_floor", type=float, default=DEFAULT_LOG_FLOOR, help="metric value for log(0)")
    if coupling:
        p.add_argument("--coupling", help="coupling JSON {\"per_input\": ...} (default: built-in example coupling)")


def _common(p):
    p.add_argument("--out", help="write output to this file (atomic replace)")
    p.add_argument("--json", action="store_true", help="emit a JSON report")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmlab", description="Mismatched-decoding bounds, exponents and simulations.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capacity", help="channel capacity by Blahut-Arimoto")
    p.add_argument("--channel")
    p.add_argument("--tol", type=float, default=1e-9)
    _common(p)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("check-maximal", help="membership of a coupling in a maximal set")
    _instance_args(p, coupling=True)
    p.add_argument("--set", required=True, choices=SETS)
    p.add_argument("--px", help="'uniform' or distribution JSON; omitted with mmax means all px on a grid")
    p.add_argument("--rho", help="metric JSON for --set gamma-rho")
    p.add_argument("--v", help="auxiliary channel JSON for --set vmax (default: the coupling's Yhat-marginal)")
    p.add_argument("--td", choices=("additive", "mmi"), default="additive", help="type-dependent metric for mmax-td")
    p.add_argument("--grid-step", dest="grid_step", type=float, default=0.01)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    _common(p)
    p.set_defaults(func=cmd_check_maximal)

    p = sub.add_parser("bound", help="upper bounds on the mismatch capacity")
    _instance_args(p, coupling=True)
    p.add_argument("--mode", required=True, choices=("corollary1", "full", "prior"))
    p.add_argument("--grid-step", dest="grid_step", type=float, help="px grid (defaults: 0.01, 0.02, 0.005)")
    p.add_argument("--tol-marginal", dest="tol_marginal", type=float, default=1e-2)
    _common(p)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("exponent", help="sphere-packing exponent curve as CSV")
    _instance_args(p)
    p.add_argument("--px", help="'uniform' (default) or distribution JSON")
    p.add_argument("--r-min", dest="r_min", type=float, default=0.0)
    p.add_argument("--r-max", dest="r_max", type=float, required=True)
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("--n", type=int, help="shift rates to read at block length n")
    _common(p)
    p.set_defaults(func=cmd_exponent)

    p = sub.add_parser("simulate", help="Monte Carlo decoding experiments")
    _instance_args(p)
    p.add_argument("--mode", choices=("pe-max", "exact", "ensemble", "type-conflict"), default="pe-max")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--M", type=int)
    p.add_argument("--rate", type=float, help="bits per use; M = ceil(2^(nR)) if --M is not given")
    p.add_argument("--composition", help="comma-separated letter counts (default: as even as possible)")
    p.add_argument("--trials", type=int, default=1000, help="trials per message")
    p.add_argument("--seed", type=int, help="overrides MMLAB_SEED")
    p.add_argument("--ties", choices=("error", "random"), default="error")
    p.add_argument("--v", help="auxiliary channel JSON for type-conflict mode (default: the channel)")
    p.add_argument("--conflict-mode", dest="conflict_mode", choices=("fixed-type", "channel"), default="fixed-type")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("lemma-test", help="randomized checks of the method-of-types identities")
    p.add_argument("--which", required=True, choices=("appendixB", "appendixC", "decomposition", "minimax"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_self_check)

    p = sub.add_parser("repro-paper", help="recompute the worked example's reference numbers")
    p.add_argument("--quick", action="store_true", help="skip the prior-bound grid")
    p.add_argument("--out")
    p.set_defaults(func=cmd_reproduce_example)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if os.environ.get("MMLAB_THREADS") and not os.environ["MMLAB_THREADS"].isdigit():
        print(f"mmlab: MMLAB_THREADS must be a positive integer, got {os.environ['MMLAB_THREADS']!r}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (InputError, DomainError, LpNumericalError) as e:
        print(f"mmlab: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
