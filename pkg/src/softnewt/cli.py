"""Command-line harness: gen, run, verify, bounds.

Exit codes: 0 success/converged, 1 verification failure, 2 non-converged run
(max_iters, diverged, or runtime error), 3 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bounds as bounds_mod
from .derivatives import grad
from .generate import gen_instance
from .hessian import B_TERM_NAMES, b_terms, hess_L, hess_L_entry, hess_tot
from .model import ProblemInstance, eval_forward, instance_from_json, instance_to_json
from .newton import NewtonConfig, RunReport, basin_check, solve
from .oracle import FdConfig, fd_gradient, fd_hessian, spectral
from .serialize import SCHEMA_VERSION, dump_path, dumps, load_path
from .sketch import subsample, verify_sandwich

THREADS_ENV = "SOFTNEWT_THREADS"


@dataclass
class ExperimentSpec:
    instance_path: str
    x0_rule: str = "zero"  # "zero" | "gaussian" | "stored" | "values"
    x0_scale: float = 0.1
    x0_values: list[float] | None = None
    x0_path: str | None = None
    config: NewtonConfig = field(default_factory=NewtonConfig)
    output_dir: str = "."
    emit: frozenset[str] = frozenset({"report_json"})
    reference: bool = True


class ConfigError(ValueError):
    pass


def _rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(stream) << np.uint64(32)))


def _load_instance(path: str) -> ProblemInstance:
    try:
        return instance_from_json(load_path(path))
    except FileNotFoundError as exc:
        raise ConfigError(f"instance file not found: {path}") from exc
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad instance file {path}: {exc}") from exc


def _build_x0(spec: ExperimentSpec, inst: ProblemInstance) -> np.ndarray:
    if spec.x0_rule == "zero":
        return np.zeros(inst.d)
    if spec.x0_rule == "gaussian":
        g = _rng(spec.config.seed, stream=0xA11CE).standard_normal(inst.d)
        return spec.x0_scale * g
    if spec.x0_rule == "values":
        if not spec.x0_values:
            raise ConfigError("x0 rule 'values' requires --x0-values")
        x0 = np.asarray(spec.x0_values, dtype=float)
        if x0.shape != (inst.d,):
            raise ConfigError(f"x0 needs {inst.d} components, got {x0.size}")
        return x0
    if spec.x0_rule == "stored":
        if not spec.x0_path:
            raise ConfigError("x0 rule 'stored' requires --x0-path")
        try:
            doc = load_path(spec.x0_path)
        except FileNotFoundError as exc:
            raise ConfigError(f"x0 file not found: {spec.x0_path}") from exc
        if isinstance(doc, dict):
            if "x0" in doc:
                doc = doc["x0"]
            elif "golden" in doc and "iterates" in doc["golden"]:
                doc = doc["golden"]["iterates"][-1]
            else:
                raise ConfigError(f"{spec.x0_path} holds neither 'x0' nor a run report")
        return np.asarray(doc, dtype=float)
    raise ConfigError(f"unknown x0 rule {spec.x0_rule!r}")


def cmd_gen(args) -> int:
    w = np.asarray([float(v) for v in args.w.split(",")], dtype=float) if args.w else None
    inst, x_plant = gen_instance(
        args.n,
        args.m,
        args.d,
        args.activation,
        args.seed,
        noise=args.noise,
        r_target=args.r_target,
        l_target=args.l_target,
        beta=args.beta,
        w=w,
    )
    doc = instance_to_json(inst)
    doc["x_plant"] = x_plant
    doc["gen_seed"] = args.seed
    dump_path(doc, args.out)
    print(f"wrote {args.out} (n={inst.n}, m={inst.m}, d={inst.d}, {inst.activation.kind})")
    return 0


def _reference_optimum(inst: ProblemInstance) -> np.ndarray:
    cfg = NewtonConfig(
        mode="exact",
        eps=1e-13,
        stationarity_tol=1e-13,
        max_iters=200,
        damping=True,
        strict=False,
    )
    rep = solve(inst, np.zeros(inst.d), cfg)
    if rep.final_grad_norm > 1e-10:
        raise ConfigError(
            f"reference solve stalled at gradient norm {rep.final_grad_norm:.3e}"
        )
    return rep.final_x


def _write_trace_csv(path, report: RunReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "r_t", "ratio", "grad_norm", "eps_sketch", "millis"])
        n = len(report.grad_norms)
        for t in range(n):
            r = report.r_t[t] if report.r_t is not None else None
            ratio = (
                report.ratios[t - 1]
                if (report.ratios is not None and 1 <= t <= len(report.ratios))
                else None
            )
            epss = report.sketch_eps_per_iter[t] if t < len(report.sketch_eps_per_iter) else None
            ms = report.wall_times_ms[t] if t < len(report.wall_times_ms) else None
            fmt = lambda v: "" if v is None else repr(float(v))
            writer.writerow([t, fmt(r), fmt(ratio), fmt(report.grad_norms[t]), fmt(epss), fmt(ms)])


def cmd_run(args) -> int:
    spec = ExperimentSpec(
        instance_path=args.instance,
        x0_rule=args.x0,
        x0_scale=args.x0_scale,
        x0_values=[float(v) for v in args.x0_values.split(",")] if args.x0_values else None,
        x0_path=args.x0_path,
        config=NewtonConfig(
            mode=args.mode,
            eps=args.eps,
            delta=args.delta,
            eps0=args.eps0,
            max_iters=args.max_iters,
            l_estimate=args.l_estimate,
            seed=args.seed,
            stationarity_tol=args.stationarity_tol,
            damping=args.damping,
            strict=not args.no_strict,
        ),
        output_dir=args.out_dir,
        emit=frozenset(args.emit.split(",")),
        reference=not args.no_reference,
    )
    inst = _load_instance(spec.instance_path)
    x0 = _build_x0(spec, inst)
    outdir = Path(spec.output_dir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output dir {outdir}: {exc}") from exc

    x_ref = _reference_optimum(inst) if spec.reference else None
    report = solve(inst, x0, spec.config, x_ref=x_ref)
    bounds_report = None
    if "bounds_json" in spec.emit:
        pts = [np.asarray(p, dtype=float) for p in report.iterates]
        if x_ref is not None:
            pts.append(x_ref)
        if len(pts) >= 2:
            bounds_report = bounds_mod.probe_empirical(inst, pts)
    if x_ref is not None:
        st_ref = eval_forward(inst, x_ref)
        l_ref = spec.config.l_estimate or float(np.linalg.eigvalsh(hess_tot(st_ref, inst).H_tot)[0])
        report.basin_certificate = {
            "analytic": basin_check(x0, x_ref, M=bounds_mod.compute_constants(inst).M, l=l_ref)
        }
        if bounds_report is not None:
            report.basin_certificate["empirical"] = basin_check(
                x0, x_ref, M=bounds_report.M_empirical, l=l_ref
            )

    doc = {
        "schema_version": SCHEMA_VERSION,
        "golden": {
            "instance_path": spec.instance_path,
            "x0": x0,
            "x_ref": x_ref,
            "config": {
                "mode": spec.config.mode,
                "eps": spec.config.eps,
                "delta": spec.config.delta,
                "eps0": spec.config.eps0,
                "max_iters": spec.config.max_iters,
                "seed": spec.config.seed,
                "stationarity_tol": spec.config.stationarity_tol,
            },
            **report.golden_json(),
        },
        "timing": {
            "wall_times_ms": report.wall_times_ms,
            "written_at_unix": time.time(),
        },
    }
    if "report_json" in spec.emit:
        dump_path(doc, outdir / "report.json")
    if "trace_csv" in spec.emit:
        _write_trace_csv(outdir / "trace.csv", report)
    if "bounds_json" in spec.emit and bounds_report is not None:
        dump_path(bounds_report.to_json(), outdir / "bounds.json")
    if "grad_json" in spec.emit:
        st_fin = eval_forward(inst, report.final_x)
        gdoc = {"schema_version": SCHEMA_VERSION, "x": report.final_x, **grad(st_fin, inst).to_json()}
        dump_path(gdoc, outdir / "gradient.json")
    if "bterms_json" in spec.emit:
        st_fin = eval_forward(inst, report.final_x)
        terms = b_terms(st_fin, inst)
        tdoc = {
            "schema_version": SCHEMA_VERSION,
            "x": report.final_x,
            "frobenius_norms": {
                name: float(np.linalg.norm(t)) for name, t in zip(B_TERM_NAMES, terms)
            },
        }
        dump_path(tdoc, outdir / "b_terms.json")
    print(f"status={report.status} iters={report.n_iters} grad={report.final_grad_norm:.3e}")
    return 0 if report.status == "converged" else 2


def _verify_checks(inst: ProblemInstance, seed: int, trials: int, map_fn=map):
    """Yield (name, passed, margin, detail) over every invariant suite.

    ``map_fn`` lets independent per-point trials fan out to a worker pool; the
    max-reductions below are order independent.
    """
    rng = _rng(seed)
    d = inst.d
    xs = [0.35 * inst.R * rng.standard_normal(d) / math.sqrt(d) for _ in range(max(trials, 2))]

    def norm_dev(x):
        return abs(float(np.sum(np.abs(eval_forward(inst, x).f))) - 1.0)

    dev_norm = max(map_fn(norm_dev, xs))
    yield "softmax_normalization", dev_norm <= 1e-12, dev_norm, "max |1 - ||f||_1|"

    def loss_at(x):
        return eval_forward(inst, x).loss_tot

    def grad_at(x):
        st = eval_forward(inst, x)
        return grad(st, inst).grad_tot

    cfg2 = FdConfig()

    def grad_err(x):
        gfd = fd_gradient(loss_at, x, cfg2)
        return float(np.linalg.norm(grad_at(x) - gfd)) / max(float(np.linalg.norm(gfd)), 1e-30)

    worst = max(map_fn(grad_err, xs))
    yield "gradient_vs_finite_difference", worst <= 1e-6, worst, "relative l2 error"

    def hess_err(x):
        H = hess_tot(eval_forward(inst, x), inst).H_tot
        Hfd = fd_hessian(grad_at, x, cfg2)
        return float(np.linalg.norm(H - Hfd)) / max(float(np.linalg.norm(Hfd)), 1e-30)

    worst = max(map_fn(hess_err, xs[: min(len(xs), 10)]))
    yield "hessian_vs_finite_difference", worst <= 1e-5, worst, "relative Frobenius error"

    worst = 0.0
    scale = 1.0
    for x in xs[: min(len(xs), 5)]:
        st = eval_forward(inst, x)
        hb = hess_L(st, inst, entrywise=False)
        scale = max(scale, float(np.max(np.abs(hb.H_L))))
        for i in range(d):
            for j in range(d):
                worst = max(worst, abs(hb.H_L[i, j] - hess_L_entry(st, inst, i, j)))
        hb2 = hess_L(st, inst, entrywise=True)
        worst = max(worst, float(np.max(np.abs(hb.H_L - hb2.H_L))))
        worst = max(worst, float(np.max(np.abs(sum(b_terms(st, inst)) - hb.B))))
    yield "hessian_route_agreement", worst <= 1e-10 * scale, worst, "max elementwise gap"

    worst = 0.0
    for x in xs:
        st = eval_forward(inst, x)
        gb = grad(st, inst)
        worst = max(worst, float(np.linalg.norm(gb.grad_L - gb.P.T @ gb.q2)))
    yield "gradient_chain_consistency", worst <= 1e-12, worst, "||grad_L - P^T q2||"

    rep = bounds_mod.probe_empirical(inst, xs)
    sound_keys = [k for k in rep.empirical if k.startswith("norm_")] + ["psd_bound", "M"]
    worst_t = max(rep.tightness[k] for k in sound_keys)
    yield "bound_soundness", worst_t <= 1.0, worst_t, "max tightness over norm/psd/Lipschitz bounds"
    lo, hi = rep.lambda_min_B, rep.lambda_max_B
    psd = rep.psd_bound
    ok = psd.holds(abs(lo)) and psd.holds(abs(hi))
    yield "psd_sandwich", ok, psd.tightness(max(abs(lo), abs(hi))), "kernel spectrum inside +-bound"

    dw = np.diag(hess_L(eval_forward(inst, np.zeros(d)), inst, entrywise=False).B) + inst.w**2
    if np.all(dw > 0):
        hits = 0
        n_seeds = 20
        for k in range(n_seeds):
            sk = subsample(inst.A1, dw, 0.3, 0.1, seed=seed + k)
            if verify_sandwich(inst.A1, dw, sk) <= 0.3:
                hits += 1
        frac = hits / n_seeds
        yield "sketch_sandwich_rate", frac >= 0.9, frac, f"fraction of {n_seeds} seeds within eps0"
        a = subsample(inst.A1, dw, 0.3, 0.1, seed=seed)
        b = subsample(inst.A1, dw, 0.3, 0.1, seed=seed)
        same = bool(
            np.array_equal(a.kept_indices, b.kept_indices) and np.array_equal(a.dtilde, b.dtilde)
        )
        yield "sketch_determinism", same, 0.0 if same else 1.0, "same seed, bit-identical result"


def cmd_verify(args) -> int:
    inst = _load_instance(args.instance)
    threads = int(os.environ.get(THREADS_ENV, "1"))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            checks = list(_verify_checks(inst, args.seed, args.trials, map_fn=pool.map))
    else:
        checks = list(_verify_checks(inst, args.seed, args.trials))
    results = [
        {"name": name, "passed": bool(passed), "margin": float(margin), "detail": detail}
        for name, passed, margin, detail in checks
    ]
    all_passed = all(r["passed"] for r in results)
    doc = {"schema_version": SCHEMA_VERSION, "all_passed": all_passed, "checks": results}
    if args.out:
        dump_path(doc, args.out)
    for r in results:
        status = "pass" if r["passed"] else "FAIL"
        print(f"[{status}] {r['name']}: {r['detail']} = {r['margin']:.3e}")
    if not all_passed:
        failing = ", ".join(r["name"] for r in results if not r["passed"])
        print(f"failing invariants: {failing}", file=sys.stderr)
    return 0 if all_passed else 1


def cmd_bounds(args) -> int:
    inst = _load_instance(args.instance)
    rng = _rng(args.seed)
    pts = []
    for _ in range(args.probes):
        g = rng.standard_normal(inst.d)
        g *= rng.uniform(0.1, 0.9) * inst.R / max(float(np.linalg.norm(g)), 1e-300)
        pts.append(g)
    rep = bounds_mod.probe_empirical(inst, pts)
    if args.out:
        dump_path(rep.to_json(), args.out)
    print(f"R_used={rep.R_used:.6g} beta_used={rep.beta_used:.6g} admissible={rep.n_admissible} excluded={rep.n_excluded}")
    print(f"{'quantity':<14} {'bound':>14} {'measured':>13} {'tightness':>11}")
    for key in sorted(rep.empirical):
        if key not in rep.analytic:
            continue
        m, e = rep.analytic[key].mantissa_exp10()
        print(
            f"{key:<14} {f'{m:.3f}e{e:+d}':>14} {rep.empirical[key]:>13.4e} {rep.tightness[key]:>11.3e}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softnewt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random problem instance")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--activation", default="tanh")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--r-target", type=float, default=1.5)
    g.add_argument("--l-target", type=float, default=1.0)
    g.add_argument("--beta", type=float, default=0.05)
    g.add_argument("--w", default=None, help="comma-separated ridge weights (default: recipe)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run the Newton solver on an instance")
    r.add_argument("--instance", required=True)
    r.add_argument("--mode", choices=["exact", "sketched"], default="exact")
    r.add_argument("--x0", choices=["zero", "gaussian", "stored", "values"], default="zero")
    r.add_argument("--x0-scale", type=float, default=0.1)
    r.add_argument("--x0-values", default=None, help="comma-separated coordinates")
    r.add_argument("--x0-path", default=None)
    r.add_argument("--eps", type=float, default=1e-6)
    r.add_argument("--delta", type=float, default=0.05)
    r.add_argument("--eps0", type=float, default=0.01)
    r.add_argument("--max-iters", type=int, default=200)
    r.add_argument("--l-estimate", type=float, default=None,
                   help="strong-convexity floor for the basin certificate (default: measured)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--stationarity-tol", type=float, default=1e-10)
    r.add_argument("--damping", action="store_true")
    r.add_argument("--no-strict", action="store_true", help="lift the eps/delta < 0.1 restriction")
    r.add_argument("--no-reference", action="store_true", help="skip the preliminary exact solve")
    r.add_argument("--out-dir", default=".")
    r.add_argument(
        "--emit",
        default="report_json",
        help="comma set from report_json,trace_csv,bounds_json,grad_json,bterms_json",
    )
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run every invariant suite against an instance")
    v.add_argument("--instance", required=True)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trials", type=int, default=20)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bounds", help="analytic constants and empirical tightness table")
    b.add_argument("--instance", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--probes", type=int, default=20)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bounds)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(dumps({"error": "configuration", "message": str(exc)}), file=sys.stderr)
        return 3
    except OSError as exc:
        print(dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
