"""Command-line entry point: ``twophoton-speckle {simulate,analytic,compare,purity}``.

Exit codes: 0 success, 1 invalid input, 2 comparison failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import analytic, stats
from .config import ConfigError, ExperimentConfig
from .engine import ENSEMBLES, run_ensemble
from .states import EigenvalueSpectrum, purity, reduced_density, schmidt_spectrum

EXIT_OK, EXIT_INVALID, EXIT_FAIL = 0, 1, 2
ANALYTIC_KINDS = ("p1_schmidt", "p2_k", "p2_exp", "p1_general", "p2_general")
COMPARE_KINDS = ANALYTIC_KINDS + ("p2_gaussian",)
KS_ALPHA = 0.05
N_SIGMA = 3.0
SKEWNESS_LIMIT = 0.2


class ComparisonMismatch(ValueError):
    pass


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --- simulate -----------------------------------------------------------------


def _config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    doc = cfg.to_dict()
    for key in ("trials", "seed", "ensemble", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    if getattr(args, "out_dir", None) is not None:
        doc["output"]["dir"] = args.out_dir
    if getattr(args, "bins", None) is not None:
        doc["histogram"]["bins"] = args.bins
    if getattr(args, "samples", None) is not None:
        doc["output"]["samples_csv"] = args.samples
    return ExperimentConfig.from_dict(doc)


def simulate(cfg: ExperimentConfig):
    """Run the configured ensemble; returns ``(samples, state, model, eff)``."""
    state = cfg.build_state()
    model = cfg.build_model(state)
    eff = cfg.build_efficiencies()
    samples = run_ensemble(
        model,
        cfg.build_detector(),
        state,
        eff,
        int(cfg.trials),
        int(cfg.seed),
        ensemble=cfg.ensemble,
        workers=int(cfg.workers),
        hist_specs=cfg.hist_specs(model, eff),
    )
    return samples, state, model, eff


def write_outputs(cfg: ExperimentConfig, samples: stats.SampleSet, ks: dict | None = None) -> Path:
    out = Path(cfg.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(_dump_json(stats.summary(samples, ks)))
    for ch in stats.CHANNELS:
        (out / f"hist_{ch}.csv").write_text(samples.histograms[ch].to_csv())
    if cfg.output.get("samples_csv"):
        (out / "samples.csv").write_text(samples.samples_csv())
    return out


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    samples, *_ = simulate(cfg)
    out = write_outputs(cfg, samples)
    print(f"wrote {out}/summary.json ({samples.count} trials)")
    return EXIT_OK


# --- analytic -----------------------------------------------------------------


def _parse_spectrum(text) -> EigenvalueSpectrum:
    if text is None:
        raise ValueError("this kind needs --spectrum '[[gamma, mu], ...]'")
    try:
        pairs = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"--spectrum is not valid JSON: {exc}") from None
    return EigenvalueSpectrum.from_pairs(pairs)


def analytic_pdf(kind: str, *, M=None, a1=1.0, a2=1.0, spectrum=None):
    """Return ``(pdf, scale)`` for one analytic kind."""
    if kind in ("p1_schmidt", "p2_k") and (M is None or M < 1):
        raise ValueError(f"{kind} needs --M >= 1")
    if kind == "p1_schmidt":
        return (lambda x: analytic.pdf_p1_schmidt(M, a1, x)), a1
    if kind == "p2_k":
        return (lambda x: analytic.pdf_p2_k(M, a2, x)), a2
    if kind == "p2_exp":
        return (lambda x: analytic.pdf_p2_exponential(a2, x)), a2
    if kind == "p1_general":
        return (lambda x: analytic.pdf_p1_general(spectrum, a1, x)), a1
    if kind == "p2_general":
        return (lambda x: analytic.pdf_p2_general(spectrum, a2, x)), a2
    raise ValueError(f"unknown analytic kind {kind!r}")


def cmd_analytic(args) -> int:
    spectrum = _parse_spectrum(args.spectrum) if args.kind.endswith("general") else None
    pdf, scale = analytic_pdf(args.kind, M=args.M, a1=args.a1, a2=args.a2, spectrum=spectrum)
    if not (0 <= args.grid_min < args.grid_max) or args.grid_points < 2:
        raise ValueError("grid needs 0 <= grid-min < grid-max and at least 2 points")
    if args.linear or args.grid_min == 0:
        grid = np.linspace(args.grid_min, args.grid_max, args.grid_points) * scale
    else:
        grid = np.geomspace(args.grid_min, args.grid_max, args.grid_points) * scale
    text = analytic.TabulatedDensity(grid, pdf(grid)).to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- compare ------------------------------------------------------------------


def _reference(kind, state, model, eff, M=None):
    """Analytic reference for ``kind`` checked against the simulated state.

    Returns ``(channel, pdf or None, scale, mean, variance)``.
    """
    a1 = eff.alpha1 * model.sigma2
    a2 = eff.alpha2 * model.sigma2**2
    rho1 = reduced_density(state)
    tr1 = rho1.trace_square()
    tr2 = purity(state)
    spectrum = schmidt_spectrum(rho1)
    if kind in ("p2_k", "p2_general") and not state.is_pure:
        raise ComparisonMismatch(f"{kind} describes pure states; the configured state is mixed")
    if kind in ("p1_schmidt", "p2_k"):
        if len(spectrum.entries) != 1 or spectrum.entries[0][1] % 2:
            raise ComparisonMismatch("state is not a maximally entangled Schmidt-rank-M state")
        state_M = spectrum.entries[0][1] // 2
        if not math.isclose(spectrum.entries[0][0], 1.0 / (2 * state_M), rel_tol=1e-9):
            raise ComparisonMismatch("state is not a maximally entangled Schmidt-rank-M state")
        if M is not None and M != state_M:
            raise ComparisonMismatch(f"--M {M} does not match the state's Schmidt rank {state_M}")
        M = state_M
    mean1, var1 = a1, a1**2 * tr1
    mean2, var2 = a2, a2**2 * (tr2 + 2 * tr1)
    if kind == "p2_gaussian":
        return "I2", None, a2, mean2, var2
    if kind.startswith("p1"):
        pdf, scale = analytic_pdf(kind, M=M, a1=a1, spectrum=spectrum)
        return "I1", pdf, scale, mean1, var1
    pdf, scale = analytic_pdf(kind, M=M, a2=a2, spectrum=spectrum)
    if kind == "p2_exp":
        # the exponential law fixes Var = mean^2
        var2 = a2**2
    return "I2", pdf, scale, mean2, var2


def compare_report(samples, channel, pdf, scale, ref_mean, ref_var, kind) -> dict:
    checks = {}
    m = stats.mean(samples, channel)
    v = stats.variance(samples, channel)
    checks["mean"] = {"observed": m.value, "std_error": m.std_error, "expected": ref_mean, "pass": m.within(ref_mean, N_SIGMA)}
    checks["variance"] = {"observed": v.value, "std_error": v.std_error, "expected": ref_var, "pass": v.within(ref_var, N_SIGMA)}
    if pdf is not None:
        ks = stats.ks_test(samples, channel, analytic.cdf_from_pdf(pdf, scale))
        ks["alpha"] = KS_ALPHA
        ks["pass"] = ks["pvalue"] >= KS_ALPHA
        checks["ks"] = ks
    else:
        sk = stats.skewness(samples, channel)
        checks["skewness"] = {"observed": sk.value, "limit": SKEWNESS_LIMIT, "pass": abs(sk.value) < SKEWNESS_LIMIT}
    return {"kind": kind, "channel": channel, "n": samples.count, "checks": checks, "pass": all(c["pass"] for c in checks.values())}


def cmd_compare(args) -> int:
    cfg = _config_from_args(args)
    state = cfg.build_state()
    model = cfg.build_model(state)
    eff = cfg.build_efficiencies()
    channel, pdf, scale, ref_mean, ref_var = _reference(args.kind, state, model, eff, args.M)
    samples, *_ = simulate(cfg)
    report = compare_report(samples, channel, pdf, scale, ref_mean, ref_var, args.kind)
    out = write_outputs(cfg, samples, report["checks"].get("ks"))
    target = Path(args.report) if args.report else out / "compare.json"
    target.write_text(_dump_json(report))
    verdict = "PASS" if report["pass"] else "FAIL"
    print(f"{verdict} {args.kind} vs {channel} ({samples.count} trials) -> {target}")
    return EXIT_OK if report["pass"] else EXIT_FAIL


# --- purity -------------------------------------------------------------------


def cmd_purity(args) -> int:
    cfg = _config_from_args(args)
    samples, state, *_ = simulate(cfg)
    est = stats.purity_estimate(samples)
    doc = {
        "n": samples.count,
        "V1": stats.visibility(samples, "I1").as_dict(),
        "V2": stats.visibility(samples, "I2").as_dict(),
        "purity": est.as_dict(),
        "purity_exact": purity(state),
    }
    text = _dump_json(doc)
    if args.out_dir is not None:
        out = Path(cfg.output["dir"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "purity.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def _add_run_flags(p):
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--bins", type=int)
    p.add_argument("--ensemble", choices=ENSEMBLES)
    p.add_argument("--workers", type=int)
    p.add_argument("--samples", action=argparse.BooleanOptionalAction, default=None, help="write samples.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twophoton-speckle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo speckle ensemble -> histograms and summary")
    _add_run_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analytic", help="tabulate an analytic speckle density as CSV")
    p.add_argument("kind", choices=ANALYTIC_KINDS)
    p.add_argument("--M", type=int)
    p.add_argument("--a1", type=float, default=1.0, help="alpha1 * sigma2")
    p.add_argument("--a2", type=float, default=1.0, help="alpha2 * sigma2^2")
    p.add_argument("--spectrum", help="JSON list of [gamma, multiplicity]")
    p.add_argument("--grid-min", type=float, default=1e-4, help="in units of the mean")
    p.add_argument("--grid-max", type=float, default=50.0, help="in units of the mean")
    p.add_argument("--grid-points", type=int, default=200)
    p.add_argument("--linear", action="store_true", help="linear instead of log spacing")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("compare", help="simulate and test against an analytic reference")
    _add_run_flags(p)
    p.add_argument("--kind", required=True, choices=COMPARE_KINDS)
    p.add_argument("--M", type=int)
    p.add_argument("--report", help="report path (default <out-dir>/compare.json)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("purity", help="estimate Tr rho^2 from the two visibilities")
    _add_run_flags(p)
    p.set_defaults(func=cmd_purity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
