"""``mcnlm`` command line: denoising runs, sweeps, bound tables and the external database."""

from __future__ import annotations

import argparse
import csv
import io as _io
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    bernstein_bound, chebyshev_bound, instance_stats, prop1_bound, theorem1_bound_from_stats,
    theorem1_bound_uniform,
)
from .core import Image, NlmParams, PatchConfig, SamplingPattern
from .estimator import population_moments, sample_estimates
from .io import FormatError, load_database, read_image, save_database, write_image
from .pipeline import (
    ExternalJob, InternalJob, add_gaussian_noise, build_patch_database, psnr, run_external,
    run_internal, sample_queries,
)
from .sampling import DEFAULT_BINS, optimal_pattern, uniform_pattern
from .synthetic import signal_instance

DEFAULT_TRIALS = 10
EPS_GRID = (0.005, 0.01, 0.02, 0.05, 0.1)


def build_id() -> str:
    """Short git hash of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_odd(text: str) -> int:
    v = int(text)
    if v < 1 or v % 2 == 0:
        raise argparse.ArgumentTypeError("must be a positive odd integer")
    return v


def _write_csv(path, header, rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    text = buf.getvalue()
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _internal_params(args) -> NlmParams:
    half = args.window // 2
    h_r = args.hr if args.hr is not None else 1.3 * args.sigma / 255.0
    if h_r <= 0:
        raise ValueError("--hr must be positive (or give a positive --sigma)")
    h_s = args.hs if args.hs is not None else half / 3.0
    rho = math.inf if args.window == 0 else half
    return NlmParams(h_r=h_r, h_s=h_s, rho=rho)


def _add_internal_flags(p):
    p.add_argument("--input", required=True, help="clean image (PGM P5 or .raw)")
    p.add_argument("--sigma", type=float, default=20.0, help="noise std in 0-255 units (0: input is already noisy)")
    p.add_argument("--pattern", choices=("uniform", "spatial", "oracle"), default="spatial")
    p.add_argument("--window", type=int, default=21, help="search window side (0 for the whole image)")
    p.add_argument("--patch", type=_positive_odd, default=5)
    p.add_argument("--hr", type=float, default=None, help="range parameter, normalized units (default 1.3 sigma/255)")
    p.add_argument("--hs", type=float, default=None, help="spatial parameter (default floor(window/2)/3; 'inf' allowed)")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.add_argument("--fast", action="store_true", help="reuse one set of sampled offsets for every pixel")
    p.add_argument("--workers", type=int, default=None)


def _prepare(args):
    clean = read_image(args.input)
    noisy = add_gaussian_noise(clean, args.sigma / 255.0, args.noise_seed)
    return clean, noisy, _internal_params(args), PatchConfig(args.patch)


def _run_trials(args, clean, noisy, params, cfg, xi):
    rows, first = [], None
    trials = 1 if xi == 1.0 else args.trials
    for t in range(trials):
        job = InternalJob(noisy, params, cfg, xi=xi, pattern_kind=args.pattern,
                          seed=_trial_seed(args.seed, t), fast=args.fast, workers=args.workers)
        res = run_internal(job)
        first = first or res
        rows.append((t, psnr(res.image, clean), res.seconds, res.sampling_ratio))
    return rows, first.image


def _param_cols(args, params: NlmParams, xi):
    return [args.seed, build_id(), xi, args.pattern, args.window, args.patch, params.h_r, params.h_s,
            args.sigma, args.noise_seed]


PARAM_HEADER = ["seed", "build", "xi", "pattern", "window", "patch", "hr", "hs", "sigma", "noise_seed"]


def cmd_denoise(args) -> int:
    clean, noisy, params, cfg = _prepare(args)
    rows, image = _run_trials(args, clean, noisy, params, cfg, args.xi)
    write_image(args.output, image)
    ps = np.array([r[1] for r in rows])
    extra = _param_cols(args, params, args.xi)
    out = [[*r, *extra] for r in rows]
    out.append(["mean", ps.mean(), np.mean([r[2] for r in rows]), np.mean([r[3] for r in rows]), *extra])
    out.append(["stddev", ps.std(ddof=1) if ps.size > 1 else 0.0, "", "", *extra])
    stats = args.stats or str(args.output) + ".csv"
    _write_csv(stats, ["trial", "psnr", "seconds", "sampling_ratio", *PARAM_HEADER], out)
    print(f"PSNR {ps.mean():.3f} dB over {ps.size} trial(s); stats in {stats}")
    return 0


def cmd_sweep_xi(args) -> int:
    clean, noisy, params, cfg = _prepare(args)
    out = []
    for xi in args.xi:
        rows, _ = _run_trials(args, clean, noisy, params, cfg, xi)
        ps = np.array([r[1] for r in rows])
        out.append([xi, ps.mean(), ps.std(ddof=1) if ps.size > 1 else 0.0, ps.size,
                    np.mean([r[3] for r in rows]), *_param_cols(args, params, xi)[:2]])
    _write_csv(args.output, ["xi", "mean_psnr", "stddev", "trials", "sampling_ratio", "seed", "build"], out)
    return 0


def cmd_bounds(args) -> int:
    header = ["eps", "empirical", "theorem1", "prop1", "chebyshev", "bernstein", "empirical_sn", "violation"]
    rows, violations = [], 0
    rng = np.random.default_rng(args.seed)
    explicit = args.mu_b is not None
    if explicit:
        missing = [f for f in ("alpha_sq", "beta_sq", "m_alpha", "m_beta") if getattr(args, f) is None]
        if missing:
            print("explicit statistics need --mu-b --alpha-sq --beta-sq --m-alpha --m-beta", file=sys.stderr)
            return 2
    else:
        h_r = args.hr if args.hr is not None else 15.0 / 255.0
        w, x = signal_instance(args.n, args.sigma / 255.0, h_r, args.patch_length, args.seed)
        pattern = uniform_pattern(args.n, args.xi) if args.pattern == "uniform" else optimal_pattern(w, args.xi)
        z = float(np.sum(w * x) / np.sum(w))
        est = sample_estimates(w, x, pattern, args.trials, rng)
        mu_B = population_moments(w, x)[1]
    sn = rng.binomial(args.n, args.xi, size=args.trials) / args.n
    for eps in args.eps:
        if explicit:
            t1 = theorem1_bound_uniform(args.n, args.xi, args.mu_b, eps, args.alpha_sq, args.beta_sq,
                                        args.m_alpha, args.m_beta)
            p1, emp = prop1_bound(args.mu_b, args.n, args.xi, eps), float("nan")
        else:
            s = instance_stats(w, x, pattern, eps)
            t1 = theorem1_bound_from_stats(s.n, s.xi, s.mu_B, eps, s.var_alpha, s.var_beta, s.M_alpha, s.M_beta)
            p1 = prop1_bound(mu_B, args.n, args.xi, eps) if args.pattern == "uniform" else float("nan")
            emp = float(np.mean(np.abs(est - z) > eps))
        var = args.xi * (1 - args.xi)
        cheb = chebyshev_bound(var, args.n, eps)
        bern = bernstein_bound(var, 1.0, args.n, eps)
        emp_sn = float(np.mean(sn - args.xi > eps))
        bad = (emp > t1) or (emp > p1) or emp_sn > min(cheb, 1.0) or emp_sn > bern
        violations += bool(bad)
        rows.append([eps, emp, t1, p1, cheb, bern, emp_sn, int(bad)])
    _write_csv(args.output, header, rows)
    if violations:
        print(f"{violations} bound violation(s)", file=sys.stderr)
        return 1
    return 0


def _corpus(directory) -> list[Image]:
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".pgm", ".raw"))
    return [read_image(p) for p in paths]


def cmd_build_db(args) -> int:
    images = _corpus(args.corpus)
    if not images:
        print(f"error: no .pgm/.raw images in {args.corpus}", file=sys.stderr)
        return 1
    params = NlmParams(h_r=args.hr)
    db = build_patch_database(images, PatchConfig(args.patch), params, Q=args.bins)
    save_database(args.output, db)
    print(f"wrote {db.n} patches (d={db.d}, Q={db.n_bins}) to {args.output}")
    return 0


def cmd_denoise_external(args) -> int:
    db = load_database(args.db)
    side = int(round(math.sqrt(db.d)))
    cfg = PatchConfig(side)
    params = NlmParams(h_r=db.h_r)
    clean = [read_image(p) for p in args.input]
    noisy = [add_gaussian_noise(img, args.sigma / 255.0, args.noise_seed + k) for k, img in enumerate(clean)]
    queries, truth = sample_queries(clean, noisy, cfg, args.queries, args.noise_seed)
    out = []
    for xi in args.xi:
        trials = 1 if xi == 1.0 else args.trials
        ps, ratio = [], []
        for t in range(trials):
            res = run_external(ExternalJob(db, queries, params, xi=xi, pattern_kind=args.pattern,
                                           seed=_trial_seed(args.seed, t)))
            ps.append(psnr(np.clip(res.estimates, 0, 1), truth))
            ratio.append(res.sampling_ratio)
        ps = np.array(ps)
        out.append([xi, ps.mean(), ps.std(ddof=1) if ps.size > 1 else 0.0, ps.size, np.mean(ratio),
                    args.pattern, args.seed, build_id(), db.n, args.queries, args.sigma])
    _write_csv(args.output, ["xi", "mean_psnr", "stddev", "trials", "sampling_ratio", "pattern",
                             "seed", "build", "db_size", "queries", "sigma"], out)
    return 0


def cmd_oracle(args) -> int:
    from .oracle import enumerate_estimator, grid_solve_pattern
    b = np.array(args.b)
    p_grid = grid_solve_pattern(b, args.xi)
    p_closed = optimal_pattern(b, args.xi).probs
    rows = [[j, b[j], p_closed[j], p_grid[j]] for j in range(b.size)]
    _write_csv(args.output, ["j", "b", "closed_form", "grid"], rows)
    if args.centers:
        dist = enumerate_estimator(b, np.array(args.centers), SamplingPattern(p_closed, args.xi))
        print(f"E[Z]={dist.mean:.12g} z={dist.z:.12g} mse={dist.mse():.6g}", file=sys.stderr)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcnlm", description="Monte Carlo non-local means denoising")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("denoise", help="denoise one image and write PSNR statistics")
    _add_internal_flags(p)
    p.add_argument("--output", required=True)
    p.add_argument("--stats", default=None, help="stats CSV path (default OUTPUT.csv)")
    p.add_argument("--xi", type=float, default=1.0)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("sweep-xi", help="PSNR versus sampling ratio, as CSV")
    _add_internal_flags(p)
    p.add_argument("--xi", type=_floats, default=[0.05, 0.1, 0.2, 0.5, 1.0])
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_sweep_xi)

    p = sub.add_parser("bounds", help="empirical tail probabilities against the analytical bounds")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--sigma", type=float, default=5.0, help="noise std of the 1-D signal, 0-255 units")
    p.add_argument("--xi", type=float, default=0.05)
    p.add_argument("--hr", type=float, default=None)
    p.add_argument("--patch-length", type=int, default=5)
    p.add_argument("--pattern", choices=("uniform", "optimal"), default="uniform")
    p.add_argument("--eps", type=_floats, default=list(EPS_GRID))
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    for flag in ("--mu-b", "--alpha-sq", "--beta-sq", "--m-alpha", "--m-beta"):
        p.add_argument(flag, type=float, default=None,
                       help="explicit statistic of a uniform-pattern instance (means of alpha^2, beta^2)")
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("build-db", help="build an external patch database from a directory of images")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--patch", type=_positive_odd, default=5)
    p.add_argument("--hr", type=float, default=26.0 / 255.0)
    p.add_argument("--seed", type=int, default=0, help="recorded only; the build is deterministic")
    p.set_defaults(func=cmd_build_db)

    p = sub.add_parser("denoise-external", help="denoise sampled query patches against a database")
    p.add_argument("--db", required=True)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--sigma", type=float, default=20.0)
    p.add_argument("--xi", type=_floats, default=[1e-3, 1e-2, 1e-1, 1.0])
    p.add_argument("--pattern", choices=("uniform", "intensity"), default="intensity")
    p.add_argument("--queries", type=int, default=2000)
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_denoise_external)

    p = sub.add_parser("oracle", help=argparse.SUPPRESS)
    p.add_argument("--b", type=_floats, required=True)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--centers", type=_floats, default=None)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_oracle)
    # keep the hidden command out of the COMMAND listing
    sub._choices_actions = [a for a in sub._choices_actions if a.dest != "oracle"]
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
