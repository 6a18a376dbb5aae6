"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 runtime or physics error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, harness
from .drift import fit_creep
from .errors import ConfigurationError, FreqLockError
from .scenario import load_scenario
from .textio import read_columns

log = logging.getLogger("freqlock")


def _values(text):
    items = [v for v in text.replace(",", " ").split() if v]
    try:
        return [float(v) for v in items]
    except ValueError:
        raise ConfigurationError(f"--values must be numbers, got {text!r}") from None


def _out_dir(args, default="out"):
    return Path(args.out_dir or default)


def _header(path):
    """Column names from the last '#' line before the data, if any."""
    names = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            names = line[1:].split()
        elif line.strip():
            break
    return names


def _column(path, data, name, default_index):
    names = _header(path)
    if name is None:
        return data[:, default_index]
    if name in names and len(names) == data.shape[1]:
        return data[:, names.index(name)]
    raise ConfigurationError(f"{path}: no column named {name!r} (have {', '.join(names) or 'none'})")


def cmd_run(args):
    res, target = harness.run_scenario(args.scenario, out_dir=args.out_dir, seed=args.seed)
    log.info("artifacts written to %s", target)
    sys.stdout.write(harness.format_summary(res.summary))


def cmd_validate(args):
    scn = load_scenario(args.scenario)
    arms = harness.validate(scn)
    for arm in arms:
        tau_f, kp, ki = arm.locked.resolved()
        log.info(
            "arm %d: set point %.4f GHz, T = %.4f, slope %.1f cps/GHz, tau_filter %.3g s",
            arm.index, arm.set_point.nu, arm.set_point.transmission, arm.locked.lock.slope, tau_f,
        )
    print(f"{args.scenario}: ok")


def cmd_sweep(args):
    rows = harness.sweep(args.scenario, args.axis, _values(args.values), out_dir=_out_dir(args), seed=args.seed)
    keys = [args.axis, "arm1_locked_rms_mhz", "arm1_locked_deviation_mhz", "arm1_locked_diverged"]
    print("\t".join(keys))
    for row in rows:
        print("\t".join(harness._fmt(row.get(k, float("nan"))) for k in keys))


def cmd_psd(args):
    data = read_columns(args.trace, ncols=2)
    t = data[:, 0]
    x = _column(args.trace, data, args.column, 1)
    if t.size < 4:
        raise ConfigurationError(f"{args.trace}: too few samples")
    dt = float(np.median(np.diff(t)))
    psd = analysis.welch_psd(x, dt, segment_length=args.segment)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / (Path(args.trace).stem + "_psd.tsv")
    psd.save(path, unit="input^2/Hz")
    print(f"segments={psd.segments}")
    print(f"df_hz={psd.df:.6g}")
    if args.shot_floor is not None:
        try:
            print(f"recommended_bandwidth_mhz={1e3 * analysis.recommend_bandwidth(psd, args.shot_floor):.6g}")
        except FreqLockError as exc:
            print(f"recommended_bandwidth_mhz=nan  # {exc}")
    log.info("PSD written to %s", path)


def cmd_fit_creep(args):
    data = read_columns(args.trace, ncols=2)
    t = data[:, 0]
    y = _column(args.trace, data, args.column, 1)
    fit = fit_creep(t, y, t0=args.t0)
    m, e = fit.model, fit.errors
    lines = [
        f"dnu0_ghz={m.dnu0:.6g}",
        f"dnu0_err_ghz={e['dnu0']:.3g}",
        f"alpha={m.alpha:.6g}",
        f"alpha_err={e['alpha']:.3g}",
        f"t0_s={m.t0:.6g}",
        f"residual_rms_mhz={1e3 * fit.residual_rms:.6g}",
    ]
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / (Path(args.trace).stem + "_creep_fit.txt")).write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_hom(args):
    scn = load_scenario(args.config)
    seed = scn.run.seed if args.seed is None else args.seed
    v_true = scn.hom.v_true
    if v_true < 0:
        v_true = harness.tpi_visibility(*harness._emitters(scn), 0.0)
    hist, v, s = harness.run_hom(scn, v_true, harness.derive_seed(seed, "hom"))
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.config).stem
    hist.save(out / f"{stem}_hom.tsv")
    from . import plotting

    plotting.plot_histogram(hist, out / f"{stem}_hom.png")
    print(f"v_true={v_true:.6g}")
    print(f"v={v:.6g}")
    print(f"sigma={s:.6g}")


def build_parser():
    p = argparse.ArgumentParser(prog="freqlock", description="Rate-based frequency lock simulator.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the scenario)")
    common.add_argument("--out-dir", default=None, help="directory for artifacts")
    common.add_argument("--quiet", action="store_true", help="suppress progress messages")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", parents=[common], help="run a scenario and write its report")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("validate", parents=[common], help="check a scenario without simulating")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("sweep", parents=[common], help="rerun a scenario over values of one field")
    s.add_argument("scenario")
    s.add_argument("--axis", required=True, help="section.key, e.g. lock1.bandwidth_mhz")
    s.add_argument("--values", required=True, help="comma- or space-separated numbers")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("psd", parents=[common], help="Welch PSD of a column of a trace file")
    s.add_argument("trace")
    s.add_argument("--column", default=None, help="column name (default: second column)")
    s.add_argument("--segment", type=int, default=None, help="segment length in samples")
    s.add_argument("--shot-floor", type=float, default=None, help="flat floor for a bandwidth recommendation")
    s.set_defaults(func=cmd_psd)

    s = sub.add_parser("fit-creep", parents=[common], help="fit the logarithmic creep law to a trace")
    s.add_argument("trace")
    s.add_argument("--column", default=None, help="column name (default: second column)")
    s.add_argument("--t0", type=float, default=None, help="known step time in s")
    s.set_defaults(func=cmd_fit_creep)

    s = sub.add_parser("hom", parents=[common], help="synthesize and analyse a HOM histogram")
    s.add_argument("config", help="scenario file; its [hom] section is used")
    s.set_defaults(func=cmd_hom)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        args.func(args)
    except FreqLockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
