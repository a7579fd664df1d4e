"""Command line front end: ``emfp run | sweep | report | holes``.

Exit codes: 0 success, 1 other package or I/O error, 2 configuration
error (including bad arguments), 3 unstable run.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .driver import SimConfig, SimResult, run_simulation
from .errors import ConfigError, EMFPError, UnstableRun
from .postprocess import build_trend_report, holes_for_result, summarize_holes, write_metrics_csv, write_vtk

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_UNSTABLE = 0, 1, 2, 3


def _energies(text: str) -> list[float]:
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("energies must be a non-empty list of values >= 0")
    return vals


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _progress(quiet: bool):
    if quiet:
        return None
    step = [0]

    def cb(t, st):
        step[0] += 1
        if step[0] % 50 == 0:
            print(f"  t = {t * 1e6:6.1f} us  deleted = {int((~st.alive).sum())}", file=sys.stderr, flush=True)
    return cb


def _execute(cfg: SimConfig, out: Path, threads: int | None, frames: int, quiet: bool) -> SimResult:
    out.mkdir(parents=True, exist_ok=True)
    if frames:
        cfg = cfg.replace(frame_every=frames)
    res = run_simulation(cfg, workers=threads, frames_dir=out / "frames" if frames else None,
                         progress=_progress(quiet))
    res.save(out / "result")
    write_vtk(res, out / "final.vtk")
    write_metrics_csv(build_trend_report([res]), out / "metrics.csv")
    return res


def _print_holes(holes, file=None):
    file = file or sys.stdout
    print(f"{'site':<10} {'status':<16} {'d_mm':>7} {'deleted':>8} {'slug':>5} {'max_eps_p':>10}", file=file)
    for h in holes:
        d = f"{h.diameter * 1e3:7.3f}" if h.diameter is not None else "      -"
        print(f"{h.site:<10} {h.status:<16} {d} {h.n_deleted:>8} {str(h.slug_separated):>5} "
              f"{h.max_eps_p:10.4f}", file=file)


def cmd_run(args) -> int:
    cfg = SimConfig.from_file(args.config)
    if args.energy is not None:
        cfg = cfg.replace(energy_kJ=args.energy)
    res = _execute(cfg, Path(args.out), args.threads, args.frames, args.quiet)
    m = res.metrics()
    print(f"{cfg.name}: {m['holes']} holes ({m['complete']} complete), mean diameter "
          f"{m['mean_diameter_mm'] if m['mean_diameter_mm'] is not None else '-'} mm, "
          f"stop={res.stats['stop']} at {res.stats['t_end'] * 1e6:.1f} us")
    print(f"energy balance error {res.max_balance_error():.3%} of peak external work")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = SimConfig.from_file(args.config)
    out = Path(args.out)
    results = []
    for e in args.energies:
        cfg = base.replace(energy_kJ=e, name=f"{base.name}_{e:g}kJ")
        print(f"== {cfg.name}", flush=True)
        results.append(_execute(cfg, out / f"E{e:g}kJ", args.threads, 0, args.quiet))
    report = build_trend_report(results)
    write_metrics_csv(report, out / "metrics.csv")
    print(report.summary())
    return EXIT_OK


def _result_files(root: Path) -> list[Path]:
    if root.is_file():
        return [root]
    return sorted(p for p in root.rglob("*.json") if p.with_suffix(".npz").exists())


class SimpleResult:
    """Just the metadata half of a stored result; enough for metrics."""

    def __init__(self, meta: dict):
        from .postprocess import HoleRecord
        self.config = meta["config"]
        self.holes = [HoleRecord.from_dict(h) for h in meta["holes"]]

    energy_kJ = SimResult.energy_kJ


def cmd_report(args) -> int:
    files = _result_files(Path(args.inp))
    if not files:
        print(f"no results under {args.inp}", file=sys.stderr)
        return EXIT_ERROR
    metrics = []
    for f in files:
        meta = json.loads(f.read_text())
        res = SimpleResult(meta)
        metrics.append(summarize_holes(res.holes, res))
    report = build_trend_report(metrics)
    write_metrics_csv(report, args.out)
    print(report.summary())
    return EXIT_OK


def cmd_holes(args) -> int:
    res = SimResult.load(args.result)
    fresh = holes_for_result(res)
    _print_holes(fresh)
    m = summarize_holes(fresh, res)
    print(f"holes {m['holes']}/{len(fresh)}  complete {m['complete']}  petaled {m['petaled']}  "
          f"indented {m['indented']}  slugs {m['slugs']}")
    if fresh != res.holes:
        print("warning: re-detected holes differ from the stored records", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emfp", description="Electromagnetic forming and perforation of tubes.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one coupled simulation")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default="emfp_out")
    r.add_argument("--frames", type=int, default=0, help="write a VTK frame every N coupling steps")
    r.add_argument("--threads", type=_positive_int, default=None)
    r.add_argument("--energy", type=float, default=None, help="bank energy in kJ (rescales the current)")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run the config at several bank energies")
    s.add_argument("--config", required=True)
    s.add_argument("--energies", type=_energies, default=[4.8, 5.7, 6.5])
    s.add_argument("--out", default="emfp_sweep")
    s.add_argument("--threads", type=_positive_int, default=None)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("report", help="trend report over stored results")
    rp.add_argument("--in", dest="inp", required=True)
    rp.add_argument("--out", default="report.csv")
    rp.set_defaults(func=cmd_report)

    h = sub.add_parser("holes", help="re-run hole detection on a stored result")
    h.add_argument("--result", required=True)
    h.set_defaults(func=cmd_holes)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnstableRun as exc:
        print(f"unstable run: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (EMFPError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
