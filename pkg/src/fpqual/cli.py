"""Command-line front end: ``fpqual score|map|compare|evaluate|synth``.

Data files carry no timestamps; metadata lines start with ``#``. Exit
status is 0 on success, 1 when some input failed, 2 on configuration or
usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from . import synth
from .config import ToolConfig
from .errors import ConfigError, FpqualError
from .imagecore import GrayImage, load_image, save_pgm, save_png
from .report import MAP_METRICS, METRICS, assess, parse_metrics

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2
IMAGE_SUFFIXES = (".pgm", ".png")


class UsageError(Exception):
    """Bad flags or configuration; maps to exit status 2."""


# ----------------------------------------------------------------- helpers


def _config_from_args(args) -> ToolConfig:
    try:
        cfg = ToolConfig.load(args.config) if getattr(args, "config", None) else ToolConfig()
        overrides = {}
        if getattr(args, "dpi", None) is not None:
            overrides["dpi"] = args.dpi
        if getattr(args, "block_size", None) is not None:
            overrides["block_size"] = args.block_size
        return cfg.replace(**overrides) if overrides else cfg
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _metrics_from_args(args) -> tuple:
    try:
        return parse_metrics(getattr(args, "metrics", None))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def expand_inputs(paths) -> list[Path]:
    """Files as given; directories expand to their PGM/PNG files sorted by name."""
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES and q.is_file()))
        else:
            out.append(p)
    return out


def _open_out(path):
    if path is None or str(path) == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _write_text(path, text: str):
    fh, close = _open_out(path)
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()


def _warn(msg: str):
    print(f"warning: {msg}", file=sys.stderr)


def _error(msg: str):
    print(f"error: {msg}", file=sys.stderr)


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else f"{v:.6f}"


def score_images(paths, config: ToolConfig, metrics=METRICS, dpi: int | None = None):
    """Yield ``(path, QualityReport or None, error or None)`` in input order."""
    for path in paths:
        try:
            img = load_image(path, dpi if dpi is not None else config.dpi)
            yield path, assess(img, config, metrics, image_id=str(path)), None
        except (FpqualError, ValueError, OSError) as exc:
            yield path, None, str(exc)


def _score_csv(reports, metrics, wide: bool = False) -> str:
    """Long form: a ``# image=`` line, then ``metric,global_score`` rows per image.

    ``wide`` gives one ``image,<metrics...>`` row per image instead.
    """
    buf = io.StringIO()
    buf.write(f"# fpqual {__version__} score\n")
    w = csv.writer(buf, lineterminator="\n")
    if wide:
        w.writerow(["image", *metrics])
        for rep in reports:
            w.writerow([rep.image, *(_fmt(rep.scores[m]) for m in metrics)])
        return buf.getvalue()
    w.writerow(["metric", "global_score"])
    for rep in reports:
        buf.write(f"# image={rep.image}\n")
        for m in metrics:
            w.writerow([m, _fmt(rep.scores[m])])
    return buf.getvalue()


# ---------------------------------------------------------------- commands


def cmd_score(args) -> int:
    config = _config_from_args(args)
    metrics = _metrics_from_args(args)
    paths = expand_inputs(args.images)
    if not paths:
        raise UsageError("no input images")
    spectrum_dir = Path(args.dump_spectrum) if args.dump_spectrum else None
    if spectrum_dir is not None:
        if "qf" not in metrics:
            raise UsageError("--dump-spectrum needs the qf metric")
        spectrum_dir.mkdir(parents=True, exist_ok=True)
    reports, failed = [], 0
    for path, rep, err in score_images(paths, config, metrics, args.dpi):
        if err is not None:
            failed += 1
            _error(err)
            continue
        for w in rep.warnings:
            _warn(f"{path}: {w}")
        reports.append(rep)
        if spectrum_dir is not None and rep.bands is not None:
            (spectrum_dir / f"{path.stem}.spectrum.csv").write_text(rep.bands.to_csv(), encoding="utf-8")
    _write_text(args.out, _score_csv(reports, metrics, args.wide))
    return EXIT_PARTIAL if failed else EXIT_OK


def _heatmap_image(bqm, block_size: int) -> GrayImage:
    return GrayImage(np.kron(bqm.heatmap(), np.ones((block_size, block_size), dtype=np.uint8)))


def cmd_map(args) -> int:
    config = _config_from_args(args)
    metrics = tuple(m for m in _metrics_from_args(args) if m in MAP_METRICS)
    if not metrics:
        raise UsageError(f"no block-map metric selected; maps exist for {', '.join(MAP_METRICS)}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    failed = 0
    for path, rep, err in score_images(expand_inputs(args.images), config, metrics, args.dpi):
        if err is not None:
            failed += 1
            _error(err)
            continue
        for w in rep.warnings:
            _warn(f"{path}: {w}")
        for m in metrics:
            bqm = rep.maps[m]
            (out_dir / f"{path.stem}.{m}.csv").write_text(bqm.to_csv(), encoding="utf-8")
            if args.heatmap:
                save_pgm(_heatmap_image(bqm, bqm.grid.block_size), out_dir / f"{path.stem}.{m}.pgm")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_compare(args) -> int:
    config = _config_from_args(args)
    metrics = _metrics_from_args(args)
    if len(metrics) < 2:
        raise UsageError("compare needs at least two metrics")
    table, failed = {}, 0
    for i, (path, rep, err) in enumerate(score_images(expand_inputs(args.corpus), config, metrics, args.dpi)):
        if err is not None:
            failed += 1
            _error(err)
            continue
        table[(i, str(path))] = rep.scores  # keyed by position so repeated paths count twice
    if len(table) < 2:
        _error(f"compare needs at least 2 scored images, got {len(table)}")
        return EXIT_PARTIAL
    matrix = ev.metric_correlation_matrix(table, metrics)
    if matrix.undefined:
        _warn("correlation undefined (zero variance across images) for: " + ", ".join(matrix.undefined))
    header = f"# fpqual {__version__} compare images={len(table)}\n"
    _write_text(args.out, header + matrix.to_csv())
    return EXIT_PARTIAL if failed else EXIT_OK


def _parse_fractions(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"invalid --fractions {text!r}") from None


def _separation_csv(rows) -> str:
    lines = ["subject,genuine_score,separation,note"]
    for subj, s, o, err in rows:
        lines.append(f"{subj},{s!r},{'' if o is None else f'{o:.10g}'},{err or ''}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    fractions = _parse_fractions(args.fractions)
    far = config.fixed_far if args.fixed_far is None else args.fixed_far
    frr = config.fixed_frr if args.fixed_frr is None else args.fixed_frr
    for name, v in (("--fixed-far", far), ("--fixed-frr", frr)):
        if not 0 < v < 1:
            raise UsageError(f"{name} must lie in (0, 1)")
    try:
        scores = ev.read_score_csv(args.scores)
    except (ev.ScoreCsvError, OSError) as exc:
        _error(f"{args.scores}: {exc}")
        return EXIT_PARTIAL
    try:
        curve = ev.rejection_sweep(scores, args.quality_key, fractions, fixed_frr=frr, fixed_far=far)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    buf = io.StringIO()
    ev.write_curve_csv(curve, buf)
    _write_text(args.out, buf.getvalue())

    key = args.quality_key or ev.PAIR_KEY
    summary = [f"scores: {len(scores)} ({len(scores.genuine_scores)} genuine, "
               f"{len(scores.impostor_scores)} impostor); quality key: {key}"]
    for f, e, fa, fr in curve.rows():
        summary.append(f"reject {f:.2f}: EER={_fmt(e)} FAR@FRR={frr:g}: {_fmt(fa)} FRR@FAR={far:g}: {_fmt(fr)}")
    unattainable = [f for f, _, fa, fr in curve.rows() if math.isnan(fa) or math.isnan(fr)]
    if unattainable:
        summary.append("operating point unattainable at fraction(s) "
                       + ", ".join(f"{f:g}" for f in unattainable) + " (too few scores)")
    print("\n".join(summary), file=sys.stderr if args.out in (None, "-") else sys.stdout)

    if scores.subjects is not None:
        sep = _separation_csv(ev.subject_separation(scores))
        target = args.separation_out
        if target is None and args.out not in (None, "-"):
            target = str(args.out) + ".separation.csv"
        if target is None:
            sys.stdout.write("# separation\n" + sep)
        else:
            _write_text(target, sep)
    return EXIT_OK


def _save_image(img: GrayImage, path: Path):
    if path.suffix.lower() == ".png":
        save_png(img, path)
    else:
        save_pgm(img, path)


def cmd_synth(args) -> int:
    out = Path(args.out)
    try:
        spec = synth.DegradationSpec(args.noise, args.blur, args.contrast_scale, args.occlusion)
        if args.kind == "scores":
            sspec = synth.SyntheticScoreSpec(args.n_genuine, args.n_impostor, args.genuine_mean,
                                             args.genuine_sd, args.impostor_mean, args.impostor_sd,
                                             args.coupling, args.seed)
            with open(out, "w", encoding="utf-8", newline="") as fh:
                ev.write_score_csv(synth.generate_score_set(sspec), fh)
            params = {k: v for k, v in sspec.__dict__.items() if k != "seed"}
        else:
            if args.kind == "grating":
                img = synth.generate_grating(args.width, args.height, math.radians(args.angle),
                                             args.period, args.contrast, args.dpi)
                params = {"width": args.width, "height": args.height, "angle_deg": args.angle,
                          "period": args.period, "contrast": args.contrast}
            else:
                img, _ = synth.generate_whorl(args.width, args.height, args.period, args.contrast, dpi=args.dpi)
                params = {"width": args.width, "height": args.height, "period": args.period,
                          "contrast": args.contrast}
            img = synth.degrade(img, spec, args.seed)
            _save_image(img, out)
            params.update(noise_sigma=spec.noise_sigma, blur_radius=spec.blur_radius,
                          contrast_scale=spec.contrast_scale, occlusion_fraction=spec.occlusion_fraction,
                          dpi=args.dpi)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    Path(str(out) + ".meta").write_text(synth.metadata_text(args.kind, params, args.seed), encoding="utf-8")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _common_parser(metrics: bool) -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand from resetting flags given before it
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--dpi", type=int, help="scan resolution (overrides config)")
    p.add_argument("--block-size", type=int, help="block size in pixels (overrides config)")
    p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
    if metrics:
        p.add_argument("--metrics", help="comma-separated metric names (default: all)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser(metrics=False)
    with_metrics = _common_parser(metrics=True)
    parser = argparse.ArgumentParser(prog="fpqual", description="Fingerprint image quality toolkit.",
                                     parents=[common])
    parser.add_argument("--version", action="version", version=f"fpqual {__version__}")
    parser.set_defaults(config=None, dpi=None, block_size=None, dump_config=False, metrics=None)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("score", help="global quality scores per image", parents=[with_metrics])
    p.add_argument("images", nargs="+", help="image files or directories")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.add_argument("--dump-spectrum", metavar="DIR", help="write ring-band energies per image to DIR")
    p.add_argument("--wide", action="store_true", help="one row per image instead of one row per metric")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("map", help="per-block quality maps", parents=[with_metrics])
    p.add_argument("images", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--metric", dest="metrics", default=argparse.SUPPRESS, help="single metric to map")
    p.add_argument("--heatmap", action="store_true", help="also write PGM heatmaps (value*255, background 0)")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("compare", help="correlation matrix of metrics over a corpus", parents=[with_metrics])
    p.add_argument("corpus", nargs="+", help="corpus directory or image files")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("evaluate", help="quality-based rejection curve from a score CSV", parents=[common])
    p.add_argument("scores", help="score CSV: kind,score,q_enrol,q_test[,subject][,<metric>...]")
    p.add_argument("--quality-key", help="quality column to rank by (default: pair quality)")
    p.add_argument("--fractions", default="0,0.05,0.1,0.15,0.2,0.25,0.3")
    p.add_argument("--fixed-far", type=float)
    p.add_argument("--fixed-frr", type=float)
    p.add_argument("--out", help="curve CSV (default stdout)")
    p.add_argument("--separation-out", help="per-subject separation CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic fixture")
    p.add_argument("kind", choices=("grating", "whorl", "scores"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dpi", type=int, default=500)
    p.add_argument("--width", type=int, default=synth.WHORL_FIXTURE["width"])
    p.add_argument("--height", type=int, default=synth.WHORL_FIXTURE["height"])
    p.add_argument("--period", type=float, default=synth.WHORL_FIXTURE["period"])
    p.add_argument("--angle", type=float, default=0.0, help="grating ridge angle in degrees")
    p.add_argument("--contrast", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--blur", type=int, default=0)
    p.add_argument("--contrast-scale", type=float, default=1.0)
    p.add_argument("--occlusion", type=float, default=0.0)
    defaults = synth.SyntheticScoreSpec()
    p.add_argument("--n-genuine", type=int, default=defaults.n_genuine)
    p.add_argument("--n-impostor", type=int, default=defaults.n_impostor)
    p.add_argument("--genuine-mean", type=float, default=defaults.genuine_mean)
    p.add_argument("--genuine-sd", type=float, default=defaults.genuine_sd)
    p.add_argument("--impostor-mean", type=float, default=defaults.impostor_mean)
    p.add_argument("--impostor-sd", type=float, default=defaults.impostor_sd)
    p.add_argument("--coupling", type=float, default=defaults.coupling)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.dump_config:
            sys.stdout.write(_config_from_args(args).dumps())
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        return args.func(args)
    except UsageError as exc:
        _error(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
