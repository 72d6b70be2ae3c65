"""``cacscore`` command line: score, eval, calibrate, phantom, roi.

Exit codes: 0 success, 2 input/parse error, 3 geometry mismatch,
4 degenerate statistics.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .agatston import total_score
from .calibration import CalibrationModel, apply_correction, bland_altman, fit_linear
from .detect import detect_classical, ingest_predictions
from .errors import DegenerateInput, GeometryMismatch, InputError
from .evaluation import match_lesions
from .lesion import CALCIUM_THRESHOLD_HU, DEFAULT_MIN_VOXELS
from .mask_ops import DEFAULT_DILATION_RADIUS, build_cardiac_roi
from .phantom import PhantomSpec, generate
from .volume_io import LabelMask, OrganMasks, Volume, parse_nifti, require_same_geometry, save_nifti

log = logging.getLogger("cacscore")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_GEOMETRY = 3
EXIT_DEGENERATE = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load(path: str | Path, kind: str) -> Volume | LabelMask:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return parse_nifti(data, kind)  # type: ignore[arg-type]
    except (InputError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}") from exc


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


DEFAULT_MODEL_PATH = Path(__file__).parent / "data" / "default_calibration.json"


def _load_model(path: str) -> CalibrationModel:
    if path == "default":
        path = str(DEFAULT_MODEL_PATH)
    try:
        return CalibrationModel.load(path)
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {path}: {exc.strerror or exc}") from exc
    except InputError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc


# ---------------------------------------------------------------- score


def _score_case(args: argparse.Namespace, base: Path | None = None) -> dict:
    def p(name: str | None) -> Path | None:
        if name is None:
            return None
        return base / name if base is not None else Path(name)

    volume = _load(p(args.volume), "volume")
    if args.mask:
        labels = _load(p(args.mask), "mask")
        source = "mask"
    elif args.prediction:
        labels = ingest_predictions(_load(p(args.prediction), "mask"), args.min_voxels)
        source = "prediction"
    else:
        if args.roi:
            roi = _load(p(args.roi), "mask")
        elif args.heart and args.aorta and args.lungs:
            roi = _roi_from_files(p(args.heart), p(args.aorta), p(args.lungs), args.dilation_radius)
        else:
            raise CliError(EXIT_INPUT, "need --mask, --prediction, --roi, or all of --heart/--aorta/--lungs")
        labels = detect_classical(volume, roi, args.threshold_hu, args.min_voxels)
        source = "classical"

    report = total_score(volume, labels, args.threshold_hu)
    out = report.to_dict()
    out["n_lesions"] = len(report.per_lesion)
    out["source"] = source
    out["volume"] = str(p(args.volume))
    if args.calibration:
        model = _load_model(args.calibration)
        try:
            corrected = apply_correction(model, report.total)
        except DegenerateInput as exc:
            raise CliError(EXIT_DEGENERATE, f"{args.calibration}: {exc}") from exc
        out["corrected_total"] = round(corrected, 2)
        out["calibration"] = model.to_dict()
    return out


def _roi_from_files(heart: Path, aorta: Path, lungs: Path, radius: int) -> LabelMask:
    masks = [_load(f, "mask") for f in (heart, aorta, lungs)]
    require_same_geometry(*masks)
    binary = [LabelMask.like(m, (m.data != 0).astype("uint8")) for m in masks]
    return build_cardiac_roi(OrganMasks(*binary), radius)


def cmd_score(args: argparse.Namespace) -> int:
    if args.batch:
        return _score_batch(args)
    if args.volume is None:
        raise CliError(EXIT_INPUT, "--volume is required without --batch")
    out = _score_case(args)
    _write_json(Path(args.out), out)
    line = f"total {out['total']:.2f} ({out['category']})"
    if "corrected_total" in out:
        line += f", corrected {out['corrected_total']:.2f}"
    print(line)
    return EXIT_OK


def _score_batch(args: argparse.Namespace) -> int:
    root = Path(args.batch)
    if not root.is_dir():
        raise CliError(EXIT_INPUT, f"batch directory {root} does not exist")
    if args.volume is None:
        args.volume = "volume.nii.gz"
    cases = sorted(d for d in root.iterdir() if d.is_dir() and (d / args.volume).exists())
    out_dir = Path(args.out_dir or root)

    def run(case: Path) -> tuple[int, dict]:
        try:
            return EXIT_OK, _score_case(args, case)
        except CliError as exc:
            return exc.code, {"error": str(exc)}
        except GeometryMismatch as exc:
            return EXIT_GEOMETRY, {"error": f"{case}: {exc}"}

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(run, cases))

    summary = []
    code = EXIT_OK
    for case, (rc, rep) in zip(cases, results):
        if rc == EXIT_OK:
            _write_json(out_dir / f"{case.name}_report.json", rep)
            summary.append({"case": case.name, "total": rep["total"], "category": rep["category"],
                            **({"corrected_total": rep["corrected_total"]} if "corrected_total" in rep else {})})
            print(f"{case.name}: total {rep['total']:.2f} ({rep['category']})")
        else:
            summary.append({"case": case.name, "error": rep["error"], "exit_code": rc})
            print(f"{case.name}: error: {rep['error']}", file=sys.stderr)
            code = code or rc
    _write_json(out_dir / "summary.json", {"cases": summary})
    return code


# ---------------------------------------------------------------- eval


def cmd_eval(args: argparse.Namespace) -> int:
    pred = _load(args.pred, "mask")
    gt = _load(args.gt, "mask")
    require_same_geometry(pred, gt)
    report = match_lesions(ingest_predictions(pred, args.min_voxels), gt)
    out = report.to_dict()
    _write_json(Path(args.out), out)
    fmt = lambda x: "undefined" if x is None else f"{x:.3f}"  # noqa: E731
    print(f"TP {report.tp} FP {report.fp} FN {report.fn} precision {fmt(report.precision)} "
          f"recall {fmt(report.recall)} dice {out['dice'] or 'n/a'}")
    return EXIT_OK


# ---------------------------------------------------------------- calibrate


def read_pairs_csv(path: str | Path) -> list[tuple[float, float]]:
    """Read ``manual,automated`` rows; raises :class:`InputError` on malformed input."""
    try:
        text = Path(path).read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    reader = csv.DictReader(text.splitlines())
    fields = [f.strip() for f in reader.fieldnames or []]
    if "manual" not in fields or "automated" not in fields:
        raise InputError(f"{path}: header must contain 'manual' and 'automated'")
    pairs = []
    for line, row in enumerate(reader, start=2):
        row = {k.strip(): v for k, v in row.items() if k is not None}
        try:
            pairs.append((float(row["manual"]), float(row["automated"])))
        except (TypeError, ValueError):
            raise InputError(f"{path}:{line}: non-numeric value in {row}") from None
    return pairs


def cmd_calibrate(args: argparse.Namespace) -> int:
    try:
        pairs = read_pairs_csv(args.pairs)
    except InputError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    direction = "manual_on_automated" if args.swap_regression_direction else "automated_on_manual"
    model = fit_linear(pairs, direction)  # DegenerateInput -> exit 4
    ba = bland_altman(pairs)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    with open(out / "scatter.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["manual", "automated", "fitted"])
        for m, a in pairs:
            x = m if direction == "automated_on_manual" else a
            w.writerow([repr(m), repr(a), repr(model.slope * x + model.intercept)])
    with open(out / "bland_altman.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mean", "difference", "loa_low", "loa_high"])
        for mean, diff in ba.points:
            w.writerow([repr(mean), repr(diff), repr(ba.loa_low), repr(ba.loa_high)])
    print(f"slope {model.slope:.6g} intercept {model.intercept:+.6g} R2 {model.r2:.4f} n {model.n}; "
          f"bias {ba.mean_diff:.4g}, LoA [{ba.loa_low:.4g}, {ba.loa_high:.4g}]")
    return EXIT_OK


# ---------------------------------------------------------------- phantom / roi


def cmd_phantom(args: argparse.Namespace) -> int:
    try:
        spec = PhantomSpec.load(args.spec)
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {args.spec}: {exc.strerror or exc}") from exc
    except InputError as exc:
        raise CliError(EXIT_INPUT, f"{args.spec}: {exc}") from exc
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    try:
        ph = generate(spec)
    except InputError as exc:
        raise CliError(EXIT_INPUT, f"{args.spec}: {exc}") from exc

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_nifti(ph.volume, out / "volume.nii.gz")
    save_nifti(ph.ground_truth, out / "gt.nii.gz")
    save_nifti(ph.organs.heart, out / "heart.nii.gz")
    save_nifti(ph.organs.aorta, out / "aorta.nii.gz")
    save_nifti(ph.organs.lungs, out / "lungs.nii.gz")
    expected = ph.expected.to_dict()
    expected["n_lesions"] = len(ph.expected.per_lesion)
    expected["seed"] = spec.seed
    _write_json(out / "expected_report.json", expected)
    print(f"phantom with {len(spec.lesions)} lesions, expected total {expected['total']:.2f} -> {out}")
    return EXIT_OK


def cmd_roi(args: argparse.Namespace) -> int:
    roi = _roi_from_files(Path(args.heart), Path(args.aorta), Path(args.lungs), args.dilation_radius)
    save_nifti(roi, args.out)
    print(f"ROI with {int(roi.data.sum())} voxels -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _non_negative_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _u64(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cacscore", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def detection_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--threshold-hu", type=float, default=CALCIUM_THRESHOLD_HU)
        p.add_argument("--min-voxels", type=_positive_int, default=DEFAULT_MIN_VOXELS)

    s = sub.add_parser("score", help="Agatston score of a CT volume")
    s.add_argument("--volume", help="CT volume (NIfTI); in batch mode a file name inside each case dir")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--mask", help="lesion label mask scored as given")
    src.add_argument("--prediction", help="external detector mask; re-labelled and size-filtered")
    src.add_argument("--roi", help="precomputed cardiac ROI for the classical detector")
    s.add_argument("--heart")
    s.add_argument("--aorta")
    s.add_argument("--lungs")
    detection_flags(s)
    s.add_argument("--dilation-radius", type=_non_negative_int, default=DEFAULT_DILATION_RADIUS)
    s.add_argument("--calibration", metavar="MODEL_JSON", help="add a corrected total using this model ('default' for the shipped one)")
    s.add_argument("--out", default="agatston_report.json")
    s.add_argument("--batch", metavar="DIR", help="score every case subdirectory of DIR")
    s.add_argument("--out-dir", help="batch output directory (default: DIR)")
    s.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1)
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="lesion detection metrics against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    detection_flags(e)
    e.add_argument("--out", default="detection_report.json")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("calibrate", help="fit manual-vs-automated score regression")
    c.add_argument("--pairs", required=True, help="CSV with header manual,automated")
    c.add_argument("--out-dir", default=".")
    c.add_argument("--swap-regression-direction", action="store_true",
                   help="regress manual on automated instead")
    c.set_defaults(func=cmd_calibrate)

    ph = sub.add_parser("phantom", help="generate a synthetic phantom")
    ph.add_argument("--spec", required=True)
    ph.add_argument("--out-dir", required=True)
    ph.add_argument("--seed", type=_u64, help="override the spec seed")
    ph.set_defaults(func=cmd_phantom)

    r = sub.add_parser("roi", help="build the cardiac ROI from organ masks")
    r.add_argument("--heart", required=True)
    r.add_argument("--aorta", required=True)
    r.add_argument("--lungs", required=True)
    r.add_argument("--dilation-radius", type=_non_negative_int, default=DEFAULT_DILATION_RADIUS)
    r.add_argument("--out", default="roi.nii.gz")
    r.set_defaults(func=cmd_roi)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("CACSCORE_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    log.debug("arguments: %s", vars(args))
    handlers: list[tuple[type[BaseException], int]] = [
        (CliError, -1),
        (GeometryMismatch, EXIT_GEOMETRY),
        (DegenerateInput, EXIT_DEGENERATE),
        (InputError, EXIT_INPUT),
    ]
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except tuple(h for h, _ in handlers) as exc:
        code = exc.code if isinstance(exc, CliError) else next(c for h, c in handlers if isinstance(exc, h))
        print(f"cacscore {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
