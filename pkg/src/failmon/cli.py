"""Command-line pipeline: memory construction, calibration, scoring,
stream monitoring, and metric reports.

Every command is deterministic given fixed seeds and inputs (VLM calls
excepted).  Exit codes: 0 success, 2 validation, 3 I/O, 4 parameter,
5 semantic filter unavailable while the policy is fail-closed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .conformal import (
    DEFAULT_PATCH_FRACTION,
    DEFAULT_RHO_FLOOR,
    METHOD_GAUSSIAN,
    METHOD_SPACE,
    METHOD_TIME,
    calibrate,
    cp_time_baseline,
    decide,
    gaussian_threshold_baseline,
    load_profile,
    profile_to_json,
    save_profile,
)
from .errors import (
    FailmonError,
    FormatError,
    InsufficientData,
    ParameterError,
    UndefinedMetric,
    ValidationError,
)
from .memory import DEFAULT_SIGMA_FLOOR, build_memory, load_memory, save_memory
from .metrics import auroc, confusion, f1_at_optimal, relabel_failures
from .scoring import ScoreConfig, score_episode, score_frame, write_heatmap_csv, write_heatmap_pgm
from .synth import generate, spec_from_json, write_labels_csv
from .tensor_io import read_feature_file, read_frame_stream, split_nominal, write_feature_file
from .vlm import (
    FallbackPolicy,
    FilterRequest,
    HttpVlmClient,
    StaticVlmClient,
    VerdictKind,
    VlmEndpointConfig,
    blank_frame,
    render_heatmap_overlay,
    semantic_filter,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_PARAMETER = 4
EXIT_FILTER_UNAVAILABLE = 5


class _Parser(argparse.ArgumentParser):
    """argparse that reports flag misuse as a ParameterError (exit 4)."""

    def error(self, message):  # noqa: D102
        raise ParameterError(message)


def parse_mask(spec: str | None, n_patches: int) -> np.ndarray | None:
    """Masked-out patches: comma-separated indices or `rect:r0-r1,c0-c1@RxC`.

    Returns a boolean monitor mask (True = monitored) or None when no
    mask was requested.  The rect form masks grid cells with row in
    [r0, r1) and column in [c0, c1) on an R-by-C patch grid.
    """
    if spec is None or spec.strip() == "":
        return None
    mask = np.ones(n_patches, dtype=bool)
    text = spec.strip()
    if text.startswith("rect:"):
        try:
            body, grid = text[len("rect:") :].split("@")
            rows_part, cols_part = body.split(",")
            r0, r1 = (int(x) for x in rows_part.split("-"))
            c0, c1 = (int(x) for x in cols_part.split("-"))
            n_rows, n_cols = (int(x) for x in grid.lower().split("x"))
        except ValueError as exc:
            raise ParameterError(f"bad rect mask {spec!r}: expected rect:r0-r1,c0-c1@RxC") from exc
        if n_rows * n_cols != n_patches:
            raise ParameterError(f"mask grid {n_rows}x{n_cols} does not tile {n_patches} patches")
        if not (0 <= r0 <= r1 <= n_rows and 0 <= c0 <= c1 <= n_cols):
            raise ParameterError(f"rect {body} outside grid {n_rows}x{n_cols}")
        for r in range(r0, r1):
            mask[r * n_cols + c0 : r * n_cols + c1] = False
    else:
        try:
            indices = [int(tok) for tok in text.split(",") if tok.strip() != ""]
        except ValueError as exc:
            raise ParameterError(f"bad mask {spec!r}: expected comma-separated indices or rect form") from exc
        for idx in indices:
            if not 0 <= idx < n_patches:
                raise ParameterError(f"mask index {idx} outside [0, {n_patches})")
            mask[idx] = False
    if not mask.any():
        raise ValidationError("at least one patch must stay unmasked")
    return mask


def _score_config(args) -> ScoreConfig:
    return ScoreConfig(
        epsilon=args.epsilon,
        epsilon_scale=args.epsilon_scale,
        max_iter=args.max_iter,
        tol=args.tol,
    )


def _add_sinkhorn_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epsilon", type=float, default=None, help="absolute Sinkhorn regularization (default: adaptive)")
    parser.add_argument("--epsilon-scale", type=float, default=0.05, help="adaptive epsilon = scale * mean cost")
    parser.add_argument("--max-iter", type=int, default=200, help="Sinkhorn iteration cap")
    parser.add_argument("--tol", type=float, default=1e-6, help="marginal violation stopping tolerance")


def cmd_build_memory(args) -> int:
    tensor = read_feature_file(args.features)
    nominal, calib = split_nominal(tensor, args.split_seed)
    memory = build_memory(nominal, sigma_floor=args.sigma_floor)
    save_memory(memory, args.out)
    write_feature_file(calib, args.calib_out)
    print(
        f"memory: {nominal.n_episodes} episodes -> {args.out}; "
        f"calibration: {calib.n_episodes} episodes -> {args.calib_out}"
    )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    memory = load_memory(args.memory)
    calib = read_feature_file(args.calib)
    mask = parse_mask(args.mask, memory.n_patches)
    config = _score_config(args)
    if args.method == METHOD_SPACE:
        profile = calibrate(
            memory, calib, alpha=args.alpha, seed=args.seed, rho_floor=args.rho_floor,
            patch_mask=mask, tau=args.tau, config=config,
        )
    elif args.method == METHOD_TIME:
        profile = cp_time_baseline(
            memory, calib, alpha=args.alpha, seed=args.seed, rho_floor=args.rho_floor,
            patch_mask=mask, tau=args.tau, config=config,
        )
    else:
        profile = gaussian_threshold_baseline(
            memory, calib, k_sigma=args.k_sigma, rho_floor=args.rho_floor,
            patch_mask=mask, tau=args.tau, config=config,
        )
    save_profile(profile, args.out)
    if args.json_out:
        Path(args.json_out).write_text(profile_to_json(profile))
    print(f"profile[{profile.method}]: h={profile.h:.6g} tau={profile.tau:.4g} -> {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    memory = load_memory(args.memory)
    profile = load_profile(args.profile)
    tensor = read_feature_file(args.input)
    config = _score_config(args)
    heat_dir = Path(args.heatmaps) if args.heatmaps else None
    if heat_dir is not None:
        heat_dir.mkdir(parents=True, exist_ok=True)
    square = math.isqrt(memory.n_patches) ** 2 == memory.n_patches
    rows = []
    for n in range(tensor.n_episodes):
        results = score_episode(memory, tensor.episode(n), window=args.window, config=config)
        for t, result in enumerate(results):
            decision = decide(profile, result)
            rows.append(
                {
                    "episode": n,
                    "frame": t,
                    "t_min": result.t_min,
                    "score": f"{result.score:.9g}",
                    "exceed_fraction": f"{decision.exceed_fraction:.9g}",
                    "anomalous": int(decision.anomalous),
                }
            )
            if heat_dir is not None:
                stem = heat_dir / f"ep{n:03d}_frame{t:04d}"
                write_heatmap_csv(result.heatmap, stem.with_suffix(".csv"))
                if square:
                    write_heatmap_pgm(result.heatmap, stem.with_suffix(".pgm"))
    _write_csv(args.out, ["episode", "frame", "t_min", "score", "exceed_fraction", "anomalous"], rows)
    print(f"scored {tensor.n_episodes} episode(s), {len(rows)} frames -> {args.out}")
    return EXIT_OK


def _load_vlm_config(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"VLM config is not valid JSON: {exc}") from exc
    if doc.get("type") not in ("mock", "http"):
        raise ParameterError(f"VLM config type must be mock or http, got {doc.get('type')!r}")
    if doc["type"] == "http" and not (doc.get("url") and doc.get("model")):
        raise ParameterError("http VLM config requires url and model")
    return doc


def _vlm_grid(doc: dict, n_patches: int) -> tuple[int, int]:
    if "grid" in doc:
        rows, cols = (int(x) for x in doc["grid"])
        if rows * cols != n_patches:
            raise ParameterError(f"VLM config grid {rows}x{cols} does not tile {n_patches} patches")
        return rows, cols
    side = math.isqrt(n_patches)
    return (side, side) if side * side == n_patches else (1, n_patches)


def _frame_image(doc: dict, key: str, pattern: str, index: int) -> bytes:
    directory = doc.get(key)
    if directory:
        path = Path(directory) / (pattern % index)
        if path.exists():
            return path.read_bytes()
    return blank_frame()


def cmd_monitor(args) -> int:
    memory = load_memory(args.memory)
    profile = load_profile(args.profile)
    config = _score_config(args)
    vlm_doc = _load_vlm_config(args.vlm_config) if args.vlm_config else None
    policy = FallbackPolicy(vlm_doc.get("fallback", "fail-closed")) if vlm_doc else FallbackPolicy.FAIL_CLOSED
    http_client = None
    if vlm_doc and vlm_doc["type"] == "http":
        http_client = HttpVlmClient(
            VlmEndpointConfig(
                url=vlm_doc["url"],
                model=vlm_doc["model"],
                api_key_env=vlm_doc.get("api_key_env", "VLM_API_KEY"),
                timeout_s=float(vlm_doc.get("timeout_s", 10.0)),
            )
        )
    grid = _vlm_grid(vlm_doc, memory.n_patches) if vlm_doc else None

    fieldnames = ["frame", "t_min", "score", "exceed_fraction", "anomalous"]
    if vlm_doc:
        fieldnames += ["verdict", "rationale"]
    rows = []
    fallback_hit = False
    prev_t: int | None = None
    stream = sys.stdin.buffer if args.stream == "-" else open(args.stream, "rb")
    try:
        for index, frame in enumerate(read_frame_stream(stream, memory.n_patches, memory.n_features)):
            span = None if args.window is None or prev_t is None else (prev_t - args.window, prev_t + args.window + 1)
            result = score_frame(memory, frame, window=span, config=config)
            prev_t = result.t_min
            decision = decide(profile, result)
            row = {
                "frame": index,
                "t_min": result.t_min,
                "score": f"{result.score:.9g}",
                "exceed_fraction": f"{decision.exceed_fraction:.9g}",
                "anomalous": int(decision.anomalous),
            }
            if vlm_doc:
                if decision.anomalous:
                    current = _frame_image(vlm_doc, "frames_dir", "frame_%06d.png", index)
                    reference = _frame_image(vlm_doc, "reference_dir", "ref_%04d.png", result.t_min)
                    request = FilterRequest(
                        task_description=vlm_doc.get("task_description", ""),
                        reference_image=reference,
                        current_image=current,
                        heatmap_image=render_heatmap_overlay(current, result.heatmap, grid),
                        t_min=result.t_min,
                    )
                    if vlm_doc["type"] == "mock":
                        reply = vlm_doc.get("replies", {}).get(str(index), vlm_doc.get("default_reply", ""))
                        client = StaticVlmClient(reply)
                    else:
                        client = http_client
                    verdict = semantic_filter(request, client, policy)
                    if verdict.fallback_reason is not None and policy is FallbackPolicy.FAIL_CLOSED:
                        fallback_hit = True
                    row["verdict"] = verdict.kind.value
                    row["rationale"] = verdict.rationale.replace("\n", " ")
                else:
                    row["verdict"] = VerdictKind.NOMINAL.value
                    row["rationale"] = ""
            rows.append(row)
    finally:
        if stream is not sys.stdin.buffer:
            stream.close()
    _write_csv(args.out, fieldnames, rows)
    print(f"monitored {len(rows)} frame(s) -> {args.out}")
    return EXIT_FILTER_UNAVAILABLE if fallback_hit else EXIT_OK


def _read_csv(path: str) -> list[dict]:
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def _write_csv(path: str, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def cmd_evaluate(args) -> int:
    score_rows = _read_csv(args.scores)
    label_rows = _read_csv(args.labels)
    if not score_rows:
        raise ValidationError(f"no rows in {args.scores}")
    labels_by_key: dict[tuple[int, int], dict] = {}
    for row in label_rows:
        key = (int(row.get("episode", 0)), int(row["frame"]))
        labels_by_key[key] = row
    scores, anomaly, failure, predicted = [], [], [], []
    for row in score_rows:
        key = (int(row.get("episode", 0)), int(row["frame"]))
        if key not in labels_by_key:
            raise ValidationError(f"labels file has no row for episode={key[0]} frame={key[1]}")
        label = labels_by_key[key]
        scores.append(float(row["score"]))
        anomaly.append(int(label["anomaly"]))
        failure.append(int(label.get("failure", 0)))
        if "verdict" in row and row["verdict"] != "":
            predicted.append(int(row["verdict"] == VerdictKind.FAILURE.value))
        else:
            predicted.append(int(row["anomalous"]))
    scores = np.asarray(scores)
    anomaly = np.asarray(anomaly)
    failure = np.asarray(failure)
    predicted = np.asarray(predicted)
    truth = anomaly if args.mode == "anomaly" else relabel_failures(anomaly, failure)
    roc = auroc(scores, truth)
    f1, threshold = f1_at_optimal(scores, truth)
    summary = confusion(predicted, truth)

    def _fmt(value) -> str:
        return "" if value is None else f"{value:.6f}"

    row = {
        "label": args.label or Path(args.scores).stem,
        "mode": args.mode,
        "n_frames": len(scores),
        "auroc": f"{roc:.6f}",
        "f1_opt": f"{f1:.6f}",
        "f1_threshold": f"{threshold:.9g}",
        "tpr": _fmt(summary.tpr),
        "tnr": _fmt(summary.tnr),
        "balanced_acc": _fmt(summary.balanced_acc),
        "weighted_acc": _fmt(summary.weighted_acc),
        "tp": summary.tp,
        "fp": summary.fp,
        "tn": summary.tn,
        "fn": summary.fn,
    }
    _write_csv(args.out, list(row.keys()), [row])
    print(
        f"{row['label']} [{args.mode}] auroc={row['auroc']} f1={row['f1_opt']} "
        f"balanced={row['balanced_acc'] or 'n/a'} weighted={row['weighted_acc'] or 'n/a'}"
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = spec_from_json(Path(args.spec).read_text())
    tensor, anomaly, failure = generate(spec, args.episodes, args.seed)
    write_feature_file(tensor, args.out)
    if args.labels_out:
        write_labels_csv(anomaly, failure, args.labels_out)
    print(
        f"synth: {args.episodes} episodes T={spec.horizon} P={spec.n_patches} F={spec.n_features} "
        f"-> {args.out}" + (f", labels -> {args.labels_out}" if args.labels_out else "")
    )
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="failmon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-memory", help="split nominal episodes and build the Gaussian memory")
    p.add_argument("--features", required=True, help="input .ftens with all nominal episodes")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--sigma-floor", type=float, default=DEFAULT_SIGMA_FLOOR)
    p.add_argument("--out", required=True, help="output .fmem path")
    p.add_argument("--calib-out", required=True, help="output .ftens with the held-out calibration half")
    p.set_defaults(func=cmd_build_memory)

    p = sub.add_parser("calibrate", help="conformal (or baseline) threshold calibration")
    p.add_argument("--memory", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--tau", type=float, default=DEFAULT_PATCH_FRACTION, help="patch-fraction sensitivity")
    p.add_argument("--mask", default=None, help="masked-out patches: indices '3,4' or rect:r0-r1,c0-c1@RxC")
    p.add_argument("--rho-floor", type=float, default=DEFAULT_RHO_FLOOR)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=[METHOD_SPACE, METHOD_TIME, METHOD_GAUSSIAN], default=METHOD_SPACE)
    p.add_argument("--k-sigma", type=float, default=3.0, help="bandwidth for --method gaussian")
    p.add_argument("--out", required=True, help="output .fcal path")
    p.add_argument("--json-out", default=None, help="optional structured-text twin")
    _add_sinkhorn_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="score episodes and apply the calibrated threshold")
    p.add_argument("--memory", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--input", required=True, help=".ftens of episodes to score")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--heatmaps", default=None, help="directory for per-frame heatmap CSV/PGM dumps")
    p.add_argument("--window", type=int, default=None, help="timestep search radius (default: full search)")
    _add_sinkhorn_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("monitor", help="score a live frame stream, thresholding plus semantic filtering")
    p.add_argument("--memory", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--stream", required=True, help="length-prefixed frame stream path, or - for stdin")
    p.add_argument("--out", required=True, help="output verdicts CSV")
    p.add_argument("--vlm-config", default=None, help="JSON endpoint config; omit for anomaly-only mode")
    p.add_argument("--window", type=int, default=None)
    _add_sinkhorn_flags(p)
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("evaluate", help="metric report from score/verdict and label CSVs")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--mode", choices=["anomaly", "failure"], default="anomaly")
    p.add_argument("--out", required=True)
    p.add_argument("--label", default=None, help="row label in the report (default: scores file stem)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate labeled synthetic episodes")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .ftens")
    p.add_argument("--labels-out", default=None, help="output labels CSV")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValidationError, InsufficientData, UndefinedMetric) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    except FailmonError as exc:  # any future subclass defaults to validation
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
