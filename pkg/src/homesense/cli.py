"""Command-line entry point: ``homesense <command> [options]``.

Exit codes
----------
0  success
2  invalid input: bad scenario, missing or malformed files, bad arguments
3  acceptance failure: a run violated an invariant, evaluation missed its
   targets, or a device did not qualify
4  runtime failure (I/O errors and other unexpected conditions)

Outputs go to ``--out``, defaulting to ``$HOMESENSE_OUT`` and then to
``./homesense-out``.  Every report records the seed and a config hash.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import KINDS, Sample, generate_corpus, leave_one_environment_out
from .quality import qualification_test, qualification_traces
from .scenario import ScenarioError, build_traces, cached_traces, load_scenario, run_scenario
from .sensing import SensingParams
from .subject import FEATURE_NAMES, ClassifierModel, FeatureVector, TrainParams, train
from .topology import Mode, Policy, daily_bandwidth, window_upload_bytes
from .traceio import read_trace, write_trace
from .wire import raw_frame_bytes

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ACCEPTANCE = 3
EXIT_RUNTIME = 4
OUT_ENV = "HOMESENSE_OUT"


class ValidationError(Exception):
    pass


def _out_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or "homesense-out")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_model(path: str | None, required: bool) -> ClassifierModel | None:
    if path is None:
        if required:
            raise ValidationError("--model is required unless the policy is edge_only")
        return None
    try:
        return ClassifierModel.from_json(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"model: cannot read {path} ({exc.strerror})") from exc
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"model: {exc}") from exc


def _read_trace_file(path: str) -> tuple:
    try:
        res = read_trace(path)
    except OSError as exc:
        raise ValidationError(f"trace: cannot read {path} ({exc.strerror})") from exc
    except ValueError as exc:
        raise ValidationError(f"trace: {exc}") from exc
    if res.skipped:
        print(f"warning: {path}: skipped {res.skipped} corrupted frame(s)", file=sys.stderr)
    return res.trace, res.skipped


# ----------------------------------------------------------------- corpus io


def write_corpus(samples: list[Sample], root: Path) -> dict[str, str]:
    """``root/<env>/features.csv`` with a ``kind`` label column."""
    files = {}
    for env in sorted({s.environment for s in samples}):
        d = root / env
        d.mkdir(parents=True, exist_ok=True)
        path = d / "features.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", *FEATURE_NAMES])
            for s in samples:
                if s.environment == env:
                    w.writerow([s.kind, *(repr(float(v)) for v in s.features.as_array())])
        files[str(path.relative_to(root))] = _sha256(path)
    return files


def read_corpus(root: Path) -> list[Sample]:
    if not root.is_dir():
        raise ValidationError(f"corpus: {root} is not a directory")
    samples = []
    kinds = {k.value for k in KINDS}
    for path in sorted(root.glob("*/features.csv")):
        env = path.parent.name
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "kind" not in reader.fieldnames:
                raise ValidationError(f"corpus: {path} has no 'kind' label column")
            missing = [n for n in FEATURE_NAMES if n not in reader.fieldnames]
            if missing:
                raise ValidationError(f"corpus: {path} lacks feature columns {missing}")
            for i, row in enumerate(reader):
                if row["kind"] not in kinds:
                    raise ValidationError(f"corpus: {path} row {i + 1}: unknown label {row['kind']!r}")
                try:
                    fv = FeatureVector.from_array([float(row[n]) for n in FEATURE_NAMES])
                except ValueError as exc:
                    raise ValidationError(f"corpus: {path} row {i + 1}: {exc}") from exc
                samples.append(Sample(env, row["kind"], fv))
    if not samples:
        raise ValidationError(f"corpus: no */features.csv under {root}")
    return samples


def _corpus_from_args(args) -> tuple[list[Sample], dict]:
    if args.corpus:
        return read_corpus(Path(args.corpus)), {"corpus": str(args.corpus)}
    samples = generate_corpus(args.environments, args.windows, seed=args.seed, workers=args.workers)
    return samples, {"synthetic": True, "environments": args.environments, "windows": args.windows}


# ------------------------------------------------------------------ commands


def cmd_simulate(args) -> int:
    out = _out_root(args.out)
    if args.corpus:
        seed = args.seed or 0
        samples = generate_corpus(args.environments, args.windows, seed=seed, workers=args.workers)
        out.mkdir(parents=True, exist_ok=True)
        files = write_corpus(samples, out)
        manifest = {
            "kind": "corpus",
            "seed": seed,
            "config_hash": _config_hash({"environments": args.environments, "windows": args.windows, "seed": seed}),
            "files": files,
        }
        _write_json(out / "manifest.json", manifest)
        print(f"wrote {len(samples)} feature rows to {out}")
        return EXIT_OK
    if args.qualification is not None:
        walk, still = qualification_traces(args.qualification, args.seed or 0, args.loss)
        out.mkdir(parents=True, exist_ok=True)
        ext = ".jsonl" if args.format == "jsonl" else ".csi"
        files = {}
        for name, tr in (("walk", walk), ("static", still)):
            path = out / f"{name}{ext}"
            write_trace(tr, path)
            files[path.name] = _sha256(path)
        cfg = {"distance_m": args.qualification, "loss": args.loss, "seed": args.seed or 0}
        _write_json(out / "manifest.json", {"kind": "qualification", "seed": args.seed or 0,
                                            "config_hash": _config_hash(cfg), "files": files})
        print(f"wrote walk and static traces to {out}")
        return EXIT_OK
    sc = load_scenario(args.scenario, args.seed)

    traces = build_traces(sc)
    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    ext = ".jsonl" if args.format == "jsonl" else ".csi"
    files = {}
    for tx, tr in traces.items():
        path = tdir / f"{tx}{ext}"
        write_trace(tr, path)
        files[str(path.relative_to(out))] = _sha256(path)
    manifest = {
        "kind": "traces",
        "scenario": sc.name,
        "seed": sc.seed,
        "config_hash": sc.config_hash(),
        "files": files,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(files)} trace(s) to {tdir}")
    return EXIT_OK


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario, args.seed)
    policy = Policy(args.policy) if args.policy else sc.policy
    model = _load_model(args.model, required=policy is not Policy.EDGE_ONLY)
    out = _out_root(args.out)
    skipped = 0
    if args.traces:
        traces = {}
        for tx in sc.deployment.transmitters:
            candidates = [Path(args.traces) / f"{tx}{ext}" for ext in (".csi", ".jsonl")]
            path = next((p for p in candidates if p.exists()), None)
            if path is None:
                raise ValidationError(f"traces: no file for link {tx} in {args.traces}")
            traces[tx], n = _read_trace_file(str(path))
            skipped += n
    else:
        traces = cached_traces(sc, None if args.no_cache else out / ".cache")
    run = run_scenario(sc, model, traces, mode=args.mode, policy=policy)

    out.mkdir(parents=True, exist_ok=True)
    (out / "events.ndjson").write_text(run.result.event_log())
    t = run.result.traffic
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for key in ("frames", "raw_bytes", "raw_forward_bytes", "record_bytes", "upload_bytes", "upload_messages"):
        w.writerow([key, getattr(t, key)])
    w.writerow(["reduction", repr(round(t.reduction, 9))])
    (out / "accounting.csv").write_text(buf.getvalue())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scope", "region", "present_windows", "detected_windows", "probability", "covered"])
    for scope, regions in run.coverage.items():
        for r in regions.values():
            w.writerow([scope, r.region, r.present_windows, r.detected_windows, repr(round(r.probability, 9)), r.covered])
    (out / "coverage.csv").write_text(buf.getvalue())
    report = dict(run.report, skipped_frames=skipped)
    _write_json(out / "report.json", report)
    print(f"{report['events']} events, {report['human_alerts']} human alert(s), {len(run.violations)} violation(s)")
    for v in run.violations:
        print(f"violation: {v}", file=sys.stderr)
    return EXIT_ACCEPTANCE if run.violations else EXIT_OK


def cmd_train(args) -> int:
    samples, source = _corpus_from_args(args)
    model = train([(s.features, s.human) for s in samples], TrainParams(seed=args.seed))
    path = Path(args.model_out) if args.model_out else _out_root(args.out) / "model.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    model = ClassifierModel(
        model.weights, model.bias, model.feature_means, model.feature_scales,
        dict(model.metadata, source=source, config_hash=_config_hash(source)),
    )
    path.write_text(model.to_json())
    print(f"model written to {path} ({len(samples)} samples)")
    return EXIT_OK


def cmd_eval(args) -> int:
    samples, source = _corpus_from_args(args)
    envs = sorted({s.environment for s in samples})
    if len(envs) < 2:
        raise ValidationError(f"eval: leave-one-environment-out needs >= 2 environments, found {len(envs)}")
    folds = leave_one_environment_out(samples, TrainParams(seed=args.seed))
    out = _out_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["held_out", "windows", "accuracy", "false_alarm_rate"])
    for f in folds:
        w.writerow([f.held_out, f.windows, repr(round(f.accuracy, 9)), repr(round(f.false_alarm_rate, 9))])
    (out / "metrics.csv").write_text(buf.getvalue())
    acc = float(np.mean([f.accuracy for f in folds]))
    fa = float(np.mean([f.false_alarm_rate for f in folds]))
    summary = {
        "seed": args.seed,
        "config_hash": _config_hash(source),
        "folds": len(folds),
        "mean_accuracy": acc,
        "mean_false_alarm_rate": fa,
        "passed": acc >= args.min_accuracy and fa <= args.max_false_alarm,
    }
    _write_json(out / "eval.json", summary)
    print(buf.getvalue(), end="")
    print(f"mean accuracy {acc:.3f}, mean false-alarm {fa:.3f}")
    return EXIT_OK if summary["passed"] else EXIT_ACCEPTANCE


def cmd_qualify(args) -> int:
    walk, _ = _read_trace_file(args.walk)
    still, _ = _read_trace_file(args.static)
    model = _load_model(args.model, required=False)
    try:
        report = qualification_test(walk, still, model)
    except ValueError as exc:
        raise ValidationError(f"qualify: {exc}") from exc
    out = _out_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = json.loads(report.to_json())
    doc["config_hash"] = _config_hash({"walk": _sha256(Path(args.walk)), "static": _sha256(Path(args.static))})
    doc["seed"] = walk.meta.get("seed")
    _write_json(out / "quality.json", doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK if report.qualified else EXIT_ACCEPTANCE


def cmd_account(args) -> int:
    params = SensingParams()
    per_window = window_upload_bytes(params, args.rate, args.subcarriers, args.rows)
    raw_per_s = args.rate * raw_frame_bytes(args.subcarriers)
    acf_per_s = per_window / params.window_len_s
    day = daily_bandwidth(args.rate, args.subcarriers, args.duty, params, args.rows)
    rows = [
        ("raw_bytes_per_s", raw_per_s),
        ("acf_bytes_per_s", acf_per_s),
        ("acf_to_raw", acf_per_s / raw_per_s),
        ("daily_raw_bytes", day.raw_bytes),
        ("daily_event_bytes", day.acf_bytes),
        ("daily_event_to_raw", day.ratio),
        ("daily_upload_messages", day.messages),
    ]
    out = _out_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for k, v in rows:
        w.writerow([k, repr(v) if isinstance(v, float) else v])
    (out / "bandwidth.csv").write_text(buf.getvalue())
    print(buf.getvalue(), end="")
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homesense", description="WiFi CSI home sensing simulator and pipeline")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=False):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./homesense-out)")
        sp.add_argument("--seed", type=int, default=None if scenario else 0)
        if scenario:
            sp.add_argument("--scenario", default="demo", help="scenario JSON file, or 'demo'")

    def corpus_opts(sp):
        sp.add_argument("--corpus", help="directory with <env>/features.csv files")
        sp.add_argument("--environments", type=int, default=5)
        sp.add_argument("--windows", type=int, default=3, help="decision windows per recording")
        sp.add_argument("--workers", type=int, default=None)

    sp = sub.add_parser("simulate", help="generate link traces (or a feature corpus) with a manifest")
    common(sp, scenario=True)
    sp.add_argument("--format", choices=("bin", "jsonl"), default="bin")
    sp.add_argument("--corpus", action="store_true", help="write a synthetic feature corpus instead")
    sp.add_argument("--qualification", type=float, metavar="DISTANCE_M",
                    help="write 30 s walk/static traces for a device at this distance instead")
    sp.add_argument("--loss", type=float, default=0.0, help="packet loss rate for --qualification")
    sp.add_argument("--environments", type=int, default=5)
    sp.add_argument("--windows", type=int, default=3)
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("run", help="run the deployment pipeline on a scenario")
    common(sp, scenario=True)
    sp.add_argument("--mode", choices=[m.value for m in Mode])
    sp.add_argument("--policy", choices=[m.value for m in Policy])
    sp.add_argument("--model", help="classifier model JSON")
    sp.add_argument("--traces", help="directory of <link>.csi / <link>.jsonl traces")
    sp.add_argument("--no-cache", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("train", help="train the human/non-human classifier")
    common(sp)
    corpus_opts(sp)
    sp.add_argument("--model-out", help="model path (default <out>/model.json)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="leave-one-environment-out evaluation")
    common(sp)
    corpus_opts(sp)
    sp.add_argument("--min-accuracy", type=float, default=0.90)
    sp.add_argument("--max-false-alarm", type=float, default=0.10)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("qualify", help="device qualification from a walk and a static trace")
    common(sp)
    sp.add_argument("--walk", required=True)
    sp.add_argument("--static", required=True)
    sp.add_argument("--model")
    sp.set_defaults(func=cmd_qualify)

    sp = sub.add_parser("account", help="bandwidth accounting for raw vs event-driven upload")
    common(sp)
    sp.add_argument("--rate", type=float, default=100.0)
    sp.add_argument("--subcarriers", type=int, default=56)
    sp.add_argument("--duty", type=float, default=0.01, help="fraction of windows with motion")
    sp.add_argument("--rows", action="store_true", help="include per-subcarrier ACF rows")
    sp.set_defaults(func=cmd_account)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        return args.func(args)
    except (ValidationError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
