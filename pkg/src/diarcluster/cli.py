"""Command-line entry point: ``diarcluster run|sweep|synth|score|pretrain``.

Exit codes: 0 success, 2 when some sessions failed, 1 on hard errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import SessionEntry, load_manifest, read_rttm, write_manifest, write_rttm
from .dec import DecConfig, loss_curve_csv, pretrain_autoencoder, save_checkpoint
from .pipeline import SWEEP_AXES, PipelineConfig, apply_overrides, run_pipeline, run_sweep
from .prep import embed_segments, load_frames, save_frames
from .scoring import report_json, score_rttm_pair
from .synth import SUITE_VERSION, SUITES, config_json, generate_suite

log = logging.getLogger("diarcluster")


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = PipelineConfig.from_json(json.loads(Path(args.config).read_text()))
    overrides = list(args.set or [])
    overrides.append(f"seed={args.seed}")
    return apply_overrides(cfg, overrides)


def _parse_values(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            out.append(json.loads(tok))
        except json.JSONDecodeError:
            out.append(tok)
    return out


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overrides = dict(json.loads(args.override)) if args.override else {}
    sessions = generate_suite(args.suite, args.seed, **overrides)
    entries = []
    for sess in sessions:
        sid = sess.table.session_id
        save_frames(out / f"{sid}.frames", sess.frames)
        (out / f"{sid}.rttm").write_text(write_rttm(sess.table))
        (out / f"{sid}.profiles.json").write_text(report_json(sess.profiles.to_json()))
        entries.append(
            SessionEntry(
                sid,
                f"{sid}.frames",
                f"{sid}.rttm",
                sess.config.n_speakers,
                {"profiles_path": f"{sid}.profiles.json", "synth": config_json(sess.config)},
            )
        )
    write_manifest(out / "manifest.json", entries)
    (out / "suite.json").write_text(report_json({"suite": args.suite, "version": SUITE_VERSION, "seed": args.seed, "overrides": overrides}))
    print(f"wrote {len(entries)} sessions to {out / 'manifest.json'}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = run_pipeline(load_manifest(args.manifest), cfg, args.out, args.workers)
    agg = report["aggregate"]
    if agg:
        print(f"recall {agg['recall_pct']:.2f}%  error {agg['error_pct']:.2f}%  over {agg['n_sessions']} sessions")
    for sid, err in report["failures"].items():
        print(f"FAILED {sid}: {err}", file=sys.stderr)
    if report["failures"]:
        return 2 if report["sessions"] else 1
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    result = run_sweep(load_manifest(args.manifest), cfg, args.axis, _parse_values(args.values), args.metric, args.out, args.workers)
    print(result["table"], end="")
    failed = any(run["failures"] for run in result["runs"].values())
    return 2 if failed else 0


def cmd_score(args) -> int:
    ref = read_rttm(args.ref)
    hyp = read_rttm(args.hyp)
    report = score_rttm_pair(ref, hyp)
    text = report_json(report.to_json())
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    dec = cfg.dec_config()
    X = []
    for entry in load_manifest(args.manifest):
        frames = load_frames(entry.frames_path, session_id=entry.session_id)
        table = read_rttm(entry.rttm_path, session_id=entry.session_id)
        X.extend(e.vector for e in embed_segments(frames, table, cfg.aggregation, cfg.filter_order))
    X = np.vstack(X)
    X = (X - X.mean(axis=0)) / np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
    history: list[float] = []
    params = pretrain_autoencoder(X, dec.pretrain_epochs, dec.dropout, dec.lr, min(dec.batch, len(X)), dec.seed, dec.sizes_for(X.shape[1]), history=history)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "autoencoder.ckpt", params, a=dec.a, weights=dec.weights, seed=dec.seed, epoch=dec.pretrain_epochs)
    (out / "loss_curve.csv").write_text(loss_curve_csv(history))
    if history:
        print(f"reconstruction loss {history[0]:.6g} -> {history[-1]:.6g} over {len(history)} epochs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diarcluster", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True):
        if manifest:
            p.add_argument("--manifest", required=True)
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("run", help="cluster and score every session of a manifest")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per value of a config axis")
    common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--metric", choices=("recall", "error"), default="recall")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a synthetic suite and its manifest")
    p.add_argument("--suite", required=True, choices=sorted(SUITES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--override", help="JSON object of SynthConfig overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score", help="score a hypothesis RTTM against a reference RTTM")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("pretrain", help="pretrain the DEC autoencoder on a manifest")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as err:
        log.error("%s: %s", type(err).__name__, err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
