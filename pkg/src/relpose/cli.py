"""Command-line interface: ``relpose <command> [flags]``.

Commands: gen, train, eval, robustness, mr, encode, verify-freeze.

Every command that writes outputs also writes ``<command>_config.ini`` (the
resolved flags and model configuration) into its output directory. The
default output directory is ``$RELPOSE_OUT`` or ``./runs``.

Exit codes: 0 success, 1 verification failed, 2 usage error,
3 configuration error, 4 data error, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, TrainSettings, dump_config, load_config
from .data import dataset_windows, generate_dataset, read_dataset, write_dataset
from .encoding import TemporalOperator, positional_encode, temporal_encode
from .errors import ConfigurationError, DataError, RelPoseError
from .evaluation import (
    movement_range,
    mr_stratified_eval,
    per_frame_mpjpe,
    per_frame_p_mpjpe,
    sample_offsets,
    shift_experiment,
)
from .model import COMPONENTS
from .numerics import load_checkpoint
from .training import load_model_checkpoint, run_training

EXIT_VERIFY_FAILED = 1


def _out_dir(args) -> Path:
    d = Path(args.out) if getattr(args, "out", None) else Path(os.environ.get("RELPOSE_OUT", "runs"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _snapshot(out: Path, command: str, args, model_text: str | None = None) -> None:
    lines = [f"[{command}]"]
    for key, value in sorted(vars(args).items()):
        if key in ("func", "command"):
            continue
        lines.append(f"{key} = {value}")
    text = "\n".join(lines) + "\n"
    if model_text:
        text += "\n" + model_text
    (out / f"{command}_config.ini").write_text(text)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _f(x: float) -> str:
    return f"{x:.6f}"


def _load_pair(args):
    loaded = load_model_checkpoint(args.ckpt)
    ds = read_dataset(args.data)
    cfg = loaded.model.config
    if ds.num_joints != cfg.num_joints:
        raise ConfigurationError(
            f"checkpoint expects {cfg.num_joints} joints, dataset {args.data} has {ds.num_joints}"
        )
    return loaded, ds


def _model_text(model) -> str:
    return dump_config(RunConfig(model.config, TrainSettings())).split("\n[train]")[0]


# -- commands --------------------------------------------------------------


def cmd_gen(args) -> int:
    ds = generate_dataset(args.seed, args.sequences, args.frames, args.amplitude, args.jitter)
    path = Path(args.out_file)
    try:
        write_dataset(ds, path)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    args.out = str(path.parent)
    _snapshot(path.parent, "gen", args)
    x, _, _ = dataset_windows(ds, args.seq_len)
    mr = movement_range(x)
    print(f"wrote {path}: {len(ds.sequences)} sequences, J={ds.num_joints}, F={args.frames} frames each")
    print(f"movement range over {len(mr)} windows (T={args.seq_len}): mean {mr.mean():.6f} "
          f"min {mr.min():.6f} max {mr.max():.6f}")
    return 0


def cmd_train(args) -> int:
    rc = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        rc.train.seed = args.seed
    ds = read_dataset(args.data)
    if ds.num_joints != rc.model.num_joints:
        raise ConfigurationError(f"config expects {rc.model.num_joints} joints, dataset has {ds.num_joints}")
    stages = (1, 2, 3) if args.stage == "all" else (int(args.stage),)
    out = _out_dir(args)
    (out / "config.ini").write_text(dump_config(rc))
    _snapshot(out, "train", args, dump_config(rc))
    run_training(rc.model, rc.train, ds, out, stages, args.resume, log=None if args.quiet else print)
    print(f"checkpoints and metrics.csv written to {out}")
    return 0


def cmd_eval(args) -> int:
    loaded, ds = _load_pair(args)
    model = loaded.model
    out = _out_dir(args)
    _snapshot(out, "eval", args, _model_text(model))
    want1 = args.protocol in ("1", "both")
    want2 = args.protocol in ("2", "both")
    header = ["sequence", "subject", "action", "frames"]
    header += (["mpjpe"] if want1 else []) + (["p_mpjpe"] if want2 else [])
    rows, all1, all2 = [], [], []
    for i, s in enumerate(ds.sequences):
        x, y, _ = dataset_windows(ds, model.config.seq_len, [i])
        pred = model.predict(x)
        row = [i, s.subject, s.action, len(x)]
        if want1:
            e1 = per_frame_mpjpe(pred, y)
            all1.append(e1)
            row.append(_f(e1.mean()))
        if want2:
            e2 = per_frame_p_mpjpe(pred, y)
            all2.append(e2)
            row.append(_f(e2.mean()))
        rows.append(row)
    footer = ["average", "", "", sum(r[3] for r in rows)]
    if want1:
        footer.append(_f(np.concatenate(all1).mean()))
        print(f"MPJPE (protocol 1): {np.concatenate(all1).mean():.3f} mm")
    if want2:
        footer.append(_f(np.concatenate(all2).mean()))
        print(f"P-MPJPE (protocol 2): {np.concatenate(all2).mean():.3f} mm")
    _write_csv(out / "eval.csv", header, rows + [footer])
    return 0


def cmd_robustness(args) -> int:
    loaded, ds = _load_pair(args)
    model = loaded.model
    out = _out_dir(args)
    _snapshot(out, "robustness", args, _model_text(model))
    x, y, _ = dataset_windows(ds, model.config.seq_len)
    offsets = np.vstack([np.zeros((1, 2)), sample_offsets(args.offsets, args.a, args.seed)])
    rows = shift_experiment(model.predict, x, y, offsets)
    table = [[_f(r.dx), _f(r.dy), _f(r.magnitude), _f(r.err_vs_gt), _f(r.consistency), r.skipped] for r in rows]
    _write_csv(out / "robustness.csv", ["dx", "dy", "magnitude", "err_vs_gt", "consistency", "skipped"], table)
    for r in rows:
        print(f"offset ({r.dx:+.4f}, {r.dy:+.4f}) |d|={r.magnitude:.4f}: err {r.err_vs_gt:.3f} mm, "
              f"consistency {r.consistency:.3f} mm, skipped {r.skipped}")
    return 0


def cmd_mr(args) -> int:
    loaded, ds = _load_pair(args)
    model = loaded.model
    out = _out_dir(args)
    _snapshot(out, "mr", args, _model_text(model))
    x, y, _ = dataset_windows(ds, model.config.seq_len)
    if len(x) < args.bins:
        raise DataError(f"{len(x)} windows cannot fill {args.bins} bins")
    subsets = mr_stratified_eval(model.predict, x, y, args.bins)
    header = ["bin", "mr_min", "mr_max", "count", "mpjpe"]
    rows = [[s.index, _f(s.mr_min), _f(s.mr_max), s.count, _f(s.mpjpe)] for s in subsets]
    if args.ckpt_b:
        other = load_model_checkpoint(args.ckpt_b).model
        if other.config.seq_len != model.config.seq_len or other.config.num_joints != model.config.num_joints:
            raise ConfigurationError("--ckpt-b must share the window length and joint count of --ckpt")
        subsets_b = mr_stratified_eval(other.predict, x, y, args.bins)
        header += ["mpjpe_b", "delta"]
        for row, sa, sb in zip(rows, subsets, subsets_b):
            row += [_f(sb.mpjpe), _f(sb.mpjpe - sa.mpjpe)]
    _write_csv(out / "mr.csv", header, rows)
    for row in rows:
        print(",".join(str(v) for v in row))
    return 0


def cmd_encode(args) -> int:
    ds = read_dataset(args.data)
    x, _, _ = dataset_windows(ds, args.seq_len)
    if not 0 <= args.window < len(x):
        raise DataError(f"window {args.window} out of range [0, {len(x)})")
    op = TemporalOperator.parse(args.op)
    win = x[args.window]
    if args.shift:
        try:
            dx, dy = (float(v) for v in args.shift.split(","))
        except ValueError:
            raise ConfigurationError(f"--shift expects 'dx,dy', got {args.shift!r}") from None
        # single-precision offsets keep the positional encoding exactly shift-invariant
        win = win + np.array([dx, dy], dtype=np.float32).astype(np.float64)
    kp = positional_encode(win, ds.root)
    kt = temporal_encode(win, op)
    out = _out_dir(args)
    _snapshot(out, "encode", args)
    header = ["frame", "joint", "kp_x", "kp_y"] + [f"kt_{c}" for c in range(kt.shape[-1])]
    rows = []
    for t in range(win.shape[0]):
        for j in range(win.shape[1]):
            rows.append([t, j, repr(float(kp[t, j, 0])), repr(float(kp[t, j, 1]))] + [repr(float(v)) for v in kt[t, j]])
    path = out / "encode.csv"
    _write_csv(path, header, rows)
    print(f"wrote {path} ({op}, window {args.window})")
    return 0


def component_hashes(tensors: dict[str, np.ndarray]) -> dict[str, str]:
    """SHA-256 per component over the names and bytes of its tensors (parameters and statistics)."""
    out = {}
    for comp in COMPONENTS:
        h = hashlib.sha256()
        keys = sorted(k for k in tensors if k.split(".", 1)[0] == comp)
        if not keys:
            continue
        for k in keys:
            h.update(k.encode())
            h.update(np.ascontiguousarray(tensors[k]).tobytes())
        out[comp] = h.hexdigest()
    return out


def cmd_verify_freeze(args) -> int:
    before = component_hashes(load_checkpoint(args.before)[0])
    after = component_hashes(load_checkpoint(args.after)[0])
    ok = True
    for comp in args.components.split(","):
        comp = comp.strip()
        if comp not in before or comp not in after:
            raise DataError(f"component {comp!r} missing from one of the checkpoints")
        same = before[comp] == after[comp]
        ok &= same
        print(f"{comp}: {'unchanged' if same else 'CHANGED'} {after[comp][:16]}")
    return 0 if ok else EXIT_VERIFY_FAILED


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relpose", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=200)
    g.add_argument("--sequences", type=int, default=20)
    g.add_argument("--amplitude", type=float, default=1.0)
    g.add_argument("--jitter", type=float, default=0.0, help="2D noise std in pixels")
    g.add_argument("--seq-len", type=int, default=27, help="window length for the MR summary")
    g.add_argument("--out", dest="out_file", required=True, help="dataset file to write")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="run the stage plan")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--stage", choices=("1", "2", "3", "all"), default="all")
    t.add_argument("--resume", help="checkpoint of the preceding stage")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="MPJPE / P-MPJPE per sequence")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--protocol", choices=("1", "2", "both"), default="both")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("robustness", help="global-offset consistency table")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--offsets", type=int, default=6)
    r.add_argument("--a", type=float, default=0.2)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_robustness)

    m = sub.add_parser("mr", help="movement-range stratified MPJPE")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--ckpt-b")
    m.add_argument("--data", required=True)
    m.add_argument("--bins", type=int, default=10)
    m.add_argument("--out")
    m.set_defaults(func=cmd_mr)

    c = sub.add_parser("encode", help="dump positional and temporal encodings of one window")
    c.add_argument("--data", required=True)
    c.add_argument("--window", type=int, default=0)
    c.add_argument("--op", default="SUB")
    c.add_argument("--shift", help="global offset 'dx,dy' (rounded to float32) added before encoding")
    c.add_argument("--seq-len", type=int, default=27)
    c.add_argument("--out")
    c.set_defaults(func=cmd_encode)

    v = sub.add_parser("verify-freeze", help="compare component hashes of two checkpoints")
    v.add_argument("--before", required=True)
    v.add_argument("--after", required=True)
    v.add_argument("--components", default="local,global")
    v.set_defaults(func=cmd_verify_freeze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RelPoseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
