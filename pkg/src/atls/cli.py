"""``atls`` command line: pretrain, finetune, sweep and report.

Exit codes: 0 on success, 2 for bad input (config, missing checkpoint, CSV
schema), 3 when a run hits a non-finite loss.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .pipeline import FINETUNE_MODES, NonFiniteLossError, finetune, train
from .rng import derive_seed
from .trainers import Trainer

log = logging.getLogger("atls")

CSV_HEADER = ["run_id", "sweep_value", "seed", "epoch", "split", "error_percent", "loss"]
EXIT_OK, EXIT_INPUT, EXIT_NONFINITE = 0, 2, 3


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_trace(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_trace(path) -> list[dict]:
    """Read an error-trace CSV, checking the header against the schema."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: empty CSV")
        for i, expected in enumerate(CSV_HEADER):
            got = header[i] if i < len(header) else "<missing>"
            if got != expected:
                raise InputError(f"{path}: column {i + 1} is {got!r}, expected {expected!r}")
        if len(header) > len(CSV_HEADER):
            raise InputError(f"{path}: unexpected extra column {header[len(CSV_HEADER)]!r}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(CSV_HEADER):
                raise InputError(f"{path}: line {lineno} has {len(rec)} fields")
            try:
                rows.append({
                    "run_id": rec[0], "sweep_value": rec[1], "seed": int(rec[2]),
                    "epoch": int(rec[3]), "split": rec[4],
                    "error_percent": float(rec[5]), "loss": float(rec[6]),
                })
            except ValueError as exc:
                raise InputError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    return rows


def out_root(arg) -> Path:
    return Path(arg or os.environ.get("ATLS_OUT_DIR") or "atls_out")


def _load_cfg(args) -> ExperimentConfig:
    if not args.config:
        cfg = ExperimentConfig().validate()
    else:
        cfg = load_config(args.config)
    if args.epochs is not None:
        if args.epochs < 1:
            raise ConfigError("--epochs must be >= 1")
        sec = "pretrain" if args.command == "pretrain" else "run"
        cfg.sections[sec]["epochs"] = args.epochs
    if args.seed is not None:
        cfg.sections["run"]["master_seed"] = args.seed
    return cfg


# --- single runs (module level so worker processes can import them) -----------

def run_one(cfg: ExperimentConfig, mode: str, seed: int, pretrained_path):
    """Fine-tune once; returns ``[(epoch, split, err, loss), ...]``."""
    train_data, test_data = cfg.datasets("finetune")
    pretrained = load_checkpoint(pretrained_path) if mode.endswith("_tl") else None
    n_in = train_data.X.shape[1]
    _, rows = finetune(
        mode, train_data, test_data, int(cfg["run.epochs"]), seed,
        pretrained=pretrained,
        scratch_builder=lambda s: cfg.build_model(n_in, train_data.n_classes, s),
        analog=cfg.analog_setup(), trainer_kind=cfg.trainer_kind, cfg=cfg.transfer_config(),
    )
    return rows


def _grid_point(job):
    cfg, mode, sweep_idx, repeat, value, ckpt = job
    seed = derive_seed(int(cfg["run.master_seed"]), sweep_idx, repeat)
    run_id = f"{mode}/{sweep_idx:03d}/{repeat:03d}"
    try:
        rows = run_one(cfg, mode, seed, ckpt)
    except NonFiniteLossError as exc:
        return run_id, value, seed, None, f"non-finite loss: {exc}"
    except Exception as exc:  # recorded in the failures sidecar
        return run_id, value, seed, None, f"{type(exc).__name__}: {exc}"
    return run_id, value, seed, rows, None


def run_grid(jobs, n_jobs: int):
    """Execute grid points and return results in submission order."""
    if n_jobs <= 1:
        return [_grid_point(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_grid_point, jobs))


def _flatten(results):
    rows = []
    for run_id, value, seed, trace, _ in results:
        if trace is None:
            continue
        for epoch, split, err, loss in trace:
            rows.append((run_id, value, seed, epoch, split, err, loss))
    return rows


def _write_failures(path, results) -> int:
    failed = [r for r in results if r[4] is not None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "sweep_value", "seed", "reason"])
        for run_id, value, seed, _, reason in failed:
            w.writerow([run_id, _fmt(value), seed, reason])
    return len(failed)


def _need_checkpoint(modes, ckpt):
    if any(m.endswith("_tl") for m in modes):
        if not ckpt:
            raise InputError("TL modes need --checkpoint")
        if not Path(ckpt).is_file():
            raise InputError(f"checkpoint {ckpt} not found")
        try:
            load_checkpoint(ckpt)
        except CheckpointError as exc:
            raise InputError(f"checkpoint {ckpt}: {exc}") from None


# --- commands -----------------------------------------------------------------

def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    out = out_root(args.out_dir)
    train_data, test_data = cfg.datasets("pretrain")
    seed = derive_seed(int(cfg["run.master_seed"]), 0xF0)
    model = cfg.build_model(train_data.X.shape[1], train_data.n_classes, seed)
    trainer = Trainer("digital_sgd", cfg.pretrain_config(), seed=seed)
    rows = train(model, trainer, train_data, int(cfg["pretrain.epochs"]), seed, test_data,
                 jitter_std=float(cfg["run.jitter_std"]))
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "pretrained.atls"
    try:
        save_checkpoint(model, ckpt)
    except CheckpointError as exc:
        raise NonFiniteLossError(f"pre-training diverged: {exc}") from None
    write_trace(out / "pretrain_trace.csv",
                [("pretrain/000/000", None, seed, *r) for r in rows])
    final = {split: err for _, split, err, _ in rows[-2:]}
    print(f"pretrain: checkpoint {ckpt}; final error "
          + ", ".join(f"{k} {v:.2f}%" for k, v in final.items()))
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _load_cfg(args)
    mode = args.mode
    _need_checkpoint([mode], args.checkpoint)
    out = out_root(args.out_dir)
    master = int(cfg["run.master_seed"])
    rows = []
    for repeat in range(int(cfg["run.repeats"])):
        seed = derive_seed(master, 0, repeat)
        trace = run_one(cfg, mode, seed, args.checkpoint)
        rows += [(f"{mode}/000/{repeat:03d}", None, seed, *r) for r in trace]
    path = write_trace(out / f"finetune_{mode}.csv", rows)
    last = [r for r in rows if r[4] == "test"][-1]
    print(f"finetune {mode}: {path}; final test error {last[5]:.2f}%")
    return EXIT_OK


def summarize(rows) -> list[tuple]:
    """Median and IQR of final test error per ``(mode, sweep_value)``.

    Groups come out sorted by mode and then by first appearance of the sweep
    value, so the table does not depend on execution order.
    """
    final = {}
    for r in rows:
        if r["split"] != "test":
            continue
        key = r["run_id"]
        if key not in final or r["epoch"] > final[key]["epoch"]:
            final[key] = r
    groups: dict = {}
    for run_id in sorted(final):
        r = final[run_id]
        mode = run_id.split("/")[0]
        groups.setdefault((mode, r["sweep_value"]), []).append(r["error_percent"])
    out = []
    for (mode, value), errs in groups.items():
        q1, med, q3 = np.percentile(errs, [25, 50, 75])
        out.append((mode, value, len(errs), float(med), float(q1), float(q3)))
    return out


def _write_summary(path, summary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "sweep_value", "runs", "median_error", "q25_error", "q75_error"])
        for row in summary:
            w.writerow([_fmt(v) for v in row])


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    if cfg.sweep_key is None:
        raise ConfigError("sweep needs a [sweep] section with one axis")
    modes = [args.mode] if args.mode else list(cfg["run.modes"])
    _need_checkpoint(modes, args.checkpoint)
    jobs = []
    for mode in modes:
        for i, value in enumerate(cfg.sweep_values):
            point = cfg.with_value(cfg.sweep_key, value)
            for rep in range(int(cfg["run.repeats"])):
                jobs.append((point, mode, i, rep, value, args.checkpoint))
    log.info("sweep %s: %d runs on %d workers", cfg.sweep_key, len(jobs), args.jobs)
    results = run_grid(jobs, args.jobs)

    out = out_root(args.out_dir)
    stem = "sweep_" + cfg.sweep_key.replace(".", "_")
    rows = _flatten(results)
    trace_path = write_trace(out / f"{stem}.csv", rows)
    n_failed = _write_failures(out / f"{stem}.failures.csv", results)
    summary = summarize(read_trace(trace_path)) if rows else []
    _write_summary(out / f"{stem}_summary.csv", summary)
    if summary:
        from .plotting import plot_sweep
        plot_sweep(summary, out / f"{stem}.svg", xlabel=cfg.sweep_key)
    print(f"sweep {cfg.sweep_key}: {len(jobs) - n_failed}/{len(jobs)} runs -> {trace_path}")
    for mode, value, n, med, q1, q3 in summary:
        print(f"  {mode:16s} {value!s:>8}  median {med:6.2f}%  IQR [{q1:.2f}, {q3:.2f}]  (n={n})")
    if n_failed:
        print(f"{n_failed} runs failed; see {stem}.failures.csv", file=sys.stderr)
        return EXIT_NONFINITE
    return EXIT_OK


_PAIRS = {"analog_tl": "digital_tl", "analog_scratch": "digital_scratch"}


def report_table(rows) -> list[tuple]:
    """Rows ``(mode, sweep_value, runs, median_final_error, gap)``.

    ``gap`` is the digital median final test error minus the analog one for
    the matching pair (``digital_tl``/``analog_tl`` or the scratch pair) at the
    same sweep value; a negative gap means the digital run is better. Rows
    without a counterpart get an empty gap.
    """
    summary = summarize(rows)
    med = {(m, v): md for m, v, _, md, _, _ in summary}
    out = []
    for mode, value, n, md, _, _ in summary:
        analog = mode if mode in _PAIRS else next((a for a, d in _PAIRS.items() if d == mode), None)
        gap = None
        if analog is not None and (analog, value) in med and (_PAIRS[analog], value) in med:
            gap = med[(_PAIRS[analog], value)] - med[(analog, value)]
        out.append((mode, value, n, md, gap))
    return out


def cmd_report(args) -> int:
    if not args.csv:
        raise InputError("report needs at least one CSV path")
    rows = []
    for path in args.csv:
        rows += read_trace(path)
    table = report_table(rows)
    out = out_root(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "sweep_value", "runs", "median_final_error", "gap_digital_minus_analog"])
        for row in table:
            w.writerow([_fmt(v) for v in row])
    from .plotting import plot_traces
    plot_traces(rows, out / "report.svg")
    print(f"{'mode':16s} {'sweep_value':>11s} {'runs':>4s} {'final_err':>9s} {'gap':>7s}")
    for mode, value, n, md, gap in table:
        g = "" if gap is None else f"{gap:+.2f}"
        print(f"{mode:16s} {value!s:>11s} {n:4d} {md:9.2f} {g:>7s}")
    return EXIT_OK


COMMANDS = {"pretrain": cmd_pretrain, "finetune": cmd_finetune, "sweep": cmd_sweep, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atls", description="Analog transfer-learning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config file")
        sp.add_argument("--out-dir", help="output directory (default $ATLS_OUT_DIR or ./atls_out)")
        sp.add_argument("--epochs", type=int, help="override the epoch count")
        sp.add_argument("--seed", type=int, help="override run.master_seed")
        return sp

    sp = common(sub.add_parser("pretrain", help="digital pre-training; writes a checkpoint"))
    sp.add_argument("--checkpoint", help="checkpoint path to write")
    sp = common(sub.add_parser("finetune", help="one fine-tuning mode; writes an error trace"))
    sp.add_argument("--checkpoint", help="pre-trained checkpoint (TL modes)")
    sp.add_argument("--mode", choices=FINETUNE_MODES, required=True)
    sp = common(sub.add_parser("sweep", help="parallel sweep over one config axis"))
    sp.add_argument("--checkpoint", help="pre-trained checkpoint (TL modes)")
    sp.add_argument("--mode", choices=FINETUNE_MODES, help="restrict to one mode")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp = sub.add_parser("report", help="summarise error-trace CSVs")
    sp.add_argument("csv", nargs="*", help="error-trace CSV files")
    sp.add_argument("--out-dir", help="output directory")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InputError) as exc:
        print(f"atls: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NonFiniteLossError as exc:
        print(f"atls: {exc}", file=sys.stderr)
        return EXIT_NONFINITE


if __name__ == "__main__":
    sys.exit(main())
