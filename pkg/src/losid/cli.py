"""Command line interface.

Four subcommands cover the pipeline:

    losid simulate  --scale 0.05 --out data.csid
    losid train     data.csid --p 10 --dh 10 --out run/
    losid eval      run/model.ckpt data.csid --split test --out eval/
    losid baseline  data.csid --feature skewness --p 100 --out base/

Settings resolve as CLI flag > --config JSON file > built-in default, and
the effective configuration is echoed to stdout and written next to the
outputs.  Commands that write delimited reports also render the matching
matplotlib figure alongside (disable with --no-figures).

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing/corrupt files, degenerate datasets), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import baselines, dataset, evaluation, figures, training
from .channel_sim import ChannelCondition, SimConfig, simulate_session
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetFormatError,
    NumericError,
    SingleClassError,
)
from .lstm import ModelCheckpoint, init_params, load_model, save_model

# Default packet mix across conditions (structural blockage dominates),
# scaled by --scale.
CONDITION_MIX = {
    ChannelCondition.LOS: 101197,
    ChannelCondition.NLOS_STRUCTURE: 227818,
    ChannelCondition.NLOS_BODY: 103547,
}

DEFAULTS = {
    "simulate": {
        "seed": 0,
        "scale": 0.01,
        "session_packets": 500,
        "conditions": "los,structure,body",
        "out": "dataset.csid",
        "no_figures": False,
    },
    "train": {
        "seed": 0,
        "p": 10,
        "stride": None,
        "dh": 10,
        "lr": 5e-4,
        "epochs": 1000,
        "batch": 64,
        "no_rssi": False,
        "streams": "all",
        "objective": "avg_rate",
        "ratios": (0.70, 0.15, 0.15),
        "patience": None,
        "out": "train_out",
        "no_figures": False,
        "quiet": False,
    },
    "eval": {
        "split": "test",
        "ensemble": "none",
        "p": None,
        "out": "eval_out",
        "no_figures": False,
    },
    "baseline": {
        "feature": "skewness",
        "p": 10,
        "stride": None,
        "out": "baseline_out",
        "no_figures": False,
    },
}

_SIM_FIELDS = {f.name for f in dataclasses.fields(SimConfig)}


class _Parser(argparse.ArgumentParser):
    """argparse, but usage problems exit with code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="losid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic CSI dataset")
    sim.add_argument("--config", help="JSON config file")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--scale", type=float, help="fraction of the full packet mix")
    sim.add_argument("--session-packets", type=int, dest="session_packets")
    sim.add_argument("--conditions", help="comma list from los, structure, body")
    sim.add_argument("--n0", type=float, dest="noise_var", help="CSI noise variance")
    sim.add_argument("--out", help="output dataset path")
    sim.add_argument("--no-figures", action="store_true", default=None, dest="no_figures")

    tr = sub.add_parser("train", help="train the LSTM classifier on a dataset")
    tr.add_argument("data", help="dataset file from `losid simulate`")
    tr.add_argument("--config", help="JSON config file")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--p", type=int, help="window length in packets")
    tr.add_argument("--stride", type=int, help="window stride (default: --p)")
    tr.add_argument("--dh", type=int, help="hidden state dimension")
    tr.add_argument("--lr", type=float, help="Adam learning rate")
    tr.add_argument("--epochs", type=int, help="maximum training epochs")
    tr.add_argument("--patience", type=int,
                    help="stop after this many epochs without validation improvement")
    tr.add_argument("--batch", type=int, help="minibatch size, 0 = full batch")
    tr.add_argument("--no-rssi", action="store_true", default=None, dest="no_rssi",
                    help="drop RSSI from the input vectors (CSI only)")
    tr.add_argument("--streams", help="'all' or comma list of stream indices")
    tr.add_argument("--objective", choices=evaluation.OBJECTIVES)
    tr.add_argument("--out", help="output directory")
    tr.add_argument("--no-figures", action="store_true", default=None, dest="no_figures")
    tr.add_argument("--quiet", action="store_true", default=None,
                    help="suppress per-epoch cost lines")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("model", help="checkpoint from `losid train`")
    ev.add_argument("data", help="dataset file")
    ev.add_argument("--config", help="JSON config file")
    ev.add_argument("--split", choices=("train", "val", "test", "all"))
    ev.add_argument("--ensemble", choices=("none", "median"),
                    help="median combines the per-stream outputs of each window")
    ev.add_argument("--p", type=int, help="override the training window length")
    ev.add_argument("--out", help="output directory")
    ev.add_argument("--no-figures", action="store_true", default=None, dest="no_figures")

    ba = sub.add_parser("baseline", help="score a dataset with a handcrafted feature")
    ba.add_argument("data", help="dataset file")
    ba.add_argument("--config", help="JSON config file")
    ba.add_argument("--feature", choices=baselines.FEATURE_KINDS)
    ba.add_argument("--p", type=int, help="window length in packets")
    ba.add_argument("--stride", type=int, help="window stride (default: --p)")
    ba.add_argument("--out", help="output directory")
    ba.add_argument("--no-figures", action="store_true", default=None, dest="no_figures")

    return parser


def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON ({exc})")
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return loaded


def _merge_config(command: str, args: argparse.Namespace, extra_keys=frozenset()) -> dict:
    """defaults < config file < explicit CLI flags."""
    merged = dict(DEFAULTS[command])
    allowed = set(merged) | set(extra_keys)
    if args.config:
        for key, value in _load_config_file(args.config).items():
            if key not in allowed:
                raise ConfigError(f"unknown config key {key!r} for `{command}`")
            merged[key] = value
    for key in DEFAULTS[command]:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    # simulate: channel parameters may come from flags too
    for key in extra_keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _echo_config(command: str, merged: dict) -> None:
    printable = {k: (list(v) if isinstance(v, tuple) else v) for k, v in merged.items()}
    print(f"effective config ({command}): " + json.dumps(printable, sort_keys=True))


def _write_config(path, command: str, merged: dict) -> None:
    printable = {k: (list(v) if isinstance(v, tuple) else v) for k, v in merged.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"command": command, **printable}, fh, indent=2, sort_keys=True)
        fh.write("\n")


_CONDITION_NAMES = {
    "los": ChannelCondition.LOS,
    "structure": ChannelCondition.NLOS_STRUCTURE,
    "nlos_structure": ChannelCondition.NLOS_STRUCTURE,
    "body": ChannelCondition.NLOS_BODY,
    "nlos_body": ChannelCondition.NLOS_BODY,
}


def _parse_conditions(text: str) -> list[ChannelCondition]:
    chosen = []
    for token in str(text).replace("+", ",").split(","):
        token = token.strip().lower().replace("-", "_")
        if token.endswith("_only"):
            token = token[: -len("_only")]
        if not token:
            continue
        if token not in _CONDITION_NAMES:
            raise ConfigError(
                f"unknown condition {token!r}; pick from los, structure, body"
            )
        cond = _CONDITION_NAMES[token]
        if cond not in chosen:
            chosen.append(cond)
    if not chosen:
        raise ConfigError("no conditions selected")
    return chosen


def _parse_streams(text, num_streams: int):
    if text is None or str(text).strip().lower() == "all":
        return list(range(num_streams))
    try:
        streams = [int(tok) for tok in str(text).split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"bad --streams value {text!r}")
    if not streams:
        raise ConfigError("empty --streams selection")
    for s in streams:
        if not 0 <= s < num_streams:
            raise ConfigError(f"stream index {s} out of range (dataset has {num_streams})")
    return streams


def _sim_config(merged: dict) -> SimConfig:
    kwargs = {}
    for key in _SIM_FIELDS & set(merged):
        value = merged[key]
        if key in ("subcarriers", "nlos_extra_loss_db"):
            value = tuple(value)
        kwargs[key] = value
    return SimConfig(**kwargs)


def _sessions_to_samples(sessions, meta, window_len, stride, streams, include_rssi):
    samples = []
    for sid, session in enumerate(sessions):
        for stream in streams:
            samples.extend(
                dataset.window_sequences(
                    session,
                    window_len,
                    stride=stride,
                    stream=stream,
                    include_rssi=include_rssi,
                    session_id=sid,
                )
            )
    return samples


def _normalized_xy(samples, stats):
    x, y = dataset.stacked([dataset.normalize(s, stats) for s in samples])
    return x, y


def cmd_simulate(args) -> int:
    merged = _merge_config("simulate", args, extra_keys=_SIM_FIELDS)
    sim = _sim_config(merged)
    merged_full = {**merged, **{k: getattr(sim, k) for k in _SIM_FIELDS}}
    _echo_config("simulate", merged_full)

    scale = float(merged["scale"])
    if scale <= 0:
        raise ConfigError("--scale must be positive")
    session_packets = int(merged["session_packets"])
    if session_packets < 1:
        raise ConfigError("--session-packets must be at least 1")
    conditions = _parse_conditions(merged["conditions"])

    plan = []  # (condition, packets) per session
    for cond in sorted(conditions):
        remaining = int(round(CONDITION_MIX[cond] * scale))
        while remaining > 0:
            take = min(session_packets, remaining)
            plan.append((cond, take))
            remaining -= take

    children = np.random.SeedSequence(int(merged["seed"])).spawn(len(plan))
    sessions = [
        simulate_session(sim, cond, count, seed)
        for (cond, count), seed in zip(plan, children)
    ]
    meta = dataset.DatasetMeta(
        subcarriers=sim.subcarriers,
        dft_size=sim.dft_size,
        num_streams=sim.num_streams,
    )
    out = merged["out"]
    out_dir = os.path.dirname(os.path.abspath(out))
    os.makedirs(out_dir, exist_ok=True)
    dataset.write_dataset(out, sessions, meta)
    _write_config(out + ".config.json", "simulate", merged_full)
    if not merged["no_figures"]:
        figures.save_rssi_histogram(sessions, out + ".rssi.png")

    for cond in sorted(conditions):
        total = sum(c for k, c in plan if k is cond)
        n_sessions = sum(1 for k, _ in plan if k is cond)
        print(f"  {cond.name}: {total} packets in {n_sessions} sessions")
    print(f"wrote {sum(c for _, c in plan)} packets to {out}")
    return 0


def cmd_train(args) -> int:
    merged = _merge_config("train", args)
    merged["stride"] = merged["stride"] or merged["p"]
    _echo_config("train", merged)

    sessions, meta = dataset.read_dataset(args.data)
    include_rssi = not merged["no_rssi"]
    streams = _parse_streams(merged["streams"], meta.num_streams)
    samples = _sessions_to_samples(
        sessions, meta, int(merged["p"]), int(merged["stride"]), streams, include_rssi
    )
    if not samples:
        raise ValueError(
            f"no windows: dataset sessions are shorter than --p {merged['p']}"
        )
    ratios = tuple(merged["ratios"])
    dsplit = dataset.split(samples, ratios=ratios, seed=int(merged["seed"]))
    stats = dsplit.stats
    norm_split = dataset.DatasetSplit(
        train=[dataset.normalize(s, stats) for s in dsplit.train],
        validation=[dataset.normalize(s, stats) for s in dsplit.validation],
        test=[dataset.normalize(s, stats) for s in dsplit.test],
        stats=stats,
    )

    tconf = training.TrainConfig(
        learning_rate=float(merged["lr"]),
        max_epochs=int(merged["epochs"]),
        batch_size=int(merged["batch"]),
        patience=merged["patience"],
        seed=int(merged["seed"]),
    )
    input_dim = samples[0].x.shape[1]
    params0 = init_params(input_dim, int(merged["dh"]), seed=int(merged["seed"]))
    progress = None
    if not merged["quiet"]:
        progress = lambda e, tr, va, te: print(
            f"epoch {e}: train={tr:.6f} val={va:.6f} test={te:.6f}"
        )
    params, report = training.train(norm_split, tconf, params=params0, progress=progress)

    out = merged["out"]
    os.makedirs(out, exist_ok=True)
    report.to_csv(os.path.join(out, "train_report.csv"))
    _write_config(os.path.join(out, "config.json"), "train", merged)
    if not merged["no_figures"]:
        figures.save_cost_curves(report, os.path.join(out, "cost_curve.png"))
    if report.diverged:
        raise NumericError(
            f"training diverged at epoch {report.epochs_run}; report written to {out}"
        )

    x_va, y_va = _normalized_xy(dsplit.validation, stats)
    val_scores = training.predict_scores(params, x_va)
    alpha = evaluation.select_threshold(val_scores, y_va, merged["objective"])

    x_te, y_te = _normalized_xy(dsplit.test, stats)
    test_scores = training.predict_scores(params, x_te)
    summary = evaluation.summarize(
        test_scores,
        y_te,
        alpha,
        extras={
            "split": "test",
            "objective": merged["objective"],
            "best_epoch": report.best_epoch,
            "best_val_cost": report.best_val_cost,
            "epochs_run": report.epochs_run,
            "n_train": len(dsplit.train),
            "n_val": len(dsplit.validation),
            "n_test": len(dsplit.test),
        },
    )
    checkpoint = ModelCheckpoint(
        params=params,
        num_subcarriers=len(meta.subcarriers),
        include_rssi=include_rssi,
        alpha=alpha,
        stats=stats,
        train_meta={
            "p": int(merged["p"]),
            "stride": int(merged["stride"]),
            "hidden_dim": int(merged["dh"]),
            "seed": int(merged["seed"]),
            "ratios": list(ratios),
            "streams": merged["streams"],
            "objective": merged["objective"],
            "learning_rate": float(merged["lr"]),
            "max_epochs": int(merged["epochs"]),
            "batch_size": int(merged["batch"]),
        },
    )
    save_model(os.path.join(out, "model.ckpt"), checkpoint)
    evaluation.write_summary_json(os.path.join(out, "metrics.json"), summary)
    if not merged["no_figures"]:
        curve = evaluation.roc(test_scores, y_te)
        figures.save_roc([("test", curve)], os.path.join(out, "roc.png"))

    print(
        f"selected epoch {report.best_epoch}/{report.epochs_run} "
        f"(val cost {report.best_val_cost:.4f}), alpha={alpha:.4f}"
    )
    print(
        f"test: avg_rate={summary['avg_rate']:.4f} accuracy={summary['accuracy']:.4f} "
        f"auc={summary['auc']:.4f}"
    )
    print(f"checkpoint and reports in {out}")
    return 0


def _ensemble_median(scores, samples):
    """Median of per-stream scores for each (session, window start)."""
    groups: dict[tuple, list[int]] = {}
    order = []
    for i, s in enumerate(samples):
        key = (s.session_id, s.start)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(i)
    out_scores = np.empty(len(order))
    out_labels = np.empty(len(order), dtype=np.int64)
    for j, key in enumerate(order):
        idx = groups[key]
        out_scores[j] = baselines.median_over_streams(scores[idx])
        out_labels[j] = samples[idx[0]].label
    return out_scores, out_labels


def cmd_eval(args) -> int:
    merged = _merge_config("eval", args)
    ckpt = load_model(args.model)
    sessions, meta = dataset.read_dataset(args.data)
    if len(meta.subcarriers) != ckpt.num_subcarriers:
        raise ValueError(
            f"dataset has {len(meta.subcarriers)} subcarriers, checkpoint expects "
            f"{ckpt.num_subcarriers}"
        )

    tm = ckpt.train_meta
    window_len = int(merged["p"] or tm.get("p", 10))
    stride = int(tm.get("stride", window_len)) if merged["p"] is None else window_len
    streams = _parse_streams(tm.get("streams", "all"), meta.num_streams)
    merged_full = {
        **merged,
        "p": window_len,
        "stride": stride,
        "alpha": ckpt.alpha,
        "include_rssi": ckpt.include_rssi,
    }
    _echo_config("eval", merged_full)

    samples = _sessions_to_samples(
        sessions, meta, window_len, stride, streams, ckpt.include_rssi
    )
    if not samples:
        raise ValueError(f"no windows: dataset sessions are shorter than P={window_len}")
    if merged["split"] == "all":
        part = samples
    else:
        dsplit = dataset.split(
            samples,
            ratios=tuple(tm.get("ratios", (0.70, 0.15, 0.15))),
            seed=int(tm.get("seed", 0)),
        )
        part = {
            "train": dsplit.train,
            "val": dsplit.validation,
            "test": dsplit.test,
        }[merged["split"]]
    if not part:
        raise ValueError(f"split {merged['split']!r} holds no samples")

    x, y = _normalized_xy(part, ckpt.stats)
    scores = training.predict_scores(ckpt.params, x)
    if merged["ensemble"] == "median":
        scores, y = _ensemble_median(scores, part)

    curve = evaluation.roc(scores, y)
    summary = evaluation.summarize(
        scores,
        y,
        ckpt.alpha,
        extras={"split": merged["split"], "ensemble": merged["ensemble"]},
    )
    out = merged["out"]
    os.makedirs(out, exist_ok=True)
    evaluation.write_summary_json(os.path.join(out, "metrics.json"), summary)
    curve.write_csv(os.path.join(out, "roc.csv"))
    _write_config(os.path.join(out, "config.json"), "eval", merged_full)
    if not merged["no_figures"]:
        figures.save_roc(
            [(f"{merged['split']} ({merged['ensemble']})", curve)],
            os.path.join(out, "roc.png"),
        )
    print(
        f"{merged['split']}: avg_rate={summary['avg_rate']:.4f} "
        f"accuracy={summary['accuracy']:.4f} auc={summary['auc']:.4f} "
        f"({summary['n_windows']} windows)"
    )
    print(f"reports in {out}")
    return 0


def cmd_baseline(args) -> int:
    merged = _merge_config("baseline", args)
    merged["stride"] = merged["stride"] or merged["p"]
    _echo_config("baseline", merged)

    sessions, meta = dataset.read_dataset(args.data)
    feature = merged["feature"]
    scores, labels, rows = baselines.window_scores(
        sessions, meta, feature, int(merged["p"]), stride=int(merged["stride"])
    )
    out = merged["out"]
    os.makedirs(out, exist_ok=True)
    baselines.write_feature_csv(os.path.join(out, "features.csv"), feature, rows)
    _write_config(os.path.join(out, "config.json"), "baseline", merged)
    if len(scores) == 0:
        print(
            f"warning: no windows (every session shorter than --p {merged['p']}); "
            "empty feature CSV written",
            file=sys.stderr,
        )
        return 0

    alpha = evaluation.select_threshold(scores, labels, "avg_rate")
    curve = evaluation.roc(scores, labels)
    summary = evaluation.summarize(
        scores, labels, alpha, extras={"feature": feature, "p": int(merged["p"])}
    )
    evaluation.write_summary_json(os.path.join(out, "metrics.json"), summary)
    curve.write_csv(os.path.join(out, "roc.csv"))
    if not merged["no_figures"]:
        figures.save_roc([(feature, curve)], os.path.join(out, "roc.png"))
        figures.save_feature_histogram(rows, feature, os.path.join(out, "histogram.png"))
    print(
        f"{feature} (P={merged['p']}): best avg_rate={summary['avg_rate']:.4f} "
        f"auc={summary['auc']:.4f} over {summary['n_windows']} windows"
    )
    print(f"reports in {out}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DatasetFormatError, CheckpointError, SingleClassError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
