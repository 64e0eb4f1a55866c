"""Command-line entry point: keygen, run, sweep, report.

Every command exits 0 on success and 2 on configuration or input
errors, printing a single machine-parsable ``error: ...`` line on
stderr.  Runs write their effective configuration next to the metrics,
so re-running from that file reproduces the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Optional

from . import paillier
from .compression import save_plan
from .config import (ConfigError, RunConfig, default_config, load_config,
                     write_config_reference)
from .data import DataError
from .metrics import comparison_report, write_report_csv
from .protocol import ProtocolError, TrainingResult, run_training


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


# ---------------------------------------------------------------------------
# keygen
# ---------------------------------------------------------------------------


def cmd_keygen(args: argparse.Namespace) -> int:
    _ensure_dir(args.out)
    keypair = paillier.keygen(args.key_bits, seed=args.seed,
                              allow_small=os.environ.get("VFLSIM_ALLOW_SMALL_KEYS") == "1")
    pub_path = os.path.join(args.out, "public_key.pem")
    with open(pub_path, "w", encoding="utf-8") as fh:
        fh.write(paillier.export_public_key(keypair.public_key))
    print(f"wrote {pub_path}")
    if args.unsafe_private:
        priv_path = os.path.join(args.out, "private_key.pem")
        with open(priv_path, "w", encoding="utf-8") as fh:
            fh.write(paillier.export_private_key(keypair.private_key, allow_unsafe=True))
        print(f"wrote {priv_path} (keep this out of any message path)")
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

_MODE_FIELDS = ("backup_workers", "backup_mode", "slowdown_prob", "plain_mode", "seed")


def run_label(config: RunConfig) -> str:
    """Human label for the scheme combination a config exercises."""
    compressed = any(r < 1.0 for r in config.pca_ratios)
    if config.plain_mode:
        return "Plain"
    if config.backup_workers > 0 and compressed:
        return "Ours"
    if config.backup_workers > 0:
        return "Backup"
    if compressed:
        return "PCA"
    return "Origin"


def _summary_row(config: RunConfig, result: TrainingResult) -> dict:
    row = {
        "label": run_label(config),
        "backup_workers": config.backup_workers,
        "backup_mode": config.backup_mode,
        "slowdown_prob": config.slowdown_prob,
        "pca_ratios": "/".join(str(r) for r in config.pca_ratios),
        "plain_mode": config.plain_mode,
        "seed": config.seed,
    }
    row.update(result.metrics.summary())
    return row


def _write_summary_csv(path: str, rows: list[dict]) -> None:
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def execute_run(config: RunConfig, out_dir: str) -> dict:
    """Run one configuration and write all artifacts into out_dir."""
    _ensure_dir(out_dir)
    config.to_json(os.path.join(out_dir, "effective_config.json"))
    write_config_reference(os.path.join(out_dir, "config_reference.txt"))
    dataset = config.build_dataset()
    result = run_training(dataset, config.hyperparams(), config.protocol_config(),
                          link=config.link_model(), cost_model=config.cost(),
                          other_seconds=config.other_seconds)
    result.metrics.to_jsonl(os.path.join(out_dir, "metrics.jsonl"))
    result.network.export_trace(os.path.join(out_dir, "events.jsonl"))
    for party in result.all_parties():
        if party.plan is not None:
            save_plan(party.plan, os.path.join(out_dir, f"plan_{party.party_id}.csv"))
    row = _summary_row(config, result)
    _write_summary_csv(os.path.join(out_dir, "summary.csv"), [row])
    return row


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_cli_config(args)
    out_dir = args.out or config.output_dir or "vflsim-out"
    row = execute_run(config, out_dir)
    print(f"run complete: {out_dir}")
    print(f"  final objective {row['final_objective']}, final AUC {row['final_auc']}")
    print(f"  phases (s): comp {row['computation_s']:.3f}, enc {row['encryption_s']:.3f}, "
          f"comm {row['communication_s']:.3f}, other {row['other_s']:.3f}")
    return 0


def _load_cli_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_config(args.config, overrides)
    config = default_config()
    if args.seed is not None:
        config.seed = args.seed
    config.validate()
    return config


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _parse_list(text: str, kind) -> list:
    try:
        return [kind(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _load_cli_config(args)
    betas = _parse_list(args.betas, int) if args.betas else [base.backup_workers]
    probs = _parse_list(args.probs, float) if args.probs else [base.slowdown_prob]
    ratios = _parse_list(args.ratios, float) if args.ratios else [1.0]
    out_dir = args.out or base.output_dir or "vflsim-sweep"
    _ensure_dir(out_dir)
    rows = []
    for beta in betas:
        for prob in probs:
            for ratio in ratios:
                cell = RunConfig(**{**base.to_dict(),
                                    "dataset": base.dataset,
                                    "backup_workers": beta,
                                    "slowdown_prob": prob,
                                    "pca_ratios": [ratio] * (base.num_hosts + 1)})
                cell.validate()
                cell_dir = os.path.join(out_dir, f"b{beta}_p{prob:g}_r{ratio:g}")
                row = execute_run(cell, cell_dir)
                row = {"cell": os.path.basename(cell_dir), "beta": beta,
                       "slowdown_prob": prob, "pca_ratio": ratio, **row}
                rows.append(row)
                print(f"cell {row['cell']}: sum_s={row['computation_s'] + row['communication_s']:.3f}")
    _write_summary_csv(os.path.join(out_dir, "sweep_summary.csv"), rows)
    print(f"sweep complete: {len(rows)} cells -> {out_dir}/sweep_summary.csv")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _read_summary(run_dir: str) -> dict:
    path = os.path.join(run_dir, "summary.csv")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        try:
            row = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty summary") from None
    for key in ("computation_s", "encryption_s", "communication_s", "other_s"):
        row[key] = float(row[key])
    return row


def cmd_report(args: argparse.Namespace) -> int:
    labels = args.labels.split(",") if args.labels else None
    if labels and len(labels) != len(args.runs):
        return _fail("--labels must list one label per run directory")
    summaries = {}
    for i, run_dir in enumerate(args.runs):
        row = _read_summary(run_dir)
        label = labels[i] if labels else row.get("label", run_dir)
        if label in summaries:
            return _fail(f"duplicate mode label {label!r}; use --labels")
        summaries[label] = row
    reference = None
    if args.reference:
        with open(args.reference, encoding="utf-8") as fh:
            reference = json.load(fh)
    rows = comparison_report(summaries, reference=reference)
    out_path = args.out or "report.csv"
    write_report_csv(rows, out_path)
    for row in rows:
        cells = ", ".join(f"{k}={v}" for k, v in row.items() if k != "quantity")
        print(f"{row['quantity']}: {cells}")
    print(f"report written to {out_path}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vflsim",
        description="Vertical federated learning engine and network simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_key = sub.add_parser("keygen", help="generate a Paillier key pair")
    p_key.add_argument("--key-bits", type=int, default=paillier.DEFAULT_KEY_BITS)
    p_key.add_argument("--seed", type=int, default=None)
    p_key.add_argument("--out", default="keys")
    p_key.add_argument("--unsafe-private", action="store_true",
                       help="also export the private key")
    p_key.set_defaults(func=cmd_keygen)

    p_run = sub.add_parser("run", help="execute one training run from a config file")
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a cross-product over beta, slowdown "
                                           "probability, and compression ratio")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--betas", default=None, help="comma list, e.g. 0,1,2")
    p_sweep.add_argument("--probs", default=None, help="comma list, e.g. 0,0.25,0.5")
    p_sweep.add_argument("--ratios", default=None, help="comma list, e.g. 1.0,0.6")
    p_sweep.set_defaults(func=cmd_sweep)

    p_rep = sub.add_parser("report", help="comparison table across finished runs")
    p_rep.add_argument("runs", nargs="+", help="run output directories")
    p_rep.add_argument("--labels", default=None, help="comma list of mode labels")
    p_rep.add_argument("--reference", default=None,
                       help="JSON file of external reference values per mode")
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ProtocolError, DataError, ValueError) as exc:
        return _fail(str(exc))
    except OSError as exc:
        return _fail(f"{exc.__class__.__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
