"""Loss-mode ablation: every mode trained on one corpus over several seeds."""

from __future__ import annotations

import csv
import dataclasses
import logging
from pathlib import Path

import numpy as np

from .config import RunConfig
from .datagen import SyntheticCorpus, generate_corpus
from .evaluation import evaluate_params
from .trainer import LOSS_MODES, train

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["mode", "seed", "verification_accuracy", "domain_probe_accuracy", "overlap_same_id_cosine"]


def run_cell(cfg: RunConfig, corpus: SyntheticCorpus, mode: str, seed: int) -> dict:
    tc = dataclasses.replace(cfg.train, loss_mode=mode, seed=seed)
    result = train(tc, corpus)
    report, _ = evaluate_params(
        result.params, corpus, cfg.eval.n_pos, cfg.eval.n_neg, cfg.eval.seed + seed,
        cfg.eval.probe_steps, cfg.eval.probe_lr,
    )
    return {
        "mode": mode,
        "seed": seed,
        "verification_accuracy": report.verification_accuracy,
        "domain_probe_accuracy": report.domain_probe_accuracy,
        "overlap_same_id_cosine": report.overlap_same_id_cosine,
    }


def run_ablation(cfg: RunConfig, seeds: int | None = None, modes=LOSS_MODES,
                 corpus: SyntheticCorpus | None = None) -> list[dict]:
    """One row per (mode, seed). Training seeds are ``train.seed + i``."""
    corpus = corpus if corpus is not None else generate_corpus(cfg.gen)
    n = cfg.seeds if seeds is None else seeds
    rows = []
    for mode in modes:
        for i in range(n):
            seed = cfg.train.seed + i
            rows.append(run_cell(cfg, corpus, mode, seed))
            logger.info("%s seed %d: acc %.4f", mode, seed, rows[-1]["verification_accuracy"])
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    out = []
    for mode in dict.fromkeys(r["mode"] for r in rows):
        sel = [r for r in rows if r["mode"] == mode]
        entry = {"mode": mode, "n": len(sel)}
        for key in CSV_COLUMNS[2:]:
            vals = np.array([r[key] for r in sel if r[key] is not None], dtype=float)
            entry[key + "_mean"] = float(vals.mean()) if vals.size else None
            entry[key + "_std"] = float(vals.std()) if vals.size else None
        out.append(entry)
    return out


def _fmt(mean, std, scale=1.0):
    if mean is None:
        return "n/a"
    return f"{mean * scale:.2f} +- {std * scale:.2f}"


def format_table(summary: list[dict]) -> str:
    header = ["method", "verification acc (%)", "domain probe acc (%)", "overlap same-id cos"]
    body = [
        [
            s["mode"],
            _fmt(s["verification_accuracy_mean"], s["verification_accuracy_std"], 100.0),
            _fmt(s["domain_probe_accuracy_mean"], s["domain_probe_accuracy_std"], 100.0),
            _fmt(s["overlap_same_id_cosine_mean"], s["overlap_same_id_cosine_std"]),
        ]
        for s in summary
    ]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_reports(rows: list[dict], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else repr(r[k]) if isinstance(r[k], float) else r[k]) for k in CSV_COLUMNS})
    summary = summarize(rows)
    with open(out / "ablation_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)
    (out / "ablation.txt").write_text(format_table(summary))
    return out
