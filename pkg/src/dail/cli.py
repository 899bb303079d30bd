"""``dail`` command line: gen, train, eval, gradcheck, ablate.

Exit codes: 0 success, 1 usage error, 2 runtime or validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import ablation, gradcheck
from .checkpoint import load_checkpoint, save_checkpoint, state_from_checkpoint, state_to_checkpoint
from .config import RunConfig, apply_env_overrides, format_config, load_config
from .datagen import generate_corpus, read_corpus, write_corpus
from .evaluation import evaluate_params
from .trainer import train

logger = logging.getLogger("dail")

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "checkpoint.bin"
REPORT_FILE = "eval_report.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(path) -> RunConfig:
    return load_config(path) if path else apply_env_overrides(RunConfig())


def cmd_gen(args) -> int:
    cfg = _config(args.config)
    corpus = generate_corpus(cfg.gen)
    out = write_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} samples, {corpus.num_classes} classes, {corpus.num_datasets} datasets to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args.config)
    corpus = read_corpus(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = None
    train_cfg = cfg.train
    if args.resume:
        state, train_cfg = state_from_checkpoint(load_checkpoint(args.resume))
    (out / "config.txt").write_text(format_config(RunConfig(cfg.gen, train_cfg, cfg.eval, str(out), cfg.seeds)))
    mode = "a" if args.resume else "w"
    with open(out / METRICS_FILE, mode) as fh:

        def emit(m):
            fh.write(json.dumps(m) + "\n")

        result = train(train_cfg, corpus, state=state, until_step=args.until, on_metrics=emit)
    ckpt = state_to_checkpoint(result.state, train_cfg)
    save_checkpoint(out / CHECKPOINT_FILE, ckpt)
    last = result.metrics[-1] if result.metrics else None
    print(f"trained to step {result.state.step}; checkpoint {out / CHECKPOINT_FILE}")
    if last:
        print(f"last logged loss_cls {last['loss_cls']:.6f}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    state, train_cfg = state_from_checkpoint(ckpt)
    corpus = read_corpus(args.data)
    cfg = _config(args.config)
    n = args.pairs if args.pairs is not None else cfg.eval.n_pos
    report, notes = evaluate_params(
        state.params, corpus, n, n, cfg.eval.seed, cfg.eval.probe_steps, cfg.eval.probe_lr
    )
    for note in notes:
        print(note, file=sys.stderr)
    text = json.dumps(report.to_dict(), sort_keys=True)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(REPORT_FILE)
    out.write_text(text + "\n")
    print(text)
    return 0


def cmd_gradcheck(args) -> int:
    worst = gradcheck.max_by_group(gradcheck.run_gradcheck(args.seed))
    ok = True
    for name in sorted(worst):
        flag = "ok" if worst[name] < gradcheck.TOLERANCE else "FAIL"
        ok &= flag == "ok"
        print(f"{name:12s} max rel err {worst[name]:.3e}  {flag}")
    if not ok:
        print(f"gradient check failed (tolerance {gradcheck.TOLERANCE:g})", file=sys.stderr)
        return 2
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args.config)
    seeds = args.seeds if args.seeds is not None else cfg.seeds
    rows = ablation.run_ablation(cfg, seeds)
    out = ablation.write_reports(rows, args.out)
    print((out / "ablation.txt").read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dail", description="Dataset-aware multi-dataset training lab on synthetic corpora.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train on a corpus directory")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from (its config wins)")
    t.add_argument("--until", type=int, help="stop after this many total steps")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus' held-out split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--pairs", type=int, help="positive and negative pair count each")
    e.add_argument("--config")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="train and compare all loss modes")
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=int)
    a.set_defaults(func=cmd_ablate)
    return p


def run_command(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"dail {args.command}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
