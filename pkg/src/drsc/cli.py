"""drsc command line: prep, train, eval and the experiment grids.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from drsc.config import RunConfig

log = logging.getLogger("drsc")

GRID_VERBS = {
    "sweep": ("table1_criterion_sweep", "distance criterion sweep (L1, L2, cosine)"),
    "compare": ("table2_method_comparison", "SpeechIC baselines against DRSC"),
    "ablate": ("table3_loss_ablation", "full objective against the three optional terms removed"),
    "robustness": ("table4_robustness", "accurate against corrupted test transcripts"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _add_config_args(p, required=True):
    p.add_argument("--config", required=required, help="RunConfig JSON file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-path override, e.g. --set weights.kl=0 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drsc", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="INFO", help="stderr logging level")
    sub = parser.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)

    p = sub.add_parser("prep", help="build manifest, transcripts and the Mel feature cache")
    p.add_argument("--data", required=True, help="dataset root (audio files plus index csv)")
    p.add_argument("--out", required=True, help="cache directory")
    p.add_argument("--seed", type=int, default=0, help="split and corruption seed")
    _add_config_args(p, required=False)

    p = sub.add_parser("train", help="train one model")
    _add_config_args(p)
    p.add_argument("--out", help="run directory (overrides paths.out_dir)")
    p.add_argument("--resume", action="store_true", help="continue from last.pt in the run directory")
    p.add_argument("--force", action="store_true", help="resume even if the model config changed")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    _add_config_args(p, required=False)
    p.add_argument("--text-source", choices=("accurate", "corrupted"))
    p.add_argument("--out", help="directory for summary.json and confusion.csv/png")
    p.add_argument("--force", action="store_true", help="ignore a config-hash mismatch")

    for verb, (_, text) in GRID_VERBS.items():
        p = sub.add_parser(verb, help=text)
        _add_config_args(p)
        p.add_argument("--out", default="results", help="results root")
        p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
        p.add_argument("--force", action="store_true", help="re-run cells that already have results")

    p = sub.add_parser("synth-test", help="end-to-end check on the synthetic two-domain dataset")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/synth-test")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    return parser


def _load_config(args) -> RunConfig:
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        config = RunConfig.load(path)
        return config.with_overrides(args.overrides) if args.overrides else config
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc


def _overridden(args, config: RunConfig) -> RunConfig:
    try:
        return config.with_overrides(args.overrides) if args.overrides else config
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"bad override: {exc}") from exc


def cmd_prep(args) -> int:
    from drsc.dataio.features import prepare
    feats = _load_config(args).features if args.config else _overridden(args, RunConfig()).features
    manifest = prepare(args.data, args.out, feats, args.seed)
    counts = {s: len(manifest.split(s)) for s in ("train", "test")}
    log.info("prepared %d utterances (%d train, %d test) in %s",
             len(manifest), counts["train"], counts["test"], args.out)
    return 0


def cmd_train(args) -> int:
    from drsc.train import CheckpointMismatchError, fit
    config = _load_config(args)
    if args.out:
        config = config.with_overrides({"paths.out_dir": args.out})
    try:
        result = fit(config, resume=args.resume, force=args.force)
    except CheckpointMismatchError as exc:
        log.error("%s", exc)
        return 2
    print(json.dumps(result.summary, indent=2))
    return 0


def cmd_eval(args) -> int:
    from drsc.eval import evaluate
    config = _load_config(args) if args.config else None
    acc, cm = evaluate(args.checkpoint, config=config, force=args.force, text_source=args.text_source)
    summary = {"checkpoint": str(args.checkpoint), "accuracy": acc, "n_test": cm.total}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
        cm.to_csv(out / "confusion.csv")
        cm.to_png(out / "confusion.png")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_grid(args) -> int:
    from drsc.eval import RUNNERS, markdown_table, reproduction_checks
    experiment = GRID_VERBS[args.verb][0]
    config = _load_config(args)
    results = RUNNERS[experiment](config, args.out, tuple(args.seeds), force=args.force)
    table = markdown_table(experiment, results)
    (Path(args.out) / experiment / "table.md").write_text(table, encoding="utf-8")
    print(table)
    for name, ok, detail in reproduction_checks(results):
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0


def cmd_synth_test(args) -> int:
    from drsc.eval import synthetic_oracle, synthetic_run_config
    config = _overridden(args, synthetic_run_config(args.epochs, args.seed, args.out))
    res = synthetic_oracle(config)
    print(f"{'PASS' if res['accuracy_ok'] else 'FAIL'}  synthetic accuracy {100 * res['accuracy']:.2f}% "
          f"(need >= 95%)")
    print(f"{'PASS' if res['flip_ok'] else 'FAIL'}  intent swap flips to donor class in "
          f"{100 * res['flip']:.2f}% of pairs (need >= 90%)")
    return 0 if res["accuracy_ok"] else 2


COMMANDS = {"prep": cmd_prep, "train": cmd_train, "eval": cmd_eval, "synth-test": cmd_synth_test,
            **{v: cmd_grid for v in GRID_VERBS}}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verb is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=args.log_level.upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - any failure past argument parsing is a runtime error
        log.error("%s: %s", type(exc).__name__, exc)
        log.debug("traceback", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
