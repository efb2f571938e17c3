"""``rbert`` command line: synth | train | eval | predict | score | ablate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .checkpoint import CheckpointError
from .data import DataError, parse_dataset, render_dataset, write_predictions
from .model import RBertModel, Variant
from .scorer import chance_macro_f1, fmt2, score, score_files
from .synthetic import make_synthetic_task
from .tokenizer import EncodingError, Vocab, encode_all
from .trainer import ConfigError, NumericError, TrainConfig, evaluate, metrics_log, train

log = logging.getLogger("rbert")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
TABLE_ORDER = (Variant.NO_SEP_NO_ENT, Variant.NO_SEP, Variant.NO_ENT, Variant.FULL)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="output file or directory")
    common.add_argument("--variant", help="FULL, NO_SEP, NO_ENT or NO_SEP_NO_ENT")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="rbert", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="write a synthetic marker-dependent task")
    sub.add_parser("train", parents=[common], help="train on config train_file; write checkpoint + metrics")
    for name, text in (("eval", "score a checkpoint on labelled data"), ("predict", "write a prediction file")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--model", type=Path, required=True, help="checkpoint from `train`")
        sp.add_argument("--data", type=Path, help="SemEval-format file (default: config test_file)")
    sp = sub.add_parser("score", parents=[common], help="directional macro-F1 of a prediction file")
    sp.add_argument("--gold", type=Path, required=True)
    sp.add_argument("--pred", type=Path, required=True)
    sub.add_parser("ablate", parents=[common], help="train and evaluate all four variants")
    return p


# -- helpers ---------------------------------------------------------------------


def _load_config(args, **extra) -> tuple[TrainConfig, Path]:
    overrides = {"seed": args.seed, **extra}
    if args.variant:
        try:
            overrides["variant"] = Variant.parse(args.variant)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if args.config is None:
        return TrainConfig.for_profile("scratch", max_len=32, **{k: v for k, v in overrides.items() if v is not None}), Path.cwd()
    return TrainConfig.from_file(args.config, **overrides), args.config.parent


def _resolve(base: Path, value: str, what: str) -> Path:
    if not value:
        raise ConfigError(f"config has no {what}")
    path = Path(value)
    return path if path.is_absolute() else base / path


def _read(path: Path) -> str:
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path.read_text(encoding="utf-8")


def _vocab(cfg: TrainConfig, base: Path, train_instances) -> Vocab:
    if cfg.vocab_file:
        return Vocab.from_file(_resolve(base, cfg.vocab_file, "vocab_file"))
    return Vocab.build(train_instances, cfg.min_count)


def _train_variant(cfg: TrainConfig, base: Path):
    train_inst = parse_dataset(_read(_resolve(base, cfg.train_file, "train_file")), "train")
    vocab = _vocab(cfg, base, train_inst)
    encoded = encode_all(train_inst, vocab, cfg.max_len, markers=cfg.variant.uses_markers)
    t0 = time.perf_counter()
    model, history = train(encoded, cfg, len(vocab))
    log.info("%s: %d epochs in %.1fs", cfg.variant.value, cfg.epochs, time.perf_counter() - t0)
    return model, history, vocab


def _evaluate_file(model: RBertModel, vocab: Vocab, path: Path, max_len: int):
    instances = parse_dataset(_read(path), "test")
    encoded = encode_all(instances, vocab, max_len, markers=model.config.variant.uses_markers)
    preds, acc = evaluate(encoded, model)
    gold = [(inst.id, inst.label) for inst in instances if inst.label is not None]
    return instances, preds, gold, acc


def _load_model(path: Path) -> tuple[RBertModel, Vocab, int]:
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    model, meta = RBertModel.load(path)
    return model, Vocab(meta["vocab"]), model.config.max_len


# -- commands --------------------------------------------------------------------


def run_synth(args) -> int:
    cfg, _ = _load_config(args)
    out = args.out or Path("synth")
    out.mkdir(parents=True, exist_ok=True)
    train_inst, test_inst = make_synthetic_task(
        cfg.synth_families, cfg.synth_vocab_size, cfg.synth_train_size, cfg.synth_test_size, seed=cfg.seed
    )
    (out / "train.txt").write_text(render_dataset(train_inst), encoding="utf-8")
    (out / "test.txt").write_text(render_dataset(test_inst), encoding="utf-8")
    (out / "test_key.txt").write_text(write_predictions((i.id, i.label) for i in test_inst), encoding="utf-8")
    cfg = cfg.replace(train_file="train.txt", test_file="test.txt", vocab_file="")
    (out / "experiment.cfg").write_text(cfg.to_text(), encoding="utf-8")
    print(f"wrote {len(train_inst)} train / {len(test_inst)} test instances and experiment.cfg to {out}")
    return EXIT_OK


def run_train(args) -> int:
    if args.config is None:
        raise UsageError("train needs --config")
    cfg, base = _load_config(args)
    out = args.out or Path("run")
    out.mkdir(parents=True, exist_ok=True)
    model, history, vocab = _train_variant(cfg, base)
    model.save(out / "model.ckpt", {"vocab": list(vocab.tokens), "train_config": cfg.to_text()})
    (out / "metrics.tsv").write_text(metrics_log(cfg, history), encoding="utf-8")
    msg = f"saved {out / 'model.ckpt'}"
    if cfg.test_file:
        _, preds, gold, acc = _evaluate_file(model, vocab, _resolve(base, cfg.test_file, "test_file"), cfg.max_len)
        if gold:
            msg += f"; test macro-F1 {fmt2(score(gold, preds).macro_f1)}, accuracy {acc:.4f}"
    print(msg)
    return EXIT_OK


def _eval_data_path(args) -> Path:
    if args.data is not None:
        return args.data
    if args.config is None:
        raise UsageError("give --data or a --config with test_file")
    cfg, base = _load_config(args)
    return _resolve(base, cfg.test_file, "test_file")


def run_eval(args) -> int:
    model, vocab, max_len = _load_model(args.model)
    _, preds, gold, acc = _evaluate_file(model, vocab, _eval_data_path(args), max_len)
    if not gold:
        raise DataError("evaluation data has no labels")
    print(score(gold, preds).render(), end="")
    print(f"Accuracy: {acc:.4f}")
    if args.out:
        args.out.write_text(write_predictions(preds), encoding="utf-8")
    return EXIT_OK


def run_predict(args) -> int:
    model, vocab, max_len = _load_model(args.model)
    _, preds, _, _ = _evaluate_file(model, vocab, _eval_data_path(args), max_len)
    text = write_predictions(preds)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def run_score(args) -> int:
    for path in (args.gold, args.pred):
        if not path.is_file():
            raise FileNotFoundError(f"no such file: {path}")
    print(score_files(args.gold, args.pred), end="")
    return EXIT_OK


def ablation_table(rows: list[tuple[Variant, float, float]]) -> str:
    lines = [f"{'Method':<24}{'F1':>8}{'Chance':>8}"]
    for variant, f1, chance in rows:
        lines.append(f"{variant.display_name:<24}{fmt2(f1):>8}{fmt2(chance):>8}")
    return "\n".join(lines) + "\n"


def run_ablate(args) -> int:
    if args.config is None:
        raise UsageError("ablate needs --config")
    base_cfg, base = _load_config(args)
    if not base_cfg.test_file:
        raise ConfigError("ablate needs test_file in the config")
    rows = []
    for variant in TABLE_ORDER:
        cfg = base_cfg.replace(variant=variant)
        model, _, vocab = _train_variant(cfg, base)
        _, preds, gold, _ = _evaluate_file(model, vocab, _resolve(base, cfg.test_file, "test_file"), cfg.max_len)
        pred_map = dict(preds)
        chance = chance_macro_f1([g for _, g in gold], [pred_map[i] for i, _ in gold])
        rows.append((variant, score(gold, preds).macro_f1, chance))
    table = ablation_table(rows)
    print(table, end="")
    if args.out:
        args.out.write_text(table, encoding="utf-8")
    return EXIT_OK


COMMANDS = {
    "synth": run_synth,
    "train": run_train,
    "eval": run_eval,
    "predict": run_predict,
    "score": run_score,
    "ablate": run_ablate,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"rbert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"rbert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"rbert: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, EncodingError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"rbert: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
