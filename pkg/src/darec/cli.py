"""Command-line surface and end-to-end phase orchestration.

Subcommands: ingest, vocab, pair, synth, train-source, adapt, finetune, eval,
predict, gradcheck.  Exit codes: 0 ok, 1 gradient-check failure, 2 data error,
3 phase-order/config error, 4 training divergence.  Every error path writes a
single machine-parsable line to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, rebuild_models, require_phase, save_checkpoint
from .config import build_run_config, parse_config_file
from .data import (
    Vocabulary,
    assemble_pair,
    feature_ingest,
    ingest_reviews,
    load_pair,
    save_pair,
)
from .errors import ConfigError, DataError, DarecError, PhaseOrderError, TrainingError
from .evaluate import evaluate_on_target, source_only_eval
from .models import DanVariant, build_models
from .optim import copy_parameters, parameter_checksum
from .synth import load_sealed_labels, synthesize_records, write_synth_files
from .training import adapt_target, finetune_shared, infer, pretrain_source

_EXIT_DATA, _EXIT_CONFIG, _EXIT_TRAINING = 2, 3, 4


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(f"error code={code} kind={kind} message={json.dumps(message)}\n")
    return code


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="darec",
                                description="adversarial cross-domain rating prediction")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--schema", choices=["canonical", "amazon"], default=None)
    p.add_argument("--variant", choices=["ui", "u", "i", "h"], default=None)
    p.add_argument("--modality", choices=["text", "visual"], default=None)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="parse a review file and print corpus statistics")
    sp.add_argument("--input", required=True)

    sp = sub.add_parser("vocab", help="build a vocabulary from review files")
    sp.add_argument("--source", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--min-count", type=int, default=None)

    sp = sub.add_parser("pair", help="assemble an aligned source/target dataset")
    sp.add_argument("--source", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--source-features")
    sp.add_argument("--target-features")

    sub.add_parser("synth", help="generate a synthetic domain pair with sealed labels")

    sp = sub.add_parser("train-source", help="supervised pre-training on the source domain")
    sp.add_argument("--pair", required=True)

    sp = sub.add_parser("adapt", help="adversarial target adaptation")
    sp.add_argument("--pair", required=True)
    sp.add_argument("--ckpt", required=True, help="source-phase checkpoint directory")

    sp = sub.add_parser("finetune", help="shared-object fine-tuning (u/i/h variants)")
    sp.add_argument("--pair", required=True)
    sp.add_argument("--ckpt", required=True, help="adapted-phase checkpoint directory")

    sp = sub.add_parser("eval", help="score target interactions against reference ratings")
    sp.add_argument("--pair", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--sealed", help="sealed label file overriding record ratings")
    sp.add_argument("--split", choices=["train", "valid", "test"], default="test")
    sp.add_argument("--source-only", action="store_true")

    sp = sub.add_parser("predict", help="score one user/item pair")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--user-text", required=True)
    sp.add_argument("--item-text")
    sp.add_argument("--item-features", help="comma-separated floats")

    sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    return p


def _run_config(args) -> "RunConfig":
    from .config import RunConfig  # noqa: F401  (typing aid)

    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {"seed": args.seed, "out": args.out, "schema": args.schema,
                 "variant": args.variant, "modality": args.modality}
    return build_run_config(file_values, overrides)


def _require_file(path, what: str) -> None:
    if not os.path.exists(path):
        raise DataError(f"{what} not found: {path}")


def _load_dataset(cfg, pair_path):
    _require_file(pair_path, "pair dataset")
    dataset = load_pair(pair_path)
    feature_dim = 0
    if dataset.target.features:
        feature_dim = next(iter(dataset.target.features.values())).shape[0]
    return dataset, feature_dim


def _model_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0x30DE]))


# ---------------------------------------------------------------------------
# subcommand implementations


def _cmd_ingest(cfg, args) -> int:
    _require_file(args.input, "review file")
    _, stats = ingest_reviews(args.input, schema=cfg.schema)
    _emit(stats.to_dict())
    return 0


def _cmd_vocab(cfg, args) -> int:
    for path in (args.source, args.target):
        _require_file(path, "review file")
    texts = []
    for path in (args.source, args.target):
        records, _ = ingest_reviews(path, schema=cfg.schema)
        texts.extend(r.review_text for r in records)
    min_count = args.min_count if args.min_count is not None else cfg.min_count
    vocab = Vocabulary.from_texts(texts, min_count=min_count)
    os.makedirs(cfg.out, exist_ok=True)
    out_path = os.path.join(cfg.out, "vocab.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(vocab.to_json(), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    _emit({"vocab_size": len(vocab), "path": out_path})
    return 0


def _cmd_pair(cfg, args) -> int:
    for path in (args.source, args.target):
        _require_file(path, "review file")
    src_records, src_stats = ingest_reviews(args.source, schema=cfg.schema)
    tgt_records, tgt_stats = ingest_reviews(args.target, schema=cfg.schema)
    feats = {}
    for key, path in (("source", args.source_features), ("target", args.target_features)):
        if path:
            _require_file(path, "feature file")
            feats[key] = feature_ingest(path)
    dataset = assemble_pair(src_records, tgt_records, seed=cfg.seed,
                            min_count=cfg.min_count, max_len=cfg.max_len,
                            source_features=feats.get("source"),
                            target_features=feats.get("target"))
    os.makedirs(cfg.out, exist_ok=True)
    pair_path = os.path.join(cfg.out, "pair.json")
    save_pair(dataset, pair_path)
    _emit({"path": pair_path, "vocab_size": len(dataset.vocab),
           "source": src_stats.to_dict(), "target": tgt_stats.to_dict(),
           "shared_users": len(dataset.shared_users),
           "shared_items": len(dataset.shared_items)})
    return 0


def _cmd_synth(cfg, args) -> int:
    res = synthesize_records(cfg.synth_config(), seed=cfg.seed)
    paths = write_synth_files(res, cfg.out)
    _emit(paths)
    return 0


def _cmd_train_source(cfg, args) -> int:
    dataset, feature_dim = _load_dataset(cfg, args.pair)
    variant = DanVariant(cfg.variant)
    model_cfg = cfg.model_config(len(dataset.vocab), feature_dim)
    gen_s, gen_t, head, discs = build_models(model_cfg, variant, _model_rng(cfg.seed))
    report = pretrain_source(gen_s, head, dataset, cfg.train_config(), seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    report.to_csv(os.path.join(cfg.out, "report-source.csv"))
    save_checkpoint(os.path.join(cfg.out, "ckpt-source"), "source", cfg.variant,
                    cfg.modality, model_cfg, dataset.vocab, gen_s, head,
                    gen_t=gen_t, discs=discs, max_len=dataset.max_len)
    _emit({"checkpoint": os.path.join(cfg.out, "ckpt-source"),
           "report": os.path.join(cfg.out, "report-source.csv"),
           "epochs": len(report.rows)})
    return 0


def _cmd_adapt(cfg, args) -> int:
    dataset, _ = _load_dataset(cfg, args.pair)
    ckpt = load_checkpoint(args.ckpt)
    require_phase(ckpt, "source", "adapt")
    gen_s, gen_t, head, discs = rebuild_models(ckpt)
    result = adapt_target(gen_s, gen_t, head, discs["interaction"], dataset,
                          cfg.train_config(), seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    result.report.to_csv(os.path.join(cfg.out, "report-adapt.csv"))
    save_checkpoint(os.path.join(cfg.out, "ckpt-adapted"), "adapted",
                    ckpt.manifest["variant"], ckpt.manifest["modality"],
                    ckpt.model_config(), dataset.vocab, gen_s, head,
                    gen_t=gen_t, discs=discs, max_len=dataset.max_len)
    diag = {
        "probe_start_acc": result.probe_start_acc,
        "heldout_end_acc": result.heldout_end_acc,
        "epochs_run": result.epochs_run,
        "stats_start": json.loads(result.stats_start.to_json()),
        "stats_end": json.loads(result.stats_end.to_json()),
        "source_checksum": parameter_checksum(gen_s.parameters(), head.parameters()),
    }
    with open(os.path.join(cfg.out, "alignment-adapt.json"), "w", encoding="utf-8") as fh:
        json.dump(diag, fh, sort_keys=True)
        fh.write("\n")
    _emit({"checkpoint": os.path.join(cfg.out, "ckpt-adapted"), **diag})
    return 0


def _cmd_finetune(cfg, args) -> int:
    dataset, _ = _load_dataset(cfg, args.pair)
    ckpt = load_checkpoint(args.ckpt)
    require_phase(ckpt, "adapted", "finetune")
    gen_s, gen_t, head, discs = rebuild_models(ckpt)
    variant = DanVariant(ckpt.manifest["variant"])
    if not variant.fine_tune_levels:
        raise ConfigError("variant 'ui' has no shared objects to fine-tune; "
                          "train with --variant u, i, or h")
    result = finetune_shared(gen_s, gen_t, head, discs, dataset,
                             cfg.train_config(), variant, seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    result.report.to_csv(os.path.join(cfg.out, "report-finetune.csv"))
    save_checkpoint(os.path.join(cfg.out, "ckpt-finetuned"), "finetuned",
                    ckpt.manifest["variant"], ckpt.manifest["modality"],
                    ckpt.model_config(), dataset.vocab, gen_s, head,
                    gen_t=gen_t, discs=discs, max_len=dataset.max_len)
    payload = {"checkpoint": os.path.join(cfg.out, "ckpt-finetuned"),
               "acc_before": result.acc_before, "acc_after": result.acc_after}
    with open(os.path.join(cfg.out, "finetune.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")
    _emit(payload)
    return 0


def _cmd_eval(cfg, args) -> int:
    dataset, _ = _load_dataset(cfg, args.pair)
    ckpt = load_checkpoint(args.ckpt)
    gen_s, gen_t, head, _ = rebuild_models(ckpt)
    if args.sealed:
        _require_file(args.sealed, "sealed label file")
        labels = load_sealed_labels(args.sealed)
    else:
        labels = dataset.ratings_map("target")
    if args.source_only:
        result = source_only_eval(gen_s, head, dataset, labels, split=args.split,
                                  seed=cfg.seed, batch_size=cfg.batch_size)
    else:
        require_phase(ckpt, "adapted", "eval of the adapted model")
        result = evaluate_on_target(gen_t, head, dataset, labels, split=args.split,
                                    variant=ckpt.manifest["variant"], seed=cfg.seed,
                                    batch_size=cfg.batch_size)
    print(result.to_json())
    return 0


def _cmd_predict(cfg, args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    gen_s, gen_t, head, _ = rebuild_models(ckpt)
    gen = gen_t if ckpt.phase in ("adapted", "finetuned") else gen_s
    feats = None
    if args.item_features:
        try:
            feats = [float(x) for x in args.item_features.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --item-features: {exc}") from exc
    rating = infer(gen, head, ckpt.vocabulary(), ckpt.manifest["max_len"],
                   args.user_text, item_text=args.item_text, item_features=feats)
    print(f"{rating:.6g}")
    return 0


def _cmd_gradcheck(cfg, args) -> int:
    from .gradcheck import run_gradient_suite

    report = run_gradient_suite(seed=cfg.seed)
    for line in report.lines():
        print(line)
    print(f"{'PASS' if report.passed else 'FAIL'} max_rel_error={report.max_rel_error:.3e}")
    return 0 if report.passed else 1


_COMMANDS = {
    "ingest": _cmd_ingest,
    "vocab": _cmd_vocab,
    "pair": _cmd_pair,
    "synth": _cmd_synth,
    "train-source": _cmd_train_source,
    "adapt": _cmd_adapt,
    "finetune": _cmd_finetune,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _run_config(args)
        return _COMMANDS[args.command](cfg, args)
    except PhaseOrderError as exc:
        return _fail(_EXIT_CONFIG, "phase-order", str(exc))
    except ConfigError as exc:
        return _fail(_EXIT_CONFIG, "config", str(exc))
    except DataError as exc:
        return _fail(_EXIT_DATA, "data", str(exc))
    except TrainingError as exc:
        return _fail(_EXIT_TRAINING, "training", str(exc))
    except DarecError as exc:
        return _fail(_EXIT_CONFIG, "error", str(exc))


if __name__ == "__main__":
    sys.exit(main())
