"""Command line interface.

Subcommands: ``train``, ``eval``, ``predict``, ``probe``, and ``gen-data``
(synthetic benchmark materialization). Settings are layered: built-in
defaults, then an INI config file, then ``SSD_<SECTION>_<KEY>`` environment
variables, then repeated ``--set section.key=value`` flags.

Exit codes: 0 on success, 1 on runtime failure (missing data, corrupt
checkpoint, held lock), 2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
from typing import Sequence

from .corpus import (
    Corpus,
    CorpusError,
    parse_conll,
    write_conll,
)
from .disentangler import mi_lower_bound, shuffle_marginals
from .evaluator import domain_probe
from .synthdata import default_spec, generate
from .trainer import (
    MODES,
    CheckpointError,
    MetricsLog,
    TrainingConfig,
    attach_data,
    evaluate,
    init_state,
    load_checkpoint,
    pooled_latents,
    predict_tags,
    save_checkpoint,
    token_latents,
    train,
)

ENV_PREFIX = "SSD_"
CHECKPOINT_NAME = "model.ckpt"
METRICS_NAME = "metrics.ndjson"
LOCK_NAME = "run.lock"


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 2."""


def load_settings(
    config_path: str | None,
    sets: Sequence[str],
    env: dict[str, str],
) -> dict[str, dict[str, str]]:
    """Layer INI file, environment, and --set values into sections."""
    settings: dict[str, dict[str, str]] = {}
    if config_path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(config_path)
        if not read:
            raise UsageError(f"config file not found: {config_path}")
        for section in parser.sections():
            settings[section] = dict(parser[section])
    for name, value in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :]
        if "_" not in rest:
            raise UsageError(f"malformed override variable {name}")
        section, key = rest.split("_", 1)
        settings.setdefault(section.lower(), {})[key.lower()] = value
    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        settings.setdefault(section, {})[key] = value
    return settings


def training_config(settings: dict[str, dict[str, str]]) -> TrainingConfig:
    fields = {f.name: f for f in dataclasses.fields(TrainingConfig)}
    kwargs = {}
    for key, raw in settings.get("train", {}).items():
        if key not in fields:
            raise UsageError(f"unknown train setting {key!r}")
        ftype = fields[key].type
        try:
            if ftype == "int":
                kwargs[key] = int(raw)
            elif ftype == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {raw!r}") from exc
    cfg = TrainingConfig(**kwargs)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _read_corpus(path: str, domain_id: int, domain_name: str, max_len: int, scheme=None) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_conll(
            fh,
            domain_id=domain_id,
            domain_name=domain_name,
            max_sentence_len=max_len,
            scheme=scheme,
        )


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


class RunLock:
    """Exclusive marker file guarding an output directory."""

    def __init__(self, directory: str) -> None:
        self.path = os.path.join(directory, LOCK_NAME)

    def __enter__(self) -> "RunLock":
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory is locked by another run: {self.path}"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc) -> None:
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass


def cmd_train(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, args.set or [], dict(os.environ))
    cfg = training_config(settings)
    mode = args.mode
    if mode != "in_domain" and args.source is None:
        raise UsageError(f"mode {mode!r} requires --source")
    if args.target is None:
        raise UsageError("--target is required")
    os.makedirs(args.out, exist_ok=True)

    corpora: dict[str, Corpus] = {}
    if args.source is not None:
        corpora["source"] = _read_corpus(
            args.source, 0, "source", cfg.max_sentence_len
        )
    corpora["target"] = _read_corpus(args.target, 1, "target", cfg.max_sentence_len)

    from .corpus import build_vocab

    vocab = build_vocab(list(corpora.values()), min_word_freq=cfg.min_word_freq)
    schemes = {key: c.scheme for key, c in corpora.items()}
    state = init_state(mode, cfg, vocab, schemes)
    attach_data(state, corpora)
    metrics = MetricsLog()
    with RunLock(args.out):
        train(state, metrics, iterations=args.iterations)
        save_checkpoint(os.path.join(args.out, CHECKPOINT_NAME), state)
        buf: list[str] = []
        for rec in metrics.records:
            buf.append(json.dumps(rec))
        _atomic_write(os.path.join(args.out, METRICS_NAME), "\n".join(buf) + "\n")
    print(
        json.dumps(
            {
                "checkpoint": os.path.join(args.out, CHECKPOINT_NAME),
                "metrics": os.path.join(args.out, METRICS_NAME),
                "steps": state.counters["global_step"],
            }
        )
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.checkpoint)
    if args.domain not in state.schemes:
        raise UsageError(
            f"domain {args.domain!r} not in checkpoint (has {sorted(state.schemes)})"
        )
    scheme = state.schemes[args.domain]
    corpus = _read_corpus(
        args.data,
        1 if args.domain == "target" else 0,
        scheme.domain_name,
        state.config.max_sentence_len,
        scheme=scheme,
    )
    common = (
        set.intersection(*(set(s.entity_types) for s in state.schemes.values()))
        if len(state.schemes) > 1
        else set()
    )
    scores = evaluate(state.model, corpus, state.vocab, args.domain, common)
    blob = {
        split: dataclasses.asdict(prf) for split, prf in scores.items()
    }
    text = json.dumps(blob, indent=2, sort_keys=True)
    if args.out:
        _atomic_write(args.out, text + "\n")
    print(text)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.checkpoint)
    if args.domain not in state.schemes:
        raise UsageError(
            f"domain {args.domain!r} not in checkpoint (has {sorted(state.schemes)})"
        )
    scheme = state.schemes[args.domain]
    corpus = _read_corpus(
        args.input,
        1 if args.domain == "target" else 0,
        scheme.domain_name,
        state.config.max_sentence_len,
        scheme=scheme,
    )
    tags = predict_tags(state.model, corpus, state.vocab, args.domain)
    lines: list[str] = []
    for sent, sent_tags in zip(corpus.sentences, tags):
        for tok, tag in zip(sent.tokens, sent_tags):
            lines.append(f"{tok.surface}\t{tag}")
        lines.append("")
    text = "\n".join(lines) + "\n"
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_probe(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.checkpoint)
    if not hasattr(state.model, "critics"):
        raise UsageError("probe needs a disentangled checkpoint (ssd mode)")
    if args.source is None or args.target is None:
        raise UsageError("probe needs both --source and --target corpora")
    src = _read_corpus(
        args.source, 0, "source", state.config.max_sentence_len,
        scheme=state.schemes["source"],
    )
    tgt = _read_corpus(
        args.target, 1, "target", state.config.max_sentence_len,
        scheme=state.schemes["target"],
    )
    if len(src) == 0 or len(tgt) == 0:
        raise UsageError("probe needs sentences from both domains")
    z, v, domains = pooled_latents(state.model, [src, tgt], state.vocab)
    tw, tz, tv = token_latents(state.model, [src, tgt], state.vocab)
    pairs = {
        "zv": (state.model.critics["phi_e"], tz, tv),
        "wz": (state.model.critics["phi_z"], tw, tz),
        "wv": (state.model.critics["phi_v"], tw, tv),
    }
    mi = {
        name: mi_lower_bound(
            critic, (a, b), shuffle_marginals(a, b, args.seed)
        ).value
        for name, (critic, a, b) in pairs.items()
    }
    result = {
        "z_accuracy": domain_probe(z, domains, args.seed),
        "v_accuracy": domain_probe(v, domains, args.seed),
        "mi_estimates": mi,
        "sentences": int(domains.shape[0]),
    }
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        _atomic_write(args.out, text + "\n")
    print(text)
    return 0


def cmd_gen_data(args: argparse.Namespace) -> int:
    os.makedirs(args.out, exist_ok=True)
    data = generate(default_spec(args.seed))
    for name, corpus in (
        ("source_train.conll", data.source_train),
        ("target_train.conll", data.target_train),
        ("target_test.conll", data.target_test),
    ):
        path = os.path.join(args.out, name)
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w", encoding="utf-8") as fh:
            write_conll(corpus, fh)
        os.replace(tmp, path)
    print(json.dumps({"out": args.out, "seed": args.seed}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disentag",
        description="Cross-domain sequence labeling with disentangled encoders",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--mode", choices=MODES, default="ssd")
    p_train.add_argument("--config", help="INI config file")
    p_train.add_argument("--source", help="source-domain CoNLL file")
    p_train.add_argument("--target", help="target-domain CoNLL file")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--iterations", type=int, default=None)
    p_train.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on labeled data")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--domain", default="target")
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="tag a CoNLL file")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--input", required=True)
    p_pred.add_argument("--domain", default="target")
    p_pred.add_argument("--out")
    p_pred.set_defaults(func=cmd_predict)

    p_probe = sub.add_parser("probe", help="domain-probe latents of a checkpoint")
    p_probe.add_argument("--checkpoint", required=True)
    p_probe.add_argument("--source", help="source-domain CoNLL file")
    p_probe.add_argument("--target", help="target-domain CoNLL file")
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--out")
    p_probe.set_defaults(func=cmd_probe)

    p_gen = sub.add_parser("gen-data", help="write the synthetic benchmark")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.set_defaults(func=cmd_gen_data)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, CheckpointError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
