"""Training loops, determinism plumbing, metrics, and checkpoints.

Training follows a phase schedule: a pretrain phase (tagging + domain losses),
then ``k_iter`` rounds of [critic phase maximizing the MI bounds over phi
only] followed by [model phase descending the combined objective over theta,
psi, theta_d]. Baselines reuse the model-phase tagging loss only, with a step
budget matching the SSD model-phase total.

Every random draw comes from one torch.Generator owned by the run plus seeds
derived from (config seed, counters), so a checkpointed run resumes
bit-exactly. Checkpoints are a single binary file: magic, version, JSON
header, raw tensor bytes, sha256 trailer.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import time
from dataclasses import dataclass, field
from typing import IO, Iterator

import numpy as np
import torch

from .corpus import (
    Batch,
    Corpus,
    LabelScheme,
    Vocabulary,
    collate,
    encode_corpus,
    make_batches,
)
from .crf import CRFHead, batch_nll
from .disentangler import (
    MIEstimate,
    TokenSamples,
    domain_loss,
    encoder_mi_regularizer,
    reconstruction_loss,
    train_critics,
)
from .evaluator import PRF, entity_breakdown
from .models import (
    BasicTagger,
    DisentangledTagger,
    ModelDims,
    parameter_groups,
)
from .optim import Adam, clip_grad_norm

MODES = ("in_domain", "init_tuning", "multi", "ssd", "ssd_no_mi")

MAGIC = b"DTAG"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint failures."""


class IntegrityError(CheckpointError):
    """Corrupt file: bad magic, truncation, or digest mismatch."""


class IncompatibleError(CheckpointError):
    """Readable file that this code cannot restore (version/shape drift)."""


@dataclass
class TrainingConfig:
    word_dim: int = 100
    char_dim: int = 100
    char_filters: int = 100
    char_window: int = 3
    hidden_dim: int = 100
    num_heads: int = 4
    head_dim: int = 50
    decoder_hidden: int = 200
    critic_hidden: int = 128
    dropout: float = 0.5
    batch_size: int = 64
    learning_rate: float = 1e-3
    critic_learning_rate: float = 1e-3
    k_pretrain: int = 200
    k_critic: int = 50
    k_iter: int = 10
    lambda_r: float = 1.0
    lambda_d: float = 1.0
    lambda_mi: float = 1.0
    grad_clip: float = 5.0
    seed: int = 13
    mi_target: str = "original"
    min_word_freq: int = 1
    max_sentence_len: int = 128

    def validate(self) -> None:
        positive = (
            "word_dim", "char_dim", "char_filters", "hidden_dim", "num_heads",
            "head_dim", "decoder_hidden", "critic_hidden", "batch_size",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.char_window < 1 or self.char_window % 2 == 0:
            raise ValueError("char_window must be odd and positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout outside [0, 1)")
        if self.learning_rate <= 0 or self.critic_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        for name in ("k_pretrain", "k_critic", "k_iter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("lambda_r", "lambda_d", "lambda_mi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.mi_target not in ("original", "reconstructed"):
            raise ValueError("mi_target must be 'original' or 'reconstructed'")
        if self.min_word_freq < 1 or self.max_sentence_len < 1:
            raise ValueError("min_word_freq and max_sentence_len must be positive")

    def dims(self) -> ModelDims:
        return ModelDims(
            word_dim=self.word_dim,
            char_dim=self.char_dim,
            char_filters=self.char_filters,
            char_window=self.char_window,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            head_dim=self.head_dim,
            decoder_hidden=self.decoder_hidden,
            critic_hidden=self.critic_hidden,
            dropout=self.dropout,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, blob: dict) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(blob) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**blob)
        cfg.validate()
        return cfg


class MetricsLog:
    """Append-only stream of per-step scalar records, NDJSON on disk."""

    def __init__(self) -> None:
        self.records: list[dict] = []
        self._t0 = time.monotonic()

    def log(self, step: int, phase: str, name: str, value: float) -> None:
        self.records.append(
            {
                "step": int(step),
                "phase": phase,
                "name": name,
                "value": float(value),
                "wall_ms": (time.monotonic() - self._t0) * 1000.0,
            }
        )

    def save(self, stream: IO[str]) -> None:
        for rec in self.records:
            stream.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, stream: IO[str]) -> "MetricsLog":
        out = cls()
        for line in stream:
            if line.strip():
                out.records.append(json.loads(line))
        return out

    def signature(self) -> list[tuple]:
        """Stream content minus wall-clock, for determinism comparisons."""
        return [
            (r["step"], r["phase"], r["name"], r["value"]) for r in self.records
        ]


class BatchCycler:
    """Endless deterministic batch source with checkpointable position.

    Epoch ``e`` reshuffles with seed ``base_seed + e``; (epoch, cursor) fully
    describe the position.
    """

    def __init__(
        self,
        corpus: Corpus,
        vocab: Vocabulary,
        batch_size: int,
        base_seed: int,
        position: tuple[int, int] = (0, 0),
    ) -> None:
        self.encoded = encode_corpus(corpus, vocab)
        self.batch_size = batch_size
        self.base_seed = base_seed
        self.epoch, self.cursor = position
        self._batches = self._shuffle()

    def _shuffle(self) -> list[Batch]:
        return make_batches(self.encoded, self.batch_size, self.base_seed + self.epoch)

    def next(self) -> Batch:
        if self.cursor >= len(self._batches):
            self.epoch += 1
            self.cursor = 0
            self._batches = self._shuffle()
        batch = self._batches[self.cursor]
        self.cursor += 1
        return batch

    @property
    def position(self) -> tuple[int, int]:
        return (self.epoch, self.cursor)


@dataclass
class TrainState:
    """Everything a run needs to continue: model, optimizers, RNG, position."""

    mode: str
    config: TrainingConfig
    vocab: Vocabulary
    schemes: dict[str, LabelScheme]
    model: torch.nn.Module
    optimizers: dict[str, Adam]
    generator: torch.Generator
    counters: dict = field(default_factory=dict)
    cyclers: dict[str, BatchCycler] = field(default_factory=dict)

    def sync_counters(self) -> None:
        for key, cycler in self.cyclers.items():
            self.counters.setdefault("cyclers", {})[key] = list(cycler.position)


def init_state(
    mode: str,
    config: TrainingConfig,
    vocab: Vocabulary,
    schemes: dict[str, LabelScheme],
) -> TrainState:
    """Build a fresh model and optimizers, seeded from the config."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    config.validate()
    if mode == "in_domain":
        schemes = {"target": schemes["target"]}
    generator = torch.Generator().manual_seed(config.seed)
    dims = config.dims()
    if mode in ("ssd", "ssd_no_mi"):
        model: torch.nn.Module = DisentangledTagger(
            vocab.num_words, vocab.num_chars, dims, schemes, generator
        )
    else:
        model = BasicTagger(vocab.num_words, vocab.num_chars, dims, schemes, generator)
    groups = parameter_groups(model)
    optimizers = {}
    for gname, params in groups.items():
        lr = config.critic_learning_rate if gname == "phi" else config.learning_rate
        optimizers[gname] = Adam(params, lr=lr)
    counters = {
        "global_step": 0,
        "iteration": 0,
        "pretrained": False,
        "baseline_step": 0,
        "cyclers": {},
    }
    return TrainState(
        mode=mode,
        config=config,
        vocab=vocab,
        schemes=schemes,
        model=model,
        optimizers=optimizers,
        generator=generator,
        counters=counters,
    )


def attach_data(state: TrainState, corpora: dict[str, Corpus]) -> None:
    """Create batch cyclers for the given training corpora, resuming any
    checkpointed position."""
    needed = ("target",) if state.mode == "in_domain" else ("source", "target")
    for key in needed:
        if key not in corpora:
            raise ValueError(f"mode {state.mode!r} needs a {key!r} corpus")
    state.cyclers = {}
    for i, key in enumerate(needed):
        position = tuple(state.counters.get("cyclers", {}).get(key, (0, 0)))
        state.cyclers[key] = BatchCycler(
            corpora[key],
            state.vocab,
            state.config.batch_size,
            base_seed=state.config.seed * 7919 + 17 * i,
            position=position,
        )


def _shuffle_seed(state: TrainState) -> int:
    return state.config.seed * 1000003 + state.counters["global_step"]


def _flat_tokens(
    state: TrainState, outs: list
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Unmasked per-token (w, z, v) rows pooled across batches.

    The w rows are either the clean token embeddings (default) or, with
    ``mi_target = "reconstructed"``, the decoder's output for the same
    positions, so the word-side MI terms compare latents against whichever
    quantity the configuration names.
    """
    reconstructed = state.config.mi_target == "reconstructed"
    ws, zs, vs = [], [], []
    for out, mask in outs:
        if reconstructed:
            ws.append(state.model.decoder(out.z, out.v)[mask])
        else:
            ws.append(out.w[mask])
        zs.append(out.z[mask])
        vs.append(out.v[mask])
    return torch.cat(ws), torch.cat(zs), torch.cat(vs)


def _step_model(state: TrainState, loss: torch.Tensor, groups: tuple[str, ...]) -> None:
    for g in groups:
        state.optimizers[g].zero_grad()
    loss.backward()
    params = [
        p
        for g in groups
        for p in state.optimizers[g].params.values()
    ]
    clip_grad_norm(params, state.config.grad_clip)
    for g in groups:
        state.optimizers[g].step()


def pretrain_phase(state: TrainState, metrics: MetricsLog) -> None:
    """k_pretrain steps of tagging loss (plus domain loss for SSD modes)."""
    cfg = state.config
    ssd = state.mode in ("ssd", "ssd_no_mi")
    for _ in range(cfg.k_pretrain):
        step = state.counters["global_step"]
        if state.mode == "in_domain":
            tb = state.cyclers["target"].next()
            nll = state.model.sentence_nll(
                tb, "target", training=True, generator=state.generator
            ).mean()
            loss = nll
            metrics.log(step, "pretrain", "L_y", float(nll.detach()))
            _step_model(state, loss, ("theta",))
        elif state.mode == "multi":
            sb = state.cyclers["source"].next()
            tb = state.cyclers["target"].next()
            nll = (
                state.model.sentence_nll(sb, "source", training=True, generator=state.generator).mean()
                + state.model.sentence_nll(tb, "target", training=True, generator=state.generator).mean()
            )
            metrics.log(step, "pretrain", "L_y", float(nll.detach()))
            _step_model(state, nll, ("theta",))
        else:
            sb = state.cyclers["source"].next()
            tb = state.cyclers["target"].next()
            out_s = state.model.run(sb, "source", training=True, generator=state.generator)
            out_t = state.model.run(tb, "target", training=True, generator=state.generator)
            l_y = (
                batch_nll(state.model.heads["source"], out_s.emissions, sb.label_ids, sb.mask).mean()
                + batch_nll(state.model.heads["target"], out_t.emissions, tb.label_ids, tb.mask).mean()
            )
            probs = torch.cat(
                [
                    state.model.domain_pred(out_s.z, sb.mask),
                    state.model.domain_pred(out_t.z, tb.mask),
                ]
            )
            l_d = domain_loss(probs, torch.cat([sb.domain_ids, tb.domain_ids]))
            loss = l_y + cfg.lambda_d * l_d
            metrics.log(step, "pretrain", "L_y", float(l_y.detach()))
            metrics.log(step, "pretrain", "L_d", float(l_d.detach()))
            _step_model(state, loss, ("theta", "theta_d"))
        state.counters["global_step"] += 1
    state.counters["pretrained"] = True
    state.sync_counters()


def _critic_stream(state: TrainState, steps: int) -> Iterator[TokenSamples]:
    for _ in range(steps):
        sb = state.cyclers["source"].next()
        tb = state.cyclers["target"].next()
        with torch.no_grad():
            outs = [
                (state.model.run(sb, "source", training=False), sb.mask),
                (state.model.run(tb, "target", training=False), tb.mask),
            ]
            w, z, v = _flat_tokens(state, outs)
        yield TokenSamples(w=w, z=z, v=v, seed=_shuffle_seed(state))


def critic_phase(state: TrainState, metrics: MetricsLog) -> dict[str, MIEstimate]:
    """k_critic steps updating only phi; latents are frozen snapshots."""

    def hook(_: int, ests: dict[str, MIEstimate]) -> None:
        step = state.counters["global_step"]
        for name, est in ests.items():
            metrics.log(step, "critic", f"I_{name.split('_')[1]}", est.value)
        state.counters["global_step"] += 1

    last = train_critics(
        dict(state.model.critics),
        _critic_stream(state, state.config.k_critic),
        state.optimizers["phi"],
        hook=hook,
    )
    state.sync_counters()
    return last


def model_phase(state: TrainState, metrics: MetricsLog) -> None:
    """k_pretrain steps on the combined objective, updating theta/psi/theta_d."""
    cfg = state.config
    use_mi = state.mode == "ssd" and cfg.lambda_mi > 0
    for _ in range(cfg.k_pretrain):
        step = state.counters["global_step"]
        sb = state.cyclers["source"].next()
        tb = state.cyclers["target"].next()
        out_s = state.model.run(sb, "source", training=True, generator=state.generator)
        out_t = state.model.run(tb, "target", training=True, generator=state.generator)
        l_y = (
            batch_nll(state.model.heads["source"], out_s.emissions, sb.label_ids, sb.mask).mean()
            + batch_nll(state.model.heads["target"], out_t.emissions, tb.label_ids, tb.mask).mean()
        )
        recon_s = state.model.decoder(out_s.z, out_s.v)
        recon_t = state.model.decoder(out_t.z, out_t.v)
        l_r = 0.5 * (
            reconstruction_loss(recon_s, out_s.w.detach(), sb.mask)
            + reconstruction_loss(recon_t, out_t.w.detach(), tb.mask)
        )
        probs = torch.cat(
            [
                state.model.domain_pred(out_s.z, sb.mask),
                state.model.domain_pred(out_t.z, tb.mask),
            ]
        )
        l_d = domain_loss(probs, torch.cat([sb.domain_ids, tb.domain_ids]))
        loss = l_y + cfg.lambda_r * l_r + cfg.lambda_d * l_d
        metrics.log(step, "model", "L_y", float(l_y.detach()))
        metrics.log(step, "model", "L_r", float(l_r.detach()))
        metrics.log(step, "model", "L_d", float(l_d.detach()))
        if use_mi:
            w, z, v = _flat_tokens(state, [(out_s, sb.mask), (out_t, tb.mask)])
            l_mi = encoder_mi_regularizer(
                dict(state.model.critics), w, z, v, _shuffle_seed(state)
            )
            loss = loss + cfg.lambda_mi * l_mi
            metrics.log(step, "model", "L_mi", float(l_mi.detach()))
        metrics.log(step, "model", "total", float(loss.detach()))
        _step_model(state, loss, ("theta", "psi", "theta_d"))
        state.counters["global_step"] += 1
    state.sync_counters()


def train(state: TrainState, metrics: MetricsLog, iterations: int | None = None) -> None:
    """Drive the phase schedule from the checkpointed position to the target
    iteration count (default: config.k_iter)."""
    if not state.cyclers:
        raise ValueError("attach_data must run before train")
    total = state.config.k_iter if iterations is None else iterations
    if state.mode in ("in_domain", "init_tuning", "multi"):
        _train_baseline(state, metrics, total)
        return
    if not state.counters["pretrained"]:
        pretrain_phase(state, metrics)
    while state.counters["iteration"] < total:
        if state.mode == "ssd" and state.config.lambda_mi > 0 and state.config.k_critic > 0:
            critic_phase(state, metrics)
        model_phase(state, metrics)
        state.counters["iteration"] += 1
        state.sync_counters()


def _reset_target_head(state: TrainState) -> None:
    """Give the target head fresh parameters and cleared optimizer slots, as
    if it had never trained."""
    head = state.model.heads["target"]
    fresh = CRFHead(
        head.proj.weight.shape[1],
        state.schemes["target"].num_tags,
        state.generator,
    )
    with torch.no_grad():
        for (_, p), (_, q) in zip(
            head.named_parameters(), fresh.named_parameters()
        ):
            p.copy_(q)
    opt = state.optimizers["theta"]
    for name in opt.params:
        if name.startswith("heads.target."):
            opt.m[name].zero_()
            opt.v[name].zero_()


def _train_baseline(state: TrainState, metrics: MetricsLog, iterations: int) -> None:
    """Baselines run k_pretrain * (1 + iterations) plain tagging steps, the
    same number of model-parameter updates the SSD schedule performs.

    init_tuning spends the first half of that budget on the source corpus,
    then swaps in a fresh target head and fine-tunes on the target corpus."""
    cfg = state.config
    target_steps = cfg.k_pretrain * (1 + iterations)
    source_steps = (target_steps + 1) // 2
    while state.counters["baseline_step"] < target_steps:
        step = state.counters["global_step"]
        if state.mode == "in_domain":
            tb = state.cyclers["target"].next()
            nll = state.model.sentence_nll(
                tb, "target", training=True, generator=state.generator
            ).mean()
        elif state.mode == "init_tuning":
            if state.counters["baseline_step"] < source_steps:
                sb = state.cyclers["source"].next()
                nll = state.model.sentence_nll(
                    sb, "source", training=True, generator=state.generator
                ).mean()
            else:
                if not state.counters.get("head_reset"):
                    _reset_target_head(state)
                    state.counters["head_reset"] = True
                tb = state.cyclers["target"].next()
                nll = state.model.sentence_nll(
                    tb, "target", training=True, generator=state.generator
                ).mean()
        else:
            sb = state.cyclers["source"].next()
            tb = state.cyclers["target"].next()
            nll = (
                state.model.sentence_nll(sb, "source", training=True, generator=state.generator).mean()
                + state.model.sentence_nll(tb, "target", training=True, generator=state.generator).mean()
            )
        metrics.log(step, "model", "L_y", float(nll.detach()))
        _step_model(state, nll, ("theta",))
        state.counters["global_step"] += 1
        state.counters["baseline_step"] += 1
    state.sync_counters()


def predict_tags(
    model: torch.nn.Module,
    corpus: Corpus,
    vocab: Vocabulary,
    key: str,
    batch_size: int = 64,
) -> list[list[str]]:
    """Viterbi tag strings for every sentence, in corpus order."""
    encoded = encode_corpus(corpus, vocab)
    out: list[list[str]] = []
    with torch.no_grad():
        for start in range(0, len(encoded.sentences), batch_size):
            chunk = encoded.sentences[start : start + batch_size]
            batch = collate(chunk)
            for path in model.decode(batch, key):
                out.append([corpus.scheme.tag(t) for t in path])
    return out


def evaluate(
    model: torch.nn.Module,
    corpus: Corpus,
    vocab: Vocabulary,
    key: str,
    common_types: set[str],
    batch_size: int = 64,
) -> dict[str, PRF]:
    gold = [
        [corpus.scheme.tag(t) for t in sent.label_ids] for sent in corpus.sentences
    ]
    pred = predict_tags(model, corpus, vocab, key, batch_size)
    return entity_breakdown(gold, pred, common_types)


def token_latents(
    model: DisentangledTagger,
    corpora: list[Corpus],
    vocab: Vocabulary,
    batch_size: int = 64,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-token (w, z, v) rows over every real token of the given corpora."""
    ws, zs, vs = [], [], []
    with torch.no_grad():
        for corpus in corpora:
            encoded = encode_corpus(corpus, vocab)
            for start in range(0, len(encoded.sentences), batch_size):
                chunk = encoded.sentences[start : start + batch_size]
                batch = collate(chunk)
                w, z, v = model.encode(batch, training=False)
                ws.append(w[batch.mask])
                zs.append(z[batch.mask])
                vs.append(v[batch.mask])
    return torch.cat(ws), torch.cat(zs), torch.cat(vs)


def pooled_latents(
    model: DisentangledTagger,
    corpora: list[Corpus],
    vocab: Vocabulary,
    batch_size: int = 64,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sentence-level max-pooled (z, v) features plus domain ids."""
    zs, vs, doms = [], [], []
    with torch.no_grad():
        for corpus in corpora:
            encoded = encode_corpus(corpus, vocab)
            for start in range(0, len(encoded.sentences), batch_size):
                chunk = encoded.sentences[start : start + batch_size]
                batch = collate(chunk)
                _, z, v = model.encode(batch, training=False)
                zs.append(model.domain_pred.pooled(z, batch.mask).numpy())
                vs.append(model.domain_pred.pooled(v, batch.mask).numpy())
                doms.append(batch.domain_ids.numpy())
    return (
        np.concatenate(zs).astype(np.float64),
        np.concatenate(vs).astype(np.float64),
        np.concatenate(doms),
    )


# --- checkpoint container ---------------------------------------------------


_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "int64": torch.int64,
    "uint8": torch.uint8,
    "bool": torch.bool,
}


def _collect_tensors(state: TrainState) -> dict[str, torch.Tensor]:
    out: dict[str, torch.Tensor] = {}
    for name, p in state.model.named_parameters():
        out[f"model.{name}"] = p.detach()
    for name, b in state.model.named_buffers():
        out[f"buffer.{name}"] = b.detach()
    for gname, opt in state.optimizers.items():
        for key, t in opt.state_tensors().items():
            out[f"opt.{gname}.{key}"] = t
    out["rng.generator"] = state.generator.get_state()
    return out


def save_checkpoint(path: str, state: TrainState) -> None:
    """Write the whole run state atomically (temp file + rename)."""
    state.sync_counters()
    tensors = _collect_tensors(state)
    manifest = []
    blobs = []
    for name in sorted(tensors):
        t = tensors[name].contiguous().cpu()
        dtype = str(t.dtype).removeprefix("torch.")
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {dtype}")
        raw = t.numpy().tobytes()
        manifest.append({"name": name, "dtype": dtype, "shape": list(t.shape)})
        blobs.append(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "mode": state.mode,
        "config": state.config.to_dict(),
        "vocab": {"words": list(state.vocab.words), "chars": list(state.vocab.chars)},
        "schemes": {
            key: {
                "domain_name": s.domain_name,
                "entity_types": list(s.entity_types),
            }
            for key, s in state.schemes.items()
        },
        "counters": state.counters,
        "optimizer_steps": {g: o.step_count for g, o in state.optimizers.items()},
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    digest = hashlib.sha256()
    payload = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<Q", len(header_bytes)),
        header_bytes,
        *blobs,
    ]
    for part in payload:
        digest.update(part)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        for part in payload:
            fh.write(part)
        fh.write(digest.digest())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> TrainState:
    """Restore a TrainState; training data must be re-attached separately."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 12 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise IntegrityError("not a checkpoint file")
    body, trailer = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise IntegrityError("checksum mismatch")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != FORMAT_VERSION:
        raise IncompatibleError(f"format version {version} != {FORMAT_VERSION}")
    (hlen,) = struct.unpack_from("<Q", body, off)
    off += 8
    try:
        header = json.loads(body[off : off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"bad header: {exc}") from exc
    off += hlen

    config = TrainingConfig.from_dict(header["config"])
    vocab = Vocabulary(
        words=tuple(header["vocab"]["words"]), chars=tuple(header["vocab"]["chars"])
    )
    schemes = {
        key: LabelScheme(
            domain_name=s["domain_name"], entity_types=tuple(s["entity_types"])
        )
        for key, s in header["schemes"].items()
    }
    state = init_state(header["mode"], config, vocab, schemes)
    state.counters = header["counters"]

    tensors: dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        dtype = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * torch.empty((), dtype=dtype).element_size()
        if off + nbytes > len(body):
            raise IntegrityError("truncated tensor section")
        arr = np.frombuffer(
            body, dtype=str(dtype).removeprefix("torch."), count=count, offset=off
        ).copy()
        tensors[entry["name"]] = torch.from_numpy(arr).reshape(shape).to(dtype)
        off += nbytes
    if off != len(body):
        raise IntegrityError("trailing bytes after tensor section")

    model_params = dict(state.model.named_parameters())
    model_buffers = dict(state.model.named_buffers())
    with torch.no_grad():
        for name, p in model_params.items():
            key = f"model.{name}"
            if key not in tensors or tensors[key].shape != p.shape:
                raise IncompatibleError(f"missing or mis-shaped tensor {key}")
            p.copy_(tensors[key])
        for name, b in model_buffers.items():
            key = f"buffer.{name}"
            if key not in tensors:
                raise IncompatibleError(f"missing buffer {key}")
            b.copy_(tensors[key].to(b.dtype))
    for gname, opt in state.optimizers.items():
        prefix = f"opt.{gname}."
        slots = {
            k.removeprefix(prefix): t for k, t in tensors.items() if k.startswith(prefix)
        }
        try:
            opt.load_state_tensors(slots, header["optimizer_steps"][gname])
        except KeyError as exc:
            raise IncompatibleError(f"missing optimizer slots for {gname}") from exc
    state.generator.set_state(tensors["rng.generator"].to(torch.uint8))
    return state
