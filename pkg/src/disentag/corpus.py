"""Corpus handling: CoNLL parsing, BIO schemes, vocabularies, and batching.

A corpus is a set of single-domain sentences labeled with BIO tags. Words are
normalized (lowercased, digits folded to '0') before lookup; characters keep
their case but also fold digits. Index 0 is PAD and index 1 is UNK in both
vocabularies.
"""
from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import torch

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class CorpusError(Exception):
    """Base class for corpus-layer failures."""


class FormatError(CorpusError):
    """Malformed input file (wrong column count, bad embedding row, ...)."""


class SchemeError(CorpusError):
    """A tag string that is not O, B-<type> or I-<type>."""


def normalize_word(surface: str) -> str:
    return "".join("0" if ch.isdigit() else ch for ch in surface.lower())


def normalize_char(ch: str) -> str:
    return "0" if ch.isdigit() else ch


@dataclass(frozen=True)
class LabelScheme:
    """BIO tag inventory for one domain's entity types.

    Tag ids are assigned as O=0 then B-/I- pairs for each entity type in
    sorted order, so schemes built from the same type set always agree.
    """

    domain_name: str
    entity_types: tuple[str, ...]

    def __post_init__(self) -> None:
        if tuple(sorted(set(self.entity_types))) != self.entity_types:
            object.__setattr__(
                self, "entity_types", tuple(sorted(set(self.entity_types)))
            )

    @property
    def tags(self) -> tuple[str, ...]:
        out = ["O"]
        for etype in self.entity_types:
            out.append(f"B-{etype}")
            out.append(f"I-{etype}")
        return tuple(out)

    @property
    def num_tags(self) -> int:
        return 1 + 2 * len(self.entity_types)

    def tag_id(self, tag: str) -> int:
        try:
            return self.tags.index(tag)
        except ValueError:
            raise SchemeError(f"tag {tag!r} not in scheme for {self.domain_name}")

    def tag(self, tag_id: int) -> str:
        if not 0 <= tag_id < self.num_tags:
            raise SchemeError(f"tag id {tag_id} out of range")
        return self.tags[tag_id]


@dataclass(frozen=True)
class Token:
    surface: str
    word_id: int | None = None
    char_ids: tuple[int, ...] | None = None


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    label_ids: tuple[int, ...]
    domain_id: int

    def __post_init__(self) -> None:
        if len(self.tokens) == 0:
            raise FormatError("empty sentence")
        if len(self.tokens) != len(self.label_ids):
            raise FormatError("token/label length mismatch")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[Sentence, ...]
    scheme: LabelScheme
    domain_id: int

    def __post_init__(self) -> None:
        for sent in self.sentences:
            if sent.domain_id != self.domain_id:
                raise FormatError("corpus mixes domain ids")
            for lid in sent.label_ids:
                if not 0 <= lid < self.scheme.num_tags:
                    raise SchemeError(f"label id {lid} outside scheme")

    def __len__(self) -> int:
        return len(self.sentences)


def valid_bio_tag(tag: str) -> bool:
    if tag == "O":
        return True
    if len(tag) > 2 and tag[:2] in ("B-", "I-"):
        return True
    return False


def repair_bio(tags: Sequence[str]) -> list[str]:
    """Rewrite any I- tag that does not continue a same-type span as B-.

    The output is always a consistent BIO sequence; consistent input passes
    through unchanged.
    """
    out: list[str] = []
    prev_type: str | None = None
    for tag in tags:
        if not valid_bio_tag(tag):
            raise SchemeError(f"invalid BIO tag {tag!r}")
        if tag.startswith("I-"):
            etype = tag[2:]
            if prev_type != etype:
                tag = "B-" + etype
        out.append(tag)
        prev_type = tag[2:] if tag != "O" else None
    return out


def _split_long(tokens: list[str], tags: list[str], max_len: int) -> list[tuple[list[str], list[str]]]:
    """Split an over-long sentence at the O tag nearest the length cap.

    Falls back to any non-I- boundary, then to a hard cut, so entities are
    kept whole whenever the tagging allows it.
    """
    pieces: list[tuple[list[str], list[str]]] = []
    while len(tokens) > max_len:
        cut = 0
        for j in range(max_len - 1, -1, -1):
            if tags[j] == "O":
                cut = j + 1
                break
        if cut == 0:
            for j in range(max_len, 0, -1):
                if not tags[j].startswith("I-"):
                    cut = j
                    break
        if cut == 0:
            cut = max_len
        pieces.append((tokens[:cut], tags[:cut]))
        tokens, tags = tokens[cut:], tags[cut:]
    if tokens:
        pieces.append((tokens, tags))
    return pieces


def parse_conll(
    stream: IO[str] | Iterable[str],
    *,
    domain_id: int,
    domain_name: str,
    token_column: int = 0,
    label_column: int = -1,
    max_sentence_len: int = 128,
    scheme: LabelScheme | None = None,
) -> Corpus:
    """Read whitespace-separated CoNLL lines into a single-domain Corpus.

    Sentences are blank-line delimited; ``-DOCSTART-`` lines are skipped.
    BIO inconsistencies are repaired, over-long sentences are split, and the
    label scheme is inferred from the observed entity types unless one is
    supplied.
    """
    groups: list[tuple[list[str], list[str]]] = []
    cur_tok: list[str] = []
    cur_tag: list[str] = []

    def flush() -> None:
        if cur_tok:
            groups.append((list(cur_tok), list(cur_tag)))
            cur_tok.clear()
            cur_tag.clear()

    for raw in stream:
        line = raw.rstrip("\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("-DOCSTART-"):
            continue
        cols = line.split()
        try:
            surface = cols[token_column]
            tag = cols[label_column]
        except IndexError:
            raise FormatError(f"line has too few columns: {line!r}")
        if not valid_bio_tag(tag):
            raise SchemeError(f"invalid BIO tag {tag!r} on line {line!r}")
        cur_tok.append(surface)
        cur_tag.append(tag)
    flush()

    repaired = [(toks, repair_bio(tags)) for toks, tags in groups]
    if scheme is None:
        types = sorted({t[2:] for _, tags in repaired for t in tags if t != "O"})
        scheme = LabelScheme(domain_name=domain_name, entity_types=tuple(types))

    sentences: list[Sentence] = []
    for toks, tags in repaired:
        for ptoks, ptags in _split_long(toks, tags, max_sentence_len):
            sentences.append(
                Sentence(
                    tokens=tuple(Token(surface=s) for s in ptoks),
                    label_ids=tuple(scheme.tag_id(t) for t in ptags),
                    domain_id=domain_id,
                )
            )
    return Corpus(sentences=tuple(sentences), scheme=scheme, domain_id=domain_id)


def write_conll(corpus: Corpus, stream: IO[str]) -> None:
    """Write token<TAB>tag lines with blank lines between sentences."""
    for sent in corpus.sentences:
        for tok, lid in zip(sent.tokens, sent.label_ids):
            stream.write(f"{tok.surface}\t{corpus.scheme.tag(lid)}\n")
        stream.write("\n")


@dataclass(frozen=True)
class Vocabulary:
    """Word and character id maps with PAD=0, UNK=1.

    Words are ordered by descending corpus frequency then lexicographically;
    characters lexicographically. Lookup of anything unseen returns UNK.
    """

    words: tuple[str, ...]
    chars: tuple[str, ...]
    word_map: dict[str, int] = field(compare=False, repr=False, default_factory=dict)
    char_map: dict[str, int] = field(compare=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if self.words[:2] != (PAD_TOKEN, UNK_TOKEN) or self.chars[:2] != (
            PAD_TOKEN,
            UNK_TOKEN,
        ):
            raise FormatError("vocabulary must start with PAD, UNK")
        object.__setattr__(self, "word_map", {w: i for i, w in enumerate(self.words)})
        object.__setattr__(self, "char_map", {c: i for i, c in enumerate(self.chars)})

    @property
    def num_words(self) -> int:
        return len(self.words)

    @property
    def num_chars(self) -> int:
        return len(self.chars)

    def word_id(self, surface: str) -> int:
        return self.word_map.get(normalize_word(surface), UNK_ID)

    def char_ids(self, surface: str) -> tuple[int, ...]:
        return tuple(
            self.char_map.get(normalize_char(ch), UNK_ID) for ch in surface
        )

    def save(self, stream: IO[str]) -> None:
        json.dump({"words": list(self.words), "chars": list(self.chars)}, stream)

    @classmethod
    def load(cls, stream: IO[str]) -> "Vocabulary":
        try:
            blob = json.load(stream)
            return cls(words=tuple(blob["words"]), chars=tuple(blob["chars"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"bad vocabulary file: {exc}") from exc


def build_vocab(corpora: Sequence[Corpus], *, min_word_freq: int = 1) -> Vocabulary:
    """Build joint vocabularies over all given corpora.

    The character alphabet contains every observed (digit-folded) character
    plus its lowercase form, so case variants of known letters never fall to
    UNK.
    """
    freq: Counter[str] = Counter()
    chars: set[str] = set()
    for corpus in corpora:
        for sent in corpus.sentences:
            for tok in sent.tokens:
                freq[normalize_word(tok.surface)] += 1
                for ch in tok.surface:
                    folded = normalize_char(ch)
                    chars.add(folded)
                    chars.add(folded.lower())
    kept = sorted(
        (w for w, c in freq.items() if c >= min_word_freq),
        key=lambda w: (-freq[w], w),
    )
    return Vocabulary(
        words=(PAD_TOKEN, UNK_TOKEN, *kept),
        chars=(PAD_TOKEN, UNK_TOKEN, *sorted(chars)),
    )


def encode_corpus(corpus: Corpus, vocab: Vocabulary) -> Corpus:
    """Return a copy of the corpus with word and char ids filled in."""
    sentences = []
    for sent in corpus.sentences:
        tokens = tuple(
            Token(
                surface=tok.surface,
                word_id=vocab.word_id(tok.surface),
                char_ids=vocab.char_ids(tok.surface),
            )
            for tok in sent.tokens
        )
        sentences.append(
            Sentence(tokens=tokens, label_ids=sent.label_ids, domain_id=sent.domain_id)
        )
    return Corpus(sentences=tuple(sentences), scheme=corpus.scheme, domain_id=corpus.domain_id)


@dataclass
class Batch:
    """Padded id grids for a batch of encoded sentences.

    Padded positions hold PAD ids (0) everywhere; ``mask`` marks real tokens.
    """

    word_ids: torch.Tensor    # (B, L) long
    char_ids: torch.Tensor    # (B, L, J) long
    label_ids: torch.Tensor   # (B, L) long
    mask: torch.Tensor        # (B, L) bool
    domain_ids: torch.Tensor  # (B,) long
    lengths: torch.Tensor     # (B,) long

    @property
    def size(self) -> int:
        return int(self.word_ids.shape[0])


def collate(sentences: Sequence[Sentence]) -> Batch:
    if not sentences:
        raise FormatError("cannot collate an empty batch")
    bsz = len(sentences)
    max_len = max(len(s) for s in sentences)
    max_chars = 1
    for sent in sentences:
        for tok in sent.tokens:
            if tok.word_id is None or tok.char_ids is None:
                raise FormatError("collate requires encoded sentences")
            max_chars = max(max_chars, len(tok.char_ids))
    word_ids = torch.full((bsz, max_len), PAD_ID, dtype=torch.long)
    char_ids = torch.full((bsz, max_len, max_chars), PAD_ID, dtype=torch.long)
    label_ids = torch.full((bsz, max_len), PAD_ID, dtype=torch.long)
    mask = torch.zeros(bsz, max_len, dtype=torch.bool)
    domain_ids = torch.zeros(bsz, dtype=torch.long)
    lengths = torch.zeros(bsz, dtype=torch.long)
    for i, sent in enumerate(sentences):
        L = len(sent)
        lengths[i] = L
        domain_ids[i] = sent.domain_id
        mask[i, :L] = True
        word_ids[i, :L] = torch.tensor([t.word_id for t in sent.tokens])
        label_ids[i, :L] = torch.tensor(sent.label_ids)
        for j, tok in enumerate(sent.tokens):
            if tok.char_ids:
                char_ids[i, j, : len(tok.char_ids)] = torch.tensor(tok.char_ids)
    return Batch(
        word_ids=word_ids,
        char_ids=char_ids,
        label_ids=label_ids,
        mask=mask,
        domain_ids=domain_ids,
        lengths=lengths,
    )


def make_batches(corpus: Corpus, batch_size: int, seed: int) -> list[Batch]:
    """Shuffle sentences with a dedicated RNG and collate fixed-size chunks."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = list(range(len(corpus.sentences)))
    random.Random(seed).shuffle(order)
    out = []
    for start in range(0, len(order), batch_size):
        chunk = [corpus.sentences[i] for i in order[start : start + batch_size]]
        out.append(collate(chunk))
    return out
