"""Synthetic two-domain corpus generation.

Both domains draw sentences from the same template pool (the shared,
transferable structure); each template slot is realized from the domain's own
lexicon (the domain-specific content). Slot symbols are type-agnostic: each
domain maps a slot symbol to one of its entity types, or to a small set of
types from which the sampler picks per sentence, so the two domains can
disagree on most types while sharing one.

The default benchmark uses slots P (PER in both domains), A (LAW in the
source, FAC in the target), B (ORG in the source, PROD in the target) and the
mixed slot Q (PER or LAW in the source, PER or FAC in the target). The PER
lexicon is one shared list, so person mentions carry no domain signal; the
non-common lexicons are disjoint across domains, and every template contains
exactly one A-or-B slot. Each sentence therefore reveals its domain through
at least one slot realization while the rest of its surface is
domain-neutral. The Q slot makes the tag depend on the filler rather than
the context: half the person inventory is single-token, so an unfamiliar
single token in a Q slot cannot be typed without lexical knowledge.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import Corpus, LabelScheme, Sentence, Token

SLOT_PREFIX = "<"
SLOT_SUFFIX = ">"


class SyntheticSpecError(ValueError):
    """Spec validation failure (unfillable slot, bad sizes, ...)."""


def is_slot(item: str) -> bool:
    return item.startswith(SLOT_PREFIX) and item.endswith(SLOT_SUFFIX)


def slot_symbol(item: str) -> str:
    return item[len(SLOT_PREFIX) : -len(SLOT_SUFFIX)]


Filler = tuple[str, ...]
Lexicon = dict[str, tuple[Filler, ...]]


@dataclass(frozen=True)
class DomainSpec:
    name: str
    # slot symbol -> entity type, or tuple of candidate types sampled per use
    slot_types: dict[str, str | tuple[str, ...]]
    lexicon: Lexicon            # entity type -> filler phrases

    def slot_choices(self, symbol: str) -> tuple[str, ...]:
        value = self.slot_types.get(symbol)
        if value is None:
            return ()
        return (value,) if isinstance(value, str) else tuple(value)

    @property
    def entity_types(self) -> tuple[str, ...]:
        return tuple(sorted(self.lexicon))


@dataclass(frozen=True)
class SyntheticSpec:
    templates: tuple[tuple[str, ...], ...]
    source: DomainSpec
    target: DomainSpec
    source_sentences: int = 2000
    target_sentences: int = 200
    target_test_sentences: int = 500
    noise_rate: float = 0.05
    noise_words: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.templates:
            raise SyntheticSpecError("no templates")
        for tpl in self.templates:
            if not 5 <= len(tpl) <= 12:
                raise SyntheticSpecError(
                    f"template length {len(tpl)} outside [5, 12]: {tpl!r}"
                )
        if not 0.0 <= self.noise_rate < 1.0:
            raise SyntheticSpecError("noise_rate outside [0, 1)")
        if self.noise_rate > 0.0 and not self.noise_words:
            raise SyntheticSpecError("noise requires a noise vocabulary")
        if min(self.source_sentences, self.target_sentences, self.target_test_sentences) < 1:
            raise SyntheticSpecError("sentence counts must be positive")
        for domain in (self.source, self.target):
            for tpl in self.templates:
                for item in tpl:
                    if not is_slot(item):
                        continue
                    sym = slot_symbol(item)
                    choices = domain.slot_choices(sym)
                    if not choices:
                        raise SyntheticSpecError(
                            f"slot {sym!r} has no entity type in domain {domain.name!r}"
                        )
                    for etype in choices:
                        if not domain.lexicon.get(etype):
                            raise SyntheticSpecError(
                                f"no fillers for type {etype!r} in domain {domain.name!r}"
                            )

        self._check_disjoint()

    def _check_disjoint(self) -> None:
        """Fillers of a non-common type must not appear anywhere in the other
        domain, and no two types within a domain may share a filler."""
        common = set(self.source.entity_types) & set(self.target.entity_types)
        for domain in (self.source, self.target):
            seen: dict[Filler, str] = {}
            for etype in domain.entity_types:
                for filler in domain.lexicon[etype]:
                    if filler in seen and seen[filler] != etype:
                        raise SyntheticSpecError(
                            f"filler {filler!r} used by both {seen[filler]!r} "
                            f"and {etype!r} in domain {domain.name!r}"
                        )
                    seen[filler] = etype
        for near, far in (
            (self.source, self.target),
            (self.target, self.source),
        ):
            far_fillers = {
                filler for etype in far.entity_types for filler in far.lexicon[etype]
            }
            for etype in near.entity_types:
                if etype in common:
                    continue
                clash = set(near.lexicon[etype]) & far_fillers
                if clash:
                    raise SyntheticSpecError(
                        f"non-common type {etype!r} of domain {near.name!r} shares "
                        f"fillers with domain {far.name!r}: {sorted(clash)[:3]!r}"
                    )

    @property
    def common_types(self) -> set[str]:
        return set(self.source.entity_types) & set(self.target.entity_types)


def _render(
    template: tuple[str, ...],
    domain: DomainSpec,
    rng: random.Random,
    noise_rate: float,
    noise_words: tuple[str, ...],
) -> tuple[list[str], list[str]]:
    tokens: list[str] = []
    tags: list[str] = []
    for item in template:
        if is_slot(item):
            choices = domain.slot_choices(slot_symbol(item))
            etype = choices[0] if len(choices) == 1 else rng.choice(choices)
            filler = rng.choice(domain.lexicon[etype])
            for k, word in enumerate(filler):
                tokens.append(word)
                tags.append(("B-" if k == 0 else "I-") + etype)
        else:
            tokens.append(item)
            tags.append("O")
    if noise_rate > 0.0:
        for i in range(len(tokens)):
            if rng.random() < noise_rate:
                tokens[i] = rng.choice(noise_words)
    return tokens, tags


def _sample_domain(
    spec: SyntheticSpec,
    domain: DomainSpec,
    domain_id: int,
    count: int,
    seed: int,
) -> tuple[Corpus, list[int]]:
    rng = random.Random(seed)
    scheme = LabelScheme(domain_name=domain.name, entity_types=domain.entity_types)
    sentences: list[Sentence] = []
    template_ids: list[int] = []
    for _ in range(count):
        tid = rng.randrange(len(spec.templates))
        tokens, tags = _render(
            spec.templates[tid], domain, rng, spec.noise_rate, spec.noise_words
        )
        template_ids.append(tid)
        sentences.append(
            Sentence(
                tokens=tuple(Token(surface=t) for t in tokens),
                label_ids=tuple(scheme.tag_id(t) for t in tags),
                domain_id=domain_id,
            )
        )
    return (
        Corpus(sentences=tuple(sentences), scheme=scheme, domain_id=domain_id),
        template_ids,
    )


@dataclass(frozen=True)
class GeneratedData:
    source_train: Corpus
    target_train: Corpus
    target_test: Corpus
    source_template_ids: tuple[int, ...] = field(repr=False, default=())
    target_template_ids: tuple[int, ...] = field(repr=False, default=())


SOURCE_DOMAIN_ID = 0
TARGET_DOMAIN_ID = 1


def generate(spec: SyntheticSpec) -> GeneratedData:
    """Sample the three splits; fully determined by spec.seed."""
    src, src_tids = _sample_domain(
        spec, spec.source, SOURCE_DOMAIN_ID, spec.source_sentences, spec.seed * 1000 + 1
    )
    tgt, tgt_tids = _sample_domain(
        spec, spec.target, TARGET_DOMAIN_ID, spec.target_sentences, spec.seed * 1000 + 2
    )
    test, _ = _sample_domain(
        spec,
        spec.target,
        TARGET_DOMAIN_ID,
        spec.target_test_sentences,
        spec.seed * 1000 + 3,
    )
    return GeneratedData(
        source_train=src,
        target_train=tgt,
        target_test=test,
        source_template_ids=tuple(src_tids),
        target_template_ids=tuple(tgt_tids),
    )


TEMPLATES: tuple[tuple[str, ...], ...] = (
    ("<P>", "visited", "<A>", "on", "monday"),
    ("officials", "said", "<A>", "would", "replace", "<Q>", "next", "year"),
    ("the", "report", "on", "<A>", "was", "released", "by", "<P>"),
    ("<P>", "and", "<P>", "discussed", "the", "future", "of", "<A>"),
    ("critics", "argued", "that", "<B>", "had", "failed", "unlike", "<Q>"),
    ("<B>", "was", "announced", "during", "a", "meeting", "with", "<P>"),
    ("workers", "at", "<A>", "protested", "after", "<Q>", "was", "criticized"),
    ("<P>", "described", "<B>", "as", "a", "major", "step"),
    ("the", "committee", "reviewed", "<A>", "and", "<Q>", "before", "the", "vote"),
    ("supporters", "of", "<P>", "gathered", "near", "<A>"),
    ("<A>", "remained", "closed", "while", "<P>", "negotiated"),
    ("analysts", "expect", "<B>", "to", "outperform", "<Q>", "this", "spring"),
    ("<P>", "warned", "that", "<A>", "could", "face", "delays"),
    ("a", "spokesman", "for", "<B>", "mentioned", "<Q>", "briefly"),
    ("the", "mayor", "praised", "<P>", "for", "supporting", "<B>"),
    ("residents", "near", "<A>", "complained", "about", "<Q>", "repeatedly"),
    ("<B>", "and", "<P>", "were", "mentioned", "in", "the", "briefing"),
    ("the", "debate", "over", "<A>", "turned", "to", "<Q>", "after", "midnight"),
    ("<P>", "thanked", "everyone", "involved", "with", "<B>"),
    ("plans", "for", "<A>", "were", "drafted", "by", "<P>", "last", "fall"),
)

_PER_NAMES: tuple[Filler, ...] = (
    ("john", "smith"), ("mary", "johnson"), ("robert", "brown"),
    ("susan", "davis"), ("james", "wilson"), ("linda", "moore"),
    ("david", "taylor"), ("karen", "thomas"), ("paul", "jackson"),
    ("laura", "white"), ("mark", "harris"), ("nancy", "martin"),
    ("amira", "haddad"), ("kenji", "tanaka"), ("lucia", "moretti"),
    ("omar", "farouk"), ("ingrid", "larsen"), ("mateo", "silva"),
    ("priya", "sharma"), ("dmitri", "volkov"), ("aisha", "bello"),
    ("tomas", "novak"), ("freya", "lindqvist"), ("rafael", "ortiz"),
    ("hana", "kimura"), ("niklas", "weber"), ("zara", "hussain"),
    ("pablo", "reyes"), ("mei", "chen"), ("anton", "petrov"),
    ("obrien",), ("fitzgerald",), ("yamamoto",), ("duarte",),
    ("okonkwo",), ("svensson",), ("marchetti",), ("delacroix",),
    ("bergstrom",), ("castellano",), ("dvorak",), ("eriksen",),
    ("fontana",), ("grigoriev",), ("hakimi",), ("ivanova",),
    ("jankowski",), ("kaminski",), ("laurent",), ("mbeki",),
    ("nakashima",), ("oliveira",), ("pavlov",), ("quintero",),
    ("rahimi",), ("sorensen",), ("takahashi",), ("ungaro",),
    ("villanueva",), ("wozniak",),
)

_SOURCE_LAW: tuple[Filler, ...] = (
    ("sherman",), ("volstead",), ("hatch",), ("wagner",), ("taft",),
    ("glass",), ("dodd",), ("mann",), ("smoot",), ("logan",),
    ("jones",), ("norris",), ("tydings",), ("wheeler",), ("brady",),
    ("hobbs",), ("clayton",), ("volcker",), ("durbin",), ("bayh",),
    ("lanham",), ("pendleton",), ("bland",), ("erdman",), ("comstock",),
    ("edmunds",), ("dingley",), ("walsh",), ("borah",), ("garner",),
    ("rayburn",), ("vinson",), ("barkley",), ("capper",), ("steagall",),
    ("celler",), ("fulbright",), ("lugar",), ("sarbanes",), ("oxley",),
    ("leahy",), ("grassley",), ("thurmond",), ("magnuson",), ("proxmire",),
    ("ribicoff",), ("stafford",), ("symington",), ("talmadge",),
    ("vandenberg",), ("wherry",), ("yarborough",), ("zablocki",),
    ("mondale",), ("bricker",), ("knowland",), ("kefauver",),
    ("sparkman",), ("aldrich",), ("gorman",),
)

_SOURCE_ORG: tuple[Filler, ...] = (
    ("acme",), ("globex",), ("initech",), ("vandelay",), ("umbrella",),
    ("stark",), ("wayne",), ("tyrell",), ("cyberdyne",), ("weyland",),
    ("oscorp",), ("massive",), ("hooli",), ("aperture",), ("wonka",),
    ("dunder",), ("sterling",), ("bluth",), ("prestige",), ("gekko",),
    ("soylent",), ("monarch",), ("zorin",), ("virtucon",), ("axiom",),
    ("helix",), ("ludlow",), ("crane",), ("foster",), ("pierce",),
    ("keller",), ("marsh",), ("redwood",), ("truman",), ("calloway",),
    ("sentinel",), ("zenix",), ("veridian",), ("altona",), ("corvex",),
    ("draxler",), ("ebonix",), ("fathom",), ("gridley",), ("halcyon",),
    ("jorvik",), ("kestrel",), ("lumina",), ("maddox",), ("octera",),
    ("pallas",), ("quorra",), ("rendel",), ("synthex",), ("tarkin",),
    ("wexford",), ("novara",), ("ulmer",), ("vantage",), ("bromley",),
)

_TARGET_FAC: tuple[Filler, ...] = (
    ("riverside",), ("harborview",), ("middleton",), ("libertygate",),
    ("sunset",), ("granite",), ("mapleton",), ("crescent",), ("summit",),
    ("willowbrook",), ("beacon",), ("cedarfall",), ("quarry",),
    ("fountain",), ("ironwood",), ("lakeside",), ("redstone",),
    ("meadowbank",), ("falconridge",), ("copperfield",), ("juniper",),
    ("basalt",), ("windmere",), ("alderley",), ("cobalt",), ("harrow",),
    ("lindenwood",), ("pinecrest",), ("slatemoor",), ("thornhill",),
    ("veranda",), ("milburn",), ("westgate",), ("northyard",),
    ("stonebridge",), ("eastdock",), ("oakhurst",), ("brampton",),
    ("clearwater",), ("dunmore",), ("elkford",), ("fernhill",),
    ("glenrose",), ("hartwell",), ("inglewood",), ("jadewater",),
    ("kingsmill",), ("larkspur",), ("mosswood",), ("newhaven",),
    ("oldbridge",), ("pembroke",), ("rosemont",), ("shadwell",),
    ("tamarack",), ("underhill",), ("wheatfield",), ("yellowpine",),
    ("ashgrove",), ("birchmount",),
)

_TARGET_PROD: tuple[Filler, ...] = (
    ("nimbus",), ("zephyr",), ("quantum",), ("auroral",), ("vortex",),
    ("titanix",), ("solaris",), ("falconwing",), ("cometa",), ("orbit",),
    ("glacier",), ("emberline",), ("breeze",), ("atlasco",), ("pulse",),
    ("novaline",), ("driftware",), ("sparkly",), ("lumen",), ("cinder",),
    ("arbor",), ("cresta",), ("dynamo",), ("fable",), ("galeforce",),
    ("havenly",), ("ionix",), ("joltpack",), ("karmatek",), ("lyric",),
    ("mirage",), ("onyx",), ("skystream",), ("hoverpad",), ("medley",),
    ("tracer",), ("aeroflux",), ("brightcore",), ("cascadia",),
    ("dewpoint",), ("echoline",), ("flintlock",), ("gustwave",),
    ("heliox",), ("iridia",), ("jetstream",), ("kiloline",), ("lunaris",),
    ("microbeam",), ("nightglide",), ("oscilla",), ("polarcap",),
    ("quickstep",), ("rimline",), ("sunspool",), ("turbina",),
    ("ultrarez",), ("vaporline",), ("wavecrest",), ("zenmode",),
)

_NOISE_WORDS: tuple[str, ...] = (
    "perhaps", "quietly", "again", "reportedly", "mostly", "suddenly",
    "nearby", "often", "barely", "instead", "anyway", "meanwhile",
    "yesterday", "tomorrow", "overnight", "elsewhere", "2019", "7",
    "No4", "qx3",
)


def default_spec(seed: int = 0) -> SyntheticSpec:
    """The pinned benchmark: 20 shared templates, a shared PER lexicon,
    disjoint non-common lexicons, 5% noise."""
    source = DomainSpec(
        name="news",
        slot_types={"P": "PER", "A": "LAW", "B": "ORG", "Q": ("PER", "LAW")},
        lexicon={"PER": _PER_NAMES, "LAW": _SOURCE_LAW, "ORG": _SOURCE_ORG},
    )
    target = DomainSpec(
        name="consumer",
        slot_types={"P": "PER", "A": "FAC", "B": "PROD", "Q": ("PER", "FAC")},
        lexicon={"PER": _PER_NAMES, "FAC": _TARGET_FAC, "PROD": _TARGET_PROD},
    )
    return SyntheticSpec(
        templates=TEMPLATES,
        source=source,
        target=target,
        source_sentences=2000,
        target_sentences=200,
        target_test_sentences=500,
        noise_rate=0.05,
        noise_words=_NOISE_WORDS,
        seed=seed,
    )
