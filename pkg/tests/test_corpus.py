import io
import json
import random

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from disentag.corpus import (
    PAD_ID,
    PAD_TOKEN,
    UNK_ID,
    UNK_TOKEN,
    Batch,
    Corpus,
    FormatError,
    LabelScheme,
    SchemeError,
    Sentence,
    Token,
    Vocabulary,
    build_vocab,
    collate,
    encode_corpus,
    make_batches,
    normalize_char,
    normalize_word,
    parse_conll,
    repair_bio,
    valid_bio_tag,
    write_conll,
)


def tiny_corpus(domain_id: int = 0) -> Corpus:
    scheme = LabelScheme(domain_name="d", entity_types=("LOC", "PER"))
    sents = (
        Sentence(
            tokens=(Token("Anna"), Token("saw"), Token("Paris")),
            label_ids=(scheme.tag_id("B-PER"), 0, scheme.tag_id("B-LOC")),
            domain_id=domain_id,
        ),
        Sentence(
            tokens=(Token("B52"), Token("flew")),
            label_ids=(0, 0),
            domain_id=domain_id,
        ),
    )
    return Corpus(sentences=sents, scheme=scheme, domain_id=domain_id)


class TestNormalization:
    def test_lowercase_and_digit_fold(self):
        assert normalize_word("Abc123") == "abc000"
        assert normalize_word("X") == "x"

    def test_char_fold_keeps_case(self):
        assert normalize_char("A") == "A"
        assert normalize_char("7") == "0"


class TestLabelScheme:
    def test_tag_order_is_o_then_sorted_pairs(self):
        scheme = LabelScheme(domain_name="d", entity_types=("PER", "LOC"))
        assert scheme.tags == ("O", "B-LOC", "I-LOC", "B-PER", "I-PER")
        assert scheme.num_tags == 5

    def test_same_types_same_ids_regardless_of_input_order(self):
        a = LabelScheme(domain_name="a", entity_types=("ORG", "PER"))
        b = LabelScheme(domain_name="b", entity_types=("PER", "ORG"))
        assert a.tags == b.tags

    def test_roundtrip_and_errors(self):
        scheme = LabelScheme(domain_name="d", entity_types=("X",))
        for tid in range(scheme.num_tags):
            assert scheme.tag_id(scheme.tag(tid)) == tid
        with pytest.raises(SchemeError):
            scheme.tag_id("B-Y")
        with pytest.raises(SchemeError):
            scheme.tag(scheme.num_tags)


class TestSentenceInvariants:
    def test_empty_sentence_rejected(self):
        with pytest.raises(FormatError):
            Sentence(tokens=(), label_ids=(), domain_id=0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(FormatError):
            Sentence(tokens=(Token("a"),), label_ids=(0, 0), domain_id=0)

    def test_corpus_rejects_mixed_domains(self):
        scheme = LabelScheme(domain_name="d", entity_types=())
        good = Sentence(tokens=(Token("a"),), label_ids=(0,), domain_id=0)
        bad = Sentence(tokens=(Token("b"),), label_ids=(0,), domain_id=1)
        with pytest.raises(FormatError):
            Corpus(sentences=(good, bad), scheme=scheme, domain_id=0)

    def test_corpus_rejects_out_of_scheme_label(self):
        scheme = LabelScheme(domain_name="d", entity_types=())
        sent = Sentence(tokens=(Token("a"),), label_ids=(3,), domain_id=0)
        with pytest.raises(SchemeError):
            Corpus(sentences=(sent,), scheme=scheme, domain_id=0)


class TestRepairBio:
    def test_orphan_i_becomes_b(self):
        assert repair_bio(["O", "I-PER", "I-PER"]) == ["O", "B-PER", "I-PER"]

    def test_type_switch_becomes_b(self):
        assert repair_bio(["B-LOC", "I-PER"]) == ["B-LOC", "B-PER"]

    def test_consistent_input_unchanged(self):
        tags = ["B-PER", "I-PER", "O", "B-LOC"]
        assert repair_bio(tags) == tags

    def test_invalid_tag_raises(self):
        with pytest.raises(SchemeError):
            repair_bio(["B-PER", "Q-LOC"])

    @given(
        st.lists(
            st.sampled_from(["O", "B-A", "I-A", "B-B", "I-B"]),
            min_size=0,
            max_size=30,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_output_always_consistent_and_idempotent(self, tags):
        fixed = repair_bio(tags)
        prev = None
        for tag in fixed:
            if tag.startswith("I-"):
                assert prev == tag[2:]
            prev = tag[2:] if tag != "O" else None
        assert repair_bio(fixed) == fixed


CONLL_SAMPLE = """\
-DOCSTART- O

Anna B-PER
Marie I-PER
visited O
Berlin B-LOC

cheap O
7z O
"""


class TestParseConll:
    def test_basic_parse(self):
        corpus = parse_conll(
            io.StringIO(CONLL_SAMPLE), domain_id=0, domain_name="news"
        )
        assert len(corpus) == 2
        assert corpus.scheme.entity_types == ("LOC", "PER")
        first = corpus.sentences[0]
        assert [t.surface for t in first.tokens] == [
            "Anna", "Marie", "visited", "Berlin",
        ]
        assert corpus.scheme.tag(first.label_ids[1]) == "I-PER"

    def test_column_selection(self):
        text = "x Anna B-PER\nx ran O\n"
        corpus = parse_conll(
            io.StringIO(text),
            domain_id=0,
            domain_name="d",
            token_column=1,
            label_column=2,
        )
        assert [t.surface for t in corpus.sentences[0].tokens] == ["Anna", "ran"]

    def test_too_few_columns(self):
        with pytest.raises(FormatError):
            parse_conll(
                io.StringIO("lonely\n"),
                domain_id=0,
                domain_name="d",
                label_column=1,
            )

    def test_single_column_default_reads_bad_tag(self):
        with pytest.raises(SchemeError):
            parse_conll(io.StringIO("lonely\n"), domain_id=0, domain_name="d")

    def test_invalid_tag(self):
        with pytest.raises(SchemeError):
            parse_conll(io.StringIO("a Z-PER\n"), domain_id=0, domain_name="d")

    def test_inconsistent_bio_repaired(self):
        corpus = parse_conll(
            io.StringIO("a I-PER\nb I-PER\n"), domain_id=0, domain_name="d"
        )
        tags = [corpus.scheme.tag(t) for t in corpus.sentences[0].label_ids]
        assert tags == ["B-PER", "I-PER"]

    def test_long_sentence_split_prefers_o_boundary(self):
        lines = []
        for i in range(6):
            lines.append(f"w{i} O")
        lines.append("e1 B-PER")
        lines.append("e2 I-PER")
        text = "\n".join(lines) + "\n"
        corpus = parse_conll(
            io.StringIO(text),
            domain_id=0,
            domain_name="d",
            max_sentence_len=7,
        )
        assert [len(s) for s in corpus.sentences] == [6, 2]
        tags = [corpus.scheme.tag(t) for t in corpus.sentences[1].label_ids]
        assert tags == ["B-PER", "I-PER"]

    def test_supplied_scheme_is_used(self):
        scheme = LabelScheme(domain_name="d", entity_types=("LOC", "PER", "ORG"))
        corpus = parse_conll(
            io.StringIO("a B-PER\n"),
            domain_id=0,
            domain_name="d",
            scheme=scheme,
        )
        assert corpus.scheme is scheme

    def test_write_then_parse_roundtrip(self):
        corpus = tiny_corpus()
        buf = io.StringIO()
        write_conll(corpus, buf)
        back = parse_conll(
            io.StringIO(buf.getvalue()), domain_id=0, domain_name="d"
        )
        assert len(back) == len(corpus)
        for a, b in zip(corpus.sentences, back.sentences):
            assert [t.surface for t in a.tokens] == [t.surface for t in b.tokens]
            tags_a = [corpus.scheme.tag(t) for t in a.label_ids]
            tags_b = [back.scheme.tag(t) for t in b.label_ids]
            assert tags_a == tags_b


class TestVocabulary:
    def test_pad_unk_required(self):
        with pytest.raises(FormatError):
            Vocabulary(words=("a", "b"), chars=(PAD_TOKEN, UNK_TOKEN))

    def test_build_vocab_frequency_then_lex_order(self):
        corpus = parse_conll(
            io.StringIO("b O\nb O\na O\nc O\na O\n"),
            domain_id=0,
            domain_name="d",
        )
        vocab = build_vocab([corpus])
        assert vocab.words[:2] == (PAD_TOKEN, UNK_TOKEN)
        assert vocab.words[2:] == ("a", "b", "c")

    def test_min_word_freq_filters(self):
        corpus = parse_conll(
            io.StringIO("a O\na O\nrare O\n"), domain_id=0, domain_name="d"
        )
        vocab = build_vocab([corpus], min_word_freq=2)
        assert "rare" not in vocab.words
        assert vocab.word_id("rare") == UNK_ID

    def test_char_alphabet_contains_lowercase_closure(self):
        corpus = parse_conll(io.StringIO("AB O\n"), domain_id=0, domain_name="d")
        vocab = build_vocab([corpus])
        for ch in ("A", "B", "a", "b"):
            assert ch in vocab.chars

    def test_digit_folding_in_lookup(self):
        corpus = parse_conll(io.StringIO("x1 O\n"), domain_id=0, domain_name="d")
        vocab = build_vocab([corpus])
        assert vocab.word_id("x7") == vocab.word_id("x1")
        assert vocab.char_ids("3") == vocab.char_ids("9")

    def test_unknown_falls_to_unk(self):
        vocab = build_vocab([tiny_corpus()])
        assert vocab.word_id("zzznever") == UNK_ID
        assert UNK_ID in vocab.char_ids("ç")

    def test_save_load_roundtrip(self):
        vocab = build_vocab([tiny_corpus()])
        buf = io.StringIO()
        vocab.save(buf)
        loaded = Vocabulary.load(io.StringIO(buf.getvalue()))
        assert loaded.words == vocab.words
        assert loaded.chars == vocab.chars

    def test_load_rejects_garbage(self):
        with pytest.raises(FormatError):
            Vocabulary.load(io.StringIO("not json"))
        with pytest.raises(FormatError):
            Vocabulary.load(io.StringIO(json.dumps({"words": ["x"]})))


class TestCollate:
    def setup_method(self):
        self.corpus = encode_corpus(tiny_corpus(), build_vocab([tiny_corpus()]))

    def test_requires_encoded(self):
        with pytest.raises(FormatError):
            collate(tiny_corpus().sentences)

    def test_empty_batch_rejected(self):
        with pytest.raises(FormatError):
            collate([])

    def test_shapes_and_mask(self):
        batch = collate(self.corpus.sentences)
        assert batch.size == 2
        assert batch.word_ids.shape == (2, 3)
        assert batch.mask.dtype == torch.bool
        assert batch.mask.tolist() == [[True, True, True], [True, True, False]]
        assert batch.lengths.tolist() == [3, 2]

    def test_padding_is_pad_id(self):
        batch = collate(self.corpus.sentences)
        assert int(batch.word_ids[1, 2]) == PAD_ID
        assert int(batch.label_ids[1, 2]) == PAD_ID
        assert int(batch.char_ids[1, 2].sum()) == PAD_ID

    def test_make_batches_deterministic_and_complete(self):
        batches_a = make_batches(self.corpus, batch_size=1, seed=3)
        batches_b = make_batches(self.corpus, batch_size=1, seed=3)
        assert len(batches_a) == 2
        for a, b in zip(batches_a, batches_b):
            assert torch.equal(a.word_ids, b.word_ids)
        rng = random.Random(3)
        order = [0, 1]
        rng.shuffle(order)
        assert batches_a[0].lengths.tolist()[0] == len(
            self.corpus.sentences[order[0]]
        )

    def test_make_batches_bad_size(self):
        with pytest.raises(ValueError):
            make_batches(self.corpus, batch_size=0, seed=0)
