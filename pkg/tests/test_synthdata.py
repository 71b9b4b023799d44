import dataclasses

import pytest
from scipy import stats

from disentag.corpus import repair_bio
from disentag.synthdata import (
    SOURCE_DOMAIN_ID,
    TARGET_DOMAIN_ID,
    DomainSpec,
    SyntheticSpec,
    SyntheticSpecError,
    default_spec,
    generate,
    is_slot,
    slot_symbol,
)


def small_spec(**kw) -> SyntheticSpec:
    source = DomainSpec(
        name="s",
        slot_types={"A": "X", "P": "PER"},
        lexicon={"X": (("alpha",),), "PER": (("kim", "lee"),)},
    )
    target = DomainSpec(
        name="t",
        slot_types={"A": "Y", "P": "PER"},
        lexicon={"Y": (("beta",),), "PER": (("kim", "lee"),)},
    )
    fields = dict(
        templates=(("<P>", "met", "near", "<A>", "today"),),
        source=source,
        target=target,
        source_sentences=30,
        target_sentences=30,
        target_test_sentences=10,
        noise_rate=0.0,
        seed=4,
    )
    fields.update(kw)
    return SyntheticSpec(**fields)


class TestSpecValidation:
    def test_template_length_bounds(self):
        with pytest.raises(SyntheticSpecError):
            small_spec(templates=(("a", "b", "<A>"),))
        with pytest.raises(SyntheticSpecError):
            small_spec(templates=(tuple("abcdefghijkl") + ("<A>",),))

    def test_no_templates(self):
        with pytest.raises(SyntheticSpecError):
            small_spec(templates=())

    def test_slot_without_type(self):
        tpl = (("<Q>", "was", "seen", "by", "them"),)
        with pytest.raises(SyntheticSpecError):
            small_spec(templates=tpl)

    def test_slot_without_fillers(self):
        source = DomainSpec(
            name="s", slot_types={"A": "X"}, lexicon={"X": ()}
        )
        with pytest.raises(SyntheticSpecError):
            small_spec(source=source)

    def test_noise_needs_vocabulary(self):
        with pytest.raises(SyntheticSpecError):
            small_spec(noise_rate=0.1, noise_words=())

    def test_counts_positive(self):
        with pytest.raises(SyntheticSpecError):
            small_spec(source_sentences=0)

    def test_filler_shared_across_types_in_domain(self):
        source = DomainSpec(
            name="s",
            slot_types={"A": "X", "P": "PER"},
            lexicon={"X": (("kim", "lee"),), "PER": (("kim", "lee"),)},
        )
        with pytest.raises(SyntheticSpecError):
            small_spec(source=source)

    def test_non_common_filler_leaking_across_domains(self):
        target = DomainSpec(
            name="t",
            slot_types={"A": "Y", "P": "PER"},
            lexicon={"Y": (("alpha",),), "PER": (("kim", "lee"),)},
        )
        with pytest.raises(SyntheticSpecError):
            small_spec(target=target)

    def test_common_type_may_share_fillers(self):
        spec = small_spec()
        assert spec.common_types == {"PER"}


class TestGeneration:
    def test_counts_and_domain_ids(self):
        data = generate(small_spec())
        assert len(data.source_train) == 30
        assert len(data.target_train) == 30
        assert len(data.target_test) == 10
        assert data.source_train.domain_id == SOURCE_DOMAIN_ID
        assert data.target_test.domain_id == TARGET_DOMAIN_ID

    def test_deterministic_in_seed(self):
        a = generate(small_spec())
        b = generate(small_spec())
        for ca, cb in zip(
            (a.source_train, a.target_train, a.target_test),
            (b.source_train, b.target_train, b.target_test),
        ):
            assert len(ca) == len(cb)
            for sa, sb in zip(ca.sentences, cb.sentences):
                assert [t.surface for t in sa.tokens] == [
                    t.surface for t in sb.tokens
                ]
                assert sa.label_ids == sb.label_ids

    def test_different_seed_differs(self):
        a = generate(default_spec(3))
        b = generate(default_spec(4))
        surf = lambda c: [[t.surface for t in s.tokens] for s in c.sentences]
        assert surf(a.source_train) != surf(b.source_train)

    def test_no_noise_matches_template_exactly(self):
        spec = small_spec()
        data = generate(spec)
        tpl = spec.templates[0]
        for sent in data.source_train.sentences:
            toks = [t.surface for t in sent.tokens]
            # every non-slot template word must be present in order
            fixed = [w for w in tpl if not is_slot(w)]
            it = iter(toks)
            assert all(w in it for w in fixed)

    def test_labels_always_bio_consistent(self):
        data = generate(default_spec(3))
        for corpus in (data.source_train, data.target_train, data.target_test):
            for sent in corpus.sentences:
                tags = [corpus.scheme.tag(t) for t in sent.label_ids]
                assert repair_bio(tags) == tags

    def test_multiword_filler_gets_b_i(self):
        data = generate(small_spec())
        seen_bi = False
        for sent in data.source_train.sentences:
            tags = [data.source_train.scheme.tag(t) for t in sent.label_ids]
            if "I-PER" in tags:
                i = tags.index("I-PER")
                assert tags[i - 1] == "B-PER"
                seen_bi = True
        assert seen_bi


class TestDefaultBenchmark:
    def test_shape_of_default(self):
        spec = default_spec(0)
        assert len(spec.templates) == 20
        assert all(5 <= len(t) <= 12 for t in spec.templates)
        assert spec.source.entity_types == ("LAW", "ORG", "PER")
        assert spec.target.entity_types == ("FAC", "PER", "PROD")
        assert spec.common_types == {"PER"}
        assert spec.source_sentences == 2000
        assert spec.target_sentences == 200
        assert spec.target_test_sentences == 500
        assert spec.noise_rate == 0.05

    def test_each_template_has_one_noncommon_slot(self):
        spec = default_spec(0)
        for tpl in spec.templates:
            noncommon = [
                w for w in tpl if is_slot(w) and slot_symbol(w) in ("A", "B")
            ]
            assert len(noncommon) == 1

    def test_noise_rate_observed(self):
        spec = dataclasses.replace(default_spec(0), source_sentences=5000)
        data = generate(spec)
        noise = set(spec.noise_words)
        total = hit = 0
        for sent in data.source_train.sentences:
            for tok in sent.tokens:
                total += 1
                hit += tok.surface in noise
        rate = hit / total
        assert 0.04 < rate < 0.06

    def test_template_distribution_uniform_chi2(self):
        spec = dataclasses.replace(default_spec(0), source_sentences=10000)
        data = generate(spec)
        counts = [0] * len(spec.templates)
        for tid in data.source_template_ids:
            counts[tid] += 1
        result = stats.chisquare(counts)
        assert result.pvalue > 0.01

    def test_template_marginals_shared_across_domains(self):
        spec = dataclasses.replace(
            default_spec(0), source_sentences=4000, target_sentences=4000
        )
        data = generate(spec)
        k = len(spec.templates)
        src = [0] * k
        tgt = [0] * k
        for tid in data.source_template_ids:
            src[tid] += 1
        for tid in data.target_template_ids:
            tgt[tid] += 1
        # same generative distribution: a two-sample chi-square should not reject
        result = stats.chi2_contingency([src, tgt])
        assert result.pvalue > 0.01

    def test_non_common_fillers_disjoint_in_rendered_text(self):
        spec = dataclasses.replace(default_spec(0), noise_rate=0.0)
        data = generate(spec)
        src_only = {
            f[0]
            for t in ("LAW", "ORG")
            for f in spec.source.lexicon[t]
        }
        tgt_only = {
            f[0]
            for t in ("FAC", "PROD")
            for f in spec.target.lexicon[t]
        }
        for sent in data.source_train.sentences:
            assert not {t.surface for t in sent.tokens} & tgt_only
        for sent in data.target_train.sentences:
            assert not {t.surface for t in sent.tokens} & src_only
