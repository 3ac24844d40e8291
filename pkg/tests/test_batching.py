"""Batch planning, the interleave property, and regrouping."""

import numpy as np
import pytest

from polyvox.autodiff import ConfigError, ContractError, SeededRng
from polyvox.batching import (
    Batch,
    assemble,
    flatten_groups,
    plan_epoch,
    regroup,
    verify_interleave,
)
from polyvox.corpus import CorpusConfig, generate_toy_corpus


def corpus_for(num_languages=3, n=40, seed=2):
    cfg = CorpusConfig(
        num_languages=num_languages, speakers_per_language=2,
        examples_per_language=n, min_text_len=3, max_text_len=8,
        val_per_language=2, test_per_language=2,
    )
    return generate_toy_corpus(cfg, seed=seed)


def test_verify_interleave_examples():
    assert verify_interleave([0, 1, 0, 1, 0, 1], 2)
    assert not verify_interleave([0, 0, 1, 1, 0, 1], 2)
    assert verify_interleave([0, 0, 0], 1)
    assert not verify_interleave([0, 1, 0], 2)  # not divisible


def test_plan_epoch_balanced_slots():
    corpus = corpus_for()
    plan = plan_epoch(corpus.split("train"), 12, 3, SeededRng(5))
    for batch in plan.batches:
        ids = [u.language_id for u in batch]
        assert verify_interleave(ids, 3)
        for l in range(3):
            assert sum(1 for u in batch if u.language_id == l) == 4


def test_plan_epoch_divisibility_error():
    corpus = corpus_for()
    with pytest.raises(ConfigError):
        plan_epoch(corpus.split("train"), 10, 3, SeededRng(5))


def test_plan_epoch_reproducible():
    corpus = corpus_for()
    a = plan_epoch(corpus.split("train"), 12, 3, SeededRng(5))
    b = plan_epoch(corpus.split("train"), 12, 3, SeededRng(5))
    assert [[u.id for u in batch] for batch in a.batches] == [
        [u.id for u in batch] for batch in b.batches
    ]
    c = plan_epoch(corpus.split("train"), 12, 3, SeededRng(6))
    assert [[u.id for u in batch] for batch in a.batches] != [
        [u.id for u in batch] for batch in c.batches
    ]


def test_plan_epoch_single_language_plain_batching():
    corpus = corpus_for(num_languages=1)
    plan = plan_epoch(corpus.split("train"), 6, 1, SeededRng(1))
    assert all(verify_interleave([u.language_id for u in b], 1) for b in plan.batches)
    used = [u.id for b in plan.batches for u in b] + [u.id for u in plan.dropped]
    assert sorted(used) == sorted(u.id for u in corpus.split("train"))


def test_epoch_coverage_and_balance():
    corpus = corpus_for(num_languages=3, n=41)
    train = corpus.split("train")
    plan = plan_epoch(train, 12, 3, SeededRng(7))
    used = {}
    for batch in plan.batches:
        for u in batch:
            used[u.language_id] = used.get(u.language_id, 0) + 1
    counts = [used[l] for l in range(3)]
    assert max(counts) - min(counts) <= 12 // 3
    assert len(plan.dropped) == len(train) - sum(counts)


def test_thousand_batches_interleaved():
    corpus = corpus_for(num_languages=5, n=44, seed=9)
    seen = 0
    epoch = 0
    while seen < 1000:
        plan = plan_epoch(corpus.split("train"), 50, 5, SeededRng(100 + epoch))
        for batch in plan.batches:
            assert verify_interleave([u.language_id for u in batch], 5)
            seen += 1
            if seen >= 1000:
                break
        epoch += 1


def test_regroup_roundtrip_and_languages():
    corpus = corpus_for()
    plan = plan_epoch(corpus.split("train"), 6, 3, SeededRng(3))
    batch = assemble(plan.batches[0], corpus.bank.feature_dim, 2)
    grouped = regroup(batch.language_ids, 3)
    assert grouped.shape == (2, 3)
    for i in range(2):
        for l in range(3):
            assert grouped[i, l] == l
    np.testing.assert_array_equal(flatten_groups(grouped), batch.language_ids)
    tok = regroup(batch.tokens, 3)
    assert tok.shape == (2, 3, batch.tokens.shape[1])
    np.testing.assert_array_equal(flatten_groups(tok), batch.tokens)


def test_regroup_requires_divisibility():
    with pytest.raises(ContractError):
        regroup(np.zeros((7, 2)), 3)


def test_assemble_masks_and_stop_targets():
    corpus = corpus_for()
    utts = sorted(corpus.split("train"), key=lambda u: len(u.text))[:4]
    batch = assemble(utts, corpus.bank.feature_dim, 2)
    for i, u in enumerate(utts):
        n = u.duration
        t = len(u.text)
        assert batch.token_mask[i, :t].all() and not batch.token_mask[i, t:].any()
        assert batch.frame_mask[i, :n].all() and not batch.frame_mask[i, n:].any()
        np.testing.assert_array_equal(batch.frames[i, :n], u.frames)
        assert batch.frames[i, n:].sum() == 0
        np.testing.assert_array_equal(
            np.nonzero(batch.stop_targets[i])[0], [n - 2, n - 1]
        )
    assert batch.size == 4
