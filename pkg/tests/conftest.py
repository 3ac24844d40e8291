"""Shared builders for model-level tests."""

import numpy as np

from polyvox.autodiff import SeededRng
from polyvox.batching import assemble, plan_epoch
from polyvox.corpus import CorpusConfig, generate_toy_corpus
from polyvox.decoder import DecoderSpec
from polyvox.encoder import default_encoder_spec
from polyvox.model import ClassifierSpec, ModelConfig, ModelVariant, SynthModel


def tiny_corpus(num_languages=2, n=24, seed=5, max_len=6):
    cfg = CorpusConfig(
        num_languages=num_languages, speakers_per_language=2,
        examples_per_language=n, min_text_len=3, max_text_len=max_len,
        val_per_language=4, test_per_language=4,
    )
    return generate_toy_corpus(cfg, seed=seed)


def tiny_model_config(
    variant="GEN", num_languages=2, num_speakers=4, vocab_size=21,
    embedding_dim=8, channels=8, num_sites=2, kernel=3, dropout=0.0,
    frame_dim=24, prenet_dropout=0.0, rnn=12, attn=10, loc_filters=4,
    loc_kernel=5, d_lang=6, d_spk=4, generator_dim=3, cls_hidden=16,
):
    enc = default_encoder_spec(
        vocab_size=vocab_size, embedding_dim=embedding_dim, channels=channels,
        num_sites=num_sites, kernel=kernel, dropout=dropout,
    )
    dec = DecoderSpec(
        frame_dim=frame_dim, prenet_dim=10, prenet_dropout=prenet_dropout,
        attn_rnn_dim=rnn, dec_rnn_dim=rnn, attn_dim=attn,
        loc_filters=loc_filters, loc_kernel=loc_kernel,
    )
    return ModelConfig(
        variant=ModelVariant.from_tag(variant),
        num_languages=num_languages,
        num_speakers=num_speakers,
        encoder=enc,
        decoder=dec,
        classifier=ClassifierSpec(hidden=cls_hidden),
        d_lang=d_lang,
        d_spk=d_spk,
        generator_dim=generator_dim,
    )


def tiny_model(variant="GEN", seed=3, **kw):
    return SynthModel(tiny_model_config(variant, **kw), SeededRng(seed))


def batch_from(corpus, batch_size=4, seed=0):
    plan = plan_epoch(corpus.split("train"), batch_size, corpus.num_languages, SeededRng(seed))
    return assemble(
        plan.batches[0], corpus.bank.feature_dim, corpus.bank.frames_per_phoneme
    )
