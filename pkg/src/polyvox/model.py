"""The four model variants over one attention decoder.

  GEN  per-language encoder parameters emitted by the generator network,
       adversarial speaker classifier available;
  SHA  one shared encoder; language identity enters only through an
       utterance-level language embedding concatenated to the memory;
  SEP  per-language owned encoder parameters, no generator, no classifier;
  SGL  SHA with a single language and no language embedding.

All variants share token embedding, projection, attention, decoder, and
speaker embedding. Memory = encoder output ++ speaker embedding
(++ language embedding for SHA), broadcast over time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import (
    BatchNormState,
    ConfigError,
    ContractError,
    SeededRng,
    Tensor,
)
from .batching import Batch, verify_interleave
from .decoder import (
    DecoderSpec,
    InferResult,
    decode_teacher_forced,
    guided_attention_loss,
    infer,
)
from .encoder import EncoderSpec, GeneratedParams, ParameterGenerator

VARIANT_TAGS = ("GEN", "SHA", "SEP", "SGL")


@dataclass(frozen=True)
class ModelVariant:
    tag: str
    uses_generator: bool
    encoders_per_language: bool
    uses_language_embedding_concat: bool
    uses_adversarial_classifier: bool

    @staticmethod
    def from_tag(tag: str) -> "ModelVariant":
        table = {
            "GEN": ModelVariant("GEN", True, True, False, True),
            "SHA": ModelVariant("SHA", False, False, True, True),
            "SEP": ModelVariant("SEP", False, True, False, False),
            "SGL": ModelVariant("SGL", False, False, False, False),
        }
        if tag not in table:
            raise ConfigError(f"unknown model variant {tag!r}; choose from {VARIANT_TAGS}")
        return table[tag]


@dataclass
class ClassifierSpec:
    hidden: int = 256
    reversal_lambda: float = 1.0
    grad_clamp: float = 0.25
    # loss weights: the training config picks 0.125 (GEN) / 0.5 (SHA)


@dataclass
class ModelConfig:
    variant: ModelVariant
    num_languages: int
    num_speakers: int
    encoder: EncoderSpec
    decoder: DecoderSpec
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    d_lang: int = 10
    d_spk: int = 32
    generator_dim: int = 8
    sha_lang_dim: int = 4

    def validate(self):
        if self.num_languages < 1 or self.num_speakers < 1:
            raise ConfigError("model: need >= 1 language and speaker")
        if self.variant.tag == "SGL" and self.num_languages != 1:
            raise ConfigError("model: SGL requires exactly one language")
        if self.variant.uses_generator and self.generator_dim < 1:
            raise ConfigError("model: generator_dim must be >= 1")

    @property
    def memory_dim(self) -> int:
        m = self.encoder.output_dim + self.d_spk
        if self.variant.uses_language_embedding_concat:
            m += self.sha_lang_dim
        return m


def _xavier(rng: SeededRng, shape) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -lim, lim)


class SynthModel:
    """Parameter container plus the forward paths of one variant."""

    def __init__(self, cfg: ModelConfig, rng: SeededRng):
        cfg.validate()
        self.cfg = cfg
        self.variant = cfg.variant
        self.params: dict[str, Tensor] = {}
        self.bn_states: dict[int, BatchNormState] = {}
        self.generator: ParameterGenerator | None = None
        self._init_params(rng)

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    def _p(self, name: str, arr: np.ndarray) -> Tensor:
        t = Tensor(arr, requires_grad=True)
        self.params[name] = t
        return t

    def _init_params(self, rng: SeededRng):
        cfg = self.cfg
        enc, dec = cfg.encoder, cfg.decoder
        L = cfg.num_languages
        self._p("embedding", rng.child("emb").normal((enc.vocab_size, enc.embedding_dim), 0.3))

        if self.variant.uses_generator:
            self._p("lang_emb", rng.child("lang").normal((L, cfg.d_lang), 1.0))
            self.generator = ParameterGenerator(
                enc.sites, cfg.d_lang, cfg.generator_dim, self.params, rng.child("generator")
            )
        elif self.variant.encoders_per_language:
            for i, site in enumerate(enc.sites):
                blocks_w, blocks_b = [], []
                std = np.sqrt(2.0 / ((site.c_in + site.c_out) * site.kernel))
                for l in range(L):
                    r = rng.child("enc", i, l)
                    blocks_w.append(
                        r.uniform(
                            (site.c_out, site.c_in, site.kernel),
                            -np.sqrt(3.0) * std, np.sqrt(3.0) * std,
                        )
                    )
                    blocks_b.append(np.zeros(site.c_out))
                self._p(f"enc{i}_w", np.concatenate(blocks_w, axis=0))
                self._p(f"enc{i}_b", np.concatenate(blocks_b, axis=0))
        else:
            for i, site in enumerate(enc.sites):
                std = np.sqrt(2.0 / ((site.c_in + site.c_out) * site.kernel))
                r = rng.child("enc", i)
                self._p(
                    f"enc{i}_w",
                    r.uniform(
                        (site.c_out, site.c_in, site.kernel),
                        -np.sqrt(3.0) * std, np.sqrt(3.0) * std,
                    ),
                )
                self._p(f"enc{i}_b", np.zeros(site.c_out))

        groups = L if self.variant.encoders_per_language else 1
        for i, site in enumerate(enc.sites):
            if site.batchnorm:
                ch = site.c_out * groups
                self._p(f"bn{i}_gamma", np.ones(ch))
                self._p(f"bn{i}_beta", np.zeros(ch))
                self.bn_states[i] = BatchNormState(ch)

        r = rng.child("proj")
        self._p("enc_proj_w", _xavier(r, (enc.last_channels, enc.output_dim)))
        self._p("enc_proj_b", np.zeros(enc.output_dim))

        if self.variant.uses_language_embedding_concat:
            self._p("sha_lang_emb", rng.child("shalang").normal((L, cfg.sha_lang_dim), 0.5))
        self._p("spk_emb", rng.child("spk").normal((cfg.num_speakers, cfg.d_spk), 0.5))

        m = cfg.memory_dim
        r = rng.child("attention")
        self._p("att_mem_w", _xavier(r.child("mem"), (m, dec.attn_dim)))
        self._p("att_query_w", _xavier(r.child("q"), (dec.attn_rnn_dim, dec.attn_dim)))
        self._p("att_loc_conv", _xavier(r.child("locconv"), (dec.loc_filters, 2, dec.loc_kernel)))
        self._p("att_loc_w", _xavier(r.child("locw"), (dec.loc_filters, dec.attn_dim)))
        self._p("att_b", np.zeros(dec.attn_dim))
        self._p("att_v", _xavier(r.child("v"), (dec.attn_dim, 1)))

        r = rng.child("prenet")
        self._p("prenet0_w", _xavier(r.child(0), (dec.frame_dim, dec.prenet_dim)))
        self._p("prenet0_b", np.zeros(dec.prenet_dim))
        self._p("prenet1_w", _xavier(r.child(1), (dec.prenet_dim, dec.prenet_dim)))
        self._p("prenet1_b", np.zeros(dec.prenet_dim))

        def lstm_init(tag, in_dim, hidden):
            rr = rng.child("lstm", tag)
            self._p(f"{tag}_w", _xavier(rr, (in_dim + hidden, 4 * hidden)))
            b = np.zeros(4 * hidden)
            b[hidden : 2 * hidden] = 1.0  # forget-gate bias
            self._p(f"{tag}_b", b)

        lstm_init("lstm1", dec.prenet_dim + m, dec.attn_rnn_dim)
        lstm_init("lstm2", m + dec.attn_rnn_dim, dec.dec_rnn_dim)

        r = rng.child("heads")
        self._p("frame_w", _xavier(r.child("f"), (dec.dec_rnn_dim + m, dec.frame_dim)))
        self._p("frame_b", np.zeros(dec.frame_dim))
        self._p("stop_w", _xavier(r.child("s"), (dec.dec_rnn_dim + m, 1)))
        self._p("stop_b", np.zeros(1))

        if self.variant.uses_adversarial_classifier:
            r = rng.child("classifier")
            self._p(
                "cls_hidden_w", _xavier(r.child("h"), (enc.output_dim, cfg.classifier.hidden))
            )
            self._p("cls_hidden_b", np.zeros(cfg.classifier.hidden))
            self._p("cls_out_w", _xavier(r.child("o"), (cfg.classifier.hidden, cfg.num_speakers)))
            self._p("cls_out_b", np.zeros(cfg.num_speakers))

    # ------------------------------------------------------------------
    # state round trip
    # ------------------------------------------------------------------

    def named_state(self) -> dict[str, np.ndarray]:
        state = {name: t.data for name, t in self.params.items()}
        for i, bn in self.bn_states.items():
            state[f"_bn{i}_running_mean"] = bn.running_mean
            state[f"_bn{i}_running_var"] = bn.running_var
            state[f"_bn{i}_initialized"] = np.array([float(bn.initialized)])
        return state

    def load_state(self, state: dict[str, np.ndarray]):
        for name, t in self.params.items():
            if name not in state:
                raise ContractError(f"model state missing parameter {name}")
            if state[name].shape != t.data.shape:
                raise ContractError(
                    f"model state {name}: shape {state[name].shape} != {t.data.shape}"
                )
            t.data = np.array(state[name], dtype=np.float64)
        for i, bn in self.bn_states.items():
            bn.running_mean = np.array(state[f"_bn{i}_running_mean"], dtype=np.float64)
            bn.running_var = np.array(state[f"_bn{i}_running_var"], dtype=np.float64)
            bn.initialized = bool(state[f"_bn{i}_initialized"][0])

    def clone_state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_state().items()}

    def zero_grads(self):
        for t in self.params.values():
            t.zero_grad()

    # ------------------------------------------------------------------
    # encoder weights
    # ------------------------------------------------------------------

    def generate_params(self, language_ids) -> GeneratedParams:
        if self.generator is None:
            raise ContractError(f"variant {self.variant.tag} has no parameter generator")
        ids = np.asarray(language_ids)
        if ids.size and ids.max() >= self.cfg.num_languages:
            raise ContractError(
                f"generate_params: language id {ids.max()} >= {self.cfg.num_languages}"
            )
        return self.generator.generate(self.params["lang_emb"], ids)

    def _site_weights_grouped(self):
        """Per-site (weight, bias) for the grouped conv over all languages
        (GEN: generated; SEP: owned). SHA/SGL use the single owned copy."""
        if self.variant.uses_generator:
            gen = self.generate_params(np.arange(self.cfg.num_languages))
            return [gen.site_weight_bias(i) for i in range(len(self.cfg.encoder.sites))]
        return [
            (self.params[f"enc{i}_w"], self.params[f"enc{i}_b"])
            for i in range(len(self.cfg.encoder.sites))
        ]

    def _site_weights_language(self, lid: int):
        """Per-site (weight, bias) for one language (groups=1 path)."""
        sites = self.cfg.encoder.sites
        if self.variant.uses_generator:
            gen = self.generate_params(np.array([lid]))
            return [gen.site_weight_bias(i) for i in range(len(sites))]
        if self.variant.encoders_per_language:
            out = []
            for i, site in enumerate(sites):
                w = self.params[f"enc{i}_w"][lid * site.c_out : (lid + 1) * site.c_out]
                b = self.params[f"enc{i}_b"][lid * site.c_out : (lid + 1) * site.c_out]
                out.append((w, b))
            return out
        return [
            (self.params[f"enc{i}_w"], self.params[f"enc{i}_b"])
            for i in range(len(sites))
        ]

    def _bn_slice(self, i: int, lid: int) -> BatchNormState:
        """Copy of language lid's slice of site i's running stats."""
        site = self.cfg.encoder.sites[i]
        full = self.bn_states[i]
        if not self.variant.encoders_per_language:
            return full.copy()
        s = BatchNormState(site.c_out, full.momentum, full.eps)
        sl = slice(lid * site.c_out, (lid + 1) * site.c_out)
        s.running_mean = full.running_mean[sl].copy()
        s.running_var = full.running_var[sl].copy()
        s.initialized = full.initialized
        return s

    # ------------------------------------------------------------------
    # encoding
    # ------------------------------------------------------------------

    def encode_batch(self, batch: Batch, mode: str, rng: SeededRng) -> Tensor:
        """Encode an assembled batch. GEN/SEP require the interleave
        property and run all languages as one grouped convolution."""
        tokens, token_mask = batch.tokens, batch.token_mask
        b, t = tokens.shape
        L = self.cfg.num_languages
        enc = self.cfg.encoder
        if tokens.max() >= enc.vocab_size:
            raise ContractError("encode: token id out of vocabulary")
        if self.variant.encoders_per_language:
            if not verify_interleave(batch.language_ids, L):
                raise ContractError(
                    "encode: batch violates the (l + iL) interleave property; "
                    "use the language-balanced batch sampler"
                )
            bg = b // L
            emb = ad.embedding_lookup(self.params["embedding"], tokens)  # [B,T,E]
            x = ad.transpose(emb, (0, 2, 1))  # [B,E,T]
            x = ad.reshape(x, (bg, L * enc.embedding_dim, t))
            mask_bt = token_mask.reshape(bg, L, 1, t)
            site_ws = self._site_weights_grouped()
            # channel mask per site: language block l masked by example (bg, l)
            out = x
            for i, site in enumerate(enc.sites):
                w, bias = site_ws[i]
                out = ad.conv1d_grouped(out, w, bias, groups=L)
                cmask = np.repeat(mask_bt, site.c_out, axis=2).reshape(bg, L * site.c_out, t)
                if site.batchnorm:
                    out = ad.batch_norm_1d(
                        out, self.params[f"bn{i}_gamma"], self.params[f"bn{i}_beta"],
                        self.bn_states[i], mode, mask=cmask,
                    )
                out = ad.relu(out)
                if site.dropout > 0 and mode == "train":
                    out = ad.dropout(out, site.dropout, rng.child("encdrop", i), "train")
                out = ad.mul(out, Tensor(cmask))
            out = ad.reshape(out, (b, enc.last_channels, t))
            out = ad.transpose(out, (0, 2, 1))
        else:
            out = self._encode_plain(tokens, token_mask, mode, rng)
            return out
        out = ad.affine(out, self.params["enc_proj_w"], self.params["enc_proj_b"])
        out = ad.mul(out, Tensor(token_mask[:, :, None]))
        return out

    def _encode_plain(self, tokens, token_mask, mode, rng) -> Tensor:
        """Single shared encoder (SHA/SGL), groups=1."""
        enc = self.cfg.encoder
        b, t = tokens.shape
        emb = ad.embedding_lookup(self.params["embedding"], tokens)
        x = ad.transpose(emb, (0, 2, 1))
        mask_b1t = token_mask[:, None, :]
        for i, site in enumerate(enc.sites):
            x = ad.conv1d_grouped(
                x, self.params[f"enc{i}_w"], self.params[f"enc{i}_b"], groups=1
            )
            if site.batchnorm:
                x = ad.batch_norm_1d(
                    x, self.params[f"bn{i}_gamma"], self.params[f"bn{i}_beta"],
                    self.bn_states[i], mode, mask=mask_b1t,
                )
            x = ad.relu(x)
            if site.dropout > 0 and mode == "train":
                x = ad.dropout(x, site.dropout, rng.child("encdrop", i), "train")
            x = ad.mul(x, Tensor(np.broadcast_to(mask_b1t, x.shape).copy()))
        x = ad.transpose(x, (0, 2, 1))
        x = ad.affine(x, self.params["enc_proj_w"], self.params["enc_proj_b"])
        x = ad.mul(x, Tensor(token_mask[:, :, None]))
        return x

    def encode_language(
        self, tokens: np.ndarray, token_mask: np.ndarray, lid: int, mode: str,
        rng: SeededRng, bn_override: dict[int, BatchNormState] | None = None,
    ) -> Tensor:
        """Sequential per-language path (groups=1) using language lid's
        weights and batch-norm slices. Running stats are read from copies,
        never written."""
        enc = self.cfg.encoder
        b, t = tokens.shape
        if lid >= self.cfg.num_languages:
            raise ContractError(f"encode_language: language {lid} out of range")
        emb = ad.embedding_lookup(self.params["embedding"], tokens)
        x = ad.transpose(emb, (0, 2, 1))
        mask_b1t = token_mask[:, None, :]
        site_ws = self._site_weights_language(lid)
        for i, site in enumerate(enc.sites):
            w, bias = site_ws[i]
            x = ad.conv1d_grouped(x, w, bias, groups=1)
            if site.batchnorm:
                state = (
                    bn_override[i] if bn_override is not None else self._bn_slice(i, lid)
                )
                if self.variant.encoders_per_language:
                    sl = slice(lid * site.c_out, (lid + 1) * site.c_out)
                    gamma = self.params[f"bn{i}_gamma"][sl]
                    beta = self.params[f"bn{i}_beta"][sl]
                else:
                    gamma, beta = self.params[f"bn{i}_gamma"], self.params[f"bn{i}_beta"]
                x = ad.batch_norm_1d(x, gamma, beta, state, mode, mask=mask_b1t)
            x = ad.relu(x)
            if site.dropout > 0 and mode == "train":
                x = ad.dropout(x, site.dropout, rng.child("encdrop", i), "train")
            x = ad.mul(x, Tensor(np.broadcast_to(mask_b1t, x.shape).copy()))
        x = ad.transpose(x, (0, 2, 1))
        x = ad.affine(x, self.params["enc_proj_w"], self.params["enc_proj_b"])
        x = ad.mul(x, Tensor(token_mask[:, :, None]))
        return x

    def encode_mixed(
        self, tokens: np.ndarray, token_mask: np.ndarray,
        token_language_weights: np.ndarray, mode: str, rng: SeededRng,
    ) -> Tensor:
        """Per-token convex combination of per-language encodings (GEN/SEP).

        Encodes the full sequence once per involved language, then mixes the
        outputs tokenwise."""
        if not self.variant.encoders_per_language:
            raise ContractError(
                f"encode_mixed: variant {self.variant.tag} has a single shared encoder"
            )
        w = np.asarray(token_language_weights, dtype=np.float64)
        b, t = tokens.shape
        if w.shape != (b, t, self.cfg.num_languages):
            raise ContractError(
                f"encode_mixed: weights shape {w.shape} != {(b, t, self.cfg.num_languages)}"
            )
        if (w < 0).any() or np.abs(w.sum(axis=2) - 1.0).max() > 1e-9:
            raise ContractError("encode_mixed: rows must be convex combinations")
        involved = np.nonzero(w.max(axis=(0, 1)) > 0)[0]
        mixed = None
        for lid in involved:
            enc_l = self.encode_language(tokens, token_mask, int(lid), mode, rng.child("mix", int(lid)))
            contrib = ad.mul(enc_l, Tensor(w[:, :, lid][:, :, None]))
            mixed = contrib if mixed is None else ad.add(mixed, contrib)
        return mixed

    # ------------------------------------------------------------------
    # memory, classifier, losses
    # ------------------------------------------------------------------

    def build_memory(self, enc_out: Tensor, language_ids, speaker_ids) -> Tensor:
        b, t, _ = enc_out.shape
        spk_ids = np.asarray(speaker_ids)
        if spk_ids.max() >= self.cfg.num_speakers:
            raise ContractError(f"speaker id {spk_ids.max()} >= {self.cfg.num_speakers}")
        spk = ad.embedding_lookup(self.params["spk_emb"], spk_ids)
        spk = ad.expand(ad.reshape(spk, (b, 1, self.cfg.d_spk)), 1, t)
        parts = [enc_out, spk]
        if self.variant.uses_language_embedding_concat:
            lang = ad.embedding_lookup(self.params["sha_lang_emb"], np.asarray(language_ids))
            parts.append(ad.expand(ad.reshape(lang, (b, 1, self.cfg.sha_lang_dim)), 1, t))
        return ad.concat(parts, axis=2)

    def classifier_loss(
        self, enc_out: Tensor, speaker_ids, token_mask: np.ndarray,
        reversal_lambda: float | None = None, grad_clamp: float | None = None,
    ) -> Tensor:
        """Adversarial speaker loss: per-time-step speaker prediction behind
        a gradient-reversal layer; the gradient entering the encoder is
        clamped elementwise."""
        if not self.variant.uses_adversarial_classifier:
            raise ContractError(f"variant {self.variant.tag} has no speaker classifier")
        lam = self.cfg.classifier.reversal_lambda if reversal_lambda is None else reversal_lambda
        clamp = self.cfg.classifier.grad_clamp if grad_clamp is None else grad_clamp
        spk_ids = np.asarray(speaker_ids)
        if spk_ids.max() >= self.cfg.num_speakers:
            raise ContractError(f"speaker id {spk_ids.max()} >= {self.cfg.num_speakers}")
        x = ad.clamp_grad(enc_out, clamp) if np.isfinite(clamp) else enc_out
        x = ad.gradient_reverse(x, lam)
        h = ad.relu(ad.affine(x, self.params["cls_hidden_w"], self.params["cls_hidden_b"]))
        logits = ad.affine(h, self.params["cls_out_w"], self.params["cls_out_b"])
        labels = np.repeat(spk_ids[:, None], enc_out.shape[1], axis=1)
        return ad.cross_entropy_with_logits(logits, labels, mask=token_mask)

    # ------------------------------------------------------------------
    # full forward passes
    # ------------------------------------------------------------------

    def forward_teacher(self, batch: Batch, mode: str, rng: SeededRng):
        """Encode + teacher-forced decode. Returns (pred_frames, stop_logits,
        alignments, enc_out)."""
        enc_out = self.encode_batch(batch, mode, rng.child("enc"))
        memory = self.build_memory(enc_out, batch.language_ids, batch.speaker_ids)
        pred, stop, aligns = decode_teacher_forced(
            self.params, self.cfg.decoder, memory, batch.token_mask,
            batch.frames, rng.child("dec"),
        )
        return pred, stop, aligns, enc_out


@dataclass
class LossWeights:
    guided_weight: float = 1.0
    guided_tolerance: float = 0.2
    classifier_weight: float = 0.0
    classifier_enabled: bool = False
    stop_pos_weight: float = 5.0


def total_loss(
    model: SynthModel, batch: Batch, outputs, weights: LossWeights
) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of frame MSE, stop BCE, guided attention, and (when
    enabled) the adversarial classifier loss. The component map holds the
    unweighted values plus the weighted total."""
    pred, stop_logits, aligns, enc_out = outputs
    frame_mse = ad.mse_loss(pred, Tensor(batch.frames), mask=batch.frame_mask)
    stop_bce = ad.bce_with_logits(
        stop_logits, batch.stop_targets,
        pos_weight=weights.stop_pos_weight, mask=batch.frame_mask,
    )
    guided = guided_attention_loss(
        aligns, weights.guided_tolerance, batch.frame_lengths, batch.text_lengths
    )
    loss = ad.add(frame_mse, stop_bce)
    loss = ad.add(loss, ad.scale(guided, weights.guided_weight))
    components = {
        "frame_mse": frame_mse.item(),
        "stop_bce": stop_bce.item(),
        "guided": guided.item(),
    }
    use_cls = (
        weights.classifier_enabled
        and weights.classifier_weight != 0.0
        and model.variant.uses_adversarial_classifier
    )
    if use_cls:
        cls = model.classifier_loss(enc_out, batch.speaker_ids, batch.token_mask)
        loss = ad.add(loss, ad.scale(cls, weights.classifier_weight))
        components["classifier"] = cls.item()
    for name, value in components.items():
        if not np.isfinite(value):
            raise ContractError(f"total_loss: component {name} is non-finite")
    components["total"] = loss.item()
    return loss, components


def synthesize(
    model: SynthModel,
    tokens: np.ndarray,
    token_mask: np.ndarray,
    language_ids,
    speaker_ids,
    max_steps: int,
    rng: SeededRng,
    token_language_weights: np.ndarray | None = None,
) -> InferResult:
    """Free-running synthesis for a padded token batch. For GEN/SEP a
    per-token language-weight tensor selects (or mixes) the encoders; SHA
    uses the utterance-level language embedding throughout."""
    if token_language_weights is not None:
        enc_out = model.encode_mixed(
            tokens, token_mask, token_language_weights, "eval", rng.child("enc")
        )
    elif model.variant.encoders_per_language:
        lids = np.asarray(language_ids)
        if np.unique(lids).size == 1:
            enc_out = model.encode_language(
                tokens, token_mask, int(lids[0]), "eval", rng.child("enc")
            )
        else:
            onehot = np.zeros((tokens.shape[0], tokens.shape[1], model.cfg.num_languages))
            for i, l in enumerate(lids):
                onehot[i, :, l] = 1.0
            enc_out = model.encode_mixed(tokens, token_mask, onehot, "eval", rng.child("enc"))
    else:
        enc_out = model._encode_plain(tokens, token_mask, "eval", rng.child("enc"))
    memory = model.build_memory(enc_out, language_ids, speaker_ids)
    return infer(model.params, model.cfg.decoder, memory, token_mask, max_steps, rng.child("dec"))
