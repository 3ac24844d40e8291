"""Convolutional text encoders and the per-language parameter generator.

The encoder is a stack of same-padding conv sites (conv -> batch norm ->
ReLU -> dropout, padded positions re-zeroed after every site) followed by a
shared linear projection. For the per-language variants the whole stack runs
as ONE grouped convolution over an interleaved batch reshaped to
[B/L, L*C, T]; channel block l carries language l, which also gives every
language its own batch-norm statistics.

Per-language weights come from one of two sources:
  * owned: a [L*C_out, C_in, k] parameter per site (separate encoders);
  * generated: per-site two-layer generators mapping a language embedding
    through a bottleneck of size g to the site's flat parameter vector.
The bottleneck caps the rank of the embedding-to-parameter map at g, which
is what limits how language-specific the generated encoders can get.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ConfigError, ContractError, SeededRng, Tensor


@dataclass(frozen=True)
class ConvSite:
    c_in: int
    c_out: int
    kernel: int
    batchnorm: bool = True
    dropout: float = 0.05

    def param_count(self) -> int:
        """Flat length of (weight, bias) for one language at this site."""
        return self.c_out * self.c_in * self.kernel + self.c_out


@dataclass(frozen=True)
class EncoderSpec:
    vocab_size: int
    embedding_dim: int
    sites: tuple[ConvSite, ...]
    output_dim: int

    def __post_init__(self):
        if not self.sites:
            raise ConfigError("EncoderSpec: needs at least one conv site")
        if self.sites[0].c_in != self.embedding_dim:
            raise ConfigError(
                f"EncoderSpec: first site reads {self.sites[0].c_in} channels, "
                f"embedding is {self.embedding_dim}"
            )
        for a, b in zip(self.sites, self.sites[1:]):
            if a.c_out != b.c_in:
                raise ConfigError(
                    f"EncoderSpec: site channels {a.c_out} -> {b.c_in} incompatible"
                )
        for s in self.sites:
            if s.kernel % 2 != 1:
                raise ConfigError(f"EncoderSpec: kernel {s.kernel} must be odd")

    @property
    def last_channels(self) -> int:
        return self.sites[-1].c_out

    def param_count_per_language(self) -> int:
        return sum(s.param_count() for s in self.sites)


def default_encoder_spec(
    vocab_size: int,
    embedding_dim: int = 32,
    channels: int = 64,
    num_sites: int = 5,
    kernel: int = 5,
    dropout: float = 0.05,
    output_dim: int | None = None,
) -> EncoderSpec:
    """Channel plan [E -> C, C -> C, ..., C -> E] with a final projection."""
    if num_sites < 2:
        raise ConfigError("default_encoder_spec: need >= 2 sites")
    dims = [embedding_dim] + [channels] * (num_sites - 1) + [embedding_dim]
    sites = tuple(
        ConvSite(dims[i], dims[i + 1], kernel, True, dropout) for i in range(num_sites)
    )
    return EncoderSpec(
        vocab_size=vocab_size,
        embedding_dim=embedding_dim,
        sites=sites,
        output_dim=output_dim if output_dim is not None else embedding_dim,
    )


def unflatten_site(vec: np.ndarray, site: ConvSite) -> tuple[np.ndarray, np.ndarray]:
    """Flat vector -> (weight [c_out, c_in, k], bias [c_out])."""
    wsize = site.c_out * site.c_in * site.kernel
    if vec.shape[-1] != site.param_count():
        raise ContractError(
            f"unflatten_site: vector length {vec.shape[-1]} != {site.param_count()}"
        )
    w = vec[..., :wsize].reshape(*vec.shape[:-1], site.c_out, site.c_in, site.kernel)
    b = vec[..., wsize:]
    return w, b


def flatten_site(w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.concatenate([w.reshape(*w.shape[:-3], -1), b], axis=-1)


@dataclass
class GeneratedParams:
    """Per-language, per-site flat parameter vectors with the unflattening
    map to (weight, bias) shapes."""

    language_ids: np.ndarray
    site_vectors: list[Tensor]  # each [num_requested_languages, param_count(site)]
    sites: tuple[ConvSite, ...] = field(default_factory=tuple)

    def total_per_language(self) -> int:
        return sum(int(v.shape[1]) for v in self.site_vectors)

    def site_weight_bias(self, i: int) -> tuple[Tensor, Tensor]:
        """Tape-differentiable (weight [L*c_out, c_in, k], bias [L*c_out])."""
        site = self.sites[i]
        vec = self.site_vectors[i]
        n = vec.shape[0]
        wsize = site.c_out * site.c_in * site.kernel
        w = ad.reshape(vec[:, :wsize], (n * site.c_out, site.c_in, site.kernel))
        b = ad.reshape(vec[:, wsize:], (n * site.c_out,))
        return w, b


class ParameterGenerator:
    """Site-specific generators: language embedding -> tanh bottleneck (g)
    -> flat site parameters. Owns its weights inside the model's param dict."""

    def __init__(
        self,
        sites: tuple[ConvSite, ...],
        d_lang: int,
        bottleneck: int,
        params: dict[str, Tensor],
        rng: SeededRng,
    ):
        self.sites = sites
        self.d_lang = d_lang
        self.bottleneck = bottleneck
        self.params = params
        for i, site in enumerate(sites):
            count = site.param_count()
            r = rng.child("gen", i)
            lim1 = np.sqrt(6.0 / (d_lang + bottleneck))
            params[f"gen{i}_w1"] = Tensor(
                r.uniform((d_lang, bottleneck), -lim1, lim1), requires_grad=True
            )
            params[f"gen{i}_b1"] = Tensor(np.zeros(bottleneck), requires_grad=True)
            # output map starts near a plain per-site init: the bias carries a
            # Xavier conv sample, the matrix adds small language deviations
            site_std = np.sqrt(2.0 / ((site.c_in + site.c_out) * site.kernel))
            params[f"gen{i}_w2"] = Tensor(
                r.child("w2").normal((bottleneck, count), site_std / np.sqrt(bottleneck)),
                requires_grad=True,
            )
            wsize = site.c_out * site.c_in * site.kernel
            lim_site = np.sqrt(3.0) * site_std
            base = np.zeros(count)
            base[:wsize] = r.child("base").uniform((wsize,), -lim_site, lim_site)
            params[f"gen{i}_b2"] = Tensor(base, requires_grad=True)

    def generate(self, lang_embeddings: Tensor, language_ids) -> GeneratedParams:
        """Parameter vectors for the requested languages; differentiable
        through the language embedding and the generator weights."""
        ids = np.asarray(language_ids, dtype=np.int64)
        emb = ad.embedding_lookup(lang_embeddings, ids)  # [n, d_lang]
        vectors = []
        for i, site in enumerate(self.sites):
            h = ad.tanh(
                ad.affine(emb, self.params[f"gen{i}_w1"], self.params[f"gen{i}_b1"])
            )
            vec = ad.affine(h, self.params[f"gen{i}_w2"], self.params[f"gen{i}_b2"])
            vectors.append(vec)
        return GeneratedParams(language_ids=ids, site_vectors=vectors, sites=self.sites)
