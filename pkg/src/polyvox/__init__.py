"""polyvox: desk-scale multilingual sequence-to-synthesis.

Four model variants over a shared attention decoder: per-language encoder
parameters emitted by a generator network (GEN), one shared encoder (SHA),
per-language owned encoders (SEP), and a monolingual baseline (SGL).
Everything runs on an in-package float64 reverse-mode autodiff core.
"""

__version__ = "0.1.0"

from .autodiff import (  # noqa: F401
    ConfigError,
    ContractError,
    DomainError,
    SeededRng,
    Tape,
    Tensor,
    backward,
)
