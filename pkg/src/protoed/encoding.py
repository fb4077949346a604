"""Desk-scale token encoder.

Tokens are hashed into a fixed bucket table (collisions are accepted), each
position mixes its neighbours inside a small context window through learned
per-offset weights, and a two-layer perceptron with a tanh nonlinearity maps
the mix to the representation space. The encoder is strictly local: a token's
vector depends only on tokens inside its context window, which keeps wide
sentences cheap and makes window cropping exact rather than approximate.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import torch

from .corpus import Mention, Sentence
from .exceptions import ValidationError

DTYPE = torch.float64

DEFAULT_WINDOW = 128


def stable_bucket(token: str, n_buckets: int) -> int:
    """Deterministic token-to-bucket hash, independent of interpreter state."""
    return zlib.crc32(token.encode("utf-8")) % n_buckets


def seeded_generator(seed: int, name: str) -> torch.Generator:
    """A generator keyed by (seed, name) so each tensor owns an independent
    stream and initialization does not depend on construction order."""
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    g = torch.Generator()
    g.manual_seed(int.from_bytes(digest[:8], "big") % (2**63))
    return g


@dataclass(frozen=True)
class EncoderConfig:
    n_buckets: int = 4096
    dim: int = 64
    hidden: int = 0  # 0 means 2 * dim
    context_radius: int = 2

    def __post_init__(self) -> None:
        if self.n_buckets < 1 or self.dim < 1 or self.context_radius < 0:
            raise ValidationError("encoder dimensions must be positive")
        if self.hidden == 0:
            object.__setattr__(self, "hidden", 2 * self.dim)


class EncoderParams:
    """Named trainable tensors of the encoder, stored at 64-bit precision."""

    FIELDS = ("embed", "window_weights", "w1", "b1", "w2", "b2")

    def __init__(self, config: EncoderConfig, tensors: Mapping[str, torch.Tensor]):
        self.config = config
        missing = set(self.FIELDS) - set(tensors)
        if missing:
            raise ValidationError(f"missing encoder tensors: {sorted(missing)}")
        for name in self.FIELDS:
            setattr(self, name, tensors[name])

    @staticmethod
    def init(config: EncoderConfig, seed: int) -> "EncoderParams":
        c = config
        span = 2 * c.context_radius + 1

        def normal(name: str, shape: tuple[int, ...], std: float) -> torch.Tensor:
            g = seeded_generator(seed, f"encoder.{name}")
            return torch.normal(0.0, std, shape, generator=g, dtype=DTYPE)

        tensors = {
            "embed": normal("embed", (c.n_buckets, c.dim), 1.0),
            "window_weights": torch.full((span,), 1.0 / span, dtype=DTYPE),
            "w1": normal("w1", (c.hidden, c.dim), (1.0 / c.dim) ** 0.5),
            "b1": torch.zeros(c.hidden, dtype=DTYPE),
            "w2": normal("w2", (c.dim, c.hidden), (1.0 / c.hidden) ** 0.5),
            "b2": torch.zeros(c.dim, dtype=DTYPE),
        }
        return EncoderParams(config, tensors)

    def named_tensors(self) -> Iterator[tuple[str, torch.Tensor]]:
        for name in self.FIELDS:
            yield name, getattr(self, name)

    def clone(self) -> "EncoderParams":
        return EncoderParams(
            self.config, {n: t.detach().clone() for n, t in self.named_tensors()}
        )

    def requires_grad_(self, flag: bool = True) -> "EncoderParams":
        for _, t in self.named_tensors():
            t.requires_grad_(flag)
        return self


def encode(params: EncoderParams, tokens: Sequence[str]) -> torch.Tensor:
    """Map a token sequence to an [N, dim] matrix of representations."""
    if len(tokens) == 0:
        raise ValidationError("cannot encode an empty token sequence")
    c = params.config
    idx = torch.tensor([stable_bucket(t, c.n_buckets) for t in tokens], dtype=torch.long)
    e = params.embed[idx]  # [N, dim]
    r = c.context_radius
    if r > 0:
        padded = torch.cat(
            [torch.zeros(r, c.dim, dtype=e.dtype), e, torch.zeros(r, c.dim, dtype=e.dtype)]
        )
        mixed = sum(
            params.window_weights[k] * padded[k : k + len(tokens)] for k in range(2 * r + 1)
        )
    else:
        mixed = params.window_weights[0] * e
    hidden = torch.tanh(mixed @ params.w1.T + params.b1)
    return hidden @ params.w2.T + params.b2


def span_repr(reps: torch.Tensor, start: int, end: int) -> torch.Tensor:
    """Mean of the token vectors inside the half-open span [start, end)."""
    if not (0 <= start < end <= reps.shape[0]):
        raise ValidationError(f"span [{start}, {end}) out of range for {reps.shape[0]} tokens")
    return reps[start:end].mean(dim=0)


def window(sentence: Sentence, center: int, width: int = DEFAULT_WINDOW) -> tuple[Sentence, int]:
    """Crop a sentence to at most ``width`` tokens around ``center``.

    The window is shifted, not shrunk, at sentence boundaries. Mentions that
    fall entirely inside the crop are kept with shifted offsets. Returns the
    cropped sentence and the center's new index.
    """
    n = len(sentence)
    if not 0 <= center < n:
        raise ValidationError(f"center {center} out of range for {n} tokens")
    if width < 1:
        raise ValidationError("width must be >= 1")
    start = center - (width - 1) // 2
    start = max(0, min(start, n - width))
    end = min(n, start + width)
    mentions = tuple(
        Mention(m.start - start, m.end - start, m.label)
        for m in sentence.mentions
        if m.start >= start and m.end <= end
    )
    cropped = Sentence(sentence.id, sentence.tokens[start:end], mentions)
    return cropped, center - start


def label_embed(params: EncoderParams, text: str) -> torch.Tensor:
    """Embed a label text as a standalone token sequence, mean-pooled."""
    tokens = text.split()
    if not tokens:
        raise ValidationError("label text is empty")
    return encode(params, tokens).mean(dim=0)


@torch.no_grad()
def momentum_update(shadow: EncoderParams, primary: EncoderParams, coef: float) -> None:
    """In-place shadow update: shadow <- coef * shadow + (1 - coef) * primary.

    The primary parameters are read only, never written.
    """
    if not 0.0 <= coef <= 1.0:
        raise ValidationError("momentum coefficient must lie in [0, 1]")
    for name, t in shadow.named_tensors():
        t.mul_(coef).add_(getattr(primary, name).detach(), alpha=1.0 - coef)


def save_checkpoint(
    path: str | Path, tensors: Mapping[str, torch.Tensor], meta: Mapping | None = None
) -> None:
    """Dump named tensors to an .npz archive; 64-bit values round-trip bit-exactly."""
    arrays = {name: t.detach().numpy().astype(np.float64, copy=False) for name, t in tensors.items()}
    arrays["__meta__"] = np.frombuffer(
        json.dumps(dict(meta or {})).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
        tensors = {
            name: torch.from_numpy(archive[name].copy())
            for name in archive.files
            if name != "__meta__"
        }
    return tensors, meta
