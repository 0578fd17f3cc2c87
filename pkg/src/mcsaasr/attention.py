"""Cross-channel fusion attention: MFCCA, CLCCA and FLCCA.

Feature tensors are plain float64 arrays shaped ``[T, C, D]`` (time, channel,
feature). A context tensor stacks the ``2F + 1`` frames around each time step
along the channel axis, giving ``[T, (2F + 1) * C, D]``; block ``j`` of the
second axis holds frame ``t - F + j`` and frames outside ``[0, T - 1]`` are
zero. The projections of zero-padded rows still carry their bias, so those
keys take part in the softmax like any other key.

CLCCA is MFCCA with ``F = 0``. FLCCA attends over time with per-channel
queries against keys and values computed from the channel-mean sequence.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Variant(str, enum.Enum):
    MFCCA = "mfcca"
    CLCCA = "clcca"
    FLCCA = "flcca"


@dataclass(frozen=True)
class HeadParams:
    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    Bq: np.ndarray
    Bk: np.ndarray
    Bv: np.ndarray

    def __post_init__(self):
        d_in, d_head = np.shape(self.Wq)
        for name in ("Wk", "Wv"):
            if np.shape(getattr(self, name)) != (d_in, d_head):
                raise ValueError(f"{name} shape {np.shape(getattr(self, name))} != {(d_in, d_head)}")
        for name in ("Bq", "Bk", "Bv"):
            if np.shape(getattr(self, name)) != (d_head,):
                raise ValueError(f"{name} shape {np.shape(getattr(self, name))} != {(d_head,)}")

    @property
    def d_in(self) -> int:
        return self.Wq.shape[0]

    @property
    def d_head(self) -> int:
        return self.Wq.shape[1]

    @classmethod
    def random(cls, d_in: int, d_head: int, rng: np.random.Generator, scale: float = 1.0) -> "HeadParams":
        def u(*shape):
            return rng.uniform(-scale, scale, size=shape)

        return cls(u(d_in, d_head), u(d_in, d_head), u(d_in, d_head), u(d_head), u(d_head), u(d_head))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("Wq", "Wk", "Wv", "Bq", "Bk", "Bv")}


@dataclass(frozen=True)
class MultiHeadParams:
    heads: tuple[HeadParams, ...]
    Wo: np.ndarray

    def __post_init__(self):
        if not self.heads:
            raise ValueError("need at least one head")
        d_in, d_head = self.heads[0].d_in, self.heads[0].d_head
        for h in self.heads:
            if (h.d_in, h.d_head) != (d_in, d_head):
                raise ValueError("all heads must share input and head dimensions")
        if np.shape(self.Wo)[0] != len(self.heads) * d_head:
            raise ValueError(
                f"Wo has {np.shape(self.Wo)[0]} rows, expected h * D_head = {len(self.heads) * d_head}"
            )

    @property
    def d_head(self) -> int:
        return self.heads[0].d_head

    @classmethod
    def random(cls, d: int, h: int, d_head: int, rng: np.random.Generator, scale: float = 1.0) -> "MultiHeadParams":
        heads = tuple(HeadParams.random(d, d_head, rng, scale) for _ in range(h))
        return cls(heads, rng.uniform(-scale, scale, size=(h * d_head, d)))

    def to_tensors(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {f"{prefix}Wo": self.Wo}
        for i, head in enumerate(self.heads):
            for k, v in head.as_dict().items():
                out[f"{prefix}head{i}.{k}"] = v
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], prefix: str = "") -> "MultiHeadParams":
        heads = []
        i = 0
        while f"{prefix}head{i}.Wq" in tensors:
            heads.append(HeadParams(**{k: tensors[f"{prefix}head{i}.{k}"] for k in ("Wq", "Wk", "Wv", "Bq", "Bk", "Bv")}))
            i += 1
        if f"{prefix}Wo" not in tensors:
            raise KeyError(f"missing tensor {prefix}Wo")
        return cls(tuple(heads), tensors[f"{prefix}Wo"])


@dataclass(frozen=True)
class AttentionConfig:
    variant: Variant = Variant.MFCCA
    F: int = 2
    h: int = 4
    d_head: int = 16

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.F < 0:
            raise ValueError("context radius F must be >= 0")
        if self.variant is Variant.CLCCA and self.F != 0:
            raise ValueError("CLCCA requires F = 0")
        if self.h < 1 or self.d_head < 1:
            raise ValueError("head count and head dimension must be positive")

    @property
    def keys_per_query(self) -> int | None:
        """Keys seen by one query, as a multiple of C (None for FLCCA, which uses T)."""
        if self.variant is Variant.FLCCA:
            return None
        return 2 * self.F + 1


def _check_features(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ValueError(f"feature tensor must be [T, C, D] with positive dims, got {x.shape}")
    return x


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def build_context(x: np.ndarray, F: int) -> np.ndarray:
    """Stack frames ``t-F .. t+F`` of every channel for each time step.

    Returns an array of shape ``[T, (2F+1)*C, D]`` with zero blocks for
    out-of-range frames.
    """
    x = _check_features(x)
    if F < 0:
        raise ValueError("context radius F must be >= 0")
    T, C, D = x.shape
    padded = np.zeros((T + 2 * F, C, D))
    padded[F : F + T] = x
    blocks = [padded[j : j + T] for j in range(2 * F + 1)]
    return np.concatenate(blocks, axis=1)


def _context_adjoint(dxcc: np.ndarray, F: int, C: int) -> np.ndarray:
    T = dxcc.shape[0]
    dpad = np.zeros((T + 2 * F, C, dxcc.shape[2]))
    for j in range(2 * F + 1):
        dpad[j : j + T] += dxcc[:, j * C : (j + 1) * C]
    return dpad[F : F + T]


def _head_forward(x, xcc, p: HeadParams):
    if x.shape[2] != p.d_in or xcc.shape[2] != p.d_in:
        raise ValueError(f"feature dim {x.shape[2]} does not match head input dim {p.d_in}")
    if xcc.shape[0] != x.shape[0] or xcc.shape[1] % x.shape[1]:
        raise ValueError(f"context tensor {xcc.shape} incompatible with features {x.shape}")
    q = x @ p.Wq + p.Bq
    k = xcc @ p.Wk + p.Bk
    v = xcc @ p.Wv + p.Bv
    scale = 1.0 / np.sqrt(p.d_head)
    attn = softmax(np.einsum("tcd,tmd->tcm", q, k) * scale)
    return np.einsum("tcm,tmd->tcd", attn, v), (q, k, v, attn, scale)


def attention_weights(x: np.ndarray, xcc: np.ndarray, p: HeadParams) -> np.ndarray:
    """Softmax weights ``[T, C, (2F+1)*C]`` of one MFCCA head."""
    x = _check_features(x)
    return _head_forward(x, np.asarray(xcc, dtype=np.float64), p)[1][3]


def mfcca_head(x: np.ndarray, xcc: np.ndarray, p: HeadParams) -> np.ndarray:
    """One MFCCA head: per-frame queries attend over the context keys.

    Args:
        x: features ``[T, C, D]``.
        xcc: ``build_context(x, F)``.
        p: head projections with input dim ``D``.

    Returns:
        Head output ``[T, C, D_head]``.
    """
    x = _check_features(x)
    return _head_forward(x, np.asarray(xcc, dtype=np.float64), p)[0]


def _combine(outputs: list[np.ndarray], Wo: np.ndarray) -> np.ndarray:
    return np.concatenate(outputs, axis=-1) @ Wo


def mfcca_multihead(x: np.ndarray, cfg: AttentionConfig, p: MultiHeadParams) -> np.ndarray:
    """Multi-head cross-channel attention; heads concatenated then projected by ``Wo``."""
    x = _check_features(x)
    if len(p.heads) != cfg.h or p.d_head != cfg.d_head:
        raise ValueError(
            f"config expects {cfg.h} heads of dim {cfg.d_head}, params have {len(p.heads)} of dim {p.d_head}"
        )
    if cfg.variant is Variant.FLCCA:
        return flcca(x, p)
    F = 0 if cfg.variant is Variant.CLCCA else cfg.F
    xcc = build_context(x, F)
    return _combine([mfcca_head(x, xcc, head) for head in p.heads], p.Wo)


def flcca_head(x: np.ndarray, p: HeadParams) -> np.ndarray:
    x = _check_features(x)
    if x.shape[2] != p.d_in:
        raise ValueError(f"feature dim {x.shape[2]} does not match head input dim {p.d_in}")
    mean = x.mean(axis=1)
    q = x @ p.Wq + p.Bq
    k = mean @ p.Wk + p.Bk
    v = mean @ p.Wv + p.Bv
    logits = np.einsum("tcd,sd->cts", q, k) / np.sqrt(p.d_head)
    attn = softmax(logits)
    return np.einsum("cts,sd->tcd", attn, v)


def flcca(x: np.ndarray, p: MultiHeadParams) -> np.ndarray:
    """Frame-level attention: channel-averaged keys/values, per-channel queries."""
    x = _check_features(x)
    return _combine([flcca_head(x, head) for head in p.heads], p.Wo)


@dataclass
class HeadGrads:
    x: np.ndarray
    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    Bq: np.ndarray
    Bk: np.ndarray
    Bv: np.ndarray


def attention_backward(x: np.ndarray, p: HeadParams, upstream: np.ndarray, F: int = 0) -> HeadGrads:
    """Gradients of ``<upstream, mfcca_head(x, build_context(x, F), p)>``.

    The context construction is differentiated through, so ``x`` receives
    gradient both as query source and as key/value source.
    """
    x = _check_features(x)
    upstream = np.asarray(upstream, dtype=np.float64)
    xcc = build_context(x, F)
    out, (q, k, v, attn, scale) = _head_forward(x, xcc, p)
    if upstream.shape != out.shape:
        raise ValueError(f"upstream shape {upstream.shape} != forward output shape {out.shape}")

    d_attn = np.einsum("tcd,tmd->tcm", upstream, v)
    dv = np.einsum("tcm,tcd->tmd", attn, upstream)
    dlogits = attn * (d_attn - np.sum(d_attn * attn, axis=-1, keepdims=True))
    dq = np.einsum("tcm,tmd->tcd", dlogits, k) * scale
    dk = np.einsum("tcm,tcd->tmd", dlogits, q) * scale

    dxcc = dk @ p.Wk.T + dv @ p.Wv.T
    dx = dq @ p.Wq.T + _context_adjoint(dxcc, F, x.shape[1])
    return HeadGrads(
        x=dx,
        Wq=np.einsum("tcd,tce->de", x, dq),
        Wk=np.einsum("tmd,tme->de", xcc, dk),
        Wv=np.einsum("tmd,tme->de", xcc, dv),
        Bq=dq.sum(axis=(0, 1)),
        Bk=dk.sum(axis=(0, 1)),
        Bv=dv.sum(axis=(0, 1)),
    )
