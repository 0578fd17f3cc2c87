"""Token-level speaker assignment (WD-SOT scoring core).

Inputs are already-encoded: hypotheses ``H [L, Dh]``, speech ``X [T, Dx]``
and a speaker inventory ``V [N, Dv]``. The pipeline is

1. ``word_level_repr``: ``H`` queries ``X`` (keys and values) giving ``R [L, Dv]``;
2. ``ci_score``: ``S_ci = R V^T``;
3. ``cd_score``: one residual self-attention layer over ``H``, whose output
   attends over ``V``; ``S_cd`` are the pre-softmax logits;
4. ``fuse_and_decode``: a small feed-forward net shared across speakers maps
   each ``(S_ci, S_cd)`` pair to a logit, softmax over speakers, argmax.

For multichannel speech, ``flcca`` followed by ``channel_collapse`` (three
same-padded 2-D convolutions over the (time, feature) plane, mic channels as
input planes, kernel (time 5, feature 7), 16 -> 8 -> 1 kernels, ReLU between
layers) turns ``[T, C, D]`` features into ``[T, D]``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .attention import softmax
from .sot import AttributedSegment, AttributedTranscript, SotHypothesis

COLLAPSE_KERNELS = (16, 8, 1)
COLLAPSE_KERNEL_SIZE = (5, 7)  # (time, feature)


def _mat(a, ndim=2, name="array"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class SpeakerInventory:
    ids: tuple[str, ...]
    V: np.ndarray  # [N, Dv]

    def __post_init__(self):
        V = _mat(self.V, name="speaker embeddings")
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != V.shape[0] or not ids:
            raise ValueError("need one id per embedding row and at least one speaker")
        if len(set(ids)) != len(ids):
            raise ValueError("speaker ids must be unique")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "V", V)

    @classmethod
    def from_json(cls, text: str) -> "SpeakerInventory":
        """Accepts a list of ``{"id": str, "embedding": [float, ...]}`` objects (or JSON lines of them)."""
        text = text.strip()
        if text.startswith("["):
            entries = json.loads(text)
        else:
            entries = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
        return cls(tuple(e["id"] for e in entries), np.array([e["embedding"] for e in entries], dtype=np.float64))

    @classmethod
    def from_file(cls, path: str | Path) -> "SpeakerInventory":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def to_json(self) -> str:
        return json.dumps([{"id": i, "embedding": v.tolist()} for i, v in zip(self.ids, self.V)], indent=2)


@dataclass(frozen=True)
class CrossAttnParams:
    """Projections for ``H`` attending over ``X``; ``Wv=None`` keeps ``X`` as values."""

    Wq: np.ndarray  # [Dh, Da]
    Wk: np.ndarray  # [Dx, Da]
    Wv: np.ndarray | None = None  # [Dx, Dv]


@dataclass(frozen=True)
class SanParams:
    """One residual self-attention layer over ``H`` plus the speaker-attention projections."""

    Wq: np.ndarray  # [Dh, Ds]
    Wk: np.ndarray  # [Dh, Ds]
    Wv: np.ndarray  # [Dh, Dh]
    Uq: np.ndarray  # [Dh, Da]
    Uk: np.ndarray  # [Dv, Da]

    @classmethod
    def identity(cls, dim: int) -> "SanParams":
        """Self-attention contributes nothing (zero values); speaker logits are ``H V^T / sqrt(dim)``."""
        eye = np.eye(dim)
        return cls(eye, eye, np.zeros((dim, dim)), eye, eye)


@dataclass(frozen=True)
class PostNetParams:
    """Per-(token, speaker) map ``(ci, cd) -> logit``: ``act([ci, cd] W1 + b1) w2 + b2``."""

    W1: np.ndarray  # [2, Hd]
    b1: np.ndarray  # [Hd]
    w2: np.ndarray  # [Hd]
    b2: float = 0.0
    activation: str = "relu"

    @classmethod
    def sum(cls) -> "PostNetParams":
        return cls(np.ones((2, 1)), np.zeros(1), np.ones(1), 0.0, "linear")

    @classmethod
    def ci_only(cls) -> "PostNetParams":
        return cls(np.array([[1.0], [0.0]]), np.zeros(1), np.ones(1), 0.0, "linear")


@dataclass(frozen=True)
class CollapseParams:
    weights: tuple[np.ndarray, ...]  # each [C_out, C_in, 5, 7]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        prev = None
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 4 or b.shape != (w.shape[0],):
                raise ValueError(f"bad conv layer shapes {w.shape} / {b.shape}")
            if prev is not None and w.shape[1] != prev:
                raise ValueError("conv layer input channels do not chain")
            prev = w.shape[0]
        if prev != 1:
            raise ValueError("final conv layer must have exactly one kernel")

    @property
    def kernel_counts(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.weights)

    @property
    def kernel_size(self) -> tuple[int, int]:
        return tuple(self.weights[0].shape[2:])

    @property
    def in_channels(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def random(
        cls,
        in_channels: int,
        rng: np.random.Generator,
        kernels: Sequence[int] = COLLAPSE_KERNELS,
        kernel_size: tuple[int, int] = COLLAPSE_KERNEL_SIZE,
        bias: bool = True,
    ) -> "CollapseParams":
        ws, bs, cin = [], [], in_channels
        for cout in kernels:
            fan_in = cin * kernel_size[0] * kernel_size[1]
            ws.append(rng.normal(scale=1 / np.sqrt(fan_in), size=(cout, cin, *kernel_size)))
            bs.append(rng.normal(scale=0.1, size=cout) if bias else np.zeros(cout))
            cin = cout
        return cls(tuple(ws), tuple(bs))

    def to_tensors(self, prefix: str = "collapse.") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}{i}.weight"] = w
            out[f"{prefix}{i}.bias"] = b
        return out

    @classmethod
    def from_tensors(cls, tensors: dict, prefix: str = "collapse.") -> "CollapseParams":
        ws, bs, i = [], [], 0
        while f"{prefix}{i}.weight" in tensors:
            ws.append(tensors[f"{prefix}{i}.weight"])
            bs.append(tensors[f"{prefix}{i}.bias"])
            i += 1
        return cls(tuple(ws), tuple(bs))


def _check_cross(H, X, p: CrossAttnParams):
    H, X = _mat(H, name="H"), _mat(X, name="X")
    if H.shape[1] != p.Wq.shape[0] or X.shape[1] != p.Wk.shape[0] or p.Wq.shape[1] != p.Wk.shape[1]:
        raise ValueError(f"projection shapes {p.Wq.shape}/{p.Wk.shape} do not fit H {H.shape} and X {X.shape}")
    if p.Wv is not None and p.Wv.shape[0] != X.shape[1]:
        raise ValueError("value projection does not match X")
    return H, X


def token_attention(H: np.ndarray, X: np.ndarray, p: CrossAttnParams) -> np.ndarray:
    """Token-over-frame attention weights ``[L, T]``; rows sum to one."""
    H, X = _check_cross(H, X, p)
    return softmax((H @ p.Wq) @ (X @ p.Wk).T / np.sqrt(p.Wq.shape[1]))


def word_level_repr(H: np.ndarray, X: np.ndarray, p: CrossAttnParams) -> np.ndarray:
    """``R = softmax((H Wq)(X Wk)^T / sqrt(Da)) (X Wv)``, shape ``[L, Dv]``."""
    H, X = _check_cross(H, X, p)
    values = X if p.Wv is None else X @ p.Wv
    return token_attention(H, X, p) @ values


def ci_score(R: np.ndarray, inventory: SpeakerInventory | np.ndarray) -> np.ndarray:
    V = inventory.V if isinstance(inventory, SpeakerInventory) else _mat(inventory, name="V")
    R = _mat(R, name="R")
    if R.shape[1] != V.shape[1]:
        raise ValueError(f"representation dim {R.shape[1]} != speaker embedding dim {V.shape[1]}")
    return R @ V.T


def san_layer(H: np.ndarray, p: SanParams) -> np.ndarray:
    H = _mat(H, name="H")
    attn = softmax((H @ p.Wq) @ (H @ p.Wk).T / np.sqrt(p.Wq.shape[1]))
    return H + attn @ (H @ p.Wv)


def cd_score(H: np.ndarray, inventory: SpeakerInventory | np.ndarray, p: SanParams) -> np.ndarray:
    """Context-dependent logits ``[L, N]`` of SAN-refined tokens against speakers."""
    V = inventory.V if isinstance(inventory, SpeakerInventory) else _mat(inventory, name="V")
    H = _mat(H, name="H")
    if H.shape[1] != p.Wq.shape[0] or H.shape[1] != p.Uq.shape[0] or V.shape[1] != p.Uk.shape[0]:
        raise ValueError(f"SAN parameters do not fit H {H.shape} and V {V.shape}")
    if p.Uq.shape[1] != p.Uk.shape[1]:
        raise ValueError("speaker attention projections disagree on width")
    refined = san_layer(H, p)
    return (refined @ p.Uq) @ (V @ p.Uk).T / np.sqrt(p.Uq.shape[1])


def post_net_logits(sci: np.ndarray, scd: np.ndarray, p: PostNetParams) -> np.ndarray:
    sci, scd = _mat(sci, name="S_ci"), _mat(scd, name="S_cd")
    if sci.shape != scd.shape:
        raise ValueError(f"score matrices differ in shape: {sci.shape} vs {scd.shape}")
    z = np.stack([sci, scd], axis=-1) @ p.W1 + p.b1
    if p.activation == "relu":
        z = np.maximum(z, 0.0)
    elif p.activation == "tanh":
        z = np.tanh(z)
    elif p.activation != "linear":
        raise ValueError(f"unknown activation {p.activation!r}")
    return z @ p.w2 + p.b2


def fuse_and_decode(sci: np.ndarray, scd: np.ndarray, p: PostNetParams) -> tuple[np.ndarray, np.ndarray]:
    """Return per-token speaker indices ``[L]`` and posteriors ``[L, N]``."""
    posterior = softmax(post_net_logits(sci, scd, p), axis=-1)
    return np.argmax(posterior, axis=-1), posterior


def _conv2d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # x: [Cin, T, D]; w: [Cout, Cin, kt, kd]
    kt, kd = w.shape[2:]
    pt, pd = kt // 2, kd // 2
    padded = np.pad(x, ((0, 0), (pt, kt - 1 - pt), (pd, kd - 1 - pd)))
    patches = sliding_window_view(padded, (kt, kd), axis=(1, 2))  # [Cin, T, D, kt, kd]
    return np.einsum("itdab,oiab->otd", patches, w) + b[:, None, None]


def channel_collapse(y: np.ndarray, p: CollapseParams) -> np.ndarray:
    """Collapse ``[T, C, D]`` to ``[T, D]`` with stacked same-padded convolutions."""
    y = _mat(y, ndim=3, name="features")
    T, C, D = y.shape
    if C != p.in_channels:
        raise ValueError(f"features have {C} channels, collapse expects {p.in_channels}")
    h = np.transpose(y, (1, 0, 2))
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = _conv2d_same(h, w, b)
        if i < last:
            h = np.maximum(h, 0.0)
    return h[0]


def attribute_tokens(
    hyp: SotHypothesis, speakers: Sequence[int], speaker_ids: Sequence[str] | None = None
) -> AttributedTranscript:
    """Label each segment with the majority speaker of its tokens (ties: lowest index).

    Segments carry no times, so ``start``/``end`` are ``None``; list order is
    emission order.
    """
    speakers = [int(s) for s in speakers]
    if len(speakers) != len(hyp.tokens):
        raise ValueError(f"{len(speakers)} speaker labels for {len(hyp.tokens)} tokens")
    out = AttributedTranscript()
    pos = 0
    for seg in hyp.segments:
        counts = Counter(speakers[pos : pos + len(seg)])
        pos += len(seg)
        top = max(counts.values())
        winner = min(s for s, c in counts.items() if c == top)
        label = str(winner) if speaker_ids is None else speaker_ids[winner]
        out.append(AttributedSegment(label, None, None, seg))
    return out
