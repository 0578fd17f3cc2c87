"""Filter-and-sum beamforming, FiLM conditioning and the STFT front-end.

STFT convention (fixed):

* analysis and synthesis window: periodic Hann,
  ``w[n] = 0.5 - 0.5 * cos(2 * pi * n / window)``, ``n = 0 .. window-1``;
* default ``window = 512`` and ``hop = 128`` (75 % overlap);
* frames start at sample ``m * hop`` with no padding, so a signal of ``N``
  samples yields ``1 + (N - window) // hop`` frames;
* each frame is ``rfft(w * x[m*hop : m*hop + window])``, giving
  ``window // 2 + 1`` bins;
* inverse: weighted overlap-add with the same window, divided by the
  overlap-added squared window. At 75 % overlap that envelope is the constant
  1.5 over the interior ``[window, n_frames * hop)``, which is where
  reconstruction is exact up to rounding.

Beamformer weights are applied as ``y(t, f) = sum_c conj(w_c(t, f)) * x_c(t, f)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

DEFAULT_WINDOW = 512
DEFAULT_HOP = 128


@dataclass(frozen=True)
class MultichannelSpectrogram:
    data: np.ndarray  # complex [C, T, Fb]
    sample_rate: int = 16000
    window: int = DEFAULT_WINDOW
    hop: int = DEFAULT_HOP

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] < 1:
            raise ValueError(f"spectrogram must be [C, T, Fb], got {self.data.shape}")
        if self.sample_rate <= 0 or self.window <= 0 or self.hop <= 0:
            raise ValueError("STFT parameters must be positive")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def n_bins(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ArrayGeometry:
    """Integer sample delays and gains of each channel relative to channel 0."""

    delays: tuple[int, ...]
    gains: tuple[float, ...] = field(default=())

    def __post_init__(self):
        delays = tuple(int(d) for d in self.delays)
        gains = tuple(float(g) for g in self.gains) if self.gains else (1.0,) * len(delays)
        if not delays:
            raise ValueError("geometry needs at least one channel")
        if delays[0] != 0:
            raise ValueError("delay of channel 0 must be 0")
        if len(gains) != len(delays):
            raise ValueError("gains and delays must have the same length")
        if any(g <= 0 for g in gains):
            raise ValueError("gains must be positive")
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "gains", gains)

    @property
    def n_channels(self) -> int:
        return len(self.delays)

    def to_dict(self) -> dict:
        return {"delays": list(self.delays), "gains": list(self.gains)}


@dataclass(frozen=True)
class FilmParams:
    W_gamma: np.ndarray  # [E, D]
    b_gamma: np.ndarray  # [D]
    W_beta: np.ndarray  # [E, D]
    b_beta: np.ndarray  # [D]

    def __post_init__(self):
        E, D = np.shape(self.W_gamma)
        if np.shape(self.W_beta) != (E, D) or np.shape(self.b_gamma) != (D,) or np.shape(self.b_beta) != (D,):
            raise ValueError("FiLM parameter shapes are inconsistent")


class WeightEstimator(Protocol):
    """Anything that maps a multichannel spectrogram to beamformer weights."""

    def __call__(self, spec: MultichannelSpectrogram) -> np.ndarray: ...


def hann(window: int) -> np.ndarray:
    n = np.arange(window)
    return 0.5 - 0.5 * np.cos(2 * np.pi * n / window)


def _check_stft_args(window: int, hop: int) -> None:
    if hop <= 0 or window < hop:
        raise ValueError(f"need window >= hop > 0, got window={window}, hop={hop}")


def stft(signal: np.ndarray, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP, sample_rate: int = 16000) -> MultichannelSpectrogram:
    """Per-channel STFT of a ``[C, N]`` (or ``[N]``) real waveform."""
    _check_stft_args(window, hop)
    x = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    if x.ndim != 2:
        raise ValueError("signal must be [C, N] or [N]")
    n = x.shape[1]
    if n < window:
        raise ValueError(f"signal of {n} samples is shorter than one window ({window})")
    n_frames = 1 + (n - window) // hop
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[:, idx] * hann(window)
    return MultichannelSpectrogram(np.fft.rfft(frames, axis=-1), sample_rate, window, hop)


def istft(spec: MultichannelSpectrogram | np.ndarray, window: int | None = None, hop: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`.

    Accepts a :class:`MultichannelSpectrogram` or a bare complex array
    ``[C, T, Fb]`` / ``[T, Fb]`` (then ``window``/``hop`` default to the
    module defaults). Returns ``[C, (T-1)*hop + window]`` or ``[N]``.
    """
    if isinstance(spec, MultichannelSpectrogram):
        data, window, hop = spec.data, spec.window, spec.hop
    else:
        data = np.asarray(spec)
        window = window or DEFAULT_WINDOW
        hop = hop or DEFAULT_HOP
    _check_stft_args(window, hop)
    squeeze = data.ndim == 2
    data = np.atleast_3d(data[None] if squeeze else data)
    C, T, _ = data.shape
    win = hann(window)
    frames = np.fft.irfft(data, n=window, axis=-1) * win
    n = (T - 1) * hop + window
    out = np.zeros((C, n))
    env = np.zeros(n)
    for m in range(T):
        out[:, m * hop : m * hop + window] += frames[:, m]
        env[m * hop : m * hop + window] += win**2
    nz = env > 1e-10 * env.max()
    out[:, nz] /= env[nz]
    return out[0] if squeeze else out


def interior(n_frames: int, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> slice:
    """Sample range over which every sample is covered by a full set of overlapping frames."""
    return slice(window, n_frames * hop)


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, MultichannelSpectrogram) else np.asarray(x)


def filter_and_sum(x: MultichannelSpectrogram | np.ndarray, w: np.ndarray) -> np.ndarray:
    """Single-channel output ``sum_c conj(w_c) * x_c`` of shape ``[T, Fb]``."""
    xd, wd = _as_array(x), _as_array(w)
    if xd.shape != wd.shape or xd.ndim != 3:
        raise ValueError(f"weights {wd.shape} do not match spectrogram {xd.shape}")
    return np.einsum("ctf,ctf->tf", np.conj(wd), xd)


def delay_and_sum_weights(geom: ArrayGeometry, n_frames: int, n_bins: int, window: int | None = None) -> np.ndarray:
    """Delay-and-sum weights ``[C, T, Fb]`` steering at the geometry's source.

    A channel delayed by ``d`` samples carries phase ``exp(-j*2*pi*f*d)`` in bin
    ``f`` (normalised frequency ``k / window``); the weight
    ``(1/C) * exp(-j*2*pi*f*d)`` undoes it under the ``conj(w) * x`` convention.
    """
    window = window if window is not None else 2 * (n_bins - 1)
    C = geom.n_channels
    f_norm = np.arange(n_bins) / window
    delays = np.asarray(geom.delays, dtype=np.float64)
    w = np.exp(-2j * np.pi * delays[:, None] * f_norm[None, :]) / C
    return np.broadcast_to(w[:, None, :], (C, n_frames, n_bins)).copy()


class DelayAndSumEstimator:
    """Oracle weight estimator for a known geometry."""

    def __init__(self, geom: ArrayGeometry):
        self.geom = geom

    def __call__(self, spec: MultichannelSpectrogram) -> np.ndarray:
        if spec.n_channels != self.geom.n_channels:
            raise ValueError("geometry and spectrogram channel counts differ")
        return delay_and_sum_weights(self.geom, spec.n_frames, spec.n_bins, spec.window)


def beamform(spec: MultichannelSpectrogram, estimator: WeightEstimator) -> np.ndarray:
    return filter_and_sum(spec, estimator(spec))


def normalize_embedding(e: np.ndarray) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    norm = np.linalg.norm(e)
    if norm == 0:
        raise ValueError("cannot normalise a zero embedding")
    return e / norm


def film(features: np.ndarray, e: np.ndarray, p: FilmParams) -> np.ndarray:
    """Feature-wise affine modulation ``gamma(e) * features + beta(e)``.

    Args:
        features: ``[T, D]``.
        e: speaker embedding ``[E]``.
        p: projections from ``E`` to ``D``.
    """
    features = np.asarray(features, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 1 or e.shape[0] != p.W_gamma.shape[0]:
        raise ValueError(f"embedding dim {e.shape} does not match FiLM input dim {p.W_gamma.shape[0]}")
    if features.ndim != 2 or features.shape[1] != p.W_gamma.shape[1]:
        raise ValueError(f"features {features.shape} do not match FiLM output dim {p.W_gamma.shape[1]}")
    gamma = e @ p.W_gamma + p.b_gamma
    beta = e @ p.W_beta + p.b_beta
    return features * gamma + beta
