"""Synthetic multichannel meeting sessions with aligned ground truth.

Utterances are laid out as a chain in which each one overlaps only its
immediate predecessor (never three talkers at once). For a target overlap
ratio ``r`` the summed pairwise overlap must equal ``r * sum(d) / (1 + r)``
where ``d`` are the utterance durations; each link may overlap by at most
half of the shorter of its two utterances, which bounds the attainable
ratio. With ``r = 0`` consecutive utterances are separated by random gaps.

Each speaker's dry signal is propagated to the array by an integer-sample
delay and a gain per channel (no reverberation). White Gaussian noise is
added to every channel at a level set by ``noise_snr_db`` relative to the
clean mixture power on channel 0.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
from scipy import signal as sps

from .audio import write_wav
from .beamforming import ArrayGeometry
from .sot import AttributedSegment, AttributedTranscript, SotHypothesis, Utterance, emit_rttm, serialize_sot

log = logging.getLogger(__name__)

LEAD_IN = 0.2
TAIL = 0.2
OVERLAP_TOLERANCE = 0.05
ALPHABET = "的一是不了人我在有他这中大来上国个到说们为子和你地出道也时年得就那要下以生会自着去之过家学对可里后小么心多天而能好都然没日于起还发成事只作当想看文无开手十用主行方又如前所本见经头面公同三已老从动两长知民样现分将外但身些与高意进把法此实回二理美点月明其种声全工己话儿者向情部正名定女问力机给等几很业最间新什打便位因重被走电四"

SIM_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "channels": {"type": "integer", "minimum": 1},
        "sample_rate": {"type": "integer", "minimum": 1},
        "speakers": {"type": "integer", "minimum": 1},
        "utterances_per_speaker": {"type": "integer", "minimum": 1},
        "min_duration": {"type": "number", "exclusiveMinimum": 0},
        "max_duration": {"type": "number", "exclusiveMinimum": 0},
        "overlap_ratio": {"type": "number", "minimum": 0, "maximum": 1},
        "noise_snr_db": {"type": ["number", "null"]},
        "max_delay": {"type": "integer", "minimum": 0},
        "session_length": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "source": {"enum": ["harmonic", "noise"]},
        "geometries": {
            "type": ["array", "null"],
            "items": {
                "type": "object",
                "required": ["delays"],
                "additionalProperties": False,
                "properties": {
                    "delays": {"type": "array", "items": {"type": "integer"}},
                    "gains": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                },
            },
        },
    },
}


class InfeasibleOverlapError(ValueError):
    """The requested overlap ratio cannot be met with the drawn utterances."""


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    channels: int = 8
    sample_rate: int = 16000
    speakers: int = 2
    utterances_per_speaker: int = 2
    min_duration: float = 1.0
    max_duration: float = 2.5
    overlap_ratio: float = 0.2
    noise_snr_db: float | None = None
    max_delay: int = 4
    session_length: float | None = None
    source: str = "harmonic"
    geometries: tuple[ArrayGeometry, ...] | None = None

    def __post_init__(self):
        if self.speakers < 1 or self.channels < 1 or self.utterances_per_speaker < 1:
            raise ValueError("speakers, channels and utterances_per_speaker must be >= 1")
        if not 0.0 <= self.overlap_ratio <= 1.0:
            raise ValueError("overlap_ratio must lie in [0, 1]")
        if not 0 < self.min_duration <= self.max_duration:
            raise ValueError("need 0 < min_duration <= max_duration")
        if self.source not in ("harmonic", "noise"):
            raise ValueError(f"unknown source type {self.source!r}")
        if self.geometries is not None:
            geoms = tuple(g if isinstance(g, ArrayGeometry) else ArrayGeometry(**g) for g in self.geometries)
            if len(geoms) != self.speakers:
                raise ValueError("need one geometry per speaker")
            if any(g.n_channels != self.channels for g in geoms):
                raise ValueError("geometry channel count differs from config")
            object.__setattr__(self, "geometries", geoms)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        jsonschema.validate(data, SIM_CONFIG_SCHEMA)
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometries"] = None if self.geometries is None else [g.to_dict() for g in self.geometries]
        return d


@dataclass
class SimSession:
    config: SimConfig
    mixture: np.ndarray  # [C, N]
    sources: np.ndarray  # dry per-speaker signals [K, N]
    images: np.ndarray  # per-speaker array images [K, C, N]
    noise: np.ndarray  # [C, N]
    speakers: list[str]
    geometries: list[ArrayGeometry]
    utterances: list[Utterance]
    sot_reference: SotHypothesis
    rttm: str = field(default="")

    @property
    def n_samples(self) -> int:
        return self.mixture.shape[1]

    def reference_transcript(self) -> AttributedTranscript:
        ordered = sorted(self.utterances, key=lambda u: (u.start, u.speaker))
        return AttributedTranscript(AttributedSegment(u.speaker, u.start, u.end, u.text) for u in ordered)


def measure_overlap(utterances) -> float:
    """Fraction of speech time during which at least two speakers are active."""
    intervals = sorted((u.start, u.end) for u in utterances)
    if not intervals:
        return 0.0
    bounds = sorted({b for iv in intervals for b in iv})
    covered = multi = 0.0
    starts = np.array([s for s, _ in intervals])
    ends = np.array([e for _, e in intervals])
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        mid = 0.5 * (lo + hi)
        active = int(np.sum((starts <= mid) & (ends > mid)))
        if active >= 1:
            covered += hi - lo
        if active >= 2:
            multi += hi - lo
    return multi / covered if covered > 0 else 0.0


def _speaker_order(n: int, k: int, rng: np.random.Generator) -> list[int]:
    # most-remaining-first never repeats a speaker back to back when counts are equal
    counts = [n // k] * k
    order, prev = [], -1
    for _ in range(n):
        choices = [s for s in range(k) if counts[s] > 0 and s != prev] or [s for s in range(k) if counts[s] > 0]
        top = max(counts[s] for s in choices)
        choices = [s for s in choices if counts[s] == top]
        s = choices[int(rng.integers(len(choices)))]
        counts[s] -= 1
        order.append(s)
        prev = s
    return order


def _layout(cfg: SimConfig, rng: np.random.Generator):
    """Return speaker index sequence and (start, end) sample positions."""
    sr = cfg.sample_rate
    n = cfg.speakers * cfg.utterances_per_speaker
    order = _speaker_order(n, cfg.speakers, rng)
    durs = np.round(rng.uniform(cfg.min_duration, cfg.max_duration, size=n) * sr).astype(np.int64)
    r = cfg.overlap_ratio
    if r > 0:
        if n < 2 or cfg.speakers < 2:
            raise InfeasibleOverlapError("overlap needs at least two utterances from two speakers")
        o_max = np.minimum(durs[:-1], durs[1:]) // 2
        o_max[np.diff(order) == 0] = 0
        needed = r * durs.sum() / (1 + r)
        if needed > o_max.sum():
            attainable = o_max.sum() / (durs.sum() - o_max.sum())
            raise InfeasibleOverlapError(
                f"overlap ratio {r:.3f} exceeds the attainable {attainable:.3f} for the drawn utterance lengths"
            )
        links = -np.round(o_max * (needed / o_max.sum())).astype(np.int64)
    else:
        links = np.round(rng.uniform(0.1, 0.5, size=n - 1) * sr).astype(np.int64)
    starts = np.empty(n, dtype=np.int64)
    starts[0] = int(round(LEAD_IN * sr))
    for i in range(1, n):
        starts[i] = starts[i - 1] + durs[i - 1] + links[i - 1]
    return order, starts, starts + durs


def _harmonic(n: int, sr: int, f0: float, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sr
    pitch = f0 * (1 + 0.05 * np.sin(2 * np.pi * rng.uniform(2, 5) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(pitch) / sr
    x = np.zeros(n)
    for k in range(1, int(0.45 * sr / (1.1 * f0)) + 1):
        x += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    syll = 0.55 - 0.45 * np.cos(2 * np.pi * rng.uniform(3, 5) * t)
    return x * syll


def _noise_burst(n: int, sr: int, band: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    sos = sps.butter(4, [band[0], band[1]], btype="bandpass", fs=sr, output="sos")
    t = np.arange(n) / sr
    return sps.sosfilt(sos, rng.normal(size=n)) * (0.55 - 0.45 * np.cos(2 * np.pi * rng.uniform(2, 4) * t))


def _fade(x: np.ndarray, sr: int) -> np.ndarray:
    m = min(len(x) // 2, int(0.01 * sr))
    if m:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(m) / m)
        x[:m] *= ramp
        x[-m:] *= ramp[::-1]
    return x


def _shift(x: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros_like(x)
    if d >= 0:
        out[d:] = x[: len(x) - d]
    else:
        out[:d] = x[-d:]
    return out


def random_geometry(channels: int, max_delay: int, rng: np.random.Generator) -> ArrayGeometry:
    delays = [0] + [int(v) for v in rng.integers(-max_delay, max_delay + 1, size=channels - 1)]
    gains = [1.0] + [float(v) for v in rng.uniform(0.6, 1.0, size=channels - 1)]
    return ArrayGeometry(tuple(delays), tuple(gains))


def simulate(cfg: SimConfig, sources: dict[str, np.ndarray] | None = None) -> SimSession:
    """Generate one session; identical ``cfg`` gives bit-identical output.

    Args:
        cfg: simulation parameters.
        sources: optional dry waveform per speaker id (``spk0``, ``spk1``, ...);
            consecutive chunks are cut from it for each utterance. Speakers not
            listed use the built-in generator.
    """
    rng = np.random.default_rng(cfg.seed)
    sr = cfg.sample_rate
    speakers = [f"spk{k}" for k in range(cfg.speakers)]
    order, starts, ends = _layout(cfg, rng)
    n_samples = int(ends.max() + round(TAIL * sr))
    if cfg.session_length is not None:
        wanted = int(round(cfg.session_length * sr))
        if wanted < n_samples:
            raise InfeasibleOverlapError(
                f"session_length {cfg.session_length}s is shorter than the laid-out timeline {n_samples / sr:.3f}s"
            )
        n_samples = wanted

    geoms = list(cfg.geometries) if cfg.geometries is not None else [
        random_geometry(cfg.channels, cfg.max_delay, rng) for _ in speakers
    ]
    f0s = rng.uniform(100, 250, size=cfg.speakers)
    bands = [(lo, lo * rng.uniform(2.0, 4.0)) for lo in rng.uniform(150, 800, size=cfg.speakers)]
    offsets = {spk: 0 for spk in speakers}

    dry = np.zeros((cfg.speakers, n_samples))
    utterances = []
    for spk_idx, s, e in zip(order, starts, ends):
        spk = speakers[spk_idx]
        length = int(e - s)
        if sources is not None and spk in sources:
            src = np.asarray(sources[spk], dtype=np.float64)
            idx = (offsets[spk] + np.arange(length)) % len(src)
            offsets[spk] += length
            seg = src[idx].copy()
        elif cfg.source == "harmonic":
            seg = _harmonic(length, sr, f0s[spk_idx], rng)
        else:
            seg = _noise_burst(length, sr, bands[spk_idx], rng)
        rms = np.sqrt(np.mean(seg**2))
        seg = _fade(seg / rms * 0.1 if rms > 0 else seg, sr)
        dry[spk_idx, s:e] += seg
        n_tokens = max(1, int(round(length / sr * 4)))
        text = tuple(ALPHABET[i] for i in rng.integers(0, len(ALPHABET), size=n_tokens))
        utterances.append(Utterance(spk, float(s / sr), float(e / sr), text))

    images = np.zeros((cfg.speakers, cfg.channels, n_samples))
    for k, g in enumerate(geoms):
        for c in range(cfg.channels):
            images[k, c] = g.gains[c] * _shift(dry[k], g.delays[c])
    clean = images.sum(axis=0)
    noise = np.zeros_like(clean)
    if cfg.noise_snr_db is not None:
        power = np.mean(clean[0] ** 2)
        noise = rng.normal(size=clean.shape) * np.sqrt(power / 10 ** (cfg.noise_snr_db / 10))

    measured = measure_overlap(utterances)
    if abs(measured - cfg.overlap_ratio) > OVERLAP_TOLERANCE:
        raise InfeasibleOverlapError(f"measured overlap {measured:.3f} misses target {cfg.overlap_ratio:.3f}")
    log.debug("simulated %d utterances, overlap %.3f", len(utterances), measured)

    utterances.sort(key=lambda u: (u.start, u.speaker))
    return SimSession(
        config=cfg,
        mixture=clean + noise,
        sources=dry,
        images=images,
        noise=noise,
        speakers=speakers,
        geometries=geoms,
        utterances=utterances,
        sot_reference=serialize_sot(utterances),
        rttm=emit_rttm(utterances, file_id=f"sim{cfg.seed}"),
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_session(session: SimSession, outdir: str | Path) -> Path:
    """Write WAVs, RTTM, SOT reference, transcript and ``manifest.json``; return the manifest path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sr = session.config.sample_rate
    files = {"mixture": "mixture.wav", "rttm": "session.rttm", "sot_reference": "sot_ref.txt", "transcript": "transcript.json"}
    write_wav(outdir / files["mixture"], session.mixture, sr)
    for k, spk in enumerate(session.speakers):
        files[f"clean_{spk}"] = f"clean_{spk}.wav"
        write_wav(outdir / files[f"clean_{spk}"], session.sources[k], sr)
    (outdir / files["rttm"]).write_text(session.rttm, encoding="utf-8")
    (outdir / files["sot_reference"]).write_text(session.sot_reference.to_text() + "\n", encoding="utf-8")
    (outdir / files["transcript"]).write_text(session.reference_transcript().to_json() + "\n", encoding="utf-8")
    manifest = {
        "config": session.config.to_dict(),
        "n_samples": session.n_samples,
        "speakers": session.speakers,
        "geometries": [g.to_dict() for g in session.geometries],
        "overlap_ratio": measure_overlap(session.utterances),
        "utterances": [
            {"speaker": u.speaker, "start": u.start, "end": u.end, "text": "".join(u.text)} for u in session.utterances
        ],
        "files": {name: {"path": rel, "sha256": _sha256(outdir / rel)} for name, rel in sorted(files.items())},
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")
    return path
