"""Serialized-output transcripts, FD-SOT alignment and RTTM handling.

A SOT hypothesis is a sequence of token segments separated by ``<sc>``.
Frame-level diarization gives timed utterances; :func:`fd_sot_align` pairs
the two streams:

* equal counts: pair in chronological order;
* more diarization utterances than segments: keep the longest ones
  (ties: earlier start, then smaller speaker id);
* fewer: keep the segments with the most tokens (ties: earlier segment).

Kept diarization utterances are ordered by start time and kept segments by
emission order, which stands in for chronology since SOT carries no times.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .metrics import tokenize

SC = "<sc>"
# durations come from differences of decimal times; compare thresholds with this slack
DURATION_EPS = 1e-9


class RttmParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Utterance:
    speaker: str
    start: float
    end: float
    text: tuple[str, ...] = ()

    def __post_init__(self):
        if self.start < 0:
            raise ValueError(f"utterance start {self.start} is negative")
        if not self.end > self.start:
            raise ValueError(f"utterance end {self.end} must exceed start {self.start}")
        object.__setattr__(self, "text", tuple(self.text))

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class SotHypothesis:
    segments: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        segs = tuple(tuple(s) for s in self.segments)
        for i, s in enumerate(segs):
            if not s:
                raise ValueError(f"segment {i} is empty")
            if SC in s:
                raise ValueError(f"segment {i} contains the separator token")
        object.__setattr__(self, "segments", segs)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def tokens(self) -> list[str]:
        return [tok for seg in self.segments for tok in seg]

    def to_text(self) -> str:
        return f" {SC} ".join(" ".join(seg) for seg in self.segments)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "SotHypothesis":
        """Split a flat token stream at ``<sc>``; empty pieces are dropped."""
        segments, cur = [], []
        for tok in tokens:
            if tok == SC:
                if cur:
                    segments.append(tuple(cur))
                cur = []
            else:
                cur.append(tok)
        if cur:
            segments.append(tuple(cur))
        return cls(tuple(segments))

    @classmethod
    def from_text(cls, text: str, mode: str = "auto") -> "SotHypothesis":
        pieces = [tokenize(p, mode) for p in text.split(SC)]
        return cls(tuple(tuple(p) for p in pieces if p))


@dataclass(frozen=True)
class AttributedSegment:
    speaker: str
    start: float | None
    end: float | None
    tokens: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))


class AttributedTranscript(list):
    """List of :class:`AttributedSegment`, sorted by start when times are known."""

    def to_json(self) -> str:
        return json.dumps(
            {"segments": [{"speaker": s.speaker, "start": s.start, "end": s.end, "tokens": list(s.tokens)} for s in self]},
            ensure_ascii=False,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "AttributedTranscript":
        data = json.loads(text)
        segs = data["segments"] if isinstance(data, dict) else data
        out = cls()
        for s in segs:
            tokens = s.get("tokens")
            if tokens is None:
                tokens = tokenize(s.get("text", ""))
            out.append(AttributedSegment(str(s["speaker"]), s.get("start"), s.get("end"), tuple(tokens)))
        return out

    def to_ctm(self, file_id: str = "session") -> str:
        """One line per segment: ``file 1 start duration speaker tokens...``."""
        lines = []
        for s in self:
            start = "NA" if s.start is None else f"{s.start:.6f}"
            dur = "NA" if s.start is None or s.end is None else f"{s.end - s.start:.6f}"
            lines.append(f"{file_id} 1 {start} {dur} {s.speaker} {' '.join(s.tokens)}".rstrip())
        return "\n".join(lines) + ("\n" if lines else "")


def serialize_sot(utterances: Iterable[Utterance]) -> SotHypothesis:
    """Order utterances by start time (ties: speaker id) and emit their texts."""
    ordered = sorted(utterances, key=lambda u: (u.start, u.speaker))
    return SotHypothesis(tuple(u.text for u in ordered if u.text))


def _select_diar(diar: list[Utterance], n: int) -> list[Utterance]:
    ranked = sorted(diar, key=lambda u: (-u.duration, u.start, u.speaker, u.end, u.text))
    return ranked[:n]


def fd_sot_align(diar: Sequence[Utterance], hyp: SotHypothesis) -> AttributedTranscript:
    """Attach diarization speakers and times to SOT segments."""
    diar = list(diar)
    segments = list(enumerate(hyp.segments))
    n_hat, n = len(diar), len(segments)
    if n_hat > n:
        diar = _select_diar(diar, n)
    elif n_hat < n:
        keep = sorted(segments, key=lambda iseg: (-len(iseg[1]), iseg[0]))[:n_hat]
        segments = sorted(keep)
    diar.sort(key=lambda u: (u.start, u.speaker, u.end, u.text))
    return AttributedTranscript(
        AttributedSegment(u.speaker, u.start, u.end, seg) for u, (_, seg) in zip(diar, segments)
    )


def filter_min_length(diar: Iterable[Utterance], min_len: float) -> list[Utterance]:
    """Keep utterances lasting at least ``min_len`` seconds, in input order.

    The comparison is inclusive and forgives ``DURATION_EPS`` of rounding, so a
    0.9 s utterance written as ``1.0 .. 1.9`` survives ``min_len=0.9``.
    """
    if min_len < 0:
        raise ValueError(f"minimum length must be >= 0, got {min_len}")
    return [u for u in diar if u.duration >= min_len - DURATION_EPS]


def parse_rttm(text: str) -> list[Utterance]:
    """Read ``SPEAKER`` records; other record types, blanks and ``#``/``;;`` comments are skipped."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";;")):
            continue
        fields = stripped.split()
        if fields[0] != "SPEAKER":
            if fields[0].isupper() and len(fields) >= 9:
                continue
            raise RttmParseError(lineno, f"unexpected record type {fields[0]!r}")
        if len(fields) < 8:
            raise RttmParseError(lineno, f"expected at least 8 fields, got {len(fields)}")
        try:
            tbeg, tdur = float(fields[3]), float(fields[4])
        except ValueError:
            raise RttmParseError(lineno, f"non-numeric onset/duration {fields[3]!r} {fields[4]!r}") from None
        if tbeg < 0 or tdur <= 0:
            raise RttmParseError(lineno, f"invalid onset {tbeg} / duration {tdur}")
        out.append(Utterance(fields[7], tbeg, tbeg + tdur))
    return out


def emit_rttm(utterances: Iterable[Utterance], file_id: str = "session") -> str:
    lines = [
        f"SPEAKER {file_id} 1 {u.start:.6f} {u.duration:.6f} <NA> <NA> {u.speaker} <NA> <NA>"
        for u in utterances
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def read_hypotheses(text: str) -> list[SotHypothesis]:
    """Load hypotheses from JSON lines (``{"segments": [[tok, ...], ...]}``) or ``<sc>`` text.

    Plain text holds one hypothesis per non-empty line.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines and lines[0].lstrip().startswith("{"):
        return [SotHypothesis(tuple(tuple(s) for s in json.loads(ln)["segments"])) for ln in lines]
    return [SotHypothesis.from_text(ln) for ln in lines]


def hypothesis_jsonl(hyps: Iterable[SotHypothesis]) -> str:
    return "".join(json.dumps({"segments": [list(s) for s in h.segments]}, ensure_ascii=False) + "\n" for h in hyps)
