"""CER, SD-CER, SI-SNR and the joint separation/ASR loss.

Tokenisation (``tokenize``): CJK ideographs, kana and hangul become one
token per character; runs of other non-space characters are split on
whitespace. ``mode="char"`` forces one token per non-space character and
``mode="word"`` forces whitespace splitting.

SD-CER matches speakers by identity. Every speaker's reference utterances
are concatenated in chronological order, likewise its hypothesis
utterances; a speaker present on only one side is scored against an empty
stream. The overall rate is total edits over total reference length.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

SI_SNR_CAP_DB = 200.0

_CJK = re.compile(r"[぀-ヿ㐀-䶿一-鿿豈-﫿가-힯]")


class EmptyReferenceError(ValueError):
    """Raised when a rate would be computed over an empty reference."""


def tokenize(text: str, mode: str = "auto") -> list[str]:
    if mode == "word":
        return text.split()
    if mode == "char":
        return [ch for ch in text if not ch.isspace()]
    if mode != "auto":
        raise ValueError(f"unknown tokenisation mode {mode!r}")
    tokens: list[str] = []
    for word in text.split():
        buf = ""
        for ch in word:
            if _CJK.match(ch):
                if buf:
                    tokens.append(buf)
                    buf = ""
                tokens.append(ch)
            else:
                buf += ch
        if buf:
            tokens.append(buf)
    return tokens


@dataclass(frozen=True)
class EditStats:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_length: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        """Error rate; ``inf`` when there are errors against an empty reference."""
        if self.ref_length == 0:
            return 0.0 if self.errors == 0 else math.inf
        return self.errors / self.ref_length

    def __add__(self, other: "EditStats") -> "EditStats":
        return EditStats(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_length + other.ref_length,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def edit_stats(hyp: Sequence, ref: Sequence) -> EditStats:
    """Levenshtein alignment of ``hyp`` against ``ref`` with S/D/I counts.

    Among minimum-cost alignments the backtrace prefers match/substitution,
    then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        r = ref[i - 1]
        for j in range(1, m + 1):
            diag = cost[i - 1, j - 1] + (r != hyp[j - 1])
            cost[i, j] = min(diag, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    i, j = n, m
    s = d = ins = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditStats(int(s), d, ins, n)


def cer(hyp: Sequence, ref: Sequence) -> tuple[float, EditStats]:
    """Character error rate ``(S + D + I) / len(ref)`` and the edit counts.

    Strings are tokenised with :func:`tokenize`; token lists are used as is.
    An empty reference with a non-empty hypothesis yields ``inf``.
    """
    if isinstance(hyp, str):
        hyp = tokenize(hyp)
    if isinstance(ref, str):
        ref = tokenize(ref)
    stats = edit_stats(list(hyp), list(ref))
    return stats.rate, stats


@dataclass(frozen=True)
class SdCerResult:
    per_speaker: dict[str, EditStats]
    total: EditStats

    @property
    def overall(self) -> float:
        return self.total.rate

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "total": self.total.to_dict(),
            "per_speaker": {
                spk: {"rate": st.rate if math.isfinite(st.rate) else None, **st.to_dict()}
                for spk, st in sorted(self.per_speaker.items())
            },
        }


def _speaker_streams(transcript: Iterable) -> dict[str, list]:
    entries = list(enumerate(transcript))
    timed = all(e.start is not None for _, e in entries)
    if timed:
        entries.sort(key=lambda ie: (ie[1].start, ie[0]))
    streams: dict[str, list] = {}
    for _, seg in entries:
        streams.setdefault(seg.speaker, []).extend(seg.tokens)
    return streams


def sd_cer(hyp: Iterable, ref: Iterable) -> SdCerResult:
    """Speaker-dependent CER over two attributed transcripts.

    Entries need ``speaker``, ``start`` (may be ``None``, in which case list
    order is chronology) and ``tokens`` attributes.
    """
    hyp_streams = _speaker_streams(hyp)
    ref_streams = _speaker_streams(ref)
    per_speaker = {}
    for spk in sorted(set(hyp_streams) | set(ref_streams)):
        per_speaker[spk] = edit_stats(hyp_streams.get(spk, []), ref_streams.get(spk, []))
    total = sum(per_speaker.values(), EditStats())
    if total.ref_length == 0:
        raise EmptyReferenceError("reference transcript is empty; SD-CER is undefined")
    return SdCerResult(per_speaker, total)


def si_snr(est: np.ndarray, src: np.ndarray) -> float:
    """Scale-invariant SNR in dB, clipped to ``[-200, 200]``.

    Both signals are mean-removed; the estimate is projected on the source.
    """
    est = np.asarray(est, dtype=np.float64).ravel()
    src = np.asarray(src, dtype=np.float64).ravel()
    if est.shape != src.shape or est.size < 1:
        raise ValueError(f"estimate and source must have equal non-zero length, got {est.size} and {src.size}")
    est = est - est.mean()
    src = src - src.mean()
    src_energy = np.dot(src, src)
    if src_energy == 0:
        raise ValueError("source is identically zero (after mean removal)")
    target = (np.dot(est, src) / src_energy) * src
    noise = est - target
    t_energy, n_energy = np.dot(target, target), np.dot(noise, noise)
    if t_energy == 0:
        return -SI_SNR_CAP_DB
    if n_energy == 0:
        return SI_SNR_CAP_DB
    return float(np.clip(10 * np.log10(t_energy / n_energy), -SI_SNR_CAP_DB, SI_SNR_CAP_DB))


def joint_loss(l_sep: float, l_asr: float, lam: float = 0.5) -> float:
    """``lam * l_sep + (1 - lam) * l_asr``; ``l_sep`` is conventionally ``-si_snr``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"loss weight must lie in [0, 1], got {lam}")
    if not (math.isfinite(l_sep) and math.isfinite(l_asr)):
        raise ValueError("losses must be finite")
    return lam * l_sep + (1.0 - lam) * l_asr


# Report layout emitted by `mcsa score`; field names are stable.
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["sd_cer"],
    "properties": {
        "sd_cer": {
            "type": "object",
            "required": ["overall", "total", "per_speaker"],
            "properties": {
                "overall": {"type": "number"},
                "total": {"$ref": "#/$defs/stats"},
                "per_speaker": {
                    "type": "object",
                    "additionalProperties": {
                        "allOf": [
                            {"$ref": "#/$defs/stats"},
                            {"type": "object", "required": ["rate"], "properties": {"rate": {"type": ["number", "null"]}}},
                        ]
                    },
                },
            },
        },
        "si_snr_db": {"type": "number"},
    },
    "$defs": {
        "stats": {
            "type": "object",
            "required": ["substitutions", "deletions", "insertions", "ref_length"],
            "properties": {
                k: {"type": "integer", "minimum": 0}
                for k in ("substitutions", "deletions", "insertions", "ref_length")
            },
        }
    },
}


def build_report(result: SdCerResult, si_snr_db: float | None = None) -> dict:
    report = {"sd_cer": result.to_dict()}
    if si_snr_db is not None:
        report["si_snr_db"] = si_snr_db
    return report


def format_report_text(report: dict) -> str:
    lines = [f"{'speaker':<16}{'ref':>6}{'sub':>6}{'del':>6}{'ins':>6}{'rate':>10}"]
    for spk, st in report["sd_cer"]["per_speaker"].items():
        rate = "inf" if st["rate"] is None else f"{st['rate']:.4f}"
        lines.append(
            f"{spk:<16}{st['ref_length']:>6}{st['substitutions']:>6}{st['deletions']:>6}{st['insertions']:>6}{rate:>10}"
        )
    tot = report["sd_cer"]["total"]
    lines.append(
        f"{'OVERALL':<16}{tot['ref_length']:>6}{tot['substitutions']:>6}{tot['deletions']:>6}"
        f"{tot['insertions']:>6}{report['sd_cer']['overall']:>10.4f}"
    )
    if "si_snr_db" in report:
        lines.append(f"SI-SNR: {report['si_snr_db']:.2f} dB")
    return "\n".join(lines) + "\n"
