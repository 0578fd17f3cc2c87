"""``mcsa`` command-line entry point.

Exit codes: 0 success, 2 input or parse error (missing file, malformed
RTTM/JSON/tensor file, bad arguments), 3 semantic error (empty reference,
infeasible simulation, inconsistent dimensions). Log level comes from the
``MCSA_LOG_LEVEL`` environment variable (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import tensorio
from .assignment import (
    CollapseParams,
    CrossAttnParams,
    PostNetParams,
    SanParams,
    SpeakerInventory,
    attribute_tokens,
    cd_score,
    channel_collapse,
    ci_score,
    fuse_and_decode,
    word_level_repr,
)
from .attention import AttentionConfig, MultiHeadParams, Variant, flcca, mfcca_multihead
from .audio import read_wav, write_wav
from .beamforming import ArrayGeometry, DEFAULT_HOP, DEFAULT_WINDOW, DelayAndSumEstimator, filter_and_sum, istft, stft
from .metrics import EmptyReferenceError, build_report, format_report_text, sd_cer, si_snr
from .sim import InfeasibleOverlapError, SimConfig, save_session, simulate
from .sot import AttributedTranscript, RttmParseError, SotHypothesis, fd_sot_align, filter_min_length, parse_rttm, read_hypotheses

log = logging.getLogger("mcsaasr")

EXIT_OK, EXIT_INPUT, EXIT_SEMANTIC = 0, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, f"file not found: {path}") from None
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {path}: {exc}") from None


def _load_tensors(path: str) -> dict[str, np.ndarray]:
    if not Path(path).exists():
        raise CliError(EXIT_INPUT, f"file not found: {path}")
    try:
        return tensorio.load(path)
    except tensorio.TensorFileError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}") from None


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    if not Path(args.config).exists():
        raise CliError(EXIT_INPUT, f"config file not found: {args.config}")
    try:
        data = json.loads(_read_text(args.config))
        if args.seed is not None:
            data["seed"] = args.seed
        cfg = SimConfig.from_dict(data)
    except (json.JSONDecodeError, jsonschema.ValidationError, TypeError) as exc:
        raise CliError(EXIT_INPUT, f"invalid config {args.config}: {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_SEMANTIC, f"invalid config {args.config}: {exc}") from None
    try:
        session = simulate(cfg)
    except InfeasibleOverlapError as exc:
        raise CliError(EXIT_SEMANTIC, f"infeasible simulation: {exc}") from None
    try:
        manifest = save_session(session, args.out)
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot write session to {args.out}: {exc}") from None
    print(manifest)
    return EXIT_OK


def cmd_beamform(args) -> int:
    if not Path(args.wav).exists():
        raise CliError(EXIT_INPUT, f"file not found: {args.wav}")
    x, sr = read_wav(args.wav)
    try:
        spec = stft(x, window=args.window, hop=args.hop, sample_rate=sr)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    if args.weights:
        tensors = _load_tensors(args.weights)
        if "weights" not in tensors:
            raise CliError(EXIT_INPUT, f"{args.weights} has no tensor named 'weights'")
        w = tensors["weights"]
    else:
        try:
            geom = ArrayGeometry(**json.loads(_read_text(args.geometry)))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise CliError(EXIT_INPUT, f"invalid geometry {args.geometry}: {exc}") from None
        try:
            w = DelayAndSumEstimator(geom)(spec)
        except ValueError as exc:
            raise CliError(EXIT_SEMANTIC, str(exc)) from None
    try:
        y = filter_and_sum(spec, w)
    except ValueError as exc:
        raise CliError(EXIT_SEMANTIC, str(exc)) from None
    out = istft(y, spec.window, spec.hop)
    # frames cover floor((N - window) / hop) hops; zero-fill the uncovered tail
    write_wav(args.out, np.pad(out, (0, x.shape[1] - out.shape[0])), sr)
    if args.weights_out:
        tensorio.save(args.weights_out, {"weights": np.asarray(w)})
    return EXIT_OK


def cmd_align(args) -> int:
    try:
        diar = parse_rttm(_read_text(args.rttm))
    except RttmParseError as exc:
        raise CliError(EXIT_INPUT, f"{args.rttm}: {exc}") from None
    try:
        hyps = read_hypotheses(_read_text(args.hyp))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"{args.hyp}: {exc}") from None
    if len(hyps) > 1:
        raise CliError(EXIT_INPUT, f"{args.hyp}: expected one hypothesis, found {len(hyps)}")
    if args.min_len < 0:
        raise CliError(EXIT_INPUT, "--min-len must be >= 0")
    kept = filter_min_length(diar, args.min_len)
    result = fd_sot_align(kept, hyps[0] if hyps else SotHypothesis())
    log.info("aligned %d of %d diarization utterances (%d after filtering)", len(result), len(diar), len(kept))
    _emit(result.to_json() + "\n" if args.format == "json" else result.to_ctm(args.file_id), args.out)
    return EXIT_OK


def _load_transcript(path: str) -> AttributedTranscript:
    try:
        return AttributedTranscript.from_json(_read_text(path))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CliError(EXIT_INPUT, f"{path}: malformed transcript ({exc})") from None


def cmd_score(args) -> int:
    hyp, ref = _load_transcript(args.hyp), _load_transcript(args.ref)
    try:
        result = sd_cer(hyp, ref)
    except EmptyReferenceError as exc:
        raise CliError(EXIT_SEMANTIC, str(exc)) from None
    snr = None
    if args.si_snr:
        est_path, src_path = args.si_snr
        for p in (est_path, src_path):
            if not Path(p).exists():
                raise CliError(EXIT_INPUT, f"file not found: {p}")
        est, _ = read_wav(est_path)
        src, _ = read_wav(src_path)
        try:
            snr = si_snr(est[0], src[0])
        except ValueError as exc:
            raise CliError(EXIT_SEMANTIC, str(exc)) from None
    report = build_report(result, snr)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n" if args.format == "json" else format_report_text(report)
    _emit(text, args.out)
    return EXIT_OK


def _assign_params(tensors: dict, dh: int, dx: int, dv: int):
    def get(name, default):
        return tensors.get(name, default)

    try:
        cross = CrossAttnParams(get("cross.Wq", np.eye(dh)), get("cross.Wk", np.eye(dx)), tensors.get("cross.Wv"))
        san = SanParams(
            get("san.Wq", np.eye(dh)), get("san.Wk", np.eye(dh)), get("san.Wv", np.zeros((dh, dh))),
            get("san.Uq", np.eye(dh)), get("san.Uk", np.eye(dv)),
        )
    except ValueError as exc:
        raise CliError(EXIT_SEMANTIC, str(exc)) from None
    if "post.W1" in tensors:
        post = PostNetParams(
            tensors["post.W1"], tensors["post.b1"], tensors["post.w2"], float(tensors.get("post.b2", np.zeros(()))),
            "relu",
        )
    else:
        post = PostNetParams.sum()
    return cross, san, post


def cmd_assign(args) -> int:
    try:
        hyps = read_hypotheses(_read_text(args.hyp))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"{args.hyp}: {exc}") from None
    if len(hyps) != 1:
        raise CliError(EXIT_INPUT, f"{args.hyp}: expected one hypothesis, found {len(hyps)}")
    try:
        inventory = SpeakerInventory.from_json(_read_text(args.speakers))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"{args.speakers}: {exc}") from None
    feats = _load_tensors(args.features)
    params = _load_tensors(args.params) if args.params else {}
    if "H" not in feats or "X" not in feats:
        raise CliError(EXIT_INPUT, f"{args.features} must contain tensors 'H' and 'X'")
    H, X = feats["H"], feats["X"]
    try:
        if X.ndim == 3:
            # multichannel speech: FLCCA then channel collapse to a single plane
            X = channel_collapse(flcca(X, MultiHeadParams.from_tensors(params, "flcca.")), CollapseParams.from_tensors(params))
        cross, san, post = _assign_params(params, H.shape[1], X.shape[1], inventory.V.shape[1])
        R = word_level_repr(H, X, cross)
        spk, posterior = fuse_and_decode(ci_score(R, inventory), cd_score(H, inventory, san), post)
        result = attribute_tokens(hyps[0], spk, inventory.ids)
    except KeyError as exc:
        raise CliError(EXIT_INPUT, f"missing parameter tensor {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_SEMANTIC, str(exc)) from None
    log.info("decoded %d tokens; mean max-posterior %.3f", len(spk), float(posterior.max(axis=1).mean()))
    _emit(result.to_json() + "\n", args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    for name in ("T", "C", "D", "heads", "d_head", "iters"):
        if getattr(args, name) < 1:
            raise CliError(EXIT_INPUT, f"--{name.replace('_', '-')} must be positive")
    variant = Variant(args.variant)
    F = 0 if variant is not Variant.MFCCA else args.F
    cfg = AttentionConfig(variant, F=F, h=args.heads, d_head=args.d_head)
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(-1, 1, size=(args.T, args.C, args.D))
    p = MultiHeadParams.random(args.D, args.heads, args.d_head, rng)

    def run(c):
        times = []
        for _ in range(args.iters):
            t0 = time.perf_counter()
            mfcca_multihead(x, c, p)
            times.append(time.perf_counter() - t0)
        return np.array(times)

    times = run(cfg)
    report = {
        "variant": variant.value,
        "T": args.T, "C": args.C, "D": args.D, "F": F, "heads": args.heads, "d_head": args.d_head,
        "iters": args.iters,
        "keys_per_query": args.T if variant is Variant.FLCCA else (2 * F + 1) * args.C,
        "median_s": float(np.median(times)),
        "p95_s": float(np.percentile(times, 95)),
    }
    if variant is Variant.MFCCA and F > 0:
        clcca_times = run(AttentionConfig(Variant.CLCCA, F=0, h=args.heads, d_head=args.d_head))
        report["clcca_median_s"] = float(np.median(clcca_times))
        report["clcca_not_slower"] = bool(report["clcca_median_s"] <= report["median_s"])
        if not report["clcca_not_slower"]:
            log.warning("CLCCA median %.3gs exceeded MFCCA median %.3gs", report["clcca_median_s"], report["median_s"])
    _emit(json.dumps(report, indent=2) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcsa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic multichannel meeting session")
    p.add_argument("--config", required=True, help="SimConfig JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("beamform", help="filter-and-sum a multichannel WAV")
    p.add_argument("--wav", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--geometry", help="JSON {delays: [...], gains: [...]} for delay-and-sum weights")
    src.add_argument("--weights", help="tensor file with a complex 'weights' tensor [C, T, Fb]")
    p.add_argument("--out", required=True, help="output WAV")
    p.add_argument("--weights-out", help="also save the applied weights")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--hop", type=int, default=DEFAULT_HOP)
    p.set_defaults(func=cmd_beamform)

    p = sub.add_parser("align", help="FD-SOT: attach diarization speakers to SOT segments")
    p.add_argument("--rttm", required=True)
    p.add_argument("--hyp", required=True, help="JSON-lines or '<sc>' text hypothesis")
    p.add_argument("--min-len", type=float, default=0.0, help="drop diarization utterances shorter than this (s)")
    p.add_argument("--format", choices=("json", "ctm"), default="json")
    p.add_argument("--file-id", default="session")
    p.add_argument("--out")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("assign", help="WD-SOT: token-level speaker assignment")
    p.add_argument("--hyp", required=True)
    p.add_argument("--speakers", required=True, help="speaker inventory JSON")
    p.add_argument("--features", required=True, help="tensor file with 'H' [L, Dh] and 'X' [T, Dx] or [T, C, D]")
    p.add_argument("--params", help="tensor file with cross.*, san.*, post.*, flcca.*, collapse.* parameters")
    p.add_argument("--out")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("score", help="SD-CER (and optional SI-SNR) report")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--si-snr", nargs=2, metavar=("EST_WAV", "SRC_WAV"))
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("bench", help="time fusion-attention forward passes")
    p.add_argument("--variant", choices=[v.value for v in Variant], default="mfcca")
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--C", type=int, default=8)
    p.add_argument("--D", type=int, default=64)
    p.add_argument("--F", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-head", type=int, default=16)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("MCSA_LOG_LEVEL", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"mcsa {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
