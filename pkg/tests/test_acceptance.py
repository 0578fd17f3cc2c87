"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run ``pytest tests/test_acceptance.py -v``; the summary section
"acceptance criteria" lists the ten outcomes with the measured values.
"""

import json
import math
import time

import numpy as np

from mcsaasr import tensorio
from mcsaasr.assignment import PostNetParams, ci_score, fuse_and_decode
from mcsaasr.attention import AttentionConfig, HeadParams, MultiHeadParams, Variant, build_context, mfcca_head, mfcca_multihead
from mcsaasr.beamforming import DelayAndSumEstimator, beamform, interior, istft, stft
from mcsaasr.cli import main
from mcsaasr.metrics import SI_SNR_CAP_DB, joint_loss, sd_cer, si_snr
from mcsaasr.sim import SimConfig, simulate
from mcsaasr.sot import AttributedSegment, SotHypothesis, Utterance, emit_rttm, fd_sot_align, parse_rttm

from oracles import literal_fd_sot, naive_mfcca_head, recursive_edit_distance
from test_attention import fd_check
from test_metrics import wrong_speaker_fixture
from test_sot import random_instance


def test_1_mfcca_oracle_equivalence(acceptance_report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        T, C, D, F = (int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 17)), int(rng.integers(0, 3)))
        dh = int(rng.integers(1, 9))
        x = rng.normal(size=(T, C, D))
        p = HeadParams.random(D, dh, rng)
        got = mfcca_head(x, build_context(x, F), p)
        ref = naive_mfcca_head(x, F, p.Wq, p.Wk, p.Wv, p.Bq, p.Bk, p.Bv)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 10
    acceptance_report("1 MFCCA oracle equivalence", ok, f"max abs err {worst:.2e} (<=1e-10), {elapsed:.2f}s (<10s)")
    assert ok


def test_2_gradient_correctness(acceptance_report):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        T, C, D, dh, F = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 5)),
                          int(rng.integers(1, 4)), int(rng.integers(0, 3)))
        x = rng.normal(size=(T, C, D))
        p = HeadParams.random(D, dh, rng)
        upstream = rng.normal(size=(T, C, dh))
        worst = max(worst, fd_check(x, p, upstream, F, step=1e-5))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    acceptance_report("2 gradient correctness", ok, f"max rel err {worst:.2e} (<1e-4), {elapsed:.2f}s (<60s)")
    assert ok


def test_3_degeneracy_identities(acceptance_report):
    rng = np.random.default_rng(303)
    exact = True
    for _ in range(20):
        T, D, dh = int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 6))
        x = rng.normal(size=(T, 1, D))
        p = HeadParams.random(D, dh, rng)
        out = mfcca_head(x, build_context(x, 0), p)
        exact &= bool(np.array_equal(out, x @ p.Wv + p.Bv))
    worst = 0.0
    for _ in range(20):
        T, C, D = int(rng.integers(1, 7)), int(rng.integers(2, 6)), int(rng.integers(2, 9))
        x = rng.normal(size=(T, C, D))
        cfg = AttentionConfig(Variant.CLCCA, F=0, h=2, d_head=3)
        p = MultiHeadParams.random(D, 2, 3, rng)
        perm = rng.permutation(C)
        a = mfcca_multihead(x[:, perm], cfg, p)
        b = mfcca_multihead(x, cfg, p)[:, perm]
        worst = max(worst, float(np.max(np.abs(a - b))))
    ok = exact and worst <= 1e-12
    acceptance_report("3 degeneracy identities", ok, f"C=1,F=0 exact={exact}; CLCCA permutation err {worst:.1e} (<=1e-12)")
    assert ok


def test_4_beamforming_gain(acceptance_report):
    gains = []
    for seed in range(50):
        s = simulate(SimConfig(seed=seed, channels=8, speakers=1, overlap_ratio=0.0, noise_snr_db=0.0))
        spec = stft(s.mixture)
        sl = interior(spec.n_frames)
        y = istft(beamform(spec, DelayAndSumEstimator(s.geometries[0])))
        src = s.sources[0, sl]
        best = max(si_snr(s.mixture[c, sl], src) for c in range(8))
        gains.append(si_snr(y[sl], src) - best)
    mean_gain = float(np.mean(gains))
    s = simulate(SimConfig(seed=0, channels=8, speakers=1, overlap_ratio=0.0))
    spec = stft(s.mixture)
    sl = interior(spec.n_frames)
    clean = si_snr(istft(beamform(spec, DelayAndSumEstimator(s.geometries[0])))[sl], s.sources[0, sl])
    ok = mean_gain >= 5.0 and clean >= 40.0
    acceptance_report("4 beamforming gain", ok, f"mean gain {mean_gain:.2f} dB (>=5), noiseless {clean:.1f} dB (>=40)")
    assert ok


def test_5_alignment_oracle(acceptance_report):
    rng = np.random.default_rng(505)
    agree = 0
    for _ in range(1000):
        diar, hyp = random_instance(rng, int(rng.integers(0, 9)), int(rng.integers(0, 9)))
        got = [(s.speaker, s.start, s.end, list(s.tokens)) for s in fd_sot_align(diar, hyp)]
        agree += got == literal_fd_sot([(u.speaker, u.start, u.end) for u in diar], hyp.segments)
    ok = agree == 1000
    acceptance_report("5 alignment oracle", ok, f"{agree}/1000 agree")
    assert ok


def _oracle_sd_cer(hyp, ref):
    def streams(tr):
        out = {}
        for seg in sorted(tr, key=lambda s: s.start):
            out.setdefault(seg.speaker, []).extend(seg.tokens)
        return out

    h, r = streams(hyp), streams(ref)
    errors = sum(recursive_edit_distance(h.get(k, []), r.get(k, [])) for k in set(h) | set(r))
    return errors / sum(len(v) for v in r.values())


def _random_transcript(rng, speakers, max_segs=4):
    segs = []
    for i in range(int(rng.integers(1, max_segs + 1))):
        toks = tuple(str(rng.integers(0, 4)) for _ in range(rng.integers(1, 6)))
        segs.append(AttributedSegment(str(rng.choice(speakers)), float(i) + float(rng.uniform(0, 0.5)), None, toks))
    return segs


def test_6_sd_cer_correctness(acceptance_report):
    rng = np.random.default_rng(606)
    mismatches = 0
    for _ in range(500):
        ref = _random_transcript(rng, ["A", "B"])
        hyp = _random_transcript(rng, ["A", "B", "C"])
        mismatches += not math.isclose(sd_cer(hyp, ref).overall, _oracle_sd_cer(hyp, ref), rel_tol=0, abs_tol=1e-12)
    hyp, ref = wrong_speaker_fixture()
    wrong = sd_cer(hyp, ref).overall
    same = sd_cer(ref, ref).overall
    ok = mismatches == 0 and wrong == 2.0 and same == 0.0
    acceptance_report("6 SD-CER correctness", ok, f"{500 - mismatches}/500 match oracle; wrong-speaker {wrong}; identical {same}")
    assert ok


def test_7_si_snr_properties(acceptance_report):
    rng = np.random.default_rng(707)
    src = rng.normal(size=4000)
    est = src + 0.3 * rng.normal(size=4000)
    vals = [si_snr(a * est, src) for a in (0.1, 1.0, 7.3)]
    spread = max(vals) - min(vals)
    src0 = src - src.mean()
    ortho = rng.normal(size=4000)
    ortho -= ortho.mean()
    ortho -= (ortho @ src0) / (src0 @ src0) * src0
    floor = si_snr(ortho, src)
    jl = joint_loss(4.0, 2.0, lam=0.5)
    ok = spread <= 1e-9 and floor == -SI_SNR_CAP_DB and jl == 3.0
    acceptance_report("7 SI-SNR properties", ok, f"scale spread {spread:.1e} dB; orthogonal {floor} dB; joint_loss {jl}")
    assert ok


def _loop_postnet_argmax(sci, scd, p):
    # scalar restatement of the post-net followed by a first-wins exhaustive max
    L, N = sci.shape
    hidden = p.W1.shape[1]
    out = []
    for l in range(L):
        best, best_n = -math.inf, -1
        for n in range(N):
            acc = p.b2
            for j in range(hidden):
                z = sci[l, n] * p.W1[0, j] + scd[l, n] * p.W1[1, j] + p.b1[j]
                acc += max(z, 0.0) * p.w2[j]
            if acc > best:
                best, best_n = acc, n
        out.append(best_n)
    return out


def test_8_wd_sot_decoding(acceptance_report):
    rng = np.random.default_rng(808)
    correct = total = 0
    for _ in range(100):
        N, dim, L = int(rng.integers(2, 7)), 8, int(rng.integers(1, 20))
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        V = q[:N]
        planted = rng.integers(0, N, size=L)
        sci = ci_score(V[planted], V)
        spk, _ = fuse_and_decode(sci, rng.normal(size=sci.shape), PostNetParams.ci_only())
        correct += int(np.sum(spk == planted))
        total += L
    agree = 0
    for _ in range(500):
        L, N, H = int(rng.integers(1, 8)), int(rng.integers(1, 7)), int(rng.integers(1, 6))
        p = PostNetParams(rng.normal(size=(2, H)), rng.normal(size=H), rng.normal(size=H), float(rng.normal()), "relu")
        sci, scd = rng.normal(size=(L, N)), rng.normal(size=(L, N))
        spk, _ = fuse_and_decode(sci, scd, p)
        agree += list(spk) == _loop_postnet_argmax(sci, scd, p)
    ok = correct == total and agree == 500
    acceptance_report("8 WD-SOT decoding", ok, f"planted accuracy {correct}/{total}; argmax agreement {agree}/500")
    assert ok


def test_9_round_trips(acceptance_report, tmp_path):
    rng = np.random.default_rng(909)
    rttm_ok = True
    for _ in range(50):
        utts = []
        for _ in range(int(rng.integers(1, 10))):
            a = float(rng.uniform(0, 100))
            utts.append(Utterance(f"spk{rng.integers(0, 4)}", a, a + float(rng.uniform(0.01, 5))))
        back = parse_rttm(emit_rttm(utts, "f"))
        rttm_ok &= len(back) == len(utts) and all(
            b.speaker == u.speaker and abs(b.start - u.start) <= 1e-6 and abs(b.end - u.end) <= 2e-6 for b, u in zip(back, utts)
        )
    tensors = {
        "a": rng.normal(size=(3, 4)),
        "b": (rng.normal(size=(2, 5)) + 1j * rng.normal(size=(2, 5))).astype(np.complex64),
        "c": rng.integers(-9, 9, size=7),
        "d": rng.normal(size=()).astype(np.float32),
    }
    tensorio.save(tmp_path / "t.tns", tensors)
    loaded = tensorio.load(tmp_path / "t.tns")
    tensor_ok = loaded.keys() == tensors.keys() and all(
        loaded[k].dtype == v.dtype and np.array_equal(loaded[k], v) for k, v in tensors.items()
    )
    worst = 0.0
    for _ in range(10):
        x = rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(2048, 8000))))
        spec = stft(x)
        sl = interior(spec.n_frames)
        y = istft(spec)
        worst = max(worst, float(np.linalg.norm(y[:, sl] - x[:, sl]) / np.linalg.norm(x[:, sl])))
    ok = rttm_ok and tensor_ok and worst < 1e-6
    acceptance_report("9 round trips", ok, f"rttm {rttm_ok}; tensor {tensor_ok}; stft interior rel err {worst:.1e} (<1e-6)")
    assert ok


def test_10_determinism(acceptance_report, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 42, "channels": 4, "speakers": 3, "overlap_ratio": 0.2, "noise_snr_db": 10}))
    codes = [main(["simulate", "--config", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    capsys.readouterr()
    same = (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    ok = codes == [0, 0] and same
    acceptance_report("10 determinism", ok, f"exit codes {codes}; manifests byte-identical {same}")
    assert ok
