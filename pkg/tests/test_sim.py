import json

import numpy as np
import pytest

from mcsaasr.beamforming import ArrayGeometry
from mcsaasr.metrics import SI_SNR_CAP_DB, si_snr
from mcsaasr.sim import InfeasibleOverlapError, SimConfig, measure_overlap, save_session, simulate
from mcsaasr.sot import Utterance, parse_rttm, serialize_sot

from oracles import interval_sweep_overlap


def utts(*spans):
    return [Utterance(f"s{i}", a, b) for i, (a, b) in enumerate(spans)]


class TestMeasureOverlap:
    def test_disjoint(self):
        assert measure_overlap(utts((0, 1), (2, 3))) == 0.0

    def test_identical(self):
        assert measure_overlap(utts((0, 2), (0, 2))) == 1.0

    def test_partial(self):
        assert measure_overlap(utts((0, 2), (1, 3))) == pytest.approx(1 / 3)

    def test_empty(self):
        assert measure_overlap([]) == 0.0

    def test_vs_sweep_oracle(self, rng):
        for _ in range(200):
            spans = []
            for _ in range(rng.integers(1, 7)):
                a = rng.uniform(0, 10)
                spans.append((a, a + rng.uniform(0.1, 3)))
            assert measure_overlap(utts(*spans)) == pytest.approx(interval_sweep_overlap(spans), abs=1e-12)


class TestSimulate:
    def test_single_speaker_clean_channels(self):
        geom = ArrayGeometry((0,) * 4)
        s = simulate(SimConfig(seed=1, channels=4, speakers=1, overlap_ratio=0.0, geometries=(geom,)))
        for c in range(4):
            np.testing.assert_array_equal(s.mixture[c], s.sources[0])
        assert si_snr(s.mixture[0], s.sources[0]) == SI_SNR_CAP_DB

    def test_no_overlap(self):
        s = simulate(SimConfig(seed=4, speakers=2, utterances_per_speaker=1, overlap_ratio=0.0))
        assert measure_overlap(s.utterances) == 0.0
        assert s.sot_reference.segments == tuple(u.text for u in sorted(s.utterances, key=lambda u: u.start))

    @pytest.mark.parametrize("k,ratio", [(2, 0.1), (3, 0.3), (4, 0.2), (2, 0.45)])
    def test_overlap_target(self, k, ratio):
        s = simulate(SimConfig(seed=7, speakers=k, overlap_ratio=ratio, channels=2))
        assert abs(measure_overlap(s.utterances) - ratio) <= 0.05

    def test_infeasible(self):
        with pytest.raises(InfeasibleOverlapError):
            simulate(SimConfig(seed=0, speakers=2, overlap_ratio=0.95))
        with pytest.raises(InfeasibleOverlapError):
            simulate(SimConfig(seed=0, speakers=1, overlap_ratio=0.2))
        with pytest.raises(InfeasibleOverlapError):
            simulate(SimConfig(seed=0, speakers=2, overlap_ratio=0.0, session_length=1.0))

    def test_deterministic(self):
        cfg = SimConfig(seed=11, speakers=3, noise_snr_db=5.0, channels=3)
        a, b = simulate(cfg), simulate(cfg)
        assert a.mixture.tobytes() == b.mixture.tobytes()
        assert a.utterances == b.utterances and a.rttm == b.rttm

    def test_linearity(self):
        s = simulate(SimConfig(seed=3, speakers=3, noise_snr_db=10.0, channels=4))
        np.testing.assert_allclose(s.mixture - s.noise, s.images.sum(axis=0), atol=1e-12)

    def test_noise_level(self):
        s = simulate(SimConfig(seed=3, speakers=2, noise_snr_db=10.0, channels=4, utterances_per_speaker=3))
        clean0 = s.images.sum(axis=0)[0]
        snr = 10 * np.log10(np.mean(clean0**2) / np.mean(s.noise[0] ** 2))
        assert snr == pytest.approx(10.0, abs=0.3)

    def test_images_follow_geometry(self):
        geoms = (ArrayGeometry((0, 3, -2), (1.0, 0.5, 0.8)), ArrayGeometry((0, 0, 1)))
        s = simulate(SimConfig(seed=2, speakers=2, channels=3, geometries=geoms))
        img = s.images[0]
        np.testing.assert_array_equal(img[1, 3:], 0.5 * s.sources[0, :-3])
        np.testing.assert_array_equal(img[2, :-2], 0.8 * s.sources[0, 2:])

    def test_ground_truth_consistency(self):
        s = simulate(SimConfig(seed=9, speakers=3, overlap_ratio=0.25))
        assert serialize_sot(s.utterances) == s.sot_reference
        back = parse_rttm(s.rttm)
        assert len(back) == len(s.utterances)
        for a, b in zip(back, s.utterances):
            assert a.speaker == b.speaker
            assert abs(a.start - b.start) < 1e-6 and abs(a.end - b.end) < 1e-6
        assert all(u.end * s.config.sample_rate <= s.n_samples for u in s.utterances)
        assert s.sources.shape[1] == s.mixture.shape[1]

    def test_external_sources(self, rng):
        src = rng.normal(size=5000)
        s = simulate(SimConfig(seed=1, speakers=2, channels=2), sources={"spk0": src})
        assert s.sources.shape[0] == 2 and np.any(s.sources[0])

    def test_noise_generator(self):
        s = simulate(SimConfig(seed=1, speakers=2, channels=2, source="noise"))
        assert np.all(np.isfinite(s.mixture))


class TestConfigAndSave:
    def test_config_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 3, "speakers": 2, "geometries": [{"delays": [0, 1]}, {"delays": [0, -1]}], "channels": 2}))
        cfg = SimConfig.from_file(path)
        assert cfg.geometries[1].delays == (0, -1)
        assert SimConfig.from_dict(cfg.to_dict()) == cfg

    def test_config_schema_rejects_unknown(self):
        import jsonschema

        with pytest.raises(jsonschema.ValidationError):
            SimConfig.from_dict({"seed": 1, "bogus": 2})

    def test_manifest_deterministic(self, tmp_path):
        cfg = SimConfig(seed=5, speakers=2, channels=2, noise_snr_db=20.0)
        m1 = save_session(simulate(cfg), tmp_path / "a").read_bytes()
        m2 = save_session(simulate(cfg), tmp_path / "b").read_bytes()
        assert m1 == m2
        manifest = json.loads(m1)
        assert set(manifest["files"]) >= {"mixture", "rttm", "sot_reference", "clean_spk0", "clean_spk1"}
