import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cstr.channel import (
    ChannelEnsemble,
    Cir,
    FreqResponse,
    cir_from_freq_response,
    generate_synthetic_cir,
    load_cir_file,
    load_freq_response_file,
    save_cir_file,
    save_freq_response_file,
    synthetic_ensemble,
)
from cstr.errors import FormatError, InvalidArgumentError

from oracles import direct_idft


class TestSynthetic:
    def test_single_tap_has_no_decay(self):
        h = generate_synthetic_cir(1, 1.0, 7)
        g = np.random.default_rng(7)
        g0 = (g.standard_normal(1) + 1j * g.standard_normal(1))[0] / math.sqrt(2)
        assert h.n_taps == 1
        assert h.energy == pytest.approx(abs(g0) ** 2, rel=1e-15)

    def test_bit_identical_for_same_seed(self):
        a = generate_synthetic_cir(200, 20, 42)
        b = generate_synthetic_cir(200, 20, 42)
        assert a.taps.tobytes() == b.taps.tobytes()

    def test_different_seeds_differ(self):
        assert not np.array_equal(generate_synthetic_cir(50, 5, 1).taps, generate_synthetic_cir(50, 5, 2).taps)

    def test_early_half_holds_most_energy(self):
        # Oracle: E|g|^2 = 1, so the ratio of expected energies is
        # (1 - r^100) / (1 - r^200) with r = exp(-1/20), about 0.9933.
        r = math.exp(-1 / 20)
        analytic = (1 - r**100) / (1 - r**200)
        fractions = []
        for seed in range(1000):
            p = np.abs(generate_synthetic_cir(200, 20, seed).taps) ** 2
            fractions.append(p[:100].sum() / p.sum())
        mc = float(np.mean(fractions))
        assert analytic > 0.99
        assert mc == pytest.approx(analytic, abs=0.01)
        assert mc > 0.9

    def test_expected_tap_power_non_increasing(self):
        # |g_i|^2 ~ Exp(1): the mean over M draws has std P_i / sqrt(M).
        m, n, d = 10_000, 40, 8.0
        powers = np.mean([np.abs(generate_synthetic_cir(n, d, s).taps) ** 2 for s in range(m)], axis=0)
        expected = np.exp(-np.arange(n) / d)
        sigma = expected / math.sqrt(m)
        assert np.all(np.abs(powers - expected) < 5 * sigma)
        diff_sigma = np.sqrt(sigma[:-1] ** 2 + sigma[1:] ** 2)
        assert np.all(powers[:-1] - powers[1:] > -5 * diff_sigma)

    def test_onset_profile(self):
        m, n = 4000, 60
        powers = np.mean(
            [np.abs(generate_synthetic_cir(n, 5.0, s, onset_taps=20, rise_constant=3.0).taps) ** 2 for s in range(m)],
            axis=0,
        )
        i = np.arange(n)
        env = np.where(i >= 20, np.exp(-(i - 20) / 5.0), np.exp(-(20 - i) / 3.0))
        assert np.all(np.abs(powers - env) < 6 * env / math.sqrt(m))

    def test_hard_onset_gives_leading_zeros(self):
        h = generate_synthetic_cir(30, 5.0, 3, onset_taps=10)
        assert np.all(h.taps[:10] == 0)
        assert np.all(h.taps[10:] != 0)

    @pytest.mark.parametrize("n, d", [(0, 1.0), (-3, 1.0), (10, 0.0), (10, -2.0), (2.5, 1.0)])
    def test_rejects_bad_arguments(self, n, d):
        with pytest.raises(InvalidArgumentError):
            generate_synthetic_cir(n, d, 0)

    def test_ensemble_is_deterministic_and_consistent(self):
        a = synthetic_ensemble(5, 32, 4.0, 9, onset_taps=3, rise_constant=1.0)
        b = synthetic_ensemble(5, 32, 4.0, 9, onset_taps=3, rise_constant=1.0)
        assert a == b
        assert [c.id for c in a] == ["0", "1", "2", "3", "4"]
        assert len({c.taps.tobytes() for c in a}) == 5
        assert a.seed == 9


class TestCirTypes:
    def test_cir_validation(self):
        with pytest.raises(InvalidArgumentError):
            Cir(taps=[])
        with pytest.raises(InvalidArgumentError):
            Cir(taps=[1, np.nan])
        with pytest.raises(InvalidArgumentError):
            Cir(taps=[1], tap_spacing=0)

    def test_cir_is_immutable(self):
        h = Cir(taps=[1, 2])
        with pytest.raises(ValueError):
            h.taps[0] = 5

    def test_ensemble_rejects_mixed_lengths(self):
        with pytest.raises(InvalidArgumentError):
            ChannelEnsemble((Cir([1, 2], id="a"), Cir([1, 2, 3], id="b")))

    def test_ensemble_rejects_mixed_spacing(self):
        with pytest.raises(InvalidArgumentError):
            ChannelEnsemble((Cir([1, 2], 1.0, "a"), Cir([1, 2], 2.0, "b")))


class TestFreqResponse:
    def test_flat_response_gives_unit_impulse(self):
        h = cir_from_freq_response(FreqResponse(np.ones(16), 0.7e9, 2.24e6))
        expected = np.zeros(16)
        expected[0] = 1
        np.testing.assert_allclose(h.taps, expected, atol=1e-15)

    @pytest.mark.parametrize("m, shift", [(8, 3), (16, 0), (16, 15), (581, 100)])
    def test_linear_phase_gives_delayed_tap(self, m, shift):
        k = np.arange(m)
        h = cir_from_freq_response(FreqResponse(np.exp(-2j * np.pi * k * shift / m), 0.0, 1.0))
        expected = np.zeros(m)
        expected[shift] = 1
        np.testing.assert_allclose(h.taps, expected, atol=1e-12)

    def test_matches_brute_force_idft(self, rng):
        gains = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        h = cir_from_freq_response(FreqResponse(gains, 0.7e9, 2.24e6))
        np.testing.assert_allclose(h.taps, direct_idft(gains), rtol=0, atol=1e-13)

    def test_tap_spacing_is_inverse_bandwidth(self):
        h = cir_from_freq_response(FreqResponse(np.ones(580), 0.7e9, 2.24e6))
        assert h.tap_spacing == pytest.approx(1 / (580 * 2.24e6), rel=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 300), st.integers(0, 2**32 - 1))
    def test_parseval(self, m, seed):
        g = np.random.default_rng(seed)
        gains = g.standard_normal(m) + 1j * g.standard_normal(m)
        h = cir_from_freq_response(FreqResponse(gains, 1e9, 1e6))
        assert h.energy == pytest.approx(np.sum(np.abs(gains) ** 2) / m, rel=1e-9)

    def test_from_points_accepts_uniform_grid(self):
        f = 0.7e9 + 2.24e6 * np.arange(581)
        fr = FreqResponse.from_points(f, np.ones(581))
        assert fr.f_start == 0.7e9
        assert fr.f_step == pytest.approx(2.24e6, rel=1e-12)
        assert len(fr.points) == 581

    def test_from_points_rejects_non_uniform_grid(self):
        with pytest.raises(FormatError, match="non-uniform"):
            FreqResponse.from_points([0.0, 1.0, 2.0, 3.5], np.ones(4))

    def test_from_points_rejects_decreasing(self):
        with pytest.raises(FormatError):
            FreqResponse.from_points([3.0, 2.0, 1.0], np.ones(3))

    def test_too_few_points(self):
        with pytest.raises(InvalidArgumentError):
            cir_from_freq_response(FreqResponse([1.0], 0.0, 1.0))


class TestCirFile:
    def test_round_trip_is_exact(self, tmp_path):
        ens = synthetic_ensemble(4, 33, 5.0, 77, onset_taps=2, rise_constant=1.5)
        path = tmp_path / "e.cir"
        save_cir_file(ens, path)
        back = load_cir_file(path)
        assert back == ens
        assert back.seed == 77
        assert back.tap_spacing == ens.tap_spacing

    def test_round_trip_without_seed_and_awkward_values(self, tmp_path):
        taps = [0.1 + 0.2j, -1e-300 + 5e300j, 1 / 3 - 2 / 7j, -0.0]
        ens = ChannelEnsemble((Cir(taps, 1e-9 / 3, "pos A"), Cir(taps[::-1], 1e-9 / 3, "pos B")), seed=None)
        path = tmp_path / "e.cir"
        save_cir_file(ens, path)
        back = load_cir_file(path)
        assert back == ens
        assert back.seed is None
        assert [c.id for c in back] == ["pos A", "pos B"]

    def test_header_format(self, tmp_path):
        ens = ChannelEnsemble((Cir([1, 2j], 0.5, "x"),), seed=3)
        save_cir_file(ens, tmp_path / "e.cir")
        lines = (tmp_path / "e.cir").read_text().splitlines()
        assert lines[0] == "CIRv1 n_taps=2 tap_spacing=0.5 count=1 seed=3"
        assert lines[1] == "id=x"
        assert lines[2].split() == ["1", "0"]
        assert lines[3].split() == ["0", "2"]

    def _write(self, tmp_path, text):
        p = tmp_path / "bad.cir"
        p.write_text(text)
        return p

    def test_differing_tap_counts(self, tmp_path):
        p = self._write(tmp_path, "CIRv1 n_taps=2 tap_spacing=1 count=2 seed=none\nid=a\n1 0\n2 0\nid=b\n1 0\n")
        with pytest.raises(FormatError) as err:
            load_cir_file(p)
        assert err.value.line is not None

    def test_too_many_rows(self, tmp_path):
        p = self._write(tmp_path, "CIRv1 n_taps=1 tap_spacing=1 count=1 seed=none\nid=a\n1 0\n2 0\n")
        with pytest.raises(FormatError) as err:
            load_cir_file(p)
        assert err.value.line == 4

    def test_empty_file(self, tmp_path):
        with pytest.raises(FormatError, match="empty"):
            load_cir_file(self._write(tmp_path, ""))

    def test_missing_header(self, tmp_path):
        with pytest.raises(FormatError) as err:
            load_cir_file(self._write(tmp_path, "id=a\n1 0\n"))
        assert err.value.line == 1

    def test_malformed_row(self, tmp_path):
        p = self._write(tmp_path, "CIRv1 n_taps=2 tap_spacing=1 count=1 seed=none\nid=a\n1 0\n1 x\n")
        with pytest.raises(FormatError) as err:
            load_cir_file(p)
        assert err.value.line == 4
        assert ":4" in str(err.value)

    def test_count_mismatch(self, tmp_path):
        p = self._write(tmp_path, "CIRv1 n_taps=1 tap_spacing=1 count=2 seed=none\nid=a\n1 0\n")
        with pytest.raises(FormatError, match="count"):
            load_cir_file(p)

    def test_header_missing_field(self, tmp_path):
        with pytest.raises(FormatError, match="seed"):
            load_cir_file(self._write(tmp_path, "CIRv1 n_taps=1 tap_spacing=1 count=1\nid=a\n1 0\n"))


class TestFreqResponseFile:
    def test_round_trip(self, tmp_path, rng):
        fr = FreqResponse(rng.standard_normal(20) + 1j * rng.standard_normal(20), 0.7e9, 2.24e6)
        save_freq_response_file(fr, tmp_path / "a.fr")
        back = load_freq_response_file(tmp_path / "a.fr")
        assert np.array_equal(back.gains, fr.gains)
        assert (back.f_start, back.f_step) == (fr.f_start, fr.f_step)
        assert (tmp_path / "a.fr").read_text().startswith("FRv1 f_start=700000000 f_step=2240000 count=20\n")

    def test_count_mismatch(self, tmp_path):
        p = tmp_path / "a.fr"
        p.write_text("FRv1 f_start=0 f_step=1 count=3\n1 0\n1 0\n")
        with pytest.raises(FormatError):
            load_freq_response_file(p)

    def test_bad_step(self, tmp_path):
        p = tmp_path / "a.fr"
        p.write_text("FRv1 f_start=0 f_step=0 count=1\n1 0\n")
        with pytest.raises(FormatError):
            load_freq_response_file(p)
