import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from probekit.bvp import green_regular
from probekit.errors import DomainMismatch, FitStagnation, InputError, SingularPoint
from probekit.geometry import make_needle, straight_needle
from probekit.potential import G
from probekit.runge import (
    CARLEMAN, MFS, CarlemanSequence, ConeKernelStage, NeedleSequenceConfig, Verdict,
    build_needle_sequence, corrected_sequence, limit_verdict, read_sequence, sequence_text,
    write_sequence,
)

X = np.array([0.6, 0.0, 0.0])
AWAY = np.array([[0.0, 0.5, 0.0], [-0.5, 0.0, 0.2], [0.2, -0.4, -0.3]])


@pytest.fixture(scope="module")
def needle(small_domain):
    return straight_needle(small_domain, X, [1, 0, 0])


@pytest.fixture(scope="module")
def seq(small_domain, needle):
    return build_needle_sequence(small_domain, needle)


@pytest.mark.parametrize("kwargs", [
    {"n_max": 2}, {"method": "spline"}, {"delta_fraction": 0.0}, {"alpha0": -1.0},
    {"amplitude_ratio": 1.0}, {"offset": 0.0}, {"poles_base": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        NeedleSequenceConfig(**kwargs)


def test_schedules():
    cfg = NeedleSequenceConfig(n_max=4)
    assert_allclose(cfg.deltas(2.0), [0.2, 0.1, 0.05, 0.025])
    assert_allclose(cfg.alphas(), 1e-2 * 4.0 ** -np.arange(1, 5))
    assert list(cfg.pole_counts()) == [100, 150, 200, 250]
    assert_allclose(cfg.amplitudes(), [50, 100, 200, 400])


def test_stage_amplitude_at_entry(seq, needle):
    assert seq.method == CARLEMAN and seq.n_stages == 6
    for n, amp in enumerate(NeedleSequenceConfig().amplitudes(), 1):
        assert_allclose(seq.value(n, needle.entry[None])[0], amp, rtol=1e-9)


def test_fit_errors_decrease(seq):
    errs = np.array(seq.fit_errors)
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] < 2e-3


def test_converges_to_source_away_from_needle(seq):
    ref = G(AWAY - X)
    first = np.abs(seq.value(1, AWAY) / ref - 1)
    last = np.abs(seq.value(seq.n_stages, AWAY) / ref - 1)
    assert np.all(last < 1e-4)
    assert np.all(last < first)


def test_blows_up_along_needle(seq):
    peaks = [seq.needle_max(n) for n in range(1, seq.n_stages + 1)]
    assert np.all(np.diff(peaks) > 0)
    assert peaks[-1] > 10 * peaks[0]


def test_stage_is_harmonic(seq):
    h = 0.01
    y = AWAY[0]
    lap = -6 * seq.value(4, y[None])[0]
    for e in np.eye(3):
        lap += seq.value(4, (y + h * e)[None])[0] + seq.value(4, (y - h * e)[None])[0]
    assert abs(lap / h**2) < 1e-3 * abs(seq.value(4, y[None])[0]) / h**2


def test_carleman_function_is_source_minus_stage(seq):
    car = CarlemanSequence(seq)
    assert_allclose(car(3, AWAY), G(AWAY - X) - seq.value(3, AWAY), rtol=1e-12, atol=1e-15)
    with pytest.raises(SingularPoint):
        car(3, X[None])
    with pytest.raises(IndexError):
        seq.stage(0)


def test_kernel_singular_only_at_tip():
    st = ConeKernelStage(X, np.array([1.0, 0, 0]), 4.0, 2.0)
    with pytest.raises(SingularPoint):
        st.carleman(X[None])
    assert np.all(np.isfinite(st.value(AWAY)))


def test_corrected_sequence(seq, small_system):
    R = green_regular(small_system, X)
    corr = corrected_sequence(seq, R)
    assert corr.boundary_identity_residual(6, small_system.outer) < 1e-8
    assert_allclose(corr.value(6, AWAY), G(AWAY - X) + R.evaluate(AWAY), rtol=1e-3)
    with pytest.raises(DomainMismatch):
        corrected_sequence(seq, green_regular(small_system, [0, 0.6, 0]))


def test_roundtrip(tmp_path, seq):
    write_sequence(tmp_path / "s.nseq", seq)
    back = read_sequence(tmp_path / "s.nseq")
    assert back.n_stages == seq.n_stages and back.method == seq.method
    assert np.array_equal(back.needle.points, seq.needle.points)
    assert_allclose(back.fit_errors, seq.fit_errors, rtol=0)
    for n in (1, seq.n_stages):
        assert np.array_equal(back.value(n, AWAY), seq.value(n, AWAY))
    assert sequence_text(back) == sequence_text(seq)


def test_malformed_cache(tmp_path, seq):
    lines = sequence_text(seq).splitlines()
    (tmp_path / "cut.nseq").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(InputError):
        read_sequence(tmp_path / "cut.nseq")
    (tmp_path / "hdr.nseq").write_text("\n".join(lines[1:]) + "\n")
    with pytest.raises(InputError):
        read_sequence(tmp_path / "hdr.nseq")


def test_bent_needle(small_domain, tmp_path):
    bent = make_needle(small_domain, [[0, 1, 0], [0, 0.7, 0], [0.4, 0.5, 0]])
    with pytest.raises(InputError, match="straight"):
        build_needle_sequence(small_domain, bent)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitStagnation)
        mfs = build_needle_sequence(small_domain, bent, NeedleSequenceConfig(n_max=3, method=MFS))
    assert mfs.n_stages == 3 and np.all(np.isfinite(mfs.fit_errors))
    write_sequence(tmp_path / "m.nseq", mfs)
    back = read_sequence(tmp_path / "m.nseq")
    assert np.array_equal(back.value(2, AWAY), mfs.value(2, AWAY))


def test_limit_verdicts():
    conv = limit_verdict([1.0, 1.2, 1.001, 1.0005])
    assert conv.verdict is Verdict.CONVERGED and conv.value == 1.0005
    blow = limit_verdict([1.0, 4.0, 16.0, 64.0], reference=2.0)
    assert blow.verdict is Verdict.BLOWS_UP
    assert limit_verdict([1.0, 4.0, 16.0, 64.0]).verdict is Verdict.INCONCLUSIVE
    assert limit_verdict([1.0, 4.0, 16.0, 15.0], reference=1.0).verdict is Verdict.INCONCLUSIVE
    assert limit_verdict([1.0, 1.5, 1.0]).verdict is Verdict.INCONCLUSIVE
    assert limit_verdict([1.0, 1.004], rtol=0.005).verdict is Verdict.CONVERGED
    assert np.isnan(limit_verdict([]).value)
