import numpy as np
import pytest

from dcmg.solver import TimeSeries
from dcmg.summary import summarize


def synthetic(t_end=10.0, dt=1e-3):
    """Hand-built trace: currents 50/30/20 A, one 0.5 s bus dip at t=5."""
    t = np.round(np.arange(0, t_end + dt / 2, dt), 9)
    dip = np.where((t >= 5) & (t < 5.5), -200.0, 0.0)
    v = 12000.0 + dip
    p = np.where(t >= 5, 1e5 * np.exp(-(t - 5)), 0.0)
    cols = ["t_s", "v_bus", "ig_a", "ig_b", "ig_c", "p_ess_z"]
    data = np.column_stack([t, v, np.full_like(t, 50.0), np.full_like(t, 30.0),
                            np.full_like(t, 20.0), p])
    return TimeSeries(cols, data)


def test_sharing_and_regulation():
    s = summarize(synthetic(), {"a": 5, "b": 3, "c": 2}, "bus", 12000.0, [5.0], 10.0)
    assert len(s.sharing) == 2
    assert s.max_sharing_error == pytest.approx(0.0, abs=1e-12)
    assert s.sharing[0].shares == pytest.approx({"a": 0.5, "b": 0.3, "c": 0.2})
    (r,) = s.regulation
    assert r.max_deviation == pytest.approx(200.0)
    assert r.settling_time == pytest.approx(0.5, abs=1e-3)
    assert r.offset == pytest.approx(0.0)


def test_wrong_weights_show_error():
    s = summarize(synthetic(), {"a": 1, "b": 1, "c": 1}, "bus", 12000.0, [5.0], 10.0)
    assert s.max_sharing_error == pytest.approx(0.5)


def test_not_settled():
    ts = synthetic()
    ts.data[:, 1] = np.where(ts.t >= 5, 11900.0, 12000.0)
    s = summarize(ts, {"a": 5, "b": 3, "c": 2}, "bus", 12000.0, [5.0], 10.0)
    assert not s.regulation[0].settled
    assert s.regulation[0].offset == pytest.approx(-100.0)


def test_ess_stats():
    s = summarize(synthetic(), {}, "bus", 12000.0, [5.0], 10.0)
    e = s.ess["z"]
    assert e.peak_power == pytest.approx(1e5)
    # trapezoid over the sampled jump adds half a sample at t=5
    expected = 1e5 * (1 - np.exp(-5)) + 0.5 * 1e5 * 1e-3
    assert e.net_energy == pytest.approx(expected, rel=1e-6)


def test_dict_and_text():
    s = summarize(synthetic(), {"a": 5, "b": 3, "c": 2}, "bus", 12000.0, [5.0], 10.0)
    d = s.to_dict()
    assert d["regulation"][0]["settled"] is True
    assert "shares" in s.to_text() and "+-0.5 %" in s.to_text()
