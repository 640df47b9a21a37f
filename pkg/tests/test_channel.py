import numpy as np
import pytest
from scipy import stats

from latefuse.comms import Bus, ChannelParams, Outcome, channel_sample, delay_quantile, p_drop

P = ChannelParams()


def test_drop_tiers():
    assert p_drop(200, P) == 0.0
    assert p_drop(400, P) == 0.0
    assert p_drop(401, P) == 0.08
    assert p_drop(900, P) == 0.08
    assert p_drop(1000, P) == 0.10


def test_quantiles_match_lognormal_oracle():
    for size in (200, 800, 1000):
        for q in (0.05, 0.5, 0.95):
            oracle = P.k_ms_per_byte * size + stats.lognorm.ppf(q, s=P.sigma, scale=np.exp(P.mu))
            assert delay_quantile(q, size, P) == pytest.approx(oracle, rel=1e-12)


def test_empirical_calibration():
    rng = np.random.default_rng(9)
    for size, pd in ((200, 0.0), (800, 0.08), (1000, 0.10)):
        outs = [channel_sample(size, P, rng) for _ in range(20_000)]
        delays = np.array([o.delay_ms for o in outs if not o.dropped])
        assert abs(1 - len(delays) / len(outs) - pd) < 0.01
        for q in (0.5, 0.95):
            assert np.quantile(delays, q) == pytest.approx(delay_quantile(q, size, P), rel=0.03)


def test_disabled_impairments():
    rng = np.random.default_rng(0)
    off = ChannelParams(delay_enabled=False, drop_enabled=False)
    assert all(channel_sample(1400, off, rng) == Outcome(False, 0.0) for _ in range(500))


def test_toggles_share_the_random_stream():
    nodrop = ChannelParams(drop_enabled=False)
    ra, rb = np.random.default_rng(3), np.random.default_rng(3)
    for _ in range(200):
        x, y = channel_sample(1000, P, ra), channel_sample(1000, nodrop, rb)
        if not x.dropped:
            assert x == y


def test_params_validation():
    with pytest.raises(ValueError):
        ChannelParams(sigma=0.0)
    with pytest.raises(ValueError):
        ChannelParams(drop_above=1.5)
    with pytest.raises(ValueError):
        channel_sample(0, P, np.random.default_rng(0))


def test_bus_zero_delay_delivers_immediately():
    bus = Bus(ChannelParams(delay_enabled=False, drop_enabled=False), receivers=[1, 2])
    bus.publish(1, b"hello", 1_000)
    assert bus.poll(2, 1_000) == [(b"hello", 1_000)]
    assert bus.poll(1, 10_000) == []  # no self-delivery


def test_bus_availability_and_at_most_once():
    bus = Bus(ChannelParams(drop_enabled=False), seed=0, receivers=[1, 2])
    out = bus.publish(1, b"x" * 200, 0)
    arrival = int(round(out[2].delay_ms * 1000))
    assert bus.poll(2, arrival - 1) == []
    assert bus.poll(2, arrival) == [(b"x" * 200, arrival)]
    assert bus.poll(2, arrival + 10**9) == []


def test_bus_orders_by_arrival_then_publish():
    bus = Bus(ChannelParams(delay_enabled=False, drop_enabled=False), receivers=[1, 2, 3])
    bus.publish(1, b"late", 50)
    bus.publish(3, b"first", 10)
    bus.publish(1, b"second", 10)
    assert [d for d, _ in bus.poll(2, 100)] == [b"first", b"second", b"late"]


def test_bus_drops_are_per_receiver():
    always = ChannelParams(drop_tiers=(), drop_above=1.0)
    bus = Bus(always, receivers=[1, 2])
    assert bus.publish(1, b"z", 0)[2].dropped
    assert bus.poll(2, 10**12) == [] and bus.pending(2) == 0
    half = ChannelParams(drop_tiers=(), drop_above=0.5, delay_enabled=False)
    bus = Bus(half, seed=5, receivers=list(range(1, 11)))
    outs = bus.publish(1, b"z", 0)
    dropped = {r for r, o in outs.items() if o.dropped}
    assert 0 < len(dropped) < 9
    for r in range(2, 11):
        assert (bus.poll(r, 0) == []) == (r in dropped)
