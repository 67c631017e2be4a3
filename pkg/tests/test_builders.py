import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinlab import oracles
from tinlab.builders import (IndicatorNetworkSpec, Init, build, build_cci_in, build_ma_in, build_macd_in,
                             build_q_in, build_roc_in, build_rsi_in, build_stoch_in, ema_weights,
                             qnet_hidden_windows, sma_weights, verify_replication)
from tinlab.dqn import QNetwork
from tinlab.errors import ConfigurationError, FormatError, UsageError
from tests import naive


def test_sma_weights():
    np.testing.assert_array_equal(sma_weights(1), [1.0])
    np.testing.assert_array_equal(sma_weights(4), [0.25] * 4)
    assert abs(sma_weights(26).sum() - 1) <= 1e-15
    with pytest.raises(ConfigurationError):
        sma_weights(0)


def test_ema_weights():
    np.testing.assert_array_equal(ema_weights(1), [1.0])
    np.testing.assert_allclose(ema_weights(2), [0.25, 0.75], atol=1e-16)
    with pytest.raises(ConfigurationError):
        ema_weights(0)
    # oldest first, so the lag-indexed oracle weights come out reversed
    np.testing.assert_allclose(ema_weights(9)[::-1], oracles.truncated_ema_weights(9), atol=1e-16)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 512))
def test_weight_sanity(n):
    assert abs(sma_weights(n).sum() - 1) <= 1e-12
    w = ema_weights(n)
    assert abs(w.sum() - 1) <= 1e-12
    assert np.all(np.diff(w) > 0) or n == 1


def test_init_parsing():
    assert Init.parse("PerturbedReplicate(0.1)").sigma == 0.1
    r = Init.parse("RandomUniform(-0.1, 0.1)")
    assert (r.lo, r.hi) == (-0.1, 0.1)
    assert Init.parse("ReplicateEMA").replicates
    assert Init.parse("PerturbedReplicate(0)").replicates
    assert not Init.parse("PerturbedReplicate(0.1)").replicates
    for bad in ("Bogus", "RandomUniform(1)", "PerturbedReplicate(-1)", "ReplicateSMA(1)"):
        with pytest.raises(ConfigurationError):
            Init.parse(bad)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        IndicatorNetworkSpec("MACD", {"fast": 26, "slow": 12, "signal": 9})
    with pytest.raises(ConfigurationError):
        IndicatorNetworkSpec("MA", {"n": 0})
    with pytest.raises(ConfigurationError):
        IndicatorNetworkSpec("MA", {})
    with pytest.raises(ConfigurationError):
        IndicatorNetworkSpec("QNET", input_len=52)
    with pytest.raises(ConfigurationError):
        IndicatorNetworkSpec("WILLR", {"n": 3})
    with pytest.raises(ConfigurationError):
        IndicatorNetworkSpec("MA", {"n": 5}, input_len=3)
    with pytest.raises(ConfigurationError):
        IndicatorNetworkSpec("MA", {"n": 5}, feature_dim=0)


def test_ma_examples():
    assert build_ma_in(5).run(x=[1, 2, 3, 4, 5])["ma"] == pytest.approx(3.0, abs=1e-15)
    assert build_ma_in(2, init="ReplicateEMA").run(x=[1, 2])["ma"] == pytest.approx(1.75, abs=1e-15)
    a = build_ma_in(4, init="PerturbedReplicate(0)", ma_mode="sma")
    b = build_ma_in(4)
    x = [3.0, 1.0, 4.0, 1.5]
    assert a.run(x=x)["ma"] == b.run(x=x)["ma"]


def test_macd_examples(rng):
    out = build_macd_in(12, 26, 9).run(x=[5.0] * 34)
    for k in ("macd", "signal", "histogram"):
        assert abs(out[k]) <= 1e-12
    x = naive.random_ohlc(rng, 300)[0]
    net = build_macd_in(12, 26, 9)
    rep = verify_replication(net, {"values": x}, 1e-9)
    assert rep.passed, rep
    flipped = build(IndicatorNetworkSpec("MACD", {"fast": 12, "slow": 26, "signal": 9}, init="ReplicateEMA",
                                         conventional=True))
    a, b = net.run_series(x=x), flipped.run_series(x=x)
    for k in ("macd", "signal", "histogram"):
        np.testing.assert_array_equal(a[k], -b[k])


def test_rsi_roc_examples(rng):
    assert build_rsi_in(14).run(x=np.arange(1.0, 16.0))["rsi"] == pytest.approx(100, abs=1e-6)
    assert build_roc_in(5).run(x=[7.0] * 6)["roc"] == 0.0
    x = naive.random_ohlc(rng, 300)[0]
    for net in (build_rsi_in(14), build_roc_in(12)):
        assert verify_replication(net, {"values": x}, 1e-6).passed


def test_stoch_cci_examples(rng):
    h = np.array([5.0, 6, 7, 8, 9])
    lo = h - 2
    k = build_stoch_in(5, 1).run(high=h, low=lo, close=h)["k"]
    assert k == pytest.approx(100, abs=1e-6)
    c = build_cci_in(4).run(high=[3.0] * 4, low=[3.0] * 4, close=[3.0] * 4)["cci"]
    assert c == 0.0
    close, high, low, _ = naive.random_ohlc(rng, 300)
    data = {"values": close, "high": high, "low": low, "close": close}
    for net in (build_stoch_in(14, 3), build_cci_in(20)):
        rep = verify_replication(net, data, 1e-6)
        assert rep.passed, rep


def test_verify_replication_rejects_trained_and_perturbed(rng):
    x = naive.random_ohlc(rng, 60)[0]
    net = build_ma_in(5)
    net.trained = True
    with pytest.raises(UsageError):
        verify_replication(net, {"values": x}, 1e-9)
    with pytest.raises(UsageError):
        verify_replication(build_ma_in(5, init="PerturbedReplicate(0.1)"), {"values": x}, 1e-9)


def test_corrupted_weight_fails(rng):
    x = naive.random_ohlc(rng, 100)[0]
    net = build_macd_in(12, 26, 9)
    p = next(iter(net.graph.trainable_parameters().values()))
    p.tensor.values[0] += 1e-3
    rep = verify_replication(net, {"values": x}, 1e-9)
    assert not rep.passed
    assert rep.argmax >= net.input_len - 1


def test_qnet_parameter_counts():
    assert build_q_in().parameter_count() == 52 * 26 + 26 * 3 == 1430
    assert build_q_in(feature_dim=2).parameter_count() == 2 * 52 * 26 + 26 * 3 == 2782


def test_qnet_zero_input_gives_zero():
    out = build_q_in().run(obs=np.zeros(52))
    assert all(out[f"q{a}"] == 0.0 for a in range(3))


def test_qnet_hidden_windows_span():
    w = qnet_hidden_windows(52, 26)
    assert w[0] == 2 and w[-1] == 26 and len(w) == 26


def test_qnet_graph_matches_dense_kernel(rng):
    net = build_q_in(feature_dim=2, activation="relu", init="PerturbedReplicate(0.05)")
    q = QNetwork(net)
    x = rng.normal(size=104)
    out = net.run(obs=x)
    np.testing.assert_allclose([out[f"q{a}"] for a in range(3)], q.q_values(x), rtol=1e-12, atol=1e-14)


def test_traditional_subset_embedding(rng):
    """A fixed MACD line is a point in QNET weight space."""
    fast, slow = 12, 26
    q = QNetwork(build_q_in(input_len=52, hidden=26))
    q.w1[...] = 0.0
    q.w2[...] = 0.0
    q.w1[0, 52 - fast:] = ema_weights(fast)
    q.w1[1, 52 - slow:] = ema_weights(slow)
    q.w2[0, 0], q.w2[0, 1] = -1.0, 1.0
    x = naive.random_ohlc(rng, 300)[0]
    windows = np.lib.stride_tricks.sliding_window_view(x, 52)
    line = oracles.macd(x, fast, slow, 1)[0]
    np.testing.assert_allclose(q.q_batch(np.ascontiguousarray(windows))[:, 0], line[51 - (slow - 1):],
                               rtol=0, atol=1e-9)
    # the graph view sees the same weights
    assert abs(q.net.run(obs=windows[-1])["q0"] - line[-1]) <= 1e-9


@pytest.mark.parametrize("spec", [
    IndicatorNetworkSpec("MA", {"n": 5}),
    IndicatorNetworkSpec("MACD", {"fast": 5, "slow": 12, "signal": 4}, init="ReplicateEMA", conventional=True),
    IndicatorNetworkSpec("RSI", {"n": 7}, eps=1e-8),
    IndicatorNetworkSpec("STOCH", {"n": 5, "m": 3}, init="PerturbedReplicate(0.01)", seed=4),
    IndicatorNetworkSpec("CCI", {"n": 9}),
    IndicatorNetworkSpec("QNET", feature_dim=2, input_len=20, hidden=5, init="RandomUniform(-0.1,0.1)",
                         activation="relu", channels=("price", "obv")),
])
def test_spec_round_trip(spec):
    text = spec.dumps()
    again = IndicatorNetworkSpec.loads(text)
    assert again == spec
    assert again.dumps() == text
    assert build(again).graph.signature() == build(spec).graph.signature()


def test_spec_loads_errors():
    with pytest.raises(FormatError):
        IndicatorNetworkSpec.loads("kind = MA\nwindow.n = 3\ncolour = red\n")
    with pytest.raises(FormatError):
        IndicatorNetworkSpec.loads("window.n = 3\n")
    with pytest.raises(FormatError):
        IndicatorNetworkSpec.loads("kind MA\n")
