import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from liftkit import liftnet as L
from liftkit.attribution import (
    LinearSurrogate,
    Normalization,
    SaliencyMap,
    aggregate_saliency,
    dataset_saliency,
    read_pgm,
    render_heatmap,
    saliency,
)
from liftkit.errors import ShapeError
from liftkit.windowing import Dataset, Label, Window

maps_strategy = hnp.arrays(np.float64, (4, 5), elements=st.floats(0, 10))


def tiny(seed=0):
    return L.init_model(L.ModelConfig(window_len=3, n_channels=2, lstm_hidden=4, seed=seed))


# ---------------------------------------------------------------- saliency

def test_linear_surrogate_matches_weights():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(10, 6))
    x = rng.normal(size=(10, 6))
    s = saliency(LinearSurrogate(w, 0.3), x)
    assert np.max(np.abs(s.values - np.abs(w) / np.abs(w).max())) <= 1e-9
    raw = saliency(LinearSurrogate(w, 0.3), x, Normalization.Raw)
    p = 1 / (1 + np.exp(-(np.sum(w * x) + 0.3)))
    assert np.allclose(raw.values, p * (1 - p) * np.abs(w), rtol=1e-12)


@pytest.mark.parametrize("wrt", ["prob", "logit"])
def test_saliency_matches_finite_differences(wrt):
    for seed in range(5):
        m = tiny(seed)
        rng = np.random.default_rng(seed)
        for v in m.params.values():
            v += rng.normal(0, 0.5, v.shape)
        x = rng.normal(size=(3, 2))

        def out(xx):
            p = L.forward(m, xx)
            return p if wrt == "prob" else np.log(p / (1 - p))

        fd = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            up, down = x.copy(), x.copy()
            up[idx] += 1e-5
            down[idx] -= 1e-5
            fd[idx] = (out(up) - out(down)) / 2e-5
        s = saliency(m, x, Normalization.Raw, wrt).values
        rel = np.abs(s - np.abs(fd)) / np.maximum(np.abs(fd), 1e-6)
        assert rel.max() <= 1e-3


def test_zero_model_gives_zero_map():
    m = tiny()
    for v in m.params.values():
        v[...] = 0.0
    s = saliency(m, np.ones((3, 2)), Normalization.Raw)
    assert np.all(s.values == 0.0)
    assert np.all(saliency(m, np.ones((3, 2))).values == 0.0)


def test_saliency_shape_errors():
    with pytest.raises(ShapeError):
        saliency(tiny(), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        saliency(LinearSurrogate(np.ones((3, 2))), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        SaliencyMap(np.array([[-1.0]]))


@given(maps_strategy)
def test_maxone_normalization(raw):
    v = SaliencyMap(raw).values
    assert np.all(v >= 0)
    if raw.max() > 0:
        assert v.max() == 1.0


def test_dataset_saliency_filters_by_label():
    m = tiny()
    ws = [Window("T", i, np.full((3, 2), float(i)), Label(i % 2)) for i in range(6)]
    assert len(dataset_saliency(m, ws)) == 6
    lifts = dataset_saliency(m, ws, label=Label.Lift)
    assert len(lifts) == 3
    assert lifts[0].normalization is Normalization.Raw


# ---------------------------------------------------------------- aggregate

def test_aggregate_examples():
    one = np.zeros((4, 3))
    one[:, 1] = 2.0
    r = aggregate_saliency([SaliencyMap(one)], ["a", "b", "c"])
    assert r.share("b") == 1.0 and r.top(1) == ["b"]
    r = aggregate_saliency([SaliencyMap(np.ones((4, 3)))] * 2, ["a", "b", "c"])
    assert r.names() == ["a", "b", "c"]
    assert all(abs(s - 1 / 3) < 1e-15 for _, s in r.entries)
    m1 = np.tile([2.0, 1.0], (3, 1))
    m2 = np.tile([6.0, 3.0], (3, 1))
    r = aggregate_saliency([SaliencyMap(m1), SaliencyMap(m2)], ["A", "B"])
    assert abs(r.share("A") - 2 * r.share("B")) < 1e-12
    assert r.to_csv().splitlines()[0] == "channel,share"


def test_aggregate_uses_raw_values():
    big = np.zeros((2, 2))
    big[:, 0] = 100.0
    small = np.zeros((2, 2))
    small[:, 1] = 1.0
    r = aggregate_saliency([SaliencyMap(big), SaliencyMap(small)], ["x", "y"])
    assert r.top(1) == ["x"] and r.share("x") == pytest.approx(100 / 101)


def test_aggregate_errors():
    with pytest.raises(ShapeError):
        aggregate_saliency([SaliencyMap(np.ones((2, 2))), SaliencyMap(np.ones((3, 2)))])
    with pytest.raises(ShapeError):
        aggregate_saliency([SaliencyMap(np.ones((2, 2)))], ["only"])
    with pytest.raises(ValueError):
        aggregate_saliency([])


@given(st.lists(maps_strategy, min_size=1, max_size=4), st.permutations(range(5)))
def test_aggregate_shares_and_permutation_equivariance(raws, perm):
    names = [f"c{i}" for i in range(5)]
    r = aggregate_saliency([SaliencyMap(x) for x in raws], names)
    shares = [s for _, s in r.entries]
    assert abs(sum(shares) - 1.0) <= 1e-9
    assert shares == sorted(shares, reverse=True)
    perm = list(perm)
    rp = aggregate_saliency([SaliencyMap(x[:, perm]) for x in raws], [names[i] for i in perm])
    for name in names:
        assert rp.share(name) == pytest.approx(r.share(name), abs=1e-12)


# ---------------------------------------------------------------- heatmap

def test_render_examples(tmp_path):
    hm = render_heatmap(SaliencyMap(np.array([[0.0, 1.0], [1.0, 0.0]])), ["a", "b"], tmp_path / "h")
    assert read_pgm(hm.pgm).tolist() == [[0, 255], [255, 0]]
    assert (tmp_path / "h.pgm").read_bytes() == hm.pgm
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "frame,a,b"
    black = render_heatmap(SaliencyMap(np.zeros((3, 2))), ["a", "b"])
    assert np.all(read_pgm(black.pgm) == 0)
    with pytest.raises(ShapeError):
        render_heatmap(SaliencyMap(np.ones((2, 2))), ["a"])


@given(maps_strategy.filter(lambda a: a.max() > 0))
def test_render_maxone_has_full_pixel(raw):
    px = read_pgm(render_heatmap(SaliencyMap(raw), [str(i) for i in range(5)]).pgm)
    assert px.shape == (4, 5) and px.max() == 255


# ---------------------------------------------------------------- ranking recovers the informative channel

def channel_k_dataset(k, n, seed, C=6, T=10):
    rng = np.random.default_rng(seed)
    ws = []
    for i in range(n):
        lab = i % 2
        d = rng.normal(0, 1.0, (T, C))
        d[:, k] += 1.5 if lab else -1.5
        ws.append(Window("S", i, d, Label(lab)))
    return Dataset(tuple(ws), T, tuple(f"c{j}" for j in range(C)))


def test_ranking_finds_the_informative_channel():
    k = 3
    hits = 0
    for seed in range(5):
        ds = channel_k_dataset(k, 200, seed)
        m = L.init_model(L.with_layout(L.ModelConfig(seed=seed, lstm_hidden=32), ds))
        m, _ = L.train(m, ds, L.TrainConfig(epochs=15, seed=seed))
        ranking = aggregate_saliency(dataset_saliency(m, ds.windows), ds.channel_layout)
        hits += ranking.top(1) == [f"c{k}"]
    assert hits >= 3
