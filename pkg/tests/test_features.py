import numpy as np
import pytest

from lterain.errors import DataError
from lterain.features import (
    HistogramSpec,
    estimate_pdf,
    feature_header,
    feature_tensor,
    fit_histogram_spec,
    node_features,
    write_features_csv,
)
from lterain.ingest import LteTable


def _table(rsrp, sinr, rssi, outdoor):
    n = len(rsrp)
    return LteTable(ids=np.arange(n), lat=np.full(n, 40.5), lon=np.full(n, 116.0), rat=np.zeros(n),
                    operator=np.zeros(n), rsrp=rsrp, sinr=sinr, rssi=rssi, outdoor=outdoor,
                    timestamp=np.zeros(n))


def _random_table(rng, n):
    rsrp = rng.integers(-140, -60, size=n)
    return _table(rsrp, rng.integers(-20, 30, size=n), rsrp + 28, rng.random(n) < 0.4)


SPEC = HistogramSpec(5, (-140, -20, -112), (-60, 30, -32))


class TestHistogramSpec:
    def test_degenerate_range_rejected(self):
        t = _table([-100], [5], [-72], [True])
        with pytest.raises(DataError, match="widen"):
            fit_histogram_spec(t)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            fit_histogram_spec(_table([], [], [], []))

    def test_small_k_rejected(self):
        with pytest.raises(DataError):
            HistogramSpec(1, (0, 0, 0), (1, 1, 1))

    def test_min_max(self, rng):
        t = _random_table(rng, 500)
        spec = fit_histogram_spec(t)
        assert spec.mins == (t.rsrp.min(), t.sinr.min(), t.rssi.min())
        assert spec.maxs == (t.rsrp.max(), t.sinr.max(), t.rssi.max())
        assert spec.k == 5 and spec.feature_dim == 16

    def test_union_associativity(self, rng):
        a, b = _random_table(rng, 300), _random_table(rng, 300)
        whole = fit_histogram_spec(LteTable.concat([a, b]))
        sa, sb = fit_histogram_spec(a), fit_histogram_spec(b)
        assert whole.mins == tuple(min(x, y) for x, y in zip(sa.mins, sb.mins))
        assert whole.maxs == tuple(max(x, y) for x, y in zip(sa.maxs, sb.maxs))

    def test_dict_round_trip(self):
        assert HistogramSpec.from_dict(SPEC.to_dict()) == SPEC


class TestEstimatePdf:
    def test_one_bin_one_hot(self):
        p = estimate_pdf([-140, -139, -130], SPEC, "rsrp")
        assert p.tolist() == [1, 0, 0, 0, 0]

    def test_uniform_tiling(self):
        spec = HistogramSpec(5, (0, 0, 0), (10, 10, 10))
        # width-2 bins over [0, 10]; 0..9 puts two integers in each
        values = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
        assert np.allclose(estimate_pdf(values, spec, "sinr"), 0.2)

    def test_last_bin_closed(self):
        assert estimate_pdf([-60], SPEC, "rsrp").tolist() == [0, 0, 0, 0, 1]

    def test_bin_edges_match_numpy(self, rng):
        v = rng.integers(-140, -59, size=2000)
        ref, _ = np.histogram(v, bins=5, range=(-140, -60))
        assert np.allclose(estimate_pdf(v, SPEC, "rsrp"), ref / len(v))

    def test_out_of_range_names_value(self):
        with pytest.raises(DataError, match="-141"):
            estimate_pdf([-100, -141], SPEC, "rsrp")

    def test_empty_is_zero(self):
        assert estimate_pdf([], SPEC, "rsrp").tolist() == [0.0] * 5

    def test_sums_to_one(self, rng):
        p = estimate_pdf(rng.integers(-20, 31, size=777), SPEC, "sinr")
        assert abs(p.sum() - 1) < 1e-12

    def test_converges_to_true_law(self, rng):
        spec = HistogramSpec(5, (0, 0, 0), (4, 4, 4))
        law = np.array([0.1, 0.35, 0.05, 0.3, 0.2])
        errs = []
        for size in (10_000, 100_000, 1_000_000):
            p = estimate_pdf(rng.choice(5, size=size, p=law), spec, "rsrp")
            errs.append(np.abs(p - law).max())
        assert errs[1] < 0.02
        assert errs[2] < errs[1] < errs[0]


class TestNodeFeatures:
    def test_layout_and_length(self, rng):
        t = _random_table(rng, 200)
        f = node_features(t, SPEC)
        assert f.vector.shape == (16,) and f.valid
        for j in range(3):
            assert abs(f.vector[5 * j:5 * j + 5].sum() - 1) < 1e-9
        assert np.all((f.vector >= 0) & (f.vector <= 1))
        assert f.vector[0:5].tolist() == estimate_pdf(t.rsrp, SPEC, "rsrp").tolist()
        assert f.vector[5:10].tolist() == estimate_pdf(t.sinr, SPEC, "sinr").tolist()
        assert f.vector[10:15].tolist() == estimate_pdf(t.rssi, SPEC, "rssi").tolist()

    def test_pou(self):
        t = _table([-100] * 4, [0] * 4, [-72] * 4, [True, True, True, True])
        assert node_features(t, SPEC).vector[-1] == 1.0
        t = _table([-100] * 4, [0] * 4, [-72] * 4, [True, False, False, False])
        assert node_features(t, SPEC).vector[-1] == 0.25

    def test_order_invariance(self, rng):
        t = _random_table(rng, 300)
        shuffled = t.subset(rng.permutation(len(t)))
        assert np.array_equal(node_features(t, SPEC).vector, node_features(shuffled, SPEC).vector)

    def test_duplication_invariance(self, rng):
        t = _random_table(rng, 300)
        doubled = LteTable.concat([t, t])
        assert np.allclose(node_features(t, SPEC).vector, node_features(doubled, SPEC).vector, atol=1e-15)

    def test_empty_node(self):
        f = node_features(_table([], [], [], []), SPEC)
        assert not f.valid and np.all(f.vector == 0) and len(f.vector) == 16

    def test_disjoint_samples_converge(self, rng):
        def gap(n):
            a, b = _random_table(rng, n), _random_table(rng, n)
            return np.abs(node_features(a, SPEC).vector - node_features(b, SPEC).vector).sum()

        small = np.mean([gap(200) for _ in range(5)])
        large = np.mean([gap(20000) for _ in range(5)])
        assert large < small / 3


class TestFeatureTensor:
    def test_matches_node_features(self, rng):
        t = _random_table(rng, 600)
        cluster = rng.integers(0, 4, size=600)
        window = rng.integers(0, 3, size=600)
        cluster[window == 2] = np.where(cluster[window == 2] == 1, 0, cluster[window == 2])
        feats, valid = feature_tensor(t, cluster, window, 4, 3, SPEC)
        assert feats.shape == (3, 4, 16)
        for w in range(3):
            for c in range(4):
                sel = np.flatnonzero((cluster == c) & (window == w))
                ref = node_features(t.subset(sel), SPEC)
                assert valid[w, c] == ref.valid
                assert np.allclose(feats[w, c], ref.vector, atol=1e-15)
        assert not valid[2, 1]

    def test_csv_export(self, tmp_path, rng):
        t = _random_table(rng, 50)
        feats, valid = feature_tensor(t, np.zeros(50, int), np.zeros(50, int), 1, 1, SPEC)
        p = tmp_path / "f.csv"
        write_features_csv(feats, valid, 5, p)
        lines = p.read_text().splitlines()
        assert lines[0].split(",") == ["window", "station", "valid"] + feature_header(5)
        assert len(lines) == 2 and len(lines[1].split(",")) == 19
