import numpy as np
import pytest

from mimal.data import (MultiSourceDataset, SourceDataset, load_multisource_csv,
                        split_kfolds, write_multisource_csv)
from mimal.errors import (FoldError, PairingError, ParseError, ShapeError)


def make_data(ns=(30, 40), p=2, k=1, seed=0, paired=False):
    rng = np.random.default_rng(seed)
    sources = []
    for m, n in enumerate(ns):
        sources.append(SourceDataset(
            source_id=m, y=rng.normal(size=n),
            X=rng.normal(size=(n, p)), Z=rng.normal(size=(n, k))))
    return MultiSourceDataset(sources=sources, paired=paired)


def test_one_dim_arrays_become_columns():
    s = SourceDataset(source_id=0, y=[1.0, 2.0], X=[0.1, 0.2], Z=[3.0, 4.0])
    assert s.X.shape == (2, 1)
    assert s.Z.shape == (2, 1)


def test_row_count_and_finiteness_validation():
    with pytest.raises(ShapeError):
        SourceDataset(source_id=0, y=[1.0, 2.0], X=np.zeros((3, 1)),
                      Z=np.zeros((2, 0)))
    with pytest.raises(ShapeError):
        SourceDataset(source_id=0, y=[1.0, np.nan], X=np.zeros((2, 1)),
                      Z=np.zeros((2, 0)))


def test_rho_is_relative_to_first_source():
    d = make_data(ns=(30, 60))
    assert np.allclose(d.rho, [1.0, 2.0])


def test_default_names():
    d = make_data()
    assert d.x_names == ["x1", "x2"]
    assert d.z_names == ["z1"]
    assert len(d.source_labels) == 2


def test_paired_requires_equal_sizes():
    with pytest.raises(PairingError):
        make_data(ns=(30, 40), paired=True)
    d = make_data(ns=(25, 25), paired=True)
    assert d.paired


def test_as_paired_roundtrip():
    d = make_data(ns=(25, 25))
    assert not d.paired
    assert d.as_paired().paired


def test_take_and_single_source():
    d = make_data()
    sub = d.take([np.arange(5), np.arange(7)])
    assert list(sub.n_per_source) == [5, 7]
    one = d.single_source(1)
    assert one.M == 1
    assert np.allclose(one.sources[0].y, d.sources[1].y)


def test_with_exposure_rotates_roles():
    d = make_data(p=2, k=1)
    v = d.with_exposure([2], [0, 1])
    assert v.x_names == ["z1"]
    assert v.z_names == ["x1", "x2"]
    assert v.p == 1 and v.k == 2
    s0 = d.sources[0]
    assert np.allclose(v.sources[0].X[:, 0], s0.Z[:, 0])
    assert np.allclose(v.sources[0].Z, s0.X)


def test_kfold_partition_properties():
    d = make_data(ns=(31, 47))
    fa = split_kfolds(d, 4, seed=3)
    for m, n in enumerate(d.n_per_source):
        got = np.sort(np.concatenate(fa.folds[m]))
        assert np.array_equal(got, np.arange(n))
        sizes = [len(f) for f in fa.folds[m]]
        assert max(sizes) - min(sizes) <= 1
        train = fa.train_indices(m, 2)
        assert len(np.intersect1d(train, fa.folds[m][2])) == 0
        assert len(train) + len(fa.folds[m][2]) == n


def test_kfold_paired_shares_partition():
    d = make_data(ns=(24, 24), paired=True)
    fa = split_kfolds(d, 3, seed=5)
    for k in range(3):
        assert np.array_equal(fa.folds[0][k], fa.folds[1][k])


def test_kfold_rejects_bad_K():
    d = make_data(ns=(6, 8))
    with pytest.raises(FoldError):
        split_kfolds(d, 1, seed=0)
    with pytest.raises(FoldError):
        split_kfolds(d, 7, seed=0)


def test_kfold_deterministic():
    d = make_data()
    a = split_kfolds(d, 3, seed=11)
    b = split_kfolds(d, 3, seed=11)
    for m in range(2):
        for k in range(3):
            assert np.array_equal(a.folds[m][k], b.folds[m][k])


def test_csv_roundtrip_bit_exact(tmp_path):
    d = make_data(ns=(12, 12), seed=9)
    path = tmp_path / "d.csv"
    write_multisource_csv(d, path)
    schema = {"source": "source", "outcome": "y",
              "exposure": ["x1", "x2"], "adjust": ["z1"]}
    back = load_multisource_csv(path, schema)
    for m in range(2):
        assert np.array_equal(back.sources[m].y, d.sources[m].y)
        assert np.array_equal(back.sources[m].X, d.sources[m].X)
        assert np.array_equal(back.sources[m].Z, d.sources[m].Z)


def test_csv_bad_cell_reports_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("site,y,x1\na,1.0,0.5\na,oops,0.5\nb,1.0,0.2\nb,1.1,0.1\n")
    with pytest.raises(ParseError) as err:
        load_multisource_csv(path, {"source": "site", "outcome": "y",
                                    "exposure": ["x1"]})
    assert "row" in str(err.value)


def test_csv_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("site,y\na,1.0\nb,2.0\n")
    with pytest.raises(ParseError):
        load_multisource_csv(path, {"source": "site", "outcome": "y",
                                    "exposure": ["x9"]})


def test_csv_single_source_rejected(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("site,y,x1\na,1.0,0.5\na,2.0,0.1\n")
    with pytest.raises(ShapeError):
        load_multisource_csv(path, {"source": "site", "outcome": "y",
                                    "exposure": ["x1"]})


def test_csv_time_column_pairs_and_sorts(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(
        "site,t,y,x1\n"
        "a,2,1.0,0.1\na,1,2.0,0.2\n"
        "b,1,3.0,0.3\nb,2,4.0,0.4\n")
    d = load_multisource_csv(path, {"source": "site", "outcome": "y",
                                    "exposure": ["x1"], "time": "t"})
    assert d.paired
    assert np.allclose(d.time_values, [1.0, 2.0])
    assert np.allclose(d.sources[0].y, [2.0, 1.0])
    assert np.allclose(d.sources[1].y, [3.0, 4.0])


def test_csv_time_mismatch_rejected(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(
        "site,t,y,x1\n"
        "a,1,1.0,0.1\na,2,2.0,0.2\n"
        "b,1,3.0,0.3\nb,3,4.0,0.4\n")
    with pytest.raises(PairingError):
        load_multisource_csv(path, {"source": "site", "outcome": "y",
                                    "exposure": ["x1"], "time": "t"})
