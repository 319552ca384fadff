
import numpy as np
import pytest

from eigenlearn.dataio import (
    DataFormatError,
    TabularDataset,
    empirical_pipeline,
    load_config,
    load_tabular,
    merge_config,
    normalize_features,
    synthetic_power_law,
    write_tabular,
)
from eigenlearn.kernel import KernelSpec
from eigenlearn.montecarlo import read_long_csv

import sweeps

NTK = KernelSpec()


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_small_labelled_file(tmp_path):
    ds = load_tabular(_write(tmp_path, "0.5,1\n-0.2,-1\n0.9,1\n"))
    assert ds.N == 3 and ds.features.shape == (3, 1)
    assert ds.labels.tolist() == [1.0, -1.0, 1.0]
    assert ds.normalization == {"kind": "none"}


def test_whitespace_comments_and_label_index(tmp_path):
    text = "# header comment\n1 2 3\n\n4 5 6\n"
    ds = load_tabular(_write(tmp_path, text), label_column=0)
    assert ds.labels.tolist() == [1.0, 4.0]
    assert ds.features.tolist() == [[2.0, 3.0], [5.0, 6.0]]
    with pytest.raises(ValueError):
        load_tabular(_write(tmp_path, text), label_column=5)


def test_non_numeric_cell_names_its_line(tmp_path):
    lines = ["1,2,1"] * 6 + ["1,abc,1"] + ["1,2,1"]
    with pytest.raises(DataFormatError, match=r":7: non-numeric cell 'abc'") as info:
        load_tabular(_write(tmp_path, "\n".join(lines)))
    assert info.value.line == 7


def test_ragged_row(tmp_path):
    with pytest.raises(DataFormatError, match="ragged") as info:
        load_tabular(_write(tmp_path, "1,2,3\n4,5\n"))
    assert info.value.line == 2


def test_empty_file(tmp_path):
    with pytest.raises(DataFormatError, match="empty"):
        load_tabular(_write(tmp_path, "# nothing here\n\n"))


def test_nan_and_single_column(tmp_path):
    with pytest.raises(DataFormatError, match="NaN"):
        load_tabular(_write(tmp_path, "1,2\nnan,1\n"))
    with pytest.raises(DataFormatError):
        load_tabular(_write(tmp_path, "1\n2\n"))


def test_distinct_errors(tmp_path):
    messages = set()
    for text in ("1,x\n", "1,2\n3\n", ""):
        with pytest.raises(DataFormatError) as info:
            load_tabular(_write(tmp_path, text))
        messages.add(str(info.value).split(": ", 1)[1].split()[0])
    assert len(messages) == 3


def test_unit_norm_rows(tmp_path):
    X = np.random.default_rng(0).standard_normal((30, 4)) * 5
    ds = TabularDataset(X, np.ones(30))
    path = tmp_path / "x.csv"
    write_tabular(path, ds)
    loaded = load_tabular(path, normalization="unit-norm")
    np.testing.assert_allclose(np.linalg.norm(loaded.features, axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        normalize_features(np.zeros((2, 2)), "unit-norm")


def test_standardize_records_parameters():
    X = np.array([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
    Z, rec = normalize_features(X, "standardize")
    np.testing.assert_allclose(Z.mean(0), 0.0, atol=1e-15)
    np.testing.assert_allclose(Z[:, 0].std(), 1.0)
    assert rec["kind"] == "standardize" and rec["mean"] == [3.0, 5.0]
    with pytest.raises(ValueError):
        normalize_features(X, "whiten")


def test_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(1)
    ds = TabularDataset(rng.standard_normal((25, 3)) * 10.0 ** rng.integers(-5, 5, (25, 3)), rng.choice([-1.0, 1.0], 25))
    path = tmp_path / "rt.csv"
    write_tabular(path, ds)
    back = load_tabular(path)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_dataset_invariants():
    with pytest.raises(ValueError):
        TabularDataset(np.ones((1, 2)), np.ones(1))
    with pytest.raises(ValueError):
        TabularDataset(np.ones((3, 2)), np.ones(2))
    with pytest.raises(ValueError):
        TabularDataset(np.array([[1.0], [np.inf]]), np.ones(2))


def test_synthetic_power_law_shape():
    ds = synthetic_power_law(300, D=10, seed=4)
    assert ds.features.shape == (300, 10)
    assert set(np.unique(ds.labels)) == {-1.0, 1.0}
    np.testing.assert_allclose(np.linalg.norm(ds.features, axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(ds.features, synthetic_power_law(300, D=10, seed=4).features)


def test_pipeline_is_deterministic():
    ds = synthetic_power_law(300, D=8, seed=2)
    a = empirical_pipeline(ds, NTK, [20, 60], trials=5, seed=11)
    b = empirical_pipeline(ds, NTK, [20, 60], trials=5, seed=11)
    assert a.rows() == b.rows()


def test_rank_one_toy_is_learned_quickly():
    # two tight clusters separated along one axis: one dominant mode carries the labels
    rng = np.random.default_rng(0)
    s = rng.choice([-1.0, 1.0], 300)
    X = np.column_stack([s, 0.02 * rng.standard_normal(300)])
    ds = TabularDataset(X / np.linalg.norm(X, axis=1, keepdims=True), s)
    res = empirical_pipeline(ds, NTK, [2, 8, 32], trials=10)
    lrn = [r["mean"] for r in res.empirical["learnability"]]
    assert lrn == sorted(lrn)
    assert lrn[-1] > 0.95


def test_pipeline_grid_limits():
    ds = synthetic_power_law(50, D=5)
    with pytest.raises(ValueError, match="n < N"):
        empirical_pipeline(ds, NTK, [50])
    with pytest.raises(ValueError):
        empirical_pipeline(ds, NTK, [0])


def test_predicted_mse_above_bound_on_power_law_data():
    res = sweeps.power_law_pipeline()
    norm2 = 1.0  # +-1 labels
    for E, L in zip(res.corrected["mse"], res.corrected["learnability"]):
        assert E >= norm2 * (1 - L) ** 2


def test_correction_beats_naive_theory():
    corrected, naive = sweeps.power_law_pipeline().abs_errors()
    assert corrected.mean() < naive.mean()


def test_pipeline_csv(tmp_path):
    res = empirical_pipeline(synthetic_power_law(200, D=6), NTK, [10, 40], trials=4)
    path = tmp_path / "p.csv"
    res.write_csv(path, experiment="toy")
    rows = read_long_csv(path)
    assert {r["quantity"] for r in rows} == {"learnability", "learnability_naive", "mse", "mse_naive"}
    assert all(r["experiment"] == "toy" and r["trials"] == 4 for r in rows)


def test_config_file_and_precedence(tmp_path):
    path = _write(tmp_path, "domain: hypercube\nd: 6\nn-grid: [4, 8]\ntrials: 20\n", "cfg.yaml")
    file_values = load_config(path)
    assert file_values == {"domain": "hypercube", "d": 6, "n_grid": [4, 8], "trials": 20}
    defaults = {"domain": "circle", "d": 8, "n_grid": [1], "trials": 100, "seed": 0}
    merged = merge_config(file_values, {"trials": 5}, defaults)
    assert merged == {"domain": "hypercube", "d": 6, "n_grid": [4, 8], "trials": 5, "seed": 0}
    with pytest.raises(ValueError, match="unknown"):
        merge_config({"colour": "red"}, {}, defaults)


def test_config_must_be_mapping(tmp_path):
    with pytest.raises(ValueError):
        load_config(_write(tmp_path, "- 1\n- 2\n", "bad.yaml"))
    assert load_config(_write(tmp_path, "", "empty.yaml")) == {}
    assert load_config(_write(tmp_path, '{"trials": 3}', "cfg.json")) == {"trials": 3}
