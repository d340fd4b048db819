import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from vifa.data import (DataError, Dataset, GeneratingParams, decode_one_hot, load_csv, one_hot,
                       save_csv, simple_structure_template, simulate, template, write_simulation)
from vifa.encoder import default_hidden_size


def test_load_minimal(tmp_path):
    p = tmp_path / "y.csv"
    p.write_text("0,1\n1,0\n")
    d = load_csv(p)
    assert (d.n_respondents, d.n_items) == (2, 2)
    assert d.category_counts.tolist() == [2, 2]


def test_load_with_header_and_delimiter(tmp_path):
    p = tmp_path / "y.tsv"
    p.write_text("q1\tq2\n0\t2\n1\t0\n")
    d = load_csv(p, delimiter="\t")
    assert d.responses.tolist() == [[0, 2], [1, 0]]
    assert d.category_counts.tolist() == [2, 3]


def test_load_rejects_non_integer(tmp_path):
    p = tmp_path / "y.csv"
    p.write_text("0,1\n2.5,0\n")
    with pytest.raises(DataError, match=r"'2.5'.*row 2, column 1"):
        load_csv(p)


def test_load_rejects_ragged(tmp_path):
    p = tmp_path / "y.csv"
    p.write_text("0,1\n1\n")
    with pytest.raises(DataError, match="columns"):
        load_csv(p)


def test_load_rejects_missing_cell(tmp_path):
    p = tmp_path / "y.csv"
    p.write_text("0,1\n,1\n")
    with pytest.raises(DataError, match="missing"):
        load_csv(p)


def test_load_rejects_single_category(tmp_path):
    p = tmp_path / "y.csv"
    p.write_text("0,1\n0,0\n")
    with pytest.raises(DataError, match="single observed category"):
        load_csv(p)


def test_category_override(tmp_path):
    p = tmp_path / "y.csv"
    p.write_text("0,1\n1,0\n")
    d = load_csv(p, category_counts=[4, 3])
    assert d.category_counts.tolist() == [4, 3]


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.array([[0, 3]]), np.array([2, 3]))
    with pytest.raises(DataError):
        Dataset(np.array([[0, 0]]), np.array([1, 3]))


def test_one_hot_examples():
    d = Dataset(np.array([[1]]), np.array([3]))
    assert one_hot(d).rows.tolist() == [[0, 1, 0]]
    d = Dataset(np.array([[0, 2]]), np.array([2, 3]))
    enc = one_hot(d)
    assert enc.rows.tolist() == [[1, 0, 0, 0, 1]]
    assert enc.offsets.tolist() == [0, 2]


def test_one_hot_width_matches_hidden_size_rule():
    d = Dataset(np.zeros((1, 50), dtype=int), np.full(50, 5))
    width = one_hot(d).rows.shape[1]
    assert width == 250
    assert default_hidden_size(width, 5) == 130


@st.composite
def datasets(draw):
    J = draw(st.integers(1, 6))
    N = draw(st.integers(1, 12))
    counts = np.array(draw(st.lists(st.integers(2, 6), min_size=J, max_size=J)))
    y = np.array([[draw(st.integers(0, c - 1)) for c in counts] for _ in range(N)])
    return Dataset(y, counts)


@given(datasets())
@settings(max_examples=60, deadline=None)
def test_one_hot_round_trip(d):
    enc = one_hot(d)
    assert enc.rows.shape[1] == d.category_counts.sum()
    for j, off in enumerate(enc.offsets):
        assert np.all(enc.rows[:, off:off + d.category_counts[j]].sum(axis=1) == 1)
    np.testing.assert_array_equal(decode_one_hot(enc, d.category_counts), d.responses)


def _zero_loading_params(alpha_rows):
    J = len(alpha_rows)
    return GeneratingParams(np.zeros((J, 2)), alpha_rows, np.eye(2))


def test_simulate_zero_loadings_binary_marginal():
    # Pr(y >= 1 | x) = logistic(D * alpha) = 0.5 at alpha = 0, whatever x is
    gp = _zero_loading_params([np.array([0.0])])
    d = simulate(gp, 100_000, seed=3)
    assert abs(d.responses.mean() - 0.5) < 0.01


def test_simulate_zero_loadings_goodness_of_fit():
    alpha = [np.array([1.0, 0.2, -0.9]), np.array([0.5, -0.5])]
    gp = _zero_loading_params(alpha)
    d = simulate(gp, 100_000, seed=11)
    for j, a in enumerate(alpha):
        bound = np.concatenate([[1.0], 1 / (1 + np.exp(-gp.scaling * a)), [0.0]])
        expected = -np.diff(bound) * d.n_respondents
        observed = np.bincount(d.responses[:, j], minlength=a.size + 1)
        assert stats.chisquare(observed, expected).pvalue > 0.001


def test_simulate_deterministic(tmp_path):
    gp = simple_structure_template()
    a = simulate(gp, 200, seed=5)
    b = simulate(gp, 200, seed=5)
    assert a.responses.tobytes() == b.responses.tobytes()
    write_simulation(a, gp, 5, tmp_path / "a.csv", tmp_path / "a.json")
    write_simulation(b, gp, 5, tmp_path / "b.csv", tmp_path / "b.json")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    side = json.loads((tmp_path / "a.json").read_text())
    assert side["seed"] == 5
    back = GeneratingParams.from_json(side["generating_params"])
    np.testing.assert_array_equal(back.loadings, gp.loadings)


def test_simulate_satisfies_invariants():
    gp = simple_structure_template()
    d = simulate(gp, 500, seed=1)
    assert d.responses.shape == (500, 50)
    assert d.responses.min() >= 0 and np.all(d.responses < gp.category_counts)


def test_simulate_rejects_indefinite_corr():
    bad = np.array([[1.0, 0.99, 0.0], [0.99, 1.0, 0.99], [0.0, 0.99, 1.0]])
    gp = GeneratingParams(np.zeros((3, 3)), [np.array([0.0])] * 3, bad)
    with pytest.raises(DataError, match="positive definite"):
        simulate(gp, 10, seed=0)


def test_generating_params_validation():
    with pytest.raises(DataError, match="strictly decreasing"):
        GeneratingParams(np.zeros((1, 1)), [np.array([0.0, 0.5])], np.eye(1))
    with pytest.raises(DataError, match="unit diagonal"):
        GeneratingParams(np.zeros((1, 2)), [np.array([0.0])], np.array([[1.0, 0.2], [0.3, 1.0]]))


def test_five_factor_template_design():
    gp = template("five-factor")
    assert gp.loadings.shape == (50, 5)
    assert gp.category_counts.tolist() == [5] * 50
    # perfect simple structure: exactly one non-zero loading per item, ten items per factor
    assert np.all((gp.loadings != 0).sum(axis=1) == 1)
    assert (gp.loadings != 0).sum(axis=0).tolist() == [10] * 5


def test_binary_template():
    gp = template("binary", 200, seed=2)
    assert gp.loadings.shape == (200, 10)
    assert set(gp.category_counts.tolist()) == {2}
    np.linalg.cholesky(gp.factor_corr)


def test_save_csv_round_trip(tmp_path, tiny_dataset):
    save_csv(tiny_dataset, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", category_counts=tiny_dataset.category_counts)
    np.testing.assert_array_equal(back.responses, tiny_dataset.responses)
