import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ufpfts.data import (ColumnSchema, DataError, Dataset, Run, inverse_outcome,
                         load_dataset, transform_outcome, validate, write_csv)
from ufpfts.synthetic import desk_truth, simulate_dataset


def _csv(rows, header="run,window,time,size_bin,count"):
    return (header + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n").encode()


def test_transform_examples():
    assert transform_outcome(0) == pytest.approx(2.302585, abs=1e-6)
    assert transform_outcome(90) == pytest.approx(4.605170, abs=1e-6)
    assert inverse_outcome(transform_outcome(1234.5)) == pytest.approx(1234.5, abs=1e-9)


@pytest.mark.parametrize("bad", [-1.0, math.inf, math.nan])
def test_transform_rejects(bad):
    with pytest.raises(ValueError):
        transform_outcome(bad)


def test_transform_roundtrip_grid():
    x = np.concatenate([[0.0], np.geomspace(1e-3, 1e7, 2000)])
    back = inverse_outcome(transform_outcome(x))
    np.testing.assert_allclose(back[1:], x[1:], rtol=1e-9)
    assert abs(back[0]) < 1e-12
    assert np.all(np.diff(transform_outcome(x)) > 0)


def test_load_all_zero_grid():
    rows = [(1, 0, t, s, 0) for t in (-2, 0, 2) for s in (1, 2, 3)]
    ds, rep = load_dataset(_csv(rows))
    assert ds.n_runs == 1 and ds.n_bins == 3
    np.testing.assert_allclose(ds.y[0], np.log(10.0))
    assert ds.observed[0].all()
    assert rep.rows_read == 9 and rep.rows_rejected == 0
    assert rep.spans == {1: (-2, 2)}


def test_duplicate_cell_named():
    rows = [(1, 0, -2, 1, 5), (1, 0, 0, 1, 5), (1, 0, 0, 1, 7)]
    with pytest.raises(DataError, match=r"run 1, size_bin 1, time 0"):
        load_dataset(_csv(rows))


def test_window_label_and_pre_engine_errors():
    with pytest.raises(DataError, match="window"):
        load_dataset(_csv([(1, 2, -2, 1, 5)]))
    with pytest.raises(DataError, match="pre-engine"):
        load_dataset(_csv([(1, 0, 0, 1, 5), (1, 0, 2, 1, 5)]))
    with pytest.raises(DataError, match="inconsistent window"):
        load_dataset(_csv([(1, 0, -2, 1, 5), (1, 1, 0, 1, 5)]))


def test_malformed_rows_report_line_numbers():
    data = _csv([(1, 0, -2, 1, 5), (1, 0, 0, 1, "abc"), (1, 0, 2, 1, -3)])
    with pytest.raises(DataError, match="line 3.*line 4"):
        load_dataset(data)
    ds, rep = load_dataset(data, strict=False)
    assert rep.rows_rejected == 2
    assert [ln for ln, _ in rep.rejected] == [3, 4]
    assert "line 3" in rep.to_text()


def test_missing_columns_and_custom_schema():
    with pytest.raises(DataError, match="missing required columns"):
        load_dataset(b"run,window,time,count\n1,0,-2,5\n")
    schema = ColumnSchema(run="bus", count="n")
    ds, _ = load_dataset(_csv([(4, 1, -2, 1, 5), (4, 1, 0, 1, 6)],
                              header="bus,window,time,size_bin,n"), schema)
    assert ds.runs[0].id == 4 and ds.runs[0].window == 1


def test_missing_tokens_are_masked():
    rows = [(1, 0, -2, 1, 5), (1, 0, 0, 1, "NA"), (1, 0, 2, 1, ""), (1, 0, 2, 2, 3),
            (1, 0, -2, 2, 3), (1, 0, 0, 2, 3)]
    ds, _ = load_dataset(_csv(rows))
    np.testing.assert_array_equal(ds.observed[0], [[True, False, False], [True, True, True]])
    assert np.isnan(ds.y[0][0, 1])


def test_sources_path_and_streams(tmp_path):
    raw = _csv([(1, 0, -2, 1, 5), (1, 0, 0, 1, 6)])
    p = tmp_path / "d.csv"
    p.write_bytes(raw)
    a, _ = load_dataset(p)
    b, _ = load_dataset(io.BytesIO(raw))
    c, _ = load_dataset(io.StringIO(raw.decode()))
    assert a.equals(b) and b.equals(c)


def test_synthetic_csv_roundtrip():
    ds, _ = simulate_dataset(desk_truth(seed=4))
    buf = io.StringIO()
    write_csv(ds, buf)
    back, _ = load_dataset(io.StringIO(buf.getvalue()))
    assert back.equals(ds)
    for a, b in zip(ds.y, back.y):
        np.testing.assert_array_equal(a, b)


def test_roundtrip_with_mask():
    counts = np.array([[1.0, np.nan, 3.0], [4.0, 5.0, np.nan]])
    ds = Dataset((Run(7, 1, [-2, 0, 2]),), 2, (counts,))
    buf = io.StringIO()
    write_csv(ds, buf)
    back, _ = load_dataset(io.StringIO(buf.getvalue()), n_bins=2)
    assert back.equals(ds)


@settings(max_examples=25, deadline=None)
@given(perm_seed=st.integers(0, 2 ** 32 - 1))
def test_order_insensitive(perm_seed):
    ds, _ = simulate_dataset(desk_truth(seed=1, n_runs=2, n_bins=5, K=4, L=3))
    buf = io.StringIO()
    write_csv(ds, buf)
    lines = buf.getvalue().splitlines()
    body = lines[1:]
    order = np.random.default_rng(perm_seed).permutation(len(body))
    shuffled = "\n".join([lines[0]] + [body[i] for i in order]) + "\n"
    back, _ = load_dataset(io.StringIO(shuffled))
    assert back.equals(ds)


def test_validate_clean_simulated():
    ds, _ = simulate_dataset(desk_truth(seed=2))
    rep = validate(ds)
    assert rep.ok and rep.violations == []
    assert rep.overall_missing_fraction == 0


def test_validate_spacing_violation():
    ds = Dataset((Run(1, 0, [-4, -2, 1]),), 1, (np.ones((1, 3)),))
    rep = validate(ds)
    assert any("time step" in v for v in rep.violations)
    assert rep.steps[1] is None


def test_validate_missing_fraction():
    c = np.ones((5, 2))
    c.ravel()[:4] = np.nan
    ds = Dataset((Run(1, 0, [-2, 0]),), 5, (c,))
    rep = validate(ds)
    assert rep.missing_fraction[1] == pytest.approx(0.40)
    assert "missing 0.400" in rep.to_text()


def test_dataset_is_immutable():
    ds = Dataset((Run(1, 0, [-2, 0]),), 1, (np.ones((1, 2)),))
    with pytest.raises(ValueError):
        ds.counts[0][0, 0] = 3.0
    with pytest.raises(AttributeError):
        ds.n_bins = 4
