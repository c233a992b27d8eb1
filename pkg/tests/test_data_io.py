import numpy as np
import pytest
from scipy.stats import norm

from screenrep.data_io import (
    P_MIN,
    MatrixFormatError,
    StatsMatrix,
    as_zscores,
    load_matrix,
    pvalues_to_zscores,
    save_matrix,
    zscores_to_pvalues,
)

GOOD_TSV = "gene\ts1\ts2\ng1\t0.5\t0.01\ng2\t0.9\t0.2\ng3\t0.05\t0.99\n"


def test_load_well_formed(tmp_tsv):
    mat = load_matrix(tmp_tsv("p.tsv", GOOD_TSV), "pvalue")
    assert mat.n_genes == 3 and mat.n_studies == 2
    assert mat.gene_ids == ("g1", "g2", "g3")
    assert mat.study_ids == ("s1", "s2")
    assert mat.values[0, 1] == pytest.approx(0.01)


def test_load_rejects_out_of_range_p(tmp_tsv):
    path = tmp_tsv("bad.tsv", "gene\ts1\ng1\t1.5\n")
    with pytest.raises(MatrixFormatError, match="g1"):
        load_matrix(path, "pvalue")


def test_load_rejects_non_numeric(tmp_tsv):
    path = tmp_tsv("bad.tsv", "gene\ts1\ts2\ng1\t0.5\tabc\n")
    with pytest.raises(MatrixFormatError, match="abc"):
        load_matrix(path, "pvalue")


def test_load_rejects_ragged_rows(tmp_tsv):
    path = tmp_tsv("bad.tsv", "gene\ts1\ts2\ng1\t0.5\n")
    with pytest.raises(MatrixFormatError, match="columns"):
        load_matrix(path, "pvalue")


def test_load_rejects_duplicate_ids(tmp_tsv):
    path = tmp_tsv("bad.tsv", "gene\ts1\ts1\ng1\t0.5\t0.2\n")
    with pytest.raises(MatrixFormatError, match="duplicate"):
        load_matrix(path, "pvalue")
    path = tmp_tsv("bad2.tsv", "gene\ts1\ng1\t0.5\ng1\t0.2\n")
    with pytest.raises(MatrixFormatError, match="duplicate"):
        load_matrix(path, "pvalue")


def test_boundary_pvalues_clamped(tmp_tsv):
    mat = load_matrix(tmp_tsv("p.tsv", "gene\ts1\ng1\t0\ng2\t1\n"), "pvalue")
    assert mat.values[0, 0] == pytest.approx(P_MIN)
    assert mat.values[1, 0] == pytest.approx(1 - P_MIN)


def test_save_load_roundtrip(tmp_path, rng):
    values = rng.random((7, 3)) * 0.9 + 0.05
    mat = StatsMatrix(
        tuple(f"g{i}" for i in range(7)), ("a", "b", "c"), values, "pvalue"
    )
    out = tmp_path / "out.tsv"
    save_matrix(mat, out, comment="run-manifest: out.tsv.manifest.json")
    back = load_matrix(out, "pvalue")
    assert back.gene_ids == mat.gene_ids
    np.testing.assert_allclose(back.values, mat.values, rtol=1e-10)


def test_one_sided_known_values():
    mat = StatsMatrix(("g1", "g2"), ("s",), np.array([[0.5], [0.05]]), "pvalue")
    z = pvalues_to_zscores(mat, "one_sided")
    assert z.values[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert z.values[1, 0] == pytest.approx(1.6449, abs=1e-4)


def test_two_sided_abs_non_negative(rng):
    p = rng.random((50, 4)) * 0.999 + 5e-4
    mat = StatsMatrix(
        tuple(f"g{i}" for i in range(50)), tuple("abcd"), p, "pvalue"
    )
    z = pvalues_to_zscores(mat, "two_sided_abs")
    assert np.all(z.values >= 0.0)
    np.testing.assert_allclose(z.values, norm.isf(mat.values / 2), rtol=1e-12)


def test_extreme_p_clamped_finite():
    mat = StatsMatrix(("g1",), ("s",), np.array([[1e-300]]), "pvalue")
    z = pvalues_to_zscores(mat, "one_sided")
    assert np.isfinite(z.values[0, 0])
    assert z.values[0, 0] == pytest.approx(norm.isf(P_MIN))


@pytest.mark.parametrize("tail", ["one_sided", "two_sided_abs"])
def test_roundtrip_and_monotone(tail, rng):
    p = np.sort(rng.random(200) * (1 - 2e-12) + 1e-12)
    mat = StatsMatrix(
        tuple(f"g{i}" for i in range(200)), ("s",), p[:, None], "pvalue"
    )
    z = pvalues_to_zscores(mat, tail)
    back = zscores_to_pvalues(z, tail)
    np.testing.assert_allclose(back.values, mat.values, rtol=1e-10, atol=1e-10)
    # strictly monotone: smaller p -> larger z
    assert np.all(np.diff(z.values[:, 0]) < 0.0)


def test_as_zscores_validation():
    zmat = StatsMatrix(("g1",), ("s",), np.array([[1.0]]), "zscore")
    assert as_zscores(zmat, None) is zmat
    with pytest.raises(ValueError, match="tail"):
        as_zscores(zmat, "one_sided")
    pmat = StatsMatrix(("g1",), ("s",), np.array([[0.5]]), "pvalue")
    with pytest.raises(ValueError, match="tail"):
        as_zscores(pmat, None)


def test_large_matrix_loads_quickly(tmp_path, rng):
    # matches the real-data scale: 11540 genes x 29 studies under 5 s
    import time

    n, m = 11540, 29
    values = rng.random((n, m))
    lines = ["gene\t" + "\t".join(f"s{j}" for j in range(m))]
    for i in range(n):
        lines.append(f"g{i}\t" + "\t".join(f"{v:.6g}" for v in values[i]))
    path = tmp_path / "big.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    t0 = time.perf_counter()
    mat = load_matrix(path, "pvalue")
    elapsed = time.perf_counter() - t0
    assert mat.values.shape == (n, m)
    assert elapsed < 5.0
