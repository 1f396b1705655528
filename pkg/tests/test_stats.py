import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prominence.stats import (
    INTERCEPT,
    ModelSpec,
    RankDeficiencyError,
    RegressionResult,
    clustered_se,
    clustered_vcov,
    fit_fe_ols,
    format_coef,
    interaction_plot_csv,
    report_csv,
    report_table,
    stars,
    term_label,
)

SMALL = ModelSpec("y", fixed_effects=("candidate_id",))


def hc1(X, e):
    n, k = X.shape
    B = np.linalg.inv(X.T @ X)
    return n / (n - k) * B @ (X.T * e**2) @ X @ B


def cell_table(n_rep=3, noise=None, seed=0):
    """gender x party x candidate grid with one frame per row."""
    rows = []
    for g in ("male", "female"):
        for p in ("dem", "rep"):
            for r in range(n_rep):
                rows.append({"gender": g, "party": p, "candidate_id": f"c{r % 2}",
                             "video_id": "v", "frame_id": len(rows)})
    df = pd.DataFrame(rows)
    fem = (df.gender == "female").to_numpy(float)
    rep = (df.party == "rep").to_numpy(float)
    c1 = (df.candidate_id == "c1").to_numpy(float)
    df["y"] = 0.3 + 0.48 * fem - 0.59 * rep - 0.37 * fem * rep + 0.2 * c1
    if noise:
        df["y"] += np.random.default_rng(seed).normal(0, noise, len(df))
    X = np.column_stack([np.ones(len(df)), fem, rep, fem * rep, c1])
    return df, X


def test_known_coefficients_exact():
    df, _ = cell_table()
    assert len(df) == 12
    res = fit_fe_ols(df, SMALL)
    assert res.terms == [INTERCEPT, "gender[female]", "party[rep]", "gender[female]:party[rep]"]
    assert np.allclose(res.estimates, [0.3, 0.48, -0.59, -0.37], atol=1e-12)
    assert res.deviance < 1e-25


def test_perfect_fit_r2_one():
    df, _ = cell_table()
    res = fit_fe_ols(df, SMALL)
    assert res.pseudo_r2 == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_noisy_matches_normal_equations(seed):
    df, X = cell_table(n_rep=6, noise=0.1, seed=seed)
    y = df.y.to_numpy()
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    res = fit_fe_ols(df, SMALL)
    assert np.max(np.abs(res.estimates - beta[:4])) < 1e-10
    e = y - X @ beta
    assert res.deviance == pytest.approx(e @ e, rel=1e-10)
    assert np.allclose(res.se, np.sqrt(np.diag(hc1(X, e)))[:4], rtol=1e-10)


def test_duplicate_fixed_effect_is_named():
    df, _ = cell_table()
    df["candidate_copy"] = df.candidate_id.map({"c0": "a", "c1": "b"})
    spec = ModelSpec("y", fixed_effects=("candidate_id", "candidate_copy"))
    with pytest.raises(RankDeficiencyError) as err:
        fit_fe_ols(df, spec)
    ((col, partners),) = err.value.aliased.items()
    assert {col, *partners} >= {"FE:candidate_id[c1]", "FE:candidate_copy[b]"}
    assert "candidate_id[c1]" in str(err.value) and "candidate_copy[b]" in str(err.value)


def test_absent_female_level_reported_as_aliased():
    df, _ = cell_table(n_rep=4, noise=0.1)
    df = df[df.gender == "male"]
    with pytest.raises(RankDeficiencyError, match="gender\\[female\\] is constant zero"):
        fit_fe_ols(df, SMALL)


def test_missing_columns_and_listwise_deletion():
    df, _ = cell_table(n_rep=6, noise=0.1)
    with pytest.raises(ValueError, match="candidate_id"):
        fit_fe_ols(df.drop(columns="candidate_id"), SMALL)
    df.loc[[0, 5], "y"] = np.nan
    res = fit_fe_ols(df, SMALL)
    assert res.nobs == 22 and res.n_excluded == 2


@pytest.mark.parametrize("seed", range(10))
def test_singleton_clusters_equal_hc1(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(30), rng.normal(size=(30, 3))])
    e = rng.normal(size=30) * (1 + X[:, 1] ** 2)
    V = clustered_vcov(X, e, range(30))
    assert np.max(np.abs(V - hc1(X, e))) < 1e-10


def test_two_cluster_sandwich_by_hand():
    rng = np.random.default_rng(11)
    X = np.column_stack([np.ones(20), np.arange(20) % 3, rng.normal(size=20)])
    e = rng.normal(size=20)
    cl = ["a"] * 9 + ["b"] * 11
    n, k = X.shape
    B = np.linalg.inv(X.T @ X)
    meat = np.zeros((k, k))
    for g in ("a", "b"):
        s = np.zeros(k)
        for i in range(n):
            if cl[i] == g:
                s += X[i] * e[i]
        meat += np.outer(s, s)
    expected = (2 / 1) * ((n - 1) / (n - k)) * B @ meat @ B
    assert np.max(np.abs(clustered_vcov(X, e, cl) - expected)) < 1e-10


def test_clustered_needs_two_clusters():
    with pytest.raises(ValueError, match="2 clusters"):
        clustered_vcov(np.ones((4, 1)), np.ones(4), ["a"] * 4)


def test_monte_carlo_close_to_classical():
    rng = np.random.default_rng(5)
    ratios = []
    for _ in range(200):
        X = np.column_stack([np.ones(200), rng.normal(size=200)])
        y = X @ [1.0, 2.0] + rng.normal(size=200)
        beta = np.linalg.lstsq(X, y, rcond=None)[0]
        e = y - X @ beta
        classical = np.sqrt(np.diag(e @ e / (200 - 2) * np.linalg.inv(X.T @ X)))
        ratios.append(clustered_se(X, e, range(200)) / classical)
    assert np.all(np.abs(np.mean(ratios, axis=0) - 1) < 0.25)


def test_fixed_effects_match_within_demeaning():
    rng = np.random.default_rng(8)
    g = rng.integers(0, 6, 120)
    x = rng.normal(size=120) + g
    y = 1.5 * x + g * 0.7 + rng.normal(size=120)
    df = pd.DataFrame({"y": y, "x": x, "g": g, "cl": np.arange(120) // 3})
    spec = ModelSpec("y", main_effects=("x",), interactions=(), fixed_effects=("g",),
                     cluster="cl", reference_levels={}, factor_levels={})
    res = fit_fe_ols(df, spec)
    xd = x - pd.Series(x).groupby(g).transform("mean").to_numpy()
    yd = y - pd.Series(y).groupby(g).transform("mean").to_numpy()
    assert abs(res.coef("x") - (xd @ yd) / (xd @ xd)) < 1e-8
    assert res.groups == {"g": 6} and res.n_clusters == 40


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_vcov_psd_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    df, _ = cell_table(n_rep=8, noise=0.3, seed=seed)
    df["frame_id"] = np.arange(len(df)) // 2
    a = fit_fe_ols(df, SMALL)
    assert np.linalg.eigvalsh(a.vcov).min() >= -1e-12 * np.abs(a.vcov).max()
    b = fit_fe_ols(df.iloc[rng.permutation(len(df))], SMALL)
    assert np.allclose(a.estimates, b.estimates, atol=1e-12)
    assert np.allclose(a.se, b.se, rtol=1e-9)
    assert np.allclose(a.pvalues, b.pvalues, rtol=1e-9, atol=1e-15)


def test_pvalues_use_cluster_df():
    from scipy import stats as sps
    df, _ = cell_table(n_rep=6, noise=0.2)
    df["frame_id"] = np.arange(len(df)) // 3
    res = fit_fe_ols(df, SMALL)
    assert res.n_clusters == 8
    assert np.allclose(res.pvalues, 2 * sps.t.sf(np.abs(res.tstats), 7))


@pytest.mark.parametrize("p,s", [(0.0005, "***"), (0.005, "**"), (0.02, "*"), (0.2, ""), (0.05, "")])
def test_stars(p, s):
    assert stars(p) == s


def test_format_coef():
    assert format_coef(0.48, 0.05, 1e-6) == "0.48*** (0.05)"
    assert format_coef(0.43, 0.19, 0.2) == "0.43 (0.19)"
    assert format_coef(-0.001, 0.04, 0.9) == "0.00 (0.04)"


def test_term_labels():
    assert term_label("gender[female]:party[rep]") == "Gender: Female x Party: Republican"
    assert term_label("region[north_east]") == "Region: North_East"


def result(terms, est, se, p, **kw):
    base = dict(nobs=10, groups={"candidate_id": 3}, deviance=1.0, loglik=-2.0, pseudo_r2=0.1)
    base.update(kw)
    return RegressionResult(list(terms), np.array(est), np.array(se), np.array(p), **base)


def test_report_union_of_terms_leaves_blanks():
    a = result([INTERCEPT, "gender[female]"], [1.0, 0.48], [0.1, 0.05], [0.5, 1e-5])
    b = result([INTERCEPT, "party[rep]"], [1.0, 0.43], [0.1, 0.19], [0.5, 0.03],
               groups={"election_year": 2})
    text = report_table({"A": a, "B": b})
    lines = text.splitlines()
    fem = next(l for l in lines if l.startswith("Gender: Female"))
    assert fem.split()[-1] == "0.48***"
    rep = next(l for l in lines if l.startswith("Party: Republican"))
    assert rep.rstrip().endswith("0.43*") and rep.split(":")[1].split()[-1] == "0.43*"
    assert "(Intercept)" not in text
    assert any(l.startswith("Num. groups: Candidate ID") for l in lines)
    rows = report_csv({"A": a, "B": b}).splitlines()
    assert rows[0] == "row,A,B"
    assert rows[1] == "Gender: Female,0.48***," and rows[2] == ",(0.05),"
    assert "Num. groups: Election Year,,2" in rows


def test_report_with_intercept_and_plot_csv():
    a = result([INTERCEPT, "gender[female]"], [1.0, 0.48], [0.1, 0.05], [0.5, 1e-5])
    assert "(Intercept)" in report_table({"A": a}, include_intercept=True)
    assert interaction_plot_csv({"A": a}).splitlines() == [
        "model,term,estimate,se", "A,gender[female],0.48,0.05"]
