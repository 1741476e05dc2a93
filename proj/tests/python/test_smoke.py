import json

import numpy as np
import pytest

import qrife


def test_check_loss():
    assert qrife.check_loss(-1.0, 0.5) == pytest.approx(0.5)
    assert qrife.check_loss(2.0, 0.9) == pytest.approx(1.8)
    with pytest.raises(qrife.DomainError):
        qrife.check_loss(1.0, 1.0)
    assert issubclass(qrife.DomainError, qrife.QrifeError)


def test_fit_qr_median():
    fit = qrife.fit_qr(np.ones((3, 1)), np.array([1.0, 2.0, 3.0]), 0.5)
    assert fit["coef"][0] == pytest.approx(2.0)
    assert len(fit["basis"]) == 1


def test_fit_qr_matches_linear_program():
    scipy_optimize = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(0)
    n, u = 30, 0.3
    Z = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = Z @ np.array([1.0, 2.0]) + rng.normal(size=n)
    # min u 1'p + (1-u) 1'q  s.t.  Z b + p - q = y, p, q >= 0
    c = np.concatenate([np.zeros(2), u * np.ones(n), (1 - u) * np.ones(n)])
    A_eq = np.hstack([Z, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * 2 + [(0, None)] * (2 * n)
    lp = scipy_optimize.linprog(c, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs")
    fit = qrife.fit_qr(Z, y, u)
    assert fit["objective"] == pytest.approx(lp.fun, abs=1e-8)


def test_select_num_factors():
    spectrum = np.zeros(10)
    spectrum[:4] = [10, 8, 0.01, 0.005]
    assert qrife.select_num_factors(spectrum, 40) == 2


def test_fit_ife_noiseless():
    rng = np.random.default_rng(1)
    S, T, t0 = 20, 15, 4
    F, _ = np.linalg.qr(rng.normal(size=(T, 2)))
    F *= np.sqrt(T)
    Lam = rng.normal(size=(S, 2)) * np.array([3.0, 1.0])
    X = [rng.normal(size=(T, 1)) for _ in range(S)]
    d = (np.arange(S) >= 5).astype(float)
    delta = 1.0 + 0.1 * np.arange(T - t0)
    A = np.array([X[s][:, 0] * 0.5 for s in range(S)]) + Lam @ F.T
    A[:, t0:] += np.outer(d, delta)
    fit = qrife.fit_ife(A, X, d, t0, tol=1e-10, max_iter=5000, factors=2)
    assert fit["converged"]
    np.testing.assert_allclose(fit["delta"], delta, atol=1e-4)
    np.testing.assert_allclose(fit["beta"], [0.5], atol=1e-4)
    assert np.all(np.diff(fit["ssr_trace"]) <= 1e-10)


def test_generate_and_truth():
    data = qrife.generate(scenario=1, N=10, S=8, T=8, seed=3)
    assert len(data["y"]) == 64
    assert data["Z"][0].shape == (10, 2)
    assert data["first_post_period"] == 1
    assert qrife.true_delta(25, 24, 0.5) == pytest.approx(2.5625)


def test_monte_carlo_is_deterministic():
    a = qrife.monte_carlo(N=50, S=8, T=8, reps=3, quantiles=[0.5], seed=5)
    b = qrife.monte_carlo(N=50, S=8, T=8, reps=3, quantiles=[0.5], seed=5, threads=2)
    assert a == b
    assert a[0].startswith("scenario,N,S,T,u,m,bias,sd,coverage")
    json.loads(a[1])


def test_estimate_round_trip():
    rng = np.random.default_rng(2)
    micro = ["group,time,y"]
    group = ["group,time,d"]
    for g in range(1, 7):
        for t in range(1, 6):
            treated = g >= 3 and t >= 2
            group.append(f"{g},{t},{int(treated)}")
            for _ in range(30):
                micro.append(f"{g},{t},{rng.normal() + (1.0 if treated else 0.0)!r}")
    config = "quantiles = 0.5\nt0 = 2\nfactors = 0\neffect.e = aqtt; t=5; u=0.5; z=const:1\n"
    report, effects, converged = qrife.estimate("\n".join(micro), "\n".join(group), config)
    assert converged
    doc = json.loads(report)
    assert doc["schema_version"] == 1
    assert "e" in effects
    with pytest.raises(qrife.ConfigError):
        qrife.estimate("\n".join(micro), "\n".join(group), "quantiles = 2\nt0 = 2\n")
