import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mollibra.fingerprint import ALL_KINDS, Fingerprint, FingerprintKind, compute_all
from mollibra.surrogate import (EnsembleState, GpConfig, KindMismatch, ensemble_poe,
                                expected_improvement, fit_gp, log_marginal_likelihood,
                                poe_combine, posterior, tanimoto_gram, tanimoto_kernel,
                                update_weights, update_weights_from_densities)

E = FingerprintKind.ECFP


def fp(counts, kind=E):
    return Fingerprint(kind, dict(counts))


def random_fp(rng, kind=E, vocab=30):
    n = int(rng.integers(1, 12))
    keys = rng.choice(vocab, n, replace=False)
    return fp({int(k): int(rng.integers(1, 5)) for k in keys}, kind)


def test_kernel_hand_value():
    assert tanimoto_kernel(fp({1: 1, 2: 1}), fp({1: 1, 3: 1})) == pytest.approx(1 / 3)


def test_kernel_disjoint_and_identity():
    assert tanimoto_kernel(fp({1: 2}), fp({2: 3})) == 0.0
    assert tanimoto_kernel(fp({1: 2, 5: 1}), fp({1: 2, 5: 1})) == 1.0


def test_kernel_empty_conventions():
    assert tanimoto_kernel(fp({}), fp({})) == 1.0
    assert tanimoto_kernel(fp({}), fp({1: 1})) == 0.0


def test_kernel_kind_mismatch():
    with pytest.raises(KindMismatch):
        tanimoto_kernel(fp({1: 1}), fp({1: 1}, FingerprintKind.BOC))


counts = st.dictionaries(st.integers(0, 40), st.integers(1, 6), max_size=15)


@given(counts, counts)
@settings(max_examples=200, deadline=None)
def test_kernel_bounds_and_symmetry(a, b):
    k = tanimoto_kernel(fp(a), fp(b))
    assert 0.0 <= k <= 1.0
    assert k == tanimoto_kernel(fp(b), fp(a))


def test_gram_matches_pairwise_kernel():
    rng = np.random.default_rng(1)
    xs = [random_fp(rng) for _ in range(15)] + [fp({})]
    gram = tanimoto_gram(xs)
    for i, a in enumerate(xs):
        for j, b in enumerate(xs):
            assert gram[i, j] == pytest.approx(tanimoto_kernel(a, b), abs=1e-15)


def test_gram_psd_random_counts():
    rng = np.random.default_rng(2)
    for kind in ALL_KINDS:
        xs = [random_fp(rng, kind) for _ in range(50)]
        assert np.linalg.eigvalsh(tanimoto_gram(xs)).min() >= -1e-8


def test_single_point_fit():
    x = fp({1: 1, 2: 2})
    gp = fit_gp([(x, 0.7)])
    mu, var = posterior(gp, x)
    assert abs(mu - 0.7) <= math.sqrt(gp.noise)
    assert var <= gp.noise + 1e-6


def test_duplicate_inputs_fit():
    x = fp({1: 1, 2: 2})
    gp = fit_gp([(x, 0.2), (x, 0.8)])
    mu, var = posterior(gp, x)
    assert np.isfinite(mu) and np.isfinite(var)
    assert mu == pytest.approx(0.5, abs=0.05)


def test_grid_choice_is_mll_argmax(seed_pool):
    rng = np.random.default_rng(3)
    mols = [seed_pool[i] for i in rng.choice(len(seed_pool), 25, replace=False)]
    xs = [compute_all(m)[E] for m in mols]
    y = rng.random(25)
    cfg = GpConfig()
    gp = fit_gp(list(zip(xs, y)), cfg)
    gram = tanimoto_gram(xs)
    grid = {(n, s): log_marginal_likelihood(gram, y, n, s)
            for n in cfg.noise_grid for s in cfg.outputscale_grid}
    best = max(grid, key=grid.get)
    assert (gp.noise, gp.outputscale) == best
    assert gp.log_marginal_likelihood == pytest.approx(grid[best], abs=1e-8)


def test_cholesky_reproduces_regularised_gram(seed_pool):
    xs = [compute_all(m)[E] for m in seed_pool[:30]]
    y = np.linspace(0, 1, 30)
    gp = fit_gp(list(zip(xs, y)))
    target = gp.outputscale * tanimoto_gram(xs) + (gp.noise + gp.jitter) * np.eye(30)
    assert np.abs(gp.chol @ gp.chol.T - target).max() <= 1e-8


def test_prior_recovery_far_from_data():
    xs = [fp({i: 1, i + 1: 1}) for i in range(0, 20, 2)]
    gp = fit_gp([(x, float(i % 3)) for i, x in enumerate(xs)])
    mu, var = posterior(gp, fp({999: 3}))
    assert mu == pytest.approx(gp.mean_const)
    assert var == pytest.approx(gp.outputscale)


def test_interpolation_with_tiny_noise(seed_pool):
    rng = np.random.default_rng(4)
    xs, seen = [], set()
    for m in seed_pool:
        f = compute_all(m)[E]
        key = frozenset(f.counts.items())
        if key not in seen:
            seen.add(key)
            xs.append(f)
        if len(xs) == 20:
            break
    y = rng.random(20)
    gp = fit_gp(list(zip(xs, y)), noise=1e-6)
    mu, _ = gp.predict(xs)
    assert np.abs(mu - y).max() <= 1e-3


def test_batch_covariance_diagonal_matches_variance(seed_pool):
    xs = [compute_all(m)[E] for m in seed_pool[:20]]
    gp = fit_gp(list(zip(xs, np.linspace(0, 1, 20))))
    queries = [compute_all(m)[E] for m in seed_pool[20:30]]
    _, var = gp.predict(queries)
    # dense brute force of the posterior covariance
    kq = gp.outputscale * tanimoto_gram(queries, xs)
    cov_train = gp.outputscale * tanimoto_gram(xs) + (gp.noise + gp.jitter) * np.eye(20)
    dense = gp.outputscale * tanimoto_gram(queries) - kq @ np.linalg.solve(cov_train, kq.T)
    assert np.allclose(np.diag(gp.covariance(queries)), var, atol=1e-10)
    assert np.allclose(np.diag(dense), var, atol=1e-8)


def test_ei_zero_variance():
    assert expected_improvement(0.3, 0.0, 0.5) == 0.0
    assert expected_improvement(0.7, 0.0, 0.5) == pytest.approx(0.2)


def test_ei_at_incumbent():
    assert expected_improvement(0.5, 1.0, 0.5) == pytest.approx(0.39894, abs=1e-5)


def test_ei_monte_carlo():
    rng = np.random.default_rng(5)
    for _ in range(20):
        mu, var, best = rng.normal(), rng.uniform(0.01, 2.0), rng.normal()
        draws = rng.normal(mu, math.sqrt(var), 10 ** 6)
        gain = np.maximum(0.0, draws - best)
        stderr = gain.std() / math.sqrt(len(gain))
        assert abs(expected_improvement(mu, var, best) - gain.mean()) <= 3 * stderr + 1e-12


def test_ei_monotone_in_mean():
    mus = np.linspace(-3, 3, 601)
    ei = expected_improvement(mus, 0.4, 0.2)
    assert np.all(np.diff(ei) > 0)


def test_weight_update_hand_value():
    s = update_weights_from_densities(EnsembleState((0.5, 0.5), 1e-3), (0.2, 0.1))
    assert s.weights[0] == pytest.approx(2 / 3, abs=1e-12)
    assert s.weights[1] == pytest.approx(1 / 3, abs=1e-12)


def test_weight_update_equal_densities_and_scaling():
    s = EnsembleState((0.2, 0.3, 0.5), 1e-3)
    assert update_weights_from_densities(s, (0.4, 0.4, 0.4)).weights == pytest.approx(s.weights)
    a = update_weights_from_densities(s, (0.1, 0.7, 0.3)).weights
    b = update_weights_from_densities(s, (1.0, 7.0, 3.0)).weights
    assert a == pytest.approx(b, abs=1e-15)


def test_weight_floor_and_normalisation():
    s = EnsembleState.uniform(4)
    for _ in range(50):
        s = update_weights_from_densities(s, (1.0, 1e-30, 1e-200, 0.0))
        assert sum(s.weights) == pytest.approx(1.0, abs=1e-12)
        assert min(s.weights) >= s.floor - 1e-15


def test_update_uses_models(seed_pool):
    fps = [compute_all(m) for m in seed_pool[:12]]
    kinds = (FingerprintKind.ECFP, FingerprintKind.BOC)
    models = [fit_gp([(f[k], float(i)) for i, f in enumerate(fps[:10])]) for k in kinds]
    s = update_weights(EnsembleState.uniform(2), models, (fps[10], 3.0))
    assert sum(s.weights) == pytest.approx(1.0, abs=1e-12)
    neutral = update_weights(EnsembleState.uniform(2), [models[0], None], (fps[10], 3.0))
    assert neutral.weights == pytest.approx((0.5, 0.5))


def test_poe_cases():
    assert poe_combine([0.3], [0.2]) == pytest.approx((0.3, 0.2))
    assert poe_combine([0.4, 0.4], [0.6, 0.6]) == pytest.approx((0.4, 0.3))
    assert poe_combine([0.0, 1.0], [1.0, 1.0]) == pytest.approx((0.5, 0.5))


def test_ensemble_poe_singleton(seed_pool):
    xs = [compute_all(m)[E] for m in seed_pool[:10]]
    gp = fit_gp(list(zip(xs, np.arange(10.0))))
    q = [compute_all(m)[E] for m in seed_pool[10:15]]
    mu, var = ensemble_poe([gp], {E: q})
    mu1, var1 = gp.predict(q)
    assert np.allclose(mu, mu1) and np.allclose(var, var1)
