import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _mc import mc_posterior_mean, random_mixture
from cogmol.codec import MotifSpec, decode, default_dictionary, encode, enumerate_specs
from cogmol.diffusion import (
    Condition,
    ConditionBatch,
    DenoiserTrainConfig,
    DiffusionError,
    EmptyConditionSet,
    FactoredOracleDenoiser,
    LearnedDenoiser,
    NonFiniteLoss,
    OracleDenoiser,
    Schedule,
    StepOutOfRange,
    eps_mse,
    forward_noise,
    make_eps_batch,
    sample,
    train_denoiser,
)

SCHED = Schedule.cosine(200)


# schedule and forward process


@pytest.mark.parametrize("make", [Schedule.cosine, Schedule.linear])
@pytest.mark.parametrize("steps", [1, 2, 10, 200, 1000])
def test_schedule_invariants(make, steps):
    ab = make(steps).alpha_bar
    assert ab[0] == 1.0 and len(ab) == steps + 1
    assert np.all(np.diff(ab) < 0)
    assert 0 < ab[-1] <= 1e-3 + 1e-12


def test_schedule_rejects_bad_tables():
    with pytest.raises(DiffusionError):
        Schedule(np.array([1.0, 0.5, 0.6, 1e-4]))
    with pytest.raises(DiffusionError):
        Schedule(np.array([1.0, 0.5]))  # too much signal left at S
    with pytest.raises(DiffusionError):
        Schedule.from_config(10, "sigmoid")


def test_forward_noise_endpoints():
    rng = np.random.default_rng(0)
    g, e = rng.standard_normal(4), rng.standard_normal(4)
    assert np.array_equal(forward_noise(SCHED, g, 0, e), g)
    t = 50
    assert np.allclose(forward_noise(SCHED, np.zeros(4), t, e), math.sqrt(1 - SCHED.alpha_bar[t]) * e)
    with pytest.raises(StepOutOfRange):
        forward_noise(SCHED, g, 201, e)
    with pytest.raises(StepOutOfRange):
        forward_noise(SCHED, g, -1, e)


def test_forward_noise_moments():
    rng = np.random.default_rng(1)
    g0 = np.array([1.0, -2.0, 0.5])
    t, n = 80, 10_000
    z = forward_noise(SCHED, g0, t, rng.standard_normal((n, 3)))
    ab = SCHED.alpha_bar[t]
    se_mean = math.sqrt((1 - ab) / n)
    assert np.all(np.abs(z.mean(axis=0) - math.sqrt(ab) * g0) <= 3 * se_mean)
    var = z.var(axis=0, ddof=1)
    se_var = (1 - ab) * math.sqrt(2 / (n - 1))
    assert np.all(np.abs(var - (1 - ab)) <= 3 * se_var)


# oracle posterior


def test_point_mass_posterior():
    mu = np.array([[0.7, -1.2]])
    oracle = OracleDenoiser.from_mixture(mu, sigma=1e-9)
    z = np.array([3.0, 3.0])
    for ab in (0.1, 0.5, 0.99):
        assert np.allclose(oracle.posterior_mean_at(z, ab, Condition()), mu[0], atol=1e-9)


def test_symmetric_pair_gives_midpoint():
    mu = np.array([[1.0, 0.0], [-1.0, 0.0]])
    oracle = OracleDenoiser.from_mixture(mu, sigma=0.3)
    z = np.array([0.0, 0.8])
    got = oracle.posterior_mean_at(z, 0.5, Condition())
    mid_x = 0.0
    assert got[0] == pytest.approx(mid_x, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_posterior_mean_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    for _ in range(5):
        means, sigma, logw = random_mixture(rng)
        oracle = OracleDenoiser.from_mixture(means, sigma, logw)
        ab = rng.uniform(0.3, 0.8)
        g0 = means[rng.integers(len(means))] + sigma * rng.standard_normal(2)
        z = math.sqrt(ab) * g0 + math.sqrt(1 - ab) * rng.standard_normal(2)
        exact = oracle.posterior_mean_at(z, ab, Condition())
        est, _ = mc_posterior_mean(means, sigma, logw, z, ab, rng)
        assert np.linalg.norm(est - exact) / np.linalg.norm(exact) <= 1e-2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
def test_responsibilities_are_a_distribution(seed, ab):
    rng = np.random.default_rng(seed)
    means, sigma, logw = random_mixture(rng)
    oracle = OracleDenoiser.from_mixture(means, sigma, logw)
    r = oracle.responsibilities(rng.standard_normal((4, 2)) * 5, ab, Condition())
    assert np.all(r >= 0)
    assert np.all(np.abs(r.sum(axis=1) - 1) <= 1e-12)


def test_eps_is_zero_at_t0():
    oracle = OracleDenoiser.from_mixture(np.eye(2), 0.1, schedule=SCHED)
    assert np.array_equal(oracle.eps(np.ones(2), 0, Condition()), np.zeros(2))


def test_superset_condition(dictionary):
    support = enumerate_specs(2, 2, 1)
    oracle = OracleDenoiser(dictionary, support, schedule=SCHED)
    cond = Condition.of(["pyridine", "nitro"])
    r = oracle.responsibilities(np.random.default_rng(0).standard_normal(32), 0.5, cond)[0]
    ok = np.array([s.scaffold == "pyridine" and "nitro" in s.groups for s in support])
    assert r[~ok].max() == 0.0 and r[ok].sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(EmptyConditionSet):
        oracle.responsibilities(np.zeros(32), 0.5, Condition.of(["benzene", "pyridine"]))


# factored oracle


@pytest.fixture(scope="module")
def oracles():
    d = default_dictionary()
    factored = FactoredOracleDenoiser(d, schedule=SCHED)
    flat = OracleDenoiser(d, factored.support, schedule=SCHED)
    return flat, factored


@pytest.mark.parametrize("t", [1, 20, 40, 120, 200])
def test_factored_oracle_matches_flat(oracles, models, t):
    flat, factored = oracles
    rng = np.random.default_rng(t)
    spec = MotifSpec("pyridine", ("nitro",), ("fluorine",))
    z = forward_noise(SCHED, encode(spec, rng, flat.dictionary), t, rng.standard_normal(32))
    conds = [
        Condition(),
        Condition.of(["pyridine"]),
        Condition(embedding=models.align.embed(spec.bag()[None])[0]),
        Condition(required=("nitro",), embedding=models.align.embed(spec.bag()[None])[0]),
    ]
    for cond in conds:
        assert np.allclose(factored.eps(z, t, cond), flat.eps(z, t, cond), atol=1e-9, rtol=1e-9)
    ab = SCHED.alpha_bar[t]
    assert np.allclose(factored.responsibilities(z, ab, conds[2]), flat.responsibilities(z, ab, conds[2]), atol=1e-10)


def test_factored_oracle_needs_product_support(dictionary):
    with pytest.raises(DiffusionError):
        FactoredOracleDenoiser(dictionary, max_groups=3, max_modifiers=3, min_groups=0)
    raw = type(dictionary).build(seed=0, orthogonalize=False)
    with pytest.raises(DiffusionError):
        FactoredOracleDenoiser(raw)


def test_condition_batch_equals_blocks(oracles, models):
    _, factored = oracles
    rng = np.random.default_rng(3)
    conds = [Condition(embedding=models.align.embed(s.bag()[None])[0]) for s in factored.support[:3]]
    z = rng.standard_normal((6, 32))
    batched = factored.eps(z, 30, ConditionBatch(tuple(conds), 2))
    for k, c in enumerate(conds):
        assert np.allclose(batched[2 * k : 2 * k + 2], factored.eps(z[2 * k : 2 * k + 2], 30, c), atol=1e-12)
    with pytest.raises(DiffusionError):
        factored.eps(z[:5], 30, ConditionBatch(tuple(conds), 2))


# sampling


def test_t_start_zero_returns_init(oracles):
    _, factored = oracles
    g = np.arange(32.0)
    out = sample(factored, SCHED, Condition(), t_start=0, init=g, rng=np.random.default_rng(0))
    assert np.array_equal(out, g)


def test_sample_is_deterministic(oracles):
    _, factored = oracles
    a = sample(factored, SCHED, Condition.of(["furan"]), rng=np.random.default_rng(4), n=3)
    b = sample(factored, SCHED, Condition.of(["furan"]), rng=np.random.default_rng(4), n=3)
    assert np.array_equal(a, b)
    with pytest.raises(DiffusionError):
        sample(factored, SCHED, Condition(), rng=None)
    with pytest.raises(DiffusionError):
        sample(factored, SCHED, Condition(), rng=np.random.default_rng(0), variance="sde")


def test_batched_sampling_matches_single_streams(oracles, models):
    _, factored = oracles
    specs = factored.support[::997][:3]
    conds = tuple(Condition(embedding=models.align.embed(s.bag()[None])[0]) for s in specs)
    together = sample(factored, SCHED, ConditionBatch(conds, 2), rng=[np.random.default_rng(k) for k in range(3)], n=6)
    for k, c in enumerate(conds):
        alone = sample(factored, SCHED, c, rng=np.random.default_rng(k), n=2)
        assert np.allclose(together[2 * k : 2 * k + 2], alone, atol=1e-10)


def test_benzene_condition_yields_benzene(oracles):
    _, factored = oracles
    out = sample(factored, SCHED, Condition.of(["benzene"]), rng=np.random.default_rng(5), n=1000)
    hits = sum(decode(g, factored.dictionary).scaffold == "benzene" for g in out)
    assert hits / 1000 >= 0.95


def test_zero_sigma_single_spec_concentrates(dictionary):
    spec = MotifSpec("thiophene", ("amide",), ("iodine",))
    oracle = OracleDenoiser(dictionary, [spec], sigma=0.0, schedule=SCHED)
    out = sample(oracle, SCHED, Condition(), rng=np.random.default_rng(6), n=200)
    dist = np.linalg.norm(out - dictionary.mean(spec), axis=1)
    assert np.mean(dist <= 0.1) >= 0.99


def test_ddim_variance_is_deterministic_given_start(oracles):
    _, factored = oracles
    z = np.random.default_rng(7).standard_normal((2, 32))
    a = sample(factored, SCHED, Condition(), t_start=30, init=z, rng=np.random.default_rng(1), variance="ddim")
    b = sample(factored, SCHED, Condition(), t_start=30, init=z, rng=np.random.default_rng(1), variance="ddim")
    assert np.array_equal(a, b)


def test_checkpoints(oracles):
    _, factored = oracles
    out, snaps = sample(factored, SCHED, Condition(), rng=np.random.default_rng(2), n=2, checkpoints=[200, 100, 0])
    assert sorted(snaps) == [0, 100, 200]
    assert np.array_equal(snaps[0], out)


def test_oracle_mse_at_first_step_is_the_noise_floor(dictionary):
    # one spec, z_1 = sqrt(ab) g0 + s eps with g0 ~ N(mu, sigma^2): the best
    # predictor leaves sigma^2 ab / (sigma^2 ab + s^2) of eps unexplained
    spec = MotifSpec("benzene", ("nitro",))
    oracle = OracleDenoiser(dictionary, [spec], schedule=SCHED)
    rng = np.random.default_rng(8)
    n = 4000
    g0 = np.array([encode(spec, rng, dictionary) for _ in range(n)])
    eps = rng.standard_normal(g0.shape)
    ab = SCHED.alpha_bar[1]
    z = math.sqrt(ab) * g0 + math.sqrt(1 - ab) * eps
    mse = np.mean((oracle.eps(z, 1, Condition()) - eps) ** 2)
    floor = dictionary.sigma**2 * ab / (dictionary.sigma**2 * ab + 1 - ab)
    assert mse == pytest.approx(floor, rel=0.03)


# learned denoiser


def small_net(seed=0):
    return LearnedDenoiser.init(dim=4, steps=50, width=8, n_time=4, seed=seed)


@pytest.mark.parametrize("seed", range(5))
def test_network_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = small_net(seed)
    net.params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in net.params.items()}
    x = net._inputs(rng.standard_normal((6, 4)), rng.integers(1, 51, 6), rng.standard_normal((6, 4)))
    target = rng.standard_normal((6, 4))
    _, grads = net.loss_and_grad(x, target)
    h = 1e-6
    num, ana = [], []
    for k, p in net.params.items():
        for idx in np.ndindex(p.shape):
            plus = {j: v.copy() for j, v in net.params.items()}
            minus = {j: v.copy() for j, v in net.params.items()}
            plus[k][idx] += h
            minus[k][idx] -= h
            num.append((net.loss_and_grad(x, target, plus)[0] - net.loss_and_grad(x, target, minus)[0]) / (2 * h))
            ana.append(grads[k][idx])
    num, ana = np.array(num), np.array(ana)
    assert np.linalg.norm(num - ana) / np.linalg.norm(num) <= 1e-3


def test_network_shapes_and_serialization(tmp_path):
    net = small_net()
    z = np.zeros((3, 4))
    assert net.predict(z, np.array([1, 2, 3]), np.zeros(4)).shape == (3, 4)
    assert net.eps(np.zeros(4), 5, Condition(embedding=np.zeros(4))).shape == (4,)
    with pytest.raises(DiffusionError):
        net.eps(np.zeros(4), 5, Condition())
    path = tmp_path / "net.json"
    net.save(path)
    loaded = LearnedDenoiser.load(path)
    assert all(np.array_equal(loaded.params[k], net.params[k]) for k in net.params)
    assert loaded.seed == net.seed


def test_training_is_deterministic_and_learns():
    sched = Schedule.cosine(50)
    rng = np.random.default_rng(0)
    g0 = rng.choice([-1.0, 1.0], size=(256, 4))
    cond = g0.copy()
    cfg = DenoiserTrainConfig(width=32, steps=300, batch_size=64, n_time=4)
    a = train_denoiser(g0, cond, sched, cfg)
    b = train_denoiser(g0, cond, sched, cfg)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    z, t, c, eps = make_eps_batch(sched, g0, cond, np.random.default_rng(1), 512)
    conds = [Condition(embedding=v) for v in c]
    assert eps_mse(a, sched, z, t, conds, eps) < 0.5


def test_training_rejects_non_finite():
    sched = Schedule.cosine(20)
    g0 = np.full((16, 4), 1e200)
    with pytest.raises(NonFiniteLoss), np.errstate(all="ignore"):
        train_denoiser(g0, g0, sched, DenoiserTrainConfig(width=4, steps=3, batch_size=4, n_time=4))


def _tv(a, b):
    na, nb = sum(a.values()), sum(b.values())
    return 0.5 * sum(abs(a[k] / na - b[k] / nb) for k in set(a) | set(b))


@pytest.mark.xfail(strict=True, reason="a two-layer MLP collapses onto saturated specs of the 34,900-spec grammar")
def test_unconditional_network_matches_grammar_marginals(dictionary):
    from collections import Counter

    specs = enumerate_specs()
    rng = np.random.default_rng(0)
    idx = rng.integers(len(specs), size=10_000)
    g0 = np.array([encode(specs[i], rng, dictionary) for i in idx])
    net = train_denoiser(g0, np.zeros_like(g0), SCHED, DenoiserTrainConfig(steps=4000))
    out = sample(net, SCHED, Condition(embedding=np.zeros(g0.shape[1])), rng=np.random.default_rng(1), n=10_000)
    drawn = [decode(v, dictionary) for v in out]

    def marginals(ss):
        return (Counter(s.scaffold for s in ss), Counter(len(s.groups) for s in ss),
                Counter(len(s.modifiers) for s in ss), Counter(t for s in ss for t in s.groups + s.modifiers))

    for got, want in zip(marginals(drawn), marginals([specs[i] for i in idx])):
        assert _tv(got, want) <= 0.1
