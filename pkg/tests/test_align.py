import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cogmol.align import (
    AlignBatch,
    AlignConfig,
    AlignModel,
    DegenerateEmbedding,
    NonFiniteLoss,
    contrastive_loss,
    pairs_from_specs,
    retrieval_accuracy,
    train_alignment,
)
from cogmol.codec import enumerate_specs


def random_batch(rng, b=8, d=6, v=5):
    bags = rng.integers(0, 3, (b, v)).astype(float)
    bags[np.arange(b), np.arange(b) % v] += 1  # no empty bag
    return AlignBatch(rng.standard_normal((b, d)), bags)


def fd_gradient(W, tau, batch, h=1e-6):
    out = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        out[idx] = (contrastive_loss(Wp, tau, batch)[0] - contrastive_loss(Wm, tau, batch)[0]) / (2 * h)
    return out


def cross_polytope(k=5):
    # 2k pairs at +-e_i; text bags live in the same space
    g = np.vstack([np.eye(k), -np.eye(k)])
    return g, g.copy()


def test_two_orthogonal_pairs():
    g = np.eye(2)
    loss, _ = contrastive_loss(np.eye(2), 1.0, AlignBatch(g, g))
    assert loss == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-14)


def test_batch_needs_two_pairs():
    with pytest.raises(ValueError):
        AlignBatch(np.ones((1, 3)), np.ones((1, 3)))


def test_permutation_invariance():
    rng = np.random.default_rng(0)
    batch = random_batch(rng)
    W = rng.standard_normal((6, 5))
    perm = rng.permutation(len(batch))
    a, _ = contrastive_loss(W, 0.1, batch)
    b, _ = contrastive_loss(W, 0.1, AlignBatch(batch.latents[perm], batch.bags[perm]))
    assert a == pytest.approx(b, abs=1e-12)


def test_scale_invariance():
    rng = np.random.default_rng(1)
    batch = random_batch(rng)
    W = rng.standard_normal((6, 5))
    a, _ = contrastive_loss(W, 0.1, batch)
    assert contrastive_loss(W, 0.1, AlignBatch(4.0 * batch.latents, batch.bags))[0] == a
    assert contrastive_loss(W, 0.1, AlignBatch(3.7 * batch.latents, batch.bags))[0] == pytest.approx(a, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng)
    W = rng.standard_normal((6, 5))
    tau = rng.uniform(0.1, 1.0)
    _, grad = contrastive_loss(W, tau, batch)
    fd = fd_gradient(W, tau, batch)
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) <= 1e-4


def test_degenerate_embedding():
    g = np.eye(3)
    with pytest.raises(DegenerateEmbedding):
        contrastive_loss(np.eye(3), 0.1, AlignBatch(np.vstack([g[:2], np.zeros(3)]), g))
    with pytest.raises(DegenerateEmbedding):
        contrastive_loss(np.zeros((3, 3)), 0.1, AlignBatch(g, g))


def test_already_aligned_stays_put():
    g, bags = cross_polytope()
    before, _ = contrastive_loss(np.eye(5), 0.1, AlignBatch(g, bags))
    model = train_alignment(g, bags, AlignConfig(epochs=50))
    after, _ = contrastive_loss(model.W, 0.1, AlignBatch(g, bags))
    assert abs(before - after) <= 1e-6


def test_retrieval_and_determinism(dictionary):
    rng = np.random.default_rng(0)
    specs = enumerate_specs(2, 2, 1)
    chosen = [specs[i] for i in rng.choice(len(specs), 100, replace=False)]
    latents, bags = pairs_from_specs(chosen, dictionary, rng)
    frozen = latents.copy()
    log = []
    model = train_alignment(latents, bags, AlignConfig(), log=log)
    assert retrieval_accuracy(model, latents, bags) >= 0.9
    assert latents.tobytes() == frozen.tobytes()
    # epoch means fall overall; minibatch noise allows small bumps
    assert log[-1] < log[0]
    assert max(b - a for a, b in zip(log, log[1:])) <= 0.05
    again = train_alignment(latents, bags, AlignConfig())
    assert again.W.tobytes() == model.W.tobytes()


def test_full_batch_loss_is_monotone(dictionary):
    rng = np.random.default_rng(3)
    specs = enumerate_specs(2, 2, 1)
    chosen = [specs[i] for i in rng.choice(len(specs), 40, replace=False)]
    latents, bags = pairs_from_specs(chosen, dictionary, rng)
    log = []
    train_alignment(latents, bags, AlignConfig(epochs=60, batch_size=40, lr=0.02), log=log)
    assert all(b <= a + 1e-9 for a, b in zip(log, log[1:]))


def test_training_guards():
    g, bags = cross_polytope()
    with pytest.raises(ValueError):
        train_alignment(g[:5], bags[:5])
    rng = np.random.default_rng(0)
    with pytest.raises(NonFiniteLoss), np.errstate(all="ignore"):
        train_alignment(rng.standard_normal((12, 4)), rng.random((12, 4)) + 0.1, AlignConfig(lr=1e308, epochs=5))
    with pytest.raises(ValueError):
        train_alignment(g, bags, AlignConfig(init="zeros"))


def test_model_serialization(tmp_path):
    model = AlignModel(np.arange(32 * 21, dtype=float).reshape(32, 21) / 100, tau=0.2, seed=7)
    path = tmp_path / "align.json"
    model.save(path)
    loaded = AlignModel.load(path)
    assert loaded.W.tobytes() == model.W.tobytes() and loaded.tau == 0.2 and loaded.seed == 7
    bad = path.read_text().replace(model.vocab_hash, "0" * 16)
    with pytest.raises(ValueError):
        AlignModel.from_json(bad)
    with pytest.raises(ValueError):
        AlignModel(np.eye(3), tau=0.0)


def test_alignment_sharpens_the_oracle_prior(models):
    # prior mass the text-guided oracle puts on specs that contain the prompt's components
    from cogmol.diffusion import Condition, OracleDenoiser

    support = enumerate_specs(2, 2, 1)
    oracle = OracleDenoiser(models.dictionary, support)
    counts = oracle.counts
    rng = np.random.default_rng(5)
    identity = AlignModel.identity()

    def matched_mass(align, spec):
        logw = oracle._log_weights(Condition(embedding=align.embed(spec.bag()[None])[0]))
        w = np.exp(logw - logw.max())
        ok = np.all(counts >= spec.bag()[None, :], axis=1)
        return w[ok].sum() / w.sum()

    picks = [support[i] for i in rng.choice(len(support), 50, replace=False)]
    trained = np.mean([matched_mass(models.align, s) for s in picks])
    before = np.mean([matched_mass(identity, s) for s in picks])
    assert trained >= before


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_loss_is_finite_and_positive(seed):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng)
    loss, grad = contrastive_loss(rng.standard_normal((6, 5)), 0.1, batch)
    assert np.isfinite(loss) and loss > 0 and np.all(np.isfinite(grad))
