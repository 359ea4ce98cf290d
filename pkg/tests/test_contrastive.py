"""Loss-layer checks against a slow float64 reference implementation."""

import math

import numpy as np
import pytest
import torch

from surfclr import EmbeddingBatch, Temperature, nt_xent, retrieval_accuracy
from surfclr.contrastive import cosine_similarity_matrix, pair_losses_from_similarity
from surfclr.exceptions import (
    ConfigurationError,
    ContractError,
    PairingError,
    ParameterError,
    ShapeError,
)


def unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def batch(vectors, modality="rgb", ids=None, dtype=np.float32):
    t = torch.as_tensor(np.asarray(vectors, dtype=dtype))
    ids = ids or [str(i) for i in range(t.shape[0])]
    return EmbeddingBatch(modality=modality, vectors=t, sample_ids=list(ids))


def reference_loss(a, b, tau, negatives="all"):
    """Literal float64 transcription: softmax over sim/tau, anchor excluded."""
    z = np.concatenate([a, b], axis=0).astype(np.float64)
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    n = a.shape[0]
    sim = z @ z.T
    anchor_losses = []
    for i in range(2 * n):
        j = (i + n) % (2 * n)
        if negatives == "all":
            ks = [k for k in range(2 * n) if k != i]
        else:
            ks = list(range(n, 2 * n)) if i < n else list(range(n))
        den = sum(math.exp(sim[i, k] / tau) for k in ks)
        anchor_losses.append(-math.log(math.exp(sim[i, j] / tau) / den))
    per_pair = [(anchor_losses[i] + anchor_losses[i + n]) / 2 for i in range(n)]
    return float(np.mean(per_pair)), per_pair


def test_matches_float64_reference():
    rng = np.random.default_rng(7)
    for trial in range(60):
        n = int(rng.choice([1, 2, 4, 8]))
        d = int(rng.choice([4, 8, 16]))
        tau = float(rng.choice([0.05, 0.5]))
        mode = "all" if trial % 3 else "cross_modal_only"
        a, b = unit_rows(rng, n, d), unit_rows(rng, n, d)
        # float64 end to end so the 1e-6 comparison is about the math, not rounding
        out = nt_xent(
            batch(a, dtype=np.float64),
            batch(b, "agl", dtype=np.float64),
            Temperature(tau_init=tau, dtype=torch.float64),
            negatives=mode,
        )
        want_total, want_pairs = reference_loss(a, b, tau, negatives=mode)
        assert out.total_value == pytest.approx(want_total, abs=1e-6)
        np.testing.assert_allclose(
            out.per_pair.detach().numpy(), np.array(want_pairs), atol=1e-6
        )


def test_single_pair_loss_is_zero():
    rng = np.random.default_rng(0)
    a, b = unit_rows(rng, 1, 8), unit_rows(rng, 1, 8)
    out = nt_xent(batch(a), batch(b, "agl"), Temperature())
    assert abs(out.total_value) < 1e-9


def test_two_identical_pairs_give_log3():
    v = np.zeros((2, 4), dtype=np.float64)
    v[:, 0] = 1.0
    t = Temperature(tau_init=0.07, dtype=torch.float64)
    out = nt_xent(
        EmbeddingBatch("rgb", torch.as_tensor(v), ["0", "1"]),
        EmbeddingBatch("agl", torch.as_tensor(v.copy()), ["0", "1"]),
        t,
    )
    assert out.total_value == pytest.approx(math.log(3.0), abs=1e-6)


def test_loss_nonnegative_and_finite():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(1, 9))
        a, b = unit_rows(rng, n, 6), unit_rows(rng, n, 6)
        out = nt_xent(batch(a), batch(b, "agl"), Temperature(tau_init=0.07))
        assert math.isfinite(out.total_value)
        assert out.total_value >= 0.0
        assert (out.per_pair.detach() >= 0).all()


def test_pair_permutation_consistency():
    rng = np.random.default_rng(11)
    a, b = unit_rows(rng, 6, 8), unit_rows(rng, 6, 8)
    perm = rng.permutation(6)
    ids = [str(i) for i in range(6)]
    pids = [ids[i] for i in perm]
    base = nt_xent(batch(a), batch(b, "agl"), Temperature())
    shuf = nt_xent(
        batch(a[perm], ids=pids), batch(b[perm], "agl", ids=pids), Temperature()
    )
    assert shuf.total_value == pytest.approx(base.total_value, abs=1e-6)
    np.testing.assert_allclose(
        shuf.per_pair.detach().numpy(),
        base.per_pair.detach().numpy()[perm],
        atol=1e-6,
    )


def test_harder_negative_raises_affected_losses():
    rng = np.random.default_rng(5)
    z = torch.as_tensor(unit_rows(rng, 8, 16), dtype=torch.float64)
    sim = z @ z.T
    t = Temperature(tau_init=0.2, dtype=torch.float64)
    with torch.no_grad():
        base = pair_losses_from_similarity(sim, t)
        # rows 0..3 pair with rows 4..7; (1, 6) is a negative for anchors 1 and 6
        bumped = sim.clone()
        bumped[1, 6] = bumped[6, 1] = min(1.0, float(sim[1, 6]) + 0.4)
        after = pair_losses_from_similarity(bumped, t)
    assert float(after[1]) > float(base[1])
    assert float(after[6]) > float(base[6])
    untouched = [i for i in range(8) if i not in (1, 6)]
    np.testing.assert_allclose(
        after[untouched].numpy(), base[untouched].numpy(), atol=1e-12
    )


def test_temperature_clamps_on_use():
    t = Temperature(tau_init=0.07, tau_min=0.05, tau_max=0.5)
    with torch.no_grad():
        t.log_tau.fill_(math.log(5.0))
    assert t.value == pytest.approx(0.5)
    with torch.no_grad():
        t.log_tau.fill_(math.log(1e-4))
    assert t.value == pytest.approx(0.05)
    state = t.state()
    t2 = Temperature.from_state(state)
    assert t2.state() == state


def test_temperature_validation():
    with pytest.raises(ConfigurationError):
        Temperature(tau_min=0.0)
    with pytest.raises(ConfigurationError):
        Temperature(tau_min=0.5, tau_max=0.1)
    with pytest.raises(ConfigurationError):
        Temperature(tau_init=-1.0)


def test_log_tau_receives_gradient():
    rng = np.random.default_rng(2)
    a, b = unit_rows(rng, 4, 8), unit_rows(rng, 4, 8)
    t = Temperature()
    out = nt_xent(batch(a), batch(b, "agl"), t)
    out.total.backward()
    assert t.log_tau.grad is not None
    assert float(t.log_tau.grad.abs()) > 0


def test_input_validation():
    rng = np.random.default_rng(9)
    a, b = unit_rows(rng, 4, 8), unit_rows(rng, 3, 8)
    with pytest.raises(ShapeError):
        nt_xent(batch(a), batch(b, "agl"), Temperature())
    b2 = unit_rows(rng, 4, 8)
    with pytest.raises(PairingError):
        nt_xent(batch(a), batch(b2, "agl", ids=["9", "1", "2", "3"]), Temperature())
    with pytest.raises(ContractError):
        EmbeddingBatch("rgb", torch.ones((2, 4)), ["0", "1"])
    with pytest.raises(ContractError):
        cosine_similarity_matrix(torch.full((2, 4), 0.9))
    with pytest.raises(ConfigurationError):
        nt_xent(batch(a), batch(unit_rows(rng, 4, 8), "agl"), Temperature(), negatives="nope")


def test_retrieval_hand_case():
    # pair 0 retrieves correctly both ways, pair 1 only b->a
    a = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    bv = np.array([[1.0, 0.0], [1.0, 0.0]], dtype=np.float32)
    top_ab, top_ba = retrieval_accuracy(batch(a), batch(bv, "agl"))
    # query a0 -> sims (1, 1): tie, stable order picks index 0, a hit
    # query a1 -> sims (0, 0): tie, picks index 0, a miss
    assert top_ab == pytest.approx(0.5)
    # query b0 -> (1, 0) hit; query b1 -> (1, 0) picks 0, miss
    assert top_ba == pytest.approx(0.5)


def test_retrieval_perfect_and_topk():
    rng = np.random.default_rng(21)
    a = unit_rows(rng, 8, 32)
    top_ab, top_ba = retrieval_accuracy(batch(a), batch(a.copy(), "agl"))
    assert top_ab == 1.0 and top_ba == 1.0
    top5_ab, top5_ba = retrieval_accuracy(batch(a), batch(a.copy(), "agl"), k=5)
    assert top5_ab == 1.0 and top5_ba == 1.0
    with pytest.raises(ParameterError):
        retrieval_accuracy(batch(a), batch(a.copy(), "agl"), k=8)
    with pytest.raises(ParameterError):
        retrieval_accuracy(batch(a[:1]), batch(a[:1].copy(), "agl"))


def test_retrieval_chance_rate_for_random_embeddings():
    # independent random directions: top-1 hit rate should sit near 1/N
    rng = np.random.default_rng(33)
    n, trials = 8, 400
    hits = []
    for _ in range(trials):
        a, b = unit_rows(rng, n, 16), unit_rows(rng, n, 16)
        top_ab, top_ba = retrieval_accuracy(batch(a), batch(b, "agl"))
        hits.extend([top_ab, top_ba])
    rate = float(np.mean(hits))
    assert abs(rate - 1.0 / n) < 0.03
