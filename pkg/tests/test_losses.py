import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from upllrs import losses, nn
from upllrs.errors import InvariantError

from conftest import fd_grad, random_candidates, rel_err

SEEDS = st.integers(0, 2**32 - 1)
FD = settings(max_examples=100, deadline=None)


def _case(seed, n=None, C=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(1, 5))
    C = C or int(rng.integers(2, 7))
    z = rng.normal(scale=2.0, size=(n, C))
    return rng, z, random_candidates(rng, n, C)


def _random_weights(rng, cands):
    w = np.where(cands, rng.random(cands.shape) + 0.05, 0.0)
    return w / w.sum(axis=1, keepdims=True)


# --- finite-difference checks (>=100 random cases each) -----------------------

@FD
@given(SEEDS)
def test_cce_gradient(seed):
    _, z, c = _case(seed)
    g = losses.cce_loss(nn.softmax(z), c)[2]
    assert rel_err(g, fd_grad(lambda v: losses.cce_loss(nn.softmax(v), c)[0], z)) < 1e-4


@FD
@given(SEEDS)
def test_mae_gradient(seed):
    _, z, c = _case(seed)
    g = losses.mae_loss(nn.softmax(z), c)[2]
    assert rel_err(g, fd_grad(lambda v: losses.mae_loss(nn.softmax(v), c)[0], z)) < 1e-4


@FD
@given(SEEDS)
def test_weighted_cce_gradient(seed):
    rng, z, c = _case(seed)
    w = _random_weights(rng, c)
    g = losses.weighted_cce(nn.softmax(z), c, w)[1]
    assert rel_err(g, fd_grad(lambda v: losses.weighted_cce(nn.softmax(v), c, w)[0], z)) < 1e-4


@FD
@given(SEEDS)
def test_sup_gradient(seed):
    _, z, c = _case(seed)
    g = losses.sup_noncandidate_loss(nn.softmax(z), c)[1]
    f = lambda v: losses.sup_noncandidate_loss(nn.softmax(v), c)[0]
    assert rel_err(g, fd_grad(f, z)) < 1e-4


@FD
@given(SEEDS)
def test_kl_gradient_each_view(seed):
    rng, z, c = _case(seed)
    w = _random_weights(rng, c)
    z2 = z + rng.normal(scale=0.5, size=z.shape)
    _, grads = losses.kl_consistency(w, [nn.softmax(z), nn.softmax(z2)])
    g0 = fd_grad(lambda v: losses.kl_consistency(w, [nn.softmax(v), nn.softmax(z2)])[0], z)
    g1 = fd_grad(lambda v: losses.kl_consistency(w, [nn.softmax(z), nn.softmax(v)])[0], z2)
    assert rel_err(grads[0], g0) < 1e-4 and rel_err(grads[1], g1) < 1e-4


@FD
@given(SEEDS)
def test_unreliable_gradient_strong_view(seed):
    rng, z, _ = _case(seed)
    weak = nn.softmax(z * 3)
    zs = z + rng.normal(scale=0.3, size=z.shape)
    tau = float(rng.uniform(0.2, 0.9))
    g = losses.unreliable_loss(weak, nn.softmax(zs), tau)[1]
    f = lambda v: losses.unreliable_loss(weak, nn.softmax(v), tau)[0]
    assert rel_err(g, fd_grad(f, zs)) < 1e-4


# --- cce / mae -----------------------------------------------------------------

def test_cce_examples():
    u = np.full((1, 4), 0.25)
    assert losses.cce_loss(u, [[True, False, False, False]])[0] == pytest.approx(math.log(4))
    assert losses.cce_loss(u, [[True] * 4])[0] == pytest.approx(math.log(4))


def test_cce_matches_hand_sum():
    rng = np.random.default_rng(3)
    p = nn.softmax(rng.normal(size=(1, 5)))[0]
    s = [0, 2, 4]
    mask = np.zeros((1, 5), bool)
    mask[0, s] = True
    expected = sum(-math.log(p[j]) for j in s) / 3
    assert losses.cce_loss(p[None], mask)[0] == pytest.approx(expected, rel=1e-13)


def test_empty_candidate_set_rejected():
    with pytest.raises(InvariantError):
        losses.cce_loss(np.full((1, 3), 1 / 3), [[False] * 3])
    with pytest.raises(InvariantError):
        losses.mae_loss(np.full((1, 3), 1 / 3), [[False] * 3])


def test_mae_examples():
    assert losses.mae_loss([[0.0, 1.0, 0.0]], [[False, True, False]])[0] == 0.0
    u = np.full((1, 10), 0.1)
    single = np.zeros((1, 10), bool)
    single[0, 3] = True
    assert losses.mae_loss(u, single)[0] == pytest.approx(1.8)


def test_mae_matches_l1_oracle():
    rng = np.random.default_rng(5)
    p = nn.softmax(rng.normal(size=(4, 6)))
    c = random_candidates(rng, 4, 6)
    _, per, _ = losses.mae_loss(p, c)
    for i in range(4):
        members = np.flatnonzero(c[i])
        expected = np.mean([np.abs(p[i] - np.eye(6)[j]).sum() for j in members])
        assert per[i] == pytest.approx(expected, rel=1e-12)


@given(SEEDS)
def test_mae_bounded(seed):
    _, z, c = _case(seed)
    _, per, _ = losses.mae_loss(nn.softmax(z * 10), c)
    assert np.all((per >= 0) & (per <= 2))


# --- weighted cce / weight updates --------------------------------------------

def test_weighted_cce_uniform_equals_cce_bitwise():
    rng, z, c = _case(11, n=6, C=5)
    p = nn.softmax(z)
    m1, _, g1 = losses.cce_loss(p, c)
    m2, g2 = losses.weighted_cce(p, c, losses.uniform_weights(c))
    assert m1 == m2 and g1.tobytes() == g2.tobytes()


def test_weighted_cce_one_hot_is_ce():
    p = nn.softmax(np.array([[0.3, -1.0, 2.0]]))
    c = np.array([[True, False, True]])
    w = np.array([[0.0, 0.0, 1.0]])
    assert losses.weighted_cce(p, c, w)[0] == pytest.approx(-math.log(p[0, 2]))


def test_weighted_cce_double_sum_oracle():
    rng, z, c = _case(17, n=5, C=6)
    w = _random_weights(rng, c)
    p = nn.softmax(z)
    expected = sum(w[i, j] * -math.log(p[i, j]) for i in range(5) for j in range(6) if c[i, j]) / 5
    assert losses.weighted_cce(p, c, w)[0] == pytest.approx(expected, rel=1e-13)


def test_weighted_cce_rejects_noncandidate_weight():
    with pytest.raises(InvariantError):
        losses.weighted_cce([[0.5, 0.5]], [[True, False]], [[0.5, 0.5]])


def test_update_weights_examples():
    np.testing.assert_allclose(losses.update_weights([[0.5, 0.3, 0.2]], [[True, False, True]]),
                               [[0.5 / 0.7, 0, 0.2 / 0.7]], rtol=1e-14)
    np.testing.assert_array_equal(losses.update_weights([[0.2, 0.8]], [[True, False]]), [[1.0, 0.0]])
    c = np.array([[True, True, False, True]])
    np.testing.assert_allclose(losses.update_weights(np.full((1, 4), 0.25), c), c / 3)


def test_update_weights_zero_mass_guarded():
    w = losses.update_weights([[0.0, 0.0, 1.0]], [[True, True, False]])
    np.testing.assert_allclose(w, [[0.5, 0.5, 0.0]])


@given(SEEDS, st.integers(1, 4))
def test_weight_rows_valid_after_updates(seed, views):
    rng, z, c = _case(seed)
    probs = [nn.softmax(z * 20 + rng.normal(size=z.shape)) for _ in range(views)]
    losses.check_weights(losses.update_weights(probs[0], c), c)
    losses.check_weights(losses.update_weights_augmented(probs, c), c)


@given(SEEDS)
def test_single_view_augmented_is_bitwise_plain(seed):
    _, z, c = _case(seed)
    p = nn.softmax(z)
    assert losses.update_weights_augmented([p], c).tobytes() == losses.update_weights(p, c).tobytes()


def test_identical_views_match_plain_update():
    _, z, c = _case(4, n=4, C=5)
    p = nn.softmax(z)
    np.testing.assert_allclose(losses.update_weights_augmented([p, p, p], c),
                               losses.update_weights(p, c), rtol=1e-12)


def test_augmented_update_high_precision_oracle():
    mpmath.mp.dps = 40
    rng = np.random.default_rng(8)
    p1, p2 = nn.softmax(rng.normal(size=(1, 5))), nn.softmax(rng.normal(size=(1, 5)))
    c = np.array([[True, False, True, True, False]])
    gm = {j: mpmath.sqrt(mpmath.mpf(p1[0, j]) * mpmath.mpf(p2[0, j])) for j in (0, 2, 3)}
    tot = sum(gm.values())
    expected = [float(gm[j] / tot) if j in gm else 0.0 for j in range(5)]
    np.testing.assert_allclose(losses.update_weights_augmented([p1, p2], c)[0], expected, rtol=1e-13)


def test_augmented_update_no_underflow():
    p = np.full((1, 3), 1e-300)
    p[0, 2] = 1.0
    w = losses.update_weights_augmented([p] * 5, [[True, True, False]])
    np.testing.assert_allclose(w, [[0.5, 0.5, 0.0]])


# --- sup / kl -----------------------------------------------------------------

def test_sup_examples():
    assert losses.sup_noncandidate_loss([[0.2, 0.8]], [[True, True]])[0] == 0.0
    big = losses.sup_noncandidate_loss([[1.0, 0.0]], [[False, True]])[0]
    assert math.isfinite(big) and big > 20


def test_sup_direct_oracle():
    rng, z, c = _case(21, n=3, C=6)
    p = nn.softmax(z)
    expected = sum(-math.log(1 - p[i, k]) for i in range(3) for k in range(6) if not c[i, k]) / 3
    assert losses.sup_noncandidate_loss(p, c)[0] == pytest.approx(expected, rel=1e-12)


def test_kl_examples():
    w = np.array([[0.2, 0.0, 0.8]])
    assert losses.kl_consistency(w, [w, w])[0] == pytest.approx(0.0, abs=1e-15)
    p1 = np.array([[0.1, 0.6, 0.3]])
    p2 = np.array([[0.4, 0.4, 0.2]])
    one_hot = np.array([[0.0, 1.0, 0.0]])
    assert losses.kl_consistency(one_hot, [p1, p2])[0] == pytest.approx(-math.log(0.6) - math.log(0.4))


def test_kl_direct_oracle():
    rng, z, c = _case(23, n=2, C=4)
    w = _random_weights(rng, c)
    views = [nn.softmax(z), nn.softmax(-z)]
    expected = 0.0
    for p in views:
        for i in range(2):
            expected += sum(w[i, j] * math.log(w[i, j] / p[i, j]) for j in range(4) if w[i, j] > 0)
    assert losses.kl_consistency(w, views)[0] == pytest.approx(expected / 2, rel=1e-12)


@given(SEEDS)
def test_kl_nonnegative(seed):
    rng, z, c = _case(seed)
    assert losses.kl_consistency(_random_weights(rng, c), [nn.softmax(z)])[0] >= -1e-12


# --- schedule / pseudo labels / unreliable ------------------------------------

def test_pi_schedule():
    assert losses.pi_schedule(0, 100, 1.0) == 0
    assert losses.pi_schedule(100, 100, 1.0) == 1.0
    assert losses.pi_schedule(200, 100, 1.0) == 1.0
    assert losses.pi_schedule(50, 100, 2.0) == 1.0
    with pytest.raises(InvariantError):
        losses.pi_schedule(1, 0, 1.0)


def test_pseudo_label_examples():
    pl = losses.pseudo_label([0.96, 0.04], 0.95)
    assert pl.label == 0 and pl.confidence == pytest.approx(0.96)
    assert losses.pseudo_label([0.94, 0.06], 0.95) is None
    assert losses.pseudo_label([0.5, 0.5], 0.5).label == 0  # lowest index wins ties


@given(st.integers(2, 50), st.floats(0.01, 1.0))
def test_pseudo_label_uniform_none(C, tau):
    pl = losses.pseudo_label(np.full(C, 1 / C), 0.95)
    assert pl is None
    pl = losses.pseudo_label(np.eye(C)[C - 1] * 0.99 + 0.01 / C, tau)
    assert pl is None or pl.confidence >= tau


def test_unreliable_loss_examples():
    rng = np.random.default_rng(0)
    p = nn.softmax(rng.normal(size=(5, 4)) * 0.1)
    m, g = losses.unreliable_loss(p, p, 0.95)
    assert m == 0.0 and not g.any()
    weak = np.eye(4)[[0, 2, 3]]
    strong = np.full((3, 4), 0.25)
    assert losses.unreliable_loss(weak, strong, 0.95)[0] == pytest.approx(math.log(4))


def test_unreliable_masked_ce_oracle():
    weak = np.array([[0.97, 0.03], [0.6, 0.4], [0.01, 0.99], [0.5, 0.5]])
    strong = np.array([[0.7, 0.3], [0.2, 0.8], [0.4, 0.6], [0.9, 0.1]])
    expected = (-math.log(0.7) - math.log(0.6)) / 4  # denominator is the full batch
    assert losses.unreliable_loss(weak, strong, 0.95)[0] == pytest.approx(expected)


def test_total_augmented_loss():
    assert losses.total_augmented_loss(1.0, 2.0, 0.5, 3.0, 0.0) == 2.0
    assert losses.total_augmented_loss(1.0, 2.0, 0.5, 0.0, 2.0) == 2.0
    assert losses.total_augmented_loss(1.0, 2.0, 0.5, 3.0, 2.0) == 8.0
