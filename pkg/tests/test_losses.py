import math

import pytest
import torch

from vidshadow import losses as L
from oracles import central_difference_check


def softplus(x):
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def bce_scalar(x, t):
    return t * softplus(-x) + (1 - t) * softplus(x)


class TestBCE:
    def test_symmetric_point(self):
        assert L.bce_logits(torch.zeros(1), torch.full((1,), 0.5)).item() == pytest.approx(math.log(2))

    def test_saturated(self):
        v = L.bce_logits(torch.tensor([20.0], dtype=torch.float64), torch.ones(1, dtype=torch.float64))
        assert v.item() == pytest.approx(softplus(-20.0), rel=1e-9)
        assert v.item() == pytest.approx(2.06115e-9, rel=1e-5)

    def test_elementwise_formula(self):
        g = torch.Generator().manual_seed(0)
        x = torch.randn(2, 2, generator=g, dtype=torch.float64) * 3
        t = torch.rand(2, 2, generator=g, dtype=torch.float64)
        expected = sum(bce_scalar(a, b) for a, b in zip(x.flatten().tolist(), t.flatten().tolist())) / 4
        assert L.bce_logits(x, t).item() == pytest.approx(expected, rel=1e-12)

    def test_stable_for_huge_logits(self):
        x = torch.tensor([1e4, -1e4, 1e4, -1e4], dtype=torch.float64)
        t = torch.tensor([1.0, 0.0, 0.0, 1.0], dtype=torch.float64)
        v = L.bce_logits(x, t)
        assert torch.isfinite(v) and v.item() == pytest.approx(5e3)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            L.bce_logits(torch.zeros(2, 2), torch.zeros(4))


class TestDice:
    def test_perfect(self):
        assert L.dice(torch.ones(3, 3), torch.ones(3, 3)).item() == pytest.approx(0.0, abs=1e-7)

    def test_both_empty(self):
        assert L.dice(torch.zeros(3, 3), torch.zeros(3, 3)).item() == 0.0

    def test_disjoint(self):
        v = L.dice(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]), eps=1.0)
        assert v.item() == pytest.approx(1 - 1 / 3)


class TestSemLoss:
    def test_zero_when_equal(self):
        a = [torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)]
        assert L.sem_loss(a, a).item() == 0.0

    def test_constant_offset(self):
        t = torch.rand(1, 2, 3, 3, dtype=torch.float64)
        assert L.sem_loss([t + 0.25], [t]).item() == pytest.approx(0.0625)

    def test_sum_over_stages(self):
        g = torch.Generator().manual_seed(1)
        a = [torch.rand(3, 3, generator=g, dtype=torch.float64) for _ in range(2)]
        t = [torch.rand(3, 3, generator=g, dtype=torch.float64) for _ in range(2)]
        expected = sum(sum((x - y) ** 2 for x, y in zip(ai.flatten().tolist(), ti.flatten().tolist())) / 9
                       for ai, ti in zip(a, t))
        assert L.sem_loss(a, t).item() == pytest.approx(expected, rel=1e-12)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            L.sem_loss([torch.zeros(2)], [])
        with pytest.raises(ValueError):
            L.sem_loss([torch.zeros(2)], [torch.zeros(3)])


class TestSegLoss:
    def test_perfect_saturated(self):
        gt = (torch.rand(4, 4) > 0.5).double()
        logits = (gt * 2 - 1) * 40
        assert L.mask_loss(logits, gt).item() == pytest.approx(0.0, abs=1e-6)

    def test_zero_logits_half_target(self):
        n = 16
        gt = torch.full((4, 4), 0.5, dtype=torch.float64)
        dice_term = 1 - (2 * 0.25 * n + 1) / (0.5 * n + 0.5 * n + 1)
        assert L.edge_loss(torch.zeros(4, 4, dtype=torch.float64), gt).item() == pytest.approx(
            math.log(2) + dice_term, rel=1e-12)

    def test_random_is_sum_of_parts(self):
        g = torch.Generator().manual_seed(2)
        x = torch.randn(4, 4, generator=g, dtype=torch.float64)
        t = (torch.rand(4, 4, generator=g, dtype=torch.float64) > 0.5).double()
        p = [1 / (1 + math.exp(-v)) for v in x.flatten().tolist()]
        tl = t.flatten().tolist()
        bce = sum(bce_scalar(a, b) for a, b in zip(x.flatten().tolist(), tl)) / 16
        dice = 1 - (2 * sum(a * b for a, b in zip(p, tl)) + 1) / (sum(p) + sum(tl) + 1)
        assert L.mask_loss(x, t).item() == pytest.approx(bce + dice, rel=1e-12)


class TestTotal:
    def test_default_weights(self):
        out = L.total_loss(torch.tensor(1.0), torch.tensor(2.0), torch.tensor(3.0), L.LossWeights(1, 0.5, 1))
        assert out.total.item() == 5.0

    def test_zero_losses(self):
        z = torch.tensor(0.0)
        assert L.total_loss(z, z, z).total.item() == 0.0

    def test_zero_weights(self):
        out = L.total_loss(torch.tensor(7.0), torch.tensor(2.0), torch.tensor(3.0), L.LossWeights(0, 0, 0))
        assert out.total.item() == 0.0

    def test_default_weights(self):
        assert L.LossWeights() == L.LossWeights(1.0, 0.5, 1.0)

    @pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
    def test_rejects_bad_weights(self, bad):
        with pytest.raises(ValueError):
            L.LossWeights(lambda_edge=bad)

    def test_nonfinite_terms_rejected(self):
        with pytest.raises(ValueError):
            L.total_loss(torch.tensor(float("nan")), torch.tensor(0.0), torch.tensor(0.0))

    def test_zero_weight_contributes_no_gradient(self):
        x = torch.randn(4, 4, dtype=torch.float64, requires_grad=True)
        t = (torch.rand(4, 4, dtype=torch.float64) > 0.5).double()
        out = L.total_loss(L.sem_loss([torch.sigmoid(x)], [t]), L.edge_loss(x, t), L.mask_loss(x, t),
                           L.LossWeights(0.0, 0.0, 1.0))
        (g_all,) = torch.autograd.grad(out.total, x)
        (g_mask,) = torch.autograd.grad(L.mask_loss(x, t), x)
        assert torch.equal(g_all, g_mask)


def _inputs(seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(4, 4, generator=g, dtype=torch.float64, requires_grad=True)
    t = torch.rand(4, 4, generator=g, dtype=torch.float64)
    return x, t


@pytest.mark.parametrize("name,fn", [
    ("bce", lambda x, t: L.bce_logits(x, t)),
    ("dice", lambda x, t: L.dice(torch.sigmoid(x), t)),
    ("mse", lambda x, t: L.sem_loss([torch.sigmoid(x)], [t])),
    ("edge", lambda x, t: L.edge_loss(x, t)),
])
def test_gradients_match_finite_differences(name, fn):
    x, t = _inputs(3)
    assert central_difference_check(lambda: fn(x, t), [x]) < 1e-4


def test_dice_gradient_wrt_probs():
    g = torch.Generator().manual_seed(4)
    p = torch.rand(4, 4, generator=g, dtype=torch.float64, requires_grad=True)
    t = (torch.rand(4, 4, generator=g, dtype=torch.float64) > 0.5).double()
    assert central_difference_check(lambda: L.dice(p, t), [p]) < 1e-4


def test_losses_nonnegative():
    for seed in range(20):
        x, t = _inputs(seed)
        for v in (L.bce_logits(x, t), L.dice(torch.sigmoid(x), t), L.mask_loss(x, t)):
            assert v.item() >= 0 and math.isfinite(v.item())
