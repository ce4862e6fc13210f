import numpy as np
import pytest
import torch

from disentangle_seg.mine import (
    MiEstimate,
    MineNetwork,
    estimate_mi,
    gaussian_mi_nats,
    mi_loss,
    mine_training_objective,
)


def constant_network(c: float, dims=(4, 4)) -> MineNetwork:
    net = MineNetwork(*dims, hidden=16)
    with torch.no_grad():
        final = net.net[-1]
        final.weight.zero_()
        final.bias.fill_(c)
    return net


class TestEstimateMi:
    def test_constant_statistics_is_exactly_zero(self):
        net = constant_network(1.7)
        fa = torch.randn(8, 4)
        fd = torch.randn(8, 4)
        est = estimate_mi(net, fa, fd)
        assert float(est.value.detach()) == 0.0

    def test_large_constant_stays_finite(self):
        net = constant_network(80.0)
        est = estimate_mi(net, torch.randn(16, 4), torch.randn(16, 4))
        assert np.isfinite(float(est.value.detach()))
        assert abs(float(est.value.detach())) < 1e-4

    def test_small_batch_rejected(self):
        net = MineNetwork(4, 4)
        with pytest.raises(ValueError, match=">= 2"):
            estimate_mi(net, torch.randn(1, 4), torch.randn(1, 4))

    def test_misaligned_batches_rejected(self):
        net = MineNetwork(4, 4)
        with pytest.raises(ValueError, match="aligned"):
            estimate_mi(net, torch.randn(4, 4), torch.randn(5, 4))

    def test_deterministic_given_generator(self):
        torch.manual_seed(0)
        net = MineNetwork(4, 4, hidden=16)
        fa, fd = torch.randn(16, 4), torch.randn(16, 4)
        e1 = estimate_mi(net, fa, fd, torch.Generator().manual_seed(5))
        e2 = estimate_mi(net, fa, fd, torch.Generator().manual_seed(5))
        assert float(e1.value.detach()) == float(e2.value.detach())

    def test_value_identity(self):
        est = MiEstimate(joint_term=torch.tensor(0.9), marginal_term=torch.tensor(0.4))
        assert torch.isclose(est.value, torch.tensor(0.5))

    def test_spatial_features_pooled(self):
        torch.manual_seed(1)
        net = MineNetwork(3, 5, hidden=16)
        fa = torch.randn(8, 3, 4, 4)
        fd = torch.randn(8, 5, 4, 4)
        est = estimate_mi(net, fa, fd, torch.Generator().manual_seed(0))
        pooled = estimate_mi(net, fa.mean(dim=(2, 3)), fd.mean(dim=(2, 3)),
                             torch.Generator().manual_seed(0))
        assert torch.isclose(est.value, pooled.value, atol=1e-6)


class TestObjectives:
    def test_training_objective_sign_and_sum(self):
        e1 = MiEstimate(torch.tensor(0.3), torch.tensor(0.0))
        e2 = MiEstimate(torch.tensor(0.5), torch.tensor(0.0))
        assert float(mine_training_objective(e1, e2)) == pytest.approx(-0.8)
        zero = MiEstimate(torch.tensor(0.0), torch.tensor(0.0))
        assert float(mine_training_objective(zero, zero)) == 0.0

    def test_mi_loss_identity(self):
        est = MiEstimate(torch.tensor(0.42), torch.tensor(0.0))
        assert float(mi_loss(est)) == pytest.approx(0.42)

    def test_constant_statistics_zero_loss_zero_encoder_gradient(self):
        net = constant_network(2.0)
        fa = torch.randn(8, 4, requires_grad=True)
        fd = torch.randn(8, 4, requires_grad=True)
        est = estimate_mi(net, fa, fd)
        loss = mi_loss(est)
        assert float(loss.detach()) == 0.0
        loss.backward()
        assert torch.allclose(fa.grad, torch.zeros_like(fa))
        assert torch.allclose(fd.grad, torch.zeros_like(fd))

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(2)
        net = MineNetwork(2, 2, hidden=8).double()
        fa = torch.randn(12, 2, dtype=torch.float64)
        fd = torch.randn(12, 2, dtype=torch.float64)
        gen_seed = 3

        def objective():
            est = estimate_mi(net, fa, fd, torch.Generator().manual_seed(gen_seed))
            return mine_training_objective(est, est)

        loss = objective()
        net.zero_grad()
        loss.backward()
        rng = np.random.default_rng(0)
        params = [p for p in net.parameters() if p.numel() > 1]
        h = 1e-6
        for _ in range(10):
            p = params[int(rng.integers(len(params)))]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            an = float(p.grad[idx])
            with torch.no_grad():
                p[idx] += h
                up = float(objective())
                p[idx] -= 2 * h
                down = float(objective())
                p[idx] += h
            fd_grad = (up - down) / (2 * h)
            assert abs(fd_grad - an) <= 1e-4 * max(1.0, abs(an))


def test_analytic_gaussian_mi_values():
    assert gaussian_mi_nats(0.0) == 0.0
    assert gaussian_mi_nats(0.5) == pytest.approx(0.1438, abs=1e-4)
    assert gaussian_mi_nats(0.9) == pytest.approx(0.8304, abs=1e-4)
    assert gaussian_mi_nats(0.0) < gaussian_mi_nats(0.5) < gaussian_mi_nats(0.9)


def test_minimizing_mi_loss_reduces_estimate_on_toy_problem():
    # correlated 2D features through two tiny linear "encoders"; alternating
    # statistics/encoder updates must reduce the re-estimated MI
    finals, initials = [], []
    for seed in range(3):
        torch.manual_seed(seed)
        net = MineNetwork(2, 2, hidden=32)
        enc_a = torch.nn.Linear(2, 2)
        enc_d = torch.nn.Linear(2, 2)
        opt_t = torch.optim.Adam(net.parameters(), lr=1e-3)
        opt_e = torch.optim.Adam([*enc_a.parameters(), *enc_d.parameters()], lr=1e-3)
        gen = torch.Generator().manual_seed(seed)

        def batch():
            shared = torch.randn(128, 2)
            return enc_a(shared + 0.1 * torch.randn(128, 2)), \
                   enc_d(shared + 0.1 * torch.randn(128, 2))

        # warm up the statistics network so the initial estimate is meaningful
        for _ in range(200):
            fa, fd = batch()
            opt_t.zero_grad()
            loss = mine_training_objective(
                estimate_mi(net, fa.detach(), fd.detach(), gen),
                estimate_mi(net, fa.detach(), fd.detach(), gen))
            loss.backward()
            opt_t.step()
        with torch.no_grad():
            fa, fd = batch()
            initials.append(float(estimate_mi(net, fa, fd, gen).value))

        for _ in range(100):
            fa, fd = batch()
            opt_t.zero_grad()
            mine_training_objective(
                estimate_mi(net, fa.detach(), fd.detach(), gen),
                estimate_mi(net, fa.detach(), fd.detach(), gen)).backward()
            opt_t.step()
            fa, fd = batch()
            opt_e.zero_grad()
            mi_loss(estimate_mi(net, fa, fd, gen)).backward(
                inputs=[*enc_a.parameters(), *enc_d.parameters()])
            opt_e.step()
        with torch.no_grad():
            fa, fd = batch()
            finals.append(float(estimate_mi(net, fa, fd, gen).value))
    assert np.median(finals) < np.median(initials)
