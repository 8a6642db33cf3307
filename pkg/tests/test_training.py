import numpy as np
import pytest

from aqforecast import autodiff as ad
from aqforecast.autodiff import Tape, Tensor, backward
from aqforecast.model import ModelConfig, init_weights
from aqforecast.preprocess import WindowedDataset
from aqforecast.training import (
    AdamState, TrainConfig, TrainingError, adam_step, epoch_order, mae_loss, train,
)


def dataset(n=6, T=16, F=3, P=1, seed=0):
    """Target = 0.3 * feature 1, shifted."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, T, F))
    y = 0.3 * x[:, :, :1] + 0.5
    if P > 1:
        y = np.repeat(y, P, axis=2)
    return WindowedDataset(x, y, np.arange(n), 1, tuple(f"f{i}" for i in range(F)),
                           tuple(f"p{i}" for i in range(P)))


class TestMAE:
    def test_zero(self):
        y = np.ones((2, 3, 1))
        assert mae_loss(Tensor(y), y).item() == 0.0

    def test_hand(self):
        assert mae_loss(Tensor([0.0, 2.0]), [1.0, 1.0]).item() == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mae_loss(Tensor(np.ones(3)), np.ones(2))

    def test_gradient_is_sign_over_count(self):
        rng = np.random.default_rng(0)
        pred, truth = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 2))
        p = Tensor(pred, requires_grad=True)
        with Tape() as tape:
            L = mae_loss(p, truth)
        backward(L, tape)
        np.testing.assert_array_equal(p.grad, np.sign(pred - truth) / 12)
        rep = ad.grad_check(lambda u: mae_loss(u, truth), pred, h=1e-5, tol=1e-6)
        assert rep["passed"]


class TestAdam:
    def test_first_step(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        p.grad = np.full(3, 0.7)
        adam_step([p], AdamState.zeros_like([p]), TrainConfig())
        np.testing.assert_allclose(p.data, -0.001 * 0.7 / (0.7 + 1e-8), rtol=1e-12)
        np.testing.assert_allclose(p.data, -0.001, rtol=1e-7)

    def test_zero_gradient(self):
        p = Tensor(np.arange(3.0), requires_grad=True)
        st = AdamState.zeros_like([p])
        for _ in range(5):
            p.grad = np.zeros(3)
            adam_step([p], st, TrainConfig())
        np.testing.assert_array_equal(p.data, np.arange(3.0))

    def test_degenerate_betas(self):
        cfg = TrainConfig(beta1=0.0, beta2=0.0, learning_rate=0.01)
        p = Tensor(np.ones(4), requires_grad=True)
        st = AdamState.zeros_like([p])
        for g in (np.array([1.0, -2.0, 0.5, 3.0]), np.array([-0.1, 0.2, 4.0, -5.0])):
            start = p.data.copy()
            p.grad = g
            adam_step([p], st, cfg)
            np.testing.assert_allclose(p.data, start - 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-14)

    def test_matches_reference_loop(self):
        """Compare against a scalar transcription of the textbook update."""
        rng = np.random.default_rng(1)
        grads = rng.normal(size=(6, 2))
        p = Tensor(np.array([0.3, -0.2]), requires_grad=True)
        st = AdamState.zeros_like([p])
        cfg = TrainConfig()
        ref = [0.3, -0.2]
        m = [0.0, 0.0]
        v = [0.0, 0.0]
        for t, g in enumerate(grads, start=1):
            p.grad = g
            adam_step([p], st, cfg)
            for k in range(2):
                m[k] = 0.9 * m[k] + 0.1 * g[k]
                v[k] = 0.999 * v[k] + 0.001 * g[k] ** 2
                ref[k] -= 0.001 * (m[k] / (1 - 0.9 ** t)) / ((v[k] / (1 - 0.999 ** t)) ** 0.5 + 1e-8)
        np.testing.assert_allclose(p.data, ref, rtol=1e-13)
        assert np.all(st.v[0] >= 0)

    def test_non_finite_gradient(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([np.nan, 1.0])
        with pytest.raises(TrainingError):
            adam_step([p], AdamState.zeros_like([p]), TrainConfig())


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(iterations=0), dict(batch_size=0), dict(learning_rate=-1.0)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_default_hyperparameters(self):
        c = TrainConfig()
        assert (c.iterations, c.learning_rate, c.batch_size) == (200, 0.001, 8)


class TestTrain:
    def _model(self, seed=0, P=1, T=16):
        return init_weights(ModelConfig(F=3, T=T, H=8, d_a=4, P=P, seed=seed))

    def test_learns_synthetic_linear_task(self):
        ds = dataset(n=8)
        rep = train(self._model(), ds, TrainConfig(iterations=50, learning_rate=0.01, seed=0))
        assert len(rep.epoch_losses) == 50
        assert all(np.isfinite(rep.epoch_losses))
        assert rep.epoch_losses[-1] < 0.5 * rep.epoch_losses[0]

    def test_single_sample_large_batch(self):
        ds = dataset(n=1)
        rep = train(self._model(), ds, TrainConfig(iterations=3, batch_size=8))
        assert len(rep.epoch_losses) == 3
        assert rep.state.step == 3  # one batch per epoch

    def test_short_last_batch_kept(self):
        ds = dataset(n=5)
        rep = train(self._model(), ds, TrainConfig(iterations=2, batch_size=2))
        assert rep.state.step == 6

    def test_zero_learning_rate_keeps_parameters(self):
        m = self._model()
        before = {k: p.data.copy() for k, p in m.params.items()}
        train(m, dataset(), TrainConfig(iterations=3, learning_rate=0.0))
        for k, p in m.params.items():
            assert np.array_equal(before[k], p.data), k

    def test_bitwise_determinism(self):
        ms = [self._model(seed=5) for _ in range(2)]
        reps = [train(m, dataset(), TrainConfig(iterations=4, seed=9)) for m in ms]
        assert reps[0].epoch_losses == reps[1].epoch_losses
        for k in ms[0].params:
            assert np.array_equal(ms[0].params[k].data, ms[1].params[k].data)
        for k in ms[0].buffers:
            assert np.array_equal(ms[0].buffers[k], ms[1].buffers[k])

    def test_resume_matches_uninterrupted(self):
        full, part = self._model(seed=2), self._model(seed=2)
        train(full, dataset(), TrainConfig(iterations=4, seed=1))
        r1 = train(part, dataset(), TrainConfig(iterations=2, seed=1))
        train(part, dataset(), TrainConfig(iterations=2, seed=1), state=r1.state, start_epoch=2)
        for k in full.params:
            assert np.array_equal(full.params[k].data, part.params[k].data)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            train(self._model(P=2), dataset(P=1), TrainConfig(iterations=1))

    def test_non_finite_loss(self):
        ds = dataset()
        ds.targets[0, 0, 0] = np.inf
        with pytest.raises(TrainingError, match="epoch 1"):
            train(self._model(), ds, TrainConfig(iterations=1))

    def test_epoch_order_is_seeded(self):
        assert np.array_equal(epoch_order(10, 3, 4), epoch_order(10, 3, 4))
        assert sorted(epoch_order(10, 3, 4)) == list(range(10))
