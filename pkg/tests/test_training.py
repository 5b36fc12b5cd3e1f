from __future__ import annotations

import numpy as np
import pytest

from app.application.services.mask_service import MaskService
from app.application.services.training_service import (
    TrainingData,
    TrainingService,
    adamw_update,
    build_x0,
    clip_grad_norm,
    cosine_lr,
    dual_masked_loss,
    dual_masked_loss_tensor,
    normalize_stats,
    prepare_training_data,
)
from app.core.exceptions import NumericalAbortException, ValidationException
from app.domain.models.training import FillMode, NormStats, OptimConfig, OptimState, Task
from app.domain.nn.unet import UNet, init_params
from app.domain.tensor import ops
from app.domain.tensor.tensor import Tape, constant, parameter


class TestLoss:
    def test_single_target_pixel(self):
        m_o = np.array([[1, 0], [0, 0]], dtype=bool)
        eps = np.zeros((2, 2))
        eps_hat = np.array([[3.0, 5.0], [5.0, 5.0]])
        assert dual_masked_loss(eps, eps_hat, np.zeros((2, 2), dtype=bool), m_o, 0.05) == pytest.approx(9.0)
        assert dual_masked_loss(eps, eps_hat, m_o, m_o, 0.1) == pytest.approx(9.0)

    def test_matches_pixel_loop(self, rng):
        eps, eps_hat = rng.standard_normal((2, 6, 6))
        m_i = rng.random((6, 6)) < 0.4
        m_o = rng.random((6, 6)) < 0.4
        m_o[0, 0] = True
        lam = 0.3
        num = den = 0.0
        for r in range(6):
            for c in range(6):
                w = float(m_o[r, c]) + lam * float(m_i[r, c] and m_o[r, c])
                num += w * (eps[r, c] - eps_hat[r, c]) ** 2
                den += w
        assert dual_masked_loss(eps, eps_hat, m_i, m_o, lam) == pytest.approx(num / den, rel=1e-12)

    def test_lambda_zero_is_plain_masked_mse(self, rng):
        eps, eps_hat = rng.standard_normal((2, 5, 5))
        m_i = rng.random((5, 5)) < 0.5
        m_o = rng.random((5, 5)) < 0.5
        m_o[2, 2] = True
        w = m_o.astype(np.float64)
        plain = float(np.sum(w * (eps - eps_hat) ** 2) / np.sum(w))
        assert dual_masked_loss(eps, eps_hat, m_i, m_o, 0.0) == plain

    def test_tape_loss_agrees(self, rng):
        eps, eps_hat = rng.standard_normal((2, 4, 4))
        m_i = rng.random((4, 4)) < 0.5
        m_o = rng.random((4, 4)) < 0.5
        m_o[0, 0] = True
        t = dual_masked_loss_tensor(eps, parameter(eps_hat), m_i, m_o, 0.2)
        assert t.item() == pytest.approx(dual_masked_loss(eps, eps_hat, m_i, m_o, 0.2), rel=1e-12)

    def test_no_gradient_outside_targets(self, rng):
        eps = rng.standard_normal((6, 6))
        eps_hat = parameter(rng.standard_normal((6, 6)))
        m_i = rng.random((6, 6)) < 0.5
        m_o = rng.random((6, 6)) < 0.3
        m_o[1, 1] = True
        with Tape() as tape:
            loss = dual_masked_loss_tensor(eps, eps_hat, m_i, m_o, 0.5)
        grad = tape.backward(loss)[eps_hat]
        assert np.all(grad[~m_o] == 0.0)
        assert np.all(grad[m_o] != 0.0)

    def test_overlap_gradient_ratio(self):
        lam = 0.25
        eps = np.zeros((2, 2))
        eps_hat = parameter(np.ones((2, 2)))
        m_o = np.ones((2, 2), dtype=bool)
        m_i = np.array([[1, 0], [1, 0]], dtype=bool)
        with Tape() as tape:
            loss = dual_masked_loss_tensor(eps, eps_hat, m_i, m_o, lam)
        grad = tape.backward(loss)[eps_hat]
        assert grad[0, 0] / grad[0, 1] == pytest.approx(1.0 + lam)

    def test_empty_target_refused(self):
        z = np.zeros((2, 2))
        with pytest.raises(ValidationException):
            dual_masked_loss(z, z, z.astype(bool), z.astype(bool), 0.1)


class TestData:
    def test_stats_ignore_unobserved_pixels(self):
        fields = np.full((1, 2, 4, 4), 1e6)
        observed = np.zeros((1, 4, 4), dtype=bool)
        observed[0, :2, :2] = True
        fields[0, 0, :2, :2] = 1.0
        fields[0, 1, :2, :2] = 3.0
        stats = normalize_stats(fields, observed)
        assert stats == NormStats(2.0, 1.0)

    def test_zero_fill(self, rng):
        target = rng.standard_normal((4, 4))
        m_o = rng.random((4, 4)) < 0.5
        x0 = build_x0(target, m_o, FillMode.ZERO)
        np.testing.assert_array_equal(x0[m_o], target[m_o])
        assert not np.any(x0[~m_o])

    def test_conditioning_fill_needs_x_c(self, rng):
        with pytest.raises(ValidationException):
            build_x0(np.zeros((2, 2)), np.ones((2, 2), dtype=bool), FillMode.CONDITIONING)

    def test_data_fraction(self, tiny_run, rng):
        fields = rng.standard_normal((4, 2, 8, 8))
        pairs = MaskService(tiny_run.scenario, 8).make_pairs(4)
        assert prepare_training_data(fields, pairs, data_fraction=0.5).n_traj == 2
        assert prepare_training_data(fields, pairs, data_fraction=0.1).n_traj == 1


class TestOptimizer:
    def test_cosine_endpoints(self):
        assert cosine_lr(0, 100, 2e-4, 0.01) == pytest.approx(2e-4)
        assert cosine_lr(100, 100, 2e-4, 0.01) == pytest.approx(2e-6)
        assert cosine_lr(50, 100, 2e-4, 0.01) == pytest.approx(0.5 * (2e-4 + 2e-6))
        assert cosine_lr(500, 100, 2e-4, 0.01) > 0.0

    def test_clipping(self, rng):
        g = 10.0 * rng.standard_normal(50)
        clipped, norm = clip_grad_norm(g, 1.0)
        assert norm > 1.0
        assert np.linalg.norm(clipped) <= 1.0 + 1e-6
        small = np.full(4, 0.1)
        assert clip_grad_norm(small, 1.0)[0] is small

    def test_first_adamw_step_moves_by_lr(self):
        cfg = OptimConfig(weight_decay=0.0)
        flat = np.array([1.0, -1.0])
        out, state = adamw_update(flat, np.array([0.5, -2.0]), OptimState.zeros_like(flat), 1e-3, cfg)
        np.testing.assert_allclose(out, [1.0 - 1e-3, -1.0 + 1e-3], rtol=1e-6)
        assert state.step == 1


class TestTrainingService:
    def test_batches_are_seeded_and_mixed(self, tiny_run, tiny_data):
        service = TrainingService(tiny_run.model_copy(update={"optimizer": tiny_run.optimizer.model_copy(update={"batch_size": 32})}))
        a = service.sample_batch(tiny_data, 4)
        b = service.sample_batch(tiny_data, 4)
        assert [(e.trajectory, e.frame, e.task) for e in a] == [(e.trajectory, e.frame, e.task) for e in b]
        assert {e.task for e in a} == {Task.FORECAST, Task.RECONSTRUCTION}
        for e in a:
            if e.task == Task.FORECAST:
                np.testing.assert_array_equal(e.target_field, tiny_data.fields[e.trajectory, e.frame + 1])

    def test_step_updates_parameters(self, tiny_run, tiny_data):
        service = TrainingService(tiny_run)
        params = init_params(tiny_run.net)
        result = service.fit(params, tiny_data, steps=1)
        assert result.state.step == 1
        assert len(result.history) == 1
        assert result.history[0].batch_fingerprint
        assert not np.array_equal(result.params.flat, params.flat)

    def test_resume_is_bitwise_identical(self, tiny_run, tiny_data):
        service = TrainingService(tiny_run)
        params = init_params(tiny_run.net)
        straight = service.fit(params, tiny_data, steps=3)
        first = service.fit(params, tiny_data, steps=2)
        resumed = service.fit(first.params, tiny_data, steps=3, state=first.state)
        assert straight.params.flat.tobytes() == resumed.params.flat.tobytes()
        np.testing.assert_array_equal(straight.state.v, resumed.state.v)

    def test_checkpoint_callback_cadence(self, tiny_run, tiny_data):
        seen = []
        TrainingService(tiny_run).fit(
            init_params(tiny_run.net), tiny_data, on_checkpoint=lambda p, s: seen.append(s.step)
        )
        assert seen == [2, 3]

    def test_non_finite_loss_aborts(self, tiny_run, tiny_data):
        bad = TrainingData(np.full_like(tiny_data.fields, np.nan), tiny_data.pairs, NormStats(0.0, 1.0))
        with pytest.raises(NumericalAbortException) as info:
            TrainingService(tiny_run).fit(init_params(tiny_run.net), bad, steps=1)
        assert "batch_fingerprint" in info.value.context


@pytest.mark.slow
def test_loss_trends_down_over_500_steps(tiny_run, tiny_data):
    config = tiny_run.with_overrides(
        {
            "optimizer.steps": 500,
            "optimizer.batch_size": 4,
            "optimizer.lr": 1e-3,
            "optimizer.log_every": 100,
            "optimizer.checkpoint_every": 500,
        }
    )
    result = TrainingService(config).fit(init_params(config.net), tiny_data)
    losses = np.array([m.loss for m in result.history])
    assert losses.size == 500
    smoothed = np.convolve(losses, np.ones(50) / 50, mode="valid")
    slope = np.polyfit(np.arange(smoothed.size), smoothed, 1)[0]
    assert slope < 0.0
    assert smoothed[-1] < smoothed[0]


@pytest.mark.slow
def test_output_depends_on_conditioning_after_training(tiny_run, toy_params, rng):
    net = UNet(tiny_run.net)
    x_tau = rng.standard_normal((8, 8))
    m_i = rng.random((8, 8)) < 0.25
    m_i[0, 0] = True
    x_c = parameter(np.where(m_i, rng.standard_normal((8, 8)), 0.0), dtype=toy_params.dtype)
    cotangent = constant(rng.standard_normal((1, 8, 8)), dtype=toy_params.dtype)
    with Tape() as tape:
        out = net.apply(net.weights(toy_params), net.stack_inputs(x_tau, x_c, m_i, toy_params.dtype), 10)
        loss = ops.sum_all(ops.mul(out, cotangent))
    assert np.linalg.norm(tape.backward(loss)[x_c]) > 0.0
