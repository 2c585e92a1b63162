"""Unit tests for the dense-layer numerics."""
from __future__ import annotations

import math

import numpy as np
import pytest

from phonofuse import nn


def random_stack(rng, dims=(6, 10, 8, 3), dropout_p=0.0, frozen_first=False):
    steps = []
    for i in range(len(dims) - 1):
        dense = nn.init_dense(dims[i + 1], dims[i], rng)
        if i == 0 and frozen_first:
            dense.frozen = True
        steps.append(dense)
        if i < len(dims) - 2:
            steps.append(nn.Relu())
            if dropout_p > 0:
                steps.append(nn.Dropout(dropout_p))
    return steps


class TestDenseForward:
    def test_identity_map(self):
        layer = nn.Dense(W=np.eye(3), b=np.zeros(3))
        x = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(nn.dense_forward(layer, x), x)

    def test_hand_arithmetic(self):
        # 3*1 + 4*2 + 0.5 = 11.5
        layer = nn.Dense(W=np.array([[1.0, 2.0]]), b=np.array([0.5]))
        out = nn.dense_forward(layer, np.array([[3.0, 4.0]]))
        assert out.shape == (1, 1)
        assert out[0, 0] == 11.5

    def test_empty_batch(self):
        layer = nn.Dense(W=np.ones((4, 3)), b=np.zeros(4))
        out = nn.dense_forward(layer, np.zeros((0, 3)))
        assert out.shape == (0, 4)

    def test_shape_mismatch(self):
        layer = nn.Dense(W=np.ones((4, 3)), b=np.zeros(4))
        with pytest.raises(ValueError):
            nn.dense_forward(layer, np.zeros((2, 5)))


class TestRelu:
    def test_definition(self):
        assert np.array_equal(nn.relu(np.array([[-1.0, 0.0, 2.0]])), [[0.0, 0.0, 2.0]])

    def test_all_negative_saturates(self):
        x = -np.abs(np.random.default_rng(0).normal(size=(3, 4))) - 0.1
        assert np.array_equal(nn.relu(x), np.zeros_like(x))

    def test_idempotence(self):
        x = np.random.default_rng(1).normal(size=(5, 7))
        once = nn.relu(x)
        assert np.array_equal(nn.relu(once), once)


class TestDropout:
    def test_p_zero_is_identity(self):
        x = np.random.default_rng(2).normal(size=(4, 5))
        for training in (True, False):
            out, mask = nn.dropout(x, 0.0, np.random.default_rng(0), training)
            assert np.array_equal(out, x)
            assert np.array_equal(mask, np.ones_like(x))

    def test_inference_identity_any_p(self):
        x = np.random.default_rng(3).normal(size=(4, 5))
        out, mask = nn.dropout(x, 0.7, None, training=False)
        assert np.array_equal(out, x)
        assert np.array_equal(mask, np.ones_like(x))

    def test_mask_values_are_inverted_dropout(self):
        x = np.ones((100, 100))
        _, mask = nn.dropout(x, 0.25, np.random.default_rng(7), training=True)
        assert set(np.unique(mask)) <= {0.0, 1.0 / 0.75}

    def test_unbiased_at_half(self):
        # law of large numbers: mean of 1e5 inverted-dropout outputs of 1.0;
        # per-entry sd is 1 at p = 0.5, so a 3-sigma bound on the mean is
        # 3/sqrt(1e5) ~ 0.0095, well inside the coarse [0.97, 1.03] window
        x = np.ones((100, 1000))
        out, _ = nn.dropout(x, 0.5, np.random.default_rng(11), training=True)
        assert abs(out.mean() - 1.0) <= 3.0 / np.sqrt(x.size)
        assert 0.97 <= out.mean() <= 1.03

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            nn.dropout(np.ones((2, 2)), 1.0, np.random.default_rng(0), True)
        with pytest.raises(ValueError):
            nn.dropout(np.ones((2, 2)), -0.1, np.random.default_rng(0), True)


class TestL2Normalize:
    def test_three_four_five(self):
        out = nn.l2_normalize(np.array([3.0, 4.0]))
        assert np.array_equal(out, [0.6, 0.8])

    def test_zero_vector_passthrough(self):
        z = np.zeros(5)
        assert np.array_equal(nn.l2_normalize(z), z)

    def test_unit_norm_property(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            v = rng.normal(size=rng.integers(1, 20)) * 10.0 ** rng.integers(-3, 4)
            n = np.linalg.norm(nn.l2_normalize(v))
            assert abs(n - 1.0) <= 1e-6

    def test_rows_variant_matches_vector(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(7, 5))
        x[3] = 0.0
        rows = nn.l2_normalize_rows(x)
        for i in range(7):
            assert np.array_equal(rows[i], nn.l2_normalize(x[i]))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_gives_log_c(self):
        logits = np.zeros((3, 29))
        loss, _ = nn.softmax_cross_entropy(logits, np.array([0, 5, 28]))
        assert loss == pytest.approx(math.log(29), rel=1e-12)

    def test_confident_correct_closed_form(self):
        # ln(1 + e^-20)
        loss, _ = nn.softmax_cross_entropy(np.array([[10.0, -10.0]]), np.array([0]))
        assert loss == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-9)
        assert loss == pytest.approx(2.0611536e-9, rel=1e-6)

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(8)
        logits = rng.normal(size=(6, 5)) * 3
        labels = rng.integers(0, 5, size=6)
        loss, dlogits = nn.softmax_cross_entropy(logits, labels)
        assert loss >= 0.0
        assert np.abs(dlogits.sum(axis=1)).max() <= 1e-9

    def test_large_logits_stable(self):
        loss, d = nn.softmax_cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
        assert np.isfinite(loss) and np.isfinite(d).all()

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            nn.softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))

    def test_empty_batch(self):
        loss, d = nn.softmax_cross_entropy(np.zeros((0, 4)), np.zeros(0, dtype=int))
        assert loss == 0.0
        assert d.shape == (0, 4)


class TestBackward:
    def test_single_linear_layer_hand_case(self):
        # y = x W^T + b on a 2x2 case: dW = d^T x, db = column sums of d
        layer = nn.Dense(W=np.array([[1.0, -2.0], [0.5, 3.0]]), b=np.zeros(2))
        x = np.array([[1.0, 2.0], [3.0, -1.0]])
        _, cache = nn.forward_stack([layer], x)
        d = np.array([[0.1, -0.2], [0.3, 0.4]])
        _, grads = nn.backward([layer], cache, d)
        dw, db = grads[0]
        assert np.allclose(dw, d.T @ x, atol=0, rtol=0)
        assert np.array_equal(db, d.sum(axis=0))

    def test_all_frozen_yields_no_grads(self):
        rng = np.random.default_rng(9)
        steps = random_stack(rng)
        for s in steps:
            if isinstance(s, nn.Dense):
                s.frozen = True
        x = rng.normal(size=(4, 6))
        out, cache = nn.forward_stack(steps, x)
        _, dlogits = nn.softmax_cross_entropy(out, rng.integers(0, 3, 4))
        d_in, grads = nn.backward(steps, cache, dlogits)
        assert grads == {}
        assert d_in.shape == x.shape

    def test_cache_stack_mismatch(self):
        rng = np.random.default_rng(10)
        steps = random_stack(rng)
        x = rng.normal(size=(2, 6))
        _, cache = nn.forward_stack(steps, x)
        with pytest.raises(ValueError):
            nn.backward(steps, cache[:-1], np.zeros((2, 3)))


class TestGradCheck:
    def test_random_three_layer_net(self):
        rng = np.random.default_rng(12)
        steps = random_stack(rng, dims=(6, 10, 8, 3), dropout_p=0.2)
        x = rng.normal(size=(4, 6))
        labels = rng.integers(0, 3, 4)
        report = nn.grad_check(steps, x, labels, tolerance=1e-4)
        assert report.passed, report.max_rel_error
        assert report.max_rel_error <= 1e-4

    def test_frozen_layer_excluded(self):
        rng = np.random.default_rng(13)
        steps = random_stack(rng, dims=(6, 10, 8, 3), frozen_first=True)
        full = random_stack(np.random.default_rng(13), dims=(6, 10, 8, 3))
        x = rng.normal(size=(4, 6))
        labels = rng.integers(0, 3, 4)
        report = nn.grad_check(steps, x, labels)
        report_full = nn.grad_check(full, x, labels)
        frozen_params = 10 * 6 + 10
        assert report.n_params == report_full.n_params - frozen_params
        assert report.passed

    def test_corrupted_gradient_fails(self):
        rng = np.random.default_rng(14)
        steps = random_stack(rng)
        x = rng.normal(size=(4, 6))
        labels = rng.integers(0, 3, 4)
        out, cache = nn.forward_stack(steps, x)
        _, dlogits = nn.softmax_cross_entropy(out, labels)
        _, grads = nn.backward(steps, cache, dlogits)

        def loss_fn():
            o, _ = nn.forward_stack(steps, x)
            loss, _ = nn.softmax_cross_entropy(o, labels)
            return loss

        first_dense = next(s for s in steps if isinstance(s, nn.Dense))
        corrupted = grads[0][0] + 0.01
        max_err, _, _ = nn.finite_difference_check(
            loss_fn, [first_dense.W], [corrupted]
        )
        assert max_err > 1e-4

    def test_budget_guard(self):
        rng = np.random.default_rng(15)
        steps = [nn.init_dense(200, 100, rng)]
        with pytest.raises(ValueError):
            nn.grad_check(steps, rng.normal(size=(2, 100)), np.array([0, 1]))


class TestDeterminism:
    def test_forward_backward_bit_identical(self):
        def run():
            rng = np.random.default_rng(21)
            steps = random_stack(rng, dropout_p=0.3)
            x = rng.normal(size=(5, 6))
            labels = rng.integers(0, 3, 5)
            drop_rng = np.random.default_rng(99)
            out, cache = nn.forward_stack(steps, x, training=True, rng=drop_rng)
            loss, dlogits = nn.softmax_cross_entropy(out, labels)
            _, grads = nn.backward(steps, cache, dlogits)
            return loss, out, grads

        loss_a, out_a, grads_a = run()
        loss_b, out_b, grads_b = run()
        assert loss_a == loss_b
        assert np.array_equal(out_a, out_b)
        for key in grads_a:
            assert np.array_equal(grads_a[key][0], grads_b[key][0])
            assert np.array_equal(grads_a[key][1], grads_b[key][1])

    def test_init_dense_seeded(self):
        a = nn.init_dense(8, 4, np.random.default_rng(3))
        b = nn.init_dense(8, 4, np.random.default_rng(3))
        assert np.array_equal(a.W, b.W)
        assert np.array_equal(a.b, b.b)
        bound = np.sqrt(6.0 / 4)
        assert np.abs(a.W).max() <= bound
        assert np.array_equal(a.b, np.zeros(8))


class TestCheckpointIO:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(30)
        stacks = {
            "audio": [nn.init_dense(5, 3, rng), nn.Relu()],
            "text": [],
            "head": [nn.init_dense(4, 5, rng, frozen=True), nn.Dropout(0.25)],
        }
        path = tmp_path / "model.ckpt"
        nn.save_params(path, stacks, extra={"init_seed": 30})
        loaded, header = nn.load_params(path)
        assert header["init_seed"] == 30
        assert header["format_version"] == nn.CHECKPOINT_VERSION
        assert [type(s).__name__ for s in loaded["audio"]] == ["Dense", "Relu"]
        assert loaded["head"][0].frozen is True
        assert loaded["head"][1].p == 0.25
        assert np.array_equal(loaded["audio"][0].W, stacks["audio"][0].W)
        assert np.array_equal(loaded["head"][0].b, stacks["head"][0].b)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"\x01\x02")
        with pytest.raises(ValueError):
            nn.load_params(path)

    def test_payload_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(31)
        stacks = {"head": [nn.init_dense(3, 2, rng)]}
        path = tmp_path / "model.ckpt"
        nn.save_params(path, stacks)
        raw = path.read_bytes()
        path.write_bytes(raw + b"\x00" * 8)
        with pytest.raises(ValueError):
            nn.load_params(path)
