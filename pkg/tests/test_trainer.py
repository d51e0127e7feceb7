"""Trainer numerics: forward/backward, masking, optimizer, reports."""

import numpy as np
import pytest

from dense_reference import DenseReference, dense_arrays_from_params
from oracles import naive_avgpool, naive_conv, naive_forward, naive_maxpool
from swnet import ops
from swnet.arch import ArchitectureSpec, LayerDecl, PoolDecl
from swnet.data import Dataset, load_images_csv, make_dataset, make_images, save_images_csv
from swnet.graph import from_architecture
from swnet.netgen import count_params_flops, realize
from swnet.rewire import RewireConfig, rewire
from swnet.trainer import (
    SGD,
    DivergenceError,
    TrainConfig,
    TrainReport,
    TrainerError,
    backward,
    build_plan,
    compare,
    forward,
    init_params,
    train,
    weight_heatmap,
)


def small_spec():
    return ArchitectureSpec(
        layers=(
            LayerDecl("conv", 4, 3, 1, None, ("relu",)),
            LayerDecl("conv", 5, 3, 1, PoolDecl("max", 2, 2), ("relu", "maxpool")),
            LayerDecl("fully_connected", 10, bundle=()),
        ),
        input_shape=(2, 6, 6),
    )


def rewired_net(spec, p, seed):
    graph = from_architecture(spec)
    return realize(rewire(graph, RewireConfig(p=p, seed=seed)), spec)


def connection_masks(plan):
    masks = {}
    for lp in plan.layers:
        for cp in lp.in_conns:
            masks[(cp.conn.src_layer, cp.conn.dst_layer)] = np.broadcast_to(
                cp.expanded_mask, cp.weight_shape
            )
    return masks


class TestOps:
    def test_conv_matches_naive(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            b, ci, co = rng.integers(1, 4, size=3)
            k = int(rng.choice([1, 3, 5]))
            s = int(rng.integers(1, max(2, k)))
            pad = int(rng.integers(0, k))
            h = int(rng.integers(k, 10))
            x = rng.normal(size=(b, ci, h, h))
            w = rng.normal(size=(co, ci, k, k))
            out, _ = ops.conv_forward(x, w, s, pad)
            assert np.allclose(out, naive_conv(x, w, s, pad), atol=1e-12)

    def test_identity_one_by_one_conv(self):
        # 1x1 conv with an identity kernel bank reproduces its input exactly
        x = np.random.default_rng(0).normal(size=(3, 4, 5, 5))
        w = np.eye(4)[:, :, None, None]
        out, _ = ops.conv_forward(x, w, 1, 0)
        assert np.array_equal(out, x)

    def test_pools_match_naive(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 3, 8, 8))
        out, _ = ops.maxpool_forward(x, 2, 2)
        assert np.array_equal(out, naive_maxpool(x, 2, 2))
        out, _ = ops.avgpool_forward(x, 4, 4)
        assert np.allclose(out, naive_avgpool(x, 4, 4), atol=1e-13)

    def test_pool_backward_scatters_to_argmax(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        out, cache = ops.maxpool_forward(x, 2, 2)
        dout = np.ones_like(out)
        dx = ops.maxpool_backward(dout, cache)
        expected = np.zeros_like(x)
        expected[0, 0, 1, 1] = expected[0, 0, 1, 3] = 1
        expected[0, 0, 3, 1] = expected[0, 0, 3, 3] = 1
        assert np.array_equal(dx, expected)

    def test_batchnorm_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, 3, 4, 4))
        gamma = rng.normal(size=3) + 1.5
        beta = rng.normal(size=3)
        run_m = np.zeros(3)
        run_v = np.ones(3)
        target = rng.normal(size=x.shape)

        def loss_of(xv, gv, bv):
            out, _ = ops.batchnorm_forward(xv, gv, bv, True, run_m.copy(), run_v.copy())
            return 0.5 * ((out - target) ** 2).sum()

        out, cache = ops.batchnorm_forward(x, gamma, beta, True, run_m.copy(), run_v.copy())
        dx, dgamma, dbeta = ops.batchnorm_backward(out - target, cache)
        eps = 1e-6
        for arr, grad, name in ((x, dx, "x"), (gamma, dgamma, "gamma"), (beta, dbeta, "beta")):
            flat = arr.reshape(-1)
            g_flat = np.asarray(grad).reshape(-1)
            idx = rng.choice(flat.size, size=min(20, flat.size), replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                lp = loss_of(x, gamma, beta)
                flat[i] = orig - eps
                lm = loss_of(x, gamma, beta)
                flat[i] = orig
                fd = (lp - lm) / (2 * eps)
                assert abs(fd - g_flat[i]) < 1e-5 * max(1.0, abs(fd)), name

    def test_softmax_cross_entropy_gradient(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(5, 10))
        labels = rng.integers(0, 10, size=5)
        loss, grad = ops.softmax_cross_entropy(logits, labels)
        eps = 1e-6
        for i in range(5):
            for j in range(10):
                pert = logits.copy()
                pert[i, j] += eps
                lp, _ = ops.softmax_cross_entropy(pert, labels)
                fd = (lp - loss) / eps
                assert abs(fd - grad[i, j]) < 1e-5


class TestForward:
    def test_matches_naive_oracle(self):
        spec = small_spec()
        swnet = rewired_net(spec, 0.35, seed=9)
        assert any(not c.is_consecutive for c in swnet.connections)
        plan = build_plan(swnet, batchnorm="off")
        params = init_params(plan, seed=3)
        x = np.random.default_rng(5).normal(size=(4, 2, 6, 6))
        logits, _ = forward(plan, params, x)
        assert np.allclose(logits, naive_forward(plan, params, x), atol=1e-12)

    def test_empty_long_range_equals_dense_reference(self):
        spec = small_spec()
        swnet = rewired_net(spec, 0.0, seed=0)
        plan = build_plan(swnet, batchnorm="off")
        params = init_params(plan, seed=7)
        ref = DenseReference(spec, *dense_arrays_from_params(spec, params))
        x = np.random.default_rng(8).normal(size=(5, 2, 6, 6))
        logits, _ = forward(plan, params, x)
        ref_logits, _ = ref.forward(x)
        assert np.abs(logits - ref_logits).max() < 1e-12

    def test_batchnorm_bundle_order_respected(self):
        spec = ArchitectureSpec(
            layers=(
                LayerDecl("conv", 3, 3, 1, PoolDecl("max", 2, 2), ("relu", "maxpool", "batchnorm")),
                LayerDecl("conv", 2, 3, 1, None, ("relu",)),
            ),
            input_shape=(1, 4, 4),
        )
        swnet = rewired_net(spec, 0.0, seed=0)
        plan = build_plan(swnet, batchnorm="on")
        params = init_params(plan, seed=1)
        x = np.random.default_rng(2).normal(size=(8, 1, 4, 4))
        logits, state = forward(plan, params, x)
        ops_order = [name for name, _ in state.bundle_caches[1]]
        assert ops_order == ["relu", "maxpool", "batchnorm"]
        assert np.allclose(logits, naive_forward(plan, params, x), atol=1e-10)

    def test_auto_batchnorm_off_for_shallow_nets(self):
        spec = small_spec()  # 3 layers
        swnet = rewired_net(spec, 0.0, seed=0)
        plan = build_plan(swnet, batchnorm="auto")
        assert not plan.batchnorm_enabled

    def test_shape_mismatch_rejected_at_plan_time(self):
        spec = small_spec()
        swnet = rewired_net(spec, 0.0, seed=0)
        from swnet.netgen import SparseConnection, SWNetSpec

        broken = SWNetSpec(
            base=spec.base if hasattr(spec, "base") else spec,
            connections=tuple(
                SparseConnection(c.src_layer, c.dst_layer, c.kind,
                                 c.mask, c.kernel_size, 2 if c.kind == "conv" else None,
                                 c.zero_padding)
                for c in swnet.connections
            ),
            bundle_order=swnet.bundle_order,
        )
        with pytest.raises(TrainerError, match="junction needs"):
            build_plan(broken, batchnorm="off")


class TestBackward:
    def _setup(self, p=0.35, seed=9):
        spec = small_spec()
        swnet = rewired_net(spec, p, seed=seed)
        plan = build_plan(swnet, batchnorm="off")
        params = init_params(plan, seed=3)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 2, 6, 6))
        labels = rng.integers(0, 10, size=4)
        return plan, params, x, labels

    def test_gradients_match_finite_differences(self):
        plan, params, x, labels = self._setup()
        logits, state = forward(plan, params, x)
        _, dlogits = ops.softmax_cross_entropy(logits, labels)
        grads = backward(plan, params, state, dlogits)
        masks = connection_masks(plan)

        def loss_of():
            lg, _ = forward(plan, params, x)
            return ops.softmax_cross_entropy(lg, labels)[0]

        eps = 1e-4
        rng = np.random.default_rng(0)
        for key in sorted(params.weights):
            arr, g_arr, mask = params.weights[key], grads.weights[key], masks[key]
            live = np.argwhere(mask)
            pick = live[rng.choice(len(live), size=min(40, len(live)), replace=False)]
            for idx in map(tuple, pick):
                orig = arr[idx]
                arr[idx] = orig + eps
                lp = loss_of()
                arr[idx] = orig - eps
                lm = loss_of()
                arr[idx] = orig
                fd = (lp - lm) / (2 * eps)
                assert abs(fd - g_arr[idx]) <= 1e-3 * max(abs(fd), abs(g_arr[idx]), 1e-6)

    def test_masked_positions_get_exact_zero_gradient(self):
        plan, params, x, labels = self._setup()
        logits, state = forward(plan, params, x)
        _, dlogits = ops.softmax_cross_entropy(logits, labels)
        grads = backward(plan, params, state, dlogits)
        masks = connection_masks(plan)
        found_masked = False
        for key, g in grads.weights.items():
            dead = ~masks[key]
            if dead.any():
                found_masked = True
                assert (g[dead] == 0.0).all()
        assert found_masked

    def test_zero_loss_gradient_gives_zero_grads(self):
        plan, params, x, _ = self._setup()
        logits, state = forward(plan, params, x)
        grads = backward(plan, params, state, np.zeros_like(logits))
        for g in grads.weights.values():
            assert (g == 0.0).all()
        for g in grads.biases.values():
            assert (g == 0.0).all()


class TestOptimizer:
    def test_masked_weights_stay_exactly_zero(self):
        spec = small_spec()
        swnet = rewired_net(spec, 0.5, seed=4)
        plan = build_plan(swnet, batchnorm="off")
        params = init_params(plan, seed=2)
        config = TrainConfig(
            learning_rate=0.05, max_iterations=60, seed=2,
            momentum=0.9, weight_decay=1e-3, batch_size=8,
        )
        optimizer = SGD(config)
        rng = np.random.default_rng(11)
        masks = connection_masks(plan)
        for _ in range(60):
            x = rng.normal(size=(8, 2, 6, 6))
            labels = rng.integers(0, 10, size=8)
            logits, state = forward(plan, params, x)
            _, dlogits = ops.softmax_cross_entropy(logits, labels)
            grads = backward(plan, params, state, dlogits)
            optimizer.step(params, grads)
        for key, w in params.weights.items():
            dead = ~masks[key]
            assert (w[dead] == 0.0).all()

    def test_nesterov_differs_from_classical(self):
        spec = small_spec()
        swnet = rewired_net(spec, 0.0, seed=0)
        plan = build_plan(swnet, batchnorm="off")
        ds = make_dataset(64, 32, seed=5, image_size=6, channels=2, noise=0.2, max_shift=0)
        base_cfg = dict(learning_rate=0.02, max_iterations=12, seed=1, batch_size=8,
                        eval_interval=12, thresholds=(0.5,))
        r1 = train(swnet, TrainConfig(**base_cfg, nesterov=False), ds)
        r2 = train(swnet, TrainConfig(**base_cfg, nesterov=True), ds)
        assert r1.losses[:2] == r2.losses[:2]  # first step identical (zero velocity)
        assert r1.losses[-1] != r2.losses[-1]


class TestTrainLoop:
    def _dataset(self):
        return make_dataset(256, 96, seed=21, image_size=6, channels=2, noise=0.25, max_shift=0)

    def test_determinism(self):
        spec = small_spec()
        swnet = rewired_net(spec, 0.3, seed=1)
        ds = self._dataset()
        cfg = TrainConfig(learning_rate=0.03, max_iterations=96, seed=9, batch_size=16,
                          eval_interval=32, thresholds=(0.5, 0.8))
        r1 = train(swnet, cfg, ds)
        r2 = train(swnet, cfg, ds)
        assert r1.losses == r2.losses
        assert r1.evals == r2.evals
        assert r1.iterations_to_threshold == r2.iterations_to_threshold

    def test_divergence_aborts_with_partial_report(self):
        spec = small_spec()
        swnet = rewired_net(spec, 0.0, seed=0)
        ds = self._dataset()
        cfg = TrainConfig(learning_rate=1e10, max_iterations=200, seed=0, batch_size=16,
                          eval_interval=64, thresholds=(0.5,))
        with pytest.raises(DivergenceError) as excinfo:
            train(swnet, cfg, ds)
        report = excinfo.value.report
        assert report.diverged
        assert len(report.losses) >= 1
        assert report.iterations_to_threshold == {0.5: None}

    def test_threshold_bookkeeping(self):
        spec = small_spec()
        swnet = rewired_net(spec, 0.0, seed=0)
        ds = self._dataset()
        cfg = TrainConfig(learning_rate=0.03, max_iterations=512, seed=3, batch_size=16,
                          eval_interval=32, thresholds=(0.3, 0.9), stop_at_top_threshold=True)
        report = train(swnet, cfg, ds)
        reached = report.iterations_to_threshold
        if reached[0.3] is not None and reached[0.9] is not None:
            assert reached[0.3] <= reached[0.9]
        errors = dict(report.evals)
        for t, it in reached.items():
            if it is not None:
                assert 1.0 - errors[it] >= t

    def test_parameter_count_parity_between_arms(self):
        # uniform kernel size keeps every edge at the same weight cost, so
        # the trained arms match exactly
        spec = ArchitectureSpec(
            layers=tuple(LayerDecl("conv", c, 3, 1, None, ("relu",)) for c in (6, 6, 8, 10)),
            input_shape=(3, 8, 8),
        )
        dense = rewired_net(spec, 0.0, seed=0)
        sparse = rewired_net(spec, 0.6, seed=5)
        assert count_params_flops(dense)[0] == count_params_flops(sparse)[0]

    def test_dataset_shape_mismatch_rejected(self):
        spec = small_spec()
        swnet = rewired_net(spec, 0.0, seed=0)
        ds = make_dataset(32, 16, seed=1, image_size=8, channels=3)
        cfg = TrainConfig(learning_rate=0.01, max_iterations=4, seed=0, batch_size=4)
        with pytest.raises(TrainerError, match="do not match"):
            train(swnet, cfg, ds)


class TestCompare:
    def _report(self, reached, thresholds=(0.8, 0.95)):
        cfg = TrainConfig(learning_rate=0.01, max_iterations=10, seed=0, thresholds=thresholds)
        return TrainReport([], [], dict(reached), 0.9, 100, False, cfg)

    def test_table_matches_published_ratio(self):
        base = self._report({0.8: 2560, 0.95: 18560})
        variant = self._report({0.8: 1536, 0.95: 7040})
        table = compare([base, variant], baseline_index=0)
        final = table.speedups[1][table.thresholds.index(0.95)]
        assert final == pytest.approx(18560 / 7040)
        assert f"{final:.2f}" == "2.64"

    def test_identical_reports_give_unity(self):
        a = self._report({0.8: 128, 0.95: 256})
        b = self._report({0.8: 128, 0.95: 256})
        table = compare([a, b])
        assert all(s == 1.0 for s in table.speedups[1])

    def test_unreached_threshold_is_undefined(self):
        base = self._report({0.8: 128, 0.95: 256})
        variant = self._report({0.8: 256, 0.95: None})
        table = compare([base, variant])
        row = dict(zip(table.thresholds, table.speedups[1]))
        assert row[0.95] is None
        assert row[0.8] == 0.5

    def test_mismatched_thresholds_rejected(self):
        a = self._report({0.8: 128})
        b = self._report({0.9: 128}, thresholds=(0.9,))
        with pytest.raises(TrainerError, match="different threshold"):
            compare([a, b])

    def test_single_report_rejected(self):
        with pytest.raises(TrainerError, match="at least two"):
            compare([self._report({0.8: 1})])


class TestHeatmap:
    def test_constant_weights_show_constant_cells(self):
        spec = small_spec()
        swnet = rewired_net(spec, 0.4, seed=6)
        plan = build_plan(swnet, batchnorm="off")
        params = init_params(plan, seed=0)
        for key, w in params.weights.items():
            masks = connection_masks(plan)
            w[...] = 0.0
            w[masks[key]] = 0.25
        heat = weight_heatmap(params, swnet)
        present = {(c.src_layer, c.dst_layer) for c in swnet.connections if c.true_entries}
        for l1 in range(heat.shape[0]):
            for l2 in range(heat.shape[1]):
                if (l1, l2) in present:
                    assert heat[l1, l2] == pytest.approx(0.25)
                else:
                    assert heat[l1, l2] == 0.0

    def test_unconnected_pairs_exactly_zero(self):
        spec = small_spec()
        swnet = rewired_net(spec, 0.0, seed=0)
        plan = build_plan(swnet, batchnorm="off")
        params = init_params(plan, seed=0)
        heat = weight_heatmap(params, swnet)
        assert heat[0, 2] == 0.0
        assert heat[0, 3] == 0.0
        assert (np.diag(heat) == 0.0).all()


class TestTrainingTraceParity:
    def test_p0_network_trains_identically_to_dense_reference(self):
        spec = ArchitectureSpec(
            layers=(
                LayerDecl("conv", 5, 3, 1, None, ("relu",)),
                LayerDecl("conv", 6, 3, 1, PoolDecl("max", 2, 2), ("relu", "maxpool")),
                LayerDecl("conv", 6, 3, 1, None, ("relu",)),
                LayerDecl("fully_connected", 10, bundle=()),
            ),
            input_shape=(2, 8, 8),
        )
        swnet = realize(rewire(from_architecture(spec), RewireConfig(p=0.0, seed=1)), spec)
        ds = make_dataset(256, 64, seed=77, image_size=8, channels=2, noise=0.3, max_shift=1)
        cfg = TrainConfig(learning_rate=0.02, max_iterations=160, seed=5, momentum=0.9,
                          weight_decay=1e-4, batch_size=8, eval_interval=64, thresholds=(0.5,))
        report = train(swnet, cfg, ds)
        plan = build_plan(swnet, batchnorm="off")
        ref = DenseReference(spec, *dense_arrays_from_params(spec, init_params(plan, cfg.seed)))
        ref_losses = ref.train(ds, cfg)
        assert np.abs(np.array(report.losses) - np.array(ref_losses)).max() < 1e-12
        for li in range(len(spec.layers)):
            diff = np.abs(report.trained_params.weights[(li, li + 1)] - ref.weights[li]).max()
            assert diff < 1e-12


class TestData:
    def test_generation_deterministic(self):
        x1, y1 = make_images(50, seed=3, image_size=8, channels=2)
        x2, y2 = make_images(50, seed=3, image_size=8, channels=2)
        assert np.array_equal(x1, x2) and np.array_equal(y1, y2)

    def test_class_balance(self):
        _, y = make_images(100, seed=1, image_size=8, channels=1)
        counts = np.bincount(y, minlength=10)
        assert (counts == 10).all()

    def test_csv_round_trip(self, tmp_path):
        x, y = make_images(20, seed=9, image_size=8, channels=3, noise=0.4)
        path = tmp_path / "digits.csv"
        save_images_csv(x, y, path)
        x2, y2 = load_images_csv(path)
        assert np.array_equal(y, y2)
        assert np.abs(x - x2).max() < 1e-6  # pixels stored at 8 significant digits

    def test_headerless_csv_needs_shape(self, tmp_path):
        x, y = make_images(4, seed=2, image_size=8, channels=1)
        path = tmp_path / "digits.csv"
        save_images_csv(x, y, path)
        stripped = tmp_path / "none.csv"
        stripped.write_text("".join(path.read_text().splitlines(keepends=True)[1:]))
        with pytest.raises(ValueError, match="shape"):
            load_images_csv(stripped)
        x2, _ = load_images_csv(stripped, shape=(1, 8, 8))
        assert x2.shape == x.shape

    def test_scale_jitter_produces_multiple_scales(self):
        x, y = make_images(60, seed=4, image_size=16, channels=1, noise=0.0, max_shift=0,
                           gain_range=(1.0, 1.0), scale_jitter=True)
        supports = {int((xi[0] > 0.5).sum()) for xi in x}
        assert len(supports) > 1  # different glyph scales leave different footprints
