"""Kernel backend agreement and dispatch."""

import numpy as np
import pytest

from mopred import kernels


def backends():
    avail = kernels.available_backends()
    if len(avail) < 2:
        pytest.skip("compiled backend unavailable; nothing to compare")
    return avail


class TestBackendAgreement:
    def test_masked_softmax(self, rng):
        avail = backends()
        scores = rng.standard_normal((40, 7))
        mask = (rng.random((40, 7)) > 0.3).astype(np.uint8)
        mask[:, 0] = 1
        grad = rng.standard_normal((40, 7))
        outs = {}
        bwds = {}
        for name, impl in avail.items():
            probs = impl.masked_softmax_fwd(scores.copy(), mask.copy())
            outs[name] = probs
            bwds[name] = impl.masked_softmax_bwd(probs, grad.copy())
        a, b = outs.values()
        assert np.abs(a - b).max() < 1e-12
        a, b = bwds.values()
        assert np.abs(a - b).max() < 1e-12

    def test_fully_masked_row_yields_zeros(self, rng):
        scores = rng.standard_normal((3, 4))
        mask = np.ones((3, 4), dtype=np.uint8)
        mask[1, :] = 0
        for impl in kernels.available_backends().values():
            probs = impl.masked_softmax_fwd(scores.copy(), mask.copy())
            assert np.allclose(probs[1], 0.0)
            assert np.allclose(probs[[0, 2]].sum(axis=1), 1.0)

    def test_scatter_add(self, rng):
        avail = backends()
        idx = rng.integers(0, 30, 200).astype(np.int64)
        src = rng.standard_normal((200, 6))
        outs = []
        for impl in avail.values():
            out = np.zeros((30, 6))
            impl.scatter_add_rows(out, idx.copy(), src.copy())
            outs.append(out)
        assert np.abs(outs[0] - outs[1]).max() < 1e-12

    def test_masked_max_pool(self, rng):
        avail = backends()
        x = rng.standard_normal((25, 6, 4))
        mask = (rng.random((25, 6)) > 0.4).astype(np.uint8)
        mask[0, :] = 0   # include an empty group
        fwd = {}
        for name, impl in avail.items():
            fwd[name] = impl.masked_max_pool_fwd(x.copy(), mask.copy())
        (o1, a1, v1), (o2, a2, v2) = fwd.values()
        assert np.array_equal(v1, v2)
        assert np.abs(o1 - o2).max() == 0.0
        assert np.array_equal(a1[v1.astype(bool)], a2[v2.astype(bool)])
        g = rng.standard_normal((25, 4))
        outs = [impl.masked_max_pool_bwd(g.copy(), a, v, 6)
                for impl, (_, a, v) in zip(avail.values(), fwd.values())]
        assert np.abs(outs[0] - outs[1]).max() == 0.0


def test_use_backend_switches_and_restores():
    avail = kernels.available_backends()
    original = kernels.BACKEND
    for name in avail:
        assert kernels.use_backend(name) == name
        assert kernels.BACKEND == name
    kernels.use_backend(original)
    assert kernels.BACKEND == original


def test_model_outputs_agree_across_backends(desk_model, desk_batch):
    avail = kernels.available_backends()
    if len(avail) < 2:
        pytest.skip("compiled backend unavailable")
    original = kernels.BACKEND
    results = {}
    for name in avail:
        kernels.use_backend(name)
        outputs, _ = desk_model.forward(desk_batch)
        results[name] = outputs[-1].means.data.copy()
    kernels.use_backend(original)
    a, b = results.values()
    assert np.abs(a - b).max() < 1e-10


def test_kernel_benchmark_smoke():
    from mopred.benchmark import benchmark_kernels
    rows = benchmark_kernels(repetitions=3)
    kinds = {r["kernel"] for r in rows}
    assert "scatter_add_rows" in kinds and "model_fwd_bwd" in kinds
    assert all(r["median_us"] > 0 for r in rows)
