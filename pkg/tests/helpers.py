"""Shared test utilities: a tiny hand graph and central finite differences."""

import numpy as np

from icpa.graphs import MultiSourceGraph, Node, SourceGraph


def tiny_graph(num_sources=1, with_types=False):
    """Hand-built graph: 6 nodes per source, 2 categories, a few edges."""
    sources = []
    for j in range(num_sources):
        nodes = {
            0: Node(0, 0, "user" if with_types else "item", [0, 1]),
            1: Node(1, 0, "item", [2]),
            2: Node(2, 0, "item", [3, 4]),
            3: Node(3, 1, "item", [5]),
            4: Node(4, 1, "item", [6, 0]),
            5: Node(5, 1, "item", []),
        }
        edges = [(0, 1, 1.0), (0, 2, 2.0), (1, 3, 1.0), (3, 4, 1.0), (2, 4, 0.5)]
        src = SourceGraph(nodes=nodes, edges=edges)
        src.build()
        sources.append(src)
    return MultiSourceGraph(sources=sources, num_categories=2)


def central_diff_grads(value_fn, params, h=1e-5, keys=None):
    """d value_fn / d params by central differences, tensor by tensor."""
    out = {}
    for name in sorted(keys or params):
        tensor = params[name]
        grad = np.zeros_like(tensor)
        flat = tensor.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value_fn(params)
            flat[i] = orig - h
            down = value_fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        out[name] = grad
    return out


def relative_error(analytic, numeric):
    na = float(np.linalg.norm(analytic))
    nn = float(np.linalg.norm(numeric))
    denom = max(na, nn, 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / denom


def assert_grads_close(analytic, numeric, tol=1e-4):
    for name in sorted(numeric):
        err = relative_error(analytic[name], numeric[name])
        scale = max(
            float(np.linalg.norm(analytic[name])), float(np.linalg.norm(numeric[name]))
        )
        if scale < 1e-10:
            continue  # both effectively zero
        assert err < tol, f"{name}: relative error {err:.3e}"


def time_sliced_loss_scaling(powers=range(10, 15), n_proj=8, dim=16, repeats=7):
    """Best-of-N wall times of sliced_align_loss per problem size."""
    import gc
    import time

    from icpa.alignment import ProjectionSet, sliced_align_loss

    ps = ProjectionSet.draw(dim=dim, n_proj=n_proj, seed=0)
    rng = np.random.default_rng(0)
    times = {}
    for power in powers:
        n = 2**power
        reps = {0: rng.normal(size=(n, dim)), 1: rng.normal(size=(n, dim))}
        gates = {
            0: rng.uniform(0.1, 0.9, size=(n, 1)),
            1: rng.uniform(0.1, 0.9, size=(n, 1)),
        }
        sliced_align_loss(reps, gates, ps, num_sources=2, cap=n)  # warmup
        t0 = time.perf_counter()
        sliced_align_loss(reps, gates, ps, num_sources=2, cap=n)
        single = time.perf_counter() - t0
        calls = max(1, int(0.02 / max(single, 1e-9)))  # >= ~20 ms per sample
        gc.collect()
        gc.disable()
        best = float("inf")
        try:
            for _ in range(repeats):
                t0 = time.perf_counter()
                for _ in range(calls):
                    sliced_align_loss(reps, gates, ps, num_sources=2, cap=n)
                best = min(best, (time.perf_counter() - t0) / calls)
        finally:
            gc.enable()
        times[n] = best
    return times
