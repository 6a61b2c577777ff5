"""Shared test helpers: finite-difference oracles and gradient comparison."""

import numpy as np
import pytest

from flowplugin.numerics import GradientTape, Rng, Tensor, backward, parameter

TWO_GAUSSIAN_SEPARATION = 2.0
TWO_GAUSSIAN_SIGMA = 0.5


def analytic_two_gaussian_nll(z, y, separation=TWO_GAUSSIAN_SEPARATION,
                              sigma=TWO_GAUSSIAN_SIGMA):
    """Exact NLL of the known generative process, averaged over given rows."""
    labels = y.argmax(axis=1)
    means = np.where(labels[:, None] == 0, -separation, separation)
    d = z.shape[1]
    log_p = (-0.5 * ((z - means) ** 2).sum(axis=1) / sigma**2
             - 0.5 * d * np.log(2 * np.pi * sigma**2))
    return -log_p.mean()


@pytest.fixture(scope="session")
def two_gaussian():
    """A conditional MAF trained on the two-class synthetic latent task."""
    from flowplugin.flow import maf_flow
    from flowplugin.synthetic import two_gaussian_latents
    from flowplugin.trainer import LatentDataset, TrainConfig, train_flow

    z, y = two_gaussian_latents(2000, rng=Rng(123))
    ds = LatentDataset.from_arrays(z, y, seed=7)
    model = maf_flow(2, 2, layers=5, hidden=32, rng=Rng(11))
    model, history = train_flow(model, ds, TrainConfig(
        epochs=60, batch_size=256, learning_rate=2e-3, seed=5, patience=12))
    return {"model": model, "ds": ds, "history": history, "z": z, "y": y}


@pytest.fixture(scope="session")
def toy_pipeline():
    """Full stack on synthetic data: frozen AE + flow trained on its latents."""
    from flowplugin.autoencoder import AutoencoderConfig, train_autoencoder
    from flowplugin.flow import maf_flow
    from flowplugin.synthetic import objects_from_latents, two_gaussian_latents
    from flowplugin.trainer import TrainConfig, build_latent_dataset, train_flow

    z_true, y = two_gaussian_latents(1500, rng=Rng(201))
    x = objects_from_latents(z_true, ambient=12, rng=Rng(202))
    x_train, y_train = x[:1200], y[:1200]
    x_test, y_test = x[1200:], y[1200:]
    ae, _ = train_autoencoder(x_train, AutoencoderConfig(
        input_dim=12, latent_dim=2, hidden=(32, 16), epochs=200, batch_size=128,
        learning_rate=3e-3, seed=203))
    ae.freeze()
    ds = build_latent_dataset(ae, x_train, y_train, seed=204)
    flow = maf_flow(2, 2, layers=5, hidden=32, rng=Rng(205))
    flow, _ = train_flow(flow, ds, TrainConfig(
        epochs=50, batch_size=256, learning_rate=2e-3, seed=206, patience=12))
    centroids = np.stack([x_train[y_train[:, c] == 1].mean(axis=0) for c in range(2)])
    return {"ae": ae, "flow": flow, "ds": ds, "x_train": x_train, "y_train": y_train,
            "x_test": x_test, "y_test": y_test, "centroids": centroids}


def randomize(obj, rng, gain=0.8):
    """Overwrite every parameter with fresh random values (non-identity model)."""
    for p in obj.parameters():
        p.data[:] = rng.normal(*p.data.shape) * (gain / np.sqrt(p.data.shape[0]))
    return obj


def numeric_grad(f, arrays, h=1e-5):
    """Central-difference gradients of scalar f(list_of_arrays) per element."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = a[i]
            a[i] = orig + h
            fp = f(arrays)
            a[i] = orig - h
            fm = f(arrays)
            a[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def taped_grad(build, arrays):
    """Gradients of scalar build(list_of_Tensors) via the tape."""
    params = [parameter(a) for a in arrays]
    with GradientTape() as tape:
        loss = build(params)
    return backward(tape, loss, params), loss.data[0, 0]


def assert_grads_close(build, arrays, rtol=1e-4, floor=1e-3, h=1e-5):
    """Compare taped against central-difference gradients of the same scalar.

    Relative tolerance with a small-magnitude floor: entries below `floor`
    are held to absolute rtol*floor (central differences bottom out around
    1e-10 absolute at h=1e-5, well below that).
    """
    analytic, _ = taped_grad(build, arrays)

    def f(arrs):
        ts = [Tensor(a) for a in arrs]
        return build(ts).data[0, 0]

    numeric = numeric_grad(f, [a.copy() for a in arrays], h=h)
    for g, n in zip(analytic, numeric):
        err = np.abs(g - n)
        tol = rtol * np.maximum(np.abs(n), floor)
        assert (err <= tol).all(), f"gradient mismatch: max err {err.max():.3e}"


def assert_model_grads_close(params, taped_loss_fn, numpy_loss_fn,
                             rtol=1e-4, floor=1e-3, h=1e-5):
    """FD-check gradients w.r.t. a model's own parameter tensors.

    taped_loss_fn() must return a scalar Tensor computed from ``params``;
    numpy_loss_fn() must return the same scalar as a float (no tape).
    """
    from flowplugin.numerics import zero_gradients

    zero_gradients(params)
    with GradientTape() as tape:
        loss = taped_loss_fn()
    analytic = backward(tape, loss, params)

    arrays = [p.data.copy() for p in params]

    def f(arrs):
        for p, a in zip(params, arrs):
            p.data[:] = a
        return numpy_loss_fn()

    numeric = numeric_grad(f, [a.copy() for a in arrays], h=h)
    for p, a in zip(params, arrays):
        p.data[:] = a
    worst = 0.0
    for g, n in zip(analytic, numeric):
        err = np.abs(g - n)
        tol = rtol * np.maximum(np.abs(n), floor)
        worst = max(worst, float((err / tol).max()))
        assert (err <= tol).all(), f"model gradient mismatch: max err {err.max():.3e}"
    return worst


def finite_difference_jacobian(f, x, h=1e-6):
    """Numeric Jacobian of a vector map f: (D,) -> (D,) at point x."""
    d = x.size
    jac = np.zeros((d, d))
    for j in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (f(xp) - f(xm)) / (2.0 * h)
    return jac
