"""Finite-difference verification of hand-written gradients.

Central differences with step h=1e-5 on double-precision probes. The
comparison metric is elementwise |analytic - numeric| / max(|analytic|,
|numeric|), with near-zero pairs (|analytic| + |numeric| < 1e-8) exempted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
ZERO_EXEMPTION = 1e-8


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. ``x``, perturbed in place."""
    grad = np.zeros(x.shape, dtype=np.float64)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        fp = f()
        flat_x[i] = orig - h
        fm = f()
        flat_x[i] = orig
        flat_g[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray,
                  exemption: float = ZERO_EXEMPTION) -> float:
    """Worst-case relative disagreement, ignoring jointly-tiny elements."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    mask = (np.abs(analytic) + np.abs(numeric)) >= exemption
    if not mask.any():
        return 0.0
    denom = np.maximum(np.abs(analytic[mask]), np.abs(numeric[mask]))
    return float(np.max(np.abs(analytic[mask] - numeric[mask]) / denom))


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} max rel err {self.max_rel_err:.3e} (tol {self.tolerance:g})"


def check_layer(layer, in_shape: tuple[int, ...], seed: int = 0,
                tol: float = DEFAULT_TOL, batch: int = 2,
                name: str | None = None, h: float = DEFAULT_STEP) -> GradCheckResult:
    """Compare a layer's analytic gradients (params and input) against
    central differences of a random linear probe loss, in double precision."""
    from .rng import seeded_rng

    rng = seeded_rng(seed)
    out_shape = layer.build(in_shape, rng, dtype=np.float64)
    x = rng.standard_normal((batch, *in_shape))
    for v in layer.params.values():
        v[...] = rng.standard_normal(v.shape) * 0.5
    probe = rng.standard_normal((batch, *out_shape))

    def loss() -> float:
        return float(np.sum(layer.forward(x, train=False) * probe))

    layer.zero_grads()
    layer.forward(x, train=False)
    dx = layer.backward(probe, need_input_grad=True)
    worst = max_rel_error(dx, numerical_grad(loss, x, h=h))
    for key in layer.params:
        err = max_rel_error(layer.grads[key], numerical_grad(loss, layer.params[key], h=h))
        worst = max(worst, err)
    return GradCheckResult(name or layer.kind, worst, tol)


def check_model(spec, seed: int = 0, tol: float = DEFAULT_TOL, batch: int = 1,
                name: str | None = None, h: float = DEFAULT_STEP) -> GradCheckResult:
    """Whole-stack gradient check of a built model (dropout in eval mode)."""
    from .models import Model
    from .rng import seeded_rng

    model = Model.build(spec, seed=seed, dtype=np.float64)
    rng = seeded_rng(seed + 1)
    # keep the built initialization (healthy gradient flow through deep
    # stacks; blanket re-randomization saturates gates and buries small
    # gradient components in finite-difference roundoff), but nudge the
    # biases off their zero/one special points
    for key, v in model.parameters().items():
        if key.rsplit(".", 1)[-1].startswith("b"):
            v += rng.standard_normal(v.shape) * 0.1
    x = rng.standard_normal((batch, *spec.input_shape))
    out_shape = model.forward(x, train=False).shape
    probe = rng.standard_normal(out_shape)

    def loss() -> float:
        return float(np.sum(model.forward(x, train=False) * probe))

    model.zero_grads()
    model.forward(x, train=False)
    model.backward(probe)
    worst = 0.0
    grads = model.gradients()
    for key, param in model.parameters().items():
        err = max_rel_error(grads[key], numerical_grad(loss, param, h=h))
        worst = max(worst, err)
    return GradCheckResult(name or spec.name, worst, tol)


def tiny_hybrid_spec():
    """A scaled-down hybrid stack (same layer kinds and order as
    cnn3d_convlstm) small enough for exhaustive finite differencing."""
    from .models import LayerSpec, ModelSpec

    return ModelSpec("tiny_hybrid", [
        LayerSpec("conv3d", filters=4, kernel=(2, 3, 3), strides=(5, 2, 2)),
        LayerSpec("dropout", rate=0.35),
        LayerSpec("conv3d", filters=6, kernel=(1, 3, 3), strides=(1, 2, 2)),
        LayerSpec("dropout", rate=0.35),
        LayerSpec("maxpool3d", pool=(1, 2, 1)),
        LayerSpec("conv3d", filters=8, kernel=(1, 3, 3), strides=(1, 2, 2)),
        LayerSpec("dropout", rate=0.35),
        LayerSpec("convlstm", units=5, kernel=(2, 2), strides=(2, 2),
                  return_sequences=False),
        LayerSpec("flatten"),
        LayerSpec("dense", units=4, activation="linear"),
    ], input_shape=(10, 16, 8, 1))


def standard_checks(tol: float = DEFAULT_TOL, scope: str = "all"
                    ) -> list[GradCheckResult]:
    """The gradient-check zoo: every layer type at tiny shapes, plus the
    full tiny hybrid stack. ``scope`` filters rows by substring."""
    from .layers import Conv3DLayer, DenseLayer, DropoutLayer, MaxPool3DLayer
    from .recurrent import BiLstmLayer, ConvLstmLayer, LstmLayer

    plan = [
        ("dense", lambda: check_layer(DenseLayer(5, activation="tanh"), (7,),
                                      seed=1, tol=tol, name="dense")),
        ("conv3d", lambda: check_layer(
            Conv3DLayer(3, (2, 3, 3), (2, 2, 1), "same"), (4, 5, 6, 2),
            seed=2, tol=tol, name="conv3d")),
        ("conv3d_fft", lambda: check_layer(
            Conv3DLayer(2, (1, 7, 7), (1, 2, 2), "same", method="fft"),
            (2, 12, 10, 1), seed=3, tol=tol, name="conv3d_fft")),
        ("maxpool3d", lambda: check_layer(MaxPool3DLayer((1, 2, 2)), (2, 4, 6, 3),
                                          seed=4, tol=tol, name="maxpool3d")),
        ("dropout_eval", lambda: check_layer(DropoutLayer(0.4), (9,),
                                             seed=5, tol=tol, name="dropout_eval")),
        ("lstm", lambda: check_layer(LstmLayer(4), (5, 3), seed=6, tol=tol,
                                     name="lstm")),
        ("lstm_peephole", lambda: check_layer(
            LstmLayer(4, peephole=True), (5, 3), seed=7, tol=tol,
            name="lstm_peephole")),
        ("bilstm", lambda: check_layer(BiLstmLayer(3), (4, 2), seed=8, tol=tol,
                                       name="bilstm")),
        ("convlstm", lambda: check_layer(
            ConvLstmLayer(2, (2, 2), (2, 2)), (3, 4, 4, 2), seed=9, tol=tol,
            name="convlstm")),
        ("convlstm_peephole", lambda: check_layer(
            ConvLstmLayer(2, (2, 2), (2, 2), peephole=True), (3, 4, 4, 2),
            seed=10, tol=tol, name="convlstm_peephole")),
        ("stack", lambda: check_model(tiny_hybrid_spec(), seed=11, tol=tol,
                                      name="stack_tiny_hybrid")),
    ]
    results = []
    for key, run in plan:
        if scope != "all" and scope not in key:
            continue
        results.append(run())
    return results
