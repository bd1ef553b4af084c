"""Convolution kernels: the fast paths, the brute-force oracle, and gradients.

The library ships two interchangeable convolution strategies (im2col+GEMM
and a spatial-FFT path) plus an intentionally naive nested-loop oracle.
This script shows they agree to near machine precision and that the
hand-written backward pass matches central finite differences.
"""

import numpy as np

from sonovox import ConvGeometry, conv3d_backward, conv3d_forward, conv3d_oracle
from sonovox.gradcheck import max_rel_error, numerical_grad

rng = np.random.default_rng(0)

print("== strided 3D correlation, same padding ==")
geom = ConvGeometry(kernel=(2, 5, 5), strides=(2, 2, 2), padding="same", filters=4)
x = rng.standard_normal((6, 16, 12, 3))
w = rng.standard_normal((2, 5, 5, 3, 4))
b = rng.standard_normal(4)

out_gemm = conv3d_forward(x, w, b, geom, method="gemm")
out_fft = conv3d_forward(x, w, b, geom, method="fft")
out_ref = conv3d_oracle(x, w, b, geom)
print(f"input {x.shape} -> output {out_gemm.shape}")
print(f"|gemm - oracle|  max: {np.abs(out_gemm - out_ref).max():.3e}")
print(f"|fft  - oracle|  max: {np.abs(out_fft - out_ref).max():.3e}")

print("\n== gradients vs central differences ==")
probe = rng.standard_normal(out_gemm.shape)


def loss():
    return float(np.sum(conv3d_forward(x, w, b, geom) * probe))


dx, dw, db = conv3d_backward(probe, x, w, geom)
for name, analytic, wrt in [("d/dinput", dx, x), ("d/dweights", dw, w), ("d/dbias", db, b)]:
    err = max_rel_error(analytic, numerical_grad(loss, wrt))
    print(f"{name:<11} max rel err {err:.3e}")

print("\n== adjoint identity <conv(v), g> == <v, conv^T(g)> ==")
v = rng.standard_normal(x.shape)
g = rng.standard_normal(out_gemm.shape)
lhs = np.sum(conv3d_forward(v, w, None, geom) * g)
rhs = np.sum(v * conv3d_backward(g, x, w, geom)[0])
print(f"lhs {lhs:+.12f}  rhs {rhs:+.12f}  |diff| {abs(lhs - rhs):.3e}")
