"""Scenario-adaptive projection: a shared affine map plus a low-rank,
scenario-generated correction.

The layer computes y = W x + bias + B^T diag(b_s) A^T x, where the rank-R
coefficient vector b_s is an affine function of the scenario embedding. The
correction never materializes the d_in x d_out delta during training; the
dense path exists only as an oracle for tests and analysis.
"""

import math

import numpy as np

from . import numerics as nm
from .errors import DimensionError


class SapLayer:
    """Shared weight, bias, low-rank factors, and the b_s generator.

    With ``adaptive=False`` the layer is a plain affine map: the factors and
    generator are never allocated, the correction is identically zero, and
    the parameter count drops to d_out*d_in + d_out.
    """

    def __init__(self, d_in, d_out, rank, scenario_dim, rng, name="sap", adaptive=True):
        if adaptive and rank > min(d_in, d_out):
            raise DimensionError(f"{name}: rank {rank} exceeds min(d_in={d_in}, d_out={d_out})")
        self.d_in = d_in
        self.d_out = d_out
        self.rank = rank
        self.scenario_dim = scenario_dim
        self.name = name
        self.adaptive = adaptive
        bound = 1.0 / math.sqrt(d_in)
        self.w_shared = nm.uniform((d_out, d_in), -bound, bound, rng, requires_grad=True, name=f"{name}.w_shared")
        self.bias = nm.zeros((d_out,), requires_grad=True, name=f"{name}.bias")
        if adaptive:
            self.a = nm.uniform((d_in, rank), -bound, bound, rng, requires_grad=True, name=f"{name}.a")
            # B starts at zero so the correction vanishes at step 0 and the
            # layer trains from the pure shared map outward.
            self.b = nm.zeros((rank, d_out), requires_grad=True, name=f"{name}.b")
            gbound = 1.0 / math.sqrt(scenario_dim)
            self.gen_w = nm.uniform((rank, scenario_dim), -gbound, gbound, rng, requires_grad=True, name=f"{name}.gen_w")
            self.gen_b = nm.zeros((rank,), requires_grad=True, name=f"{name}.gen_b")
        else:
            self.a = self.b = self.gen_w = self.gen_b = None

    def parameters(self):
        params = [(self.w_shared.name, self.w_shared), (self.bias.name, self.bias)]
        if self.adaptive:
            params += [
                (self.a.name, self.a),
                (self.b.name, self.b),
                (self.gen_w.name, self.gen_w),
                (self.gen_b.name, self.gen_b),
            ]
        return params

    def parameter_count(self):
        count = self.d_out * self.d_in + self.d_out
        if self.adaptive:
            count += self.rank * (self.d_in + self.d_out) + self.rank * self.scenario_dim + self.rank
        return count


def scenario_bias(layer, e_s):
    """b_s = gen_w @ e_s + gen_b for a single scenario embedding."""
    if e_s.shape != (layer.scenario_dim,):
        raise DimensionError(f"scenario_bias: expected ({layer.scenario_dim},), got {e_s.shape}")
    prod = nm.matmul(layer.gen_w, nm.reshape(e_s, (layer.scenario_dim, 1)))
    return nm.add(nm.reshape(prod, (layer.rank,)), layer.gen_b)


def scenario_bias_batch(layer, e_s_batch):
    """Row-per-record b_s for a batch of scenario embeddings."""
    n = e_s_batch.shape[0]
    prod = nm.matmul(e_s_batch, nm.transpose(layer.gen_w))
    return nm.add(prod, nm.broadcast_rows(layer.gen_b, n))


def sap_forward(layer, x, e_s):
    """Single-vector forward: y = W x + bias + B^T diag(b_s) A^T x."""
    if x.shape != (layer.d_in,):
        raise DimensionError(f"sap_forward: expected input ({layer.d_in},), got {x.shape}")
    out = sap_forward_batch(layer, nm.reshape(x, (1, layer.d_in)), nm.reshape(e_s, (1, layer.scenario_dim)))
    return nm.reshape(out, (layer.d_out,))


def sap_forward_batch(layer, x_batch, e_s_batch):
    """Batched forward in factored form, cost O(R (d_in + d_out)) per row."""
    if x_batch.shape[1] != layer.d_in:
        raise DimensionError(f"sap_forward: expected input width {layer.d_in}, got {x_batch.shape}")
    n = x_batch.shape[0]
    base = nm.add(nm.matmul(x_batch, nm.transpose(layer.w_shared)), nm.broadcast_rows(layer.bias, n))
    if not layer.adaptive:
        return base
    if e_s_batch.shape != (n, layer.scenario_dim):
        raise DimensionError(
            f"sap_forward: expected scenario batch ({n}, {layer.scenario_dim}), got {e_s_batch.shape}"
        )
    bs = scenario_bias_batch(layer, e_s_batch)
    projected = nm.matmul(x_batch, layer.a)
    correction = nm.matmul(nm.mul(projected, bs), layer.b)
    return nm.add(base, correction)


def materialize_delta(layer, e_s):
    """Dense d_in x d_out correction, as the explicit sum of R scaled outer
    products. Oracle and analysis path only; plain NumPy, independent of the
    factored forward.
    """
    e = e_s.values if hasattr(e_s, "values") else np.asarray(e_s, dtype=np.float64)
    bs = layer.gen_w.values @ e + layer.gen_b.values
    delta = np.zeros((layer.d_in, layer.d_out))
    for r in range(layer.rank):
        delta += bs[r] * np.outer(layer.a.values[:, r], layer.b.values[r, :])
    return delta
