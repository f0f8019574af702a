"""Experts with scenario-specific batch normalization, scenario-aware
softmax gating, and the mixture block.

Each expert applies its scenario-adaptive projection, a parametric ReLU, and
DSBN, in that order. The gate reads only the scenario embedding, so every
record of one scenario shares its mixture weights. A batch may span
scenarios: normalization partitions rows by scenario id, and the mixture is
computed per row with that row's own scenario embedding.
"""

import logging
import math

import numpy as np

from . import numerics as nm
from . import sap as sap_mod
from .errors import DimensionError, IndexLookupError

logger = logging.getLogger(__name__)

TRAIN = "train"
INFER = "infer"


class Dsbn:
    """Per-scenario batch normalization with per-scenario running statistics.

    Scenario d's statistics are touched only by batches that contain rows of
    scenario d. A train-mode partition of size 1 cannot be standardized, so
    it falls back to the running statistics and bumps a diagnostic counter.
    """

    def __init__(self, dim, n_scenarios, momentum=0.1, eps=1e-5, name="dsbn"):
        self.dim = dim
        self.n_scenarios = n_scenarios
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self.gamma = [
            nm.ones((dim,), requires_grad=True, name=f"{name}.gamma{d}") for d in range(n_scenarios)
        ]
        self.beta = [
            nm.zeros((dim,), requires_grad=True, name=f"{name}.beta{d}") for d in range(n_scenarios)
        ]
        self.running_mean = [np.zeros(dim) for _ in range(n_scenarios)]
        self.running_var = [np.ones(dim) for _ in range(n_scenarios)]
        self.singleton_fallbacks = 0

    def parameters(self):
        out = []
        for d in range(self.n_scenarios):
            out.append((self.gamma[d].name, self.gamma[d]))
            out.append((self.beta[d].name, self.beta[d]))
        return out

    def buffers(self):
        out = []
        for d in range(self.n_scenarios):
            out.append((f"{self.name}.running_mean{d}", self.running_mean[d]))
            out.append((f"{self.name}.running_var{d}", self.running_var[d]))
        return out

    def _affine(self, normalized, d, m):
        scaled = nm.mul(normalized, nm.broadcast_rows(self.gamma[d], m))
        return nm.add(scaled, nm.broadcast_rows(self.beta[d], m))

    def _from_running(self, rows, d, m):
        inv = 1.0 / np.sqrt(self.running_var[d] + self.eps)
        centered = nm.sub(rows, nm.tensor(np.tile(self.running_mean[d], (m, 1))))
        normalized = nm.mul(centered, nm.tensor(np.tile(inv, (m, 1))))
        return self._affine(normalized, d, m)

    def forward(self, x_batch, scenario_ids, mode, update_running=True):
        if x_batch.shape[1] != self.dim:
            raise DimensionError(f"{self.name}: expected width {self.dim}, got {x_batch.shape}")
        ids = np.asarray(scenario_ids, dtype=np.intp)
        if ids.size != x_batch.shape[0]:
            raise DimensionError(f"{self.name}: {ids.size} scenario ids for {x_batch.shape[0]} rows")
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_scenarios):
            raise IndexLookupError(f"{self.name}: scenario id out of range [0, {self.n_scenarios})")

        parts = []
        positions = []
        for d in sorted(set(int(v) for v in ids)):
            idx = np.flatnonzero(ids == d)
            rows = nm.take_rows(x_batch, idx)
            m = idx.size
            if mode == INFER:
                parts.append(self._from_running(rows, d, m))
            elif m == 1:
                self.singleton_fallbacks += 1
                logger.warning("%s: scenario %d has a single-row partition; using running statistics", self.name, d)
                parts.append(self._from_running(rows, d, m))
            else:
                mean = nm.mean_rows(rows)
                centered = nm.sub(rows, nm.broadcast_rows(mean, m))
                var = nm.mean_rows(nm.mul(centered, centered))
                inv = nm.power(nm.add(var, self.eps), -0.5)
                normalized = nm.mul(centered, nm.broadcast_rows(inv, m))
                parts.append(self._affine(normalized, d, m))
                if update_running:
                    mom = self.momentum
                    self.running_mean[d] = (1 - mom) * self.running_mean[d] + mom * mean.values
                    self.running_var[d] = (1 - mom) * self.running_var[d] + mom * var.values
            positions.append(idx)
        order = np.concatenate(positions)
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.size)
        stacked = parts[0] if len(parts) == 1 else nm.concat(parts, axis=0)
        return nm.take_rows(stacked, inverse)


class Expert:
    """One expert: scenario-adaptive projection -> PReLU -> DSBN."""

    def __init__(self, d_in, d_hidden, rank, scenario_dim, n_scenarios, rng, name="expert",
                 adaptive=True, scenario_norm=True):
        self.name = name
        self.scenario_norm = scenario_norm
        self.sap = sap_mod.SapLayer(d_in, d_hidden, rank, scenario_dim, rng, name=f"{name}.sap", adaptive=adaptive)
        self.slope = nm.tensor(np.array([0.25]), requires_grad=True, name=f"{name}.prelu_slope")
        norm_scenarios = n_scenarios if scenario_norm else 1
        self.dsbn = Dsbn(d_hidden, norm_scenarios, name=f"{name}.dsbn")

    def parameters(self):
        return self.sap.parameters() + [(self.slope.name, self.slope)] + self.dsbn.parameters()

    def buffers(self):
        return self.dsbn.buffers()

    def _norm_ids(self, scenario_ids):
        if self.scenario_norm:
            return scenario_ids
        return np.zeros(len(scenario_ids), dtype=np.intp)

    def forward(self, x_batch, e_s_batch, scenario_ids, mode, update_running=True):
        pre = sap_mod.sap_forward_batch(self.sap, x_batch, e_s_batch)
        activated = nm.prelu(pre, self.slope)
        return self.dsbn.forward(activated, self._norm_ids(scenario_ids), mode, update_running)


class GateNetwork:
    """Softmax gate over experts, driven by the scenario embedding alone."""

    def __init__(self, n_experts, scenario_dim, rng, name="gate"):
        self.n_experts = n_experts
        self.scenario_dim = scenario_dim
        self.name = name
        bound = 1.0 / math.sqrt(scenario_dim)
        self.w = nm.uniform((n_experts, scenario_dim), -bound, bound, rng, requires_grad=True, name=f"{name}.w")
        self.b = nm.zeros((n_experts,), requires_grad=True, name=f"{name}.b")

    def parameters(self):
        return [(self.w.name, self.w), (self.b.name, self.b)]

    def weights(self, e_s):
        """Mixture weights for a single scenario embedding (on the simplex)."""
        logits = nm.add(
            nm.reshape(nm.matmul(self.w, nm.reshape(e_s, (self.scenario_dim, 1))), (self.n_experts,)),
            self.b,
        )
        return nm.softmax(logits)

    def weights_batch(self, e_s_batch):
        n = e_s_batch.shape[0]
        logits = nm.add(nm.matmul(e_s_batch, nm.transpose(self.w)), nm.broadcast_rows(self.b, n))
        return nm.softmax(logits)


class MoeBlock:
    """K experts mixed by the gate, then a scenario-adaptive output map."""

    def __init__(self, d_in, d_hidden, d_out, n_experts, rank, scenario_dim, n_scenarios, rng,
                 name="moe", adaptive=True, scenario_norm=True):
        self.name = name
        self.experts = [
            Expert(d_in, d_hidden, rank, scenario_dim, n_scenarios, rng, name=f"{name}.expert{k}",
                   adaptive=adaptive, scenario_norm=scenario_norm)
            for k in range(n_experts)
        ]
        self.gate = GateNetwork(n_experts, scenario_dim, rng, name=f"{name}.gate")
        self.forward_sap = sap_mod.SapLayer(
            d_hidden, d_out, rank, scenario_dim, rng, name=f"{name}.forward_sap", adaptive=adaptive
        )

    def parameters(self):
        params = []
        for expert in self.experts:
            params += expert.parameters()
        params += self.gate.parameters()
        params += self.forward_sap.parameters()
        return params

    def buffers(self):
        out = []
        for expert in self.experts:
            out += expert.buffers()
        return out

    def forward(self, x_batch, e_s_batch, scenario_ids, mode, update_running=True):
        alphas = self.gate.weights_batch(e_s_batch)
        mix = None
        for k, expert in enumerate(self.experts):
            out = expert.forward(x_batch, e_s_batch, scenario_ids, mode, update_running)
            weighted = nm.scale_rows(out, nm.take_col(alphas, k))
            mix = weighted if mix is None else nm.add(mix, weighted)
        return sap_mod.sap_forward_batch(self.forward_sap, mix, e_s_batch)
