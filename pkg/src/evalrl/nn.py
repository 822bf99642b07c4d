"""Small fp64 multilayer perceptrons with hand-written backpropagation.

Hidden layers use the rectifier; the output head is one of

* ``softplus``: strictly positive outputs (the ``u`` networks),
* ``softmax``: a probability vector per input (prior networks),
* ``linear``: unconstrained outputs (Q networks of the baselines).

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of shape
``(B, fan_in)`` maps to ``X @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import expit, softmax

__all__ = [
    "HEADS",
    "CHECKPOINT_VERSION",
    "Mlp",
    "AdamState",
    "FiniteDiffReport",
    "forward",
    "backward",
    "adam_step",
    "polyak_update",
    "finite_diff_check",
    "save_checkpoint",
    "load_checkpoint",
    "softplus",
    "softplus_inverse",
]

HEADS = ("softplus", "softmax", "linear")
CHECKPOINT_VERSION = 1


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def softplus_inverse(y: np.ndarray) -> np.ndarray:
    """``z`` with ``softplus(z) = y`` for ``y > 0``, accurate for tiny and large ``y``."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("softplus_inverse needs y > 0")
    return y + np.log(-np.expm1(-y))


class Mlp:
    """Feed-forward net ``layer_dims[0] -> ... -> layer_dims[-1]``.

    ``params`` is the flat list ``[W0, b0, W1, b1, ...]``. Initialization is
    uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for weights and biases,
    drawn from ``numpy.random.default_rng(seed)``.
    """

    def __init__(self, layer_dims: Sequence[int], head: str = "linear", seed: int | None = 0,
                 params: list[np.ndarray] | None = None):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"layer_dims needs at least two positive sizes, got {layer_dims}")
        if head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {head!r}")
        self.layer_dims = dims
        self.head = head
        if params is None:
            rng = np.random.default_rng(seed)
            params = []
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
                params.append(rng.uniform(-bound, bound, fan_out))
        else:
            params = [np.array(p, dtype=np.float64) for p in params]
            for p, shape in zip(params, self.param_shapes()):
                if p.shape != shape:
                    raise ValueError(f"parameter shape {p.shape} does not match {shape}")
            if len(params) != 2 * (len(dims) - 1):
                raise ValueError("wrong number of parameter arrays")
        self.params = params
        self._cache = None

    @classmethod
    def build(cls, obs_dim: int, num_actions: int, hidden: int, head: str, seed: int | None,
              num_hidden: int = 2) -> "Mlp":
        return cls([obs_dim] + [hidden] * num_hidden + [num_actions], head, seed)

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        return Mlp(self.layer_dims, self.head, params=[p.copy() for p in self.params])

    def same_architecture(self, other: "Mlp") -> bool:
        return self.layer_dims == other.layer_dims and self.head == other.head

    def _head(self, z: np.ndarray) -> np.ndarray:
        if self.head == "softplus":
            return softplus(z)
        if self.head == "softmax":
            return softmax(z, axis=-1)
        return z

    def forward(self, x: np.ndarray, keep_cache: bool = False) -> np.ndarray:
        """Outputs for a batch ``(B, in)`` or a single observation ``(in,)``."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.ndim != 2 or h.shape[1] != self.layer_dims[0]:
            raise ValueError(f"expected input dimension {self.layer_dims[0]}, got shape {x.shape}")
        inputs = []
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            inputs.append(h)
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        out = self._head(h)
        if keep_cache:
            self._cache = (inputs, h, out, single)
        return out[0] if single else out

    __call__ = forward

    def pre_activation(self, x: np.ndarray) -> np.ndarray:
        """Output-layer values before the head."""
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        return h

    @property
    def cached_pre_activation(self) -> np.ndarray:
        """Pre-head outputs of the last ``forward(..., keep_cache=True)``."""
        if self._cache is None:
            raise RuntimeError("no cached forward pass")
        return self._cache[1]

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of a scalar loss given ``dL/d(output)`` for the last cached forward pass."""
        if self._cache is None:
            raise RuntimeError("backward() needs a preceding forward(..., keep_cache=True)")
        inputs, z_out, out, single = self._cache
        self._cache = None
        g = np.asarray(grad_out, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != out.shape:
            raise ValueError(f"output gradient shape {g.shape} does not match outputs {out.shape}")
        if self.head == "softplus":
            g = g * expit(z_out)
        elif self.head == "softmax":
            g = out * (g - np.sum(g * out, axis=1, keepdims=True))
        return self._backprop(inputs, g)

    def backward_logits(self, grad_pre: np.ndarray) -> list[np.ndarray]:
        """Like :meth:`backward` but with ``dL/d(pre-head output)`` supplied directly."""
        if self._cache is None:
            raise RuntimeError("backward_logits() needs a preceding forward(..., keep_cache=True)")
        inputs, z_out, _, single = self._cache
        self._cache = None
        g = np.asarray(grad_pre, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != z_out.shape:
            raise ValueError(f"gradient shape {g.shape} does not match outputs {z_out.shape}")
        return self._backprop(inputs, g)

    def _backprop(self, inputs: list[np.ndarray], g: np.ndarray) -> list[np.ndarray]:
        n_layers = len(self.params) // 2
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        for i in reversed(range(n_layers)):
            h_in = inputs[i]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.params[2 * i].T) * (h_in > 0)
        return grads


def forward(net: Mlp, observation: np.ndarray) -> np.ndarray:
    return net.forward(observation)


def backward(net: Mlp, loss_gradient: np.ndarray) -> list[np.ndarray]:
    return net.backward(loss_gradient)


@dataclass
class AdamState:
    """Adam moments for one net; ``lr`` is the learning rate."""

    lr: float
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp, lr: float, **kwargs) -> "AdamState":
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        return cls(lr, [np.zeros_like(p) for p in net.params], [np.zeros_like(p) for p in net.params], **kwargs)


def adam_step(net: Mlp, grads: list[np.ndarray], state: AdamState) -> None:
    """In-place bias-corrected Adam update; raises ``FloatingPointError`` on non-finite gradients."""
    if len(grads) != len(net.params) or any(g.shape != p.shape for g, p in zip(grads, net.params)):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise FloatingPointError("non-finite gradient; Adam step rejected")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    step_size = state.lr * np.sqrt(c2) / c1
    eps_hat = state.eps * np.sqrt(c2)
    for p, g, m, v in zip(net.params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step_size * m / (np.sqrt(v) + eps_hat)


def polyak_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    """``target <- (1 - tau) target + tau online`` in place; ``tau = 1`` copies exactly."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if not target.same_architecture(online):
        raise ValueError("target and online nets differ in architecture")
    for pt, po in zip(target.params, online.params):
        if tau == 1.0:
            pt[...] = po
        else:
            pt *= 1.0 - tau
            pt += tau * po
    return target


class FiniteDiffReport(NamedTuple):
    max_rel_error: float
    worst: tuple[int, int]  # (parameter array index, flat index)
    checked: int
    skipped: int  # coordinates whose perturbation crosses a rectifier kink
    passed: bool


def _relu_pattern(net: Mlp, x: np.ndarray) -> list[np.ndarray]:
    h = np.atleast_2d(x)
    pattern = []
    n_layers = len(net.params) // 2
    for i in range(n_layers - 1):
        z = h @ net.params[2 * i] + net.params[2 * i + 1]
        pattern.append(z > 0)
        h = np.maximum(z, 0.0)
    return pattern


def finite_diff_check(
    net: Mlp,
    x: np.ndarray,
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    floor: float = 1e-8,
) -> FiniteDiffReport:
    """Compare backprop against central differences on every parameter.

    ``loss(outputs)`` returns ``(value, dvalue/doutputs)``. The relative error
    per coordinate is ``|g - g_fd| / max(|g|, |g_fd|, floor)``. Coordinates
    whose perturbation changes a rectifier pattern are skipped because the
    loss is not differentiable across the kink.
    """
    out = net.forward(x, keep_cache=True)
    _, g_out = loss(out)
    grads = net.backward(g_out)
    base_pattern = _relu_pattern(net, x)
    worst, worst_at, checked, skipped = 0.0, (0, 0), 0, 0
    for k, p in enumerate(net.params):
        flat = p.reshape(-1)
        gk = grads[k].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            plus, _ = loss(net.forward(x))
            kink = any(np.any(a != b) for a, b in zip(_relu_pattern(net, x), base_pattern))
            flat[j] = orig - h
            minus, _ = loss(net.forward(x))
            kink = kink or any(np.any(a != b) for a, b in zip(_relu_pattern(net, x), base_pattern))
            flat[j] = orig
            if kink:
                skipped += 1
                continue
            fd = (plus - minus) / (2 * h)
            err = abs(gk[j] - fd) / max(abs(gk[j]), abs(fd), floor)
            checked += 1
            if err > worst:
                worst, worst_at = err, (k, j)
    return FiniteDiffReport(float(worst), worst_at, checked, skipped, worst <= tolerance)


def save_checkpoint(path, nets: Sequence[Mlp], extra: dict | None = None) -> None:
    """Write nets (and optional scalar/array metadata) to an ``.npz`` file."""
    arrays = {"version": np.array(CHECKPOINT_VERSION), "num_nets": np.array(len(nets))}
    for i, net in enumerate(nets):
        arrays[f"net{i}_dims"] = np.array(net.layer_dims, dtype=np.int64)
        arrays[f"net{i}_head"] = np.array(net.head)
        for k, p in enumerate(net.params):
            arrays[f"net{i}_p{k}"] = p
    for key, value in (extra or {}).items():
        arrays[f"extra_{key}"] = np.asarray(value)
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[list[Mlp], dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        nets = []
        for i in range(int(data["num_nets"])):
            dims = data[f"net{i}_dims"].tolist()
            head = str(data[f"net{i}_head"])
            params = [data[f"net{i}_p{k}"] for k in range(2 * (len(dims) - 1))]
            nets.append(Mlp(dims, head, params=params))
        extra = {k[len("extra_"):]: data[k] for k in data.files if k.startswith("extra_")}
    return nets, extra
