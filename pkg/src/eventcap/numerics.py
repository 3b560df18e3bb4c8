"""Dense float64 arrays with hand-derived backward passes.

Values live in numpy arrays; every operation used by a training path has an
explicit backward function, and grad_check compares those against central
differences.  Nothing here builds a tape: callers keep the caches returned
by forward passes and run the matching backward passes in reverse order.
"""

import numpy as np

from .errors import DeterminismError, NumericError
from .rng import SplitMix64


def _require_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {name}")


class ParamStore:
    """Named float64 parameter tensors with paired gradient buffers.

    Creation draws from a private SplitMix64 stream, so two stores built
    from the same seed with the same sequence of add() calls hold
    bit-identical values.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._rng = SplitMix64(seed)
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, shape, sigma: float = 0.01, zero: bool = False) -> np.ndarray:
        if name in self.values:
            raise ValueError(f"duplicate parameter {name!r}")
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        if zero:
            v = np.zeros(shape, dtype=np.float64)
        else:
            v = self._rng.normals(shape) * sigma
        self.values[name] = v
        self.grads[name] = np.zeros(shape, dtype=np.float64)
        return v

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return list(self.values)

    def grad(self, name: str) -> np.ndarray:
        return self.grads[name]

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0


def affine(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = W x + b for a vector x, or x W^T + b for a stack of rows."""
    if W.shape[1] != x.shape[-1]:
        raise ValueError(
            f"affine shape mismatch: weight {W.shape} against input {x.shape}"
        )
    return x @ W.T + b


def affine_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray):
    """Returns (dx, dW, db) for y = W x + b."""
    if dy.ndim == 1:
        return dy @ W, np.outer(dy, x), dy
    return dy @ W, dy.T @ x, dy.sum(axis=0)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_cell(x, h, c, W_x, W_h, b):
    """One LSTM cell update.

    Gate layout along the 4H axis is input, forget, candidate, output:
    i = sig(.), f = sig(.), g = tanh(.), o = sig(.),
    c' = f * c + i * g,  h' = o * tanh(c').
    Returns (h2, c2, cache) where cache feeds lstm_cell_backward.
    """
    H = h.shape[0]
    if W_x.shape != (4 * H, x.shape[0]) or W_h.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ValueError(
            f"lstm cell shape mismatch: W_x {W_x.shape}, W_h {W_h.shape}, "
            f"b {b.shape} against x {x.shape}, h {h.shape}"
        )
    z = W_x @ x + W_h @ h + b
    i = _sigmoid(z[:H])
    f = _sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = _sigmoid(z[3 * H:])
    c2 = f * c + i * g
    tc = np.tanh(c2)
    h2 = o * tc
    cache = (x, h, c, i, f, g, o, tc)
    return h2, c2, cache


def lstm_cell_backward(dh2, dc2, cache, W_x, W_h):
    """Backward through one cell update.

    dh2/dc2 are gradients w.r.t. the outputs; returns
    (dx, dh, dc, dW_x, dW_h, db) with dW/db fresh arrays for accumulation.
    """
    x, h, c, i, f, g, o, tc = cache
    H = h.shape[0]
    do = dh2 * tc
    dct = dc2 + dh2 * o * (1.0 - tc * tc)
    di = dct * g
    df = dct * c
    dg = dct * i
    dc = dct * f
    dz = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g * g),
        do * o * (1.0 - o),
    ])
    dW_x = np.outer(dz, x)
    dW_h = np.outer(dz, h)
    dx = W_x.T @ dz
    dh = W_h.T @ dz
    return dx, dh, dc, dW_x, dW_h, dz


def lstm_step(x, state, weights):
    """One step through a stack of LSTM layers.

    state is a list of (h, c) per layer, weights a list of (W_x, W_h, b).
    Layer l consumes the hidden output of layer l-1.  Returns
    (top_hidden, new_state, caches).
    """
    if len(state) != len(weights):
        raise ValueError("state and weights must have one entry per layer")
    new_state = []
    caches = []
    inp = x
    for (h, c), (W_x, W_h, b) in zip(state, weights):
        h2, c2, cache = lstm_cell(inp, h, c, W_x, W_h, b)
        new_state.append((h2, c2))
        caches.append(cache)
        inp = h2
    return inp, new_state, caches


def zero_state(layer_sizes) -> list:
    return [(np.zeros(H, dtype=np.float64), np.zeros(H, dtype=np.float64)) for H in layer_sizes]


def softmax_xent(logits: np.ndarray, target: int):
    """Cross-entropy of a softmax over logits against one target index.

    Stabilized by max subtraction.  Returns (loss, dlogits) where
    dlogits = softmax(logits) - onehot(target).
    """
    if not 0 <= target < logits.shape[0]:
        raise IndexError(f"target {target} outside logits of size {logits.shape[0]}")
    shifted = logits - logits.max()
    ez = np.exp(shifted)
    p = ez / ez.sum()
    loss = float(np.log(ez.sum()) - shifted[target])
    dlogits = p.copy()
    dlogits[target] -= 1.0
    return loss, dlogits


def sgd_momentum_step(params: ParamStore, velocity: dict, lr: float, momentum: float,
                      names=None) -> None:
    """v <- momentum * v - lr * grad;  theta <- theta + v;  grads zeroed.

    Only parameters in `names` (default: all) are touched.  A non-finite
    gradient aborts before any update, naming the offending parameter.
    """
    chosen = params.names() if names is None else list(names)
    for name in chosen:
        g = params.grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
    for name in chosen:
        v = velocity[name]
        v *= momentum
        v -= lr * params.grads[name]
        params.values[name] += v
        params.grads[name][...] = 0.0


def make_velocity(params: ParamStore, names=None) -> dict:
    chosen = params.names() if names is None else list(names)
    return {n: np.zeros_like(params.values[n]) for n in chosen}


def grad_check(loss_fn, params: ParamStore, eps: float = 1e-5, names=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn(params) must return a scalar and leave analytic gradients in the
    store's grad buffers.  Relative error per component is
    |a - n| / max(|a|, |n|, 1e-8).  Two evaluations at identical parameters
    must agree exactly, otherwise the loss is nondeterministic.
    """
    params.zero_grads()
    base = float(loss_fn(params))
    analytic = {n: params.grads[n].copy() for n in params.names()}
    params.zero_grads()
    again = float(loss_fn(params))
    if base != again:
        raise DeterminismError(
            f"loss evaluations at identical parameters differ: {base!r} vs {again!r}"
        )
    if not np.isfinite(base):
        raise NumericError("loss is non-finite at the evaluation point")
    chosen = params.names() if names is None else list(names)
    worst = 0.0
    for name in chosen:
        theta = params.values[name]
        flat = theta.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for k in range(flat.shape[0]):
            keep = flat[k]
            flat[k] = keep + eps
            params.zero_grads()
            f_plus = float(loss_fn(params))
            flat[k] = keep - eps
            params.zero_grads()
            f_minus = float(loss_fn(params))
            flat[k] = keep
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(aflat[k] - numeric) / max(abs(aflat[k]), abs(numeric), 1e-8)
            worst = max(worst, err)
    params.zero_grads()
    for n, g in analytic.items():
        params.grads[n][...] = g
    return worst
