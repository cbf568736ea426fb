"""Minimal dense-tensor reverse-mode differentiation.

Only the handful of primitives the appraisal network needs: affine maps,
tanh/relu, concatenation, neighbor-weighted sums, masked softmax over a
neighbor list, embedding lookup, and mean squared error. Tensors are 1-D or
2-D float64; every primitive records an exact backward rule on a tape, and
a tape is single-use (confined to one training step).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

CHECK_FINITE = False  # debug mode: validate forward values on every primitive


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim not in (1, 2):
            raise ValueError(f"tensors are 1-D or 2-D, got shape {self.data.shape}")
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._node = False  # True for tensors produced by a tape primitive
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class Tape:
    """Ordered record of executed primitives; backward replays it in strict
    reverse order, accumulating gradients additively across fan-out."""

    def __init__(self):
        self._records: list[Callable[[], None]] = []
        self._spent = False

    def _emit(self, data) -> Tensor:
        out = Tensor(data)
        out._node = True
        out._tape = self
        if CHECK_FINITE and not np.all(np.isfinite(out.data)):
            raise FloatingPointError("non-finite forward value")
        return out

    def _record(self, fn: Callable[[], None]) -> None:
        self._records.append(fn)

    def backward(self, loss: Tensor) -> None:
        if loss._tape is not self:
            raise RuntimeError("loss was not produced on this tape")
        if loss.data.size != 1:
            raise ValueError("loss must be scalar")
        if self._spent:
            raise RuntimeError("stale tape: backward() already ran; build a fresh tape")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._records):
            fn()


def _wants(t: Tensor) -> bool:
    return t.requires_grad or t._node


def _acc(t: Tensor, g) -> None:
    # first touch copies instead of allocating zeros and adding
    if t.grad is None:
        t.grad = np.array(g)
    else:
        t.grad += g


def affine(tape: Tape, w: Tensor, x: Tensor, b: Tensor | None = None) -> Tensor:
    """y = w @ x (+ b). w: (m, n), x: (n,), b: (m,)."""
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise ValueError(f"affine shape mismatch: {w.data.shape} @ {x.data.shape}")
    y = w.data @ x.data
    if b is not None:
        if b.data.shape != y.shape:
            raise ValueError(f"affine bias shape mismatch: {b.data.shape} vs {y.shape}")
        y = y + b.data
    out = tape._emit(y)

    def bw():
        g = out.grad
        if _wants(w):
            if w.grad is None:
                w.grad = np.zeros_like(w.data)
            # rank-1 update in place; broadcasting beats np.outer here
            w.grad += g.reshape(-1, 1) * x.data
        if _wants(x):
            _acc(x, w.data.T @ g)
        if b is not None and _wants(b):
            _acc(b, g)

    tape._record(bw)
    return out


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = tape._emit(a.data + b.data)

    def bw():
        g = out.grad
        if _wants(a):
            _acc(a, g)
        if _wants(b):
            _acc(b, g)

    tape._record(bw)
    return out


def tanh(tape: Tape, x: Tensor) -> Tensor:
    out = tape._emit(np.tanh(x.data))

    def bw():
        if _wants(x):
            _acc(x, (1.0 - out.data * out.data) * out.grad)

    tape._record(bw)
    return out


def relu(tape: Tape, x: Tensor) -> Tensor:
    out = tape._emit(np.maximum(x.data, 0.0))

    def bw():
        if _wants(x):
            _acc(x, (x.data > 0.0) * out.grad)

    tape._record(bw)
    return out


def concat(tape: Tape, xs: list[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("concat of empty list")
    if any(x.data.ndim != 1 for x in xs):
        raise ValueError("concat takes 1-D tensors")
    out = tape._emit(np.concatenate([x.data for x in xs]))
    offsets = [0]
    for x in xs:
        offsets.append(offsets[-1] + x.data.shape[0])

    def bw():
        g = out.grad
        for i, x in enumerate(xs):
            if _wants(x):
                _acc(x, g[offsets[i]:offsets[i + 1]])

    tape._record(bw)
    return out


def weighted_sum(tape: Tape, alphas: Tensor, hs: list[Tensor]) -> Tensor:
    """sum_i alphas[i] * hs[i]. alphas: (n,), each h: (d,)."""
    if alphas.data.ndim != 1 or alphas.data.shape[0] != len(hs):
        raise ValueError("weighted_sum: weight count must equal vector count")
    if not hs:
        raise ValueError("weighted_sum of empty list")
    d = hs[0].data.shape[0]
    if any(h.data.shape != (d,) for h in hs):
        raise ValueError("weighted_sum: inconsistent vector shapes")
    acc = np.zeros(d)
    for a, h in zip(alphas.data, hs):
        acc += a * h.data
    out = tape._emit(acc)

    def bw():
        g = out.grad
        for i, h in enumerate(hs):
            if _wants(h):
                _acc(h, alphas.data[i] * g)
        if _wants(alphas):
            _acc(alphas, np.array([float(h.data @ g) for h in hs]))

    tape._record(bw)
    return out


def masked_softmax(tape: Tape, betas: list[Tensor]) -> Tensor:
    """Softmax over a neighbor list of scalar scores; callers must handle
    empty neighborhoods before invoking."""
    if not betas:
        raise ValueError("masked_softmax over an empty neighbor list")
    if any(b.data.size != 1 for b in betas):
        raise ValueError("masked_softmax takes scalar scores")
    vals = np.array([b.data.reshape(-1)[0] for b in betas])
    shifted = vals - vals.max()
    e = np.exp(shifted)
    out = tape._emit(e / e.sum())

    def bw():
        g = out.grad
        a = out.data
        inner = float(a @ g)
        d = a * (g - inner)
        for i, b in enumerate(betas):
            if _wants(b):
                _acc(b, np.full_like(b.data, d[i]))

    tape._record(bw)
    return out


def embedding_lookup(tape: Tape, table: Tensor, idx: int) -> Tensor:
    if table.data.ndim != 2:
        raise ValueError("embedding table must be 2-D")
    if not 0 <= idx < table.data.shape[0]:
        raise ValueError(f"embedding index {idx} out of range")
    out = tape._emit(table.data[idx].copy())

    def bw():
        if _wants(table):
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            table.grad[idx] += out.grad

    tape._record(bw)
    return out


def mse(tape: Tape, preds: list[Tensor], targets) -> Tensor:
    """Mean of squared prediction errors over a batch of scalar predictions."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if not preds:
        raise ValueError("mse over an empty batch")
    if len(preds) != targets.shape[0]:
        raise ValueError("mse: prediction/target count mismatch")
    if any(p.data.size != 1 for p in preds):
        raise ValueError("mse takes scalar predictions")
    resid = np.array([p.data.reshape(-1)[0] for p in preds]) - targets
    out = tape._emit(np.array([float(np.mean(resid * resid))]))

    def bw():
        g = out.grad.reshape(-1)[0]
        scale = 2.0 / len(preds)
        for i, p in enumerate(preds):
            if _wants(p):
                _acc(p, np.full_like(p.data, scale * resid[i] * g))

    tape._record(bw)
    return out


# ---------------------------------------------------------------------------
# Optimizer

class AdamState:
    """Adam with bias correction; step = lr * mhat / (sqrt(vhat) + eps)."""

    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(state: AdamState, params: dict[str, Tensor]) -> None:
    """One update over all parameters using their accumulated .grad."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in sorted(params):
        p = params[name]
        if p.grad is None:
            raise ValueError(f"parameter '{name}' has no gradient")
        if p.grad.shape != p.data.shape:
            raise ValueError(f"parameter '{name}' gradient shape mismatch")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (p.grad * p.grad)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


# ---------------------------------------------------------------------------
# Initialization and gradient checking

def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def finite_diff_check(loss_fn: Callable[[], tuple[Tape, Tensor]],
                      params: dict[str, Tensor],
                      h: float = 1e-5, tolerance: float = 1e-4,
                      noise_floor: float = 1e-6) -> dict:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` must deterministically rebuild the forward pass on a fresh
    tape from the current parameter values. Entries where both gradients sit
    below ``noise_floor`` are treated as matching: central differences in
    float64 resolve gradients only down to ~eps * |loss| / h (about 1e-10
    absolute here), so magnitudes under 1e-6 cannot be held to a 1e-4
    relative tolerance by this method.
    """
    for p in params.values():
        p.zero_grad()
    tape, loss = loss_fn()
    tape.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    report: dict = {"per_parameter": {}, "max_rel_err": 0.0, "failures": []}
    for name in sorted(params):
        p = params[name]
        flat = p.data.reshape(-1)
        worst, worst_idx = 0.0, -1
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            _, lp = loss_fn()
            flat[i] = orig - h
            _, lm = loss_fn()
            flat[i] = orig
            fd = (lp.item() - lm.item()) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            denom = max(abs(a), abs(fd))
            rel = 0.0 if denom < noise_floor else abs(a - fd) / denom
            if rel > worst:
                worst, worst_idx = rel, i
        report["per_parameter"][name] = {"max_rel_err": worst, "worst_index": worst_idx}
        report["max_rel_err"] = max(report["max_rel_err"], worst)
        if worst > tolerance:
            report["failures"].append(name)
    report["ok"] = not report["failures"]
    return report
