"""Fully-connected tanh network with exact input derivatives and PINN training.

The forward pass propagates (value, input-Jacobian, input-Hessian) triples
through every layer, so the PDE residual of the stochastic Zubov equation can
be formed exactly at each collocation point. Parameter gradients of the loss
are computed by reverse accumulation through that same second-order forward
recursion (third-order mixed derivatives overall), with no autodiff framework
involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import TrainingError
from .system import StochasticSystem


@dataclass(frozen=True)
class NeuralFunction:
    """Feed-forward net, tanh hidden activations, identity output, output size 1."""

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=float) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=float) for b in self.biases)
        if len(ws) != len(bs) or not ws:
            raise ValueError("weights and biases must be nonempty and parallel")
        for w, b in zip(ws, bs):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError("layer shape mismatch")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("parameters must be finite")
        for w_prev, w_next in zip(ws, ws[1:]):
            if w_next.shape[1] != w_prev.shape[0]:
                raise ValueError("consecutive layer sizes disagree")
        if ws[-1].shape[0] != 1:
            raise ValueError("output layer must have one unit")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def sizes(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def init(cls, sizes: Sequence[int], seed: int) -> "NeuralFunction":
        """Glorot-uniform weights, zero biases, reproducible from the seed."""
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            bs.append(np.zeros(fan_out))
        return cls(tuple(ws), tuple(bs))

    # -- evaluation ----------------------------------------------------------

    def value(self, x: np.ndarray) -> np.ndarray:
        """Value-only forward pass; x (B, n) -> (B,), or (n,) -> scalar."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if l != last:
                h = np.tanh(h)
        out = h[:, 0]
        return float(out[0]) if single else out

    def eval_with_derivatives(self, x: np.ndarray):
        """Value, input gradient, and input Hessian.

        x (n,) -> (float, (n,), (n, n)); x (B, n) -> ((B,), (B, n), (B, n, n)).
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        v, J, H = _forward_triples(self.weights, self.biases, pts)[-1][:3]
        val, grad, hess = v[:, 0], J[:, :, 0], H[:, :, :, 0]
        if single:
            return float(val[0]), grad[0], hess[0]
        return val, grad, hess

    def value_grad_hess(self, x: np.ndarray):
        """C2Function protocol: batched (value, gradient, Hessian)."""
        x = np.asarray(x, dtype=float)
        v, J, H = _forward_triples(self.weights, self.biases, x)[-1][:3]
        return v[:, 0], J[:, :, 0], H[:, :, :, 0]


def _forward_triples(weights, biases, x: np.ndarray):
    """Propagate (v, J, H) through all layers; returns per-layer records.

    Layout: v (B, k), J (B, n, k), H (B, n, n, k). Each record is
    (v, J, H, pre_J, pre_H) where pre_* are the affine outputs feeding the
    activation (needed for reverse accumulation); the final record has
    pre_* = None since the output layer is linear.
    """
    B, n = x.shape
    v = x
    J = np.broadcast_to(np.eye(n)[None, :, :], (B, n, n)).copy()
    H = np.zeros((B, n, n, n))
    records = [(v, J, H, None, None)]
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        a = v @ w.T + b
        Ja = np.einsum("bnj,kj->bnk", J, w)
        Ha = np.einsum("bnmj,kj->bnmk", H, w)
        if l == last:
            records.append((a, Ja, Ha, None, None))
            return records
        s = np.tanh(a)
        d1 = 1.0 - s * s
        d2 = -2.0 * s * d1
        v = s
        J = d1[:, None, :] * Ja
        H = d1[:, None, None, :] * Ha + d2[:, None, None, :] * (
            Ja[:, :, None, :] * Ja[:, None, :, :]
        )
        records.append((v, J, H, Ja, Ha))
    return records


def _backward_triples(weights, records, v_bar, J_bar, H_bar):
    """Reverse accumulation through the triple propagation.

    Inputs are adjoints of the network outputs (v (B,1), J (B,n,1), H (B,n,n,1)
    layouts). Returns per-layer (dW, db) in layer order.
    """
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        v_in, J_in, H_in = records[l][:3]
        if l != len(weights) - 1:
            # undo the tanh: adjoints arrive on (s, J_out, H_out); convert to
            # adjoints on the affine outputs (a, Ja, Ha)
            s, _, _, Ja, Ha = records[l + 1]
            d1 = 1.0 - s * s
            d2 = -2.0 * s * d1
            d3 = -2.0 * d1 * (1.0 - 3.0 * s * s)
            a_bar = (
                v_bar * d1
                + np.einsum("bnk,bnk->bk", J_bar, Ja) * d2
                + np.einsum("bnmk,bnmk->bk", H_bar, Ha) * d2
                + np.einsum("bnmk,bnk,bmk->bk", H_bar, Ja, Ja) * d3
            )
            Ja_bar = J_bar * d1[:, None, :] + (
                np.einsum("bnmk,bmk->bnk", H_bar + H_bar.transpose(0, 2, 1, 3), Ja)
                * d2[:, None, :]
            )
            Ha_bar = H_bar * d1[:, None, None, :]
            v_bar, J_bar, H_bar = a_bar, Ja_bar, Ha_bar
        w = weights[l]
        grads_w[l] = (
            np.einsum("bk,bj->kj", v_bar, v_in)
            + np.einsum("bnk,bnj->kj", J_bar, J_in)
            + np.einsum("bnmk,bnmj->kj", H_bar, H_in)
        )
        grads_b[l] = np.sum(v_bar, axis=0)
        v_bar = np.einsum("bk,kj->bj", v_bar, w)
        J_bar = np.einsum("bnk,kj->bnj", J_bar, w)
        H_bar = np.einsum("bnmk,kj->bnmj", H_bar, w)
    return grads_w, grads_b


def pinn_loss(
    net: NeuralFunction,
    sys: StochasticSystem,
    collocation: np.ndarray,
    data: Optional[np.ndarray] = None,
    weights: Tuple[float, float, float] = (1.0, 1.0, 1.0),
):
    """Zubov PINN loss and its parameter gradient.

    loss = w_r * mean_i r(x_i)^2 + w_b * W(0)^2 + w_d * mean_j (W(y_j)-what_j)^2
    with r = LW + g(1 - W). data rows are (y_1..y_n, w_hat); returns
    (loss, components, grads_w, grads_b).
    """
    n = sys.n
    colloc = np.asarray(collocation, dtype=float)
    N = len(colloc)
    nd = 0 if data is None or len(data) == 0 else len(data)
    pts = [colloc, np.zeros((1, n))]
    if nd:
        pts.append(np.asarray(data, dtype=float)[:, :n])
    batch = np.concatenate(pts, axis=0)
    records = _forward_triples(net.weights, net.biases, batch)
    v, J, H = records[-1][:3]
    val = v[:, 0]
    grad = J[:, :, 0]
    hess = H[:, :, :, 0]

    fx = sys.drift(colloc)
    axx = sys.diffusion_outer(colloc)
    gx = sys.weight(colloc)
    lw = np.einsum("bi,bi->b", grad[:N], fx) + 0.5 * np.einsum(
        "bij,bij->b", axx, hess[:N]
    )
    residual = lw + gx * (1.0 - val[:N])
    w_r, w_b, w_d = weights
    loss_r = w_r * float(np.mean(residual**2)) if N else 0.0
    loss_b = w_b * float(val[N] ** 2)
    loss_d = 0.0

    # adjoint seeds per batch row
    v_bar = np.zeros_like(v)
    J_bar = np.zeros_like(J)
    H_bar = np.zeros_like(H)
    if N:
        coef = w_r * 2.0 * residual / N
        v_bar[:N, 0] = -coef * gx
        J_bar[:N, :, 0] = coef[:, None] * fx
        H_bar[:N, :, :, 0] = 0.5 * coef[:, None, None] * axx
    v_bar[N, 0] += w_b * 2.0 * val[N]
    if nd:
        targets = np.asarray(data, dtype=float)[:, n]
        misfit = val[N + 1 :] - targets
        loss_d = w_d * float(np.mean(misfit**2))
        v_bar[N + 1 :, 0] = w_d * 2.0 * misfit / nd

    grads_w, grads_b = _backward_triples(net.weights, records, v_bar, J_bar, H_bar)
    loss = loss_r + loss_b + loss_d
    return loss, (loss_r, loss_b, loss_d), grads_w, grads_b


@dataclass
class TrainConfig:
    collocation: int = 2000
    epochs: int = 4000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    hidden: Tuple[int, ...] = (10, 10, 10)
    seed: int = 0

    def __post_init__(self):
        if self.collocation < 1 or self.epochs < 1:
            raise ValueError("counts must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainResult:
    net: NeuralFunction
    losses: np.ndarray          # (epochs_run, 4): total, residual, boundary, data
    epochs_run: int
    diverged: bool = False


def train(
    sys: StochasticSystem,
    cfg: TrainConfig,
    data: Optional[np.ndarray] = None,
    log_every: int = 0,
) -> TrainResult:
    """Adam over the PINN loss with collocation points resampled each epoch.

    Deterministic for fixed (cfg, data). On a non-finite loss the loop aborts
    and the last finite-loss parameters are returned with diverged=True.
    """
    sizes = [sys.n, *cfg.hidden, 1]
    net = NeuralFunction.init(sizes, cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5A5A]))
    ws = [w.copy() for w in net.weights]
    bs = [b.copy() for b in net.biases]
    m_w = [np.zeros_like(w) for w in ws]
    v_w = [np.zeros_like(w) for w in ws]
    m_b = [np.zeros_like(b) for b in bs]
    v_b = [np.zeros_like(b) for b in bs]
    good_ws, good_bs = [w.copy() for w in ws], [b.copy() for b in bs]
    losses = []
    diverged = False
    for epoch in range(cfg.epochs):
        colloc = sys.domain.sample(rng, cfg.collocation)
        current = NeuralFunction(tuple(ws), tuple(bs))
        loss, parts, gw, gb = pinn_loss(current, sys, colloc, data, cfg.loss_weights)
        if not np.isfinite(loss):
            diverged = True
            ws, bs = good_ws, good_bs
            break
        losses.append((loss, *parts))
        good_ws, good_bs = [w.copy() for w in ws], [b.copy() for b in bs]
        t = epoch + 1
        corr1 = 1.0 - cfg.beta1**t
        corr2 = 1.0 - cfg.beta2**t
        for l in range(len(ws)):
            m_w[l] = cfg.beta1 * m_w[l] + (1 - cfg.beta1) * gw[l]
            v_w[l] = cfg.beta2 * v_w[l] + (1 - cfg.beta2) * gw[l] ** 2
            ws[l] = ws[l] - cfg.learning_rate * (m_w[l] / corr1) / (
                np.sqrt(v_w[l] / corr2) + cfg.adam_eps
            )
            m_b[l] = cfg.beta1 * m_b[l] + (1 - cfg.beta1) * gb[l]
            v_b[l] = cfg.beta2 * v_b[l] + (1 - cfg.beta2) * gb[l] ** 2
            bs[l] = bs[l] - cfg.learning_rate * (m_b[l] / corr1) / (
                np.sqrt(v_b[l] / corr2) + cfg.adam_eps
            )
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}: loss {loss:.6f} "
                  f"(r {parts[0]:.6f} b {parts[1]:.6f} d {parts[2]:.6f})")
    final = NeuralFunction(tuple(np.asarray(w) for w in ws), tuple(np.asarray(b) for b in bs))
    return TrainResult(
        net=final,
        losses=np.asarray(losses).reshape(-1, 4),
        epochs_run=len(losses),
        diverged=diverged,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def checkpoint_dict(net: NeuralFunction) -> dict:
    return {
        "sizes": net.sizes,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_checkpoint_dict(d: dict) -> NeuralFunction:
    try:
        ws = tuple(np.asarray(w, dtype=float) for w in d["weights"])
        bs = tuple(np.asarray(b, dtype=float) for b in d["biases"])
        net = NeuralFunction(ws, bs)
        if "sizes" in d and list(d["sizes"]) != net.sizes:
            raise ValueError(f"checkpoint sizes {d['sizes']} disagree with arrays {net.sizes}")
    except (KeyError, TypeError, ValueError) as err:
        raise TrainingError(f"malformed checkpoint: {err}") from err
    return net


def save_checkpoint(net: NeuralFunction, path: str):
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(net), fh)


def load_checkpoint(path: str) -> NeuralFunction:
    with open(path) as fh:
        return net_from_checkpoint_dict(json.load(fh))
