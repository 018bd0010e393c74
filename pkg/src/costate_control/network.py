"""Feedforward network predicting an n-step costate trajectory from a state,
with its two training losses and a per-window training loop.

Losses:
  * prediction loss — mean squared error between the predicted and the
    solver-computed costate window;
  * continuity loss — each point of the window is integrated one time step
    forward through the optimality ODEs (using the *predicted* costates for
    the feedback input), and the mismatch against the next window entry is
    penalized. This ties predictions to the system dynamics.

Gradients are exact: standard backpropagation through the network, chained
with complex-step tangents of the one-step integrator with respect to the
predicted costates (machine-precision derivatives; requires the problem
callables to accept complex arrays, which the built-in problems do).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset
from .problems import OcpProblem, costate_rhs, dynamics_rhs, unconstrained_control
from .tpbvp import _pmp_rhs, _rk4

Array = np.ndarray

MODEL_FORMAT_VERSION = 1

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),  # derivative in terms of the activation value
    "relu": (lambda s: np.maximum(s, 0.0), lambda a: (a > 0.0).astype(float)),
}


class ModelFormatError(ValueError):
    """A model file could not be parsed or has the wrong version."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the per-window training loop."""

    n_epoch: int = 60
    learning_rate: float = 1e-3
    continuity_weight: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = False
    integrator: str = "rk4"  # or "euler", kept for sensitivity checks
    substeps: int = 1

    def __post_init__(self):
        if self.n_epoch < 0:
            raise ValueError("n_epoch must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.continuity_weight < 0:
            raise ValueError("continuity_weight must be >= 0")
        if self.integrator not in ("rk4", "euler"):
            raise ValueError("integrator must be 'rk4' or 'euler'")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


class CostateNet:
    """Fully connected network mapping a p-state to an (n, p) costate window.

    Hidden layers use the named activation; the output layer is affine. The
    input is scaled by ``input_scale`` before the first layer (the scale is
    part of the saved model, so it is invisible at the interface).
    """

    def __init__(
        self,
        state_dim: int,
        horizon: int,
        hidden: tuple[int, ...] = (64, 64),
        activation: str = "relu",
        input_scale: float = 0.2,
        seed: int = 0,
    ):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if horizon < 2:
            raise ValueError("horizon must be >= 2")
        self.state_dim = state_dim
        self.horizon = horizon
        self.activation = activation
        self.input_scale = float(input_scale)
        self.layer_sizes = [state_dim, *hidden, horizon * state_dim]
        rng = np.random.default_rng(seed)
        self.weights: list[Array] = []
        self.biases: list[Array] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))
        self.train_config_digest = ""

    # -- forward -----------------------------------------------------------

    def _forward_cached(self, x: Array) -> tuple[list[Array], Array]:
        """Returns (post-activation values per layer incl. input, output)."""
        act, _ = _ACTIVATIONS[self.activation]
        a = x * self.input_scale
        cache = [a]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            s = W @ a + b
            a = s if i == last else act(s)
            if i != last:
                cache.append(a)
        return cache, a

    def forward(self, x) -> Array:
        """Predict the (horizon, state_dim) costate window for one state."""
        x = np.asarray(x, dtype=float).reshape(self.state_dim)
        if not np.all(np.isfinite(x)):
            raise ValueError("input state must be finite")
        _, out = self._forward_cached(x)
        return out.reshape(self.horizon, self.state_dim)

    # -- backward ----------------------------------------------------------

    def backprop(self, x: Array, d_out: Array, cache: list[Array] | None = None) -> list[tuple[Array, Array]]:
        """Gradients of <d_out, forward(x)> w.r.t. each (W, b), output order.

        ``cache`` may reuse the activations of a previous _forward_cached call.
        """
        x = np.asarray(x, dtype=float).reshape(self.state_dim)
        _, dact = _ACTIVATIONS[self.activation]
        if cache is None:
            cache, _ = self._forward_cached(x)
        delta = np.asarray(d_out, dtype=float).reshape(-1)
        grads: list[tuple[Array, Array]] = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            grads[i] = (np.outer(delta, cache[i]), delta.copy())
            if i > 0:
                delta = (self.weights[i].T @ delta) * dact(cache[i])
        return grads

    # -- parameter plumbing --------------------------------------------------

    def parameters(self) -> list[Array]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def clone(self) -> "CostateNet":
        return copy.deepcopy(self)


# ---------------------------------------------------------------------------
# Losses


def loss_prediction(pred: Array, target: Array) -> float:
    """Mean of squared elementwise differences over the whole window."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def _one_step(problem: OcpProblem, z: Array, dt: float, substeps: int, scheme: str) -> Array:
    if scheme == "rk4":
        return _rk4(problem, z, dt, substeps)
    h = dt / substeps
    for _ in range(substeps):
        z = z + h * _pmp_rhs(problem, z)
    return z


def _continuity_terms(
    problem: OcpProblem,
    x_window: Array,
    lambda_pred: Array,
    delta: float,
    substeps: int = 1,
    scheme: str = "rk4",
    want_grad: bool = False,
) -> tuple[float, Array | None, bool]:
    """Continuity loss, optionally with dL/d(lambda_pred), plus divergence flag.

    The derivative of the one-step map with respect to each predicted costate
    component is obtained by complex-step differentiation, so value and exact
    tangent come out of a single batched complex integration per component.
    """
    x_window = np.asarray(x_window, dtype=float)
    lambda_pred = np.asarray(lambda_pred, dtype=float)
    if x_window.shape != lambda_pred.shape:
        raise ValueError(f"shape mismatch {x_window.shape} vs {lambda_pred.shape}")
    n, p = x_window.shape
    if n < 2:
        raise ValueError("continuity loss needs a window of length >= 2")
    xs, lams = x_window[:-1], lambda_pred[:-1]  # integration start points
    grad = np.zeros((n, p)) if want_grad else None
    step = 1e-100
    with np.errstate(all="ignore"):
        if want_grad:
            x_int = np.empty((n - 1, p))
            lam_int = np.empty((n - 1, p))
            jx = np.empty((n - 1, p, p))  # d x_int / d lambda_pred[:-1]
            jl = np.empty((n - 1, p, p))
            for j in range(p):
                lam_c = lams.astype(complex)
                lam_c[:, j] += 1j * step
                z = np.concatenate([xs.astype(complex), lam_c], axis=-1)
                z1 = _one_step(problem, z, delta, substeps, scheme)
                x_int, lam_int = z1[:, :p].real, z1[:, p:].real
                jx[:, :, j] = z1[:, :p].imag / step
                jl[:, :, j] = z1[:, p:].imag / step
        else:
            z = np.concatenate([xs, lams], axis=-1)
            z1 = _one_step(problem, z, delta, substeps, scheme)
            x_int, lam_int = z1[:, :p], z1[:, p:]
    if not (np.all(np.isfinite(x_int)) and np.all(np.isfinite(lam_int))):
        return 1e12, (np.zeros((n, p)) if want_grad else None), True
    r_x = x_window[1:] - x_int
    r_l = lambda_pred[1:] - lam_int
    loss = float((np.sum(r_x * r_x) + np.sum(r_l * r_l)) / (n - 1))
    if want_grad:
        if not (np.all(np.isfinite(jx)) and np.all(np.isfinite(jl))):
            return 1e12, np.zeros((n, p)), True
        scale = 2.0 / (n - 1)
        grad[:-1] = -scale * (
            np.einsum("mi,mij->mj", r_x, jx) + np.einsum("mi,mij->mj", r_l, jl)
        )
        grad[1:] += scale * r_l
    return loss, grad, False


def loss_continuity(
    problem: OcpProblem,
    x_window: Array,
    lambda_pred: Array,
    delta: float,
    substeps: int = 1,
    scheme: str = "rk4",
) -> float:
    """One-step integration mismatch of a predicted costate window.

    Divergent integrations yield a large finite penalty instead of raising,
    so a bad network iterate cannot crash training.
    """
    loss, _, _ = _continuity_terms(problem, x_window, lambda_pred, delta, substeps, scheme)
    return loss


# ---------------------------------------------------------------------------
# Gradients and training


class TrainingStepError(RuntimeError):
    """A gradient evaluation produced non-finite values."""


def gradients(
    model: CostateNet,
    problem: OcpProblem,
    x_window: Array,
    lambda_window: Array,
    config: TrainConfig,
) -> tuple[list[tuple[Array, Array]], float, float]:
    """Per-window gradients of prediction + w·continuity w.r.t. all parameters.

    Returns (grads per layer, prediction loss, continuity loss).
    """
    x_window = np.asarray(x_window, dtype=float)
    lambda_window = np.asarray(lambda_window, dtype=float)
    x_in = np.asarray(x_window[0], dtype=float).reshape(model.state_dim)
    cache, out = model._forward_cached(x_in)
    pred = out.reshape(model.horizon, model.state_dim)
    n, p = pred.shape
    l_pred = loss_prediction(pred, lambda_window)
    d_pred = 2.0 * (pred - lambda_window) / (n * p)
    if config.continuity_weight > 0.0:
        l_cont, d_cont, _ = _continuity_terms(
            problem, x_window, pred, problem.delta, config.substeps, config.integrator, want_grad=True
        )
        d_out = d_pred + config.continuity_weight * d_cont
    else:
        l_cont, _, _ = _continuity_terms(problem, x_window, pred, problem.delta, config.substeps, config.integrator)
        d_out = d_pred
    grads = model.backprop(x_in, d_out, cache=cache)
    for dW, db in grads:
        if not (np.all(np.isfinite(dW)) and np.all(np.isfinite(db))):
            raise TrainingStepError("non-finite gradients")
    return grads, l_pred, l_cont


class _Adam:
    def __init__(self, params: list[Array], config: TrainConfig):
        self.config = config
        self.m = [np.zeros_like(q) for q in params]
        self.v = [np.zeros_like(q) for q in params]
        self.t = 0

    def step(self, params: list[Array], grads: list[Array]) -> None:
        c = self.config
        self.t += 1
        for i, (q, g) in enumerate(zip(params, grads)):
            self.m[i] = c.beta1 * self.m[i] + (1 - c.beta1) * g
            self.v[i] = c.beta2 * self.v[i] + (1 - c.beta2) * g * g
            m_hat = self.m[i] / (1 - c.beta1 ** self.t)
            v_hat = self.v[i] / (1 - c.beta2 ** self.t)
            q -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


def train(
    model: CostateNet,
    dataset: Dataset,
    problem: OcpProblem,
    config: TrainConfig,
) -> tuple[CostateNet, list[dict]]:
    """Per-window training exactly in dataset order (unless shuffled).

    One optimizer update per window; epochs x trajectories x windows. On a
    non-finite loss or gradient the last end-of-epoch checkpoint is returned.
    The log holds one record per epoch with mean losses.
    """
    n = model.horizon
    N = dataset.n_steps
    if not n < N:
        raise ValueError(f"model horizon {n} must be < trajectory length {N}")
    samples = []  # (x_window, lambda_window) in dataset order
    for entry in dataset.entries:
        for k in range(N - n):
            samples.append((entry.x_traj[k : k + n], entry.lambda_traj[k : k + n]))
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = _Adam(params, config)
    checkpoint = model.clone()
    log: list[dict] = []
    for epoch in range(config.n_epoch):
        order = rng.permutation(len(samples)) if config.shuffle else range(len(samples))
        sum_pred = 0.0
        sum_cont = 0.0
        for idx in order:
            xw, lw = samples[idx]
            try:
                grads, l_pred, l_cont = gradients(model, problem, xw, lw, config)
            except TrainingStepError:
                return checkpoint, log
            if not np.isfinite(l_pred):
                return checkpoint, log
            flat = [g for pair in grads for g in pair]
            opt.step(params, flat)
            sum_pred += l_pred
            sum_cont += l_cont
        log.append(
            {
                "epoch": epoch,
                "prediction_loss": sum_pred / len(samples),
                "continuity_loss": sum_cont / len(samples),
            }
        )
        checkpoint = model.clone()
    model.train_config_digest = config.digest()
    return model, log


# ---------------------------------------------------------------------------
# Persistence


def save_model(model: CostateNet, path) -> None:
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "state_dim": model.state_dim,
        "horizon": model.horizon,
        "layer_sizes": model.layer_sizes,
        "activation": model.activation,
        "input_scale": model.input_scale,
        "train_config_digest": model.train_config_digest,
        "weights": [W.tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_model(path) -> CostateNet:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a valid model file: {exc}") from None
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported model format version {payload.get('format_version')!r}"
        )
    hidden = tuple(payload["layer_sizes"][1:-1])
    model = CostateNet(
        state_dim=payload["state_dim"],
        horizon=payload["horizon"],
        hidden=hidden,
        activation=payload["activation"],
        input_scale=payload["input_scale"],
    )
    model.weights = [np.asarray(W, dtype=float) for W in payload["weights"]]
    model.biases = [np.asarray(b, dtype=float) for b in payload["biases"]]
    model.train_config_digest = payload.get("train_config_digest", "")
    for W, b, (fi, fo) in zip(model.weights, model.biases, zip(model.layer_sizes[:-1], model.layer_sizes[1:])):
        if W.shape != (fo, fi) or b.shape != (fo,):
            raise ModelFormatError(f"{path}: parameter shapes inconsistent with layer_sizes")
    return model
