"""Mini-batch SGD with full and partial learning modes.

Full mode descends tau, sigma, and the analysis weights freely (with a
positivity clamp on the step sizes).  Partial mode descends only tau and the
weights, then re-saturates sigma = (1/tau - ||A||^2 / 2) / ||L||^2 from the
freshly measured operator norm, so the primal-dual convergence condition
holds with margin zero after every update.

Batches are drawn by seeded shuffling each epoch; identical seed and config
reproduce the history and the final model byte for byte.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .backprop import Gradients, backward
from .data import psnr, ssim
from .network import NetworkParams, forward
from .pdhg import constraint_distance, saturating_sigma
from .rng import Stream, derive

_POSITIVITY_FLOOR = 1e-8


class NonFiniteGradientError(RuntimeError):
    """A gradient came back NaN/inf; the step was rejected."""


class TrainingDivergedError(RuntimeError):
    """Loss stayed above 10x its initial value for 100 consecutive iterations."""

    def __init__(self, message: str, iteration: int, last_loss: float,
                 initial_loss: float):
        super().__init__(message)
        self.iteration = iteration
        self.last_loss = last_loss
        self.initial_loss = initial_loss


@dataclass
class TrainConfig:
    gamma: float
    batch_size: int
    max_iter: int
    mode: str = "full"
    seed: int = 0
    val_cadence: int = 100
    lr_decay_every: int | None = None
    lr_decay_factor: float = 0.5
    norm_tol: float = 1e-9

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("learning rate gamma must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.mode not in ("full", "partial"):
            raise ValueError(f"mode must be 'full' or 'partial', got {self.mode!r}")
        if self.val_cadence < 1:
            raise ValueError("val_cadence must be >= 1")


@dataclass
class History:
    """Per-iteration training losses plus cadenced validation records."""

    losses: np.ndarray
    records: list  # dicts: iter, loss, val_psnr, val_ssim, dc (list per layer)
    depth: int

    def to_csv(self, path: str) -> None:
        cols = ["iter", "loss", "val_psnr", "val_ssim"]
        cols += [f"dc_layer_{k + 1}" for k in range(self.depth)]
        lines = [",".join(cols)]
        for r in self.records:
            row = [str(r["iter"]), repr(r["loss"]), repr(r["val_psnr"]),
                   repr(r["val_ssim"])]
            row += [repr(v) for v in r["dc"]]
            lines.append(",".join(row))
        with open(path, "w", encoding="ascii") as f:
            f.write("\n".join(lines) + "\n")

    def moving_average(self, at_iter: int, window: int = 100) -> float:
        lo = max(0, at_iter - window + 1)
        return float(np.mean(self.losses[lo:at_iter + 1]))


@dataclass
class TrainResult:
    final_params: NetworkParams
    best_params: NetworkParams
    best_iter: int
    best_psnr: float
    history: History
    seconds: float = 0.0


def sgd_step(params: NetworkParams, grads: Gradients, gamma: float,
             mode: str, norm_tol: float = 1e-9) -> None:
    """One in-place gradient step; rejects non-finite gradients."""
    if not grads.all_finite():
        raise NonFiniteGradientError(
            "non-finite gradient encountered; step rejected"
        )
    norm_a = params.degradation.cached_norm
    for k, lp in enumerate(params.layers):
        lp.tau = max(lp.tau - gamma * grads.d_tau[k], _POSITIVITY_FLOOR)
        if mode == "full":
            lp.sigma = max(lp.sigma - gamma * grads.d_sigma[k], _POSITIVITY_FLOOR)
        lp.analysis.update_weights(grads.d_weights[k], -gamma)
        if mode == "partial":
            norm_l = lp.analysis.norm(tol=norm_tol)
            if norm_l == 0.0:
                raise NonFiniteGradientError("||L|| collapsed to zero in partial mode")
            if (1.0 / lp.tau - norm_a**2 / 2.0) / norm_l**2 < _POSITIVITY_FLOOR:
                # keep sigma positive and the margin zero
                lp.tau = 1.0 / (norm_a**2 / 2.0 + _POSITIVITY_FLOOR * norm_l**2)
            lp.sigma = saturating_sigma(lp.tau, norm_a, norm_l)


def _validation_scores(params: NetworkParams, clean: np.ndarray,
                       degraded: np.ndarray, side: int) -> tuple[float, float]:
    out, _ = forward(params, degraded)
    ps = [psnr(out[i], clean[i]) for i in range(clean.shape[0])]
    ss = [ssim(out[i], clean[i], side=side) for i in range(clean.shape[0])]
    return float(np.mean(ps)), float(np.mean(ss))


def train(params: NetworkParams, train_clean: np.ndarray, train_degraded: np.ndarray,
          val_clean: np.ndarray, val_degraded: np.ndarray, config: TrainConfig,
          side: int | None = None) -> TrainResult:
    """Run mini-batch SGD and track the best-validation-PSNR checkpoint.

    ``params`` is trained in place (and also returned as ``final_params``).
    Aborts with :class:`TrainingDivergedError` when the loss exceeds 10x its
    initial value for 100 consecutive iterations.
    """
    if config.mode != params.mode:
        raise ValueError(
            f"config mode {config.mode!r} != network mode {params.mode!r}"
        )
    n_train = train_clean.shape[0]
    if n_train == 0 or val_clean.shape[0] == 0:
        raise ValueError("train and validation splits must be nonempty")
    if side is None:
        side = int(round(np.sqrt(params.image_dim)))
    t0 = time.monotonic()
    shuffler = Stream(derive(config.seed, 0xBA7C4))
    order = shuffler.permutation(n_train)
    cursor = 0
    losses = np.zeros(config.max_iter)
    records: list[dict] = []
    gamma = config.gamma
    best_psnr = -np.inf
    best_params = params.clone()
    best_iter = 0
    diverged_streak = 0

    def record(it: int, batch_loss: float):
        nonlocal best_psnr, best_params, best_iter
        vp, vs = _validation_scores(params, val_clean, val_degraded, side)
        dc = [constraint_distance(lp.tau, lp.sigma, params.degradation.cached_norm,
                                  lp.analysis.norm(tol=config.norm_tol))
              for lp in params.layers]
        records.append({"iter": it, "loss": batch_loss, "val_psnr": vp,
                        "val_ssim": vs, "dc": dc})
        if vp > best_psnr:
            best_psnr = vp
            best_params = params.clone()
            best_iter = it

    for it in range(config.max_iter):
        if cursor >= n_train:
            order = shuffler.permutation(n_train)
            cursor = 0
        idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        xb = train_clean[idx]
        zb = train_degraded[idx]

        out, trace = forward(params, zb, keep_trace=True)
        diff = out - xb
        batch_loss = float(np.vdot(diff, diff)) / xb.shape[0]
        losses[it] = batch_loss

        if it % config.val_cadence == 0:
            record(it, batch_loss)

        if batch_loss > 10.0 * losses[0]:
            diverged_streak += 1
            if diverged_streak >= 100:
                raise TrainingDivergedError(
                    f"loss {batch_loss:.4e} stayed above 10x the initial "
                    f"{losses[0]:.4e} for 100 consecutive iterations "
                    f"(aborted at iteration {it})",
                    iteration=it, last_loss=batch_loss, initial_loss=float(losses[0]),
                )
        else:
            diverged_streak = 0

        grads = backward(params, xb, trace)
        sgd_step(params, grads, gamma, config.mode, norm_tol=config.norm_tol)

        if config.lr_decay_every and (it + 1) % config.lr_decay_every == 0:
            gamma *= config.lr_decay_factor

    record(config.max_iter, float(losses[-1]))
    history = History(losses=losses, records=records, depth=params.depth)
    return TrainResult(final_params=params, best_params=best_params,
                       best_iter=best_iter, best_psnr=best_psnr, history=history,
                       seconds=time.monotonic() - t0)
