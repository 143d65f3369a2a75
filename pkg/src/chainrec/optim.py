"""Adam updates and the finite-difference gradient oracle."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import ParamStore, Tape, backward


class AdamState:
    """First/second moments plus an update counter, one set per parameter."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> None:
    """Apply one bias-corrected Adam update to every parameter named in
    ``grads`` (in place)."""
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{p.data.shape} for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
            state.t[name] = 0
        state.t[name] += 1
        t = state.t[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def finite_diff_check(f: Callable, params: ParamStore, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference
    gradients of ``f`` over every coordinate of ``params``.

    ``f(params, tape)`` must return a scalar Tensor and be deterministic;
    it is re-evaluated with tape=None for the perturbed passes. Relative
    error uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    tape = Tape()
    loss = f(params, tape)
    if not np.isfinite(loss.data):
        raise ValueError("f returned a non-finite value")
    analytic = backward(tape, loss, params)
    worst = 0.0
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        gflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f(params, None).data)
            flat[i] = orig - eps
            f_minus = float(f(params, None).data)
            flat[i] = orig
            if not np.isfinite(f_plus) or not np.isfinite(f_minus):
                raise ValueError("f returned a non-finite value under perturbation")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
