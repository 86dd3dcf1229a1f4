"""Shapley-value attribution of model predictions to input columns.

Each of the window's named feature columns is one player; masking a
player replaces its values with the background value across all
timesteps jointly. Exact enumeration covers up to 12 players; beyond
that the permutation-sampling estimator applies. By construction every
sampled permutation's marginals sum to f(x) - f(background), so the
sampling estimator satisfies the efficiency axiom exactly as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SizeError
from .tensor import RngState

EXACT_LIMIT = 12


def _as_window(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(1, -1) if x.ndim == 1 else x


def _expand_background(background, window_shape) -> np.ndarray:
    background = np.asarray(background, dtype=np.float64)
    if background.ndim == 1:
        return np.broadcast_to(background, window_shape).copy()
    if background.shape != window_shape:
        raise ParameterError(
            f"background shape {background.shape} does not match input {window_shape}"
        )
    return background.copy()


def _masked_eval(model, x, background, d):
    """Value function over column subsets, memoized by bitmask."""
    cache: dict[int, float] = {}

    def value(mask: int) -> float:
        if mask not in cache:
            mixed = background.copy()
            for j in range(d):
                if mask >> j & 1:
                    mixed[:, j] = x[:, j]
            cache[mask] = float(model(mixed))
        return cache[mask]

    return value


def shapley_exact(model, x, background) -> np.ndarray:
    """Exact Shapley values by coalition enumeration (d <= 12 columns)."""
    x = _as_window(x)
    d = x.shape[1]
    if d > EXACT_LIMIT:
        raise SizeError(
            f"{d} columns need 2^{d} evaluations; use shapley_sample instead"
        )
    background = _expand_background(background, x.shape)
    value = _masked_eval(model, x, background, d)
    fact = [math.factorial(i) for i in range(d + 1)]
    phi = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        for sub in range(1 << (d - 1)):
            mask = 0
            for bit, j in enumerate(others):
                if sub >> bit & 1:
                    mask |= 1 << j
            size = bin(mask).count("1")
            weight = fact[size] * fact[d - size - 1] / fact[d]
            phi[i] += weight * (value(mask | (1 << i)) - value(mask))
    return phi


def shapley_sample(model, x, background, n_perms: int, rng: RngState):
    """Permutation-sampling Shapley estimate; returns (values, std errors)."""
    if n_perms < 1:
        raise ParameterError(f"n_perms must be >= 1, got {n_perms}")
    x = _as_window(x)
    d = x.shape[1]
    background = _expand_background(background, x.shape)
    value = _masked_eval(model, x, background, d)
    marginals = np.zeros((n_perms, d))
    for p in range(n_perms):
        perm = rng.permutation(d)
        mask = 0
        prev = value(0)
        for j in perm:
            mask |= 1 << int(j)
            nxt = value(mask)
            marginals[p, j] = nxt - prev
            prev = nxt
    phi = marginals.mean(axis=0)
    if n_perms > 1:
        stderr = marginals.std(axis=0, ddof=1) / np.sqrt(n_perms)
    else:
        stderr = np.zeros(d)
    return phi, stderr


@dataclass
class AttributionReport:
    """Per-feature attribution aggregated over evaluated windows."""

    feature_names: list[str]
    per_sample: np.ndarray              # (n_samples, d)
    baseline_prediction: float          # model output on the background input
    predictions: np.ndarray             # (n_samples,) model outputs on the inputs
    stderr: np.ndarray | None = None    # (n_samples, d) for the sampling estimator
    method: str = "sampling"

    @property
    def mean_abs(self) -> np.ndarray:
        return np.abs(self.per_sample).mean(axis=0)

    def ranking(self) -> list[tuple[str, float]]:
        means = self.mean_abs
        order = np.argsort(-means, kind="stable")
        return [(self.feature_names[i], float(means[i])) for i in order]

    def efficiency_gaps(self) -> np.ndarray:
        """Per sample: sum(phi) - (f(x) - f(background)); ~0 when sound."""
        return self.per_sample.sum(axis=1) - (self.predictions - self.baseline_prediction)

    def to_dict(self) -> dict:
        return {
            "feature_names": self.feature_names,
            "method": self.method,
            "baseline_prediction": self.baseline_prediction,
            "mean_abs_shapley": self.mean_abs.tolist(),
            "per_sample": self.per_sample.tolist(),
            "predictions": self.predictions.tolist(),
            "stderr": self.stderr.tolist() if self.stderr is not None else None,
            "efficiency_gaps": self.efficiency_gaps().tolist(),
        }


def attribute(model, windows, background, feature_names, n_perms: int = 50,
              seed: int = 0, exact: bool = False) -> AttributionReport:
    """Shapley attributions for a stack of windows against one background."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    d = windows.shape[2]
    if len(feature_names) != d:
        raise ParameterError(
            f"{len(feature_names)} names for {d} columns"
        )
    rng = RngState(seed)
    values = np.zeros((windows.shape[0], d))
    errors = None if exact else np.zeros((windows.shape[0], d))
    preds = np.zeros(windows.shape[0])
    bg_full = _expand_background(background, windows.shape[1:])
    baseline = float(model(bg_full))
    for i in range(windows.shape[0]):
        preds[i] = float(model(windows[i]))
        if exact:
            values[i] = shapley_exact(model, windows[i], background)
        else:
            values[i], errors[i] = shapley_sample(
                model, windows[i], background, n_perms, rng.spawn(i)
            )
    return AttributionReport(
        feature_names=list(feature_names),
        per_sample=values,
        baseline_prediction=baseline,
        predictions=preds,
        stderr=errors,
        method="exact" if exact else "sampling",
    )


def write_attribution_csv(report: AttributionReport, path):
    """Two-column ranking (feature, mean |shapley|), most important first."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("feature,mean_abs_shapley\n")
        for name, score in report.ranking():
            fh.write(f"{name},{score!r}\n")
