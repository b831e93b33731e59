"""Convergence diagnostics for multi-chain MCMC output."""
from __future__ import annotations

import numpy as np


def split_rhat(chains: np.ndarray) -> float:
    """Split potential scale reduction for a (chains, draws) array.

    Each chain is cut in half so within-chain drift also inflates the value.
    Returns 1.0 for a parameter that is constant across all draws.
    """
    x = np.asarray(chains, float)
    if x.ndim == 1:
        x = x[None, :]
    half = x.shape[1] // 2
    if half < 2:
        return float("nan")
    parts = np.concatenate([x[:, :half], x[:, -half:]], axis=0)
    m, n = parts.shape
    means = parts.mean(axis=1)
    w = parts.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else float("inf")
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    f = np.fft.rfft(x - x.mean(), 2 * n)
    ac = np.fft.irfft(f * np.conj(f))[:n]
    return ac / n


def ess(chains: np.ndarray) -> float:
    """Effective sample size with Geyer's initial monotone sequence."""
    x = np.asarray(chains, float)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    if n < 4:
        return float(m * n)
    acov = np.array([_autocov(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    if w == 0:
        return float(m * n)
    var_plus = (n - 1) / n * w + (x.mean(axis=1).var(ddof=1) if m > 1 else 0.0)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum paired autocorrelations while positive, enforcing monotone decrease
    total = 0.0
    prev = np.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
    tau = max(2.0 * total - 1.0, 1.0 / np.log10(max(m * n, 10)))
    return float(m * n / tau)


def summarize(params: dict, chain: np.ndarray) -> dict:
    """R-hat and ESS for every scalar component of each parameter.

    ``params`` maps names to (draws, ...) arrays; ``chain`` gives each
    draw's chain index.
    """
    labels = np.unique(chain)
    out = {}
    for name, arr in params.items():
        arr = np.asarray(arr, float).reshape(len(chain), -1)
        for j in range(arr.shape[1]):
            key = name if arr.shape[1] == 1 else f"{name}[{j}]"
            split = np.array([arr[chain == c, j] for c in labels])
            out[key] = {"rhat": split_rhat(split), "ess": ess(split)}
    return out


def max_rhat(diag: dict) -> float:
    vals = [d["rhat"] for d in diag.values() if np.isfinite(d["rhat"])]
    return max(vals) if vals else float("nan")
