"""Independent oracles shared by the test modules.

Everything here deliberately avoids the library's computational paths:
finite differences for gradients, plain-loop softmax attention, explicit
running products, and direct per-window image statistics.
"""

import math

import numpy as np


def activate_model(model, seed: int = 0, gate: float = 0.5) -> None:
    """Open the conditioning gates and randomise the zero-initialised heads
    so identity/difference tests exercise a generic network."""
    rng = np.random.default_rng(seed)
    for name, p in model.store.items():
        if name.endswith(".gate"):
            p.data = np.array(gate)
        elif name.endswith("conv_out.w") or name.endswith("skip_head.w"):
            p.data = rng.standard_normal(p.data.shape) * 0.3


def finite_difference_gradients(loss_fn, params: dict, step: float = 1e-4) -> dict:
    """Central-difference gradient of loss_fn() for every array in params."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p.data[idx]
            p.data[idx] = orig + step
            f_plus = loss_fn()
            p.data[idx] = orig - step
            f_minus = loss_fn()
            p.data[idx] = orig
            g[idx] = (f_plus - f_minus) / (2.0 * step)
            it.iternext()
        grads[name] = g
    return grads


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def scalar_cross_attention(query, keys, values, scale) -> np.ndarray:
    """Single-head attention for one query via explicit loops."""
    logits = [scale * sum(q * k for q, k in zip(query, key)) for key in keys]
    m = max(logits)
    exps = [math.exp(l - m) for l in logits]
    total = sum(exps)
    weights = [e / total for e in exps]
    out = np.zeros(len(values[0]))
    for w_i, v in zip(weights, values):
        out += w_i * np.asarray(v, dtype=np.float64)
    return out


def brute_force_psnr(ref, test) -> float:
    """Per-pixel loop PSNR on the BT.601 luma channel."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    total = 0.0
    h, w = ref.shape[:2]
    for i in range(h):
        for j in range(w):
            yr = 0.299 * ref[i, j, 0] + 0.587 * ref[i, j, 1] + 0.114 * ref[i, j, 2]
            yt = 0.299 * test[i, j, 0] + 0.587 * test[i, j, 1] + 0.114 * test[i, j, 2]
            total += (yr - yt) ** 2
    mse = total / (h * w)
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(255.0 ** 2 / mse)


def brute_force_ssim(ref, test, window: int = 8) -> float:
    """Window-by-window SSIM with direct statistics on luma."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    yr = 0.299 * ref[..., 0] + 0.587 * ref[..., 1] + 0.114 * ref[..., 2]
    yt = 0.299 * test[..., 0] + 0.587 * test[..., 1] + 0.114 * test[..., 2]
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    h, w = yr.shape
    vals = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            a = yr[i:i + window, j:j + window]
            b = yt[i:i + window, j:j + window]
            mu_a, mu_b = a.mean(), b.mean()
            var_a = ((a - mu_a) ** 2).mean()
            var_b = ((b - mu_b) ** 2).mean()
            cov = ((a - mu_a) * (b - mu_b)).mean()
            num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
            den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
            vals.append(num / den)
    return float(np.mean(vals))
