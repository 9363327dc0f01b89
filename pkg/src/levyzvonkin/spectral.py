"""Fourier multipliers on a :class:`Box` and thin FFT wrappers.

Derivatives follow the numpy convention ``f(x) = sum_k fhat_k e^{i u_k x} / n``,
so ``d/dx_j`` is multiplication by ``i u_j``.  For odd derivative orders along
an axis the Nyquist mode is dropped: it has no consistent real derivative.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .grid import Box

_WORKERS = None


def set_workers(n: int | None):
    """Thread count handed to ``scipy.fft`` (``None`` = library default)."""
    global _WORKERS
    _WORKERS = n


def fft(a: np.ndarray, d: int) -> np.ndarray:
    """Forward transform over the trailing ``d`` axes."""
    return sfft.fftn(a, axes=tuple(range(-d, 0)), workers=_WORKERS)


def ifft_real(a: np.ndarray, d: int) -> np.ndarray:
    return np.real(sfft.ifftn(a, axes=tuple(range(-d, 0)), workers=_WORKERS))


def _axis_factor(box: Box, power: int) -> np.ndarray:
    k = box.wavenumbers.copy()
    if power % 2:
        k[box.n // 2] = 0.0
    return (1j * k) ** power


def multiplier(box: Box, orders) -> np.ndarray:
    """Multiplier of ``prod_j d^{orders[j]}/dx_j^{orders[j]}`` on the grid."""
    orders = tuple(int(o) for o in orders)
    if len(orders) != box.d:
        raise ValueError("one derivative order per axis required")
    if box.d == 1:
        return _axis_factor(box, orders[0])
    return _axis_factor(box, orders[0])[:, None] * _axis_factor(box, orders[1])[None, :]


def gradient_multipliers(box: Box) -> list:
    return [multiplier(box, tuple(int(i == j) for i in range(box.d))) for j in range(box.d)]


def hessian_multipliers(box: Box) -> list:
    """Nested list ``[j][k]`` of second-derivative multipliers."""
    out = []
    for j in range(box.d):
        row = []
        for k in range(box.d):
            o = [0] * box.d
            o[j] += 1
            o[k] += 1
            row.append(multiplier(box, o))
        out.append(row)
    return out


def derivatives_from_hat(box: Box, fhat: np.ndarray, order: int) -> np.ndarray:
    """Real-space gradient (``order=1``, trailing axis d) or Hessian (trailing d, d).

    ``fhat`` may carry leading batch axes before the ``d`` spatial ones.
    """
    if order == 0:
        return ifft_real(fhat, box.d)
    if order == 1:
        comps = [ifft_real(fhat * m, box.d) for m in gradient_multipliers(box)]
        return np.stack(comps, axis=-1)
    if order == 2:
        hm = hessian_multipliers(box)
        rows = [np.stack([ifft_real(fhat * hm[j][k], box.d) for k in range(box.d)], axis=-1)
                for j in range(box.d)]
        return np.stack(rows, axis=-2)
    raise ValueError("order must be 0, 1 or 2")
