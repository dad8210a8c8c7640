"""Pure-NumPy L^2 Monte-Carlo feature map (reference for the compiled core).

For a point ``z`` of the Poincare disk and a boundary direction ``b``,
the hyperbolic outer product is ``h = 0.5 log((1 - |z|^2) / |z - b|^2)``
and the unit-amplitude feature is ``exp((2 s i + 1) h)``. Only the real
and imaginary parts are returned; frequency-dependent amplitudes are
applied by the caller.
"""

import numpy as np


def _outer(z, b):
    one_m = 1.0 - (z * z).sum(1)
    diff = z[:, None, :] - b[None, :, :]
    dd = (diff * diff).sum(-1)
    return 0.5 * np.log(one_m[:, None] / dd), one_m, diff, dd


def features(z, b, s):
    h, *_ = _outer(z, b)
    eh = np.exp(h)
    th = 2.0 * s[None, :] * h
    return eh * np.cos(th), eh * np.sin(th)


def features_vjp(z, b, s, g_re, g_im):
    """Pull back cotangents of (re, im) to ``z`` (N, 2) and ``s`` (L,)."""
    h, one_m, diff, dd = _outer(z, b)
    eh = np.exp(h)
    th = 2.0 * s[None, :] * h
    c, sn = np.cos(th), np.sin(th)
    gh = g_re * eh * (c - 2.0 * s * sn) + g_im * eh * (sn + 2.0 * s * c)
    dh_dz = -z[:, None, :] / one_m[:, None, None] - diff / dd[..., None]
    gz = (gh[..., None] * dh_dz).sum(1)
    gs = (2.0 * h * eh * (g_im * c - g_re * sn)).sum(0)
    return gz, gs
