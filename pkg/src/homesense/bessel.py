"""Bessel functions of the first kind, orders 0 and 1.

Rational approximations after the Cephes library (S. L. Moshier): a
polynomial ratio on ``|x| <= 5`` and the Hankel asymptotic expansion beyond.
Absolute error is below 1e-15 on ``|x| <= 50``.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

_SQ2OPI = 7.9788456080286535587989e-1  # sqrt(2/pi)
_PIO4 = 7.85398163397448309616e-1
_THPIO4 = 2.35619449019234492885  # 3*pi/4

# J0 zeros squared, used to factor the small-argument approximation
_J0_DR1 = 5.78318596294678452118e0
_J0_DR2 = 3.04712623436620863991e1

_J0_RP = (
    -4.79443220978201773821e9,
    1.95617491946556577543e12,
    -2.49248344360967716204e14,
    9.70862251047306323952e15,
)
_J0_RQ = (
    4.99563147152651017219e2,
    1.73785401676374683123e5,
    4.84409658339962045305e7,
    1.11855537045356834862e10,
    2.11277520115489217587e12,
    3.10518229857422583814e14,
    3.18121955943204943306e16,
    1.71086294081043136091e18,
)
_J0_PP = (
    7.96936729297347051624e-4,
    8.28352392107440799803e-2,
    1.23953371646414299388e0,
    5.44725003058768775090e0,
    8.74716500199817011941e0,
    5.30324038235394892183e0,
    9.99999999999999997821e-1,
)
_J0_PQ = (
    9.24408810558863637013e-4,
    8.56288474354474431428e-2,
    1.25352743901058953537e0,
    5.47097740330417105182e0,
    8.76190883237069594232e0,
    5.30605288235394617618e0,
    1.00000000000000000218e0,
)
_J0_QP = (
    -1.13663838898469149931e-2,
    -1.28252718670509318512e0,
    -1.95539544257735972385e1,
    -9.32060152123768231369e1,
    -1.77681167980488050595e2,
    -1.47077505154951170175e2,
    -5.14105326766599330220e1,
    -6.05014350600728481186e0,
)
_J0_QQ = (
    6.43178256118178023184e1,
    8.56430025976980587198e2,
    3.88240183605401609683e3,
    7.24046774195652478189e3,
    5.93072701187316984827e3,
    2.06209331660327847417e3,
    2.42005740240291393179e2,
)

_J1_Z1 = 1.46819706421238932572e1
_J1_Z2 = 4.92184563216946036703e1

_J1_RP = (
    -8.99971225705559398224e8,
    4.52228297998194034323e11,
    -7.27494245221818276015e13,
    3.68295732863852883286e15,
)
_J1_RQ = (
    6.20836478118054335476e2,
    2.56987256757748830383e5,
    8.35146791431949253037e7,
    2.21511595479792499675e10,
    4.74914122079991414898e12,
    7.84369607876235854894e14,
    8.95222336184627338078e16,
    5.32278620332680085395e18,
)
_J1_PP = (
    7.62125616208173112003e-4,
    7.31397056940917570436e-2,
    1.12719608129684925192e0,
    5.11207951146807644818e0,
    8.42404590141772420927e0,
    5.21451598682361504063e0,
    1.00000000000000000254e0,
)
_J1_PQ = (
    5.71323128072548699714e-4,
    6.88455908754495404082e-2,
    1.10514232634061696926e0,
    5.07386386128601488557e0,
    8.39985554327604159757e0,
    5.20982848682361821619e0,
    9.99999999999999997461e-1,
)
_J1_QP = (
    5.10862594750176621635e-2,
    4.98213872951233449420e0,
    7.58238284132545283818e1,
    3.66779609360150777800e2,
    7.10856304998926107277e2,
    5.97489612400613639965e2,
    2.11688757100572135698e2,
    2.52070205858023719784e1,
)
_J1_QQ = (
    7.42373277035675149943e1,
    1.05644886038262816351e3,
    4.98641058337653607651e3,
    9.56231892404756170795e3,
    7.99704160447350683650e3,
    2.82619278517639096600e3,
    3.36093607810698293419e2,
)


def _polevl(x, coef):
    ans = np.full_like(x, coef[0])
    for c in coef[1:]:
        ans = ans * x + c
    return ans


def _p1evl(x, coef):
    # leading coefficient is an implicit 1
    ans = x + coef[0]
    for c in coef[1:]:
        ans = ans * x + c
    return ans


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind.

    Parameters
    ----------
    x : float or array_like
        Finite argument(s).

    Returns
    -------
    float or numpy.ndarray
        ``J0(x)`` with the same shape as ``x``.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("bessel_j0 requires finite arguments")
    xa = np.abs(x).ravel()
    out = np.empty_like(xa)

    small = xa <= 5.0
    if np.any(small):
        z = xa[small] * xa[small]
        p = (z - _J0_DR1) * (z - _J0_DR2)
        out[small] = p * _polevl(z, _J0_RP) / _p1evl(z, _J0_RQ)

    big = ~small
    if np.any(big):
        xb = xa[big]
        w = 5.0 / xb
        q = 25.0 / (xb * xb)
        p = _polevl(q, _J0_PP) / _polevl(q, _J0_PQ)
        q = _polevl(q, _J0_QP) / _p1evl(q, _J0_QQ)
        xn = xb - _PIO4
        p = p * np.cos(xn) - w * q * np.sin(xn)
        out[big] = p * _SQ2OPI / np.sqrt(xb)

    return out.reshape(x.shape) if x.ndim else float(out[0])


def bessel_j1(x):
    """First-order Bessel function of the first kind (odd in ``x``)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("bessel_j1 requires finite arguments")
    xs = x.ravel()
    xa = np.abs(xs)
    out = np.empty_like(xa)

    small = xa <= 5.0
    if np.any(small):
        xm = xa[small]
        z = xm * xm
        w = _polevl(z, _J1_RP) / _p1evl(z, _J1_RQ)
        out[small] = w * xm * (z - _J1_Z1) * (z - _J1_Z2)

    big = ~small
    if np.any(big):
        xb = xa[big]
        w = 5.0 / xb
        z = w * w
        p = _polevl(z, _J1_PP) / _polevl(z, _J1_PQ)
        q = _polevl(z, _J1_QP) / _p1evl(z, _J1_QQ)
        xn = xb - _THPIO4
        p = p * np.cos(xn) - w * q * np.sin(xn)
        out[big] = p * _SQ2OPI / np.sqrt(xb)

    out = np.where(xs < 0, -out, out)
    return out.reshape(x.shape) if x.ndim else float(out[0])


def first_differential_peak() -> float:
    """Abscissa of the first local maximum of ``dJ0/dx = -J1(x)``.

    This is where ``J1`` reaches its first minimum, i.e. the root of
    ``J1'(x) = J0(x) - J1(x)/x`` bracketed in (4, 6).
    """
    return brentq(lambda x: bessel_j0(x) - bessel_j1(x) / x, 4.0, 6.0, xtol=1e-14)
