"""Diffusion coefficients and drifts.

All callables are vectorised over leading axes: a point set of shape
``(..., d)`` maps to ``(..., d)`` for a drift, ``(..., d, d)`` for ``sigma`` and
``(..., d, d, d)`` for ``dsigma`` with ``dsigma[..., j, a, l] = d sigma^{ja} / d x^l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class VectorField:
    """Diffusion coefficient sigma with its derivatives and ellipticity data."""

    sigma: Callable[[Array], Array]
    dsigma: Callable[[Array], Array]
    lam: float
    d2sigma: Optional[Callable[[Array], Array]] = None
    sup_sigma: Optional[float] = None
    sup_dsigma: Optional[float] = None
    sup_d2sigma: Optional[float] = None
    name: str = "sigma"
    potential: Optional[Callable[[Array], Array]] = None

    def __post_init__(self):
        # lam = 0 marks a field with no ellipticity claim (e.g. sigma(x) = x).
        if not self.lam >= 0:
            raise ValueError(f"ellipticity constant must be non-negative, got {self.lam}")
        for k in ("sup_sigma", "sup_dsigma", "sup_d2sigma"):
            v = getattr(self, k)
            if v is not None and not np.isfinite(v):
                raise ValueError(f"{k} must be finite")

    @classmethod
    def from_scalar(cls, s, ds, d2s=None, lam=1.0, **kw) -> "VectorField":
        """Wrap scalar ``s, s', s''`` (acting elementwise) as a d=1 field."""
        return cls(
            sigma=lambda x: s(x[..., 0])[..., None, None],
            dsigma=lambda x: ds(x[..., 0])[..., None, None, None],
            d2sigma=None if d2s is None else (lambda x: d2s(x[..., 0])[..., None, None, None, None]),
            lam=lam,
            **kw,
        )

    def sigma_inv(self, x: Array) -> Array:
        return np.linalg.inv(self.sigma(x))

    def dsigma_sigma(self, x: Array) -> Array:
        """``(D sigma . sigma)[..., j, a, b] = sum_l d_l sigma^{ja} sigma^{lb}``."""
        return np.einsum("...jal,...lb->...jab", self.dsigma(x), self.sigma(x))

    def ito_correction(self, x: Array) -> Array:
        """``(1/2) sum_a (D sigma . sigma)[..., j, a, a]``, the Itô-to-Stratonovich drift shift."""
        return 0.5 * np.trace(self.dsigma_sigma(x), axis1=-2, axis2=-1)


@dataclass(frozen=True)
class Drift:
    """Drift ``f`` with its Hölder data. ``antiderivative`` and ``df`` are d=1 extras."""

    f: Callable[[Array], Array]
    theta: float = 1.0
    holder_const: Optional[float] = None
    sup: Optional[float] = None
    antiderivative: Optional[Callable[[Array], Array]] = None
    df: Optional[Callable[[Array], Array]] = None
    name: str = "f"
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.f(x)

    @classmethod
    def from_scalar(cls, fn, F=None, df=None, **kw) -> "Drift":
        return cls(
            f=lambda x: fn(x[..., 0])[..., None],
            antiderivative=F,
            df=df,
            **kw,
        )

    def scalar(self, x):
        """Evaluate a d=1 drift on a plain array of points."""
        x = np.asarray(x, dtype=float)
        return self.f(x[..., None])[..., 0]

    def minus(self, other: Callable[[Array], Array], name: str | None = None) -> "Drift":
        return Drift(f=lambda x: self.f(x) - other(x), theta=self.theta, name=name or f"{self.name}-shift")


# ---------------------------------------------------------------------------
# named families used by configs and the acceptance manifest


def _zero_drift():
    return Drift(
        f=lambda x: np.zeros_like(x),
        theta=1.0, holder_const=0.0, sup=0.0,
        antiderivative=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        df=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        name="zero",
    )


def _constant_drift(c: float = 1.0):
    return Drift(
        f=lambda x: np.full_like(x, c),
        theta=1.0, holder_const=0.0, sup=abs(c),
        antiderivative=lambda x: c * np.asarray(x, dtype=float),
        df=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        name="constant", params={"c": c},
    )


def _cos_drift(a: float = 1.0):
    return Drift(
        f=lambda x: a * np.cos(x),
        theta=1.0, holder_const=abs(a), sup=abs(a),
        antiderivative=lambda x: a * np.sin(x),
        df=lambda x: -a * np.sin(x),
        name="cos", params={"a": a},
    )


def _linear_drift(a: float = 1.0):
    return Drift(
        f=lambda x: a * x,
        theta=1.0, holder_const=abs(a),
        antiderivative=lambda x: 0.5 * a * np.asarray(x, dtype=float) ** 2,
        df=lambda x: np.full_like(np.asarray(x, dtype=float), a),
        name="linear", params={"a": a},
    )


def _bump_drift(a: float = 0.1, width: float = 1.0):
    """Gaussian bump ``a exp(-(x/w)^2)``; its antiderivative uses erf."""
    from scipy.special import erf

    return Drift(
        f=lambda x: a * np.exp(-((x / width) ** 2)),
        theta=1.0, holder_const=abs(a) * np.sqrt(2 / np.e) / width, sup=abs(a),
        antiderivative=lambda x: a * width * np.sqrt(np.pi) / 2 * erf(np.asarray(x) / width),
        df=lambda x: -2 * a * x / width**2 * np.exp(-((x / width) ** 2)),
        name="bump", params={"a": a, "width": width},
    )


def _holder_bump_drift(a: float = 1.0, theta: float = 0.5, width: float = 1.0):
    """Compactly supported ``a (1 - (x/w)^2)_+^theta``: theta-Hölder, not Lipschitz."""
    return Drift(
        f=lambda x: a * np.clip(1 - (x / width) ** 2, 0, None) ** theta,
        theta=theta, sup=abs(a),
        name="holder_bump", params={"a": a, "theta": theta, "width": width},
    )


def _power_drift(c: float = 1.0, theta: float = 0.5):
    """``c |x|^theta``: the classical non-uniqueness example without noise."""
    return Drift(
        f=lambda x: c * np.abs(x) ** theta,
        theta=theta, holder_const=abs(c),
        antiderivative=lambda x: c * np.sign(x) * np.abs(x) ** (1 + theta) / (1 + theta),
        name="power", params={"c": c, "theta": theta},
    )


def _identity_sigma(dim: int = 1):
    eye = np.eye(int(dim))
    return VectorField(
        sigma=lambda x: np.broadcast_to(eye, x.shape[:-1] + eye.shape).copy(),
        dsigma=lambda x: np.zeros(x.shape[:-1] + (x.shape[-1],) * 3),
        d2sigma=lambda x: np.zeros(x.shape[:-1] + (x.shape[-1],) * 4),
        lam=1.0, sup_sigma=1.0, sup_dsigma=0.0, sup_d2sigma=0.0,
        name="identity",
    )


def _constant_sigma(c: float = 2.0):
    return VectorField.from_scalar(
        lambda x: np.full_like(x, c), lambda x: np.zeros_like(x), lambda x: np.zeros_like(x),
        lam=abs(c), sup_sigma=abs(c), sup_dsigma=0.0, sup_d2sigma=0.0, name="constant",
    )


def _shifted_sin_sigma(c: float = 2.0, a: float = 1.0):
    """``c + a sin x`` with ``c > |a|``; ``two_plus_sin`` is ``c=2, a=1``."""
    if not c > abs(a):
        raise ValueError("need c > |a| for ellipticity")
    return VectorField.from_scalar(
        lambda x: c + a * np.sin(x), lambda x: a * np.cos(x), lambda x: -a * np.sin(x),
        lam=c - abs(a), sup_sigma=c + abs(a), sup_dsigma=abs(a), sup_d2sigma=abs(a),
        name="shifted_sin",
    )


def _linear_sigma(a: float = 1.0):
    """``sigma(x) = a x``: unbounded and degenerate at 0; only for the exponential oracle."""
    return VectorField.from_scalar(
        lambda x: a * x, lambda x: np.full_like(x, a), lambda x: np.zeros_like(x),
        lam=0.0, name="linear",
    )


def _gradient_2d_sigma(eps: float = 0.2):
    """``sigma = (DG)^{-1}`` for ``G(z) = z + eps (sin(z1 + z2), sin(z1 - z2))``.

    ``sigma^{-1} = DG`` is a gradient field by construction, so the transform
    oracle ``G`` is known in closed form. Ellipticity needs ``eps <= 0.2``.
    """
    if not 0 <= eps <= 0.2:
        raise ValueError("gradient_2d needs 0 <= eps <= 0.2")

    def dg(x):
        cp, cm = np.cos(x[..., 0] + x[..., 1]), np.cos(x[..., 0] - x[..., 1])
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1 + eps * cp
        out[..., 0, 1] = eps * cp
        out[..., 1, 0] = eps * cm
        out[..., 1, 1] = 1 - eps * cm
        return out

    def ddg(x):
        sp, sm = np.sin(x[..., 0] + x[..., 1]), np.sin(x[..., 0] - x[..., 1])
        out = np.empty(x.shape[:-1] + (2, 2, 2))
        out[..., 0, :, 0] = -eps * sp[..., None]
        out[..., 0, :, 1] = -eps * sp[..., None]
        out[..., 1, 0, 0], out[..., 1, 0, 1] = -eps * sm, eps * sm
        out[..., 1, 1, 0], out[..., 1, 1, 1] = eps * sm, -eps * sm
        return out

    def sigma(x):
        return np.linalg.inv(dg(x))

    def dsigma(x):
        s = sigma(x)
        return -np.einsum("...ij,...jkl,...km->...iml", s, ddg(x), s)

    def potential(x):
        x = np.asarray(x, dtype=float)
        return x + eps * np.stack([np.sin(x[..., 0] + x[..., 1]), np.sin(x[..., 0] - x[..., 1])], -1)

    return VectorField(sigma=sigma, dsigma=dsigma, lam=0.5, sup_sigma=1.5,
                       name="gradient_2d", potential=potential)


def _rotational_2d_sigma(kappa: float = 0.5):
    """``sigma^{-1} = [[1, kappa sin x1], [0, 1]]``: its first row has curl ``kappa cos x1``."""
    if not abs(kappa) < 2:
        raise ValueError("rotational_2d needs |kappa| < 2 for ellipticity")

    def sigma(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = out[..., 1, 1] = 1.0
        out[..., 0, 1] = -kappa * np.sin(x[..., 0])
        return out

    def dsigma(x):
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 0] = -kappa * np.cos(x[..., 0])
        return out

    return VectorField(sigma=sigma, dsigma=dsigma, lam=1 - abs(kappa) / 2,
                       sup_sigma=float(np.sqrt(2 + kappa**2)), name="rotational_2d")


DRIFTS = {
    "zero": _zero_drift,
    "constant": _constant_drift,
    "cos": _cos_drift,
    "linear": _linear_drift,
    "bump": _bump_drift,
    "holder_bump": _holder_bump_drift,
    "power": _power_drift,
}

SIGMAS = {
    "identity": _identity_sigma,
    "constant": _constant_sigma,
    "shifted_sin": _shifted_sin_sigma,
    "two_plus_sin": lambda: _shifted_sin_sigma(2.0, 1.0),
    "linear": _linear_sigma,
    "gradient_2d": _gradient_2d_sigma,
    "rotational_2d": _rotational_2d_sigma,
}


def make_drift(name: str, **params) -> Drift:
    try:
        family = DRIFTS[name]
    except KeyError:
        raise KeyError(f"unknown drift family {name!r}; known: {sorted(DRIFTS)}") from None
    return family(**params)


def make_sigma(name: str, **params) -> VectorField:
    try:
        family = SIGMAS[name]
    except KeyError:
        raise KeyError(f"unknown sigma family {name!r}; known: {sorted(SIGMAS)}") from None
    return family(**params)


def cutoff(f: Callable[[Array], Array], radius: float) -> Callable[[Array], Array]:
    """``f`` on ``|x| <= R``, zero on ``|x| >= 2R``, linear taper in between."""
    def fn(x):
        x = np.asarray(x, dtype=float)
        weight = np.clip(2 - np.abs(x) / radius, 0, 1)
        return weight * f(x)
    return fn
