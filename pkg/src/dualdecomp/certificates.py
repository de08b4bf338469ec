"""Convergence certificates: norms, bounds, R estimation, gradient map, rate fits.

Everything here is a pure function over immutable inputs (instances, traces)
and can run concurrently.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import model, oracle
from .errors import DegenerateDenominator, InsufficientData, MissingReference

__all__ = [
    "feasibility_violation",
    "estimate_R",
    "theoretical_bounds",
    "gradient_map",
    "error_bound_ratio",
    "fit_linear_rate",
    "random_dual_point",
    "CertificateReport",
]


@dataclass
class CertificateReport:
    """Certificate quantities at one iterate."""

    k: int
    dual_gap: float
    primal_gap: float
    feas: float
    gradmap_norm: float
    bounds: dict
    kappa_hat: float = math.nan
    R_approximate: bool = False


def feasibility_violation(instance, W, z):
    """W^{-1}-weighted norm of the D-projected constraint residual at z.

    The equality residual is kept as-is, the inequality residual is clipped
    at zero (satisfied rows, including vacuous infinite-limit rows,
    contribute nothing).
    """
    r_eq, r_ineq = model.apply_G(instance, z)
    r = np.concatenate([r_eq, np.maximum(r_ineq, 0.0)])
    return W.inv_norm(r)


def estimate_R(instance, W, lamstar):
    """W-norm of the reference multiplier: ``R = ||lamstar - 0||_W``.

    This is a lower estimate of the max over the whole dual solution set;
    it is exact when the optimal multiplier is unique (check strict
    complementarity on the reference solve), otherwise treat certificate
    bounds built from it as approximate.
    """
    if lamstar is None:
        raise MissingReference("estimate_R needs a reference dual solution")
    packed = lamstar.packed() if hasattr(lamstar, "packed") else np.asarray(lamstar)
    return W.norm(packed)


def theoretical_bounds(k, R, sigma_f, L_f=None, d0=None, fstar=None,
                       kappa=None, G_norm=None, w_min=None, L_grad_max=None):
    """Numeric per-theorem bounds at iteration k.

    Sublinear bounds need only (k, R, sigma_f); the last-iterate primal
    upper bound additionally needs a Lipschitz constant of f.  Geometric
    bounds are emitted only when an empirically fitted ``kappa`` is supplied
    (they are labeled empirical: the true error-bound constant is not
    constructive) together with the initial gap data.
    """
    kk = float(k + 1)
    out = {
        "avg_dual_gap": 2.0 * R * R / kk**2,
        "avg_feasibility": 8.0 * R / kk**2,
        "avg_primal_low": -8.0 * R * R / kk**2,
        "avg_distance": 4.0 * R / (math.sqrt(sigma_f) * kk),
        "last_dual_gap": 2.0 * R * R / kk**2,
        "last_feasibility": 2.0 * R / (kk * math.sqrt(kk)),
        "last_primal_low": -2.0 * R * R / (kk * math.sqrt(kk)),
        "last_distance": 2.0 * R / (math.sqrt(sigma_f) * kk),
    }
    if L_f is not None:
        out["last_primal_up"] = 2.0 * L_f * R / (math.sqrt(sigma_f) * kk)
    if kappa is not None:
        rho = 4.0 * (1.0 + kappa) / (1.0 + 4.0 * (1.0 + kappa))
        out["geo_ratio"] = rho
        if d0 is not None and fstar is not None:
            gap0 = fstar - d0
            out["geo_dual_gap"] = rho**k * gap0
            out["geo_feasibility"] = rho ** ((k - 1) / 2.0) * math.sqrt(max(2.0 * gap0, 0.0))
            out["geo_distance"] = rho ** (k / 2.0) * math.sqrt(max(2.0 * gap0 / sigma_f, 0.0))
            if G_norm is not None and w_min is not None and L_grad_max is not None:
                out["geo_primal_up"] = (
                    R / w_min * G_norm * rho ** (k / 2.0)
                    * math.sqrt(max(2.0 * gap0 / sigma_f, 0.0))
                    + 0.5 * L_grad_max * rho**k * 2.0 * gap0 / sigma_f
                )
    return out


def gradient_map(instance, W, lam):
    """One weighted projected dual step minus the point: zero exactly at optima."""
    _, g, _ = oracle.dual_value_grad(instance, lam)
    packed = lam.packed() if hasattr(lam, "packed") else np.asarray(lam, dtype=float)
    stepped = packed + W.scale_inv(np.concatenate([g.nu, g.mu]))
    stepped = oracle._project_packed(instance, stepped)
    return oracle.DualPoint.from_packed(instance, stepped - packed)


def error_bound_ratio(instance, W, lam, lamstar):
    """Empirical error-bound ratio ``||lam - lamstar||_W / ||gradient map||_W``.

    The running maximum of this ratio over a trace is the empirical constant
    fed into the geometric bounds.
    """
    gm = gradient_map(instance, W, lam)
    denom = W.norm(gm.packed())
    if denom <= 1e-14:
        raise DegenerateDenominator("gradient map vanishes: the point is optimal")
    packed = lam.packed() if hasattr(lam, "packed") else np.asarray(lam)
    star = lamstar.packed() if hasattr(lamstar, "packed") else np.asarray(lamstar)
    return W.norm(packed - star) / denom


def fit_linear_rate(points, tail=0.8, min_points=10):
    """Least-squares fit of log(dual gap) against k over the tail of a trace.

    ``points`` is an iterable of ``(k, gap)``; entries with gap <= 1e-14 are
    discarded.  Returns ``(slope, intercept, correlation)`` where correlation
    is the magnitude of the Pearson coefficient (1.0 for an exact geometric
    sequence, 0.0 for a constant gap).
    """
    pts = [(float(k), float(g)) for k, g in points if g > 1e-14]
    if len(pts) < min_points:
        raise InsufficientData(
            f"need at least {min_points} positive-gap points, got {len(pts)}"
        )
    pts.sort(key=lambda t: t[0])
    start = int(math.floor((1.0 - tail) * len(pts)))
    ks = np.array([t[0] for t in pts[start:]])
    ys = np.log(np.array([t[1] for t in pts[start:]]))
    slope, intercept = np.polyfit(ks, ys, 1)
    sy = ys.std()
    if sy == 0.0 or ks.std() == 0.0:
        corr = 0.0
    else:
        corr = abs(float(np.corrcoef(ks, ys)[0, 1]))
    return float(slope), float(intercept), corr


def random_dual_point(instance, rng, scale=1.0):
    """A random point of the effective dual domain (for sampled inequality checks)."""
    nu = scale * rng.standard_normal(instance.p)
    mu = scale * np.abs(rng.standard_normal(instance.q))
    mu[~instance.finite_ineq] = 0.0
    return oracle.DualPoint(nu, mu)
