"""Neural tangent kernels for a two-layer ReLU network, with and without anchoring.

The analytic kernel is the dot-product NTK of ``f(x) = m^{-1/2} sum_r a_r relu(w_r . x)``
on unit-norm inputs when only the hidden weights ``w_r ~ N(0, I)`` are trained
and ``a_r`` are fixed random signs (no biases)::

    h(u) = u * (pi - arccos(u)) / (2 pi),     u = x_i . x_j

Anchoring feeds the network ``[c, x - c]``; the tuple inner product is
``u - c . v`` with ``v = x_i + x_j - 2c``. A first-order expansion of the
arccos around ``u`` splits the anchored kernel into ``h(u) - gamma``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import NumericalError

DOMAIN_TOL = 1e-12
PSD_TOL = 1e-10
PROVENANCES = ("analytic", "empirical", "anchored_exact", "anchored_approx")


def _clamp_unit(u, what: str = "argument") -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.abs(u) > 1.0 + DOMAIN_TOL) or np.any(~np.isfinite(u)):
        raise ValueError(f"{what} outside [-1, 1] beyond rounding tolerance")
    return np.clip(u, -1.0, 1.0)


def analytic_ntk(u):
    """``u (pi - arccos u) / (2 pi)``; scalar in, scalar out."""
    u = _clamp_unit(u, "cosine similarity")
    out = u * (np.pi - np.arccos(u)) / (2.0 * np.pi)
    return float(out) if out.ndim == 0 else out


def kernel_between(a, b) -> np.ndarray:
    """``h`` on all row pairs of unit-norm ``a`` and ``b``, shape ``(len(a), len(b))``.

    The angle comes from ``2 atan2(|a - b|, |a + b|)`` rather than ``arccos(a . b)``:
    near ``u = +/-1`` arccos turns a one-ulp error in ``u`` into ~1e-8.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    diff = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    summ = np.linalg.norm(a[:, None, :] + b[None, :, :], axis=2)
    theta = 2.0 * np.arctan2(diff, summ)
    u = np.clip(a @ b.T, -1.0, 1.0)
    return u * (np.pi - theta) / (2.0 * np.pi)


def unit_rows(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero vector")
    return x / norms


def lift_to_sphere(x) -> np.ndarray:
    """Map points of R^d onto S^d via ``[x, 1] / |[x, 1]|`` (keeps distinct points distinct)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return unit_rows(np.hstack([x, np.ones((x.shape[0], 1))]))


def unit_circle_grid(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("grid needs n >= 2 points")
    t = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([np.cos(t), np.sin(t)])


# --------------------------------------------------------------------------
# Empirical NTK
# --------------------------------------------------------------------------


def _hidden_grads(x: np.ndarray, w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d f / d W for ``f = m^{-1/2} a . relu(W x)``; shape ``(m, d)``."""
    active = (w @ x > 0).astype(np.float64)
    return (a * active)[:, None] * x[None, :] / np.sqrt(w.shape[0])


def empirical_ntk(x_i, x_j, width: int, num_seeds: int = 10, seed: int = 0) -> float:
    """Mean over random initializations of ``<df/dW (x_i), df/dW (x_j)>``.

    Hidden weights ``W ~ N(0, 1)`` entrywise, output weights fixed random signs
    scaled by ``1/sqrt(width)`` in the forward pass; biases are absent.
    """
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    total = 0.0
    for s in range(num_seeds):
        rng = np.random.default_rng([seed, width, s])
        w = rng.standard_normal((width, x_i.size))
        a = rng.choice([-1.0, 1.0], size=width)
        total += float(np.sum(_hidden_grads(x_i, w, a) * _hidden_grads(x_j, w, a)))
    return total / num_seeds


def empirical_ntk_gram(x, width: int, num_seeds: int = 10, seed: int = 0) -> "GramMatrix":
    """Empirical Gram matrix; same estimator as :func:`empirical_ntk`, vectorized over pairs."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    gram = np.zeros((x.shape[0], x.shape[0]))
    for s in range(num_seeds):
        rng = np.random.default_rng([seed, width, s])
        w = rng.standard_normal((width, x.shape[1]))
        rng.choice([-1.0, 1.0], size=width)  # keep the stream aligned with empirical_ntk
        active = (x @ w.T > 0).astype(np.float64)
        gram += (active @ active.T) * (x @ x.T) / width
    return GramMatrix(gram / num_seeds, "empirical")


def random_unit_pairs(n_pairs: int, dim: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return unit_rows(rng.standard_normal((n_pairs, dim))), unit_rows(rng.standard_normal((n_pairs, dim)))


def interior_unit_pairs(n_pairs: int, dim: int, seed: int = 0, max_abs_cos: float = 0.9):
    """Random unit pairs with ``|x_i . x_j| <= max_abs_cos`` (rejection sampling).

    The first-order anchored expansion needs ``|u - delta| < 1``; keeping ``u``
    away from +/-1 leaves room for small anchors.
    """
    rng = np.random.default_rng(seed)
    left, right = [], []
    while len(left) < n_pairs:
        a, b = unit_rows(rng.standard_normal((2, dim)))
        if abs(a @ b) <= max_abs_cos:
            left.append(a)
            right.append(b)
    return np.array(left), np.array(right)


def ntk_convergence(
    widths: Sequence[int], n_pairs: int = 20, num_seeds: int = 10, dim: int = 5, seed: int = 0
):
    """Mean relative error of the empirical NTK against :func:`analytic_ntk` per width.

    Returns a list of ``(width, mean_relative_error)``.
    """
    xi, xj = random_unit_pairs(n_pairs, dim, seed)
    target = analytic_ntk(np.sum(xi * xj, axis=1))
    out = []
    for width in widths:
        est = np.array([empirical_ntk(a, b, width, num_seeds, seed) for a, b in zip(xi, xj)])
        out.append((int(width), float(np.mean(np.abs(est - target) / np.abs(target)))))
    return out


# --------------------------------------------------------------------------
# Anchored kernel
# --------------------------------------------------------------------------


def anchored_inner(x_i, x_j, c, renormalize: bool = False) -> float:
    """Inner product of the anchored tuples ``[c, x_i - c] . [c, x_j - c]``.

    With ``renormalize`` each tuple is scaled to unit norm first.
    """
    x_i, x_j, c = (np.asarray(v, dtype=np.float64) for v in (x_i, x_j, c))
    t_i = np.concatenate([c, x_i - c])
    t_j = np.concatenate([c, x_j - c])
    if renormalize:
        t_i, t_j = unit_rows(t_i)[0], unit_rows(t_j)[0]
        return float(t_i @ t_j)
    # expanded form u - c.v with v = x_i + x_j - 2c
    return float(x_i @ x_j - c @ (x_i + x_j - 2.0 * c))


def gamma(x_i, x_j, c) -> float:
    """Anchor-dependent correction: ``K_anc ~ h(u) - gamma``.

    ``gamma = delta (pi - arccos u) / (2 pi) + (u - delta) delta / (2 pi sqrt(1 - (u - delta)^2))``
    with ``u = x_i . x_j`` and ``delta = c . (x_i + x_j - 2c)``.
    """
    x_i, x_j, c = (np.asarray(v, dtype=np.float64) for v in (x_i, x_j, c))
    u = float(_clamp_unit(x_i @ x_j, "x_i . x_j"))
    delta = float(c @ (x_i + x_j - 2.0 * c))
    if delta == 0.0:
        return 0.0
    s = u - delta
    rad = 1.0 - s * s
    if rad <= 0.0:
        raise ValueError("anchored inner product at or beyond +/-1; the expansion is undefined")
    return delta * (np.pi - np.arccos(u)) / (2.0 * np.pi) + s * delta / (2.0 * np.pi * np.sqrt(rad))


def anchored_kernel(x_i, x_j, c, mode: str = "exact", renormalize: bool = False) -> float:
    """Anchored NTK entry.

    ``exact`` evaluates ``h`` on the anchored tuple inner product (optionally
    renormalized to unit tuples); ``approx`` returns ``h(x_i . x_j) - gamma``.
    """
    if mode == "exact":
        return analytic_ntk(anchored_inner(x_i, x_j, c, renormalize))
    if mode == "approx":
        if renormalize:
            raise ValueError("the approximate form is defined on the raw anchored inner product")
        return analytic_ntk(np.dot(x_i, x_j)) - gamma(x_i, x_j, c)
    raise ValueError("mode must be 'exact' or 'approx'")


@dataclass
class GramMatrix:
    entries: np.ndarray
    provenance: str
    anchor: Optional[np.ndarray] = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ValueError("a Gram matrix must be square")
        if not np.allclose(self.entries, self.entries.T, rtol=0, atol=1e-12):
            raise ValueError("Gram matrix is not symmetric")

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def gram_analytic(x) -> GramMatrix:
    """``h(x_i . x_j)`` over the rows of ``x`` (rows should be unit norm)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    g = kernel_between(x, x)
    return GramMatrix((g + g.T) / 2.0, "analytic")


def gram_anchored(x, c, mode: str = "exact", renormalize: bool = True) -> GramMatrix:
    """Anchored Gram matrix for one fixed anchor ``c``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    c = np.asarray(c, dtype=np.float64)
    if mode == "exact":
        tuples = np.hstack([np.broadcast_to(c, x.shape), x - c])
        if renormalize:
            tuples = unit_rows(tuples)
        g = kernel_between(tuples, tuples) if renormalize else analytic_ntk(_clamp_unit(tuples @ tuples.T))
        provenance = "anchored_exact"
    elif mode == "approx":
        n = x.shape[0]
        g = np.array([[anchored_kernel(x[i], x[j], c, "approx") for j in range(n)] for i in range(n)])
        provenance = "anchored_approx"
    else:
        raise ValueError("mode must be 'exact' or 'approx'")
    return GramMatrix((g + g.T) / 2.0, provenance, c.copy())


def kernel_spectrum(gram, check_psd: bool = True) -> np.ndarray:
    """Eigenvalues of a symmetric Gram matrix, largest first."""
    entries = gram.entries if isinstance(gram, GramMatrix) else np.asarray(gram, dtype=np.float64)
    if entries.shape[0] < 2:
        raise ValueError("spectrum needs at least two points")
    try:
        eig = np.linalg.eigvalsh(entries)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    if check_psd and eig[0] < -PSD_TOL:
        raise NumericalError(f"Gram matrix is not PSD (min eigenvalue {eig[0]:.3e})")
    return eig[::-1].copy()


# --------------------------------------------------------------------------
# Infinite-width prediction
# --------------------------------------------------------------------------


def dot_product_kernel(a, b) -> np.ndarray:
    """Analytic NTK between the rows of ``a`` and ``b`` (rows must be unit norm)."""
    return kernel_between(a, b)


def ntk_regression_predict(
    x_train,
    y_train,
    x_test,
    f0: Callable[[np.ndarray], np.ndarray] | None = None,
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray] = dot_product_kernel,
    ridge: float = 1e-8,
) -> np.ndarray:
    """``f0(x_t) - K(x_t, X) (K(X, X) + ridge I)^{-1} (f0(X) - Y)``.

    ``f0`` defaults to the zero function (plain kernel regression).
    """
    x_train = np.atleast_2d(np.asarray(x_train, dtype=np.float64))
    x_test = np.atleast_2d(np.asarray(x_test, dtype=np.float64))
    y = np.asarray(y_train, dtype=np.float64)
    k_xx = np.asarray(kernel(x_train, x_train), dtype=np.float64)
    k_tx = np.asarray(kernel(x_test, x_train), dtype=np.float64)
    f0_train = np.zeros_like(y) if f0 is None else np.asarray(f0(x_train), dtype=np.float64).reshape(y.shape)
    f0_test = 0.0 if f0 is None else np.asarray(f0(x_test), dtype=np.float64)
    system = k_xx + ridge * np.eye(k_xx.shape[0])
    try:
        alpha = scipy.linalg.solve(system, f0_train - y, assume_a="sym", check_finite=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"kernel system is singular even with ridge={ridge}: {exc}") from exc
    if not np.all(np.isfinite(alpha)):
        raise NumericalError("kernel solve produced non-finite coefficients")
    pred = f0_test - k_tx @ alpha
    return pred.reshape((x_test.shape[0],) + y.shape[1:])


# --------------------------------------------------------------------------
# Per-anchor decision maps
# --------------------------------------------------------------------------


@dataclass
class DecisionMaps:
    xs: np.ndarray
    ys: np.ndarray
    maps: np.ndarray  # (K, len(ys), len(xs))
    std: np.ndarray  # (len(ys), len(xs))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# format=decision_maps/1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y"] + [f"anchor_{k}" for k in range(self.maps.shape[0])] + ["std"])
        for iy, yv in enumerate(self.ys):
            for ix, xv in enumerate(self.xs):
                w.writerow([repr(float(xv)), repr(float(yv))]
                           + [repr(float(v)) for v in self.maps[:, iy, ix]]
                           + [repr(float(self.std[iy, ix]))])
        return buf.getvalue()


def grid_points(xs, ys) -> np.ndarray:
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def toy_anchor_demo(predictor: Callable[[np.ndarray, np.ndarray], np.ndarray], anchors, xs, ys) -> DecisionMaps:
    """Evaluate ``predictor(anchor, points)`` on a grid for every anchor; std is across anchors."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    pts = grid_points(xs, ys)
    maps = np.stack([np.asarray(predictor(np.asarray(c, dtype=np.float64), pts)).reshape(len(ys), len(xs))
                     for c in np.atleast_2d(anchors)])
    return DecisionMaps(xs, ys, maps, np.sort(maps, axis=0).std(axis=0))


def model_predictor(model):
    """Class-1 softmax probability of an anchored :class:`MlpModel`."""
    from .anchoring import anchor_inputs
    from .nn import forward, softmax

    def predict(anchor, points):
        return softmax(forward(model, anchor_inputs(points, anchor)))[:, -1]

    return predict


def ntk_predictor(x_train, y_train, ridge: float = 1e-6):
    """Infinite-width anchored-NTK regressor on ``+/-1`` targets (zero initial function).

    Points and anchors are lifted onto the sphere before anchoring.
    """
    x_lift = lift_to_sphere(x_train)
    targets = np.where(np.asarray(y_train) > 0, 1.0, -1.0)

    def predict(anchor, points):
        c = lift_to_sphere(anchor)[0]

        def kern(a, b):
            ta = unit_rows(np.hstack([np.broadcast_to(c, a.shape), a - c]))
            tb = unit_rows(np.hstack([np.broadcast_to(c, b.shape), b - c]))
            return kernel_between(ta, tb)

        return ntk_regression_predict(x_lift, targets, lift_to_sphere(points), kernel=kern, ridge=ridge)

    return predict
