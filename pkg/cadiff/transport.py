import logging

import numpy
import ot

from .errors import TransportError
from .models import DiagGaussian, DiscreteDist

logger = logging.getLogger("cadiff.transport")

MASS_TOLERANCE = 1e-9
LIPSCHITZ_TOLERANCE = 1e-12


def w2_diag_gaussian(a: DiagGaussian, b: DiagGaussian) -> float:
    """
    Closed-form 2-Wasserstein distance between diagonal Gaussians, with the
    covariance term measured on standard deviations:
    W2^2 = |mu_a - mu_b|^2 + |std_a - std_b|^2.
    With zero std on both sides this is the Euclidean distance of the means.
    """
    mean_a, mean_b = numpy.asarray(a.mean), numpy.asarray(b.mean)
    std_a, std_b = numpy.asarray(a.std), numpy.asarray(b.std)
    if mean_a.shape != mean_b.shape:
        raise TransportError(f"dimension mismatch: {mean_a.shape} vs {mean_b.shape}")
    squared = numpy.sum((mean_a - mean_b) ** 2) + numpy.sum((std_a - std_b) ** 2)
    return float(numpy.sqrt(squared))


def _probabilities(dist: DiscreteDist | numpy.ndarray) -> numpy.ndarray:
    if isinstance(dist, DiscreteDist):
        return dist.probs
    probs = numpy.asarray(dist, dtype=numpy.float64)
    if numpy.any(probs < 0.0):
        index = int(numpy.argmin(probs))
        raise TransportError(f"negative probability {probs[index]:.6g} at index {index}")
    return probs


def wp_discrete(
    mu: DiscreteDist | numpy.ndarray,
    nu: DiscreteDist | numpy.ndarray,
    cost: numpy.ndarray,
    p: float = 1.0,
) -> float:
    """
    Exact order-p Wasserstein distance between two discrete distributions:
    (min over couplings of sum w_ij cost_ij^p)^(1/p), solved with the network
    simplex of POT.

    Raises:
        TransportError: on bad shapes, negative costs or probabilities, p < 1
            or a mass mismatch.
    """
    a, b = _probabilities(mu), _probabilities(nu)
    cost = numpy.asarray(cost, dtype=numpy.float64)
    if p < 1.0:
        raise TransportError(f"order p must be >= 1, got {p}")
    if cost.shape != (a.size, b.size):
        raise TransportError(f"cost shape {cost.shape} does not match supports ({a.size}, {b.size})")
    if numpy.any(cost < 0.0):
        raise TransportError("cost matrix must be non-negative")
    mass_gap = abs(a.sum() - b.sum())
    if mass_gap > MASS_TOLERANCE:
        raise TransportError(f"marginals carry different mass (gap {mass_gap:.3e})")

    keep_a, keep_b = a > 0.0, b > 0.0
    a, b = a[keep_a], b[keep_b]
    reduced = cost[numpy.ix_(keep_a, keep_b)]
    if a.size == 1 or b.size == 1:
        # a point mass has exactly one coupling
        total = float(numpy.sum(numpy.outer(a, b) * reduced**p))
    else:
        total = float(ot.emd2(a, b / b.sum() * a.sum(), reduced**p))
    return max(total, 0.0) ** (1.0 / p)


def w1_dual_check(
    mu: DiscreteDist | numpy.ndarray,
    nu: DiscreteDist | numpy.ndarray,
    cost: numpy.ndarray,
    f: numpy.ndarray,
) -> float:
    """
    Evaluates the Kantorovich dual objective E_mu[f] - E_nu[f] for a potential f
    that is 1-Lipschitz with respect to `cost`.

    Raises:
        TransportError: naming the first pair (i, j) with |f_i - f_j| > cost_ij.
    """
    a, b = _probabilities(mu), _probabilities(nu)
    f = numpy.asarray(f, dtype=numpy.float64)
    cost = numpy.asarray(cost, dtype=numpy.float64)
    if cost.shape != (f.size, f.size) or a.size != f.size or b.size != f.size:
        raise TransportError("potential, cost and supports must share one finite space")
    gaps = numpy.abs(f[:, None] - f[None, :]) - cost
    if numpy.any(gaps > LIPSCHITZ_TOLERANCE):
        i, j = numpy.unravel_index(numpy.argmax(gaps), gaps.shape)
        raise TransportError(
            f"potential is not 1-Lipschitz at pair ({i}, {j}):"
            + f" |f_i - f_j| = {abs(f[i] - f[j]):.6g} > cost {cost[i, j]:.6g}"
        )
    return float(a @ f - b @ f)


def wp_empirical_1d(xs: numpy.ndarray, ys: numpy.ndarray, p: float = 1.0) -> float:
    """
    Order-p Wasserstein distance between two equally sized 1D samples, i.e. the
    sorted (quantile) coupling.
    """
    xs = numpy.asarray(xs, dtype=numpy.float64).reshape(-1)
    ys = numpy.asarray(ys, dtype=numpy.float64).reshape(-1)
    if xs.size == 0 or ys.size == 0:
        raise TransportError("empirical Wasserstein needs at least one sample per side")
    if xs.size != ys.size:
        raise TransportError(f"sample counts differ: {xs.size} vs {ys.size}")
    if p < 1.0:
        raise TransportError(f"order p must be >= 1, got {p}")
    return float(ot.wasserstein_1d(xs, ys, p=p)) ** (1.0 / p)


def absolute_difference_cost(values: numpy.ndarray) -> numpy.ndarray:
    """
    Ground metric |r - r'| on a finite set of reals.
    """
    values = numpy.asarray(values, dtype=numpy.float64)
    return numpy.abs(values[:, None] - values[None, :])
