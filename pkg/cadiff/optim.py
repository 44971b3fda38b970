import logging

import numpy

from config import ADAM_BETAS, ADAM_EPS

from .errors import GradientError
from .layers import ParamSet

logger = logging.getLogger("cadiff.optim")


def adam_step(
    params: ParamSet,
    grads: dict[str, numpy.ndarray],
    lr: float,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> ParamSet:
    """
    Applies one bias-corrected adaptive-moment update to `params` in place.

    Raises:
        GradientError: for gradients of unknown parameters or non-finite gradients.
    """
    for name, grad in grads.items():
        if name not in params:
            raise GradientError(f"gradient for {name} does not belong to {params.name}")
        if not numpy.all(numpy.isfinite(grad)):
            raise GradientError(f"non-finite gradient for parameter {name}")

    beta1, beta2 = betas
    params.step_count += 1
    correction1 = 1.0 - beta1**params.step_count
    correction2 = 1.0 - beta2**params.step_count

    for name, grad in grads.items():
        param = params.params[name]
        m = params.first_moments.get(name, numpy.zeros_like(param.data))
        v = params.second_moments.get(name, numpy.zeros_like(param.data))
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        params.first_moments[name] = m
        params.second_moments[name] = v
        param.data = param.data - lr * (m / correction1) / (
            numpy.sqrt(v / correction2) + eps
        )

    logger.debug("%s: adam step %d over %d tensors", params.name, params.step_count, len(grads))
    return params
