import logging

import numpy as np

from nnet.network import VectorFieldParams, forward
from utils.exceptions import ContractError
from .schedules import StepSchedule

logger = logging.getLogger(__name__)


def as_velocity_fn(field):
    """
    Normalise a velocity field to a callable (x, t, y) -> v.

    `field` is either VectorFieldParams or any callable with that signature
    (analytic fields in tests, oracle models).
    """
    if isinstance(field, VectorFieldParams):
        return lambda x, t, y: forward(field, x, t, y)
    if callable(field):
        return field
    raise ContractError(f"Not a velocity field: {type(field).__name__}")


def null_condition_for(field, guidance):
    if guidance is not None and guidance.null_condition is not None:
        return guidance.null_condition
    if isinstance(field, VectorFieldParams):
        return field.null_condition
    return None


def guided_velocity(velocity_fn, x, t, y, guidance, null_id):
    """u_null + cfg_t (u_cond - u_null), or u_cond without guidance."""
    u_cond = np.asarray(velocity_fn(x, t, y), dtype=np.float64)
    if guidance is None:
        return u_cond
    u_null = np.asarray(velocity_fn(x, t, null_id), dtype=np.float64)
    return u_null + guidance.scale(t) * (u_cond - u_null)


def euler_sample(field, x0, schedule, guidance=None, y=None, return_path=False):
    """
    Integrate dx/dt = u(x, y, t) from t=0 to t=1 with explicit Euler steps.

    Args:
        field: VectorFieldParams or callable (x, t, y) -> velocity
        x0 (array): Starting noise, any batch shape accepted by the field
        schedule (StepSchedule): Timesteps t_0 = 0 < ... < t_n = 1
        guidance (GuidanceSpec, optional): Enables classifier-free guidance
        y: Condition ids passed to the field
        return_path (bool): Also return every intermediate state

    Returns:
        array: Final state x_n (and the list of states when return_path is set)
    """
    if not isinstance(schedule, StepSchedule):
        raise ContractError(f"Expected a StepSchedule, got {type(schedule).__name__}")
    velocity_fn = as_velocity_fn(field)
    null_id = null_condition_for(field, guidance)

    x = np.array(x0, dtype=np.float64)
    path = [x.copy()] if return_path else None
    for t, dt in schedule:
        v = guided_velocity(velocity_fn, x, t, y, guidance, null_id)
        x = x + v * dt
        if return_path:
            path.append(x.copy())

    logger.debug(f"Euler sampling finished after {schedule.steps} steps" + (" with guidance" if guidance else ""))
    if return_path:
        return x, path
    return x
