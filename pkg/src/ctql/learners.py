"""Value/q-function learning from the martingale characterizations.

Four update rules operate on trajectories or single transitions:

  * martingale-loss descent over whole episodes (ml_update),
  * offline temporal-difference style updates with test functions
    (offline_td_update),
  * the online single-step variant (online_td_update),
  * the ergodic variant that learns the long-run rate V alongside
    (ergodic_update).

All of them read trajectories purely as data, so stored and live-generated
episodes produce identical updates.  gmm_objective turns the same moment
conditions into a scalar diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .approx import GaussianQApprox, ValueApprox
from .envsim import Trajectory
from .errors import ParameterDiverged


def unit_schedule(_arg: float) -> float:
    return 1.0


def power_schedule(exponent: float = 0.51) -> Callable[[float], float]:
    """l(j) = j^-exponent for episode counters j >= 1."""
    def sched(j: float) -> float:
        return float(max(j, 1.0)) ** (-exponent)
    sched.__name__ = f"power_schedule_{exponent:g}"
    return sched


def sqrt_log_schedule(arg: float) -> float:
    """l(t) = 1 / max(1, sqrt(log t)); equals 1 for t <= e."""
    if arg <= 1.0:
        return 1.0
    return 1.0 / max(1.0, math.sqrt(math.log(arg)))


@dataclass(frozen=True)
class LearnerConfig:
    """Learning rates, schedule and optional test-function overrides.

    Test functions receive (t, states_until_t, actions_until_t) and must
    return a vector of the matching parameter dimension; None selects the
    value/q parameter gradients, which is the configuration used throughout
    the experiments (other admissible choices are not explored here).
    """

    gamma: float = 0.1
    alpha_theta: float = 0.001
    alpha_psi: float = 0.001
    alpha_v: float = 0.001
    alpha_w: float = 0.005
    alpha_phi: float = 0.001
    schedule: Callable[[float], float] = unit_schedule
    test_function_theta: Optional[Callable] = None
    test_function_psi: Optional[Callable] = None
    ml_inner_sum: str = "discounted"  # or "frozen-at-k"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.ml_inner_sum not in ("discounted", "frozen-at-k"):
            raise ValueError("ml_inner_sum must be 'discounted' or 'frozen-at-k'")


class Transition(NamedTuple):
    """Single grid transition (t, x, a, reward rate, x_next, dt)."""

    t: float
    x: float
    a: float
    reward: float
    x_next: float
    dt: float


@dataclass(frozen=True)
class TdIncrement:
    """One-step residual and the test vectors it multiplies."""

    delta: float
    xi: np.ndarray
    zeta: np.ndarray


def _check_finite(name, *arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise ParameterDiverged(name, None)


def _xi_values(traj: Trajectory, J: ValueApprox, cfg: LearnerConfig):
    """Theta test vectors at every grid point, shape (L, K)."""
    ts = traj.times[:-1]
    xs = traj.states[:-1, 0]
    if cfg.test_function_theta is None:
        return np.asarray(J.grad_theta(ts, xs), float)
    cols = [np.asarray(cfg.test_function_theta(traj.times[i], traj.states[:i + 1],
                                               traj.actions[:i + 1]), float)
            for i in range(traj.steps)]
    return np.stack(cols, axis=-1)


def _zeta_values(traj: Trajectory, q: GaussianQApprox, cfg: LearnerConfig):
    ts = traj.times[:-1]
    xs = traj.states[:-1, 0]
    acts = traj.actions[:, 0]
    if cfg.test_function_psi is None:
        return np.asarray(q.grad_psi(ts, xs, acts), float)
    cols = [np.asarray(cfg.test_function_psi(traj.times[i], traj.states[:i + 1],
                                             traj.actions[:i + 1]), float)
            for i in range(traj.steps)]
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# Martingale loss


def martingale_residuals(traj: Trajectory, J: ValueApprox, q: GaussianQApprox,
                         beta: float) -> np.ndarray:
    """Deviation G_k between the realized discounted payoff and J at t_k.

    G_k = e^{-beta (T - t_k)} h(x_K) - J(t_k, x_k)
          + sum_{i>=k} e^{-beta (t_i - t_k)} (r_i - q_i) dt,
    computed with one backward pass.
    """
    if traj.terminal_payoff is None:
        raise ValueError("martingale loss needs a terminal payoff")
    k_steps = traj.steps
    dt = traj.dt
    disc = math.exp(-beta * dt)
    ts = traj.times[:-1]
    xs = traj.states[:-1, 0]
    acts = traj.actions[:, 0]
    qs = np.asarray(q.value(ts, xs, acts), float)
    js = np.asarray(J.value(ts, xs), float)
    net = (traj.rewards - qs) * dt
    g = np.empty(k_steps)
    tail = 0.0
    payoff = float(traj.terminal_payoff)
    for k in range(k_steps - 1, -1, -1):
        tail = net[k] + disc * tail
        g[k] = payoff * math.exp(-beta * (k_steps - k) * dt) - js[k] + tail
    return g


def martingale_loss(traj: Trajectory, J: ValueApprox, q: GaussianQApprox,
                    beta: float) -> float:
    """1/2 sum_k G_k^2 dt over the episode."""
    g = martingale_residuals(traj, J, q, beta)
    return 0.5 * float(np.sum(g * g)) * traj.dt


def ml_update(traj: Trajectory, J: ValueApprox, q: GaussianQApprox,
              cfg: LearnerConfig, beta: float, j: int):
    """One martingale-loss step on (theta, psi) from a full episode.

    The psi direction weights each G_k by the accumulated q-gradient over
    [t_k, T].  The default accumulates the discounted gradient along the
    tail; ml_inner_sum='frozen-at-k' instead freezes the gradient at t_k as
    in the boxed form of the algorithm.
    """
    g = martingale_residuals(traj, J, q, beta)
    dt = traj.dt
    lr = cfg.schedule(j)
    ts = traj.times[:-1]
    xs = traj.states[:-1, 0]
    acts = traj.actions[:, 0]
    xi = np.asarray(J.grad_theta(ts, xs), float)
    zeta = np.asarray(q.grad_psi(ts, xs, acts), float)
    # non-finite residuals surface through the guard below, not as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        d_theta = xi @ g * dt
        if cfg.ml_inner_sum == "discounted":
            disc = math.exp(-beta * dt)
            acc = np.zeros_like(zeta)
            tail = np.zeros(zeta.shape[0])
            for k in range(traj.steps - 1, -1, -1):
                tail = zeta[:, k] * dt + disc * tail
                acc[:, k] = tail
            d_psi = acc @ g * dt
        else:
            weights = (traj.steps - np.arange(traj.steps)) * dt
            d_psi = (zeta * weights) @ g * dt
        theta_new = J.theta + lr * cfg.alpha_theta * d_theta
        psi_new = q.psi + lr * cfg.alpha_psi * d_psi
    _check_finite("ml_update", theta_new, psi_new)
    return theta_new, psi_new


# ---------------------------------------------------------------------------
# Temporal-difference style updates


def td_residuals(traj: Trajectory, J: ValueApprox, q: GaussianQApprox,
                 beta: float, V: Optional[float] = None) -> np.ndarray:
    """delta_i = J(t_{i+1}, x_{i+1}) - J(t_i, x_i) + r_i dt - q_i dt
    - beta J(t_i, x_i) dt (or - V dt with the ergodic convention)."""
    dt = traj.dt
    ts = traj.times
    xs = traj.states[:, 0]
    js = np.asarray(J.value(ts, xs), float)
    qs = np.asarray(q.value(ts[:-1], xs[:-1], traj.actions[:, 0]), float)
    delta = js[1:] - js[:-1] + (traj.rewards - qs) * dt
    if V is not None:
        delta = delta - V * dt
    else:
        delta = delta - beta * js[:-1] * dt
    return delta


def offline_td_update(traj: Trajectory, J: ValueApprox, q: GaussianQApprox,
                      cfg: LearnerConfig, beta: float, j: int):
    """Whole-episode update: sum the residual against the test vectors."""
    delta = td_residuals(traj, J, q, beta)
    lr = cfg.schedule(j)
    xi = _xi_values(traj, J, cfg)
    zeta = _zeta_values(traj, q, cfg)
    with np.errstate(over="ignore", invalid="ignore"):
        theta_new = J.theta + lr * cfg.alpha_theta * (xi @ delta)
        psi_new = q.psi + lr * cfg.alpha_psi * (zeta @ delta)
    _check_finite("offline_td_update", theta_new, psi_new)
    return theta_new, psi_new


def td_increment(trans: Transition, J: ValueApprox, q: GaussianQApprox,
                 beta: float, V: Optional[float] = None) -> TdIncrement:
    t, x, a, r, x_next, dt = trans
    j_now = float(np.asarray(J.value(t, x), float))
    j_next = float(np.asarray(J.value(t + dt, x_next), float))
    q_now = float(np.asarray(q.value(t, x, a), float))
    delta = j_next - j_now + (r - q_now) * dt
    if V is not None:
        delta -= V * dt
    else:
        delta -= beta * j_now * dt
    xi = np.asarray(J.grad_theta(t, x), float)
    zeta = np.asarray(q.grad_psi(t, x, a), float)
    return TdIncrement(delta=delta, xi=xi, zeta=zeta)


def online_td_update(trans: Transition, J: ValueApprox, q: GaussianQApprox,
                     cfg: LearnerConfig, beta: float, j: int):
    """Single-transition update used while the trajectory is being generated."""
    inc = td_increment(trans, J, q, beta)
    lr = cfg.schedule(j)
    theta_new = J.theta + lr * cfg.alpha_theta * inc.delta * inc.xi
    psi_new = q.psi + lr * cfg.alpha_psi * inc.delta * inc.zeta
    _check_finite("online_td_update", theta_new, psi_new)
    return theta_new, psi_new


def ergodic_update(trans: Transition, J: ValueApprox, q: GaussianQApprox,
                   V: float, cfg: LearnerConfig, elapsed: float):
    """Online update for long-run average problems; learns V as well.

    The schedule argument is elapsed time (step count times dt), matching the
    decaying-rate convention of the experiments.
    """
    inc = td_increment(trans, J, q, beta=0.0, V=V)
    lr = cfg.schedule(elapsed)
    theta_new = J.theta + lr * cfg.alpha_theta * inc.delta * inc.xi
    psi_new = q.psi + lr * cfg.alpha_psi * inc.delta * inc.zeta
    v_new = V + lr * cfg.alpha_v * inc.delta
    _check_finite("ergodic_update", theta_new, psi_new, v_new)
    return theta_new, psi_new, v_new


# ---------------------------------------------------------------------------
# Moment-condition diagnostic


def gmm_objective(trajs: Sequence[Trajectory], J: ValueApprox,
                  q: GaussianQApprox, cfg: LearnerConfig, beta: float,
                  weight_theta: Optional[np.ndarray] = None,
                  weight_psi: Optional[np.ndarray] = None):
    """Quadratic forms m^T A m of the empirical moment conditions.

    m is the average over episodes of sum_i test_i * delta_i, one vector for
    the theta tests and one for the psi tests.  A defaults to the identity;
    passing the inverse covariance of the accumulated tests makes the
    objective invariant to linear reparameterizations of the test functions.
    """
    m_theta = None
    m_psi = None
    for traj in trajs:
        delta = td_residuals(traj, J, q, beta)
        xi = _xi_values(traj, J, cfg)
        zeta = _zeta_values(traj, q, cfg)
        mt = xi @ delta
        mp = zeta @ delta
        m_theta = mt if m_theta is None else m_theta + mt
        m_psi = mp if m_psi is None else m_psi + mp
    n = len(trajs)
    m_theta = m_theta / n
    m_psi = m_psi / n
    a_t = np.eye(m_theta.size) if weight_theta is None else np.asarray(weight_theta, float)
    a_p = np.eye(m_psi.size) if weight_psi is None else np.asarray(weight_psi, float)
    return float(m_theta @ a_t @ m_theta), float(m_psi @ a_p @ m_psi)


def test_covariance(trajs: Sequence[Trajectory], J: ValueApprox,
                    q: GaussianQApprox, cfg: LearnerConfig):
    """E_hat[int xi xi^T dt] and the psi analogue, for GMM weighting."""
    cov_t = None
    cov_p = None
    for traj in trajs:
        dt = traj.dt
        xi = _xi_values(traj, J, cfg)
        zeta = _zeta_values(traj, q, cfg)
        ct = (xi @ xi.T) * dt
        cp = (zeta @ zeta.T) * dt
        cov_t = ct if cov_t is None else cov_t + ct
        cov_p = cp if cov_p is None else cov_p + cp
    n = len(trajs)
    return cov_t / n, cov_p / n
