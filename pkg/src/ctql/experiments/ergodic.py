"""Long-run average reward experiment on the scalar linear-quadratic model.

Three learners run online on a single long trajectory: the rate-based
q-learner, SARSA on a step-size Q-function, and policy gradient with a
temporal-difference critic.  On-policy runs execute the learner's own policy;
off-policy runs execute a fixed Gaussian behavior policy and feed the learner
the observed transitions.

The policy-gradient arm realizes the exploration bonus as the policy's
entropy by default (`pg_regularizer="entropy"`), which is the benchmark
convention; both regularizer forms agree in conditional mean on-policy.  With
`"sampled"` the bonus is the negative log-density at the taken action, which
for this normalized Gaussian family makes the update identical to the
q-learner's up to a 1/gamma rescaling of the actor rate.

Replications are advanced in lockstep as numpy vectors, one lane per
replication.  Each replication owns a counter-based noise stream; noise is
drawn in (chunk, 2) blocks per replication, column 0 for the action draw of
the step and column 1 for the Brownian increment, so a single replication
consumes exactly the same numbers regardless of how many lanes run beside it.
SARSA draws its action at the *next* state (column 0 of the step belongs to
that draw, after one extra draw for the initial action); off-policy SARSA
samples the bracket action from its own stream so the observed data stay
shared across algorithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..envsim import LqCoefficients, RngStream, STATE_GUARD
from ..learners import sqrt_log_schedule
from .records import RunRecord

LOG_2PI = math.log(2.0 * math.pi)
_CHUNK = 32768

# Runaway parameters can freeze at huge finite values once the actor score
# underflows, so divergence cannot be detected from non-finiteness alone.
# Healthy parameter paths for this model stay in single digits (the largest
# legitimate value is the SARSA log-precision log(1/(gamma dt)) ~ 6.9 at
# dt=0.01); observed runaways freeze at 50+.
PARAM_GUARD = 25.0

ALGOS = ("qlearn-online", "sarsa", "pg")
MODES = ("on-policy", "off-policy")


@dataclass(frozen=True)
class ErgodicExperimentConfig:
    coef: LqCoefficients = LqCoefficients()
    gamma: float = 0.1
    dt: float = 0.1
    horizon: float = 1.0e5
    x0: float = 0.0
    alpha_theta: float = 0.001
    alpha_psi: float = 0.001
    alpha_v: float = 0.001
    alpha_phi: float = 0.001
    schedule: Callable[[float], float] = sqrt_log_schedule
    behavior_mean: float = 0.0
    behavior_var: float = 1.0
    pg_regularizer: str = "entropy"
    trace_points: int = 200

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0 or self.gamma <= 0:
            raise ValueError("dt, horizon and gamma must be positive")
        if self.behavior_var <= 0:
            raise ValueError("behavior variance must be positive")
        if self.pg_regularizer not in ("entropy", "sampled"):
            raise ValueError("pg_regularizer must be 'entropy' or 'sampled'")
        if int(round(self.horizon / self.dt)) < 1:
            raise ValueError("horizon shorter than one step")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


def _init_params(cfg: ErgodicExperimentConfig, algo: str, reps: int) -> dict:
    """All parameters start at zero except policy variances, which start at 1."""
    z = lambda: np.zeros(reps)
    if algo == "qlearn-online":
        return {"th1": z(), "th2": z(), "p1": z(), "p2": z(),
                "p3": np.full(reps, math.log(1.0 / cfg.gamma)), "V": z()}
    if algo == "sarsa":
        return {"s1": z(), "s2": z(),
                "s3": np.full(reps, math.log(1.0 / (cfg.gamma * cfg.dt))),
                "s4": z(), "s5": z(), "V": z()}
    if algo == "pg":
        return {"th1": z(), "th2": z(), "f1": z(), "f2": z(),
                "f3": np.full(reps, math.log(1.0 / cfg.gamma)), "V": z()}
    raise ValueError(f"unknown algo {algo!r}")


def run_ergodic_replications(cfg: ErgodicExperimentConfig, algo: str, mode: str,
                             master_seed: int, reps: int) -> List[RunRecord]:
    """Run `reps` independent replications in lockstep.

    Replication r draws its observed data from stream (r, 0) and any
    learner-private randomness from stream (r, 1).
    """
    data_streams = [RngStream(master_seed, (r, 0)) for r in range(reps)]
    learner_streams = [RngStream(master_seed, (r, 1)) for r in range(reps)]
    out = _drive(cfg, algo, mode, data_streams, learner_streams)
    records = []
    for r in range(reps):
        status = "ok" if out["div_step"][r] < 0 else "NA"
        final = {k: float(v[r]) for k, v in out["params"].items()}
        metrics = {}
        if status == "ok":
            metrics = dict(final)
            metrics["avg_reward"] = float(out["avg_reward"][r])
        records.append(RunRecord(
            algo=algo, mode=mode, replication=r, master_seed=master_seed,
            status=status,
            divergence_step=None if out["div_step"][r] < 0 else int(out["div_step"][r]),
            final_params=final,
            metrics=metrics,
            trace={k: v[:, r].tolist() for k, v in out["trace"].items()},
        ))
    return records


def run_ergodic(cfg: ErgodicExperimentConfig, algo: str, mode: str,
                rng: RngStream) -> RunRecord:
    """Single replication driven by an explicit stream (lane width one)."""
    out = _drive(cfg, algo, mode, [rng], [rng.child(1)])
    status = "ok" if out["div_step"][0] < 0 else "NA"
    final = {k: float(v[0]) for k, v in out["params"].items()}
    metrics = {}
    if status == "ok":
        metrics = dict(final)
        metrics["avg_reward"] = float(out["avg_reward"][0])
    rep_id = int(rng.stream_id[0]) if rng.stream_id else 0
    return RunRecord(
        algo=algo, mode=mode, replication=rep_id,
        master_seed=rng.master_seed, status=status,
        divergence_step=None if out["div_step"][0] < 0 else int(out["div_step"][0]),
        final_params=final, metrics=metrics,
        trace={k: v[:, 0].tolist() for k, v in out["trace"].items()},
    )


def _drive(cfg: ErgodicExperimentConfig, algo: str, mode: str,
           data_streams: Sequence[RngStream],
           learner_streams: Sequence[RngStream]) -> dict:
    if algo not in ALGOS:
        raise ValueError(f"algo must be one of {ALGOS}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    reps = len(data_streams)
    steps = cfg.steps
    dt = cfg.dt
    sqdt = math.sqrt(dt)
    gamma = cfg.gamma
    co = cfg.coef
    off_policy = (mode == "off-policy")
    b_mean, b_std = cfg.behavior_mean, math.sqrt(cfg.behavior_var)

    gens = [s.generator() for s in data_streams]
    lgens = [s.generator() for s in learner_streams]

    params = _init_params(cfg, algo, reps)
    x = np.full(reps, float(cfg.x0))
    reward_sum = np.zeros(reps)
    active = np.ones(reps, bool)
    act = np.ones(reps)
    div_step = np.full(reps, -1, dtype=np.int64)

    record_every = max(1, steps // max(1, cfg.trace_points))
    n_rec = steps // record_every
    trace_keys = ["t"] + list(params.keys()) + ["reward_avg"]
    trace = {k: np.empty((n_rec, reps)) for k in trace_keys}
    rec_i = 0

    a_cur = None
    if algo == "sarsa":
        z0 = np.array([g.standard_normal() for g in gens])
        mean0 = params["s1"] * x + params["s2"]
        std0 = np.sqrt(gamma * dt * np.exp(params["s3"]))
        a_cur = (b_mean + b_std * z0) if off_policy else (mean0 + std0 * z0)

    k = 0
    log_gamma = math.log(gamma)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        while k < steps:
            chunk = min(_CHUNK, steps - k)
            noise = np.stack([g.standard_normal((chunk, 2)) for g in gens], axis=-1)
            lnoise = None
            if algo == "sarsa" and off_policy:
                lnoise = np.stack([g.standard_normal(chunk) for g in lgens], axis=-1)
            lvals = np.array([cfg.schedule((k + i) * dt) for i in range(chunk)])
            for i in range(chunk):
                z0 = noise[i, 0]
                z1 = noise[i, 1]
                l = lvals[i]
                if algo == "qlearn-online":
                    p1, p2, p3 = params["p1"], params["p2"], params["p3"]
                    th1, th2, V = params["th1"], params["th2"], params["V"]
                    if off_policy:
                        a = b_mean + b_std * z0
                        dev = a - (p1 * x + p2)
                    else:
                        std = np.sqrt(gamma * np.exp(p3))
                        a = p1 * x + p2 + std * z0
                        dev = a - (p1 * x + p2)
                    x2 = x + (co.A * x + co.B * a) * dt + (co.C * x + co.D * a) * sqdt * z1
                    r = -(0.5 * co.M * x * x + co.R * x * a + 0.5 * co.N * a * a
                          + co.P * x + co.Q * a)
                    ep3 = np.exp(-p3)
                    qv = -0.5 * ep3 * dev * dev - 0.5 * gamma * (LOG_2PI + log_gamma + p3)
                    delta = (th1 * x2 * x2 + th2 * x2) - (th1 * x * x + th2 * x) \
                        + (r - qv) * dt - V * dt
                    pmag = np.maximum.reduce([np.abs(p1), np.abs(p2), np.abs(p3),
                                              np.abs(th1), np.abs(th2), np.abs(V)])
                    bad = ~np.isfinite(x2) | (np.abs(x2) > STATE_GUARD) \
                        | ~np.isfinite(delta) | (pmag > PARAM_GUARD)
                    if bad.any():
                        newly = bad & active
                        div_step[newly] = k + i
                        active &= ~bad
                        act = active.astype(float)
                        x2 = np.where(active, x2, 0.0)
                        delta = np.where(active, delta, 0.0)
                        r = np.where(active, r, 0.0)
                    da = delta * act
                    params["th1"] = th1 + (l * cfg.alpha_theta) * da * x * x
                    params["th2"] = th2 + (l * cfg.alpha_theta) * da * x
                    params["p1"] = p1 + (l * cfg.alpha_psi) * da * (ep3 * dev * x)
                    params["p2"] = p2 + (l * cfg.alpha_psi) * da * (ep3 * dev)
                    params["p3"] = p3 + (l * cfg.alpha_psi) * da * (0.5 * ep3 * dev * dev - 0.5 * gamma)
                    params["V"] = V + (l * cfg.alpha_v) * da
                    if not active.all():
                        # dead lanes can produce 0 * inf above; hold them at
                        # their frozen values exactly
                        for key, old in (("th1", th1), ("th2", th2), ("p1", p1),
                                         ("p2", p2), ("p3", p3), ("V", V)):
                            params[key] = np.where(active, params[key], old)
                elif algo == "sarsa":
                    s1, s2, s3 = params["s1"], params["s2"], params["s3"]
                    s4, s5, V = params["s4"], params["s5"], params["V"]
                    a = a_cur
                    x2 = x + (co.A * x + co.B * a) * dt + (co.C * x + co.D * a) * sqdt * z1
                    r = -(0.5 * co.M * x * x + co.R * x * a + 0.5 * co.N * a * a
                          + co.P * x + co.Q * a)
                    var_next = gamma * dt * np.exp(s3)
                    mean_next = s1 * x2 + s2
                    if off_policy:
                        a2 = b_mean + b_std * lnoise[i]
                    else:
                        a2 = mean_next + np.sqrt(var_next) * z0
                    es3 = np.exp(-s3)
                    dev = a - (s1 * x + s2)
                    dev2 = a2 - mean_next
                    q_now = -0.5 * es3 * dev * dev + s4 * x * x + s5 * x
                    q_next = -0.5 * es3 * dev2 * dev2 + s4 * x2 * x2 + s5 * x2
                    logp = -0.5 * dev2 * dev2 / var_next - 0.5 * np.log(2.0 * np.pi * var_next)
                    bracket = q_next - gamma * logp * dt - q_now + r * dt - V * dt
                    pmag = np.maximum.reduce([np.abs(s1), np.abs(s2), np.abs(s3),
                                              np.abs(s4), np.abs(s5), np.abs(V)])
                    bad = ~np.isfinite(x2) | (np.abs(x2) > STATE_GUARD) | ~np.isfinite(bracket) \
                        | ~np.isfinite(a2) | (pmag > PARAM_GUARD)
                    if bad.any():
                        newly = bad & active
                        div_step[newly] = k + i
                        active &= ~bad
                        act = active.astype(float)
                        x2 = np.where(active, x2, 0.0)
                        a2 = np.where(active, a2, 0.0)
                        bracket = np.where(active, bracket, 0.0)
                        r = np.where(active, r, 0.0)
                    ba = bracket * act
                    params["s1"] = s1 + (l * cfg.alpha_psi) * ba * (es3 * dev * x)
                    params["s2"] = s2 + (l * cfg.alpha_psi) * ba * (es3 * dev)
                    params["s3"] = s3 + (l * cfg.alpha_psi) * ba * (0.5 * es3 * dev * dev)
                    params["s4"] = s4 + (l * cfg.alpha_psi) * ba * x * x
                    params["s5"] = s5 + (l * cfg.alpha_psi) * ba * x
                    params["V"] = V + (l * cfg.alpha_v) * ba
                    if not active.all():
                        # dead lanes can produce 0 * inf above; hold them at
                        # their frozen values exactly
                        for key, old in (("s1", s1), ("s2", s2), ("s3", s3),
                                         ("s4", s4), ("s5", s5), ("V", V)):
                            params[key] = np.where(active, params[key], old)
                    a_cur = a2
                else:  # pg
                    f1, f2, f3 = params["f1"], params["f2"], params["f3"]
                    th1, th2, V = params["th1"], params["th2"], params["V"]
                    mean = f1 * x + f2
                    if off_policy:
                        a = b_mean + b_std * z0
                    else:
                        std = np.sqrt(gamma * np.exp(f3))
                        a = mean + std * z0
                    dev = a - mean
                    x2 = x + (co.A * x + co.B * a) * dt + (co.C * x + co.D * a) * sqdt * z1
                    r = -(0.5 * co.M * x * x + co.R * x * a + 0.5 * co.N * a * a
                          + co.P * x + co.Q * a)
                    ef3 = np.exp(-f3) / gamma
                    if cfg.pg_regularizer == "entropy":
                        # exploration bonus enters as the policy's entropy,
                        # not the sampled log-density; the delta then carries
                        # no action-dependent regularizer term
                        reg = 0.5 * gamma * (LOG_2PI + 1.0 + log_gamma + f3)
                    else:
                        logp = -0.5 * dev * dev * ef3 - 0.5 * (LOG_2PI + log_gamma + f3)
                        reg = -gamma * logp
                    delta = (th1 * x2 * x2 + th2 * x2) - (th1 * x * x + th2 * x) \
                        + (r + reg) * dt - V * dt
                    pmag = np.maximum.reduce([np.abs(f1), np.abs(f2), np.abs(f3),
                                              np.abs(th1), np.abs(th2), np.abs(V)])
                    bad = ~np.isfinite(x2) | (np.abs(x2) > STATE_GUARD) \
                        | ~np.isfinite(delta) | ~np.isfinite(f1 + f2 + f3) \
                        | (pmag > PARAM_GUARD)
                    if bad.any():
                        newly = bad & active
                        div_step[newly] = k + i
                        active &= ~bad
                        act = active.astype(float)
                        x2 = np.where(active, x2, 0.0)
                        delta = np.where(active, delta, 0.0)
                        r = np.where(active, r, 0.0)
                    da = delta * act
                    params["th1"] = th1 + (l * cfg.alpha_theta) * da * x * x
                    params["th2"] = th2 + (l * cfg.alpha_theta) * da * x
                    params["f1"] = f1 + (l * cfg.alpha_phi) * da * (ef3 * dev * x)
                    params["f2"] = f2 + (l * cfg.alpha_phi) * da * (ef3 * dev)
                    params["f3"] = f3 + (l * cfg.alpha_phi) * da * 0.5 * (ef3 * dev * dev - 1.0)
                    params["V"] = V + (l * cfg.alpha_v) * da
                    if not active.all():
                        # dead lanes can produce 0 * inf above; hold them at
                        # their frozen values exactly
                        for key, old in (("th1", th1), ("th2", th2), ("f1", f1),
                                         ("f2", f2), ("f3", f3), ("V", V)):
                            params[key] = np.where(active, params[key], old)
                reward_sum += r * act * dt
                x = x2
                kk = k + i + 1
                if kk % record_every == 0 and rec_i < n_rec:
                    t_now = kk * dt
                    trace["t"][rec_i] = t_now
                    for key in params:
                        trace[key][rec_i] = params[key]
                    with np.errstate(invalid="ignore"):
                        trace["reward_avg"][rec_i] = np.where(
                            active, reward_sum / t_now, np.nan)
                    rec_i += 1
            k += chunk
            if not active.any():
                break

    avg = np.where(active, reward_sum / (steps * dt), np.nan)
    return {"params": params, "avg_reward": avg, "div_step": div_step,
            "trace": {k2: v[:rec_i] for k2, v in trace.items()}}


def running_average_reward(rewards: np.ndarray, dt: float, every: int = 1):
    """Cumulative time-average of reward-rate samples on the grid.

    Returns (times, averages) downsampled to every `every`-th step.
    """
    rewards = np.asarray(rewards, float)
    n = rewards.size
    if n == 0:
        raise ValueError("empty reward sequence")
    avg = np.cumsum(rewards) / np.arange(1, n + 1)
    times = dt * np.arange(1, n + 1)
    return times[every - 1::every], avg[every - 1::every]
