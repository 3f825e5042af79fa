"""Parameter identification: gradient refinement through the frozen surrogate,
a Metropolis simulated-annealing baseline over true-simulator replays, and
head-to-head evaluation.

The cost asymmetry is the point: annealing pays for a full-episode simulator
replay at every one of its steps, while refinement touches the simulator only
through the dataset generated once for surrogate training.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import datagen, surrogate
from .metrics import TrajErrorReport
from .plant import ParamBounds, PhysParams, PlantConfig, fk_positions, rollout

_MAX_FROB = 2.0 * np.sqrt(2.0)


@dataclass(frozen=True)
class RefineConfig:
    learning_rate: float = 0.001
    max_steps: int = 500
    init: str = "best-sampled"  # or "bounds-midpoint"
    convergence_tol: float = 1e-8
    convergence_window: int = 20
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    bounds: ParamBounds = field(default_factory=ParamBounds)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_steps < 1:
            raise ValueError("invalid refinement configuration")
        if self.init not in ("best-sampled", "bounds-midpoint"):
            raise ValueError(f"unknown init mode {self.init!r}")


@dataclass(frozen=True)
class AnnealConfig:
    steps: int = 400
    initial_temperature: float = 1.0
    cooling_gamma: float = 0.99
    proposal_frac: float = 0.1  # proposal std as a fraction of each bound range
    seed: int = 0
    bounds: ParamBounds = field(default_factory=ParamBounds)

    def __post_init__(self):
        if self.steps < 1 or not (0 < self.cooling_gamma < 1):
            raise ValueError("invalid annealing configuration")
        if self.initial_temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class IdentifyReport:
    method: str
    params: PhysParams
    trajectory_error: float
    rotation_error: float
    translation_error: float
    wall_clock_seconds: float
    param_recovery_error: tuple = None  # per-coordinate relative error vs truth


# --- shared plumbing ---------------------------------------------------------

def _episode_tensors(episodes):
    q, qd, acts, nq, nqd = datagen.episode_arrays(episodes)
    return q, qd, np.hstack([q, qd, acts]), np.hstack([nq, nqd])


def planar_pose_errors(q_pred_seq, q_obs_seq, cfg):
    """Mean translation and rotation error between two (T, N) joint-angle
    sequences, through planar forward kinematics.

    For rotations about a single fixed axis the Frobenius-norm identity
    ||Rz(a) - Rz(b)||_F = 2*sqrt(2)*|sin((a-b)/2)| makes the arcsin metric
    computable from the cumulative angles directly. Tests pin this against
    the matrix-based metrics module.
    """
    pos_p, ang_p = fk_positions(q_pred_seq, cfg)
    pos_o, ang_o = fk_positions(q_obs_seq, cfg)
    trans = float(np.mean(np.linalg.norm(pos_p - pos_o, axis=1)))
    arg = np.clip(np.abs(np.sin((ang_p - ang_o) / 2.0)), 0.0, 1.0)
    rot = float(np.mean(np.arcsin(arg)))
    return trans, rot


def make_replay_energy(episodes, plant_cfg):
    """Annealing energy: trajectory error of a teacher-forced one-step replay
    of every episode under the candidate parameters. The episode tensors are
    assembled once and captured."""
    q, qd, acts, nq, _ = datagen.episode_arrays(episodes)

    def energy(fpd):
        rows = np.broadcast_to(np.asarray(fpd, dtype=float), (len(q), 3))
        pred_q, _ = datagen.teacher_forced_next(rows, q, qd, acts, plant_cfg)
        trans, rot = planar_pose_errors(pred_q, nq, plant_cfg)
        return trans + rot

    return energy


def replay_energy(fpd, episodes, plant_cfg):
    return make_replay_energy(episodes, plant_cfg)(fpd)


# --- gradient refinement -----------------------------------------------------

def minimize_projected_adam(objective, u0, lr, max_steps, tol, window,
                            beta1=0.9, beta2=0.999, eps=1e-8):
    """Adam in the unit cube with projection after every step.

    objective(u) -> (loss, grad). Returns (best u, loss curve); on exact loss
    ties the earliest iterate wins.
    """
    u = np.clip(np.asarray(u0, dtype=float), 0.0, 1.0)
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    curve = []
    best_u, best_loss = u.copy(), np.inf
    for t in range(1, max_steps + 1):
        loss, grad = objective(u)
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite refinement loss at step {t}")
        curve.append(loss)
        if loss < best_loss:
            best_loss, best_u = loss, u.copy()
        if len(curve) > window and abs(curve[-1] - curve[-1 - window]) < tol:
            break
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad ** 2
        u = u - lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
        u = np.clip(u, 0.0, 1.0)
    return best_u, curve


def refine_params(model, episodes, cfg: RefineConfig, candidates=None):
    """Minimize the surrogate prediction error on real transitions over
    (f, p, d) only, weights frozen. Optimization runs in min-max-normalized
    parameter coordinates so Adam steps are comparable across coordinates.

    candidates: optional parameter sets used by the "best-sampled" init.
    Returns (identified PhysParams, loss curve).
    """
    if not episodes.episodes:
        raise ValueError("no episodes to refine against")
    _, _, state_sa, next_raw = _episode_tensors(episodes)

    def objective(u):
        fpd = surrogate.unit_to_params(u[None, :], cfg.bounds)[0]
        return surrogate.param_loss_and_grad(model, fpd, state_sa, next_raw)

    if cfg.init == "best-sampled" and candidates:
        losses = [surrogate.param_loss_and_grad(
            model, c.as_array(), state_sa, next_raw)[0] for c in candidates]
        start = candidates[int(np.argmin(losses))].as_array()
    else:
        start = (cfg.bounds.lows() + cfg.bounds.highs()) / 2.0
    u0 = surrogate.params_to_unit(start[None, :], cfg.bounds)[0]
    best_u, curve = minimize_projected_adam(
        objective, u0, cfg.learning_rate, cfg.max_steps,
        cfg.convergence_tol, cfg.convergence_window,
        cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    fpd = surrogate.unit_to_params(best_u[None, :], cfg.bounds)[0]
    return PhysParams.from_array(cfg.bounds.clip(fpd)), curve


# --- simulated annealing baseline -------------------------------------------

def anneal_params(episodes, cfg: AnnealConfig, plant_cfg: PlantConfig,
                  energy_fn=None):
    """Metropolis annealing with Gaussian proposals clipped to bounds and a
    geometric cooling schedule. Returns (best-ever params, energy curve)."""
    if not episodes.episodes and energy_fn is None:
        raise ValueError("no episodes to anneal against")
    if energy_fn is None:
        energy_fn = make_replay_energy(episodes, plant_cfg)
    rng = np.random.default_rng(cfg.seed)
    lows, highs = cfg.bounds.lows(), cfg.bounds.highs()
    prop_std = cfg.proposal_frac * (highs - lows)
    current = (lows + highs) / 2.0
    e_current = energy_fn(current)
    if not np.isfinite(e_current):
        raise RuntimeError("non-finite annealing energy at initialization")
    best, e_best = current.copy(), e_current
    curve = [e_current]
    temperature = cfg.initial_temperature
    for _ in range(cfg.steps):
        candidate = np.clip(current + rng.normal(0.0, 1.0, 3) * prop_std,
                            lows, highs)
        e_cand = energy_fn(candidate)
        if not np.isfinite(e_cand):
            raise RuntimeError("non-finite annealing energy")
        delta = e_cand - e_current
        if delta < 0 or rng.random() < np.exp(-delta / temperature):
            current, e_current = candidate, e_cand
            if e_current < e_best:  # strict: earliest wins on ties
                best, e_best = current.copy(), e_current
        curve.append(e_best)
        temperature *= cfg.cooling_gamma
    return PhysParams.from_array(best), curve


# --- evaluation and comparison ----------------------------------------------

def evaluate_params(params: PhysParams, episodes, plant_cfg: PlantConfig):
    """Open-loop rollout per episode under `params`; pose errors of simulated
    vs observed sequences, averaged across episodes."""
    if not episodes.episodes:
        raise ValueError("no evaluation episodes")
    trans_all, rot_all = [], []
    for ep in episodes.episodes:
        traj = rollout(params, ep.init, list(ep.actions), plant_cfg)
        q_sim = np.array([s.q for s in traj.states])
        q_obs = np.array([s.q for s in ep.observed])
        trans, rot = planar_pose_errors(q_sim, q_obs, plant_cfg)
        trans_all.append(trans)
        rot_all.append(rot)
    trans = float(np.mean(trans_all))
    rot = float(np.mean(rot_all))
    return TrajErrorReport(trans + rot, rot, trans)


def recovery_error(params: PhysParams, truth: PhysParams):
    t = truth.as_array()
    denom = np.where(np.abs(t) > 0, np.abs(t), 1.0)
    return tuple(np.abs(params.as_array() - t) / denom)


@dataclass(frozen=True)
class GradPipelineConfig:
    n_param_sets: int = 50
    sample_seed: int = 1
    train: surrogate.TrainConfig = field(default_factory=surrogate.TrainConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    hidden_width: int = 128
    init_seed: int = 2


def run_gradient_pipeline(episodes, plant_cfg, cfg: GradPipelineConfig):
    """Full surrogate route: sample parameter sets, generate the transition
    dataset, train the surrogate, refine. Returns (params, details dict)."""
    bounds = cfg.refine.bounds
    candidates = datagen.sample_params(cfg.n_param_sets, bounds, cfg.sample_seed)
    data = datagen.generate_transition_arrays(episodes, candidates, plant_cfg)
    stats = datagen.compute_norm_stats(data)
    model = surrogate.init(
        surrogate.default_layer_dims(plant_cfg.n_joints, cfg.hidden_width),
        cfg.init_seed, norm_stats=stats, bounds=bounds)
    model = surrogate.train(model, data, cfg.train)
    params, curve = refine_params(model, episodes, cfg.refine, candidates)
    return params, {"model": model, "loss_curve": curve,
                    "candidates": candidates, "dataset_rows": len(data)}


def compare(train_episodes, eval_episodes, plant_cfg, grad_cfg: GradPipelineConfig,
            anneal_cfg: AnnealConfig, truth: PhysParams = None):
    """Run both pipelines on identical episodes and report side by side.

    Wall clock covers data preparation plus parameter optimization for each
    method, excluding evaluation.
    """
    reports = []

    t0 = time.perf_counter()
    sa_params, _ = anneal_params(train_episodes, anneal_cfg, plant_cfg)
    sa_time = time.perf_counter() - t0
    err = evaluate_params(sa_params, eval_episodes, plant_cfg)
    reports.append(IdentifyReport(
        "sa", sa_params, err.trajectory_error, err.rotation_error,
        err.translation_error, sa_time,
        recovery_error(sa_params, truth) if truth else None))

    t0 = time.perf_counter()
    grad_params, _ = run_gradient_pipeline(train_episodes, plant_cfg, grad_cfg)
    grad_time = time.perf_counter() - t0
    err = evaluate_params(grad_params, eval_episodes, plant_cfg)
    reports.append(IdentifyReport(
        "grad", grad_params, err.trajectory_error, err.rotation_error,
        err.translation_error, grad_time,
        recovery_error(grad_params, truth) if truth else None))
    return reports
