"""PD-controlled planar N-joint arm used as both simulator and stand-in for
the real robot.

Each joint is a decoupled double integrator driven by a PD controller toward
a commanded target angle, plus smoothed Coulomb friction:

    tau_i = p * (target_i - q_i) - d * qd_i - f * tanh(qd_i / eps_v)

integrated with semi-implicit Euler (velocity first, then position) for a
fixed number of substeps per action. The three scalars (f, p, d) are shared
across joints and are the quantities the identification pipeline recovers.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backend


@dataclass(frozen=True)
class ParamBounds:
    f_min: float = 0.0
    f_max: float = 10.0
    p_min: float = 1.0
    p_max: float = 500.0
    d_min: float = 0.1
    d_max: float = 50.0

    def __post_init__(self):
        for lo, hi, name in ((self.f_min, self.f_max, "f"),
                             (self.p_min, self.p_max, "p"),
                             (self.d_min, self.d_max, "d")):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValueError(f"non-finite bounds for {name}")
            if lo > hi:
                raise ValueError(f"empty bound interval for {name}: [{lo}, {hi}]")

    def lows(self):
        return np.array([self.f_min, self.p_min, self.d_min])

    def highs(self):
        return np.array([self.f_max, self.p_max, self.d_max])

    def clip(self, vec):
        return np.clip(vec, self.lows(), self.highs())


@dataclass(frozen=True)
class PhysParams:
    """Friction magnitude f (N·m), stiffness p (N·m/rad), damping d (N·m·s/rad)."""

    f: float
    p: float
    d: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.f, self.p, self.d)):
            raise ValueError("non-finite physical parameter")
        if self.f < 0 or self.p < 0 or self.d < 0:
            raise ValueError(f"invalid parameters f={self.f} p={self.p} d={self.d}")

    def as_array(self):
        return np.array([self.f, self.p, self.d], dtype=float)

    @staticmethod
    def from_array(vec):
        return PhysParams(float(vec[0]), float(vec[1]), float(vec[2]))

    def within(self, bounds: ParamBounds, tol: float = 0.0) -> bool:
        v = self.as_array()
        return bool(np.all(v >= bounds.lows() - tol) and np.all(v <= bounds.highs() + tol))


@dataclass(frozen=True)
class PlantConfig:
    n_joints: int = 2
    link_lengths: tuple = None
    inertias: tuple = None
    dt: float = 0.01
    substeps_per_action: int = 5
    friction_smoothing: float = 0.01
    obs_noise_std: float = 0.0

    def __post_init__(self):
        if self.n_joints < 1:
            raise ValueError("n_joints must be >= 1")
        if self.dt <= 0 or self.substeps_per_action < 1 or self.friction_smoothing <= 0:
            raise ValueError("invalid integration settings")
        if self.link_lengths is None:
            object.__setattr__(self, "link_lengths", (1.0,) * self.n_joints)
        if self.inertias is None:
            object.__setattr__(self, "inertias", (1.0,) * self.n_joints)
        if len(self.link_lengths) != self.n_joints or len(self.inertias) != self.n_joints:
            raise ValueError("link_lengths/inertias length must match n_joints")
        if any(v <= 0 for v in self.link_lengths) or any(v <= 0 for v in self.inertias):
            raise ValueError("link lengths and inertias must be positive")
        if self.obs_noise_std < 0:
            raise ValueError("obs_noise_std must be >= 0")

    def inv_inertia(self):
        return 1.0 / np.asarray(self.inertias, dtype=float)


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        q = np.ascontiguousarray(self.q, dtype=float)
        qd = np.ascontiguousarray(self.qd, dtype=float)
        if q.ndim != 1 or qd.shape != q.shape:
            raise ValueError("q and qd must be 1-D and equally sized")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("non-finite joint state")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)

    def as_vector(self):
        return np.concatenate([self.q, self.qd])


@dataclass(frozen=True)
class Action:
    target_q: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.target_q, dtype=float)
        if t.ndim != 1 or not np.all(np.isfinite(t)):
            raise ValueError("target_q must be a finite 1-D vector")
        object.__setattr__(self, "target_q", t)


@dataclass(frozen=True)
class EePose:
    """End-effector position x in R^3 and rotation matrix R in SO(3)."""

    x: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if x.shape != (3,) or R.shape != (3, 3):
            raise ValueError("pose must be (3,) position and (3,3) rotation")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(R))):
            raise ValueError("non-finite pose")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    actions: tuple
    poses: tuple

    def __post_init__(self):
        if len(self.actions) < 1:
            raise ValueError("trajectory needs at least one action")
        if len(self.states) != len(self.actions) + 1 or len(self.poses) != len(self.states):
            raise ValueError("inconsistent trajectory lengths")

    @property
    def horizon(self):
        return len(self.actions)


def _check_dims(params, state, action, cfg):
    n = cfg.n_joints
    if state.q.shape[0] != n or action.target_q.shape[0] != n:
        raise ValueError(f"dimension mismatch: expected {n} joints")


def step_batch(params_fpd, q, qd, target, cfg: PlantConfig):
    """Advance a (B, N) batch one action through the active kernel, in place.

    params_fpd is (B, 3) with columns f, p, d.
    """
    params_fpd = np.asarray(params_fpd, dtype=float)
    backend.substep_batch(q, qd, target,
                          np.ascontiguousarray(params_fpd[:, 0]),
                          np.ascontiguousarray(params_fpd[:, 1]),
                          np.ascontiguousarray(params_fpd[:, 2]),
                          cfg.inv_inertia(), cfg.dt,
                          cfg.substeps_per_action, cfg.friction_smoothing)


def step(params: PhysParams, state: JointState, action: Action, cfg: PlantConfig) -> JointState:
    """One control step: substeps_per_action semi-implicit Euler substeps."""
    _check_dims(params, state, action, cfg)
    q = state.q.copy()[None, :]
    qd = state.qd.copy()[None, :]
    target = np.ascontiguousarray(action.target_q[None, :])
    step_batch(params.as_array()[None, :], q, qd, target, cfg)
    return JointState(q[0], qd[0])


def fk(q, cfg: PlantConfig) -> EePose:
    """Planar forward kinematics: cumulative joint angles along the chain."""
    q = np.asarray(q, dtype=float)
    if q.shape != (cfg.n_joints,):
        raise ValueError("fk: wrong joint dimension")
    if not np.all(np.isfinite(q)):
        raise ValueError("fk: non-finite input")
    theta = np.cumsum(q)
    L = np.asarray(cfg.link_lengths)
    x = np.array([np.sum(L * np.cos(theta)), np.sum(L * np.sin(theta)), 0.0])
    return EePose(x, _rot_z(theta[-1]))


def fk_positions(q_seq, cfg: PlantConfig):
    """Vectorized fk over a (T, N) array of joint angles.

    Returns positions (T, 3) and terminal cumulative angles (T,).
    """
    q_seq = np.asarray(q_seq, dtype=float)
    theta = np.cumsum(q_seq, axis=1)
    L = np.asarray(cfg.link_lengths)
    xy = np.stack([np.sum(L * np.cos(theta), axis=1),
                   np.sum(L * np.sin(theta), axis=1)], axis=1)
    pos = np.concatenate([xy, np.zeros((len(q_seq), 1))], axis=1)
    return pos, theta[:, -1]


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def fk_poses(q_seq, cfg: PlantConfig):
    """fk over a (T, N) array, returning a list of EePose."""
    pos, ang = fk_positions(q_seq, cfg)
    return [EePose(pos[i], _rot_z(ang[i])) for i in range(len(pos))]


def rollout(params: PhysParams, init: JointState, actions, cfg: PlantConfig,
            noise_seed=None) -> Trajectory:
    """Chain step() over an action sequence; poses via fk.

    With obs_noise_std > 0 and a seed, i.i.d. Gaussian noise is added to the
    recorded states only; the dynamics stay noise-free.
    """
    if len(actions) < 1:
        raise ValueError("rollout needs a non-empty action sequence")
    _check_dims(params, init, actions[0], cfg)
    q = init.q.copy()[None, :]
    qd = init.qd.copy()[None, :]
    fpd = params.as_array()[None, :]
    q_rec = [init.q.copy()]
    qd_rec = [init.qd.copy()]
    for a in actions:
        step_batch(fpd, q, qd, np.ascontiguousarray(a.target_q[None, :]), cfg)
        q_rec.append(q[0].copy())
        qd_rec.append(qd[0].copy())
    q_rec = np.array(q_rec)
    qd_rec = np.array(qd_rec)
    if cfg.obs_noise_std > 0 and noise_seed is not None:
        rng = np.random.default_rng(noise_seed)
        q_rec = q_rec + rng.normal(0.0, cfg.obs_noise_std, q_rec.shape)
        qd_rec = qd_rec + rng.normal(0.0, cfg.obs_noise_std, qd_rec.shape)
    states = tuple(JointState(q_rec[i], qd_rec[i]) for i in range(len(q_rec)))
    poses = tuple(fk_poses(q_rec, cfg))
    return Trajectory(states, tuple(actions), poses)
