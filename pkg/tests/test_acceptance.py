"""Acceptance suite: end-to-end recovery, speedup comparison, analytic
oracles, finite-difference gradient suites, preference-loss identities,
preference-tuning improvement, annealing oracle, and artifact determinism.

The full-scale identification run (criteria 1-2) executes the real CLI once
per session; the remaining criteria are self-contained and fast.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from armcal import datagen, metrics, serialize, surrogate
from armcal.cli import main
from armcal.identify import (AnnealConfig, anneal_params, evaluate_params,
                             recovery_error)
from armcal.plant import (Action, EePose, JointState, ParamBounds, PhysParams,
                          PlantConfig, Trajectory, fk)
from armcal.surrogate import NormStats, backprop
from armcal.tpo import (PreferencePair, RankedTrajectory, TpoConfig,
                        init_policy, rollout_policy, run_tpo, tpo_loss)

TRUTH = PhysParams(8.0, 300.0, 20.0)
RUN_SEED = 0
BOUNDS = ParamBounds()


# --- full-scale pipeline run (criteria 1 and 2) -----------------------------

@pytest.fixture(scope="session")
def full_run(tmp_path_factory):
    """Default-scale datagen + identify --method both through the CLI;
    returns artifact dir, per-method report rows, and wall-clock."""
    out = tmp_path_factory.mktemp("full_run")
    t0 = time.perf_counter()
    assert main(["--out", str(out), "--seed", str(RUN_SEED),
                 "--set", "datagen.truth=[8.0,300.0,20.0]",
                 "datagen"]) == 0
    assert main(["--out", str(out), "--seed", str(RUN_SEED),
                 "identify", "--method", "both"]) == 0
    wall = time.perf_counter() - t0
    rows = {}
    lines = (out / "identify_report.csv").read_text().splitlines()
    header = lines[0].split(",")
    for line in lines[1:]:
        vals = line.split(",")
        rows[vals[0]] = {k: v for k, v in zip(header[1:], vals[1:])}
    return {"out": out, "rows": rows, "wall": wall}


def _holdout_split(episodes, fraction=0.25):
    n = len(episodes.episodes)
    n_eval = max(1, int(round(n * fraction)))
    return datagen.EpisodeSet(episodes.episodes[n - n_eval:], episodes.source)


class TestGroundTruthRecovery:
    def test_per_coordinate_relative_error(self, full_run):
        rec = json.loads((full_run["out"] / "recovery_error.json").read_text())
        for name, err in zip(("f", "p", "d"), rec["grad"]):
            assert err <= 0.10, f"{name} relative error {err}"

    def test_trajectory_error_vs_truth(self, full_run):
        out = full_run["out"]
        cfg = PlantConfig()
        episodes = serialize.episodes_from_json(
            serialize.load_json(out / "episodes.json"))
        eval_eps = _holdout_split(episodes)
        doc = serialize.load_json(out / "identified_params.json")
        ident = PhysParams(doc["f"], doc["p"], doc["d"])
        e_ident = evaluate_params(ident, eval_eps, cfg).trajectory_error
        e_truth = evaluate_params(TRUTH, eval_eps, cfg).trajectory_error
        assert e_ident <= 1.2 * e_truth + 1e-9

    def test_runtime_within_ten_minutes(self, full_run):
        assert full_run["wall"] <= 600.0, f"took {full_run['wall']:.1f}s"


class TestSpeedupProperty:
    def test_gradient_pipeline_faster_than_annealing(self, full_run):
        t_grad = float(full_run["rows"]["grad"]["time_s"])
        t_sa = float(full_run["rows"]["sa"]["time_s"])
        assert t_grad <= t_sa / 5.0, (
            f"gradient {t_grad:.1f}s vs annealing {t_sa:.1f}s")

    def test_gradient_trajectory_error_competitive(self, full_run):
        e_grad = float(full_run["rows"]["grad"]["traj_err"])
        e_sa = float(full_run["rows"]["sa"]["traj_err"])
        assert e_grad <= 1.1 * e_sa + 1e-12


# --- rotation-metric analytic oracle (criterion 3) --------------------------

def _rodrigues(axis, phi):
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(phi) * K + (1 - math.cos(phi)) * (K @ K)


class TestRotationOracle:
    def test_thousand_random_single_axis_rotations(self):
        rng = np.random.default_rng(3)
        x = np.zeros(3)
        for _ in range(1000):
            phi = rng.uniform(0.0, math.pi)
            axis = rng.normal(size=3)
            base = _rodrigues(rng.normal(size=3), rng.uniform(0, 2 * math.pi))
            pred = [EePose(x, base)]
            gt = [EePose(x, base @ _rodrigues(axis, phi))]
            got = metrics.rotation_error(pred, gt)
            assert abs(got - phi / 2.0) <= 1e-9


# --- finite-difference gradient suites (criterion 4) ------------------------

def _central_fd(fun, view, eps=1e-6):
    g = np.zeros_like(view)
    flat, gflat = view.ravel(), g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = fun()
        flat[i] = old - eps
        lo = fun()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def _random_model(seed, dims=(9, 8, 8, 4)):
    return surrogate.init(dims, seed)


class TestGradientSuites:
    def test_surrogate_weight_gradients(self):
        rng = np.random.default_rng(40)
        model = _random_model(41)
        checked = 0
        for _ in range(110):
            X = rng.normal(size=(3, 9))
            Y = rng.normal(size=(3, 4))
            _, dWs, dbs, _ = backprop(model, X, Y)
            layer = rng.integers(0, 3)
            W = model.weights[layer]
            i, j = rng.integers(0, W.shape[0]), rng.integers(0, W.shape[1])
            fd = _central_fd(lambda: backprop(model, X, Y)[0],
                             W[i:i + 1, j:j + 1])[0, 0]
            denom = max(abs(fd), abs(dWs[layer][i, j]), 1e-8)
            assert abs(dWs[layer][i, j] - fd) / denom <= 1e-4
            b = model.biases[layer]
            k = rng.integers(0, b.shape[0])
            fdb = _central_fd(lambda: backprop(model, X, Y)[0], b[k:k + 1])[0]
            denomb = max(abs(fdb), abs(dbs[layer][k]), 1e-8)
            assert abs(dbs[layer][k] - fdb) / denomb <= 1e-4
            checked += 1
        assert checked >= 100

    def test_surrogate_input_gradients(self):
        rng = np.random.default_rng(42)
        model = _random_model(43)
        checked = 0
        for _ in range(110):
            X = rng.normal(size=(2, 9))
            Y = rng.normal(size=(2, 4))
            _, _, _, dX = backprop(model, X, Y)
            r, c = rng.integers(0, 2), rng.integers(0, 9)
            fd = _central_fd(lambda: backprop(model, X, Y)[0],
                             X[r:r + 1, c:c + 1])[0, 0]
            denom = max(abs(fd), abs(dX[r, c]), 1e-8)
            assert abs(dX[r, c] - fd) / denom <= 1e-4
            checked += 1
        assert checked >= 100

    def test_preference_loss_policy_gradients(self):
        rng = np.random.default_rng(44)
        cfg = PlantConfig()
        params = PhysParams(2.0, 120.0, 7.0)
        goal = np.array([1.2, 0.8])
        pol = init_policy(2, hidden=(6, 6), seed=45)
        ref = init_policy(2, hidden=(6, 6), seed=46)
        trajs = [rollout_policy(pol, params, goal, cfg, 4,
                                np.random.default_rng(s)) for s in range(8)]
        checked = 0
        for _ in range(100):
            i, j = rng.choice(8, size=2, replace=False)
            a, b = trajs[i], trajs[j]
            chosen, rejected = (a, b) if a.reward >= b.reward else (b, a)
            pairs = [PreferencePair(chosen, rejected)]
            _, dWs, dbs = tpo_loss(pol, ref, pairs, beta=0.7)
            layer = rng.integers(0, 3)
            W = pol.weights[layer]
            r, c = rng.integers(0, W.shape[0]), rng.integers(0, W.shape[1])
            fd = _central_fd(
                lambda: tpo_loss(pol, ref, pairs, beta=0.7)[0],
                W[r:r + 1, c:c + 1])[0, 0]
            denom = max(abs(fd), abs(dWs[layer][r, c]), 1e-8)
            assert abs(dWs[layer][r, c] - fd) / denom <= 1e-4
            bvec = pol.biases[layer]
            k = rng.integers(0, bvec.shape[0])
            fdb = _central_fd(
                lambda: tpo_loss(pol, ref, pairs, beta=0.7)[0],
                bvec[k:k + 1])[0]
            denomb = max(abs(fdb), abs(dbs[layer][k]), 1e-8)
            assert abs(dbs[layer][k] - fdb) / denomb <= 1e-4
            checked += 1
        assert checked >= 100


# --- preference-loss identities (criterion 5) -------------------------------

def _single_action_traj(executed, reward=0.0):
    cfg = PlantConfig()
    st = JointState(np.zeros(2), np.zeros(2))
    pose = fk(st.q, cfg)
    traj = Trajectory((st, st), (Action(executed),), (pose, pose))
    return RankedTrajectory(traj, np.asarray(executed, dtype=float)[None, :],
                            np.array([1.2, 0.8]), reward)


def _zero_policy(bias_rows):
    """Linear zero-weight policy whose mean action equals the output bias."""
    pol = init_policy(2, hidden=(4, 4), seed=0)
    for W in pol.weights:
        W[:] = 0.0
    for b in pol.biases:
        b[:] = 0.0
    pol.biases[-1][:] = bias_rows
    return pol


class TestPreferenceLossIdentities:
    def test_zero_delta_gives_ln2(self):
        pol = init_policy(2, hidden=(4, 4), seed=5)
        ref = init_policy(2, hidden=(4, 4), seed=5)
        chosen = _single_action_traj(np.array([0.3, -0.1]), reward=1.0)
        rejected = _single_action_traj(np.array([-0.2, 0.4]), reward=0.0)
        loss, _, _ = tpo_loss(pol, ref, [PreferencePair(chosen, rejected)],
                              beta=0.7)
        assert abs(loss - math.log(2.0)) <= 1e-12

    def test_ln3_delta_gives_ln_four_thirds(self):
        # policy mean = 0, reference mean = (sqrt(2 ln 3), 0): the chosen
        # trajectory's log-prob gap is exactly ln 3, the rejected pair
        # contributes zero, so beta=1 gives loss -log sigmoid(ln 3).
        m = math.sqrt(2.0 * math.log(3.0))
        pol = _zero_policy(np.zeros(2))
        ref = _zero_policy(np.array([m, 0.0]))
        chosen = _single_action_traj(np.zeros(2), reward=1.0)
        # the rejected action sits halfway between the two means, so both
        # nets score it identically and it cancels out of the advantage
        rejected = _single_action_traj(np.array([m / 2.0, 0.0]), reward=0.0)
        from armcal.tpo import tpo_delta
        pair = PreferencePair(chosen, rejected)
        # verify the engineered advantage really is ln 3 before the loss check
        delta = tpo_delta(pol, ref, pair)
        assert abs(delta - math.log(3.0)) <= 1e-12
        loss, _, _ = tpo_loss(pol, ref, [pair], beta=1.0)
        assert abs(loss - math.log(4.0 / 3.0)) <= 1e-12

    def test_constant_shift_invariance_exact(self):
        # delta is a difference of two log-ratio differences, so adding a
        # common constant c to all four log-probabilities cancels exactly;
        # zero-weight policies give dyadic log-probs, so every float
        # addition below is exact and the equality is bit-for-bit
        from armcal.tpo import tpo_delta, traj_log_prob
        pol = _zero_policy(np.zeros(2))
        ref = _zero_policy(np.array([2.0, 0.0]))
        chosen = _single_action_traj(np.array([1.0, 0.0]), reward=1.0)
        rejected = _single_action_traj(np.zeros(2), reward=0.0)
        pair = PreferencePair(chosen, rejected)
        lpc = traj_log_prob(pol, pair.chosen)      # -0.5
        lrc = traj_log_prob(ref, pair.chosen)      # -0.5
        lpr = traj_log_prob(pol, pair.rejected)    # 0.0
        lrr = traj_log_prob(ref, pair.rejected)    # -2.0
        assert (lpc, lrc, lpr, lrr) == (-0.5, -0.5, 0.0, -2.0)
        delta = tpo_delta(pol, ref, pair)
        assert delta == (lpc - lrc) - (lpr - lrr)
        for c in (1.0, -3.5, 1024.0, 2.0 ** 40):
            shifted = ((lpc + c) - (lrc + c)) - ((lpr + c) - (lrr + c))
            assert shifted == delta


# --- preference-tuning improvement (criterion 6) ----------------------------

class TestPreferenceTuningImprovement:
    def test_mean_reward_strictly_increases(self):
        t0 = time.perf_counter()
        plant = PlantConfig()
        params = PhysParams(2.0, 120.0, 7.0)
        goal = np.array([1.2, 0.8])
        cfg = TpoConfig(cycles=5, rollouts_per_cycle=100, m=25, seed=8,
                        epochs_per_cycle=20, learning_rate=3e-4)
        pol = init_policy(plant.n_joints, seed=8)
        _, reports = run_tpo(pol, params, goal, cfg, plant)
        rewards = [r.mean_reward_before for r in reports]
        assert len(rewards) == 5
        for a, b in zip(rewards, rewards[1:]):
            assert b > a, f"rewards not strictly increasing: {rewards}"
        assert time.perf_counter() - t0 <= 300.0


# --- annealing oracle (criterion 7) -----------------------------------------

class TestAnnealingOracle:
    def test_quadratic_energy_within_two_percent(self):
        cfg = PlantConfig()
        eps = datagen.make_synthetic_real(PhysParams(1.0, 10.0, 1.0),
                                          1, 2, cfg, seed=0)

        def energy(fpd):
            return (fpd[0] - 7.3) ** 2

        grid = np.linspace(BOUNDS.f_min, BOUNDS.f_max, 20001)
        grid_best = grid[np.argmin((grid - 7.3) ** 2)]
        span = BOUNDS.f_max - BOUNDS.f_min
        hits = 0
        for seed in range(100):
            got, curve = anneal_params(eps, AnnealConfig(seed=seed,
                                                         bounds=BOUNDS),
                                       cfg, energy_fn=energy)
            assert len(curve) == 401
            if abs(got.f - grid_best) <= 0.02 * span:
                hits += 1
        assert hits >= 95


# --- determinism (criterion 8) ----------------------------------------------

SMALL = [
    "--set", "datagen.n_param_sets=3",
    "--set", "datagen.n_episodes=4",
    "--set", "datagen.horizon=6",
    "--set", "surrogate.max_epochs=3",
    "--set", "surrogate.hidden_width=8",
    "--set", "refine.max_steps=5",
    "--set", "anneal.steps=5",
    "--set", "tpo.m=2",
    "--set", "tpo.rollouts_per_cycle=5",
    "--set", "tpo.epochs_per_cycle=2",
    "--set", "tpo.cycles=2",
    "--set", "tpo.rollout_horizon=3",
]

ARTIFACTS = ("dataset.jsonl", "episodes.json", "truth.json",
             "norm_stats.json", "checkpoint.json", "train_loss.csv",
             "identified_params.json", "recovery_error.json",
             "identify_report.md", "identify_report.csv",
             "tpo_report.jsonl", "policy.json", "train_loss.svg")

# wall-clock column index in identify_report.csv; timing is measurement,
# not computation, so it is excluded from the byte-identity check
_CSV_TIME_COL = 4


def _strip_volatile(text, name):
    if name == "identify_report.csv":
        return "\n".join(",".join(line.split(",")[:_CSV_TIME_COL])
                         for line in text.splitlines())
    if name == "identify_report.md":
        # drop the trailing wall-clock cell of every table row
        return "\n".join("|".join(line.split("|")[:-2])
                         for line in text.splitlines())
    return text


class TestDeterminism:
    def test_rerun_produces_byte_identical_artifacts(self, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            base = ["--out", str(out), "--seed", "9", *SMALL]
            assert main([*base, "datagen"]) == 0
            assert main([*base, "train-surrogate"]) == 0
            assert main([*base, "identify"]) == 0
            assert main([*base, "tpo"]) == 0
            assert main([*base, "plot", str(out / "train_loss.csv")]) == 0
        for name in ARTIFACTS:
            a = (outs[0] / name).read_text()
            b = (outs[1] / name).read_text()
            assert _strip_volatile(a, name) == _strip_volatile(b, name), \
                f"artifact differs across reruns: {name}"

    def test_dataset_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(90)
        rows = rng.normal(size=(17, 3 + 10)) * np.logspace(-8, 8, 13)[None, :]
        path = tmp_path / "d.jsonl"
        serialize.write_dataset(path, rows, 2)
        back = serialize.read_dataset(path)
        assert back.shape == rows.shape
        assert np.all(back == rows)
        path2 = tmp_path / "d2.jsonl"
        serialize.write_dataset(path2, back, 2)
        assert path.read_bytes() == path2.read_bytes()

    def test_checkpoint_round_trip_bit_exact(self):
        rng = np.random.default_rng(91)
        stats = NormStats(rng.normal(size=13), rng.random(13) + 0.1)
        model = surrogate.init((9, 8, 8, 4), 92, norm_stats=stats,
                               bounds=BOUNDS)
        doc = serialize.checkpoint_to_json(model)
        text = serialize.to_canonical_json(doc)
        back = serialize.checkpoint_from_json(json.loads(text))
        for W, W2 in zip(model.weights, back.weights):
            assert np.all(W == W2)
        for b, b2 in zip(model.biases, back.biases):
            assert np.all(b == b2)
        assert serialize.to_canonical_json(
            serialize.checkpoint_to_json(back)) == text
