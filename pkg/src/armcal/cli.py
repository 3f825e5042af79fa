"""Command-line surface tying the pipeline stages into reproducible runs.

Subcommands: datagen | train-surrogate | identify | tpo | plot.
All randomness is derived from the configured run seed; no wall-clock
seeding. Exit codes: 0 success, 2 usage/config error, 1 runtime error.
"""

import argparse
import copy
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, datagen, identify, serialize, surrogate, tpo
from .plant import ParamBounds, PhysParams, PlantConfig


class UsageError(Exception):
    pass


DEFAULT_CONFIG = {
    "plant": {"n_joints": 2, "link_lengths": None, "inertias": None,
              "dt": 0.01, "substeps_per_action": 5, "friction_smoothing": 0.01,
              "obs_noise_std": 0.0},
    "bounds": {"f": [0.0, 10.0], "p": [1.0, 500.0], "d": [0.1, 50.0]},
    "datagen": {"n_param_sets": 50, "n_episodes": 20, "horizon": 50,
                "truth": None},
    "surrogate": {"learning_rate": 0.001, "batch_size": 256, "max_epochs": 2000,
                  "early_stop_loss": 1e-6, "plateau_window": 100,
                  "plateau_rel_improvement": 1e-3, "hidden_width": 128},
    "refine": {"learning_rate": 0.001, "max_steps": 500, "init": "best-sampled",
               "convergence_tol": 1e-8, "convergence_window": 20},
    "anneal": {"steps": 400, "initial_temperature": 1.0, "cooling_gamma": 0.99,
               "proposal_frac": 0.1},
    "tpo": {"beta": 0.1, "m": 25, "epochs_per_cycle": 80, "cycles": 5,
            "rollouts_per_cycle": 100, "learning_rate": 0.001,
            "rollout_horizon": 25, "exploration_std": 0.3, "goal": [1.2, 0.8]},
    "holdout_fraction": 0.25,
    "output_dir": "out",
    "run_seed": 0,
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in out:
            raise UsageError(f"unknown config key: {k}")
        if isinstance(v, dict) and isinstance(out[k], dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _apply_set(config, assignment):
    if "=" not in assignment:
        raise UsageError(f"--set expects key=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise UsageError(f"unknown config key: {key}")
        node = node[part]
    if parts[-1] not in node:
        raise UsageError(f"unknown config key: {key}")
    node[parts[-1]] = value


def load_config(args):
    config = copy.deepcopy(DEFAULT_CONFIG)
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"invalid config JSON: {exc}")
        config = _merge(config, user)
    for assignment in args.set or []:
        _apply_set(config, assignment)
    if args.seed is not None:
        config["run_seed"] = args.seed
    if args.out is not None:
        config["output_dir"] = args.out
    return config


def _plant(config):
    p = config["plant"]
    ll = p["link_lengths"]
    ii = p["inertias"]
    try:
        return PlantConfig(p["n_joints"],
                           tuple(ll) if ll else None,
                           tuple(ii) if ii else None,
                           p["dt"], p["substeps_per_action"],
                           p["friction_smoothing"], p["obs_noise_std"])
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid plant config: {exc}")


def _bounds(config):
    b = config["bounds"]
    try:
        return ParamBounds(b["f"][0], b["f"][1], b["p"][0], b["p"][1],
                           b["d"][0], b["d"][1])
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise UsageError(f"invalid bounds config: {exc}")


def _seeds(config):
    """Fixed-purpose integer seeds derived from the run seed."""
    state = np.random.SeedSequence(int(config["run_seed"])).generate_state(8)
    names = ("truth", "episodes", "param_sets", "surrogate_init",
             "surrogate_train", "anneal", "tpo", "spare")
    return dict(zip(names, (int(s) for s in state)))


def _outdir(config):
    out = Path(config["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}")
    return out


def _write_manifest(out, config, artifacts):
    doc = {"config_hash": serialize.config_hash(config),
           "artifacts": {k: str(v) for k, v in artifacts.items()},
           "tool_version": __version__,
           "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    serialize.dump_json(doc, out / "manifest.json")


def _truth_params(config, seeds, bounds):
    t = config["datagen"]["truth"]
    if t is not None:
        return PhysParams(float(t[0]), float(t[1]), float(t[2]))
    rng = np.random.default_rng(seeds["truth"])
    lows, highs = bounds.lows(), bounds.highs()
    # keep the hidden truth off the bound edges so relative errors behave
    draw = lows + (0.15 + 0.7 * rng.random(3)) * (highs - lows)
    return PhysParams.from_array(draw)


def cmd_datagen(config):
    out = _outdir(config)
    plant_cfg = _plant(config)
    bounds = _bounds(config)
    seeds = _seeds(config)
    dg = config["datagen"]
    truth = _truth_params(config, seeds, bounds)
    episodes = datagen.make_synthetic_real(truth, dg["n_episodes"], dg["horizon"],
                                           plant_cfg, seeds["episodes"])
    param_sets = datagen.sample_params(dg["n_param_sets"], bounds, seeds["param_sets"])
    rows = datagen.generate_transition_arrays(episodes, param_sets, plant_cfg)
    stats = datagen.compute_norm_stats(rows)

    serialize.write_dataset(out / "dataset.jsonl", rows, plant_cfg.n_joints)
    serialize.dump_json(serialize.episodes_to_json(episodes), out / "episodes.json")
    serialize.dump_json(serialize.params_to_json(truth), out / "truth.json")
    serialize.dump_json(serialize.norm_stats_to_json(stats), out / "norm_stats.json")
    _write_manifest(out, config, {
        "dataset": out / "dataset.jsonl", "episodes": out / "episodes.json",
        "truth": out / "truth.json", "norm_stats": out / "norm_stats.json"})
    print(f"wrote {len(rows)} transition records to {out / 'dataset.jsonl'}")
    return 0


def _train_cfg(config, seeds):
    s = config["surrogate"]
    return surrogate.TrainConfig(
        learning_rate=s["learning_rate"], batch_size=s["batch_size"],
        max_epochs=s["max_epochs"], early_stop_loss=s["early_stop_loss"],
        plateau_window=s["plateau_window"],
        plateau_rel_improvement=s["plateau_rel_improvement"],
        seed=seeds["surrogate_train"])


def cmd_train_surrogate(config, dataset_path):
    out = _outdir(config)
    path = Path(dataset_path if dataset_path else out / "dataset.jsonl")
    if not path.exists():
        raise UsageError(f"dataset not found: {path}")
    plant_cfg = _plant(config)
    bounds = _bounds(config)
    seeds = _seeds(config)
    data = serialize.read_dataset(path)
    if data.shape[1] != 3 + 5 * plant_cfg.n_joints:
        raise UsageError("dataset layout does not match configured n_joints")
    stats = datagen.compute_norm_stats(data)
    model = surrogate.init(
        surrogate.default_layer_dims(plant_cfg.n_joints,
                                     config["surrogate"]["hidden_width"]),
        seeds["surrogate_init"], norm_stats=stats, bounds=bounds)
    model = surrogate.train(model, data, _train_cfg(config, seeds))
    serialize.dump_json(serialize.checkpoint_to_json(model), out / "checkpoint.json")
    history = model.training_meta.get("loss_history", [])
    with open(out / "train_loss.csv", "w") as fh:
        fh.write("step,value\n")
        for i, v in enumerate(history):
            fh.write(f"{i},{serialize.f17(v)}\n")
    _write_manifest(out, config, {"checkpoint": out / "checkpoint.json",
                                  "loss_curve": out / "train_loss.csv"})
    print(f"final training loss: {model.training_meta['final_loss']:.3e} "
          f"({model.training_meta['epochs_run']} epochs, "
          f"{model.training_meta['stop_reason']})")
    return 0


def _split_holdout(episodes, fraction):
    n = len(episodes.episodes)
    n_eval = max(1, int(round(n * fraction))) if fraction > 0 else 0
    if n_eval == 0 or n_eval >= n:
        return episodes, episodes
    train = datagen.EpisodeSet(episodes.episodes[:n - n_eval], episodes.source)
    evaln = datagen.EpisodeSet(episodes.episodes[n - n_eval:], episodes.source)
    return train, evaln


def cmd_identify(config, episodes_path, checkpoint_path, method):
    if method not in ("grad", "sa", "both"):
        raise UsageError(f"invalid --method {method!r}")
    out = _outdir(config)
    path = Path(episodes_path if episodes_path else out / "episodes.json")
    if not path.exists():
        raise UsageError(f"episodes file not found: {path}")
    plant_cfg = _plant(config)
    bounds = _bounds(config)
    seeds = _seeds(config)
    episodes = serialize.episodes_from_json(serialize.load_json(path))
    train_eps, eval_eps = _split_holdout(episodes, config["holdout_fraction"])
    truth_path = path.parent / "truth.json"
    truth = (serialize.params_from_json(serialize.load_json(truth_path))
             if truth_path.exists() else None)

    r = config["refine"]
    refine_cfg = identify.RefineConfig(
        learning_rate=r["learning_rate"], max_steps=r["max_steps"],
        init=r["init"], convergence_tol=r["convergence_tol"],
        convergence_window=r["convergence_window"], bounds=bounds)
    a = config["anneal"]
    anneal_cfg = identify.AnnealConfig(
        steps=a["steps"], initial_temperature=a["initial_temperature"],
        cooling_gamma=a["cooling_gamma"], proposal_frac=a["proposal_frac"],
        seed=seeds["anneal"], bounds=bounds)

    reports = []
    if method in ("sa", "both"):
        t0 = time.perf_counter()
        sa_params, _ = identify.anneal_params(train_eps, anneal_cfg, plant_cfg)
        sa_time = time.perf_counter() - t0
        err = identify.evaluate_params(sa_params, eval_eps, plant_cfg)
        reports.append(identify.IdentifyReport(
            "sa", sa_params, err.trajectory_error, err.rotation_error,
            err.translation_error, sa_time,
            identify.recovery_error(sa_params, truth) if truth else None))
    if method in ("grad", "both"):
        t0 = time.perf_counter()
        if checkpoint_path:
            model = serialize.checkpoint_from_json(serialize.load_json(checkpoint_path))
            candidates = datagen.sample_params(config["datagen"]["n_param_sets"],
                                               bounds, seeds["param_sets"])
            grad_params, _ = identify.refine_params(model, train_eps, refine_cfg,
                                                    candidates)
        else:
            grad_cfg = identify.GradPipelineConfig(
                n_param_sets=config["datagen"]["n_param_sets"],
                sample_seed=seeds["param_sets"],
                train=_train_cfg(config, seeds), refine=refine_cfg,
                hidden_width=config["surrogate"]["hidden_width"],
                init_seed=seeds["surrogate_init"])
            grad_params, _ = identify.run_gradient_pipeline(train_eps, plant_cfg,
                                                            grad_cfg)
        grad_time = time.perf_counter() - t0
        err = identify.evaluate_params(grad_params, eval_eps, plant_cfg)
        reports.append(identify.IdentifyReport(
            "grad", grad_params, err.trajectory_error, err.rotation_error,
            err.translation_error, grad_time,
            identify.recovery_error(grad_params, truth) if truth else None))

    (out / "identify_report.csv").write_text(serialize.reports_to_csv(reports))
    (out / "identify_report.md").write_text(serialize.reports_to_markdown(reports))
    best = min(reports, key=lambda r: r.trajectory_error)
    serialize.dump_json({"method": best.method,
                         **serialize.params_to_json(best.params)},
                        out / "identified_params.json")
    if truth:
        recovery = {rep.method: list(rep.param_recovery_error) for rep in reports}
        serialize.dump_json(recovery, out / "recovery_error.json")
    _write_manifest(out, config, {"report_csv": out / "identify_report.csv",
                                  "report_md": out / "identify_report.md",
                                  "identified_params": out / "identified_params.json"})
    print(serialize.reports_to_csv(reports), end="")
    return 0


def cmd_tpo(config, params_path):
    out = _outdir(config)
    path = Path(params_path if params_path else out / "identified_params.json")
    if not path.exists():
        raise UsageError(f"identified parameter file not found: {path}")
    plant_cfg = _plant(config)
    seeds = _seeds(config)
    params = serialize.params_from_json(serialize.load_json(path))
    t = config["tpo"]
    cfg = tpo.TpoConfig(beta=t["beta"], m=t["m"],
                        epochs_per_cycle=t["epochs_per_cycle"], cycles=t["cycles"],
                        rollouts_per_cycle=t["rollouts_per_cycle"],
                        learning_rate=t["learning_rate"],
                        rollout_horizon=t["rollout_horizon"], seed=seeds["tpo"])
    policy = tpo.init_policy(plant_cfg.n_joints, seed=seeds["tpo"],
                             exploration_std=t["exploration_std"])
    reports = []
    for c in range(cfg.cycles):
        policy, rep = tpo.tpo_cycle(policy, params, np.array(t["goal"]), cfg,
                                    plant_cfg, cycle_index=c)
        reports.append(rep)
        print(f"cycle {c}: reward {rep.mean_reward_before:.4f} -> "
              f"{rep.mean_reward_after:.4f}, loss {rep.loss_first:.4f} -> "
              f"{rep.loss_last:.4f}")
    with open(out / "tpo_report.jsonl", "w") as fh:
        for rep in reports:
            fh.write(serialize.to_canonical_json({
                "cycle": rep.cycle,
                "mean_reward_before": rep.mean_reward_before,
                "mean_reward_after": rep.mean_reward_after,
                "loss_first": rep.loss_first,
                "loss_last": rep.loss_last}) + "\n")
    serialize.dump_json(serialize.policy_to_json(policy), out / "policy.json")
    _write_manifest(out, config, {"tpo_report": out / "tpo_report.jsonl",
                                  "policy": out / "policy.json"})
    return 0


def cmd_plot(config, csv_path, svg_path):
    out = _outdir(config)
    path = Path(csv_path)
    if not path.exists():
        raise UsageError(f"CSV file not found: {path}")
    lines = path.read_text().strip().splitlines()
    if not lines or lines[0].strip() != "step,value":
        raise UsageError("CSV must start with header 'step,value'")
    steps, values = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        try:
            steps.append(float(parts[0]))
            values.append(float(parts[1]))
        except (ValueError, IndexError):
            raise UsageError(f"malformed CSV line {lineno}: {line!r}")
    if not steps:
        raise UsageError("CSV has no data rows")
    svg = serialize.curve_to_svg(steps, values, title=path.name)
    target = Path(svg_path) if svg_path else out / (path.stem + ".svg")
    target.write_text(svg)
    print(f"wrote {target}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="armcal",
        description="System identification of a PD-controlled arm: surrogate-"
                    "based gradient refinement vs simulated annealing, plus "
                    "preference-based policy fine-tuning.")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="run seed override")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry (dotted keys)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("datagen", help="generate episodes and transition dataset")
    p_train = sub.add_parser("train-surrogate", help="train the dynamics surrogate")
    p_train.add_argument("--dataset", help="dataset JSONL path")
    p_id = sub.add_parser("identify", help="identify physical parameters")
    p_id.add_argument("--episodes", help="episodes JSON path")
    p_id.add_argument("--checkpoint", help="surrogate checkpoint (skip training)")
    p_id.add_argument("--method", default="both", help="grad | sa | both")
    p_tpo = sub.add_parser("tpo", help="preference fine-tuning in the identified plant")
    p_tpo.add_argument("--params", help="identified parameters JSON path")
    p_plot = sub.add_parser("plot", help="render a step,value CSV as an SVG")
    p_plot.add_argument("csv", help="input CSV path")
    p_plot.add_argument("--svg", help="output SVG path")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        config = load_config(args)
        if args.command == "datagen":
            return cmd_datagen(config)
        if args.command == "train-surrogate":
            return cmd_train_surrogate(config, args.dataset)
        if args.command == "identify":
            return cmd_identify(config, args.episodes, args.checkpoint, args.method)
        if args.command == "tpo":
            return cmd_tpo(config, args.params)
        if args.command == "plot":
            return cmd_plot(config, args.csv, args.svg)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
