"""Command-line front end: generate -> train-prior -> replay -> report,
plus the mushroom benchmark. All results land on disk as CSV/JSON; figures
are emitted as data, never images.

Exit codes: 0 success, 2 input error, 3 numerical failure. Failures print a
machine-readable JSON object on stderr.
"""

from __future__ import annotations

import csv
import functools
import json
import pathlib
import sys

import click
import numpy as np

from . import bandit, data, prior
from .replay import mushroom_run, replay as run_replay, write_report
from .exceptions import (
    CreativeBanditError,
    EmptyDataset,
    NonFiniteLoss,
    NotPositiveDefinite,
    ParseError,
)

EXIT_INPUT = 2
EXIT_NUMERIC = 3

NIG_KINDS = {"lin_greedy", "lin_thompson", "neural_ucb", "hbm"}
DEFAULT_REPLAY_POLICIES = "uniform,epsilon_greedy,lin_thompson,hbm"
DEFAULT_MUSHROOM_POLICIES = "uniform,epsilon_greedy,lin_thompson,hbm"


def _fail(code: int, kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(code)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (NonFiniteLoss, NotPositiveDefinite) as exc:
            _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
        except (CreativeBanditError, FileNotFoundError, ValueError) as exc:
            _fail(EXIT_INPUT, type(exc).__name__, str(exc))

    return wrapper


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), path=str(path), line=exc.lineno)
    if not isinstance(doc, dict):
        raise ParseError("config must be a flat JSON object", path=str(path), line=1)
    return doc


def _resolve(flag_value, cfg: dict, key: str, default):
    """Precedence: explicit flag > config file > built-in default."""
    if flag_value is not None:
        return flag_value
    if key in cfg:
        return cfg[key]
    return default


def _parse_seeds(seed, seeds, cfg) -> list:
    if seed is not None and seeds is not None:
        raise ValueError("pass either --seed or --seeds, not both")
    raw = seeds if seeds is not None else cfg.get("seeds")
    if raw is None:
        return [seed if seed is not None else int(cfg.get("seed", 0))]
    if isinstance(raw, (list, tuple)):
        return [int(s) for s in raw]
    return [int(s) for s in str(raw).split(",") if s != ""]


def _parse_fractions(text) -> tuple:
    parts = [float(p) for p in str(text).split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated fractions, got {text!r}")
    return tuple(parts)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


@click.group()
def main():
    """Creative ranking: prior training, bandit replay, and benchmarks."""


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--kind", type=click.Choice(["creatives", "mushroom"]), default="creatives")
@click.option("--products", type=int, default=None)
@click.option("--feature-dim", type=int, default=None)
@click.option("--days-min", type=int, default=None)
@click.option("--days-max", type=int, default=None)
@click.option("--impressions-per-day", type=float, default=None)
@click.option("--offset-noise", type=float, default=None)
@click.option("--ctr-scale", type=float, default=None)
@click.option("--best-worst-ratio", type=float, default=None)
@click.option("--split", "split_spec", type=str, default=None, help="train,val,test fractions")
@click.option("--records", type=int, default=None, help="mushroom record count")
@click.option("--seed", type=int, default=None)
@guarded
def generate(config_path, out, kind, products, feature_dim, days_min, days_max,
             impressions_per_day, offset_noise, ctr_scale, best_worst_ratio,
             split_spec, records, seed):
    """Write a synthetic dataset (creative logs or a mushroom file)."""
    cfg = _load_config(config_path)
    out = pathlib.Path(out)
    seed = int(_resolve(seed, cfg, "seed", 0))

    if kind == "mushroom":
        out.mkdir(parents=True, exist_ok=True)
        n = int(_resolve(records, cfg, "records", 8124))
        path = out / "mushroom.data"
        data.generate_mushroom(path, n=n, seed=seed)
        click.echo(f"wrote {n} mushroom records to {path}")
        return

    gen_config = data.GeneratorConfig(
        products=int(_resolve(products, cfg, "products", 1000)),
        feature_dim=int(_resolve(feature_dim, cfg, "feature_dim", 8)),
        days_min=int(_resolve(days_min, cfg, "days_min", 5)),
        days_max=int(_resolve(days_max, cfg, "days_max", 14)),
        impressions_per_day=float(_resolve(impressions_per_day, cfg, "impressions_per_day", 40.0)),
        offset_noise=float(_resolve(offset_noise, cfg, "offset_noise", 0.0)),
        ctr_scale=float(_resolve(ctr_scale, cfg, "ctr_scale", 0.06)),
        best_worst_ratio=_resolve(best_worst_ratio, cfg, "best_worst_ratio", None),
        seed=seed,
    )
    dataset = data.generate(gen_config)
    dataset.write(out)
    fractions = _parse_fractions(_resolve(split_spec, cfg, "split", "0.6,0.2,0.2"))
    train, val, test = data.split(dataset.product_ids, fractions, seed=seed)
    (out / "splits.json").write_text(
        json.dumps(
            {"train": sorted(train), "val": sorted(val), "test": sorted(test)},
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    click.echo(
        f"wrote {len(dataset.impressions)} impressions, {len(dataset.features)} creatives, "
        f"splits {len(train)}/{len(val)}/{len(test)} to {out}"
    )


# ---------------------------------------------------------------------------
# train-prior
# ---------------------------------------------------------------------------


def _dataset_for_split(root, which, auto: str = "all"):
    """Load a dataset directory, optionally restricted to one product split."""
    root = pathlib.Path(root)
    ds = data.load_dataset(root)
    splits_path = root / "splits.json"
    if which in (None, "auto"):
        which = auto if splits_path.exists() else "all"
    if which == "all":
        return ds, which
    if not splits_path.exists():
        raise FileNotFoundError(f"no splits.json under {root}; run generate with --split")
    splits = json.loads(splits_path.read_text(encoding="utf-8"))
    if which not in splits:
        raise ValueError(f"unknown split {which!r}; expected train, val, test or all")
    wanted = set(splits[which])
    ds.impressions = [r for r in ds.impressions if r.product_id in wanted]
    if not ds.impressions:
        raise EmptyDataset(f"split {which!r} selects no impressions")
    return ds, which


@main.command("train-prior")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--gamma", type=str, default=None, help="loss mix; comma list sweeps")
@click.option("--temperature", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--lr-final", type=float, default=None)
@click.option("--weighted-sampling/--no-weighted-sampling", default=None)
@click.option("--smoothing", type=click.Choice(["auto", "on", "off"]), default=None)
@click.option("--hidden-units", type=int, default=None)
@click.option("--split", "which_split", type=str, default=None)
@click.option("--seed", type=int, default=None)
@guarded
def train_prior(config_path, data_dir, out, gamma, temperature, epochs, batch_size,
                learning_rate, lr_final, weighted_sampling, smoothing, hidden_units,
                which_split, seed):
    """Train the visual-prior scorer and export weights plus a loss trace."""
    cfg = _load_config(config_path)
    out = pathlib.Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ds, used_split = _dataset_for_split(
        data_dir, _resolve(which_split, cfg, "split", None), auto="train"
    )
    groups = data.build_groups(ds.impressions, ds.features)
    if not groups:
        raise EmptyDataset("no trainable product groups in the selected split")

    gamma_raw = _resolve(gamma, cfg, "gamma", str(prior.DEFAULT_GAMMA))
    gammas = [float(g) for g in str(gamma_raw).split(",")]
    smoothing_raw = _resolve(smoothing, cfg, "smoothing", "auto")
    smoothing_value = {"auto": "auto", "on": True, "off": False}[smoothing_raw]

    for g in gammas:
        scorer = prior.CreativeScorer(
            gamma=g,
            temperature=float(_resolve(temperature, cfg, "temperature", prior.DEFAULT_TEMPERATURE)),
            learning_rate=float(_resolve(learning_rate, cfg, "learning_rate", 0.05)),
            lr_final=_resolve(lr_final, cfg, "lr_final", None),
            epochs=int(_resolve(epochs, cfg, "epochs", 20)),
            batch_size=int(_resolve(batch_size, cfg, "batch_size", 32)),
            weighted_sampling=bool(_resolve(weighted_sampling, cfg, "weighted_sampling", True)),
            smoothing=smoothing_value,
            hidden_units=int(_resolve(hidden_units, cfg, "hidden_units", 0)),
            seed=int(_resolve(seed, cfg, "seed", 0)),
        )
        scorer.fit(groups)
        suffix = "" if len(gammas) == 1 else f"_gamma_{g:g}"
        weights_path = out / f"weights{suffix}.json"
        weights_path.write_text(
            json.dumps(scorer.export_weights(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        with open(out / f"loss_trace{suffix}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "listwise", "pointwise", "combined"])
            for epoch, (lw, pw, total) in enumerate(scorer.loss_trace_):
                writer.writerow([epoch, repr(lw), repr(pw), repr(total)])
        click.echo(
            f"gamma={g:g}: trained on {len(groups)} products ({used_split} split), "
            f"final loss {scorer.loss_trace_[-1][2]:.6f} -> {weights_path}"
        )


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------


def _load_weights(path) -> dict:
    if path is None:
        raise ValueError("this policy needs --weights from train-prior")
    doc = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    if "w" not in doc:
        raise ValueError("weights file has no linear weight vector 'w'")
    return doc


def _build_policy(name: str, *, weights_path, eta, ridge_scale, theta1, theta2,
                  epsilon, group_attr=None) -> bandit.Policy:
    warm = name.endswith("+warmup")
    kind = name[: -len("+warmup")] if warm else name
    options: dict = {}
    if kind in NIG_KINDS:
        options["eta"] = eta
        options["ridge_scale"] = ridge_scale
        if warm:
            options["warm_start"] = np.asarray(_load_weights(weights_path)["w"])
    elif warm:
        raise ValueError(f"policy {kind!r} does not support +warmup")
    if kind == "hbm":
        options["theta1"] = theta1
        options["theta2"] = theta2
        if group_attr is not None:
            options["group_attr"] = group_attr
    if kind in ("epsilon_greedy", "lin_greedy"):
        options["epsilon"] = epsilon
    if kind == "prior_greedy":
        options["weights"] = np.asarray(_load_weights(weights_path)["w"])
    return bandit.make_policy(kind, **options)


def _aggregate_rows(out_dir, policy_names, seeds) -> list:
    """Build aggregate rows from per-run report.json files, in a fixed order."""
    runs = pathlib.Path(out_dir) / "runs"
    per_policy: dict = {}
    for name in policy_names:
        per_policy[name] = []
        for seed in seeds:
            doc = json.loads((runs / name / str(seed) / "report.json").read_text(encoding="utf-8"))
            per_policy[name].append(doc)
    rows = []
    for name in policy_names:
        docs = per_policy[name]
        if any(d["sctr"] is None for d in docs):
            raise EmptyDataset(f"policy {name!r} has a zero-match run; cannot aggregate")
        sctrs = np.array([d["sctr"] for d in docs], dtype=np.float64)
        mean = float(sctrs.mean())
        se = float(sctrs.std(ddof=1) / np.sqrt(len(sctrs))) if len(sctrs) > 1 else 0.0
        norms = []
        for doc, uni in zip(docs, per_policy["uniform"]):
            norms.append(doc["regret"] / uni["regret"])
        rows.append([name, mean, se, float(np.mean(norms)) * 100.0])
    return rows


def _write_aggregate(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "sctr_mean", "sctr_se", "regret_norm"])
        for row in rows:
            writer.writerow([row[0]] + [_fmt(v) for v in row[1:]])


# Job context shared with fork()ed workers; set before the pool spawns so the
# dataset is inherited instead of pickled per task.
_WORKER_CTX: dict | None = None


def _replay_one(job):
    """One (policy, seed) replay; runs in-process or in a fork()ed worker."""
    name, seed = job
    payload = _WORKER_CTX
    ds = payload["dataset"]
    policy = _build_policy(name, **payload["policy_kw"])
    report = run_replay(
        policy,
        ds.impressions,
        ds.features,
        seed=seed,
        logging_policy=ds.logging_policy,
        meta={"policy": name, "seed": seed},
    )
    write_report(report, pathlib.Path(payload["out"]) / "runs" / name / str(seed))
    return name, seed, report.no_matches


@main.command("replay")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--policy", "policies", type=str, default=None, help="comma list; hbm+warmup needs --weights")
@click.option("--weights", "weights_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--seeds", type=str, default=None)
@click.option("--eta", type=float, default=None)
@click.option("--ridge-scale", type=float, default=None)
@click.option("--theta1", type=float, default=None)
@click.option("--theta2", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--split", "which_split", type=str, default=None)
@click.option("--workers", type=int, default=None)
@guarded
def replay_cmd(config_path, data_dir, out, policies, weights_path, seed, seeds, eta,
               ridge_scale, theta1, theta2, epsilon, which_split, workers):
    """Replay policies over logged impressions and aggregate sCTR/regret."""
    cfg = _load_config(config_path)
    out = pathlib.Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ds, _used = _dataset_for_split(
        data_dir, _resolve(which_split, cfg, "split", None), auto="test"
    )
    seed_list = _parse_seeds(seed, seeds, cfg)
    names = [p.strip() for p in str(_resolve(policies, cfg, "policy", DEFAULT_REPLAY_POLICIES)).split(",") if p.strip()]
    if "uniform" not in names:
        names.insert(0, "uniform")

    policy_kw = dict(
        weights_path=_resolve(weights_path, cfg, "weights", None),
        eta=float(_resolve(eta, cfg, "eta", bandit.DEFAULT_ETA)),
        ridge_scale=float(_resolve(ridge_scale, cfg, "ridge_scale", bandit.DEFAULT_RIDGE_SCALE)),
        theta1=float(_resolve(theta1, cfg, "theta1", 50.0)),
        theta2=float(_resolve(theta2, cfg, "theta2", 150.0)),
        epsilon=float(_resolve(epsilon, cfg, "epsilon", bandit.DEFAULT_EPSILON)),
    )
    for name in names:  # fail fast on bad specs before any long run
        _build_policy(name, **policy_kw)

    global _WORKER_CTX
    _WORKER_CTX = {"dataset": ds, "policy_kw": policy_kw, "out": str(out)}
    jobs = [(name, s) for name in names for s in seed_list]
    n_workers = int(_resolve(workers, cfg, "workers", 1))
    any_empty = False
    if n_workers > 1:
        import multiprocessing

        with multiprocessing.get_context("fork").Pool(n_workers) as pool:
            for _name, _seed, empty in pool.imap_unordered(_replay_one, jobs):
                any_empty = any_empty or empty
    else:
        for job in jobs:
            _name, _seed, empty = _replay_one(job)
            any_empty = any_empty or empty
    _WORKER_CTX = None

    if any_empty:
        _fail(EXIT_INPUT, "NoMatches", "at least one replay matched zero impressions")
    rows = _aggregate_rows(out, names, seed_list)
    _write_aggregate(out / "aggregate.csv", rows)
    for row in rows:
        click.echo(f"{row[0]}: sCTR {row[1]:.5f} +/- {row[2]:.5f}, regret {row[3]:.2f}%")


# ---------------------------------------------------------------------------
# mushroom
# ---------------------------------------------------------------------------


@main.command("mushroom")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--policy", "policies", type=str, default=None)
@click.option("--rounds", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--seeds", type=str, default=None)
@click.option("--eta", type=float, default=None)
@click.option("--ridge-scale", type=float, default=None)
@click.option("--theta1", type=float, default=None)
@click.option("--theta2", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--group-attr", type=str, default=None)
@click.option("--trace-stride", type=int, default=None)
@guarded
def mushroom_cmd(config_path, data_path, out, policies, rounds, seed, seeds, eta,
                 ridge_scale, theta1, theta2, epsilon, group_attr, trace_stride):
    """Run the mushroom benchmark and write regret traces plus a summary."""
    cfg = _load_config(config_path)
    out = pathlib.Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if not pathlib.Path(data_path).exists():
        raise FileNotFoundError(f"mushroom data file not found: {data_path}")
    mushrooms = data.load_mushroom(data_path)
    n_rounds = int(_resolve(rounds, cfg, "rounds", 50000))
    seed_list = _parse_seeds(seed, seeds, cfg)
    names = [p.strip() for p in str(_resolve(policies, cfg, "policy", DEFAULT_MUSHROOM_POLICIES)).split(",") if p.strip()]
    if "uniform" not in names:
        names.insert(0, "uniform")
    stride = max(int(_resolve(trace_stride, cfg, "trace_stride", 100)), 1)
    grouping = _resolve(group_attr, cfg, "group_attr", "bruises")

    policy_kw = dict(
        weights_path=None,
        eta=float(_resolve(eta, cfg, "eta", bandit.DEFAULT_ETA)),
        ridge_scale=float(_resolve(ridge_scale, cfg, "ridge_scale", bandit.DEFAULT_RIDGE_SCALE)),
        theta1=float(_resolve(theta1, cfg, "theta1", 50.0)),
        theta2=float(_resolve(theta2, cfg, "theta2", 150.0)),
        epsilon=float(_resolve(epsilon, cfg, "epsilon", bandit.DEFAULT_EPSILON)),
    )

    traces_dir = out / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    finals: dict = {name: [] for name in names}
    for name in names:
        for s in seed_list:
            policy = _build_policy(name, group_attr=grouping if name.startswith("hbm") else None,
                                   **policy_kw)
            result = mushroom_run(policy, mushrooms, n_rounds, seed=s)
            finals[name].append(result.final_regret)
            with open(traces_dir / f"{name}_{s}.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["round", "cumulative_regret"])
                for r in range(0, n_rounds, stride):
                    writer.writerow([r + 1, repr(float(result.cumulative_regret[r]))])
                if (n_rounds - 1) % stride != 0:
                    writer.writerow([n_rounds, repr(result.final_regret)])

    uniform_mean = float(np.mean(finals["uniform"]))
    with open(out / "mushroom_summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "final_regret_mean", "regret_norm"])
        for name in names:
            mean = float(np.mean(finals[name]))
            writer.writerow([name, repr(mean), repr(mean / uniform_mean * 100.0)])
    for name in names:
        mean = float(np.mean(finals[name]))
        click.echo(f"{name}: cumulative regret {mean:.1f} ({mean / uniform_mean * 100.0:.2f}% of uniform)")


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@main.command("report")
@click.option("--runs", "runs_dir", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@guarded
def report_cmd(runs_dir, out):
    """Re-aggregate per-run replay reports into one CSV table."""
    runs_root = pathlib.Path(runs_dir) / "runs"
    if not runs_root.exists():
        raise FileNotFoundError(f"no runs directory under {runs_dir}")
    names = sorted(p.name for p in runs_root.iterdir() if p.is_dir())
    if "uniform" not in names:
        raise EmptyDataset("aggregation needs a uniform baseline run")
    names.remove("uniform")
    names.insert(0, "uniform")
    seeds = sorted(
        (int(p.name) for p in (runs_root / "uniform").iterdir() if p.is_dir()),
    )
    rows = _aggregate_rows(pathlib.Path(runs_dir), names, seeds)
    _write_aggregate(out, rows)
    click.echo(f"aggregated {len(names)} policies x {len(seeds)} seeds -> {out}")


if __name__ == "__main__":
    main()
