"""Campaign execution: configuration, seeding, the four measurement cases,
and persistence of every trace and report.

A campaign file is one JSON key-value tree; every leaf can be overridden from
the command line. Run seeds are a pure function of (master seed, case name,
repetition index), artifacts carry the hash of the resolved configuration, and
re-running a campaign from the same configuration reproduces identical bytes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import adversary, metrics
from .dataset import LabeledDataset, balanced_subset, load_idx, synthesize
from .exchange import MixturePolicy
from .federation import (
    ExperimentReport,
    FederationConfig,
    run_centralized,
    run_experiment,
)
from .model import ModelSpec, load_params, save_params
from .partition import PartitionConfig, partition_noniid, sharing_quota, summary_csv
from .seeding import derive_rng, derive_seed

__all__ = [
    "ConfigError",
    "CampaignConfig",
    "load_config",
    "config_digest",
    "build_pool",
    "build_eval_set",
    "run_campaign",
    "partition_stats",
    "evaluate_stored_attack",
    "recompute_report",
    "CASES",
]

CASES = ("baseline", "iid", "noniid", "exchange")

DEFAULTS: dict[str, Any] = {
    "master_seed": 0,
    "repetitions": 1,
    "rounds": 10,
    "output_dir": "out",
    "cases": list(CASES),
    "dataset": {"kind": "synthetic", "classes": 4, "per_class": 60, "dim": 8, "spread": 0.15},
    "participants": 4,
    "overrepresentation": 0.5,
    "model": {"architecture": "logistic", "hidden_width": 0},
    "learning_rate": 0.01,
    "momentum": 0.9,
    "batch_size": 32,
    "local_epochs": 1,
    "participation": 1.0,
    "mixture": {"mode": "paper-mixture", "accumulate": False},
    "uniform_weighting": False,
    "probe_size": 0,
    "eval_split": "pool",
    "checkpoint_every": 1,
    "tie_inflation": 0.5,
}


class ConfigError(ValueError):
    """The campaign configuration cannot be used as given."""


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class CampaignConfig:
    """Resolved campaign settings; `raw` is the full merged key-value tree."""

    raw: dict

    def __getitem__(self, key: str) -> Any:
        return self.raw[key]

    @property
    def digest(self) -> str:
        return config_digest(self.raw)

    def partition_config(self) -> PartitionConfig:
        ds = self.raw["dataset"]
        return PartitionConfig(
            n_p=self.raw["participants"],
            n_c=ds["classes"],
            p=self.raw["overrepresentation"],
            n_s=ds["per_class"],
        )

    def model_spec(self) -> ModelSpec:
        m = self.raw["model"]
        return ModelSpec(architecture=m["architecture"], hidden_width=m["hidden_width"])

    def mixture_policy(self) -> MixturePolicy:
        m = self.raw["mixture"]
        return MixturePolicy(mode=m["mode"], accumulate=m["accumulate"])

    def federation_config(self, case: str, seed: int) -> FederationConfig:
        return FederationConfig(
            rounds=self.raw["rounds"],
            model=self.model_spec(),
            partition=self.partition_config(),
            partition_kind="iid" if case == "iid" else "noniid",
            learning_rate=self.raw["learning_rate"],
            momentum=self.raw["momentum"],
            batch_size=self.raw["batch_size"],
            local_epochs=self.raw["local_epochs"],
            participation=self.raw["participation"],
            exchange_enabled=(case == "exchange"),
            mixture_policy=self.mixture_policy(),
            uniform_weighting=self.raw["uniform_weighting"],
            seed=seed,
            keep_updates=self.raw["checkpoint_every"] > 0,
        )


def _validate(raw: dict) -> None:
    if raw["repetitions"] < 1:
        raise ConfigError("repetitions must be >= 1")
    if raw["rounds"] < 0:
        raise ConfigError("rounds must be >= 0")
    unknown = [c for c in raw["cases"] if c not in CASES]
    if unknown:
        raise ConfigError(f"unknown cases {unknown}; valid: {list(CASES)}")
    ds = raw["dataset"]
    if ds["kind"] == "idx":
        for key in ("images", "labels"):
            if key not in ds:
                raise ConfigError(f"dataset.{key} is required for kind=idx")
            if not Path(ds[key]).exists():
                raise ConfigError(f"dataset.{key}: no such file: {ds[key]}")
    elif ds["kind"] != "synthetic":
        raise ConfigError(f"dataset.kind must be 'synthetic' or 'idx', got {ds['kind']!r}")
    if raw["eval_split"] not in ("pool", "holdout"):
        raise ConfigError("eval_split must be 'pool' or 'holdout'")
    # Fail early on inconsistent partition parameters.
    try:
        CampaignConfig(raw).partition_config()
        CampaignConfig(raw).model_spec()
        CampaignConfig(raw).mixture_policy()
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, _, value = text.partition("=")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key.split("."), parsed


def load_config(path: str | Path, overrides: list[str] | None = None) -> CampaignConfig:
    """Read, override, and validate a campaign file."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        user = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be an object")

    # idx configs may omit synthetic-only keys and vice versa
    defaults = json.loads(json.dumps(DEFAULTS))
    if isinstance(user.get("dataset"), dict) and user["dataset"].get("kind") == "idx":
        defaults["dataset"] = {"kind": "idx", "images": "", "labels": "", "per_class": 0}
    raw = _merge(defaults, user)

    for override in overrides or []:
        keys, value = _parse_override(override)
        node = raw
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(f"unknown configuration key: {'.'.join(keys)}")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"unknown configuration key: {'.'.join(keys)}")
        node[keys[-1]] = value

    _validate(raw)
    return CampaignConfig(raw)


def config_digest(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def build_pool(cfg: CampaignConfig) -> LabeledDataset:
    """The balanced source pool every case partitions."""
    ds = cfg["dataset"]
    if ds["kind"] == "synthetic":
        return synthesize(
            ds["classes"], ds["per_class"], ds["dim"], ds["spread"],
            derive_rng(cfg["master_seed"], "data"),
        )
    full = load_idx(ds["images"], ds["labels"])
    per_class = ds["per_class"] or int(full.class_counts().min())
    return balanced_subset(full, per_class, derive_rng(cfg["master_seed"], "data"))


def build_eval_set(cfg: CampaignConfig, pool: LabeledDataset) -> LabeledDataset:
    """Evaluation data: the pool itself, or a disjoint held-out split."""
    if cfg["eval_split"] == "pool":
        return pool
    ds = cfg["dataset"]
    if ds["kind"] == "synthetic":
        return synthesize(
            ds["classes"], ds["per_class"], ds["dim"], ds["spread"],
            derive_rng(cfg["master_seed"], "eval"),
        )
    # idx holdout: a balanced draw from the records the pool did not take
    full = load_idx(ds["images"], ds["labels"])
    taken = {
        (int(label), feat.tobytes())
        for feat, label in zip(pool.features, pool.labels)
    }
    free = [
        i
        for i in range(len(full))
        if (int(full.labels[i]), full.features[i].tobytes()) not in taken
    ]
    remainder = full.subset(np.array(free, dtype=np.int64))
    per_class = int(remainder.class_counts().min())
    if per_class == 0:
        raise ConfigError("holdout split is empty: pool consumed some class entirely")
    per_class = min(per_class, ds["per_class"] or per_class)
    return balanced_subset(remainder, per_class, derive_rng(cfg["master_seed"], "eval"))


def _truth_for(case: str, cfg: CampaignConfig) -> dict[int, int] | None:
    # Non-IID layouts force n_p == n_c and owner i overrepresents class i. The
    # IID case keeps the same participant<->class labeling convention so the
    # attacker can still be scored; with n_p != n_c there is nothing to score.
    if cfg["participants"] == cfg["dataset"]["classes"]:
        return {i: i for i in range(cfg["participants"])}
    return None


def _run_one(
    cfg: CampaignConfig,
    case: str,
    rep: int,
    pool: LabeledDataset,
    eval_set: LabeledDataset,
    probe: adversary.AttackProbe | None,
) -> tuple[ExperimentReport, int]:
    seed = derive_seed(cfg["master_seed"], case, rep)
    if case == "baseline":
        report = run_centralized(
            cfg.model_spec(),
            pool,
            cfg["rounds"],
            eval_set,
            seed,
            learning_rate=cfg["learning_rate"],
            momentum=cfg["momentum"],
            batch_size=cfg["batch_size"],
            case=case,
        )
        return report, seed

    truth = _truth_for(case, cfg)
    attack = None
    if probe is not None and truth is not None:
        attack = lambda updates, r: adversary.attack_round(updates, probe, truth, r)
    fed = cfg.federation_config(case, seed)
    report = run_experiment(fed, pool, eval_set, attack=attack, case=case)
    return report, seed


def _write_run(
    out: Path, cfg: CampaignConfig, case: str, rep: int, seed: int, report: ExperimentReport
) -> None:
    run_dir = out / "runs" / case / f"rep{rep}"
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest

    meta = {
        "case": case,
        "rep": rep,
        "seed": seed,
        "config_digest": digest,
        "truth": None if report.truth is None else {str(k): v for k, v in report.truth.items()},
    }
    (run_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")

    lines = [
        json.dumps(
            {"config_digest": digest, "case": case, "rep": rep, "seed": seed,
             "initial_accuracy": report.initial_accuracy},
            sort_keys=True,
        )
    ]
    for r in report.records:
        lines.append(
            json.dumps(
                {
                    "round": r.round,
                    "accuracy": r.accuracy,
                    "R": r.attack_R,
                    "sizes": {str(k): v for k, v in sorted(r.sizes.items())},
                },
                sort_keys=True,
            )
        )
    (run_dir / "trace.jsonl").write_text("\n".join(lines) + "\n")

    verdicts = [v for r in report.records if r.verdicts for v in r.verdicts]
    if verdicts:
        (run_dir / "attack.csv").write_text(
            f"# config_digest={digest}\n" + adversary.verdict_csv(verdicts)
        )

    every = cfg["checkpoint_every"]
    if every > 0:
        ckpt_dir = run_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        for r in report.records:
            if r.updates is None or (r.round - 1) % every != 0:
                continue
            for pid, model, _ in r.updates:
                save_params(
                    model,
                    ckpt_dir / f"r{r.round:04d}_p{pid:02d}.params",
                    meta=f"config_digest={digest}",
                )


def run_campaign(cfg: CampaignConfig, output_dir: str | Path | None = None) -> metrics.ComparisonReport:
    """Run every configured case x repetition and persist all artifacts."""
    out = Path(output_dir if output_dir is not None else cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(
        json.dumps({"config": cfg.raw, "digest": cfg.digest}, sort_keys=True, indent=2) + "\n"
    )

    pool = build_pool(cfg)
    eval_set = build_eval_set(cfg, pool)
    # probe_size 0 = the whole pool (the worst-case attacker); -1 disables attacks
    probe = None
    if cfg["probe_size"] >= 0:
        probe = adversary.build_probe(
            pool, cfg["probe_size"], derive_rng(cfg["master_seed"], "probe")
        )

    runs: dict[str, list[metrics.CaseRun]] = {}
    for case in cfg["cases"]:
        runs[case] = []
        for rep in range(cfg["repetitions"]):
            report, seed = _run_one(cfg, case, rep, pool, eval_set, probe)
            _write_run(out, cfg, case, rep, seed, report)
            attack_summary = None
            if report.attack_trace:
                attack_summary = adversary.summarize_attack(report.attack_trace)
            trace = metrics.AccuracyTrace(np.array(report.accuracies), cfg["eval_split"])
            runs[case].append(metrics.CaseRun(trace=trace, attack=attack_summary, seed=seed))

    report = metrics.aggregate_report(
        runs,
        baseline_case="baseline" if "baseline" in runs else cfg["cases"][0],
        n_p=cfg["participants"],
        n_c=cfg["dataset"]["classes"],
        tie_inflation=cfg["tie_inflation"],
        config_digest=cfg.digest,
    )
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(f"# config_digest={cfg.digest}\n" + report.to_csv())
    return report


def partition_stats(cfg: CampaignConfig) -> str:
    """CSV of per-participant class counts, realized rates, and the quota."""
    pool = build_pool(cfg)
    pc = cfg.partition_config()
    parts = partition_noniid(pool, pc, derive_rng(cfg["master_seed"], "stats-partition"))
    try:
        quota = sharing_quota(pc)
        quota_text = str(quota)
    except ValueError:
        quota_text = "infeasible"
    header = (
        f"# config_digest={cfg.digest}\n"
        f"# sharing_quota x={quota_text} (n_s={pc.n_s} n_c={pc.n_c} p={pc.p} n_p={pc.n_p})\n"
    )
    return header + summary_csv(parts)


def evaluate_stored_attack(
    run_dir: str | Path, probe_size: int | None = None
) -> tuple[str, adversary.AttackSummary]:
    """Re-run the attack offline against a run's stored model checkpoints.

    Returns the verdict CSV and the attack summary. The run directory must
    belong to a campaign output tree (config.resolved.json three levels up).
    """
    run_dir = Path(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    if not ckpt_dir.is_dir():
        raise FileNotFoundError(f"no checkpoints under {run_dir}")
    config_path = run_dir.parent.parent.parent / "config.resolved.json"
    if not config_path.exists():
        raise FileNotFoundError(f"missing {config_path}")
    resolved = json.loads(config_path.read_text())
    cfg = CampaignConfig(resolved["config"])
    meta = json.loads((run_dir / "meta.json").read_text())
    if meta["config_digest"] != cfg.digest:
        raise ValueError("run metadata does not match the resolved configuration")
    if meta["truth"] is None:
        raise ValueError(f"run {run_dir} has no attack ground truth")
    truth = {int(k): v for k, v in meta["truth"].items()}

    pool = build_pool(cfg)
    size = cfg["probe_size"] if probe_size is None else probe_size
    probe = adversary.build_probe(pool, size, derive_rng(cfg["master_seed"], "probe"))

    by_round: dict[int, list[tuple[int, Path]]] = {}
    for path in sorted(ckpt_dir.glob("r*_p*.params")):
        stem = path.stem  # r0001_p00
        r = int(stem[1:5])
        pid = int(stem[7:9])
        by_round.setdefault(r, []).append((pid, path))
    if not by_round:
        raise FileNotFoundError(f"no checkpoint files in {ckpt_dir}")

    verdicts = []
    r_trace = []
    for r in sorted(by_round):
        updates = [(pid, load_params(path)) for pid, path in sorted(by_round[r])]
        vs, R = adversary.attack_round(updates, probe, truth, r)
        verdicts.extend(vs)
        r_trace.append(R)
    csv_text = f"# config_digest={cfg.digest}\n" + adversary.verdict_csv(verdicts)
    return csv_text, adversary.summarize_attack(r_trace)


def recompute_report(output_dir: str | Path) -> metrics.ComparisonReport:
    """Rebuild the comparison report from the persisted per-run artifacts."""
    out = Path(output_dir)
    resolved = json.loads((out / "config.resolved.json").read_text())
    cfg = CampaignConfig(resolved["config"])
    runs: dict[str, list[metrics.CaseRun]] = {}
    for case in cfg["cases"]:
        case_dir = out / "runs" / case
        reps = sorted(case_dir.glob("rep*"), key=lambda p: int(p.name[3:]))
        if not reps:
            raise FileNotFoundError(f"no runs for case {case!r} under {case_dir}")
        runs[case] = []
        for rep_dir in reps:
            lines = (rep_dir / "trace.jsonl").read_text().splitlines()
            head = json.loads(lines[0])
            accuracies = []
            r_by_round: dict[int, float] = {}
            for line in lines[1:]:
                entry = json.loads(line)
                accuracies.append(entry["accuracy"])
                if entry["R"] is not None:
                    r_by_round[entry["round"]] = entry["R"]
            attack_summary = None
            if r_by_round:
                r_trace = [r_by_round[r] for r in sorted(r_by_round)]
                attack_summary = adversary.summarize_attack(r_trace)
            runs[case].append(
                metrics.CaseRun(
                    trace=metrics.AccuracyTrace(np.array(accuracies), cfg["eval_split"]),
                    attack=attack_summary,
                    seed=head["seed"],
                )
            )
    return metrics.aggregate_report(
        runs,
        baseline_case="baseline" if "baseline" in runs else cfg["cases"][0],
        n_p=cfg["participants"],
        n_c=cfg["dataset"]["classes"],
        tie_inflation=cfg["tie_inflation"],
        config_digest=cfg.digest,
    )
