"""Experiment runner: split, base training with snapshot capture, ensemble
fitting and evaluation, driven by one declarative config."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .cf import FMRegressor, KNNRecommender, RSVD, SnapshotSchedule
from .cf.factorization import sample_implicit
from .dataset import build_neighbor_index, chronological_leave_one_out, load_ratings, sample_negatives
from .ensembles import HSE, AverageEnsemble, SingleSnapshot, SnapshotEnsembleSE
from .exceptions import ConfigError
from .metrics import ranking_metrics, rmse
from .neuse import NeuSE
from .snapshot_store import materialize
from .utils import derive_seed

_log = logging.getLogger(__name__)

ALGORITHMS = ("rsvd", "fm", "itemknn", "userknn")
METHODS = ("single", "average", "hse", "se", "neuse")
TASKS = ("rating", "ranking")

DEFAULTS = {
    "dataset": {"path": "data/ml-100k/u.data", "format": "movielens-tab", "rating_scale": None},
    "base": {"algorithm": "rsvd", "n_factors": 8, "lr": 0.005, "reg": 0.02, "init_std": 0.01},
    "schedule": {"delta_T": 10, "max_epoch": 90, "k_list": list(range(10, 101, 10))},
    "se": {"cycles": None, "lr": None},
    "methods": ["single", "average", "neuse"],
    "neuse": {},
    "hse": {},
    "task": "rating",
    "n_cutoff": 20,
    "neighbor_cap": 50,
    "test_negatives": 99,
    "train_negatives": 4,
    "seed": 0,
    "out": "runs/default",
}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        if key not in base:
            raise ConfigError(f"unknown config field {path + key!r}")
        if isinstance(base[key], dict) and key not in ("neuse", "hse"):
            if not isinstance(val, dict):
                raise ConfigError(f"config field {path + key!r} must be a mapping")
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class RunConfig:
    """Validated experiment configuration (see :data:`DEFAULTS` for fields)."""

    raw: dict

    @classmethod
    def from_dict(cls, data: dict | None = None, **overrides) -> "RunConfig":
        raw = _merge(DEFAULTS, data or {})
        for key, val in overrides.items():
            if val is None:
                continue
            if key == "base":
                raw["base"]["algorithm"] = val
            else:
                raw = _merge(raw, {key: val})
        cfg = cls(raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {str(path)!r} does not exist")
        data = yaml.safe_load(path.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data, **overrides)

    def __getattr__(self, name):
        raw = self.__dict__.get("raw", {})
        if name in raw:
            return raw[name]
        raise AttributeError(name)

    def validate(self):
        r = self.raw
        if isinstance(r["methods"], str):
            r["methods"] = [m.strip() for m in r["methods"].split(",") if m.strip()]
        r["methods"] = [str(m).lower() for m in r["methods"]]
        algo = str(r["base"]["algorithm"]).lower()
        r["base"]["algorithm"] = algo
        if algo not in ALGORITHMS:
            raise ConfigError(f"base.algorithm: unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
        if r["task"] not in TASKS:
            raise ConfigError(f"task: expected one of {TASKS}, got {r['task']!r}")
        if not r["methods"]:
            raise ConfigError("methods: at least one ensemble method is required")
        for m in r["methods"]:
            if m not in METHODS:
                raise ConfigError(f"methods: unknown method {m!r}; expected one of {METHODS}")
        if len(set(r["methods"])) != len(r["methods"]):
            raise ConfigError("methods: duplicate entries")
        if "se" in r["methods"] and algo.endswith("knn"):
            raise ConfigError(f"methods: SE applies only to SGD-trained models, not {algo}")
        for key in ("n_cutoff", "neighbor_cap", "test_negatives", "train_negatives"):
            if not isinstance(r[key], int) or r[key] < 1:
                raise ConfigError(f"{key}: must be a positive integer")
        if not isinstance(r["seed"], int):
            raise ConfigError("seed: must be an integer")
        for key in ("neuse", "hse"):
            if not isinstance(r[key], dict):
                raise ConfigError(f"{key}: must be a mapping of hyperparameters")
        try:
            self.schedule_obj()
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from None

    def schedule_obj(self) -> SnapshotSchedule:
        s = self.raw["schedule"]
        if self.raw["base"]["algorithm"].endswith("knn"):
            return SnapshotSchedule("knn-k-list", k_list=tuple(s["k_list"]))
        return SnapshotSchedule("every-delta-T", delta_T=s["delta_T"], max_epoch=s["max_epoch"])

    def fingerprint(self) -> str:
        """Hash of everything that affects results (the output path excluded)."""
        body = {k: v for k, v in self.raw.items() if k != "out"}
        text = json.dumps(body, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_yaml(self) -> str:
        """Resolved config without the output path, so runs are comparable."""
        return yaml.safe_dump({k: v for k, v in self.raw.items() if k != "out"}, sort_keys=True)


@dataclass
class EvalReport:
    method: str
    task: str
    rmse: float | None = None
    hr_at_n: float | None = None
    ndcg_at_n: float | None = None
    n: int = 20
    fingerprint: str = ""
    seconds: float = 0.0

    def __post_init__(self):
        if self.rmse is not None and self.rmse < 0:
            raise ValueError("rmse must be non-negative")
        for v in (self.hr_at_n, self.ndcg_at_n):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError("ranking metrics must lie in [0, 1]")

    def metrics(self) -> list[tuple[str, float]]:
        if self.task == "rating":
            return [("rmse", self.rmse)]
        return [(f"hr@{self.n}", self.hr_at_n), (f"ndcg@{self.n}", self.ndcg_at_n)]


def report_lines(reports) -> list[str]:
    """Machine-readable ``method,task,metric,value`` records (timing excluded)."""
    lines = ["method,task,metric,value"]
    for r in reports:
        for name, val in r.metrics():
            lines.append(f"{r.method},{r.task},{name},{val:.10g}")
    return lines


def format_table(reports) -> str:
    if not reports:
        return ""
    names = [name for name, _ in reports[0].metrics()]
    header = ["method"] + names + ["seconds"]
    rows = [[r.method] + [f"{v:.4f}" for _, v in r.metrics()] + [f"{r.seconds:.1f}"]
            for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = "  ".join(("{:<%d}" if k == 0 else "{:>%d}") % w for k, w in enumerate(widths))
    out = [fmt.format(*header), "  ".join("-" * w for w in widths)]
    out += [fmt.format(*row) for row in rows]
    return "\n".join(out)


def write_reports(reports, path) -> None:
    Path(path).write_text("\n".join(report_lines(reports)) + "\n")


@dataclass
class PreparedData:
    dataset: object
    split: object
    neighbors: object
    test_negatives: object = None
    validation_negatives: object = None


def prepare(config: RunConfig) -> PreparedData:
    ds_cfg = config.dataset
    path = Path(ds_cfg["path"])
    if not path.exists():
        raise FileNotFoundError(f"dataset file {str(path)!r} does not exist")
    scale = ds_cfg.get("rating_scale")
    ds = load_ratings(path, ds_cfg["format"], tuple(scale) if scale else None)
    split = chronological_leave_one_out(ds)
    neighbors = build_neighbor_index(split.train, config.neighbor_cap)
    data = PreparedData(ds, split, neighbors)
    if config.task == "ranking":
        n = config.test_negatives
        data.test_negatives = sample_negatives(split, n, derive_seed(config.seed, "negatives"), "test")
        data.validation_negatives = sample_negatives(
            split, n, derive_seed(config.seed, "validation-negatives"), "validation")
    return data


def _base_estimator(config: RunConfig, schedule=None):
    b = dict(config.base)
    algo = b.pop("algorithm")
    implicit = config.task == "ranking"
    if algo.endswith("knn"):
        return KNNRecommender(kind=algo[:-3], k_list=tuple(config.schedule["k_list"]),
                              implicit=implicit)
    schedule = schedule or config.schedule_obj()
    cls = RSVD if algo == "rsvd" else FMRegressor
    return cls(**b, delta_T=schedule.delta_T, max_epoch=schedule.max_epoch,
               schedule=schedule.mode, cycles=schedule.cycles, implicit=implicit,
               n_negatives=config.train_negatives, seed=derive_seed(config.seed, "base"))


def train_base(config: RunConfig, data: PreparedData, cyclic=False) -> list:
    """Snapshot models of the configured base algorithm; ``cyclic`` runs the
    cosine-annealed variant whose cycle ends feed SE."""
    if not cyclic:
        return _base_estimator(config).fit(data.split.train).snapshots_
    main = config.schedule_obj()
    cycles = config.se["cycles"] or main.n_snapshots
    sched = SnapshotSchedule("cyclic-lr", max_epoch=main.max_epoch, cycles=cycles)
    est = _base_estimator(config, sched)
    if config.se["lr"] is not None:
        est.set_params(lr=config.se["lr"])
    return est.fit(data.split.train).snapshots_


@dataclass
class Materialized:
    train: object
    train_y: np.ndarray
    validation: object
    validation_y: np.ndarray
    test: object
    test_y: np.ndarray
    extra: dict = field(default_factory=dict)


def _candidates(negs):
    users, items, labels = negs.candidates()
    return np.column_stack([users, items]), labels


def materialize_splits(config: RunConfig, data: PreparedData, snapshots) -> Materialized:
    """Snapshot predictions over train, validation and test pairs, with
    per-snapshot validation scores recorded on the validation set."""
    split = data.split
    if config.task == "rating":
        scale = split.train.rating_scale
        tr_pairs, tr_y = split.train.pairs, split.train.ratings
        va_pairs, va_y = split.validation.pairs, split.validation.ratings
        te_pairs, te_y = split.test.pairs, split.test.ratings
    else:
        scale = None
        rng = np.random.default_rng(derive_seed(config.seed, "train-negatives"))
        u, i, tr_y = sample_implicit(split.train, config.train_negatives, rng)
        tr_pairs = np.column_stack([u, i])
        va_pairs, va_y = _candidates(data.validation_negatives)
        te_pairs, te_y = _candidates(data.test_negatives)
    Xtr = materialize(snapshots, tr_pairs, scale)
    Xv = materialize(snapshots, va_pairs, scale)
    Xt = materialize(snapshots, te_pairs, scale)
    metric = "rmse" if config.task == "rating" else f"hr@{config.n_cutoff}"
    scores = [_score(config.task, Xv.pairs, Xv.preds[:, s], va_y, config.n_cutoff)[0]
              for s in range(Xv.n_snapshots)]
    Xv = Xv.with_validation(scores, metric)
    return Materialized(Xtr, np.asarray(tr_y, float), Xv, np.asarray(va_y, float), Xt,
                        np.asarray(te_y, float))


def _score(task, pairs, preds, truth, n_cutoff):
    if task == "rating":
        return (rmse(preds, truth),)
    return ranking_metrics(pairs[:, 0], pairs[:, 1], preds, truth, n_cutoff)


def evaluate(config: RunConfig, method, preds, sets: Materialized, seconds=0.0) -> EvalReport:
    task = config.task
    X = sets.test
    if task == "rating":
        p = np.clip(preds, *X.rating_scale) if X.rating_scale is not None else preds
        return EvalReport(method, task, rmse=rmse(p, sets.test_y), n=config.n_cutoff,
                          fingerprint=config.fingerprint(), seconds=seconds)
    hr, ndcg = _score(task, X.pairs, preds, sets.test_y, config.n_cutoff)
    return EvalReport(method, task, hr_at_n=hr, ndcg_at_n=ndcg, n=config.n_cutoff,
                      fingerprint=config.fingerprint(), seconds=seconds)


def fit_method(config: RunConfig, method, data: PreparedData, sets: Materialized):
    """Fit one combiner and return its test-set predictions (and the model)."""
    common = {"task": config.task, "n_cutoff": config.n_cutoff}
    if method == "single":
        model = SingleSnapshot().fit(sets.validation)
        return model.predict(sets.test), model
    if method == "average":
        model = AverageEnsemble().fit(sets.train)
        return model.predict(sets.test), model
    if method == "se":
        cyc = sets.extra.get("se_test")
        if cyc is None:
            snaps = train_base(config, data, cyclic=True)
            scale = sets.test.rating_scale
            cyc = materialize(snaps, sets.test.pairs, scale)
            sets.extra["se_test"] = cyc
        model = SnapshotEnsembleSE().fit(cyc)
        return model.predict(cyc), model
    if method == "hse":
        model = HSE(**{**config.hse, **common, "seed": derive_seed(config.seed, "hse")})
        model.fit(sets.train, sets.train_y, eval_set=(sets.validation, sets.validation_y))
        return model.predict(sets.test), model
    if method == "neuse":
        model = NeuSE(**{**config.neuse, **common, "seed": derive_seed(config.seed, "neuse")})
        model.fit(sets.train, sets.train_y, neighbors=data.neighbors,
                  eval_set=(sets.validation, sets.validation_y))
        return model.predict(sets.test), model
    raise ConfigError(f"methods: unknown method {method!r}")


def run_experiment(config, out_dir=None, echo=False) -> list[EvalReport]:
    """Run the whole pipeline; writes ``reports.csv`` (and the resolved
    config) to ``out_dir`` when given."""
    if not isinstance(config, RunConfig):
        config = RunConfig.from_file(config) if isinstance(config, (str, Path)) \
            else RunConfig.from_dict(config)
    data = prepare(config)
    snapshots = train_base(config, data)
    sets = materialize_splits(config, data, snapshots)
    reports, models = [], {}
    for method in config.methods:
        start = time.perf_counter()
        preds, models[method] = fit_method(config, method, data, sets)
        reports.append(evaluate(config, method, preds, sets, time.perf_counter() - start))
        _log.info("%s done in %.1fs", method, reports[-1].seconds)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_reports(reports, out / "reports.csv")
        (out / "config.yaml").write_text(config.to_yaml())
        if "neuse" in models:
            models["neuse"].save(out / "neuse.params")
    if echo:
        print(format_table(reports))
    return reports
