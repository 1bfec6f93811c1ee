"""Experiment runner: JSON configs, mode/ablation/seed/drift grids, artifacts and tables.

One config file describes one experiment.  Every grid cell is an independent
run with its own directory holding per-epoch metrics, the alpha trajectory,
a summary JSON and a parameter checkpoint.  Summaries never contain wall-clock
values, so re-running a config reproduces them byte for byte; timings live in
``timing.json`` next to the tables.
"""
from __future__ import annotations

import csv
import io
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from itertools import product
from pathlib import Path

import numpy as np

from .data import CsvSchema, DriftSpec, TaskDataset, TaskDrift, load_csv, make_synthetic_tasks
from .divergence import DivergenceReport, distribution_from_counts
from .errors import ConfigError, ValidationError
from .nn import save_checkpoint
from .trainer import ABLATIONS, MODES, MultiTaskModel, TrainConfig, evaluate, fit

OUTPUT_ROOT_ENV = "SMTL_OUTPUT_ROOT"

# --------------------------------------------------------------------- config

SYNTHETIC_DEFAULTS = {
    "num_tasks": 3,
    "num_classes": 6,
    "dim": 8,
    "n_per_class": 40,
    "task_shift": 1.0,
    "noise": 1.0,
    "n_val_per_class": None,
    "n_test_per_class": 200,
    "anchor_spacing": None,
    "seed_offset": 0,
}


def _fail(where: str, msg: str):
    raise ConfigError(f"{where}: {msg}")


def _check_keys(raw: dict, allowed, where: str) -> None:
    if not isinstance(raw, dict):
        _fail(where, f"expected an object, got {type(raw).__name__}")
    extra = sorted(set(raw) - set(allowed))
    if extra:
        _fail(where, f"unknown keys {extra}; allowed {sorted(allowed)}")


@dataclass
class DataConfig:
    kind: str = "synthetic"
    synthetic: dict = field(default_factory=dict)
    csv: dict | None = None
    drift: dict | None = None

    @classmethod
    def from_dict(cls, raw: dict, base: Path) -> "DataConfig":
        _check_keys(raw, {"kind", "synthetic", "csv", "drift"}, "data")
        kind = raw.get("kind", "synthetic")
        if kind not in ("synthetic", "csv"):
            _fail("data.kind", f"must be 'synthetic' or 'csv', got {kind!r}")
        syn = dict(SYNTHETIC_DEFAULTS)
        if kind == "synthetic":
            _check_keys(raw.get("synthetic", {}), SYNTHETIC_DEFAULTS, "data.synthetic")
            syn.update(raw.get("synthetic", {}))
            for key in ("num_tasks", "num_classes", "dim", "n_per_class"):
                if not isinstance(syn[key], int) or syn[key] < 1:
                    _fail(f"data.synthetic.{key}", "must be a positive integer")
        csv_block = None
        if kind == "csv":
            csv_block = raw.get("csv")
            if csv_block is None:
                _fail("data.csv", "required when data.kind is 'csv'")
            _check_keys(csv_block, {"tasks", "feature_columns", "label_column", "num_classes"}, "data.csv")
            if not csv_block.get("tasks"):
                _fail("data.csv.tasks", "must list at least one task")
            for i, task in enumerate(csv_block["tasks"]):
                _check_keys(task, {"name", "train", "test", "val"}, f"data.csv.tasks[{i}]")
                for split in ("train", "test"):
                    if split not in task:
                        _fail(f"data.csv.tasks[{i}].{split}", "path is required")
            if not isinstance(csv_block.get("num_classes"), int) or csv_block["num_classes"] < 1:
                _fail("data.csv.num_classes", "must be a positive integer")
            if not csv_block.get("feature_columns"):
                _fail("data.csv.feature_columns", "must name at least one column")
            csv_block = dict(csv_block)
            csv_block["tasks"] = [
                {k: (v if k == "name" else str((base / v).resolve())) for k, v in task.items()}
                for task in csv_block["tasks"]
            ]
        drift = raw.get("drift")
        if drift is not None:
            _check_keys(drift, {"kind", "classes_per_task", "tasks"}, "data.drift")
            if drift.get("kind", "disjoint") not in ("disjoint", "explicit"):
                _fail("data.drift.kind", "must be 'disjoint' or 'explicit'")
            if drift.get("kind") == "explicit" and "tasks" not in drift:
                _fail("data.drift.tasks", "required for explicit drift")
        return cls(kind, syn, csv_block, drift)

    @property
    def num_tasks(self) -> int:
        return len(self.csv["tasks"]) if self.kind == "csv" else self.synthetic["num_tasks"]

    @property
    def num_classes(self) -> int:
        return self.csv["num_classes"] if self.kind == "csv" else self.synthetic["num_classes"]

    def drift_spec(self, ratio: float) -> DriftSpec | None:
        if self.drift is None:
            return None
        if self.drift.get("kind", "disjoint") == "explicit":
            tasks = self.drift["tasks"]
            return DriftSpec(tuple(None if c is None else TaskDrift(tuple(c), ratio) for c in tasks))
        return DriftSpec.disjoint(self.num_tasks, self.num_classes, ratio, self.drift.get("classes_per_task"))

    def load(self, seed: int, ratio: float) -> tuple[list[TaskDataset], list[TaskDataset]]:
        """Train and test splits for one run; drift touches the train splits only."""
        if self.kind == "synthetic":
            s = self.synthetic
            tasks = make_synthetic_tasks(
                s["num_tasks"], s["num_classes"], s["dim"], s["n_per_class"], s["task_shift"], s["noise"],
                seed + s["seed_offset"], s["n_val_per_class"], s["n_test_per_class"], s["anchor_spacing"],
            )
            train, test = tasks.split("train"), tasks.split("test")
        else:
            c = self.csv
            schema = CsvSchema(list(c["feature_columns"]), c.get("label_column", "label"), c["num_classes"])
            train, test = [], []
            for i, task in enumerate(c["tasks"]):
                name = task.get("name", f"task{i}")
                train.append(load_csv(task["train"], schema, name, "train"))
                test.append(load_csv(task["test"], schema, name, "test"))
        spec = self.drift_spec(ratio)
        if spec is not None and ratio > 0:
            train = spec.apply(train, seed)
        return train, test


@dataclass
class GridConfig:
    modes: list[str]
    ablations: list[list[str]]
    seeds: list[int]
    drift_ratios: list[float]

    @classmethod
    def from_dict(cls, raw: dict) -> "GridConfig":
        _check_keys(raw, {"modes", "ablations", "seeds", "drift_ratios"}, "grid")
        modes = raw.get("modes", ["vanilla", "smtl"])
        if not modes or any(m not in MODES for m in modes):
            _fail("grid.modes", f"must be a non-empty list drawn from {list(MODES)}, got {modes}")
        ablations = raw.get("ablations", [[]])
        if not isinstance(ablations, list) or not ablations:
            _fail("grid.ablations", "must be a non-empty list of ablation lists")
        for a in ablations:
            if not isinstance(a, list) or any(x not in ABLATIONS for x in a):
                _fail("grid.ablations", f"entries must be lists drawn from {list(ABLATIONS)}, got {a}")
        seeds = raw.get("seeds")
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            _fail("grid.seeds", "must be a non-empty list of integers")
        ratios = raw.get("drift_ratios", [0.0])
        if not ratios or any(not isinstance(r, (int, float)) or not 0 <= r < 1 for r in ratios):
            _fail("grid.drift_ratios", "must be a non-empty list of numbers in [0, 1)")
        return cls(list(modes), [sorted(set(a)) for a in ablations], list(seeds), [float(r) for r in ratios])

    def variants(self) -> list[tuple[str, tuple[str, ...]]]:
        """(mode, ablations) pairs; ablation sets only expand the smtl mode."""
        out = []
        for mode in self.modes:
            sets = self.ablations if mode == "smtl" else [[]]
            for a in sets:
                if (mode, tuple(a)) not in out:
                    out.append((mode, tuple(a)))
        return out


@dataclass
class TimingConfig:
    epochs: int = 10
    modes: list[str] = field(default_factory=lambda: ["vanilla", "smtl"])
    seed: int = 0
    drift_ratio: float = 0.0

    @classmethod
    def from_dict(cls, raw: dict) -> "TimingConfig":
        _check_keys(raw, {f.name for f in fields(cls)}, "timing")
        cfg = cls(**raw)
        if cfg.epochs < 1:
            _fail("timing.epochs", "must be positive")
        if not cfg.modes or any(m not in MODES for m in cfg.modes):
            _fail("timing.modes", f"must be drawn from {list(MODES)}")
        return cfg


@dataclass
class ExperimentConfig:
    name: str
    data: DataConfig
    train: dict
    grid: GridConfig
    output_dir: Path
    timing: TimingConfig | None = None
    workers: int = 1

    @classmethod
    def from_dict(cls, raw: dict, base: Path | None = None) -> "ExperimentConfig":
        base = base or Path.cwd()
        _check_keys(raw, {"name", "data", "train", "grid", "output_dir", "timing", "workers"}, "config")
        train = dict(raw.get("train", {}))
        allowed = {f.name for f in fields(TrainConfig)} - {"mode", "ablations", "seed"}
        _check_keys(train, allowed, "train")
        try:
            TrainConfig(**train)
        except (ConfigError, TypeError) as exc:
            _fail("train", str(exc))
        if "grid" not in raw:
            _fail("grid", "required")
        out = raw.get("output_dir", f"results/{raw.get('name', 'experiment')}")
        root = os.environ.get(OUTPUT_ROOT_ENV)
        out_path = Path(out)
        if not out_path.is_absolute():
            out_path = (Path(root) if root else Path.cwd()) / out_path
        workers = raw.get("workers", 1)
        if not isinstance(workers, int) or workers < 1:
            _fail("workers", "must be a positive integer")
        timing = TimingConfig.from_dict(raw["timing"]) if raw.get("timing") is not None else None
        return cls(
            raw.get("name", "experiment"),
            DataConfig.from_dict(raw.get("data", {}), base),
            train,
            GridConfig.from_dict(raw["grid"]),
            out_path,
            timing,
            workers,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config: no such file {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(raw, path.parent.resolve())

    def train_config(self, mode: str, ablations, seed: int, **overrides) -> TrainConfig:
        return TrainConfig(**{**self.train, **overrides}, mode=mode, ablations=tuple(ablations), seed=seed)


# ----------------------------------------------------------------------- runs

@dataclass
class RunSpec:
    mode: str
    ablations: tuple[str, ...]
    drift_ratio: float
    seed: int

    @property
    def variant(self) -> str:
        return self.mode if self.mode != "smtl" or not self.ablations else f"smtl[{'+'.join(self.ablations)}]"

    @property
    def dirname(self) -> str:
        return f"{self.variant.replace('[', '-').replace(']', '').replace('+', '-')}__rho{self.drift_ratio:g}__seed{self.seed}"


@dataclass
class RunResult:
    spec: RunSpec
    task_names: list[str]
    accuracy: list[float]
    epoch_seconds: float
    error: str | None = None


def expand_grid(cfg: ExperimentConfig) -> list[RunSpec]:
    return [
        RunSpec(mode, abl, ratio, seed)
        for (mode, abl), ratio, seed in product(cfg.grid.variants(), cfg.grid.drift_ratios, cfg.grid.seeds)
    ]


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def execute_run(cfg: ExperimentConfig, spec: RunSpec) -> RunResult:
    """Train one grid cell and write its artifacts into ``output_dir/runs/<cell>``."""
    train, test = cfg.data.load(spec.seed, spec.drift_ratio)
    tcfg = cfg.train_config(spec.mode, spec.ablations, spec.seed)
    model = MultiTaskModel.build(train[0].dim, train[0].num_classes, len(train), tcfg)
    state = fit(model, train, tcfg, test=test)
    accs = evaluate(model, test).tolist()
    names = [d.name for d in train]

    run_dir = cfg.output_dir / "runs" / spec.dirname
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics_rows = [
        [r.epoch, names[t], repr(r.train_loss[t]), repr(r.test_accuracy[t]), repr(r.semantic_loss), repr(r.lr), repr(r.epoch_seconds)]
        for r in state.history
        for t in range(len(names))
    ]
    _write_atomic(
        run_dir / "metrics.csv",
        _csv_text(["epoch", "task", "train_loss", "test_accuracy", "semantic_loss", "lr", "epoch_seconds"], metrics_rows),
    )
    T = len(names)
    alpha_rows = [
        [e, t, i, repr(float(a[t, i]))] for e, a in enumerate(state.alpha_trajectory) for t in range(T) for i in range(T)
    ]
    _write_atomic(run_dir / "alpha.csv", _csv_text(["epoch", "t", "i", "value"], alpha_rows))

    counts = [d.class_counts.tolist() for d in train]
    report = DivergenceReport.from_distributions(
        [distribution_from_counts(c) for c in counts], state.E if state.E is not None else None
    )
    summary = {
        "variant": spec.variant,
        "mode": spec.mode,
        "ablations": list(spec.ablations),
        "drift_ratio": spec.drift_ratio,
        "seed": spec.seed,
        "train_config": tcfg.to_dict(),
        "tasks": names,
        "class_counts": counts,
        "beta": state.betas.tolist(),
        "divergence": report.to_dict(),
        "alpha": state.alpha.tolist(),
        "bank": state.bank.to_dict() if state.bank is not None else None,
        "final_train_loss": state.history[-1].train_loss,
        "final_semantic_loss": state.history[-1].semantic_loss,
        "test_accuracy": accs,
        "mean_test_accuracy": float(np.mean(accs)),
    }
    _write_atomic(run_dir / "summary.json", _dumps(summary))
    save_checkpoint(run_dir / "model.ckpt", model.named_parameters(), model.manifest())
    seconds = float(np.mean([r.epoch_seconds for r in state.history]))
    return RunResult(spec, names, accs, seconds)


def _safe_run(args) -> RunResult:
    cfg, spec = args
    try:
        return execute_run(cfg, spec)
    except Exception as exc:  # recorded so the rest of the grid still lands on disk
        return RunResult(spec, [], [], float("nan"), f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}")


def measure_epoch_times(cfg: ExperimentConfig) -> dict:
    """Mean training-epoch wall time per mode on one seed, without evaluation."""
    tc = cfg.timing
    train, _ = cfg.data.load(tc.seed, tc.drift_ratio)
    per_mode = {}
    for mode in tc.modes:
        tcfg = cfg.train_config(mode, (), tc.seed, epochs=tc.epochs)
        model = MultiTaskModel.build(train[0].dim, train[0].num_classes, len(train), tcfg)
        state = fit(model, train, tcfg)
        per_mode[mode] = [r.epoch_seconds for r in state.history]
    out = {"epochs": tc.epochs, "mean_epoch_seconds": {m: float(np.mean(v)) for m, v in per_mode.items()}}
    if "smtl" in per_mode and "vanilla" in per_mode:
        out["smtl_over_vanilla"] = out["mean_epoch_seconds"]["smtl"] / out["mean_epoch_seconds"]["vanilla"]
    out["epoch_seconds"] = per_mode
    return out


# --------------------------------------------------------------------- tables

@dataclass
class TableRow:
    variant: str
    drift_ratio: float
    n: int
    mean: dict[str, float]
    std: dict[str, float | None]
    epoch_seconds: float | None = None


def _std(values) -> float | None:
    return float(np.std(values, ddof=1)) if len(values) >= 2 else None


def aggregate(results: list[dict]) -> list[TableRow]:
    """Group per-run accuracies by (variant, drift ratio); mean and sample std over seeds.

    Each result needs ``variant``, ``drift_ratio``, ``tasks`` and ``accuracy``;
    ``epoch_seconds`` is optional.
    """
    if not results:
        raise ValidationError("no results to tabulate")
    groups: dict[tuple[str, float], list[dict]] = {}
    for r in results:
        groups.setdefault((r["variant"], float(r["drift_ratio"])), []).append(r)
    rows = []
    for (variant, ratio), runs in groups.items():
        tasks = sorted(runs[0]["tasks"])
        per_task = {name: [dict(zip(r["tasks"], r["accuracy"]))[name] for r in runs] for name in tasks}
        avg = [float(np.mean(r["accuracy"])) for r in runs]
        mean = {name: float(np.mean(v)) for name, v in per_task.items()}
        mean["avg."] = float(np.mean([mean[n] for n in tasks]))
        std = {name: _std(v) for name, v in per_task.items()}
        std["avg."] = _std(avg)
        secs = [r["epoch_seconds"] for r in runs if r.get("epoch_seconds") is not None]
        rows.append(TableRow(variant, ratio, len(runs), mean, std, float(np.mean(secs)) if secs else None))
    return rows


def _cell(mean: float, std: float | None) -> str:
    return f"{100 * mean:.2f} ± {'n/a' if std is None else f'{100 * std:.2f}'}"


def render_table(results: list[dict]) -> tuple[str, str]:
    """Markdown and CSV renderings: one row per (variant, drift ratio), tasks A-Z then ``avg.``."""
    rows = aggregate(results)
    tasks = sorted({name for r in results for name in r["tasks"]})
    cols = [*tasks, "avg."]
    timed = any(r.epoch_seconds is not None for r in rows)
    head = ["variant", "drift", "seeds", *cols] + (["sec/epoch"] if timed else [])
    md = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    csv_rows = []
    for r in rows:
        cells = [r.variant, f"{r.drift_ratio:g}", str(r.n), *(_cell(r.mean[c], r.std[c]) for c in cols)]
        if timed:
            cells.append("n/a" if r.epoch_seconds is None else f"{r.epoch_seconds:.4f}")
        md.append("| " + " | ".join(cells) + " |")
        line = [r.variant, r.drift_ratio, r.n]
        for c in cols:
            line += [repr(r.mean[c]), "n/a" if r.std[c] is None else repr(r.std[c])]
        if timed:
            line.append("n/a" if r.epoch_seconds is None else repr(r.epoch_seconds))
        csv_rows.append(line)
    csv_head = ["variant", "drift_ratio", "seeds"]
    for c in cols:
        csv_head += [f"{c} mean", f"{c} std"]
    if timed:
        csv_head.append("epoch_seconds")
    return "\n".join(md) + "\n", _csv_text(csv_head, csv_rows)


def drift_sweep_csv(results: list[dict]) -> str:
    """Average accuracy against drift ratio, one row per (variant, ratio)."""
    rows = sorted(aggregate(results), key=lambda r: (r.variant, r.drift_ratio))
    return _csv_text(
        ["variant", "drift_ratio", "mean_accuracy", "std_accuracy", "seeds"],
        [[r.variant, r.drift_ratio, repr(r.mean["avg."]), "n/a" if r.std["avg."] is None else repr(r.std["avg."]), r.n] for r in rows],
    )


# ------------------------------------------------------------------ experiment

@dataclass
class ExperimentOutcome:
    results: list[RunResult]
    table_markdown: str
    timing: dict | None

    @property
    def failures(self) -> list[RunResult]:
        return [r for r in self.results if r.error is not None]


def _result_record(r: RunResult) -> dict:
    return {
        "variant": r.spec.variant,
        "mode": r.spec.mode,
        "ablations": list(r.spec.ablations),
        "drift_ratio": r.spec.drift_ratio,
        "seed": r.spec.seed,
        "run_dir": f"runs/{r.spec.dirname}",
        "tasks": r.task_names,
        "accuracy": r.accuracy,
    }


def write_tables(out_dir: Path, records: list[dict], seconds: dict[str, float] | None = None) -> str:
    """(Re)write results.md / results.csv / drift_sweep.csv from run records."""
    timed = [dict(r, epoch_seconds=(seconds or {}).get(r["run_dir"])) for r in records]
    md, text = render_table(timed)
    _write_atomic(out_dir / "results.md", md)
    _write_atomic(out_dir / "results.csv", text)
    if len({r["drift_ratio"] for r in records}) > 1:
        _write_atomic(out_dir / "drift_sweep.csv", drift_sweep_csv(records))
    return md


def run_experiment(cfg: ExperimentConfig | str | Path) -> ExperimentOutcome:
    """Execute the full grid and write every artifact under ``cfg.output_dir``."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.load(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    specs = expand_grid(cfg)
    jobs = [(cfg, s) for s in specs]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_safe_run, jobs))
    else:
        results = [_safe_run(j) for j in jobs]

    ok = [r for r in results if r.error is None]
    records = [_result_record(r) for r in ok]
    failures = [{"run": r.spec.dirname, "error": r.error} for r in results if r.error is not None]
    _write_atomic(cfg.output_dir / "results.json", _dumps({"name": cfg.name, "runs": records, "failures": failures}))

    md = ""
    if records:
        rows = aggregate(records)
        summary = {
            "name": cfg.name,
            "rows": [
                {"variant": r.variant, "drift_ratio": r.drift_ratio, "seeds": r.n, "mean": r.mean, "std": r.std}
                for r in rows
            ],
        }
        _write_atomic(cfg.output_dir / "summary.json", _dumps(summary))

    seconds = {_result_record(r)["run_dir"]: r.epoch_seconds for r in ok}
    timing = {"runs": seconds}
    if cfg.timing is not None:
        timing["comparison"] = measure_epoch_times(cfg)
    _write_atomic(cfg.output_dir / "timing.json", _dumps(timing))
    if records:
        md = write_tables(cfg.output_dir, records, seconds)
    return ExperimentOutcome(results, md, timing)


def render_results_dir(results_dir) -> str:
    """Rebuild the tables of a finished experiment from its ``results.json``."""
    results_dir = Path(results_dir)
    path = results_dir / "results.json"
    if not path.exists():
        raise FileNotFoundError(f"missing {path}")
    records = json.loads(path.read_text())["runs"]
    timing_path = results_dir / "timing.json"
    seconds = json.loads(timing_path.read_text()).get("runs") if timing_path.exists() else None
    return write_tables(results_dir, records, seconds)


# ---------------------------------------------------------------- diagnostics

def diagnostics(run_dir) -> dict:
    """Divergence report and alpha-trajectory summary for one finished run.

    Label JS and TV are recomputed from the stored class counts; E and alpha are
    the final values the run saved.
    """
    run_dir = Path(run_dir)
    missing = [name for name in ("summary.json", "alpha.csv") if not (run_dir / name).exists()]
    if missing:
        raise FileNotFoundError(f"{run_dir} is missing {', '.join(missing)}")
    summary = json.loads((run_dir / "summary.json").read_text())
    dists = [distribution_from_counts(c) for c in summary["class_counts"]]
    E = summary["divergence"].get("semantic_E")
    report = DivergenceReport.from_distributions(dists, None if E is None else np.asarray(E))

    T = len(dists)
    traj: dict[int, np.ndarray] = {}
    with (run_dir / "alpha.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            e = int(row["epoch"])
            traj.setdefault(e, np.zeros((T, T)))[int(row["t"]), int(row["i"])] = float(row["value"])
    epochs = sorted(traj)
    steps = [float(np.abs(traj[b] - traj[a]).max()) for a, b in zip(epochs, epochs[1:])]
    return {
        "run": run_dir.name,
        "tasks": summary["tasks"],
        "divergence": report.to_dict(),
        "alpha_initial": traj[epochs[0]].tolist() if epochs else None,
        "alpha_final": summary["alpha"],
        "alpha_epochs": len(epochs),
        "alpha_max_change_per_epoch": steps,
        "alpha_final_change": steps[-1] if steps else 0.0,
    }

