"""Experiment orchestration behind the command-line interface.

On-disk dataset layout (written by :func:`generate`)::

    <dir>/client_<i>.idx     six IDX records back to back:
                             train features (f8, n x d), train labels (i4, n),
                             train ambiguous mask (u1, n), then the same
                             three for the test split
    <dir>/global_test.idx    clean global test set: features (f8), labels (i4)
    <dir>/manifest.json      schema version, data seed, shard spec, generator
                             settings and the SHA-256 of every file

Result layout (written by :func:`run_experiment`)::

    <out>/rounds_<preset>_seed<k>.csv    one row per (round, client)
    <out>/metrics_<preset>_seed<k>.json  final MetricsReport for one run
    <out>/report.json                    per-preset mean and std over seeds
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import (LabeledPool, Partition, ClientData, ShardSpec, inject_label_noise, load_idx,
                   merge_pools, partition_shards, synthetic_for_spec)
from .errors import ConfigError, FairFedError, FormatError
from .federation import (ClientState, TrainingHistory, ensure_upsilons, make_clients,
                         run_federation)
from .idx import read_records, write_records
from .metrics import MetricsReport, build_report
from .nn import Batch
from .objective import FairnessPreset, PresetKind

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1

CSV_COLUMNS = ["round", "client_id", "upsilon", "loss", "weight", "exponent", "delta_norm",
               "g", "objective", "sum_g", "global_acc"]

SUMMARY_FIELDS = ["global_acc", "acc_max_upsilon", "acc_min_upsilon", "std", "psi", "pearson"]


class DataIntegrityError(ConfigError):
    """Dataset files do not match their manifest."""


def atomic_write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# data


def build_pool(config: ExperimentConfig) -> LabeledPool:
    d = config.data
    spec = config.shards.spec()
    if d.source == "synthetic":
        return synthetic_for_spec(spec, d.num_classes, d.noise_rate, d.spread, d.seed,
                                  global_test_size=config.shards.global_test_size,
                                  num_features=d.num_features, overlap=d.overlap)
    clean = load_idx(d.images, d.labels)
    if d.ambiguous_images:
        return merge_pools(clean, load_idx(d.ambiguous_images, d.ambiguous_labels))
    return inject_label_noise(clean, d.ambiguous_fraction, d.noise_rate, d.seed)


# Size-dominance settings for FedAvg.  "clean" and "dirty" hold the same
# totals (80 clean, 60 ambiguous shards); only who owns the big client differs.
DOMINANCE_SPECS = {
    "even": ShardSpec((16,) * 5, (4,) * 5),
    "clean": ShardSpec((52, 7, 7, 7, 7), (8, 13, 13, 13, 13)),
    "dirty": ShardSpec((18, 18, 18, 18, 8), (2, 2, 2, 2, 52)),
}


def dominance_config(setting: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """A FedAvg-only copy of ``base`` using one of :data:`DOMINANCE_SPECS`."""
    if setting not in DOMINANCE_SPECS:
        raise ConfigError(f"unknown setting {setting!r}; choose from {sorted(DOMINANCE_SPECS)}")
    spec = DOMINANCE_SPECS[setting]
    config = dataclasses.replace(base or ExperimentConfig())
    config.shards = dataclasses.replace(config.shards, clean=list(spec.clean),
                                        ambiguous=list(spec.ambiguous))
    config.presets = ["fedavg"]
    return config.validate()


def build_partition(config: ExperimentConfig) -> Partition:
    s = config.shards
    return partition_shards(build_pool(config), s.spec(), config.data.seed,
                            test_fraction=s.test_fraction, global_test_size=s.global_test_size)


def save_partition(partition: Partition, directory, manifest_extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for i, c in enumerate(partition.clients):
        name = f"client_{i}.idx"
        buf = io.BytesIO()
        _write_records_to(buf, [c.train.features, c.train.labels.astype(np.int32),
                                c.train_ambiguous, c.test.features,
                                c.test.labels.astype(np.int32), c.test_ambiguous])
        atomic_write(directory / name, buf.getvalue())
        files[name] = _sha256(directory / name)
    buf = io.BytesIO()
    _write_records_to(buf, [partition.global_test.features,
                            partition.global_test.labels.astype(np.int32)])
    atomic_write(directory / "global_test.idx", buf.getvalue())
    files["global_test.idx"] = _sha256(directory / "global_test.idx")
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "num_clients": len(partition.clients),
        "num_classes": partition.num_classes,
        "num_features": partition.num_features,
        "files": files,
    }
    manifest.update(manifest_extra or {})
    atomic_write(directory / MANIFEST, _dumps(manifest))
    return directory


def _write_records_to(fh, arrays):
    from .idx import encode_record
    for a in arrays:
        fh.write(encode_record(a))


def load_partition(directory) -> Partition:
    """Read a dataset written by :func:`save_partition`, verifying checksums."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
    except FileNotFoundError:
        raise ConfigError(f"no dataset at {directory} (run 'generate' first)") from None
    if manifest.get("manifest_version") != MANIFEST_VERSION:
        raise DataIntegrityError(f"{directory}: unsupported manifest version")
    for name, digest in manifest["files"].items():
        path = directory / name
        if not path.exists():
            raise DataIntegrityError(f"{path}: missing")
        if _sha256(path) != digest:
            raise DataIntegrityError(f"{path}: checksum mismatch, refusing to run")
    clients = []
    for i in range(manifest["num_clients"]):
        recs = read_records(directory / f"client_{i}.idx")
        if len(recs) != 6:
            raise FormatError(f"client_{i}.idx: expected 6 records, found {len(recs)}")
        trX, trY, trM, teX, teY, teM = recs
        clients.append(ClientData(Batch(trX, trY), Batch(teX, teY), trM.astype(bool),
                                  teM.astype(bool), np.arange(len(trY)), np.arange(len(teY))))
    recs = read_records(directory / "global_test.idx")
    if len(recs) != 2:
        raise FormatError(f"global_test.idx: expected 2 records, found {len(recs)}")
    return Partition(clients, Batch(*recs), np.arange(len(recs[1])), manifest["num_classes"])


def generate(config: ExperimentConfig, directory=None) -> Path:
    directory = Path(directory or Path(config.out) / "data")
    partition = build_partition(config)
    extra = {
        "data": dataclasses.asdict(config.data),
        "shards": dataclasses.asdict(config.shards),
    }
    return save_partition(partition, directory, extra)


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    preset: str
    seed: int
    report: MetricsReport | None = None
    history: TrainingHistory | None = None
    error: str | None = None


@dataclass
class ExperimentResult:
    runs: list[RunResult] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[RunResult]:
        return [r for r in self.runs if r.error is not None]

    def reports(self, preset: str) -> list[MetricsReport]:
        return [r.report for r in self.runs if r.preset == preset and r.report is not None]


def file_label(preset: str) -> str:
    return preset.replace(":", "-")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def history_csv(history: TrainingHistory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in history.records:
        for i in range(len(rec.losses)):
            ups = history.upsilons[i]
            w.writerow([
                rec.round, i, "" if np.isnan(ups) else _fmt(ups), _fmt(rec.losses[i]),
                _fmt(rec.weights[i]), _fmt(rec.exponents[i]), _fmt(rec.delta_norms[i]),
                "" if rec.g is None else _fmt(rec.g[i]), _fmt(rec.objective),
                _fmt(rec.sum_g), _fmt(rec.global_acc),
            ])
    return buf.getvalue()


def prepare_clients(partition: Partition, config: ExperimentConfig, seed: int,
                    need_upsilon: bool = True) -> list[ClientState]:
    clients = make_clients(partition, seed)
    if need_upsilon:
        fed = config.federation.to_config(FairnessPreset("fedavg"), seed, config.threads)
        clients = ensure_upsilons(clients, fed, partition.num_classes)
    return clients


def run_experiment(config: ExperimentConfig, partition: Partition, presets=None, seeds=None,
                   out=None, write=True) -> ExperimentResult:
    """Train every (preset, seed) pair and summarise.

    For each seed the clients' uncertainty scores are computed once and the
    FedAvg reference is trained first; both are shared by all presets of
    that seed.  A failing run is recorded and the rest continue.
    """
    presets = [p if isinstance(p, FairnessPreset) else FairnessPreset.parse(p)
               for p in (presets or config.presets)]
    seeds = list(seeds if seeds is not None else config.seeds)
    out = Path(out or config.out)
    fedavg = FairnessPreset(PresetKind.FEDAVG)
    order = [fedavg] + [p for p in presets if p.kind is not PresetKind.FEDAVG]
    wanted = {p.label for p in presets}
    result = ExperimentResult()

    for seed in seeds:
        clients = prepare_clients(partition, config, seed)
        upsilons = [c.upsilon for c in clients]
        fedavg_accs = None
        for preset in order:
            run = RunResult(preset.label, seed)
            try:
                fed = config.federation.to_config(preset, seed, config.threads)
                model, history = run_federation(fed, clients, partition.num_classes,
                                                global_test=partition.global_test)
                run.history = history
                run.report = build_report(model, clients, partition.global_test, upsilons,
                                          fedavg_ref=fedavg_accs, preset=preset.label)
            except FairFedError as exc:
                log.error("%s seed %d failed: %s", preset.label, seed, exc)
                run.error = str(exc)
            if preset.kind is PresetKind.FEDAVG:
                fedavg_accs = run.report.client_accs if run.report else None
            if preset.label not in wanted:
                continue
            result.runs.append(run)
            if write:
                _write_run(out, run)
    result.summary = summarize(result.runs)
    if write:
        atomic_write(out / "report.json", _dumps(result.summary))
    return result


def _write_run(out: Path, run: RunResult):
    stem = f"{file_label(run.preset)}_seed{run.seed}"
    if run.history is not None:
        atomic_write(out / f"rounds_{stem}.csv", history_csv(run.history))
    payload = {"preset": run.preset, "seed": run.seed, "error": run.error,
               "report": run.report.to_dict() if run.report else None}
    atomic_write(out / f"metrics_{stem}.json", _dumps(payload))


def summarize(runs) -> dict:
    """Mean and population std over seeds of each summary column, per preset."""
    by_preset: dict[str, list] = {}
    errors: dict[str, list] = {}
    for r in runs:
        by_preset.setdefault(r.preset, [])
        if r.report is not None:
            by_preset[r.preset].append((r.seed, r.report.as_percent()))
        if r.error is not None:
            errors.setdefault(r.preset, []).append({"seed": r.seed, "error": r.error})
    summary = {}
    for preset, rows in by_preset.items():
        entry = {"runs": len(rows), "seeds": [s for s, _ in rows]}
        for key in SUMMARY_FIELDS:
            vals = [row[key] for _, row in rows if row[key] is not None]
            entry[key] = None if not vals else {
                "mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}
        if preset in errors:
            entry["errors"] = errors[preset]
        summary[preset] = entry
    return summary


def load_summary(out) -> dict:
    """Rebuild the summary from the per-run metric files in ``out``."""
    runs = []
    for path in sorted(Path(out).glob("metrics_*.json")):
        raw = json.loads(path.read_text())
        rep = raw.get("report")
        report = MetricsReport(**rep) if rep else None
        runs.append(RunResult(raw["preset"], raw["seed"], report, None, raw.get("error")))
    if not runs:
        raise ConfigError(f"no metrics_*.json files in {out}")
    runs.sort(key=lambda r: (r.seed, r.preset))
    return summarize(runs)


def format_table(summary: dict) -> str:
    head = ["preset", "runs", "global_acc", "acc_max_ups", "acc_min_ups", "std", "psi", "pearson"]
    lines = ["  ".join(f"{h:>14}" for h in head)]
    for preset, entry in summary.items():
        cells = [preset, str(entry["runs"])]
        for key in SUMMARY_FIELDS:
            v = entry[key]
            if v is None:
                cells.append("-")
            elif key == "pearson":
                cells.append(f"{v['mean']:.3f}±{v['std']:.3f}")
            else:
                cells.append(f"{v['mean']:.2f}±{v['std']:.2f}")
        lines.append("  ".join(f"{c:>14}" for c in cells))
    return "\n".join(lines)
