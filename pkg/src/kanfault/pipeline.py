"""Data ingestion, task preparation, end-to-end orchestration and reporting."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import plots
from .errors import ConfigError, DataError, KanFaultError, NumericalError
from .features import (
    DEFAULT_WAVELET,
    N_CYCLES,
    ChannelSpec,
    FeatureId,
    FeatureMatrix,
    Recording,
    RecordingMeta,
    extract_library,
)
from .model import KanModel
from .preprocessing import Standardizer
from .selection import (
    FeatureSelectionConfig,
    FeatureSelectionResult,
    ModelSelectionConfig,
    ModelSelectionResult,
    build_grid,
    finalize,
    select_features,
    select_model,
)
from .splines import SplineConfig
from .symbolic import SymbolicFitConfig, SymbolicModel, render_text

log = logging.getLogger(__name__)

TASK_KINDS = ("detection", "classification", "severity")
DETECTION_CLASSES = ["N", "F"]


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ExtractionConfig:
    n_cycles: int = N_CYCLES
    wavelet: str = DEFAULT_WAVELET
    wavelet_level: int = 1


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "classification"
    normal_class: str = "Normal"
    severity_target_class: str | None = None
    detection_undersample: int | None = None
    split_ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0
    recording_level_split: bool = False

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if self.kind == "severity" and not self.severity_target_class:
            raise ConfigError("a severity task needs severity_target_class")
        if self.detection_undersample is not None:
            if self.kind != "detection":
                raise ConfigError("undersampling applies to detection tasks only")
            if self.detection_undersample < 1:
                raise ConfigError("detection_undersample must be >= 1")
        r = self.split_ratios
        if len(r) != 3 or any(v < 0 for v in r) or abs(sum(r) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be three nonnegative values summing to 1, got {r}")


def _section(cls, doc: dict | None, name: str, convert=None):
    doc = dict(doc or {})
    if convert:
        doc = convert(doc)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {', '.join(unknown)}")
    for key, value in doc.items():
        if isinstance(value, list):
            doc[key] = tuple(value)
    try:
        return cls(**doc)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}' section: {exc}") from exc


def _feature_selection_doc(doc):
    count = doc.pop("grid_count", 20)
    for key, target in (("lambda_range", "lambda_values"), ("tau_range", "tau_values")):
        if key in doc:
            lo, hi = doc.pop(key)
            doc[target] = build_grid(float(lo), float(hi), int(count))
    if isinstance(doc.get("spline"), dict):
        doc["spline"] = SplineConfig(**doc["spline"])
    return doc


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec = TaskSpec()
    extraction: ExtractionConfig = ExtractionConfig()
    feature_selection: FeatureSelectionConfig = FeatureSelectionConfig()
    model_selection: ModelSelectionConfig = ModelSelectionConfig()
    symbolic: SymbolicFitConfig = SymbolicFitConfig()

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        unknown = sorted(set(doc) - {f.name for f in dataclasses.fields(cls)})
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
        return cls(
            task=_section(TaskSpec, doc.get("task"), "task"),
            extraction=_section(ExtractionConfig, doc.get("extraction"), "extraction"),
            feature_selection=_section(
                FeatureSelectionConfig, doc.get("feature_selection"), "feature_selection",
                _feature_selection_doc,
            ),
            model_selection=_section(ModelSelectionConfig, doc.get("model_selection"), "model_selection"),
            symbolic=_section(SymbolicFitConfig, doc.get("symbolic"), "symbolic"),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return dataclasses.replace(self, task=dataclasses.replace(self.task, seed=int(seed)))

    def to_dict(self) -> dict:
        return {
            "task": dataclasses.asdict(self.task),
            "extraction": dataclasses.asdict(self.extraction),
            "feature_selection": self.feature_selection.to_dict(),
            "model_selection": self.model_selection.to_dict(),
            "symbolic": dataclasses.asdict(self.symbolic),
        }


@contextmanager
def phase(name: str):
    """Re-raise failures as package errors tagged with the phase name."""
    try:
        yield
    except KanFaultError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"[{name}] {exc}") from exc
    except ArithmeticError as exc:
        raise NumericalError(f"[{name}] {exc}") from exc
    except ValueError as exc:
        raise DataError(f"[{name}] {exc}") from exc


# ---------------------------------------------------------------- ingestion


@dataclass
class Dataset:
    recordings: list[Recording]
    source: str | None = None
    fingerprint: str = ""


def read_signal_csv(path, n_channels: int):
    """Headerless numeric CSV, one column per channel; returns (data, raw bytes)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"signal file not found: {path}") from None
    try:
        data = np.loadtxt(io.BytesIO(raw), delimiter=",", ndmin=2, comments=None)
    except ValueError:
        data = None
    if data is None or data.shape[1] != n_channels or not np.all(np.isfinite(data)):
        _locate_bad_line(path, raw, n_channels)
    if data.shape[0] == 0:
        raise DataError(f"{path}: no samples")
    return data, raw


def _locate_bad_line(path, raw: bytes, n_channels: int):
    for lineno, line in enumerate(raw.decode("utf-8", errors="replace").splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != n_channels:
            raise DataError(f"{path}:{lineno}: expected {n_channels} values, found {len(cells)}")
        for cell in cells:
            try:
                value = float(cell)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric cell {cell.strip()!r}") from None
            if not np.isfinite(value):
                raise DataError(f"{path}:{lineno}: non-finite value {cell.strip()!r}")
    raise DataError(f"{path}: unreadable signal file")


def _channels(spec, where):
    if not isinstance(spec, list) or not spec:
        raise DataError(f"{where}: 'channels' must be a nonempty list")
    out = []
    for ch in spec:
        if isinstance(ch, str):
            out.append(ChannelSpec(ch))
        elif isinstance(ch, dict) and "name" in ch:
            out.append(ChannelSpec(str(ch["name"]), bool(ch.get("no_spectral", False))))
        else:
            raise DataError(f"{where}: bad channel entry {ch!r}")
    return out


def _pick(entry: dict, *keys):
    for key in keys:
        if key in entry:
            return entry[key]
    raise KeyError(keys[0])


def ingest(manifest_path) -> Dataset:
    """Load recordings listed in a JSON manifest.

    The manifest is either a list of entries or an object with a
    ``recordings`` list; other top-level keys act as defaults for every
    entry. Entry keys: ``path``, ``sampling_rate`` (or ``sampling_rate_hz``),
    ``rotation_frequency`` (or ``rotation_freq_hz``), ``class``, optional
    ``severity`` and ``channels``. Paths are relative to the manifest.
    """
    path = Path(manifest_path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(doc, list):
        entries, defaults = doc, {}
    elif isinstance(doc, dict):
        entries = doc.get("recordings", [])
        defaults = {k: v for k, v in doc.items() if k != "recordings"}
    else:
        raise DataError(f"{path}: manifest must be a list or an object")
    digest = hashlib.sha256(raw)
    if not entries:
        log.warning("manifest %s lists no recordings", path)
        return Dataset([], str(path), digest.hexdigest())
    recordings = []
    for k, entry in enumerate(entries):
        where = f"{path} entry {k}"
        if not isinstance(entry, dict):
            raise DataError(f"{where}: entries must be objects")
        e = {**defaults, **entry}
        try:
            channels = _channels(e.get("channels"), where)
            meta = RecordingMeta(
                sampling_rate=float(_pick(e, "sampling_rate", "sampling_rate_hz")),
                rotation_frequency=float(_pick(e, "rotation_frequency", "rotation_freq_hz")),
                class_label=str(e.get("class", e.get("class_label"))),
                channels=channels,
                severity_label=None if e.get("severity") is None else str(e["severity"]),
                source=str(e["path"]),
            )
        except KeyError as exc:
            raise DataError(f"{where}: missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise DataError(f"{where}: {exc}") from None
        if e.get("class", e.get("class_label")) is None:
            raise DataError(f"{where}: missing key 'class'")
        data, blob = read_signal_csv(path.parent / e["path"], len(channels))
        digest.update(blob)
        recordings.append(Recording(meta, data))
    return Dataset(recordings, str(path), digest.hexdigest())


def fingerprint_features(fm: FeatureMatrix) -> str:
    h = hashlib.sha256(np.ascontiguousarray(fm.values).tobytes())
    h.update(json.dumps([fm.names, fm.classes, fm.severities, fm.groups]).encode())
    return h.hexdigest()


def write_features_csv(fm: FeatureMatrix, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*fm.names, "class", "severity", "group"])
    for row, c, s, g in zip(fm.values, fm.classes, fm.severities, fm.groups):
        w.writerow([repr(float(v)) for v in row] + [c, "" if s is None else s, g])
    Path(path).write_text(buf.getvalue())


def _column(name: str):
    try:
        return FeatureId.parse(name)
    except ValueError:
        return name


def read_features_csv(path) -> FeatureMatrix:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DataError(f"feature file not found: {path}") from None
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{path}: empty feature file") from None
    if header[-3:] != ["class", "severity", "group"]:
        raise DataError(f"{path}:1: header must end with class,severity,group")
    n = len(header) - 3
    rows, classes, severities, groups = [], [], [], []
    for lineno, cells in enumerate(reader, start=2):
        if not cells:
            continue
        if len(cells) != n + 3:
            raise DataError(f"{path}:{lineno}: expected {n + 3} cells, found {len(cells)}")
        try:
            rows.append([float(v) for v in cells[:n]])
            groups.append(int(cells[n + 2]))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        classes.append(cells[n])
        severities.append(cells[n + 1] or None)
    values = np.array(rows, dtype=float).reshape(len(rows), n)
    return FeatureMatrix(values, [_column(h) for h in header[:n]], classes, severities, groups)


def load_features(path, extraction: ExtractionConfig = ExtractionConfig()):
    """Features from a feature CSV or a recording manifest; returns (matrix, fingerprint)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        fm = read_features_csv(path)
        return fm, fingerprint_features(fm)
    dataset = ingest(path)
    with phase("extract"):
        fm = extract_library(dataset.recordings, extraction.n_cycles, extraction.wavelet,
                             extraction.wavelet_level)
    return fm, dataset.fingerprint


# ---------------------------------------------------------------- splitting


def _apportion(n: int, ratios) -> np.ndarray:
    """Largest-remainder counts; positive-ratio splits get a row when possible."""
    ratios = np.asarray(ratios, dtype=float)
    quotas = n * ratios
    counts = np.floor(quotas + 1e-9).astype(int)
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[: n - counts.sum()]] += 1
    positive = ratios > 0
    if n >= positive.sum():
        for s in np.flatnonzero(positive & (counts == 0)):
            counts[np.argmax(counts)] -= 1
            counts[s] += 1
    return counts


def split_stratified(labels, ratios=(0.70, 0.15, 0.15), seed: int = 0, groups=None):
    """Three disjoint, exhaustive, sorted index arrays stratified by label.

    With ``groups`` whole groups (e.g. recordings) are apportioned instead of
    rows; every group must carry a single label.
    """
    labels = np.asarray(labels)
    ratios = np.asarray(ratios, dtype=float)
    need = int((ratios > 0).sum())
    rng = np.random.default_rng(seed)
    units = np.arange(labels.size) if groups is None else np.asarray(groups)
    parts = [[], [], []]
    for cls in sorted(set(labels.tolist())):
        rows = np.flatnonzero(labels == cls)
        ids = np.unique(units[rows])
        if groups is not None:
            mixed = set(labels[np.isin(units, ids)].tolist()) - {cls}
            if mixed:
                raise DataError(f"groups of class {cls!r} also hold class {sorted(mixed)[0]!r}")
        if ids.size < need:
            kind = "groups" if groups is not None else "rows"
            raise DataError(f"class {cls!r} has {ids.size} {kind}; a stratified split needs {need}")
        ids = rng.permutation(ids)
        bounds = np.cumsum(_apportion(ids.size, ratios))[:-1]
        for s, chunk in enumerate(np.split(ids, bounds)):
            parts[s].append(rows[np.isin(units[rows], chunk)])
    return tuple(np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=int) for p in parts)


def rebalance_detection(classes, normal_class: str, per_class_count: int, seed: int = 0):
    """Keep every normal row, draw ``per_class_count`` rows per fault class.

    Returns (sorted row indices, binary labels with 0 = normal, 1 = faulty).
    """
    classes = np.asarray(classes)
    rng = np.random.default_rng(seed)
    keep = [np.flatnonzero(classes == normal_class)]
    for cls in sorted(set(classes.tolist()) - {normal_class}):
        rows = np.flatnonzero(classes == cls)
        if rows.size < per_class_count:
            raise DataError(
                f"fault class {cls!r} has {rows.size} rows, fewer than the {per_class_count} requested"
            )
        keep.append(rng.choice(rows, size=per_class_count, replace=False))
    idx = np.sort(np.concatenate(keep))
    return idx, (classes[idx] != normal_class).astype(int)


# ---------------------------------------------------------------- task preparation


@dataclass
class PreparedTask:
    features: FeatureMatrix  # task rows only
    labels: np.ndarray
    class_names: list[str]
    train: np.ndarray
    val: np.ndarray
    eval: np.ndarray
    standardizer: Standardizer  # training-split statistics

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def raw(self, part: str, columns=None):
        idx = getattr(self, part)
        X = self.features.values[idx]
        return (X if columns is None else X[:, columns]), self.labels[idx]

    def standardized(self, part: str, columns=None):
        X, y = self.raw(part)
        Z = self.standardizer.transform(X)
        return (Z if columns is None else Z[:, columns]), y


def prepare_task(fm: FeatureMatrix, task: TaskSpec) -> PreparedTask:
    """Select the task rows, encode labels, split and fit the standardizer."""
    classes = np.asarray(fm.classes, dtype=object)
    if fm.values.shape[0] == 0:
        raise DataError("no feature rows to work with")
    if task.kind == "detection":
        if task.normal_class not in set(fm.classes):
            raise DataError(f"normal class {task.normal_class!r} not found in the data")
        if task.detection_undersample is not None:
            idx, labels = rebalance_detection(
                classes, task.normal_class, task.detection_undersample, task.seed
            )
        else:
            idx = np.arange(classes.size)
            labels = (classes != task.normal_class).astype(int)
        names = list(DETECTION_CLASSES)
    elif task.kind == "classification":
        names = sorted(set(fm.classes))
        idx = np.arange(classes.size)
        labels = np.array([names.index(c) for c in fm.classes], dtype=int)
    else:
        idx = np.flatnonzero(classes == task.severity_target_class)
        if idx.size == 0:
            raise DataError(f"no rows of class {task.severity_target_class!r} for the severity task")
        sev = [fm.severities[i] for i in idx]
        if any(s is None for s in sev):
            raise DataError(f"rows of class {task.severity_target_class!r} lack severity labels")
        names = sorted(set(sev))
        labels = np.array([names.index(s) for s in sev], dtype=int)
    if len(set(labels.tolist())) < 2:
        raise DataError("the task needs at least two classes")
    sub = fm.subset(idx)
    groups = sub.groups if task.recording_level_split else None
    tr, va, ev = split_stratified(labels, task.split_ratios, task.seed + 1, groups)
    st = Standardizer().fit(sub.values[tr])
    return PreparedTask(sub, np.asarray(labels, dtype=int), names, tr, va, ev, st)


# ---------------------------------------------------------------- orchestration


@dataclass
class Report:
    task: str
    class_names: list[str]
    selected: list[str]
    regular_f1: float
    symbolic_f1: float
    confusion_regular: np.ndarray
    confusion_symbolic: np.ndarray
    attributions: np.ndarray
    lam: float
    tau: float
    G: int
    grid_eps: float
    model: KanModel
    symbolic: SymbolicModel
    channel_names: list[str] = field(default_factory=list)
    feature_selection: dict = field(default_factory=dict)
    model_selection: dict = field(default_factory=dict)

    @property
    def provenance(self) -> list[dict]:
        return signal_provenance([self.selected], self.channel_names)

    def metrics(self) -> dict:
        return {
            "task": self.task,
            "classes": self.class_names,
            "evaluation_size": int(self.confusion_regular.sum()),
            "regular_f1": self.regular_f1,
            "symbolic_f1": self.symbolic_f1,
            "selected_features": self.selected,
            "n_selected": len(self.selected),
            "lambda": self.lam,
            "tau": self.tau,
            "G": self.G,
            "grid_eps": self.grid_eps,
        }

    def to_dict(self) -> dict:
        return {
            **self.metrics(),
            "confusion_regular": self.confusion_regular.tolist(),
            "confusion_symbolic": self.confusion_symbolic.tolist(),
            "attributions": self.attributions.tolist(),
            "model": self.model.to_dict(),
            "symbolic": self.symbolic.to_dict(),
            "channel_names": self.channel_names,
            "feature_selection": self.feature_selection,
            "model_selection": self.model_selection,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Report":
        try:
            return cls(
                task=doc["task"],
                class_names=list(doc["classes"]),
                selected=list(doc["selected_features"]),
                regular_f1=float(doc["regular_f1"]),
                symbolic_f1=float(doc["symbolic_f1"]),
                confusion_regular=np.array(doc["confusion_regular"], dtype=int),
                confusion_symbolic=np.array(doc["confusion_symbolic"], dtype=int),
                attributions=np.array(doc["attributions"], dtype=float),
                lam=float(doc["lambda"]),
                tau=float(doc["tau"]),
                G=int(doc["G"]),
                grid_eps=float(doc["grid_eps"]),
                model=KanModel.from_dict(doc["model"]),
                symbolic=SymbolicModel.from_dict(doc["symbolic"]),
                channel_names=list(doc.get("channel_names", [])),
                feature_selection=doc.get("feature_selection", {}),
                model_selection=doc.get("model_selection", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed report document: {exc}") from None

    @classmethod
    def load(cls, path) -> "Report":
        path = Path(path)
        if path.is_dir():
            path = path / "report.json"
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except FileNotFoundError:
            raise DataError(f"report not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None


@dataclass
class RunManifest:
    config: dict
    seed: int
    fingerprint: str
    phases: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_feature_selection(prep: PreparedTask, config: RunConfig) -> FeatureSelectionResult:
    Xtr, ytr = prep.standardized("train")
    Xva, yva = prep.standardized("val")
    with phase("select-features"):
        return select_features(Xtr, ytr, Xva, yva, prep.n_classes, config.feature_selection,
                               config.task.seed, prep.features.names)


def run_model_selection(prep: PreparedTask, columns, config: RunConfig) -> ModelSelectionResult:
    Xtr, ytr = prep.standardized("train", columns)
    Xva, yva = prep.standardized("val", columns)
    with phase("select-model"):
        return select_model(Xtr, ytr, Xva, yva, prep.n_classes, config.model_selection,
                            config.symbolic, config.task.seed)


def run_finalize(prep: PreparedTask, config: RunConfig, fs: dict, ms: dict) -> Report:
    """Final training from the stored outputs of both selection phases."""
    columns = list(fs["chosen"]["selected"])
    chosen = ms["chosen"]
    names = [prep.features.names[c] for c in columns]
    Xtr, ytr = prep.raw("train", columns)
    Xva, yva = prep.raw("val", columns)
    Xev, yev = prep.raw("eval", columns)
    with phase("finalize"):
        final = finalize(Xtr, ytr, Xva, yva, Xev, yev, prep.n_classes, chosen["G"],
                         chosen["grid_eps"], config.model_selection, config.symbolic,
                         config.task.seed, names)
    channel_names = []
    if any(isinstance(c, FeatureId) for c in prep.features.columns):
        top = max(c.channel for c in prep.features.columns if isinstance(c, FeatureId))
        channel_names = [f"signal {i}" for i in range(1, top + 1)]
    return Report(
        task=config.task.kind,
        class_names=prep.class_names,
        selected=names,
        regular_f1=final.regular_f1,
        symbolic_f1=final.symbolic_f1,
        confusion_regular=final.confusion_regular,
        confusion_symbolic=final.confusion_symbolic,
        attributions=final.attributions,
        lam=float(fs["chosen"]["lam"]),
        tau=float(fs["chosen"]["tau"]),
        G=int(chosen["G"]),
        grid_eps=float(chosen["grid_eps"]),
        model=final.model,
        symbolic=final.symbolic,
        channel_names=channel_names,
        feature_selection=fs,
        model_selection=ms,
    )


def run_task(data, config: RunConfig = RunConfig(), channel_names=None):
    """Run every phase on a Dataset, a FeatureMatrix or a path; returns (Report, RunManifest)."""
    started = _now()
    t0 = time.perf_counter()
    if isinstance(data, FeatureMatrix):
        fm, fingerprint = data, fingerprint_features(data)
    elif isinstance(data, Dataset):
        with phase("extract"):
            fm = extract_library(data.recordings, config.extraction.n_cycles,
                                 config.extraction.wavelet, config.extraction.wavelet_level)
        fingerprint = data.fingerprint
        channel_names = channel_names or (data.recordings[0].meta.channel_names if data.recordings else None)
    else:
        fm, fingerprint = load_features(data, config.extraction)
    with phase("prepare"):
        prep = prepare_task(fm, config.task)
    fs = run_feature_selection(prep, config)
    columns = list(fs.chosen.selected)
    ms = run_model_selection(prep, columns, config)
    report = run_finalize(prep, config, fs.to_dict(), ms.to_dict())
    if channel_names:
        report.channel_names = list(channel_names)
    manifest = RunManifest(
        config=config.to_dict(),
        seed=config.task.seed,
        fingerprint=fingerprint,
        phases={
            "lambda": report.lam,
            "tau": report.tau,
            "features": report.selected,
            "G": report.G,
            "grid_eps": report.grid_eps,
            "seconds": round(time.perf_counter() - t0, 3),
        },
        started=started,
        finished=_now(),
    )
    log.info("task %s: regular F1 %.4f, symbolic F1 %.4f with %d features",
             report.task, report.regular_f1, report.symbolic_f1, len(report.selected))
    return report, manifest


# ---------------------------------------------------------------- reporting


def signal_provenance(selections: Iterable[Sequence], channel_names=None) -> list[dict]:
    """How often each signal contributes a selected feature across tasks."""
    counts: dict[int, int] = {}
    for selection in selections:
        for col in selection:
            fid = col if isinstance(col, FeatureId) else _column(str(col))
            if isinstance(fid, FeatureId):
                counts[fid.channel] = counts.get(fid.channel, 0) + 1
    total = sum(counts.values())
    names = list(channel_names or [])
    return [
        {
            "channel": ch,
            "name": names[ch - 1] if ch <= len(names) else f"signal {ch}",
            "count": counts[ch],
            "fraction": counts[ch] / total,
        }
        for ch in sorted(counts)
    ]


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _confusion_rows(cm, names):
    return [["true\\predicted", *names]] + [[n, *map(int, row)] for n, row in zip(names, cm)]


def emit_provenance(table: list[dict], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "provenance.csv": _csv_text(
            [["channel", "name", "count", "fraction"]]
            + [[r["channel"], r["name"], r["count"], repr(r["fraction"])] for r in table]
        ),
        "provenance.svg": plots.pie_chart(
            [r["name"] for r in table], [r["count"] for r in table], "Selected features per signal"
        ),
    }
    return _write_all(out, files)


def _write_all(out: Path, files: dict) -> list[Path]:
    written = []
    for name, text in files.items():
        p = out / name
        try:
            p.write_text(text)
        except OSError as exc:
            raise DataError(f"cannot write {p}: {exc}") from None
        written.append(p)
    return written


def emit_report(report: Report, out_dir, manifest: RunManifest | None = None) -> list[Path]:
    """Write metrics, confusion matrices, attributions, symbolic forms and charts."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    names = report.class_names
    files = {
        "metrics.json": _dump(report.metrics()),
        "report.json": _dump(report.to_dict()),
        "model.json": report.model.to_json() + "\n",
        "confusion_regular.csv": _csv_text(_confusion_rows(report.confusion_regular, names)),
        "confusion_symbolic.csv": _csv_text(_confusion_rows(report.confusion_symbolic, names)),
        "attributions.csv": _csv_text(
            [["feature", "score"]] + [[f, repr(float(a))] for f, a in zip(report.selected, report.attributions)]
        ),
        "symbolic.txt": render_text(report.symbolic, names=report.selected),
        "symbolic.json": report.symbolic.to_json() + "\n",
        "attributions.svg": plots.bar_chart(report.selected, report.attributions,
                                            "Normalized attribution scores"),
        "confusion_regular.svg": plots.heatmap(report.confusion_regular, names, names,
                                               "Confusion matrix (regular)"),
        "confusion_symbolic.svg": plots.heatmap(report.confusion_symbolic, names, names,
                                                "Confusion matrix (symbolic)"),
    }
    if manifest is not None:
        files["manifest.json"] = _dump(manifest.to_dict())
    written = _write_all(out, files)
    return written + emit_provenance(report.provenance, out)
