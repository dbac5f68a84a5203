"""Watch-folder automation: detect new scans, segment, convert, notify.

A polling watcher with size-stability gating replaces OS file notifications
so the whole pipeline is drivable from tests with a scripted filesystem.
Processed files are remembered in a JSON-lines ledger keyed by
(name, size, mtime), which survives restarts and guarantees exactly-once
job creation.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import VolumeCatalog
from .crf import CrfParams, mean_field_refine
from .errors import MissingProbabilitySibling, VoxpipeError
from .kmeans import kmeans_segment
from .nifti import parse_nifti_file
from .rawio import read_raw_sidecar, write_raw_sidecar
from .roi import crop_roi
from .volume import IntensityKind, Volume3D, WindowLevel, clip_and_normalize, window_scalar

log = logging.getLogger(__name__)

LEDGER_NAME = "ledger.jsonl"

_STATE_ORDER = {"queued": 0, "running": 1, "done": 2, "failed": 2}


@dataclass
class WatchConfig:
    input_dir: Path
    output_dir: Path
    catalog_dir: Path
    poll_interval_s: float = 2.0
    stability_polls: int = 2
    segmenter: dict = field(default_factory=lambda: {"method": "kmeans", "k": 4})

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        self.output_dir = Path(self.output_dir)
        self.catalog_dir = Path(self.catalog_dir)
        dirs = {self.input_dir.resolve(), self.output_dir.resolve(), self.catalog_dir.resolve()}
        if len(dirs) != 3:
            raise ValueError("input, output and catalog directories must be distinct")
        if self.poll_interval_s <= 0:
            raise ValueError("poll_interval_s must be > 0")
        if self.stability_polls < 1:
            raise ValueError("stability_polls must be >= 1")

    @classmethod
    def from_json(cls, text: str) -> "WatchConfig":
        doc = json.loads(text)
        return cls(
            input_dir=doc["input_dir"],
            output_dir=doc["output_dir"],
            catalog_dir=doc["catalog_dir"],
            poll_interval_s=doc.get("poll_interval_s", 2.0),
            stability_polls=doc.get("stability_polls", 2),
            segmenter=doc.get("segmenter", {"method": "kmeans", "k": 4}),
        )


@dataclass
class JobRecord:
    job_id: str
    source: Path
    state: str = "queued"
    timestamps: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    reason: str = ""
    roi_box: object = None

    def transition(self, state: str, now: float | None = None) -> "JobRecord":
        if _STATE_ORDER.get(state, -1) < _STATE_ORDER.get(self.state, 99):
            raise ValueError(f"illegal transition {self.state} -> {state}")
        self.state = state
        self.timestamps[state] = now if now is not None else time.time()
        return self

    def to_payload(self) -> dict:
        return {
            "job_id": self.job_id,
            "source": str(self.source),
            "state": self.state,
            "timestamps": self.timestamps,
            "artifacts": {k: str(v) for k, v in self.artifacts.items()},
            "reason": self.reason,
        }


class ConsoleSink:
    """One line per job transition on stdout."""

    def deliver(self, record: JobRecord) -> None:
        print(f"[voxpipe] job {record.job_id} {record.state} {record.reason}".rstrip())


class WebhookSink:
    """POSTs the JobRecord as JSON to a configured URL."""

    def __init__(self, url: str, timeout_s: float = 5.0):
        self.url = url
        self.timeout_s = timeout_s

    def deliver(self, record: JobRecord) -> None:
        body = json.dumps(record.to_payload()).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}
        )
        urllib.request.urlopen(req, timeout=self.timeout_s).read()


def notify(record: JobRecord, sinks) -> list[bool]:
    """Deliver a transition to every sink; one retry each, never raises."""
    results = []
    for sink in sinks:
        ok = False
        for attempt in (1, 2):
            try:
                sink.deliver(record)
                ok = True
                break
            except Exception as exc:
                log.warning("sink %r failed (attempt %d): %s", sink, attempt, exc)
        results.append(ok)
    return results


class Watcher:
    """Polling directory watcher with stability gating and a persistent ledger."""

    def __init__(self, cfg: WatchConfig):
        if not cfg.input_dir.is_dir():
            raise VoxpipeError(f"input directory {cfg.input_dir} unreadable")
        self.cfg = cfg
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        self.ledger_path = cfg.output_dir / LEDGER_NAME
        self._seen = self._load_ledger()
        self._pending: dict[str, tuple[int, int]] = {}  # name -> (size, stable polls)

    def _load_ledger(self) -> set[tuple[str, int, int]]:
        seen = set()
        if self.ledger_path.exists():
            for line in self.ledger_path.read_text().splitlines():
                if not line.strip():
                    continue
                doc = json.loads(line)
                seen.add((doc["name"], doc["size"], doc["mtime"]))
        return seen

    def record_processed(self, path: Path, job_id: str) -> None:
        stat = path.stat()
        key = (path.name, stat.st_size, int(stat.st_mtime))
        self._seen.add(key)
        with open(self.ledger_path, "a") as f:
            f.write(
                json.dumps(
                    {"name": key[0], "size": key[1], "mtime": key[2], "job_id": job_id}
                )
                + "\n"
            )

    def poll(self) -> list[Path]:
        """One scan; returns files that just became stable, in name order."""
        events = []
        for path in sorted(self.cfg.input_dir.glob("*.nii")):
            stat = path.stat()
            key = (path.name, stat.st_size, int(stat.st_mtime))
            if key in self._seen:
                continue
            size, polls = self._pending.get(path.name, (-1, 0))
            if stat.st_size == size:
                polls += 1
            else:
                polls = 1
            self._pending[path.name] = (stat.st_size, polls)
            if polls >= self.cfg.stability_polls:
                del self._pending[path.name]
                events.append(path)
        return events


def _kmeans_mask(vol: Volume3D, k: int) -> np.ndarray:
    """Binary organ mask: the most populous cluster that is neither the
    darkest nor the brightest (documented heuristic; with k < 3 all clusters
    are candidates)."""
    normalized = clip_and_normalize(vol) if vol.intensity_kind is IntensityKind.HU else vol
    result = kmeans_segment(normalized, k=k)
    counts = np.bincount(result.labels.ravel(), minlength=k)
    candidates = range(1, k - 1) if k >= 3 else range(k)
    best = max(candidates, key=lambda j: counts[j])
    return (result.labels == best).astype(np.uint8)


def _crf_mask(vol: Volume3D, source: Path, params: CrfParams) -> np.ndarray:
    prob_raw = source.with_suffix(".prob.raw")
    prob_json = source.with_suffix(".prob.json")
    if not prob_raw.exists() or not prob_json.exists():
        raise MissingProbabilitySibling(f"no {prob_raw.name}/{prob_json.name} next to {source.name}")
    prob = read_raw_sidecar(prob_raw, prob_json)
    intensity = clip_and_normalize(vol) if vol.intensity_kind is IntensityKind.HU else vol
    labels, _ = mean_field_refine(prob.voxels.astype(np.float64), intensity, params)
    return labels


def run_job(
    source: Path,
    cfg: WatchConfig,
    job_id: str | None = None,
    catalog: VolumeCatalog | None = None,
) -> JobRecord:
    """Segment one scan, write mask + cropped volume artifacts and, when a
    catalog is given, convert the masked volume for the renderer.  Any error
    lands the record in the failed state with a reason."""
    source = Path(source)
    job_id = job_id or f"{source.stem}-{int(time.time() * 1000):x}"
    record = JobRecord(job_id=job_id, source=source)
    record.transition("running")
    try:
        vol = parse_nifti_file(source)
        method = cfg.segmenter.get("method", "kmeans")
        if method == "kmeans":
            mask = _kmeans_mask(vol, int(cfg.segmenter.get("k", 4)))
        elif method == "import_prob_then_crf":
            params = CrfParams(**cfg.segmenter.get("params", {}))
            mask = _crf_mask(vol, source, params)
        else:
            raise VoxpipeError(f"unknown segmenter {method!r}")

        mask_vol = Volume3D(mask.astype(np.uint8), vol.spacing, IntensityKind.UINT8)
        cropped, box = crop_roi(vol.voxels, mask)
        cropped_vol = Volume3D(cropped, vol.spacing, vol.intensity_kind)

        stem = source.stem
        out = cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        write_raw_sidecar(mask_vol, out / f"{stem}.mask.raw", out / f"{stem}.mask.json")
        write_raw_sidecar(cropped_vol, out / f"{stem}.roi.raw", out / f"{stem}.roi.json")
        record.artifacts = {
            "mask": out / f"{stem}.mask.raw",
            "roi": out / f"{stem}.roi.raw",
        }
        record.roi_box = box
        if catalog is not None:
            record.artifacts["volume_id"] = convert_for_renderer(mask, vol, catalog, stem)
        record.transition("done")
    except Exception as exc:
        record.reason = f"{type(exc).__name__}: {exc}"
        record.transition("failed")
    return record


def convert_for_renderer(
    mask: np.ndarray,
    source_vol: Volume3D,
    catalog: VolumeCatalog,
    volume_id_stem: str,
    window: WindowLevel | None = None,
) -> str:
    """Window-normalize to u8, zero everything outside the mask, catalog it.

    Returns the volume_id (source stem plus a content hash).
    """
    if window is None:
        if source_vol.intensity_kind is IntensityKind.NORMALIZED01:
            window = WindowLevel(0.5, 1.0)
        elif source_vol.intensity_kind is IntensityKind.UINT8:
            window = WindowLevel(127.5, 255.0)
        else:
            window = WindowLevel(50.0, 400.0)
    u8 = window_scalar(source_vol.voxels, window)
    u8 = np.where(np.asarray(mask) != 0, u8, 0).astype(np.uint8)
    volume_id = f"{volume_id_stem}-{hashlib.sha1(u8.tobytes()).hexdigest()[:8]}"
    catalog.append(Volume3D(u8, source_vol.spacing, IntensityKind.UINT8), volume_id)
    return volume_id


def process_event(watcher: Watcher, source: Path, sinks=(), catalog: VolumeCatalog | None = None) -> JobRecord:
    """Run one job end to end: segment, convert for rendering, ledger, notify."""
    cat = catalog or VolumeCatalog(watcher.cfg.catalog_dir)
    record = run_job(source, watcher.cfg, catalog=cat)
    watcher.record_processed(source, record.job_id)
    notify(record, sinks)
    return record


def watch_loop(cfg: WatchConfig, sinks=(), max_polls: int | None = None) -> None:
    """Poll forever (or max_polls times), running jobs serially as files settle."""
    watcher = Watcher(cfg)
    catalog = VolumeCatalog(cfg.catalog_dir)
    polls = 0
    while max_polls is None or polls < max_polls:
        for source in watcher.poll():
            log.info("new volume detected: %s", source.name)
            process_event(watcher, source, sinks, catalog)
        polls += 1
        time.sleep(cfg.poll_interval_s)
