"""Renderer volume catalog: u8 raw+sidecar files plus a JSON index.

The orchestrator appends entries; the streaming service resolves `load`
requests against them.  The index is re-parsed after every append so a
corrupt write can never go unnoticed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import UnknownVolumeId
from .rawio import read_raw_sidecar, write_raw_sidecar
from .volume import Volume3D

INDEX_NAME = "catalog.json"


@dataclass(frozen=True)
class CatalogEntry:
    volume_id: str
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    created_at: str


class VolumeCatalog:
    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @property
    def index_path(self) -> Path:
        return self.directory / INDEX_NAME

    def entries(self) -> list[CatalogEntry]:
        if not self.index_path.exists():
            return []
        doc = json.loads(self.index_path.read_text())
        return [
            CatalogEntry(
                volume_id=e["volume_id"],
                dims=tuple(e["dims"]),
                spacing=tuple(e["spacing"]),
                created_at=e["created_at"],
            )
            for e in doc["volumes"]
        ]

    def append(self, vol: Volume3D, volume_id: str) -> CatalogEntry:
        """Write the volume under volume_id and add it to the index."""
        write_raw_sidecar(
            vol,
            self.directory / f"{volume_id}.raw",
            self.directory / f"{volume_id}.json",
        )
        entry = CatalogEntry(
            volume_id=volume_id,
            dims=vol.dims,
            spacing=vol.spacing,
            created_at=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        )
        existing = self.entries()
        doc = {
            "volumes": [
                {
                    "volume_id": e.volume_id,
                    "dims": list(e.dims),
                    "spacing": list(e.spacing),
                    "created_at": e.created_at,
                }
                for e in [*existing, entry]
            ]
        }
        tmp = self.index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(doc, indent=2))
        tmp.replace(self.index_path)
        json.loads(self.index_path.read_text())  # append-consistency check
        return entry

    def load(self, volume_id: str) -> Volume3D:
        raw = self.directory / f"{volume_id}.raw"
        sidecar = self.directory / f"{volume_id}.json"
        if not raw.exists() or not sidecar.exists():
            raise UnknownVolumeId(volume_id)
        return read_raw_sidecar(raw, sidecar)

    def has(self, volume_id: str) -> bool:
        return (self.directory / f"{volume_id}.raw").exists()
