"""Filesystem persistence for run state.

Layout under DATA_DIR:
    runs/<run_id>/state.json          everything except sections/checkpoints
    runs/<run_id>/sections/<kind>.json  one file per section draft
    runs/<run_id>/checkpoints.json    full checkpoint history
    assets/                            curated bibliographies + seed records
    out/<run_id>/                      exported artifacts
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import TYPE_CHECKING

from .domain import SCHEMA_VERSION, SectionDraft, StageCheckpoint
from .errors import UnknownCheckpoint, UnknownRun

if TYPE_CHECKING:
    from .pipeline import RunState


class StateStore:
    """Serializes writes per run; readers only ever see fully written files."""

    def __init__(self, data_dir: str | Path):
        self.runs_dir = Path(data_dir) / "runs"
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock(self, run_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(run_id, threading.Lock())

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def exists(self, run_id: str) -> bool:
        return (self.run_dir(run_id) / "state.json").exists()

    def list_runs(self) -> list[str]:
        if not self.runs_dir.exists():
            return []
        return sorted(p.name for p in self.runs_dir.iterdir() if (p / "state.json").exists())

    def save(self, state: "RunState") -> None:
        with self._lock(state.run_id):
            run_dir = self.run_dir(state.run_id)
            sections_dir = run_dir / "sections"
            sections_dir.mkdir(parents=True, exist_ok=True)
            core = state.to_dict()
            sections = core.pop("sections")
            checkpoints = core.pop("checkpoints")
            core["schema"] = SCHEMA_VERSION
            _write_atomic(run_dir / "state.json", json.dumps(core, indent=2))
            _write_atomic(run_dir / "checkpoints.json", json.dumps(checkpoints, indent=2))
            for section in sections:
                _write_atomic(
                    sections_dir / f"{section['kind']}.json", json.dumps(section, indent=2)
                )

    def load(self, run_id: str) -> "RunState":
        from .pipeline import RunState

        run_dir = self.run_dir(run_id)
        state_path = run_dir / "state.json"
        if not state_path.exists():
            raise UnknownRun(run_id)
        with self._lock(run_id):
            core = json.loads(state_path.read_text(encoding="utf-8"))
            checkpoints_path = run_dir / "checkpoints.json"
            core["checkpoints"] = (
                json.loads(checkpoints_path.read_text(encoding="utf-8"))
                if checkpoints_path.exists()
                else []
            )
            sections = []
            sections_dir = run_dir / "sections"
            if sections_dir.exists():
                for path in sections_dir.glob("*.json"):
                    sections.append(json.loads(path.read_text(encoding="utf-8")))
            sections.sort(key=lambda s: _section_index(s["kind"]))
            core["sections"] = sections
        return RunState.from_dict(core)

    def find_checkpoint(self, checkpoint_id: str) -> tuple[str, StageCheckpoint]:
        for run_id in self.list_runs():
            path = self.run_dir(run_id) / "checkpoints.json"
            if not path.exists():
                continue
            for raw in json.loads(path.read_text(encoding="utf-8")):
                if raw["id"] == checkpoint_id:
                    return run_id, StageCheckpoint.from_dict(raw)
        raise UnknownCheckpoint(checkpoint_id)


def _section_index(kind_value: str) -> int:
    from .domain import SectionKind

    return SectionKind(kind_value).canonical_index


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def load_section_drafts(store: StateStore, run_id: str) -> list[SectionDraft]:
    state = store.load(run_id)
    return list(state.manuscript.sections)


__all__ = ["StateStore", "load_section_drafts"]
