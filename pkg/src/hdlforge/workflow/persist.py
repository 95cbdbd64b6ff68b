"""Run-state persistence: atomic snapshot plus append-only event journal.

Run directory layout::

    state.json    current RunState snapshot (claims an event count)
    events.jsonl  append-only journal, one JSON event per line
    workspace/    toolrunner unit directories
    fixtures/     replay fixture store

Loading cross-checks the snapshot's claimed event count against the
journal; any mismatch is corruption, not something to repair silently.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import CorruptStateError
from .model import EventRecord, RunState

STATE_FILE = "state.json"
JOURNAL_FILE = "events.jsonl"


def persist(state: RunState, store: Path | str) -> None:
    """Append new events to the journal, then atomically replace the snapshot."""
    root = Path(store)
    root.mkdir(parents=True, exist_ok=True)
    journal = root / JOURNAL_FILE

    existing = 0
    if journal.exists():
        with journal.open() as fh:
            existing = sum(1 for line in fh if line.strip())
    if existing > len(state.events):
        raise CorruptStateError(
            f"journal has {existing} events but the state only knows {len(state.events)}"
        )
    if existing < len(state.events):
        with journal.open("a") as fh:
            for event in state.events[existing:]:
                fh.write(json.dumps(event.to_json()) + "\n")

    tmp = root / f".{STATE_FILE}.tmp"
    tmp.write_text(json.dumps(state.to_json(), indent=2))
    tmp.replace(root / STATE_FILE)


def load(store: Path | str) -> RunState:
    """Rebuild a RunState from a run directory."""
    root = Path(store)
    state_path = root / STATE_FILE
    if not state_path.is_file():
        raise FileNotFoundError(f"no persisted run in {root}")
    doc = json.loads(state_path.read_text())

    events: list[EventRecord] = []
    journal = root / JOURNAL_FILE
    if journal.exists():
        for lineno, line in enumerate(journal.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                events.append(EventRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorruptStateError(f"journal line {lineno} unreadable: {exc}") from exc

    claimed = doc.get("event_count", 0)
    if claimed != len(events):
        raise CorruptStateError(
            f"state snapshot claims {claimed} events but the journal has {len(events)}"
        )
    for i, event in enumerate(events, start=1):
        if event.seq != i:
            raise CorruptStateError(f"journal sequence gap: expected {i}, found {event.seq}")
    return RunState.from_json(doc, events)


class RunStore:
    """A run directory handle; also the seam for kill-point test injection."""

    def __init__(self, root: Path | str):
        self.root = Path(root)

    @property
    def workspace_root(self) -> Path:
        return self.root / "workspace"

    @property
    def fixtures_dir(self) -> Path:
        return self.root / "fixtures"

    def persist(self, state: RunState) -> None:
        persist(state, self.root)

    def load(self) -> RunState:
        return load(self.root)
