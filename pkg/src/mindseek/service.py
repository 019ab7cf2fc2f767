"""HTTP session API over the retrieval engine.

One process serves one catalog.  Sessions live in memory behind per-session
locks; every state transition is appended to a transcript log (JSON lines),
so a restarted process recovers any session by replaying its clicks, and a
results table collects one row per finished game.  In game mode the target
id stays server-side and is only used to detect the approved-by-system
ending.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from .catalog import Catalog, CatalogError, load_catalog
from .session import Session, SessionConfig, SessionError, Status, start_session

DEFAULT_TTL_SECONDS = 3600.0


@dataclass
class ServiceConfig:
    """Service settings; a JSON file plus environment overrides.

    ``MINDSEEK_CATALOG`` and ``MINDSEEK_PORT`` override the file when set.
    """

    catalog_path: str | None = None
    host: str = "127.0.0.1"
    port: int = 8000
    n_display: int = 8
    method: str = "reweight"
    max_iterations: int = 50
    ttl_seconds: float = DEFAULT_TTL_SECONDS
    data_dir: str = "mindseek-data"

    @classmethod
    def from_file(cls, path: str | Path | None) -> "ServiceConfig":
        data: dict[str, Any] = {}
        if path is not None:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        config = cls(**data)
        if os.environ.get("MINDSEEK_CATALOG"):
            config.catalog_path = os.environ["MINDSEEK_CATALOG"]
        if os.environ.get("MINDSEEK_PORT"):
            config.port = int(os.environ["MINDSEEK_PORT"])
        return config

    def session_config(self, overrides: Mapping | None = None) -> SessionConfig:
        merged = {
            "n_display": self.n_display,
            "method": self.method,
            "max_iterations": self.max_iterations,
        }
        if overrides:
            merged.update(overrides)
        return SessionConfig(**merged)


class CreateSessionRequest(BaseModel):
    tag_query: dict[str, str] = Field(default_factory=dict)
    config: dict[str, Any] | None = None
    seed: int | None = None
    target: int | None = None


class ClickRequest(BaseModel):
    item: int


@dataclass
class _Entry:
    session: Session
    target: int | None
    created: float
    updated: float
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """Live sessions plus the append-only transcript log and results table."""

    def __init__(self, catalog: Catalog, config: ServiceConfig):
        self.catalog = catalog
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / "transcripts.jsonl"
        self.results_path = self.data_dir / "results.jsonl"
        self._entries: dict[str, _Entry] = {}
        self._events: dict[str, list[dict]] = {}
        self._store_lock = threading.Lock()
        self._load_log()

    # --- transcript log -----------------------------------------------------

    def _load_log(self) -> None:
        if not self.log_path.exists():
            return
        with self.log_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                self._events.setdefault(event["sid"], []).append(event)

    def _append_event(self, event: dict) -> None:
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._events.setdefault(event["sid"], []).append(event)

    def _append_result(self, sid: str, entry: _Entry) -> None:
        session = entry.session
        row = {
            "sid": sid,
            "method": session.config.method,
            "target": entry.target,
            "status": session.status.value,
            "iterations": len(session.history) + 1,
            "final_weights": [float(w) for w in session.weights],
        }
        with self.results_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(row) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # --- lifecycle ------------------------------------------------------------

    def create(self, request: CreateSessionRequest) -> tuple[str, _Entry]:
        seed = request.seed
        if seed is None:
            seed = int.from_bytes(os.urandom(4), "big")
        config = self.config.session_config(request.config)
        session = start_session(
            self.catalog, tag_query=request.tag_query, config=config, seed=seed
        )
        sid = uuid.uuid4().hex
        now = time.time()
        entry = _Entry(session=session, target=request.target, created=now, updated=now)
        with self._store_lock:
            self._entries[sid] = entry
        self._append_event(
            {
                "sid": sid,
                "event": "start",
                "seed": seed,
                "tag_query": dict(request.tag_query),
                "config": config.to_dict(),
                "target": request.target,
            }
        )
        if request.target is not None and request.target in session.current_display.seeds:
            session.mark_system_approved()
            self._append_event({"sid": sid, "event": "status", "status": session.status.value})
            self._append_result(sid, entry)
        return sid, entry

    def _rebuild(self, sid: str) -> _Entry:
        events = self._events.get(sid)
        if not events:
            raise KeyError(sid)
        start = events[0]
        if start["event"] != "start":
            raise KeyError(sid)
        session = start_session(
            self.catalog,
            tag_query=start["tag_query"] or None,
            config=SessionConfig.from_dict(start["config"]),
            seed=start["seed"],
        )
        final_status = Status.RUNNING
        for event in events[1:]:
            if event["event"] == "click":
                session.submit_click(int(event["item"]))
            elif event["event"] == "status":
                final_status = Status(event["status"])
        if final_status is not Status.RUNNING:
            session.status = final_status
        now = time.time()
        return _Entry(session=session, target=start.get("target"), created=now, updated=now)

    def get(self, sid: str) -> _Entry:
        self._evict_idle()
        with self._store_lock:
            entry = self._entries.get(sid)
            if entry is not None:
                return entry
        # not resident: recover from the transcript log
        try:
            entry = self._rebuild(sid)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session") from None
        with self._store_lock:
            return self._entries.setdefault(sid, entry)

    def _evict_idle(self) -> None:
        if self.config.ttl_seconds <= 0:
            return
        cutoff = time.time() - self.config.ttl_seconds
        with self._store_lock:
            stale = [sid for sid, e in self._entries.items() if e.updated < cutoff]
            for sid in stale:
                del self._entries[sid]

    # --- transitions ----------------------------------------------------------

    def click(self, sid: str, item: int) -> _Entry:
        entry = self.get(sid)
        with entry.lock:
            session = entry.session
            if not session.is_running:
                raise HTTPException(status_code=409, detail="session is terminal")
            if item not in session.current_display.seeds:
                raise HTTPException(status_code=422, detail="item not in current display")
            session.submit_click(item)
            self._append_event({"sid": sid, "event": "click", "item": int(item)})
            if entry.target is not None and entry.target in session.current_display.seeds:
                session.mark_system_approved()
                self._append_event(
                    {"sid": sid, "event": "status", "status": session.status.value}
                )
                self._append_result(sid, entry)
            entry.updated = time.time()
            return entry

    def finish(self, sid: str, status: Status) -> _Entry:
        entry = self.get(sid)
        with entry.lock:
            session = entry.session
            if not session.is_running:
                raise HTTPException(status_code=409, detail="session is terminal")
            if status is Status.APPROVED_BY_USER:
                session.mark_found()
            elif status is Status.ABANDONED:
                session.mark_abandoned()
            else:
                raise ValueError(f"not a caller-settable status: {status}")
            self._append_event({"sid": sid, "event": "status", "status": session.status.value})
            self._append_result(sid, entry)
            entry.updated = time.time()
            return entry


def _swatch_svg(item_features: tuple[np.ndarray, ...], item_id: int) -> str:
    """Deterministic placeholder swatch derived from the feature vectors."""
    flat = np.concatenate([np.asarray(v, dtype=float).ravel() for v in item_features])
    # map the first few coordinates through a squash into RGB / accent hues
    def channel(i: int) -> int:
        if flat.size == 0:
            return 128
        v = flat[i % flat.size]
        return int(round(255.0 / (1.0 + np.exp(-v))))

    r, g, b = channel(0), channel(1), channel(2)
    r2, g2, b2 = channel(3), channel(4), channel(5)
    stripe = 8 + (item_id % 5) * 6
    return (
        '<svg xmlns="http://www.w3.org/2000/svg" width="96" height="96">'
        f'<rect width="96" height="96" fill="rgb({r},{g},{b})"/>'
        f'<circle cx="48" cy="48" r="{stripe}" fill="rgb({r2},{g2},{b2})"/>'
        f'<text x="48" y="90" font-size="10" text-anchor="middle" fill="#222">#{item_id}</text>'
        "</svg>"
    )


def create_app(
    config: ServiceConfig | None = None,
    catalog: Catalog | None = None,
) -> FastAPI:
    """Build the service; the catalog loads eagerly when a path is configured."""
    config = config or ServiceConfig()
    if catalog is None and config.catalog_path:
        catalog = load_catalog(config.catalog_path)

    app = FastAPI(title="mindseek", version="0.1.0")
    app.state.store = SessionStore(catalog, config) if catalog is not None else None
    app.state.catalog = catalog
    app.state.config = config

    def store() -> SessionStore:
        if app.state.store is None:
            raise HTTPException(status_code=503, detail="catalog not loaded")
        return app.state.store

    def describe_item(item_id: int) -> dict:
        item = app.state.catalog.item(int(item_id))
        return {
            "id": item.id,
            "tags": item.tags,
            "thumbnail": f"/items/{item.id}/thumbnail.svg",
        }

    def view(entry: _Entry, sid: str) -> dict:
        session = entry.session
        return {
            "session_id": sid,
            "status": session.status.value,
            "iteration": session.iteration,
            "display": [describe_item(i) for i in session.current_display.seeds],
            "weights": [float(w) for w in session.weights],
            "channels": [ch.name for ch in app.state.catalog.channels],
        }

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "catalog_loaded": app.state.catalog is not None}

    @app.get("/catalog")
    def catalog_meta() -> dict:
        if app.state.catalog is None:
            raise HTTPException(status_code=503, detail="catalog not loaded")
        cat = app.state.catalog
        return {
            "n_items": cat.n_items,
            "channels": [ch.name for ch in cat.channels],
            "attributes": cat.tag_values(),
        }

    @app.post("/sessions", status_code=201)
    def create_session(request: CreateSessionRequest) -> dict:
        try:
            sid, entry = store().create(request)
        except (SessionError, CatalogError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return view(entry, sid)

    @app.get("/sessions/{sid}")
    def get_session(sid: str) -> dict:
        entry = store().get(sid)
        session = entry.session
        body = view(entry, sid)
        body["history"] = [
            {"display": list(fb.display), "click": fb.click} for fb in session.history
        ]
        body["seed"] = session.seed
        body["config"] = session.config.to_dict()
        return body

    @app.post("/sessions/{sid}/click")
    def click(sid: str, request: ClickRequest) -> dict:
        return view(store().click(sid, request.item), sid)

    @app.post("/sessions/{sid}/found")
    def found(sid: str) -> dict:
        entry = store().finish(sid, Status.APPROVED_BY_USER)
        return {"status": entry.session.status.value}

    @app.post("/sessions/{sid}/abandon")
    def abandon(sid: str) -> dict:
        entry = store().finish(sid, Status.ABANDONED)
        return {"status": entry.session.status.value}

    @app.get("/items/{item_id}/thumbnail.svg")
    def thumbnail(item_id: int) -> Response:
        if app.state.catalog is None:
            raise HTTPException(status_code=503, detail="catalog not loaded")
        try:
            item = app.state.catalog.item(item_id)
        except IndexError:
            raise HTTPException(status_code=404, detail="unknown item") from None
        return Response(content=_swatch_svg(item.features, item.id), media_type="image/svg+xml")

    return app
