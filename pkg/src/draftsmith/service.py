"""HTTP service exposing run lifecycle, checkpoints, artifacts and reviews.

This is the boundary the companion console consumes: JSON everywhere,
server-sent events for live monitoring, and a polling-friendly GET
surface that can reconstruct any state a missed event carried.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from .config import parse_user_config
from .domain import CheckpointDecision, CheckpointState, PromptStrategy, StageCheckpoint
from .errors import InvalidConfig, StageExhausted, UnknownCheckpoint, UnknownRun
from .pipeline import PipelineRuntime, RunState, RunStatus, make_runtime
from .runner import create_run, execute, review_run_artifacts
from .telemetry import report as usage_report, to_csv

DECISION_APPLY_TIMEOUT_S = 30.0


@dataclass
class RunHandle:
    """Live-run coordination: decision hand-off and the event buffer."""

    run_id: str
    cond: threading.Condition = field(default_factory=threading.Condition)
    pending: StageCheckpoint | None = None
    decisions: dict[str, CheckpointDecision] = field(default_factory=dict)
    applied: dict[str, StageCheckpoint] = field(default_factory=dict)
    events: list[dict[str, Any]] = field(default_factory=list)
    thread: threading.Thread | None = None
    terminal: bool = False


class RunManager:
    """Owns one executor thread per run and routes decisions and events."""

    def __init__(self, runtime: PipelineRuntime):
        self.runtime = runtime
        self.handles: dict[str, RunHandle] = {}
        self._guard = threading.Lock()
        runtime.emit = self._dispatch_event

    def handle(self, run_id: str) -> RunHandle:
        with self._guard:
            return self.handles.setdefault(run_id, RunHandle(run_id=run_id))

    def _dispatch_event(self, event: dict[str, Any]) -> None:
        handle = self.handle(event["run_id"])
        with handle.cond:
            handle.events.append(event)
            if event["type"] in ("run_completed", "run_halted"):
                handle.terminal = True
            handle.cond.notify_all()

    def start(self, run_id: str) -> None:
        handle = self.handle(run_id)
        with self._guard:
            if handle.thread is not None and handle.thread.is_alive():
                return
            handle.thread = threading.Thread(
                target=self._execute, args=(run_id,), daemon=True, name=f"run-{run_id}"
            )
            handle.thread.start()

    def _execute(self, run_id: str) -> None:
        handle = self.handle(run_id)

        def decision_source(checkpoint: StageCheckpoint) -> CheckpointDecision:
            with handle.cond:
                handle.pending = checkpoint
                handle.cond.notify_all()
                while checkpoint.id not in handle.decisions:
                    handle.cond.wait()
                handle.pending = None
                return handle.decisions[checkpoint.id]

        try:
            execute(run_id, decision_source, self.runtime)
        except StageExhausted:
            pass  # state already persisted as halted
        except Exception as exc:  # surfaced via run detail, never crashes the app
            state = self.runtime.state_store.load(run_id)
            self.runtime.state_store.save(
                replace(state, status=RunStatus.HALTED, error=f"run failed: {exc}")
            )
            self.runtime.event("run_halted", run_id, error=str(exc))
        finally:
            with handle.cond:
                handle.terminal = True
                handle.cond.notify_all()

    def submit_decision(
        self, run_id: str, checkpoint: StageCheckpoint, decision: CheckpointDecision
    ) -> StageCheckpoint:
        """Hand a decision to the executor and wait for it to be applied."""
        handle = self.handle(run_id)
        if handle.thread is None or not handle.thread.is_alive():
            self.start(run_id)  # resume an interrupted run; its checkpoints are reissued
            raise HTTPException(
                status_code=409,
                detail="checkpoint is stale; run resumed, fetch the current checkpoint",
            )
        with handle.cond:
            if handle.pending is None or handle.pending.id != checkpoint.id:
                raise HTTPException(status_code=409, detail="checkpoint is not awaiting a decision")
            handle.decisions[checkpoint.id] = decision
            handle.cond.notify_all()
        deadline = time.monotonic() + DECISION_APPLY_TIMEOUT_S
        while time.monotonic() < deadline:
            state = self.runtime.state_store.load(run_id)
            for stored in state.checkpoints:
                if stored.id == checkpoint.id and stored.state is not CheckpointState.PENDING:
                    handle.applied[checkpoint.id] = stored
                    return stored
            time.sleep(0.02)
        raise HTTPException(status_code=500, detail="decision was not applied in time")


class RunSubmission(BaseModel):
    config: dict[str, Any]
    run_id: str | None = None


class DecisionBody(BaseModel):
    decision: str
    edited_body: str | None = None
    note: str | None = None
    decision_token: str | None = None


class ReviewBody(BaseModel):
    strategy: str = "zs"
    passes: int = 3


def run_summary(state: RunState) -> dict[str, Any]:
    return {
        "run_id": state.run_id,
        "status": state.status.value,
        "current_stage": state.current_stage,
        "pending_checkpoint_count": len(state.pending_checkpoints()),
        "created_at": state.created_at,
    }


def create_app(
    runtime: PipelineRuntime | None = None,
    data_dir: str | Path | None = None,
    resume_existing: bool = True,
) -> FastAPI:
    runtime = runtime or make_runtime(data_dir or os.getenv("DATA_DIR", "./data"))
    manager = RunManager(runtime)
    app = FastAPI(title="draftsmith", version="0.1.0")
    app.state.runtime = runtime
    app.state.manager = manager
    api_token = os.getenv("API_TOKEN", "").strip()

    # replay-by-token responses for idempotent retries
    idempotent_responses: dict[str, Any] = {}
    decision_tokens: dict[str, str] = {}  # token -> checkpoint id

    def check_auth(authorization: str | None = Header(default=None)) -> None:
        if api_token and authorization != f"Bearer {api_token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    auth = Depends(check_auth)

    def load_state(run_id: str) -> RunState:
        try:
            return runtime.state_store.load(run_id)
        except UnknownRun:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")

    @app.post("/runs", status_code=201, dependencies=[auth])
    def post_run(body: RunSubmission, idempotency_key: str | None = Header(default=None)):
        if idempotency_key and idempotency_key in idempotent_responses:
            return JSONResponse(idempotent_responses[idempotency_key], status_code=201)
        try:
            config, seeds = parse_user_config(body.config)
        except InvalidConfig as exc:
            raise HTTPException(status_code=422, detail=exc.violations)
        if config.generator_model not in runtime.pricing:
            raise HTTPException(status_code=422, detail=[f"unknown model {config.generator_model!r}"])
        if config.reviewer_model not in runtime.pricing:
            raise HTTPException(status_code=422, detail=[f"unknown model {config.reviewer_model!r}"])
        if body.run_id and runtime.state_store.exists(body.run_id):
            raise HTTPException(status_code=409, detail=f"run {body.run_id} already exists")
        try:
            state = create_run(config, runtime, run_id=body.run_id, seed_records=seeds)
        except InvalidConfig as exc:
            raise HTTPException(status_code=422, detail=exc.violations)
        manager.start(state.run_id)
        summary = run_summary(state)
        if idempotency_key:
            idempotent_responses[idempotency_key] = summary
        return JSONResponse(summary, status_code=201)

    @app.get("/runs", dependencies=[auth])
    def list_runs():
        return [run_summary(runtime.state_store.load(rid)) for rid in runtime.state_store.list_runs()]

    @app.get("/runs/{run_id}", dependencies=[auth])
    def get_run(run_id: str):
        state = load_state(run_id)
        detail = run_summary(state)
        detail.update(
            {
                "completed_stages": list(state.completed_stages),
                "paper_kind": state.config.paper_kind.value,
                "tool_mode": state.config.tool_mode.value,
                "strategy": state.config.strategy.kind.value,
                "warnings": list(state.warnings),
                "error": state.error,
                "hallucination_event_count": len(state.hallucination_events),
            }
        )
        return detail

    @app.get("/runs/{run_id}/checkpoints", dependencies=[auth])
    def get_checkpoints(run_id: str, state_filter: str | None = None):
        state = load_state(run_id)
        checkpoints = [c.to_dict() for c in state.checkpoints]
        if state_filter:
            checkpoints = [c for c in checkpoints if c["state"] == state_filter]
        return checkpoints

    @app.post("/checkpoints/{checkpoint_id}/decision", dependencies=[auth])
    def post_decision(checkpoint_id: str, body: DecisionBody):
        try:
            run_id, checkpoint = runtime.state_store.find_checkpoint(checkpoint_id)
        except UnknownCheckpoint:
            raise HTTPException(status_code=404, detail=f"unknown checkpoint {checkpoint_id}")
        if checkpoint.state is not CheckpointState.PENDING:
            # Replaying the same decision token returns the stored result.
            if body.decision_token and decision_tokens.get(body.decision_token) == checkpoint_id:
                return checkpoint.to_dict()
            raise HTTPException(status_code=409, detail=f"checkpoint already {checkpoint.state.value}")
        decision = _parse_decision(body, checkpoint)
        applied = manager.submit_decision(run_id, checkpoint, decision)
        if body.decision_token:
            decision_tokens[body.decision_token] = checkpoint_id
        return applied.to_dict()

    @app.get("/runs/{run_id}/manuscript", dependencies=[auth])
    def get_manuscript(run_id: str):
        state = load_state(run_id)
        out_dir = runtime.data_dir / "out" / run_id
        payload: dict[str, Any] = {
            "run_id": run_id,
            "status": state.manuscript.status.value,
            "in_progress": state.status not in (RunStatus.COMPLETE, RunStatus.HALTED),
            "sections": [s.to_dict() for s in state.manuscript.sections],
        }
        tex = out_dir / "paper.tex"
        if tex.exists():
            payload["tex"] = tex.read_text(encoding="utf-8")
            payload["bib"] = (out_dir / "references.bib").read_text(encoding="utf-8")
            payload["lint"] = json.loads((out_dir / "lint.json").read_text(encoding="utf-8"))
        return payload

    @app.get("/runs/{run_id}/telemetry", dependencies=[auth])
    def get_telemetry(run_id: str, format: str = "json"):
        state = load_state(run_id)
        if format == "csv":
            return PlainTextResponse(to_csv(state.ledger), media_type="text/csv")
        summary = usage_report(state.ledger)
        return json.loads(summary.to_json())

    @app.post("/runs/{run_id}/review", dependencies=[auth])
    def post_review(run_id: str, body: ReviewBody):
        load_state(run_id)
        try:
            strategy = PromptStrategy.parse(body.strategy)
        except ValueError:
            raise HTTPException(status_code=422, detail=[f"unknown strategy {body.strategy!r}"])
        if not 1 <= body.passes <= 10:
            raise HTTPException(status_code=422, detail=["passes must be in [1, 10]"])
        try:
            return review_run_artifacts(runtime, run_id, strategy, body.passes)
        except ValueError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.get("/runs/{run_id}/review", dependencies=[auth])
    def get_review(run_id: str):
        load_state(run_id)
        path = runtime.data_dir / "out" / run_id / "review" / "report.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail="no review report for this run")
        return json.loads(path.read_text(encoding="utf-8"))

    @app.get("/runs/{run_id}/events", dependencies=[auth])
    def get_events(run_id: str, request: Request, last_event_id: str | None = Header(default=None)):
        load_state(run_id)
        handle = manager.handle(run_id)
        start_after = int(last_event_id) if last_event_id and last_event_id.isdigit() else 0

        def stream() -> Iterator[str]:
            cursor = 0
            while True:
                with handle.cond:
                    if cursor >= len(handle.events) and not handle.terminal:
                        handle.cond.wait(timeout=15.0)
                    batch = handle.events[cursor:]
                    cursor = len(handle.events)
                    terminal = handle.terminal
                for event in batch:
                    if event["seq"] <= start_after:
                        continue
                    yield f"id: {event['seq']}\nevent: {event['type']}\ndata: {json.dumps(event)}\n\n"
                if not batch:
                    if terminal:
                        return
                    yield ": heartbeat\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def _parse_decision(body: DecisionBody, checkpoint: StageCheckpoint) -> CheckpointDecision:
    kind = body.decision.strip().lower()
    if kind == "approve":
        return CheckpointDecision(CheckpointState.APPROVED, note=body.note)
    if kind == "edit":
        if body.edited_body is None:
            raise HTTPException(status_code=422, detail=["edit requires edited_body"])
        if checkpoint.payload.get("kind") == "candidates":
            try:
                data = json.loads(body.edited_body)
            except ValueError:
                raise HTTPException(status_code=422, detail=["edited_body must be JSON for checklists"])
            items = data.get("selected", data) if isinstance(data, dict) else data
            size = len(checkpoint.payload.get("items", []))
            if checkpoint.payload.get("candidate_type") == "tools":
                if not isinstance(items, list) or not all(isinstance(t, str) for t in items):
                    raise HTTPException(status_code=422, detail=["tool edit must be a JSON array of names"])
            elif (
                not isinstance(items, list)
                or not items
                or not all(isinstance(i, int) and 0 <= i < size for i in items)
            ):
                raise HTTPException(
                    status_code=422,
                    detail=[f"checklist edit must be a non-empty JSON array of indices in [0, {size - 1}]"],
                )
        return CheckpointDecision(CheckpointState.EDITED, note=body.note, edited_body=body.edited_body)
    if kind == "reject":
        if not (body.note or "").strip():
            raise HTTPException(status_code=422, detail=["reject requires a note"])
        return CheckpointDecision(CheckpointState.REJECTED, note=body.note)
    raise HTTPException(status_code=422, detail=[f"unknown decision {body.decision!r}"])


def resume_unfinished(app: FastAPI) -> list[str]:
    """Restart executor threads for runs interrupted before completion."""
    runtime: PipelineRuntime = app.state.runtime
    manager: RunManager = app.state.manager
    resumed = []
    for run_id in runtime.state_store.list_runs():
        state = runtime.state_store.load(run_id)
        if state.status in (RunStatus.CREATED, RunStatus.RUNNING, RunStatus.WAITING_FOR_HUMAN):
            manager.start(run_id)
            resumed.append(run_id)
    return resumed


__all__ = ["RunManager", "create_app", "resume_unfinished", "run_summary"]
