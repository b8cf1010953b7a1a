"""HTTP session service for live elicitation.

Serves choice sets drawn from the candidate distribution, records rankings
into an append-only persisted dataset, runs training jobs on a worker
thread (one per session at most), and exposes density views of the current
model.  All state survives process restarts via the session storage.
"""

from __future__ import annotations

import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from ..experiments import density_grid, marginal_histograms
from ..flows import BoxDomain, FlowConfig, FlowModel
from ..preference import ObjectiveConfig, PreferenceDataset, RankingObservation
from ..rum import CandidateSampler
from ..training import TrainConfig, TrainingAborted, train
from . import schemas
from .storage import SessionConfig, SessionStorage

__all__ = ["create_app", "ApiError"]


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field


class Session:
    """Live state of one elicitation session."""

    def __init__(self, config: SessionConfig, storage: SessionStorage):
        self.config = config
        self.storage = storage
        self.lock = threading.Lock()
        self.observations: list[RankingObservation] = storage.read_observations()
        self.pending, self.answered = storage.read_queries()
        self.model: FlowModel | None = None
        if storage.checkpoint_path.exists():
            self.model = FlowModel.load_checkpoint(storage.checkpoint_path)
        self.job = {"state": "idle", "progress": 0.0, "trace_tail": [], "error": None}
        self._query_counter = len(self.pending)
        self.domain = BoxDomain(np.asarray(config.lower), np.asarray(config.upper))
        if config.lambda_weight > 0.0:
            self.sampler = CandidateSampler(
                self.domain, weight=config.lambda_weight,
                gaussian_mean=self.domain.center, gaussian_sd=self.domain.halfwidth / 6.0)
        else:
            self.sampler = CandidateSampler.uniform(self.domain)
        self._rng = np.random.default_rng()

    def status_view(self) -> schemas.TrainStatusView:
        return schemas.TrainStatusView(
            state=self.job["state"], progress=self.job["progress"],
            trace_tail=list(self.job["trace_tail"])[-20:], error=self.job["error"])

    def view(self) -> schemas.SessionView:
        return schemas.SessionView(
            id=self.config.id, dim=self.config.dim, names=list(self.config.names),
            lower=list(self.config.lower), upper=list(self.config.upper),
            k=self.config.k, lambda_weight=self.config.lambda_weight,
            s_lik=self.config.s_lik, dataset_size=len(self.observations),
            pending_queries=len(self.pending), has_model=self.model is not None,
            training=self.status_view())


class SessionManager:
    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.sessions: dict[str, Session] = {}
        self.lock = threading.Lock()

    def create(self, request: schemas.CreateSessionRequest) -> Session:
        session_id = uuid.uuid4().hex[:12]
        names = request.names or [f"x{i}" for i in range(request.dim)]
        config = SessionConfig(
            id=session_id, dim=request.dim, names=tuple(names),
            lower=tuple(request.lower), upper=tuple(request.upper), k=request.k,
            lambda_weight=request.lambda_weight, s_lik=request.s_lik)
        storage = SessionStorage(self.data_dir, session_id)
        storage.write_config(config)
        storage.write_observations(config, [])
        storage.write_queries({}, set())
        session = Session(config, storage)
        with self.lock:
            self.sessions[session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self.lock:
            session = self.sessions.get(session_id)
        if session is None:
            storage = SessionStorage(self.data_dir, session_id)
            if not storage.exists():
                raise ApiError(404, "unknown_session", f"no session {session_id}")
            session = Session(storage.read_config(), storage)
            with self.lock:
                session = self.sessions.setdefault(session_id, session)
        return session


def _train_worker(session: Session, dataset: PreferenceDataset, cfg: TrainConfig):
    try:
        model = FlowModel(session.domain, FlowConfig.default_for_dim(session.domain.dim),
                          seed=cfg.seed)

        def progress(step, total):
            session.job["progress"] = (step + 1) / total

        trained, report = train(model, dataset, ObjectiveConfig(s_lik=session.config.s_lik),
                                cfg, progress=progress)
        with session.lock:
            trained.save_checkpoint(session.storage.checkpoint_path)
            session.model = trained
            session.job.update(state="done", progress=1.0,
                               trace_tail=[float(v) for v in report.trace_values[-20:]])
    except TrainingAborted as err:
        session.job.update(state="failed", error=str(err))
    except Exception as err:  # surface anything else to the client
        session.job.update(state="failed", error=f"{type(err).__name__}: {err}")


def create_app(data_dir, frontend_dir=None) -> FastAPI:
    """Build the service around a data directory (sessions live below it)."""
    app = FastAPI(title="beliefflow elicitation service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    manager = SessionManager(Path(data_dir))
    app.state.manager = manager

    @app.exception_handler(ApiError)
    async def handle_api_error(_req: Request, exc: ApiError):
        body = schemas.ErrorBody(code=exc.code, message=exc.message, field=exc.field)
        return JSONResponse(status_code=exc.status, content=body.model_dump())

    @app.exception_handler(RequestValidationError)
    async def handle_validation(_req: Request, exc: RequestValidationError):
        errors = exc.errors()
        field = None
        if errors and errors[0].get("loc"):
            parts = [str(p) for p in errors[0]["loc"] if p != "body"]
            field = ".".join(parts) or None
        message = errors[0]["msg"] if errors else "invalid request"
        body = schemas.ErrorBody(code="validation_error", message=message, field=field)
        return JSONResponse(status_code=422, content=body.model_dump())

    @app.post("/sessions", response_model=schemas.SessionView, status_code=201)
    def create_session(request: schemas.CreateSessionRequest):
        return manager.create(request).view()

    @app.get("/sessions/{session_id}", response_model=schemas.SessionView)
    def get_session(session_id: str):
        return manager.get(session_id).view()

    @app.get("/sessions/{session_id}/query", response_model=schemas.QueryView)
    def next_query(session_id: str):
        session = manager.get(session_id)
        with session.lock:
            points = session.sampler.sample(session.config.k, session._rng)
            session._query_counter += 1
            query_id = f"q{session._query_counter:06d}-{uuid.uuid4().hex[:6]}"
            session.pending[query_id] = points
            session.storage.write_queries(session.pending, session.answered)
        return schemas.QueryView(query_id=query_id, names=list(session.config.names),
                                 points=points.tolist())

    @app.post("/sessions/{session_id}/responses", response_model=schemas.SubmitAck)
    def submit_ranking(session_id: str, request: schemas.SubmitRankingRequest):
        session = manager.get(session_id)
        with session.lock:
            points = session.pending.get(request.query_id)
            if points is None:
                if request.query_id in session.answered:
                    raise ApiError(409, "duplicate_submission",
                                   f"query {request.query_id} was already answered")
                raise ApiError(404, "unknown_query", f"no pending query {request.query_id}")
            if sorted(request.ranking) != list(range(session.config.k)):
                raise ApiError(422, "invalid_permutation",
                               "ranking must be a permutation of 0..k-1", field="ranking")
            obs = RankingObservation(points, tuple(request.ranking))
            session.observations.append(obs)
            session.answered.add(request.query_id)
            del session.pending[request.query_id]
            session.storage.write_observations(session.config, session.observations)
            session.storage.write_queries(session.pending, session.answered)
            size = len(session.observations)
        return schemas.SubmitAck(query_id=request.query_id, dataset_size=size)

    @app.post("/sessions/{session_id}/train", response_model=schemas.TrainStatusView, status_code=202)
    def start_training(session_id: str, request: schemas.TrainRequest):
        session = manager.get(session_id)
        with session.lock:
            if session.job["state"] == "running":
                raise ApiError(409, "training_running", "a training job is already running")
            if not session.observations:
                raise ApiError(422, "empty_dataset", "collect at least one ranking first")
            dataset = PreferenceDataset(list(session.observations))
            batch = request.batch_size or min(4, len(dataset))
            cfg = TrainConfig(iterations=request.iterations, batch_size=min(batch, len(dataset)),
                              learning_rate=request.learning_rate, seed=request.seed)
            session.job = {"state": "running", "progress": 0.0, "trace_tail": [], "error": None}
        worker = threading.Thread(target=_train_worker, args=(session, dataset, cfg), daemon=True)
        worker.start()
        return session.status_view()

    @app.get("/sessions/{session_id}/train/status", response_model=schemas.TrainStatusView)
    def training_status(session_id: str):
        return manager.get(session_id).status_view()

    def _require_model(session: Session) -> FlowModel:
        model = session.model
        if model is None:
            raise ApiError(409, "no_model", "train a model first")
        return model

    @app.get("/sessions/{session_id}/density", response_model=schemas.DensityGridView)
    def density(session_id: str, axes: str = "0,1", res: int = 64):
        session = manager.get(session_id)
        model = _require_model(session)
        try:
            i, j = (int(p) for p in axes.split(","))
        except ValueError:
            raise ApiError(422, "invalid_axes", "axes must be 'i,j'", field="axes") from None
        if not (0 <= i < session.config.dim and 0 <= j < session.config.dim and i != j):
            raise ApiError(422, "invalid_axes", "axes out of range", field="axes")
        if res < 16 or res > 512:
            raise ApiError(422, "invalid_resolution", "res must be in [16, 512]", field="res")
        return schemas.DensityGridView(**density_grid(model, axes=(i, j), resolution=res))

    @app.get("/sessions/{session_id}/marginals", response_model=schemas.MarginalsView)
    def marginals(session_id: str, res: int = 64):
        session = manager.get(session_id)
        model = _require_model(session)
        if res < 16 or res > 512:
            raise ApiError(422, "invalid_resolution", "res must be in [16, 512]", field="res")
        return schemas.MarginalsView(**marginal_histograms(model, resolution=res))

    @app.get("/sessions/{session_id}/samples", response_model=schemas.SamplesView)
    def samples(session_id: str, n: int = 256):
        session = manager.get(session_id)
        model = _require_model(session)
        if not 1 <= n <= 100_000:
            raise ApiError(422, "invalid_count", "n must be in [1, 100000]", field="n")
        pts = model.sample(n, seed=int(np.random.default_rng().integers(2**31)))
        return schemas.SamplesView(points=pts.tolist())

    @app.get("/sessions/{session_id}/export")
    def export_dataset(session_id: str):
        session = manager.get(session_id)
        return FileResponse(session.storage.data_path, media_type="application/x-ndjson",
                            filename=f"{session_id}.jsonl")

    if frontend_dir is not None and Path(frontend_dir).exists():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
