"""HTTP face of the service.

Every handler is stateless: the workspace id arrives with each request via
Basic auth, all durable state lives in the admin database, and any number
of API processes can serve the same deployment side by side. Handlers
translate domain errors to status codes in one table; bodies carry the
server's message verbatim so clients can surface it.
"""

from __future__ import annotations

import base64
import binascii
import dataclasses
import io
import os

from fastapi import Depends, FastAPI, Request, Response, UploadFile
from fastapi import Form, File
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from . import formats, service
from .admindb import AdminDb
from .errors import (
    CasBatchError,
    DuplicateAlias,
    DuplicateContext,
    AlreadyTerminal,
    EmptyInput,
    EngineError,
    Ineligible,
    InvalidSubmission,
    MalformedInto,
    MissingCoordinates,
    MissingInto,
    NoMyDbTarget,
    NotMember,
    NotOwner,
    NotPublished,
    ParseError,
    QuotaExceeded,
    RadiusOutOfRange,
    ScreenRejected,
    TableExists,
    UnknownContext,
    UnknownGroup,
    UnknownJob,
    UnknownQueue,
    UnknownTable,
    UnknownTarget,
    UnknownUser,
    UnreachableLocator,
)
from .model import JobKind, JobRecord, JobState
from .mydb import MyDbManager

_STATUS = {
    UnknownUser: 404,
    UnknownJob: 404,
    UnknownQueue: 404,
    UnknownTarget: 404,
    UnknownContext: 404,
    UnknownTable: 404,
    UnknownGroup: 404,
    NotPublished: 404,
    NotOwner: 403,
    NotMember: 403,
    TableExists: 409,
    DuplicateAlias: 409,
    DuplicateContext: 409,
    AlreadyTerminal: 409,
    ScreenRejected: 422,
    MissingInto: 422,
    MalformedInto: 422,
    InvalidSubmission: 422,
    ParseError: 422,
    MissingCoordinates: 422,
    RadiusOutOfRange: 422,
    EmptyInput: 422,
    Ineligible: 422,
    QuotaExceeded: 413,
    EngineError: 400,
    NoMyDbTarget: 503,
    UnreachableLocator: 503,
}

_MEDIA = {".csv": "text/csv", ".xml": "application/xml",
          ".json": "application/json"}


def _status_for(exc: CasBatchError) -> int:
    for klass in type(exc).__mro__:
        if klass in _STATUS:
            return _STATUS[klass]
    return 400


def job_json(job: JobRecord) -> dict:
    out = dataclasses.asdict(job)
    out["job_kind"] = job.job_kind.value
    out["state"] = job.state.value
    return out


class SubmitBody(BaseModel):
    query: str
    queue: str
    context: str | None = None


class QuickBody(BaseModel):
    query: str
    context: str | None = None


class ExportBody(BaseModel):
    table: str
    format: str


class NeighborsBody(BaseModel):
    table: str
    context: str
    target_table: str
    radius_arcmin: float


class PublishBody(BaseModel):
    table: str


def create_app(admin: AdminDb, mydbm: MyDbManager) -> FastAPI:
    app = FastAPI(title="casbatch", docs_url="/docs")

    # the browser client is served from its own origin
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["Authorization", "Content-Type", "Accept"],
        expose_headers=["X-Job-Id", "X-Truncated"],
    )

    def unauthorized() -> Response:
        # one body for wrong password, unknown user, and malformed header:
        # the response must not say which
        return JSONResponse(
            {"detail": "invalid credentials"},
            status_code=401,
            headers={"WWW-Authenticate": "Basic"},
        )

    def current_user(request: Request) -> int:
        header = request.headers.get("Authorization", "")
        scheme, _, blob = header.partition(" ")
        if scheme.lower() != "basic" or not blob:
            raise _AuthFailed()
        try:
            decoded = base64.b64decode(blob, validate=True).decode()
            name, _, password = decoded.partition(":")
            ws_id = int(name)
        except (binascii.Error, UnicodeDecodeError, ValueError):
            raise _AuthFailed() from None
        if not admin.verify_password(ws_id, password):
            raise _AuthFailed()
        return ws_id

    class _AuthFailed(Exception):
        pass

    @app.exception_handler(_AuthFailed)
    async def auth_failed(request: Request, exc: _AuthFailed):
        return unauthorized()

    @app.exception_handler(CasBatchError)
    async def domain_error(request: Request, exc: CasBatchError):
        return JSONResponse({"detail": str(exc)},
                            status_code=_status_for(exc))

    # -- health ------------------------------------------------------------

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    # -- jobs ----------------------------------------------------------------

    @app.post("/v1/jobs", status_code=202)
    def submit(body: SubmitBody, ws: int = Depends(current_user)):
        job = service.submit_job(admin, mydbm, ws, body.query, body.queue,
                                 context=body.context)
        return {"job_id": job.job_id}

    @app.get("/v1/jobs")
    def list_jobs(state: str | None = None, kind: str | None = None,
                  ws: int = Depends(current_user)):
        state_f = _parse_enum(JobState, state, "state")
        kind_f = _parse_enum(JobKind, kind, "kind")
        jobs = admin.list_jobs(ws, state=state_f, kind=kind_f)
        return [job_json(j) for j in jobs]

    @app.get("/v1/jobs/{job_id}")
    def job_status(job_id: int, ws: int = Depends(current_user)):
        job = admin.get_job(job_id)
        if job.user_id != ws:
            raise NotOwner(f"job {job_id} belongs to another user")
        return job_json(job)

    @app.post("/v1/jobs/{job_id}/cancel")
    def cancel(job_id: int, ws: int = Depends(current_user)):
        job = admin.request_cancel(job_id, ws)
        return {"job_id": job.job_id, "state": job.state.value,
                "cancel_requested": job.cancel_requested}

    @app.post("/v1/jobs/{job_id}/resubmit", status_code=202)
    def resubmit(job_id: int, ws: int = Depends(current_user)):
        job = service.resubmit_job(admin, mydbm, ws, job_id)
        return {"job_id": job.job_id}

    # -- quick lane ----------------------------------------------------------

    @app.post("/v1/quick")
    def quick(body: QuickBody, request: Request,
              ws: int = Depends(current_user)):
        job, rows = service.run_quick(admin, mydbm, ws, body.query,
                                      context=body.context)
        accept = request.headers.get("Accept", "")
        fmt = "json" if "application/json" in accept else "csv"
        buf = io.StringIO()
        formats.WRITERS[fmt](buf, rows.columns, rows.rows)
        return Response(
            content=buf.getvalue(),
            media_type="application/json" if fmt == "json" else "text/csv",
            headers={
                "X-Job-Id": str(job.job_id),
                "X-Truncated": "true" if rows.truncated else "false",
            },
        )

    # -- scratch database ------------------------------------------------------

    @app.get("/v1/mydb/tables")
    def tables(ws: int = Depends(current_user)):
        return [dataclasses.asdict(t) for t in mydbm.list_tables(ws)]

    @app.delete("/v1/mydb/tables/{table}")
    def drop_table(table: str, ws: int = Depends(current_user)):
        mydbm.drop_table(ws, table)
        return {"dropped": table}

    @app.post("/v1/mydb/import", status_code=201)
    def import_table(table: str = Form(...), format: str = Form(...),
                     file: UploadFile = File(...),
                     ws: int = Depends(current_user)):
        # SpooledTemporaryFile lacks the io protocol on older Pythons;
        # scratch imports are small enough to buffer whole
        stream = io.StringIO(file.file.read().decode("utf-8"))
        info = mydbm.import_table(ws, stream, format, table)
        return dataclasses.asdict(info)

    @app.post("/v1/mydb/export", status_code=202)
    def export_table(body: ExportBody, ws: int = Depends(current_user)):
        job = mydbm.export_table(ws, body.table, body.format)
        return {"job_id": job.job_id}

    @app.post("/v1/mydb/neighbors", status_code=201)
    def neighbors(body: NeighborsBody, ws: int = Depends(current_user)):
        info = mydbm.neighbors(ws, body.table, body.context,
                               body.target_table, body.radius_arcmin)
        return dataclasses.asdict(info)

    # -- groups ----------------------------------------------------------------

    @app.post("/v1/groups/{group}/publish", status_code=201)
    def publish(group: str, body: PublishBody,
                ws: int = Depends(current_user)):
        record = mydbm.publish(ws, body.table, group)
        return dataclasses.asdict(record)

    # -- downloads ---------------------------------------------------------------

    @app.get("/v1/download/{token}")
    def download(token: str, ws: int = Depends(current_user)):
        record = admin.get_download(token)
        if record is None:
            raise UnknownJob("no such download")
        if record.purged or not os.path.exists(record.path):
            return JSONResponse(
                {"detail": "download expired and was removed"},
                status_code=410,
            )
        ext = os.path.splitext(record.path)[1]
        return FileResponse(
            record.path,
            media_type=_MEDIA.get(ext, "application/octet-stream"),
            filename=os.path.basename(record.path),
        )

    return app


def _parse_enum(enum_cls, raw: str | None, name: str):
    if raw is None:
        return None
    for member in enum_cls:
        if member.value.lower() == raw.lower():
            return member
    allowed = ", ".join(m.value for m in enum_cls)
    raise InvalidSubmission(f"unknown {name} {raw!r}; expected one of {allowed}")
