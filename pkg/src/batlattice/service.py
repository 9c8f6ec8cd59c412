"""HTTP surface over the lattice kernels.

Float tensors cross the wire as base64-encoded "BAT1" blobs so results
stay bit-exact; integer sequences travel as JSON lists. Library errors
map 1:1 onto JSON bodies carrying the stable error code.
"""

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

import base64

import numpy as np

from . import __version__
from .band import BandWindow, bat_loss, build_window
from .cif import cif_boundary
from .errors import BandInfeasible, BatError
from .rnnt import rnnt_loss
from .tensorio import decode_tensor, encode_tensor


def _b64_decode(data: str) -> np.ndarray:
    return decode_tensor(base64.b64decode(data))


def _b64_encode(arr: np.ndarray) -> str:
    return base64.b64encode(encode_tensor(arr)).decode("ascii")


class RnntLossRequest(BaseModel):
    log_probs: str = Field(description="base64 BAT1 tensor, shape (T, U+1, V+1)")
    labels: list[int]


class BatLossRequest(BaseModel):
    log_probs: str = Field(description="base64 BAT1 tensor, shape (T, S, V+1)")
    window_starts: list[int]
    labels: list[int]
    r_d: int
    r_u: int


class LossResponse(BaseModel):
    loss: float
    loss_tensor: str = Field(description="loss as a 1-element f64 BAT1 blob")
    grad: str
    infeasible: bool


class BuildWindowRequest(BaseModel):
    boundary: list[int]
    u: int
    r_d: int
    r_u: int


class BuildWindowResponse(BaseModel):
    starts: list[int]
    width: int


class CifBoundaryRequest(BaseModel):
    weights: str = Field(description="base64 BAT1 tensor, shape (T,)")
    threshold: float = 1.0


class CifBoundaryResponse(BaseModel):
    boundary: list[int]


class VersionResponse(BaseModel):
    version: str


def create_app() -> FastAPI:
    app = FastAPI(title="batlattice", version=__version__)

    @app.exception_handler(BatError)
    async def _bat_error(request: Request, exc: BatError):
        status = 409 if isinstance(exc, BandInfeasible) else 400
        return JSONResponse(
            status_code=status,
            content={"code": exc.code, "message": str(exc)},
        )

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(
            status_code=400, content={"code": "BadValue", "message": str(exc)}
        )

    def loss_response(res) -> LossResponse:
        return LossResponse(
            loss=res.loss,
            loss_tensor=_b64_encode(np.array([res.loss], dtype=np.float64)),
            grad=_b64_encode(res.grad),
            infeasible=res.infeasible,
        )

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    @app.get("/v1/version", response_model=VersionResponse)
    async def version():
        return VersionResponse(version=__version__)

    @app.post("/v1/rnnt-loss", response_model=LossResponse)
    def v1_rnnt_loss(req: RnntLossRequest):
        return loss_response(rnnt_loss(_b64_decode(req.log_probs), req.labels))

    @app.post("/v1/bat-loss", response_model=LossResponse)
    def v1_bat_loss(req: BatLossRequest):
        window = BandWindow(
            starts=np.asarray(req.window_starts, dtype=np.int64),
            width=min(req.r_d + req.r_u + 2, len(req.labels) + 1),
            r_d=req.r_d,
            r_u=req.r_u,
        )
        return loss_response(
            bat_loss(_b64_decode(req.log_probs), window, req.labels)
        )

    @app.post("/v1/build-window", response_model=BuildWindowResponse)
    def v1_build_window(req: BuildWindowRequest):
        window = build_window(req.boundary, req.u, req.r_d, req.r_u)
        return BuildWindowResponse(
            starts=[int(s) for s in window.starts], width=window.width
        )

    @app.post("/v1/cif-boundary", response_model=CifBoundaryResponse)
    def v1_cif_boundary(req: CifBoundaryRequest):
        weights = _b64_decode(req.weights)
        alignment = cif_boundary(weights, threshold=req.threshold)
        return CifBoundaryResponse(boundary=[int(c) for c in alignment.boundary])

    return app


app = create_app()
