"""HTTP face of the key directory.

Two endpoints, JSON bodies, binary fields base64-encoded:

POST /v1/keys/{user}   publish a bundle
    {"identity_pub": "<b64>", "signed_prekey_pub": "<b64>",
     "prekey_signature": "<b64>", "registration_id": 7,
     "one_time_prekeys": [{"id": 1, "pub": "<b64>"}, ...]}
    → {"status": "ok", "key_changed": false}          (400 on bad signature)

GET  /v1/keys/{user}   fetch a bundle, consuming one one-time prekey
    → {"identity_pub": "...", "signed_prekey_pub": "...",
       "prekey_signature": "...", "registration_id": 7,
       "one_time_prekey": {"id": 1, "pub": "..."} | null}
    (404 for unknown users)
"""

from __future__ import annotations

import base64
import binascii

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from ..errors import RegistrationRejected, UserNotFound
from .core import DirectoryCore


class OneTimePrekey(BaseModel):
    id: int = Field(ge=0)
    pub: str  # base64


class RegistrationRequest(BaseModel):
    identity_pub: str
    signed_prekey_pub: str
    prekey_signature: str
    registration_id: int = 0
    one_time_prekeys: list[OneTimePrekey] = Field(default_factory=list)


class RegistrationResponse(BaseModel):
    status: str
    key_changed: bool


class BundleResponse(BaseModel):
    identity_pub: str
    signed_prekey_pub: str
    prekey_signature: str
    registration_id: int
    one_time_prekey: OneTimePrekey | None = None


def _b64_field(name: str, value: str) -> bytes:
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(status_code=400, detail=f"{name} is not valid base64")


def create_app(core: DirectoryCore | None = None) -> FastAPI:
    app = FastAPI(title="textguard key directory", version="1")
    app.state.core = core or DirectoryCore()

    @app.post("/v1/keys/{user_id}", response_model=RegistrationResponse)
    def register(user_id: str, body: RegistrationRequest) -> RegistrationResponse:
        try:
            key_changed = app.state.core.register(
                user_id,
                identity_pub=_b64_field("identity_pub", body.identity_pub),
                signed_prekey_pub=_b64_field("signed_prekey_pub", body.signed_prekey_pub),
                prekey_signature=_b64_field("prekey_signature", body.prekey_signature),
                registration_id=body.registration_id,
                one_time_prekeys=[
                    (entry.id, _b64_field("one_time_prekeys", entry.pub))
                    for entry in body.one_time_prekeys
                ],
            )
        except RegistrationRejected as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return RegistrationResponse(status="ok", key_changed=key_changed)

    @app.get("/v1/keys/{user_id}", response_model=BundleResponse)
    def fetch(user_id: str) -> BundleResponse:
        try:
            bundle = app.state.core.fetch_bundle(user_id)
        except UserNotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        one_time = None
        if bundle.one_time_prekey_pub is not None:
            one_time = OneTimePrekey(
                id=bundle.one_time_prekey_id,
                pub=base64.b64encode(bundle.one_time_prekey_pub).decode("ascii"),
            )
        return BundleResponse(
            identity_pub=base64.b64encode(bundle.identity_pub).decode("ascii"),
            signed_prekey_pub=base64.b64encode(bundle.signed_prekey_pub).decode("ascii"),
            prekey_signature=base64.b64encode(bundle.prekey_signature).decode("ascii"),
            registration_id=bundle.registration_id,
            one_time_prekey=one_time,
        )

    return app


def run(host: str = "127.0.0.1", port: int = 8470, core: DirectoryCore | None = None) -> None:
    """Serve the directory until interrupted (used by the CLI)."""
    import uvicorn

    uvicorn.run(create_app(core), host=host, port=port, log_level="warning")
