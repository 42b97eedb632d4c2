"""Directory clients the daemon wires in, plus bundle↔JSON plumbing.

Both clients expose the same two calls — ``publish`` and
``fetch_bundle`` — so the session manager never knows which one it got.
"""

from __future__ import annotations

import base64

import httpx

from ..errors import DirectoryUnavailable, RegistrationRejected, UserNotFound
from ..keystore import Store
from ..ratchet import PreKeyBundle
from .core import DirectoryCore

DEFAULT_PREKEY_COUNT = 16


def registration_payload(store: Store, one_time_count: int = DEFAULT_PREKEY_COUNT) -> dict:
    """Mint fresh one-time prekeys and build the JSON publication body."""
    minted = store.mint_one_time_prekeys(one_time_count)
    encode = lambda raw: base64.b64encode(raw).decode("ascii")  # noqa: E731
    return {
        "identity_pub": encode(store.identity.public),
        "signed_prekey_pub": encode(store.signed_prekey.public),
        "prekey_signature": encode(store.prekey_signature()),
        "registration_id": store.registration_id,
        "one_time_prekeys": [
            {"id": prekey_id, "pub": encode(pair.public)} for prekey_id, pair in minted
        ],
    }


def bundle_from_json(data: dict) -> PreKeyBundle:
    decode = base64.b64decode
    one_time = data.get("one_time_prekey")
    return PreKeyBundle(
        identity_pub=decode(data["identity_pub"]),
        signed_prekey_pub=decode(data["signed_prekey_pub"]),
        prekey_signature=decode(data["prekey_signature"]),
        registration_id=int(data.get("registration_id", 0)),
        one_time_prekey_pub=decode(one_time["pub"]) if one_time else None,
        one_time_prekey_id=int(one_time["id"]) if one_time else None,
    )


class InProcessDirectory:
    """Registry-in-a-pocket: same consumption semantics, no sockets."""

    def __init__(self, core: DirectoryCore | None = None) -> None:
        self.core = core or DirectoryCore()

    def publish(self, user_id: str, store: Store,
                one_time_count: int = DEFAULT_PREKEY_COUNT) -> bool:
        minted = store.mint_one_time_prekeys(one_time_count)
        return self.core.register(
            user_id,
            identity_pub=store.identity.public,
            signed_prekey_pub=store.signed_prekey.public,
            prekey_signature=store.prekey_signature(),
            registration_id=store.registration_id,
            one_time_prekeys=[(prekey_id, pair.public) for prekey_id, pair in minted],
        )

    def fetch_bundle(self, user_id: str) -> PreKeyBundle:
        return self.core.fetch_bundle(user_id)


class HttpDirectory:
    """Client for a directory reached over HTTP.

    Any transport-level failure surfaces as DirectoryUnavailable so the
    interceptor can fail closed without caring why the network broke.
    """

    def __init__(self, base_url: str = "", client: httpx.Client | None = None,
                 timeout: float = 5.0) -> None:
        self._client = client or httpx.Client(base_url=base_url, timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def publish(self, user_id: str, store: Store,
                one_time_count: int = DEFAULT_PREKEY_COUNT) -> bool:
        payload = registration_payload(store, one_time_count)
        try:
            response = self._client.post(f"/v1/keys/{user_id}", json=payload)
        except httpx.HTTPError as exc:
            raise DirectoryUnavailable(f"directory unreachable: {exc}")
        if response.status_code == 400:
            raise RegistrationRejected(response.json().get("detail", "rejected"))
        if response.status_code != 200:
            raise DirectoryUnavailable(f"directory answered {response.status_code}")
        return bool(response.json().get("key_changed", False))

    def fetch_bundle(self, user_id: str) -> PreKeyBundle:
        try:
            response = self._client.get(f"/v1/keys/{user_id}")
        except httpx.HTTPError as exc:
            raise DirectoryUnavailable(f"directory unreachable: {exc}")
        if response.status_code == 404:
            raise UserNotFound(f"no user {user_id!r} in directory")
        if response.status_code != 200:
            raise DirectoryUnavailable(f"directory answered {response.status_code}")
        return bundle_from_json(response.json())
