"""The registry behind the directory service.

One record per user id; each one-time prekey is handed out at most once.
Consumption is a per-record critical section so concurrent fetches can
never serve the same prekey twice.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from ..errors import RegistrationRejected, UserNotFound
from ..ratchet import KEY_LEN, PreKeyBundle, verify_identity_signature


@dataclass
class DirectoryRecord:
    user_id: str
    identity_pub: bytes
    signed_prekey_pub: bytes
    prekey_signature: bytes
    registration_id: int
    one_time_prekeys: list = field(default_factory=list)  # [(id, pub), ...] FIFO
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class DirectoryCore:
    """Thread-safe in-memory registry; the HTTP layer is a thin shell."""

    def __init__(self) -> None:
        self._records: dict[str, DirectoryRecord] = {}
        self._lock = threading.Lock()

    def register(
        self,
        user_id: str,
        identity_pub: bytes,
        signed_prekey_pub: bytes,
        prekey_signature: bytes,
        registration_id: int = 0,
        one_time_prekeys: list | None = None,
    ) -> bool:
        """Store or replace a user's bundle.

        Returns True when the user existed before under a *different*
        identity key, so clients relying on trust-on-first-use can warn.

        Errors:
            RegistrationRejected: prekey signature does not verify.
        """
        if len(identity_pub) != KEY_LEN or len(signed_prekey_pub) != KEY_LEN:
            raise RegistrationRejected("bundle keys have the wrong length")
        if not verify_identity_signature(identity_pub, signed_prekey_pub, prekey_signature):
            raise RegistrationRejected("signed prekey does not verify under the identity key")
        record = DirectoryRecord(
            user_id=user_id,
            identity_pub=identity_pub,
            signed_prekey_pub=signed_prekey_pub,
            prekey_signature=prekey_signature,
            registration_id=registration_id,
            one_time_prekeys=list(one_time_prekeys or ()),
        )
        with self._lock:
            previous = self._records.get(user_id)
            key_changed = previous is not None and previous.identity_pub != identity_pub
            self._records[user_id] = record
        return key_changed

    def fetch_bundle(self, user_id: str) -> PreKeyBundle:
        """Serve the user's bundle, consuming one one-time prekey if any.

        Errors:
            UserNotFound: no record under that id.
        """
        with self._lock:
            record = self._records.get(user_id)
        if record is None:
            raise UserNotFound(f"no user {user_id!r} in directory")
        with record.lock:
            if record.one_time_prekeys:
                one_time_id, one_time_pub = record.one_time_prekeys.pop(0)
            else:
                one_time_id = one_time_pub = None
        return PreKeyBundle(
            identity_pub=record.identity_pub,
            signed_prekey_pub=record.signed_prekey_pub,
            prekey_signature=record.prekey_signature,
            registration_id=record.registration_id,
            one_time_prekey_pub=one_time_pub,
            one_time_prekey_id=one_time_id,
        )

    def remaining_prekeys(self, user_id: str) -> int:
        with self._lock:
            record = self._records.get(user_id)
        if record is None:
            raise UserNotFound(f"no user {user_id!r} in directory")
        with record.lock:
            return len(record.one_time_prekeys)

    def user_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._records)
