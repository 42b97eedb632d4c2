"""Session lookup and lifecycle: ties the ratchet to the store and directory.

One manager owns all live sessions for a user.  Sending to a new contact
fetches their prekey bundle (consuming a one-time prekey server-side) and
pins their identity key trust-on-first-use; receiving a first message
accepts the piggybacked handshake against our own prekeys.
"""

from __future__ import annotations

import os

from .errors import (
    ContactNotFound,
    DirectoryUnavailable,
    SessionNotFound,
    UserNotFound,
)
from .keystore import Store
from .ratchet import (
    HandshakeHeader,
    RandomSource,
    SessionState,
    session_init_receiver,
    session_init_sender,
)


class SessionManager:
    """Per-user registry of pairwise sessions, persisted through the store."""

    def __init__(self, store: Store, directory=None, rng: RandomSource = os.urandom) -> None:
        self.store = store
        self.directory = directory
        self.rng = rng
        self._live: dict[str, SessionState] = {}

    # -- lookup ---------------------------------------------------------------

    def get(self, contact_id: str) -> SessionState | None:
        if contact_id in self._live:
            return self._live[contact_id]
        try:
            session = self.store.session_load(contact_id)
        except (SessionNotFound, ContactNotFound):
            return None
        session.rng = self.rng
        self._live[contact_id] = session
        return session

    def all_sessions(self) -> list[tuple[str, SessionState]]:
        """Every known session, live ones first — used for sender search."""
        found = dict(self._live)
        for record in self.store.list_contacts():
            if record.contact_id not in found and self.store.session_exists(record.contact_id):
                session = self.get(record.contact_id)
                if session is not None:
                    found[record.contact_id] = session
        return list(found.items())

    # -- sending --------------------------------------------------------------

    def session_for_send(self, contact_id: str) -> SessionState:
        """Return a sendable session, opening one via the directory if needed.

        Errors:
            ContactNotFound: unknown contact and the directory has no such user.
            DirectoryUnavailable: a bundle was needed but could not be fetched.
            KeyChanged: the directory served a different identity key than
                the one pinned for this contact.
        """
        session = self.get(contact_id)
        if session is not None:
            return session
        if self.directory is None:
            raise ContactNotFound(
                f"no session with {contact_id!r} and no directory configured"
            )
        try:
            bundle = self.directory.fetch_bundle(contact_id)
        except UserNotFound:
            raise ContactNotFound(f"directory has no user {contact_id!r}") from None
        self.store.add_contact(contact_id, bundle.identity_pub)
        session = session_init_sender(self.store.identity, bundle, rng=self.rng)
        self._live[contact_id] = session
        self.save(contact_id)
        return session

    # -- receiving ------------------------------------------------------------

    def accept_handshake(
        self, handshake: HandshakeHeader, sender_hint: str | None = None
    ) -> tuple[str, SessionState]:
        """Open (or find) the session a first-message handshake belongs to.

        The sender is identified by the handshake's identity key when we
        already know it; otherwise ``sender_hint`` names (and pins) the new
        contact, and failing that a placeholder id is derived from the key.
        """
        record = self.store.find_contact_by_key(handshake.identity_pub)
        if record is not None:
            contact_id = record.contact_id
            existing = self.get(contact_id)
            if existing is not None:
                return contact_id, existing
        elif sender_hint is not None:
            contact_id = sender_hint
            self.store.add_contact(contact_id, handshake.identity_pub)
        else:
            contact_id = f"unknown-{handshake.identity_pub[:6].hex()}"
            self.store.add_contact(contact_id, handshake.identity_pub)
        session = session_init_receiver(
            self.store.identity,
            self.store.signed_prekey,
            handshake,
            self.store.one_time_prekeys(),
            rng=self.rng,
        )
        self._live[contact_id] = session
        self.save(contact_id)
        return contact_id, session

    # -- persistence ------------------------------------------------------------

    def save(self, contact_id: str) -> None:
        session = self._live.get(contact_id)
        if session is not None:
            self.store.session_save(contact_id, session)

    def replace(self, contact_id: str, session: SessionState) -> None:
        self._live[contact_id] = session
        self.save(contact_id)
