"""Persistent local state: identity, contacts, sessions, and plaintext cache.

Everything lives under one owner-only directory:

    index.json           format number, registration id, contact records
    identity.key         32-byte signing seed
    cache.key            32-byte key sealing the plaintext cache
    prekeys.json         signed prekey + unconsumed one-time prekeys
    sessions/<id>.bin    serialized per-contact session state
    cache/<hash>.bin     nonce + AEAD-sealed plaintext, keyed by token hash

The cache exists because message keys are erased after first decryption:
re-reading an old token works only through this sealed local mapping.
Plaintext is never written unsealed; the cache key never leaves the
directory.  Cache growth is unbounded by design — the cost of restoring
readability is proportional to the text kept readable.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, MutableMapping

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import (
    CacheCorrupt,
    ContactNotFound,
    InvalidSeed,
    KeyChanged,
    SessionNotFound,
    StoreCorrupt,
    StoreUnavailable,
)
from .ratchet import (
    DHKeyPair,
    IdentityKeyPair,
    RandomSource,
    SessionState,
    generate_identity,
)

FORMAT_VERSION = 1
MAX_CONTACT_ID_BYTES = 128

_DIR_MODE = 0o700
_FILE_MODE = 0o600
_NONCE_LEN = 12


def token_hash(token_text: str) -> bytes:
    """Cache key for a token: SHA-256 over the full text, delimiters included."""
    return hashlib.sha256(token_text.encode("utf-8")).digest()


def _valid_contact_id(contact_id: str) -> bool:
    if not contact_id or len(contact_id.encode("utf-8")) > MAX_CONTACT_ID_BYTES:
        return False
    return not any(ord(ch) < 0x20 or ord(ch) == 0x7F for ch in contact_id)


def _contact_filename(contact_id: str) -> str:
    """Filesystem-safe per-contact name (hash, so any UTF-8 id works)."""
    return hashlib.sha256(contact_id.encode("utf-8")).hexdigest()[:32]


@dataclass
class ContactRecord:
    """One known correspondent and their trust-on-first-use state."""

    contact_id: str
    identity_pub: bytes
    verified: bool = False

    def to_dict(self) -> dict:
        return {
            "contact_id": self.contact_id,
            "identity_pub": self.identity_pub.hex(),
            "verified": self.verified,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContactRecord":
        return cls(
            contact_id=data["contact_id"],
            identity_pub=bytes.fromhex(data["identity_pub"]),
            verified=bool(data["verified"]),
        )


class _PrekeyPool(MutableMapping):
    """Mapping view over the store's one-time prekeys; pops persist deletion."""

    def __init__(self, store: "Store") -> None:
        self._store = store

    def __getitem__(self, prekey_id: int) -> DHKeyPair:
        return self._store._one_time_prekeys[prekey_id]

    def __setitem__(self, prekey_id: int, pair: DHKeyPair) -> None:
        self._store._one_time_prekeys[prekey_id] = pair
        self._store._save_prekeys()

    def __delitem__(self, prekey_id: int) -> None:
        del self._store._one_time_prekeys[prekey_id]
        self._store._save_prekeys()

    def __iter__(self) -> Iterator[int]:
        return iter(self._store._one_time_prekeys)

    def __len__(self) -> int:
        return len(self._store._one_time_prekeys)


class Store:
    """Owner-only directory holding all durable state for one user.

    Access is serialized behind an advisory file lock taken for the
    lifetime of the object, so a daemon and stray CLI invocations cannot
    interleave writes.
    """

    def __init__(self, path: Path, rng: RandomSource = os.urandom) -> None:
        self.path = Path(path)
        self.rng = rng
        self._identity: IdentityKeyPair | None = None
        self._cache_key: bytes | None = None
        self._contacts: dict[str, ContactRecord] = {}
        self._registration_id: int = 0
        self._signed_prekey: DHKeyPair | None = None
        self._signed_prekey_id: int = 0
        self._one_time_prekeys: dict[int, DHKeyPair] = {}
        self._next_prekey_id: int = 1
        self._lock_file = None

    # -- lifecycle ----------------------------------------------------------

    def close(self) -> None:
        if self._lock_file is not None:
            fcntl.flock(self._lock_file, fcntl.LOCK_UN)
            self._lock_file.close()
            self._lock_file = None

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _acquire_lock(self) -> None:
        lock_path = self.path / ".lock"
        self._lock_file = open(lock_path, "a+")
        try:
            fcntl.flock(self._lock_file, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError as exc:
            self._lock_file.close()
            self._lock_file = None
            raise StoreUnavailable(f"store at {self.path} is locked by another process") from exc

    # -- persistence helpers --------------------------------------------------

    def _write_private(self, relative: str, data: bytes) -> None:
        target = self.path / relative
        tmp = target.with_suffix(target.suffix + ".tmp")
        fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, _FILE_MODE)
        try:
            os.write(fd, data)
        finally:
            os.close(fd)
        os.replace(tmp, target)

    def _read(self, relative: str) -> bytes:
        target = self.path / relative
        try:
            return target.read_bytes()
        except FileNotFoundError as exc:
            raise StoreCorrupt(str(target), "file missing") from exc
        except OSError as exc:
            raise StoreUnavailable(f"cannot read {target}: {exc}") from exc

    def _save_index(self) -> None:
        index = {
            "format": FORMAT_VERSION,
            "registration_id": self._registration_id,
            "identity_pub": self._identity.public.hex(),
            "contacts": {cid: rec.to_dict() for cid, rec in self._contacts.items()},
        }
        self._write_private("index.json", json.dumps(index, indent=2).encode())

    def _save_prekeys(self) -> None:
        data = {
            "signed": {
                "id": self._signed_prekey_id,
                **self._signed_prekey.to_dict(),
            },
            "one_time": {str(pid): pair.to_dict() for pid, pair in self._one_time_prekeys.items()},
            "next_id": self._next_prekey_id,
        }
        self._write_private("prekeys.json", json.dumps(data, indent=2).encode())

    # -- identity & registration ----------------------------------------------

    @property
    def identity(self) -> IdentityKeyPair:
        return self._identity

    @property
    def registration_id(self) -> int:
        return self._registration_id

    # -- contacts ---------------------------------------------------------------

    def add_contact(self, contact_id: str, identity_pub: bytes, verified: bool = False) -> ContactRecord:
        """Record a correspondent's identity key, trust-on-first-use.

        Errors:
            ValueError: malformed contact id.
            KeyChanged: the contact exists with a *different* identity key.
                The stored key is kept; callers decide how loudly to warn.
        """
        if not _valid_contact_id(contact_id):
            raise ValueError(f"invalid contact id {contact_id!r}")
        existing = self._contacts.get(contact_id)
        if existing is not None:
            if existing.identity_pub != identity_pub:
                raise KeyChanged(
                    f"identity key for {contact_id!r} changed; keeping the pinned key"
                )
            if verified and not existing.verified:
                existing.verified = True
                self._save_index()
            return existing
        record = ContactRecord(contact_id=contact_id, identity_pub=identity_pub, verified=verified)
        self._contacts[contact_id] = record
        self._save_index()
        return record

    def get_contact(self, contact_id: str) -> ContactRecord:
        try:
            return self._contacts[contact_id]
        except KeyError:
            raise ContactNotFound(f"no contact {contact_id!r} in store") from None

    def list_contacts(self) -> list[ContactRecord]:
        return sorted(self._contacts.values(), key=lambda r: r.contact_id)

    def find_contact_by_key(self, identity_pub: bytes) -> ContactRecord | None:
        for record in self._contacts.values():
            if record.identity_pub == identity_pub:
                return record
        return None

    def verify_contact(self, contact_id: str) -> ContactRecord:
        """Mark a contact's pinned key as humanly verified."""
        record = self.get_contact(contact_id)
        record.verified = True
        self._save_index()
        return record

    # -- sessions -----------------------------------------------------------------

    def session_save(self, contact_id: str, session: SessionState) -> None:
        self.get_contact(contact_id)  # ContactNotFound if unknown
        self._write_private(f"sessions/{_contact_filename(contact_id)}.bin", session.to_bytes())

    def session_load(self, contact_id: str) -> SessionState:
        """Errors: SessionNotFound if absent; StoreCorrupt naming a bad file."""
        path = self.path / "sessions" / f"{_contact_filename(contact_id)}.bin"
        if not path.exists():
            raise SessionNotFound(f"no stored session for {contact_id!r}")
        try:
            return SessionState.from_bytes(path.read_bytes())
        except ValueError as exc:
            raise StoreCorrupt(str(path), str(exc)) from exc

    def session_exists(self, contact_id: str) -> bool:
        return (self.path / "sessions" / f"{_contact_filename(contact_id)}.bin").exists()

    def session_delete(self, contact_id: str) -> None:
        path = self.path / "sessions" / f"{_contact_filename(contact_id)}.bin"
        path.unlink(missing_ok=True)

    # -- plaintext cache -----------------------------------------------------------

    def _cache_path(self, digest: bytes) -> Path:
        return self.path / "cache" / f"{digest.hex()}.bin"

    def cache_put(self, digest: bytes, plaintext: bytes) -> None:
        """Seal plaintext under the local cache key, keyed by token hash."""
        nonce = self.rng(_NONCE_LEN)
        sealed = AESGCM(self._cache_key).encrypt(nonce, plaintext, digest)
        stamp = int(time.time()).to_bytes(8, "big")
        self._write_private(f"cache/{digest.hex()}.bin", stamp + nonce + sealed)

    def cache_get(self, digest: bytes) -> bytes | None:
        """Unseal a cached plaintext; absent hashes return None.

        Errors:
            CacheCorrupt: the sealed file fails authentication — a damaged
                or substituted cache entry is never returned as plaintext.
        """
        path = self._cache_path(digest)
        if not path.exists():
            return None
        blob = path.read_bytes()
        if len(blob) < 8 + _NONCE_LEN + 16:
            raise CacheCorrupt(f"cache entry {path} is truncated")
        nonce, sealed = blob[8 : 8 + _NONCE_LEN], blob[8 + _NONCE_LEN :]
        try:
            return AESGCM(self._cache_key).decrypt(nonce, sealed, digest)
        except InvalidTag as exc:
            raise CacheCorrupt(f"cache entry {path} fails authentication") from exc

    # -- prekeys ---------------------------------------------------------------------

    @property
    def signed_prekey(self) -> DHKeyPair:
        return self._signed_prekey

    @property
    def signed_prekey_id(self) -> int:
        return self._signed_prekey_id

    def one_time_prekeys(self) -> _PrekeyPool:
        """Live mapping of unconsumed one-time prekeys; pops persist."""
        return _PrekeyPool(self)

    def mint_one_time_prekeys(self, count: int) -> list[tuple[int, DHKeyPair]]:
        """Generate fresh one-time prekeys for publication."""
        minted = []
        for _ in range(count):
            pair = DHKeyPair.generate(self.rng)
            prekey_id = self._next_prekey_id
            self._next_prekey_id += 1
            self._one_time_prekeys[prekey_id] = pair
            minted.append((prekey_id, pair))
        self._save_prekeys()
        return minted

    def prekey_signature(self) -> bytes:
        return self._identity.sign(self._signed_prekey.public)


# ── Opening and creating stores ─────────────────────────────────────────────


def store_init(path: str | Path, seed: bytes | None = None, rng: RandomSource = os.urandom) -> Store:
    """Create a new store directory with a fresh (or seeded) identity.

    Errors:
        StoreUnavailable: path not writable, already initialized, or locked.
    """
    root = Path(path)
    if (root / "index.json").exists():
        raise StoreUnavailable(f"{root} already holds an initialized store")
    try:
        root.mkdir(mode=_DIR_MODE, parents=True, exist_ok=True)
        os.chmod(root, _DIR_MODE)
        (root / "sessions").mkdir(mode=_DIR_MODE, exist_ok=True)
        (root / "cache").mkdir(mode=_DIR_MODE, exist_ok=True)
    except OSError as exc:
        raise StoreUnavailable(f"cannot create store at {root}: {exc}") from exc

    store = Store(root, rng=rng)
    store._acquire_lock()
    store._identity = generate_identity(seed, rng=rng)
    store._cache_key = rng(32)
    store._registration_id = int.from_bytes(rng(2), "big") or 1
    store._signed_prekey = DHKeyPair.generate(rng)
    store._signed_prekey_id = 1
    store._next_prekey_id = 2
    store._write_private("identity.key", store._identity.private)
    store._write_private("cache.key", store._cache_key)
    store._save_prekeys()
    store._save_index()
    return store


def store_open(path: str | Path, rng: RandomSource = os.urandom) -> Store:
    """Open an existing store.

    Errors:
        StoreUnavailable: directory or index missing, or already locked.
        StoreCorrupt: unparseable index, key, or prekey file (named).
    """
    root = Path(path)
    index_path = root / "index.json"
    if not index_path.exists():
        raise StoreUnavailable(f"no store at {root}")
    store = Store(root, rng=rng)
    store._acquire_lock()

    def load_json(relative: str) -> dict:
        try:
            return json.loads(store._read(relative))
        except json.JSONDecodeError as exc:
            raise StoreCorrupt(str(root / relative), f"invalid JSON: {exc}") from exc

    try:
        index = load_json("index.json")
        try:
            if index.get("format") != FORMAT_VERSION:
                raise StoreCorrupt(
                    str(index_path), f"unsupported format {index.get('format')!r}"
                )
            seed = store._read("identity.key")
            try:
                store._identity = generate_identity(seed)
            except InvalidSeed as exc:
                raise StoreCorrupt(str(root / "identity.key"), str(exc)) from exc
            if store._identity.public.hex() != index["identity_pub"]:
                raise StoreCorrupt(str(index_path), "identity key does not match index")
            store._cache_key = store._read("cache.key")
            if len(store._cache_key) != 32:
                raise StoreCorrupt(str(root / "cache.key"), "cache key must be 32 bytes")
            store._registration_id = int(index["registration_id"])
            store._contacts = {
                cid: ContactRecord.from_dict(rec) for cid, rec in index["contacts"].items()
            }
        except (KeyError, ValueError, TypeError) as exc:
            raise StoreCorrupt(str(index_path), str(exc)) from exc
        prekeys = load_json("prekeys.json")
        try:
            store._signed_prekey = DHKeyPair.from_dict(prekeys["signed"])
            store._signed_prekey_id = int(prekeys["signed"]["id"])
            store._one_time_prekeys = {
                int(pid): DHKeyPair.from_dict(pair)
                for pid, pair in prekeys["one_time"].items()
            }
            store._next_prekey_id = int(prekeys["next_id"])
        except (KeyError, ValueError, TypeError) as exc:
            raise StoreCorrupt(str(root / "prekeys.json"), str(exc)) from exc
    except Exception:
        store.close()
        raise
    return store
