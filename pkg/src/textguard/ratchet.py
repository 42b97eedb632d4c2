"""Forward-secret pairwise sessions: prekey handshake plus a double key ratchet.

Each contact pair shares a session that advances two interleaved ratchets:
a Diffie-Hellman ratchet that turns whenever a fresh ratchet public key is
seen, and per-direction symmetric chains stepped once per message.  Message
keys are single-use; after the caller confirms a successful decryption the
keys are erased and the same counter can never be opened again.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, MutableMapping

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ed25519, x25519
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import (
    BundleRejected,
    InvalidSeed,
    KeyErased,
    PrekeyMissing,
    TooManySkipped,
)
from .wire import read_exact, read_uvarint, write_uvarint

KEY_LEN = 32
SIGNATURE_LEN = 64
MAX_SKIPPED_KEYS = 1024
MAX_RETIRED_CHAINS = 64

_HANDSHAKE_INFO = b"textguard handshake v1"
_ROOT_INFO = b"textguard root chain v1"
_MESSAGE_INFO = b"textguard message keys v1"
_ZERO_SALT = b"\x00" * 32

# Symmetric chain stepping constants: 0x01 derives the message-key seed,
# 0x02 derives the successor chain key.
_CHAIN_MESSAGE = b"\x01"
_CHAIN_NEXT = b"\x02"

RandomSource = Callable[[int], bytes]

_CURVE_P = 2**255 - 19

_SESSION_MAGIC = b"TGS1"


# ── Randomness ──────────────────────────────────────────────────────────────


class DeterministicRng:
    """Seeded byte stream for reproducible key generation in simulations.

    Produces bytes by hashing (seed, block counter) with SHAKE-256, so two
    instances created from the same seed emit identical streams.  The
    (seed, counter) pair round-trips through ``state``/``from_state`` which
    lets a persisted session keep drawing from where it left off.
    """

    def __init__(self, seed: bytes | int, counter: int = 0) -> None:
        if isinstance(seed, int):
            seed = seed.to_bytes(32, "big", signed=False)
        if len(seed) != 32:
            seed = hashlib.sha256(seed).digest()
        self._seed = seed
        self._counter = counter

    def __call__(self, n: int) -> bytes:
        block = hashlib.shake_256(self._seed + struct.pack(">Q", self._counter)).digest(n)
        self._counter += 1
        return block

    @property
    def state(self) -> tuple[bytes, int]:
        return self._seed, self._counter

    @classmethod
    def from_state(cls, seed: bytes, counter: int) -> "DeterministicRng":
        return cls(seed, counter)


# ── Curve arithmetic glue ───────────────────────────────────────────────────


def _ed_public_to_x(ed_pub: bytes) -> bytes:
    """Map an Ed25519 public point to its X25519 (Montgomery u) equivalent.

    Uses the birational map u = (1 + y) / (1 - y) mod p, dropping the sign
    bit of x.  Lets one long-term signing identity also run key agreement.
    """
    y = int.from_bytes(ed_pub, "little") & ((1 << 255) - 1)
    u = (1 + y) * pow(1 - y, _CURVE_P - 2, _CURVE_P) % _CURVE_P
    return u.to_bytes(32, "little")


def _ed_seed_to_x_private(seed: bytes) -> bytes:
    """Derive the X25519 private scalar matching an Ed25519 seed.

    Ed25519 expands the seed with SHA-512 and uses the first half as its
    scalar; X25519 clamps the same bits during exchange, so feeding that
    half to X25519 yields the counterpart of ``_ed_public_to_x``.
    """
    return hashlib.sha512(seed).digest()[:32]


def _x25519_exchange(private_raw: bytes, peer_public_raw: bytes) -> bytes:
    priv = x25519.X25519PrivateKey.from_private_bytes(private_raw)
    return priv.exchange(x25519.X25519PublicKey.from_public_bytes(peer_public_raw))


def _x25519_public(private_raw: bytes) -> bytes:
    priv = x25519.X25519PrivateKey.from_private_bytes(private_raw)
    return priv.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )


# ── Key pairs ───────────────────────────────────────────────────────────────


@dataclass
class IdentityKeyPair:
    """Long-term Ed25519 identity: signs prekeys, and doubles as a DH key."""

    private: bytes  # 32-byte Ed25519 seed
    public: bytes  # 32-byte Ed25519 public point

    def sign(self, data: bytes) -> bytes:
        key = ed25519.Ed25519PrivateKey.from_private_bytes(self.private)
        return key.sign(data)

    def dh_exchange(self, peer_x25519_pub: bytes) -> bytes:
        return _x25519_exchange(_ed_seed_to_x_private(self.private), peer_x25519_pub)

    @property
    def dh_public(self) -> bytes:
        return _ed_public_to_x(self.public)

    def to_dict(self) -> dict:
        return {"private": self.private.hex(), "public": self.public.hex()}

    @classmethod
    def from_dict(cls, data: dict) -> "IdentityKeyPair":
        return cls(bytes.fromhex(data["private"]), bytes.fromhex(data["public"]))


def verify_identity_signature(identity_pub: bytes, data: bytes, signature: bytes) -> bool:
    try:
        ed25519.Ed25519PublicKey.from_public_bytes(identity_pub).verify(signature, data)
        return True
    except Exception:
        return False


def generate_identity(seed: bytes | None = None, rng: RandomSource = os.urandom) -> IdentityKeyPair:
    """Create an identity key pair, optionally from a fixed 32-byte seed."""
    if seed is None:
        seed = rng(KEY_LEN)
    if len(seed) != KEY_LEN:
        raise InvalidSeed(f"identity seed must be {KEY_LEN} bytes, got {len(seed)}")
    key = ed25519.Ed25519PrivateKey.from_private_bytes(seed)
    public = key.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return IdentityKeyPair(private=seed, public=public)


@dataclass
class DHKeyPair:
    """Ephemeral X25519 pair used for prekeys and ratchet steps."""

    private: bytes
    public: bytes

    @classmethod
    def generate(cls, rng: RandomSource = os.urandom) -> "DHKeyPair":
        private = rng(KEY_LEN)
        return cls(private=private, public=_x25519_public(private))

    def exchange(self, peer_public: bytes) -> bytes:
        return _x25519_exchange(self.private, peer_public)

    def to_dict(self) -> dict:
        return {"private": self.private.hex(), "public": self.public.hex()}

    @classmethod
    def from_dict(cls, data: dict) -> "DHKeyPair":
        return cls(bytes.fromhex(data["private"]), bytes.fromhex(data["public"]))


# ── Published key material ──────────────────────────────────────────────────


@dataclass
class PreKeyBundle:
    """A contact's published keys, fetched from the directory before sending.

    ``one_time_prekey_pub`` is present only while the directory still has
    unconsumed one-time prekeys for the user; each fetch burns one.
    """

    identity_pub: bytes
    signed_prekey_pub: bytes
    prekey_signature: bytes
    registration_id: int
    one_time_prekey_pub: bytes | None = None
    one_time_prekey_id: int | None = None

    def verify(self) -> bool:
        """Check the signed prekey's signature under the identity key."""
        if len(self.identity_pub) != KEY_LEN or len(self.signed_prekey_pub) != KEY_LEN:
            return False
        if len(self.prekey_signature) != SIGNATURE_LEN:
            return False
        return verify_identity_signature(
            self.identity_pub, self.signed_prekey_pub, self.prekey_signature
        )

    def to_dict(self) -> dict:
        data = {
            "identity_pub": self.identity_pub.hex(),
            "signed_prekey_pub": self.signed_prekey_pub.hex(),
            "prekey_signature": self.prekey_signature.hex(),
            "registration_id": self.registration_id,
        }
        if self.one_time_prekey_pub is not None:
            data["one_time_prekey_pub"] = self.one_time_prekey_pub.hex()
            data["one_time_prekey_id"] = self.one_time_prekey_id
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "PreKeyBundle":
        otp = data.get("one_time_prekey_pub")
        return cls(
            identity_pub=bytes.fromhex(data["identity_pub"]),
            signed_prekey_pub=bytes.fromhex(data["signed_prekey_pub"]),
            prekey_signature=bytes.fromhex(data["prekey_signature"]),
            registration_id=int(data["registration_id"]),
            one_time_prekey_pub=bytes.fromhex(otp) if otp else None,
            one_time_prekey_id=(
                int(data["one_time_prekey_id"]) if otp else None
            ),
        )


@dataclass(frozen=True)
class HandshakeHeader:
    """Sender keys piggybacked on early messages so the peer can derive SK."""

    identity_pub: bytes
    ephemeral_pub: bytes
    one_time_prekey_id: int | None = None

    def encode(self) -> bytes:
        out = self.identity_pub + self.ephemeral_pub
        if self.one_time_prekey_id is None:
            return out + b"\x00"
        return out + b"\x01" + write_uvarint(self.one_time_prekey_id)

    @classmethod
    def decode(cls, data: bytes) -> "HandshakeHeader":
        identity, off = read_exact(data, 0, KEY_LEN)
        ephemeral, off = read_exact(data, off, KEY_LEN)
        flag, off = read_exact(data, off, 1)
        otp_id = None
        if flag == b"\x01":
            otp_id, off = read_uvarint(data, off)
        elif flag != b"\x00":
            raise ValueError(f"bad one-time prekey flag {flag.hex()}")
        if off != len(data):
            raise ValueError("trailing bytes after handshake fields")
        return cls(identity_pub=identity, ephemeral_pub=ephemeral, one_time_prekey_id=otp_id)


# ── Key derivation ──────────────────────────────────────────────────────────


def _hkdf(salt: bytes, ikm: bytes, info: bytes, length: int) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=info).derive(ikm)


def kdf_root(root_key: bytes, dh_output: bytes) -> tuple[bytes, bytes]:
    """Run the DH ratchet step: (root_key, dh_out) -> (root_key', chain_key)."""
    out = _hkdf(salt=root_key, ikm=dh_output, info=_ROOT_INFO, length=64)
    return out[:32], out[32:]


def _chain_step(chain_key: bytes) -> tuple[bytes, bytes]:
    """Advance a symmetric chain once: returns (message_key_seed, next_chain_key)."""
    seed = hmac_mod.new(chain_key, _CHAIN_MESSAGE, hashlib.sha256).digest()
    next_ck = hmac_mod.new(chain_key, _CHAIN_NEXT, hashlib.sha256).digest()
    return seed, next_ck


@dataclass
class MessageKeys:
    """Single-use keys for one message: AES-128 key, MAC key, and IV."""

    cipher_key: bytearray
    mac_key: bytearray
    iv: bytearray
    counter: int

    def erase(self) -> None:
        """Overwrite the key material in place; the keys are gone for good."""
        for buf in (self.cipher_key, self.mac_key, self.iv):
            for i in range(len(buf)):
                buf[i] = 0
        self.cipher_key = bytearray()
        self.mac_key = bytearray()
        self.iv = bytearray()


def kdf_message_keys(seed: bytes, counter: int) -> MessageKeys:
    out = _hkdf(salt=_ZERO_SALT, ikm=seed, info=_MESSAGE_INFO, length=64)
    return MessageKeys(
        cipher_key=bytearray(out[:16]),
        mac_key=bytearray(out[16:48]),
        iv=bytearray(out[48:64]),
        counter=counter,
    )


# ── Session state ───────────────────────────────────────────────────────────


@dataclass(frozen=True)
class HeaderFields:
    """Ratchet values the wire header must carry for one outgoing message."""

    ratchet_pub: bytes
    counter: int
    previous_counter: int
    handshake: HandshakeHeader | None = None


@dataclass
class SessionState:
    """All mutable state for one pairwise conversation.

    ``skipped`` holds keys derived for not-yet-seen counters (out-of-order
    delivery); ``pending`` holds keys handed to a caller that has not yet
    confirmed decryption.  ``retired_watermarks`` records, per superseded
    remote ratchet key, the first counter whose key was never derived —
    anything below it without a skipped entry has been erased.
    """

    root_key: bytes
    ratchet_keypair: DHKeyPair
    remote_ratchet_pub: bytes | None
    send_chain_key: bytes | None = None
    recv_chain_key: bytes | None = None
    send_counter: int = 0
    recv_counter: int = 0
    previous_send_counter: int = 0
    send_ratchet_stale: bool = False
    handshake: HandshakeHeader | None = None
    skipped: dict = field(default_factory=dict)
    pending: dict = field(default_factory=dict)
    retired_watermarks: dict = field(default_factory=dict)
    rng: RandomSource = os.urandom

    # -- sending ------------------------------------------------------------

    def next_sending_keys(self) -> tuple[HeaderFields, MessageKeys]:
        """Step the send chain and return header fields plus message keys.

        Runs a sending DH ratchet turn first if the peer's ratchet key has
        advanced since our last send (or if we have never sent).
        """
        if self.send_chain_key is None or self.send_ratchet_stale:
            if self.remote_ratchet_pub is None:
                raise KeyErased("no remote ratchet key to send against")
            self.previous_send_counter = self.send_counter
            self.send_counter = 0
            self.ratchet_keypair = DHKeyPair.generate(self.rng)
            self.root_key, self.send_chain_key = kdf_root(
                self.root_key, self.ratchet_keypair.exchange(self.remote_ratchet_pub)
            )
            self.send_ratchet_stale = False
        seed, self.send_chain_key = _chain_step(self.send_chain_key)
        keys = kdf_message_keys(seed, self.send_counter)
        fields = HeaderFields(
            ratchet_pub=self.ratchet_keypair.public,
            counter=self.send_counter,
            previous_counter=self.previous_send_counter,
            handshake=self.handshake,
        )
        self.send_counter += 1
        return fields, keys

    # -- receiving ----------------------------------------------------------

    def keys_for_header(
        self, ratchet_pub: bytes, counter: int, previous_counter: int = 0
    ) -> MessageKeys:
        """Return the message keys for an incoming (ratchet_pub, counter).

        Performs a receiving DH ratchet turn when ``ratchet_pub`` is new:
        keys up to ``previous_counter`` are stashed for the old chain first,
        then the chain is retired.  The returned keys stay live until
        ``confirm_decrypted`` is called for the same header.

        Errors:
            KeyErased: the counter's keys were already used and erased.
            TooManySkipped: honoring the gap would exceed the skip cap.
        """
        entry = (ratchet_pub, counter)
        if entry in self.pending:
            return self.pending[entry]
        if entry in self.skipped:
            keys = self.skipped.pop(entry)
            self.pending[entry] = keys
            return keys
        if ratchet_pub == self.remote_ratchet_pub and self.recv_chain_key is not None:
            if counter < self.recv_counter:
                raise KeyErased(
                    f"keys for counter {counter} were erased after use"
                )
            self._skip_to(counter)
            keys = self._advance_recv(counter)
        elif ratchet_pub in self.retired_watermarks:
            raise KeyErased(
                f"ratchet key {ratchet_pub[:8].hex()} was retired; "
                f"counter {counter} is not recoverable"
            )
        else:
            keys = self._receive_ratchet_turn(ratchet_pub, counter, previous_counter)
        self.pending[entry] = keys
        return keys

    def confirm_decrypted(self, ratchet_pub: bytes, counter: int) -> None:
        """Erase the keys for a header after the caller decrypted with them."""
        entry = (ratchet_pub, counter)
        if entry not in self.pending:
            raise KeyErased(f"no live keys for counter {counter}")
        keys = self.pending.pop(entry)
        keys.erase()
        self.handshake = None  # peer demonstrably has the session now

    def clone(self) -> "SessionState":
        """Structural copy; lets callers trial-decrypt without committing."""
        return SessionState(
            root_key=self.root_key,
            ratchet_keypair=DHKeyPair(
                self.ratchet_keypair.private, self.ratchet_keypair.public
            ),
            remote_ratchet_pub=self.remote_ratchet_pub,
            send_chain_key=self.send_chain_key,
            recv_chain_key=self.recv_chain_key,
            send_counter=self.send_counter,
            recv_counter=self.recv_counter,
            previous_send_counter=self.previous_send_counter,
            send_ratchet_stale=self.send_ratchet_stale,
            handshake=self.handshake,
            skipped={
                k: MessageKeys(
                    bytearray(v.cipher_key), bytearray(v.mac_key), bytearray(v.iv), v.counter
                )
                for k, v in self.skipped.items()
            },
            pending={
                k: MessageKeys(
                    bytearray(v.cipher_key), bytearray(v.mac_key), bytearray(v.iv), v.counter
                )
                for k, v in self.pending.items()
            },
            retired_watermarks=dict(self.retired_watermarks),
            rng=self.rng,
        )

    def adopt(self, other: "SessionState") -> None:
        """Replace our state with ``other``'s (commit a trial clone)."""
        for name in (
            "root_key",
            "ratchet_keypair",
            "remote_ratchet_pub",
            "send_chain_key",
            "recv_chain_key",
            "send_counter",
            "recv_counter",
            "previous_send_counter",
            "send_ratchet_stale",
            "handshake",
            "skipped",
            "pending",
            "retired_watermarks",
        ):
            setattr(self, name, getattr(other, name))

    def _skip_to(self, counter: int) -> None:
        """Derive and stash keys for every gap counter below ``counter``."""
        if self.recv_chain_key is None:
            return
        gap = counter - self.recv_counter
        if gap + len(self.skipped) > MAX_SKIPPED_KEYS:
            raise TooManySkipped(
                f"would store {gap} skipped keys, cap is {MAX_SKIPPED_KEYS}"
            )
        while self.recv_counter < counter:
            seed, self.recv_chain_key = _chain_step(self.recv_chain_key)
            keys = kdf_message_keys(seed, self.recv_counter)
            self.skipped[(self.remote_ratchet_pub, self.recv_counter)] = keys
            self.recv_counter += 1

    def _advance_recv(self, counter: int) -> MessageKeys:
        seed, self.recv_chain_key = _chain_step(self.recv_chain_key)
        keys = kdf_message_keys(seed, counter)
        self.recv_counter = counter + 1
        return keys

    def _receive_ratchet_turn(
        self, ratchet_pub: bytes, counter: int, previous_counter: int
    ) -> MessageKeys:
        """Adopt a new remote ratchet key and start a fresh receive chain."""
        if self.recv_chain_key is not None:
            # Keys for old-chain messages still in flight stay recoverable.
            self._skip_to(previous_counter)
            self.retired_watermarks[self.remote_ratchet_pub] = self.recv_counter
            while len(self.retired_watermarks) > MAX_RETIRED_CHAINS:
                self.retired_watermarks.pop(next(iter(self.retired_watermarks)))
        self.remote_ratchet_pub = ratchet_pub
        self.root_key, self.recv_chain_key = kdf_root(
            self.root_key, self.ratchet_keypair.exchange(ratchet_pub)
        )
        self.recv_counter = 0
        self.send_ratchet_stale = True  # next send must turn the DH ratchet
        self._skip_to(counter)
        return self._advance_recv(counter)

    # -- serialization --------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Compact binary encoding for at-rest persistence (no pending keys)."""
        out = bytearray(_SESSION_MAGIC)
        flags = 0
        if self.send_chain_key is not None:
            flags |= 0x01
        if self.recv_chain_key is not None:
            flags |= 0x02
        if self.remote_ratchet_pub is not None:
            flags |= 0x04
        if self.send_ratchet_stale:
            flags |= 0x08
        if self.handshake is not None:
            flags |= 0x10
        if isinstance(self.rng, DeterministicRng):
            flags |= 0x20
        out.append(flags)
        out += self.root_key
        out += self.ratchet_keypair.private
        out += self.ratchet_keypair.public
        if self.send_chain_key is not None:
            out += self.send_chain_key
        if self.recv_chain_key is not None:
            out += self.recv_chain_key
        if self.remote_ratchet_pub is not None:
            out += self.remote_ratchet_pub
        out += write_uvarint(self.send_counter)
        out += write_uvarint(self.recv_counter)
        out += write_uvarint(self.previous_send_counter)
        if self.handshake is not None:
            blob = self.handshake.encode()
            out += write_uvarint(len(blob))
            out += blob
        out += write_uvarint(len(self.skipped))
        for (pub, counter), keys in self.skipped.items():
            out += pub
            out += write_uvarint(counter)
            out += bytes(keys.cipher_key)
            out += bytes(keys.mac_key)
            out += bytes(keys.iv)
        out += write_uvarint(len(self.retired_watermarks))
        for pub, watermark in self.retired_watermarks.items():
            out += pub
            out += write_uvarint(watermark)
        if isinstance(self.rng, DeterministicRng):
            seed, counter = self.rng.state
            out += seed
            out += write_uvarint(counter)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SessionState":
        magic, off = read_exact(data, 0, len(_SESSION_MAGIC))
        if magic != _SESSION_MAGIC:
            raise ValueError(f"bad session magic {magic.hex()}")
        flags_b, off = read_exact(data, off, 1)
        flags = flags_b[0]
        root_key, off = read_exact(data, off, KEY_LEN)
        priv, off = read_exact(data, off, KEY_LEN)
        pub, off = read_exact(data, off, KEY_LEN)
        send_ck = recv_ck = remote = None
        if flags & 0x01:
            send_ck, off = read_exact(data, off, KEY_LEN)
        if flags & 0x02:
            recv_ck, off = read_exact(data, off, KEY_LEN)
        if flags & 0x04:
            remote, off = read_exact(data, off, KEY_LEN)
        send_counter, off = read_uvarint(data, off)
        recv_counter, off = read_uvarint(data, off)
        previous_send_counter, off = read_uvarint(data, off)
        handshake = None
        if flags & 0x10:
            blob_len, off = read_uvarint(data, off)
            blob, off = read_exact(data, off, blob_len)
            handshake = HandshakeHeader.decode(blob)
        skipped = {}
        count, off = read_uvarint(data, off)
        for _ in range(count):
            spub, off = read_exact(data, off, KEY_LEN)
            counter, off = read_uvarint(data, off)
            ck, off = read_exact(data, off, 16)
            mk, off = read_exact(data, off, 32)
            iv, off = read_exact(data, off, 16)
            skipped[(spub, counter)] = MessageKeys(
                bytearray(ck), bytearray(mk), bytearray(iv), counter
            )
        retired = {}
        count, off = read_uvarint(data, off)
        for _ in range(count):
            rpub, off = read_exact(data, off, KEY_LEN)
            watermark, off = read_uvarint(data, off)
            retired[rpub] = watermark
        rng: RandomSource = os.urandom
        if flags & 0x20:
            seed, off = read_exact(data, off, KEY_LEN)
            counter, off = read_uvarint(data, off)
            rng = DeterministicRng.from_state(seed, counter)
        if off != len(data):
            raise ValueError("trailing bytes after session fields")
        return cls(
            root_key=root_key,
            ratchet_keypair=DHKeyPair(priv, pub),
            remote_ratchet_pub=remote,
            send_chain_key=send_ck,
            recv_chain_key=recv_ck,
            send_counter=send_counter,
            recv_counter=recv_counter,
            previous_send_counter=previous_send_counter,
            send_ratchet_stale=bool(flags & 0x08),
            handshake=handshake,
            skipped=skipped,
            retired_watermarks=retired,
            rng=rng,
        )


# ── Handshake ───────────────────────────────────────────────────────────────


def _derive_shared_secret(dh_parts: list[bytes]) -> bytes:
    return _hkdf(salt=_ZERO_SALT, ikm=b"".join(dh_parts), info=_HANDSHAKE_INFO, length=32)


def session_init_sender(
    local_identity: IdentityKeyPair,
    bundle: PreKeyBundle,
    rng: RandomSource = os.urandom,
) -> SessionState:
    """Open a session toward a fetched prekey bundle.

    Performs the triple (or quadruple, with a one-time prekey) DH against
    the bundle, then seeds the ratchet using the handshake ephemeral as our
    first ratchet key and the peer's signed prekey as theirs — so both
    sides start from the same root key without extra round trips.

    Errors:
        BundleRejected: the prekey signature fails under the identity key.
    """
    if not bundle.verify():
        raise BundleRejected("prekey signature does not verify under identity key")
    ephemeral = DHKeyPair.generate(rng)
    dh_parts = [
        local_identity.dh_exchange(bundle.signed_prekey_pub),
        ephemeral.exchange(_ed_public_to_x(bundle.identity_pub)),
        ephemeral.exchange(bundle.signed_prekey_pub),
    ]
    if bundle.one_time_prekey_pub is not None:
        dh_parts.append(ephemeral.exchange(bundle.one_time_prekey_pub))
    secret = _derive_shared_secret(dh_parts)
    root_key, send_chain_key = kdf_root(secret, ephemeral.exchange(bundle.signed_prekey_pub))
    return SessionState(
        root_key=root_key,
        ratchet_keypair=ephemeral,
        remote_ratchet_pub=bundle.signed_prekey_pub,
        send_chain_key=send_chain_key,
        handshake=HandshakeHeader(
            identity_pub=local_identity.public,
            ephemeral_pub=ephemeral.public,
            one_time_prekey_id=bundle.one_time_prekey_id,
        ),
        rng=rng,
    )


def session_init_receiver(
    local_identity: IdentityKeyPair,
    signed_prekey: DHKeyPair,
    handshake: HandshakeHeader,
    one_time_prekeys: MutableMapping[int, DHKeyPair] | None = None,
    rng: RandomSource = os.urandom,
) -> SessionState:
    """Accept a session from a handshake header on a first message.

    Mirrors ``session_init_sender``: recomputes the shared secret from our
    side of the prekeys and seeds the ratchet with the signed prekey as our
    ratchet key.  A referenced one-time prekey is popped from the mapping —
    consumed for good — before any derivation output is returned.

    Errors:
        PrekeyMissing: the handshake names a one-time prekey we don't hold.
    """
    one_time: DHKeyPair | None = None
    if handshake.one_time_prekey_id is not None:
        if one_time_prekeys is None or handshake.one_time_prekey_id not in one_time_prekeys:
            raise PrekeyMissing(
                f"one-time prekey {handshake.one_time_prekey_id} unknown or already used"
            )
        one_time = one_time_prekeys.pop(handshake.one_time_prekey_id)
    dh_parts = [
        signed_prekey.exchange(_ed_public_to_x(handshake.identity_pub)),
        local_identity.dh_exchange(handshake.ephemeral_pub),
        signed_prekey.exchange(handshake.ephemeral_pub),
    ]
    if one_time is not None:
        dh_parts.append(one_time.exchange(handshake.ephemeral_pub))
    secret = _derive_shared_secret(dh_parts)
    root_key, recv_chain_key = kdf_root(secret, signed_prekey.exchange(handshake.ephemeral_pub))
    return SessionState(
        root_key=root_key,
        ratchet_keypair=DHKeyPair(signed_prekey.private, signed_prekey.public),
        remote_ratchet_pub=handshake.ephemeral_pub,
        recv_chain_key=recv_chain_key,
        rng=rng,
    )
