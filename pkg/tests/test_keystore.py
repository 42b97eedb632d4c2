"""Store lifecycle, contact pinning, session persistence, and cache tests."""

import json
import os
import stat

import pytest

from textguard.errors import (
    CacheCorrupt,
    ContactNotFound,
    KeyChanged,
    SessionNotFound,
    StoreCorrupt,
    StoreUnavailable,
)
from textguard.keystore import Store, store_init, store_open, token_hash
from textguard.ratchet import DeterministicRng, generate_identity, session_init_sender
from textguard.ratchet import DHKeyPair, PreKeyBundle


@pytest.fixture
def store(tmp_path):
    s = store_init(tmp_path / "store", rng=DeterministicRng(1))
    yield s
    s.close()


def sender_session(rng_seed: int = 50):
    """A throwaway established session for persistence tests."""
    rng = DeterministicRng(rng_seed)
    me = generate_identity(rng=rng)
    peer = generate_identity(rng=rng)
    spk = DHKeyPair.generate(rng)
    bundle = PreKeyBundle(
        identity_pub=peer.public,
        signed_prekey_pub=spk.public,
        prekey_signature=peer.sign(spk.public),
        registration_id=9,
    )
    return session_init_sender(me, bundle, rng=rng)


class TestLifecycle:
    def test_init_then_open_same_identity(self, tmp_path) -> None:
        """Identity persists across close and reopen."""
        s = store_init(tmp_path / "s", rng=DeterministicRng(2))
        pub = s.identity.public
        reg = s.registration_id
        s.close()
        reopened = store_open(tmp_path / "s")
        assert reopened.identity.public == pub
        assert reopened.registration_id == reg
        reopened.close()

    def test_open_nonexistent_fails(self, tmp_path) -> None:
        with pytest.raises(StoreUnavailable):
            store_open(tmp_path / "missing")

    def test_double_init_refused(self, tmp_path) -> None:
        """Re-initializing would destroy an identity; it must be refused."""
        store_init(tmp_path / "s", rng=DeterministicRng(3)).close()
        with pytest.raises(StoreUnavailable):
            store_init(tmp_path / "s")

    def test_owner_only_permissions(self, store) -> None:
        """The directory and key files are unreadable by other users."""
        mode = stat.S_IMODE(os.stat(store.path).st_mode)
        assert mode == 0o700
        for name in ("identity.key", "cache.key", "prekeys.json", "index.json"):
            file_mode = stat.S_IMODE(os.stat(store.path / name).st_mode)
            assert file_mode == 0o600, name

    def test_concurrent_open_blocked(self, store) -> None:
        """The advisory lock rejects a second simultaneous owner."""
        with pytest.raises(StoreUnavailable):
            store_open(store.path)

    def test_lock_released_on_close(self, tmp_path) -> None:
        s = store_init(tmp_path / "s", rng=DeterministicRng(4))
        s.close()
        reopened = store_open(tmp_path / "s")
        reopened.close()

    def test_seeded_identity(self, tmp_path) -> None:
        seed = bytes(range(32))
        s = store_init(tmp_path / "s", seed=seed, rng=DeterministicRng(5))
        assert s.identity.private == seed
        s.close()


class TestCorruption:
    def test_corrupt_index_named(self, tmp_path) -> None:
        s = store_init(tmp_path / "s", rng=DeterministicRng(6))
        s.close()
        (tmp_path / "s" / "index.json").write_text("{not json")
        with pytest.raises(StoreCorrupt) as exc_info:
            store_open(tmp_path / "s")
        assert "index.json" in exc_info.value.path

    def test_truncated_identity_named(self, tmp_path) -> None:
        s = store_init(tmp_path / "s", rng=DeterministicRng(7))
        s.close()
        (tmp_path / "s" / "identity.key").write_bytes(b"\x01\x02")
        with pytest.raises(StoreCorrupt) as exc_info:
            store_open(tmp_path / "s")
        assert "identity.key" in exc_info.value.path

    def test_corrupt_prekeys_named(self, tmp_path) -> None:
        s = store_init(tmp_path / "s", rng=DeterministicRng(8))
        s.close()
        (tmp_path / "s" / "prekeys.json").write_text(json.dumps({"signed": {}}))
        with pytest.raises(StoreCorrupt) as exc_info:
            store_open(tmp_path / "s")
        assert "prekeys.json" in exc_info.value.path

    def test_truncated_session_named(self, store) -> None:
        """A damaged session file surfaces as StoreCorrupt with its path."""
        store.add_contact("mallory", b"\x05" * 32)
        store.session_save("mallory", sender_session())
        session_dir = store.path / "sessions"
        session_file = next(session_dir.iterdir())
        session_file.write_bytes(session_file.read_bytes()[:10])
        with pytest.raises(StoreCorrupt) as exc_info:
            store.session_load("mallory")
        assert exc_info.value.path == str(session_file)


class TestContacts:
    def test_add_and_get(self, store) -> None:
        store.add_contact("bob", b"\x01" * 32)
        record = store.get_contact("bob")
        assert record.identity_pub == b"\x01" * 32
        assert not record.verified

    def test_unknown_contact(self, store) -> None:
        with pytest.raises(ContactNotFound):
            store.get_contact("nobody")

    def test_listing_is_sorted(self, store) -> None:
        for name in ("carol", "alice", "bob"):
            store.add_contact(name, b"\x02" * 32)
        assert [r.contact_id for r in store.list_contacts()] == ["alice", "bob", "carol"]

    def test_key_change_flagged_not_overwritten(self, store) -> None:
        """Trust-on-first-use: a different key for a known contact is refused."""
        store.add_contact("bob", b"\x01" * 32)
        with pytest.raises(KeyChanged):
            store.add_contact("bob", b"\x02" * 32)
        assert store.get_contact("bob").identity_pub == b"\x01" * 32

    def test_same_key_idempotent(self, store) -> None:
        store.add_contact("bob", b"\x01" * 32)
        store.add_contact("bob", b"\x01" * 32)
        assert len(store.list_contacts()) == 1

    def test_verify_contact_persists(self, store, tmp_path) -> None:
        store.add_contact("bob", b"\x01" * 32)
        store.verify_contact("bob")
        store.close()
        reopened = store_open(store.path)
        assert reopened.get_contact("bob").verified
        reopened.close()

    def test_invalid_ids_rejected(self, store) -> None:
        for bad in ("", "a\x00b", "x" * 200, "tab\there"):
            with pytest.raises(ValueError):
                store.add_contact(bad, b"\x01" * 32)

    def test_unicode_id_accepted(self, store) -> None:
        store.add_contact("bób-暗号", b"\x03" * 32)
        assert store.get_contact("bób-暗号").identity_pub == b"\x03" * 32


class TestSessions:
    def test_save_load_round_trip(self, store) -> None:
        store.add_contact("bob", b"\x04" * 32)
        session = sender_session()
        store.session_save("bob", session)
        loaded = store.session_load("bob")
        assert loaded.to_bytes() == session.to_bytes()

    def test_save_requires_contact(self, store) -> None:
        with pytest.raises(ContactNotFound):
            store.session_save("ghost", sender_session())

    def test_load_missing_session(self, store) -> None:
        store.add_contact("bob", b"\x04" * 32)
        with pytest.raises(SessionNotFound):
            store.session_load("bob")

    def test_round_trip_many_random_states(self, store) -> None:
        """Serialization is stable across 100 randomly advanced sessions."""
        store.add_contact("bob", b"\x04" * 32)
        for i in range(100):
            session = sender_session(rng_seed=1000 + i)
            for _ in range(i % 5):
                session.next_sending_keys()
            store.session_save("bob", session)
            assert store.session_load("bob").to_bytes() == session.to_bytes()


class TestPlaintextCache:
    def test_put_get_round_trip(self, store) -> None:
        digest = token_hash("Guard-startAAAAGuard-end")
        store.cache_put(digest, "hello world".encode())
        assert store.cache_get(digest) == b"hello world"

    def test_unknown_hash_absent(self, store) -> None:
        assert store.cache_get(b"\x31" * 32) is None

    def test_tampered_entry_never_returns_plaintext(self, store) -> None:
        """A flipped sealed byte must fail loudly, not decrypt wrongly."""
        digest = token_hash("some token text")
        store.cache_put(digest, b"secret contents")
        path = store.path / "cache" / f"{digest.hex()}.bin"
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(CacheCorrupt):
            store.cache_get(digest)

    def test_no_plaintext_at_rest(self, store) -> None:
        """The secret never appears verbatim anywhere in the store directory."""
        secret = b"only-ever-sealed-7f3a"
        store.cache_put(token_hash("tok"), secret)
        for path in store.path.rglob("*"):
            if path.is_file():
                assert secret not in path.read_bytes(), path

    def test_hash_covers_full_token_text(self) -> None:
        """Delimiters are part of the hashed text, so lookups are selection-exact."""
        assert token_hash("Guard-startAAGuard-end") != token_hash("AA")
        assert len(token_hash("anything")) == 32


class TestPrekeyPool:
    def test_mint_and_pop_persist(self, store) -> None:
        """One-time prekey consumption survives reopening the store."""
        minted = store.mint_one_time_prekeys(3)
        ids = [pid for pid, _ in minted]
        pool = store.one_time_prekeys()
        pool.pop(ids[0])
        store.close()
        reopened = store_open(store.path)
        assert sorted(reopened.one_time_prekeys()) == sorted(ids[1:])
        reopened.close()

    def test_ids_never_reused(self, store) -> None:
        first = [pid for pid, _ in store.mint_one_time_prekeys(2)]
        store.one_time_prekeys().pop(first[0])
        second = [pid for pid, _ in store.mint_one_time_prekeys(2)]
        assert not set(first) & set(second)

    def test_prekey_signature_verifies(self, store) -> None:
        from textguard.ratchet import verify_identity_signature

        assert verify_identity_signature(
            store.identity.public, store.signed_prekey.public, store.prekey_signature()
        )
