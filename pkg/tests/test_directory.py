"""Key directory: registry semantics, HTTP layer, and both clients."""

import base64
from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from textguard.directory import (
    DirectoryCore,
    HttpDirectory,
    InProcessDirectory,
    create_app,
    registration_payload,
)
from textguard.errors import (
    DirectoryUnavailable,
    RegistrationRejected,
    UserNotFound,
)
from textguard.keystore import store_init
from textguard.ratchet import (
    DeterministicRng,
    DHKeyPair,
    generate_identity,
    session_init_receiver,
    session_init_sender,
)


def make_record(rng, one_time_count=2):
    """Identity + signed prekey + pool, as a registration argument tuple."""
    identity = generate_identity(rng=rng)
    signed_prekey = DHKeyPair.generate(rng)
    one_time = [(i + 1, DHKeyPair.generate(rng).public) for i in range(one_time_count)]
    return identity, {
        "identity_pub": identity.public,
        "signed_prekey_pub": signed_prekey.public,
        "prekey_signature": identity.sign(signed_prekey.public),
        "registration_id": 7,
        "one_time_prekeys": one_time,
    }


class TestDirectoryCore:
    def test_register_then_fetch_verifies(self):
        core = DirectoryCore()
        _, record = make_record(DeterministicRng(1))
        assert core.register("alice", **record) is False
        bundle = core.fetch_bundle("alice")
        assert bundle.verify()
        assert bundle.registration_id == 7

    def test_sequential_fetches_consume_distinct_prekeys(self):
        core = DirectoryCore()
        _, record = make_record(DeterministicRng(2), one_time_count=3)
        core.register("alice", **record)
        served = [core.fetch_bundle("alice").one_time_prekey_pub for _ in range(3)]
        assert len(set(served)) == 3
        assert core.remaining_prekeys("alice") == 0

    def test_exhausted_pool_serves_bundle_without_one_time_prekey(self):
        core = DirectoryCore()
        _, record = make_record(DeterministicRng(3), one_time_count=1)
        core.register("alice", **record)
        core.fetch_bundle("alice")
        bundle = core.fetch_bundle("alice")
        assert bundle.one_time_prekey_pub is None
        assert bundle.one_time_prekey_id is None
        assert bundle.verify()  # still usable for session setup

    def test_unknown_user(self):
        with pytest.raises(UserNotFound):
            DirectoryCore().fetch_bundle("ghost")

    def test_bad_signature_rejected(self):
        core = DirectoryCore()
        _, record = make_record(DeterministicRng(4))
        record["prekey_signature"] = bytes(64)
        with pytest.raises(RegistrationRejected):
            core.register("alice", **record)

    def test_wrong_key_length_rejected(self):
        core = DirectoryCore()
        _, record = make_record(DeterministicRng(5))
        record["identity_pub"] = record["identity_pub"][:-1]
        with pytest.raises(RegistrationRejected):
            core.register("alice", **record)

    def test_reregistration_with_new_identity_is_flagged(self):
        core = DirectoryCore()
        _, first = make_record(DeterministicRng(6))
        _, second = make_record(DeterministicRng(7))
        assert core.register("alice", **first) is False
        assert core.register("alice", **second) is True
        # same identity again: replacement but no key change
        assert core.register("alice", **second) is False

    def test_concurrent_fetches_never_duplicate_a_prekey(self):
        core = DirectoryCore()
        _, record = make_record(DeterministicRng(8), one_time_count=100)
        core.register("alice", **record)
        with ThreadPoolExecutor(max_workers=32) as pool:
            bundles = list(pool.map(lambda _: core.fetch_bundle("alice"), range(100)))
        served = [b.one_time_prekey_pub for b in bundles]
        assert None not in served
        assert len(set(served)) == 100
        assert core.remaining_prekeys("alice") == 0


class TestHttpApi:
    @pytest.fixture
    def client(self):
        with TestClient(create_app()) as client:
            yield client

    def payload(self, seed=11, one_time_count=2):
        _, record = make_record(DeterministicRng(seed), one_time_count)
        encode = lambda raw: base64.b64encode(raw).decode()  # noqa: E731
        return {
            "identity_pub": encode(record["identity_pub"]),
            "signed_prekey_pub": encode(record["signed_prekey_pub"]),
            "prekey_signature": encode(record["prekey_signature"]),
            "registration_id": record["registration_id"],
            "one_time_prekeys": [
                {"id": pid, "pub": encode(pub)} for pid, pub in record["one_time_prekeys"]
            ],
        }

    def test_register_and_fetch(self, client):
        response = client.post("/v1/keys/alice", json=self.payload())
        assert response.status_code == 200
        assert response.json() == {"status": "ok", "key_changed": False}
        fetched = client.get("/v1/keys/alice")
        assert fetched.status_code == 200
        body = fetched.json()
        assert body["registration_id"] == 7
        assert body["one_time_prekey"] is not None

    def test_fetch_unknown_user_is_404(self, client):
        assert client.get("/v1/keys/ghost").status_code == 404

    def test_bad_signature_is_400(self, client):
        payload = self.payload()
        payload["prekey_signature"] = base64.b64encode(bytes(64)).decode()
        response = client.post("/v1/keys/alice", json=payload)
        assert response.status_code == 400
        assert "verify" in response.json()["detail"]

    def test_bad_base64_is_400(self, client):
        payload = self.payload()
        payload["identity_pub"] = "!!not-base64!!"
        assert client.post("/v1/keys/alice", json=payload).status_code == 400

    def test_missing_fields_are_422(self, client):
        assert client.post("/v1/keys/alice", json={}).status_code == 422

    def test_key_change_is_flagged(self, client):
        client.post("/v1/keys/alice", json=self.payload(seed=21))
        response = client.post("/v1/keys/alice", json=self.payload(seed=22))
        assert response.json()["key_changed"] is True

    def test_pool_drains_over_http(self, client):
        client.post("/v1/keys/alice", json=self.payload(one_time_count=2))
        first = client.get("/v1/keys/alice").json()["one_time_prekey"]
        second = client.get("/v1/keys/alice").json()["one_time_prekey"]
        third = client.get("/v1/keys/alice").json()["one_time_prekey"]
        assert first["pub"] != second["pub"]
        assert third is None


class TestClients:
    def test_http_client_round_trip(self, tmp_path):
        rng = DeterministicRng(31)
        store = store_init(tmp_path / "store", rng=rng)
        directory = HttpDirectory(client=TestClient(create_app()))
        try:
            assert directory.publish("alice", store, one_time_count=2) is False
            bundle = directory.fetch_bundle("alice")
            assert bundle.verify()
            assert bundle.identity_pub == store.identity.public
            assert bundle.one_time_prekey_pub is not None
        finally:
            store.close()

    def test_http_client_unknown_user(self):
        directory = HttpDirectory(client=TestClient(create_app()))
        with pytest.raises(UserNotFound):
            directory.fetch_bundle("ghost")

    def test_http_client_reports_unreachable_directory(self):
        directory = HttpDirectory("http://127.0.0.1:9", timeout=0.2)
        try:
            with pytest.raises(DirectoryUnavailable):
                directory.fetch_bundle("anyone")
        finally:
            directory.close()

    def test_fetched_bundle_opens_a_working_session(self, tmp_path):
        """A bundle served over HTTP is enough to talk to its owner."""
        rng = DeterministicRng(32)
        bob_store = store_init(tmp_path / "bob", rng=rng)
        directory = HttpDirectory(client=TestClient(create_app()))
        try:
            directory.publish("bob", bob_store, one_time_count=1)
            bundle = directory.fetch_bundle("bob")
            alice_identity = generate_identity(rng=rng)
            sender = session_init_sender(alice_identity, bundle, rng=rng)
            receiver = session_init_receiver(
                bob_store.identity,
                bob_store.signed_prekey,
                sender.handshake,
                one_time_prekeys=bob_store.one_time_prekeys(),
            )
            assert sender.root_key == receiver.root_key
        finally:
            bob_store.close()

    def test_in_process_matches_http_consumption(self, tmp_path):
        rng = DeterministicRng(33)
        store = store_init(tmp_path / "store", rng=rng)
        directory = InProcessDirectory()
        try:
            directory.publish("alice", store, one_time_count=1)
            assert directory.fetch_bundle("alice").one_time_prekey_pub is not None
            assert directory.fetch_bundle("alice").one_time_prekey_pub is None
        finally:
            store.close()

    def test_registration_payload_is_json_ready(self, tmp_path):
        rng = DeterministicRng(34)
        store = store_init(tmp_path / "store", rng=rng)
        try:
            payload = registration_payload(store, one_time_count=3)
            assert len(payload["one_time_prekeys"]) == 3
            base64.b64decode(payload["identity_pub"], validate=True)
        finally:
            store.close()
