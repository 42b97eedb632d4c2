"""Shared test rig: two simulated users wired through an in-memory directory."""

import pytest

from textguard.directory import InProcessDirectory
from textguard.harness import Participant, build_participant

# The harness participant is exactly the rig tests need; alias it so test
# code reads naturally.
User = Participant


def make_user(tmp_path, name: str, seed: int, directory=None, **interceptor_kwargs) -> User:
    return build_participant(tmp_path, name, seed, directory=directory, **interceptor_kwargs)


@pytest.fixture
def directory() -> InProcessDirectory:
    return InProcessDirectory()


@pytest.fixture
def alice(tmp_path, directory) -> User:
    user = make_user(tmp_path, "alice", seed=101, directory=directory)
    yield user
    user.close()


@pytest.fixture
def bob(tmp_path, directory) -> User:
    user = make_user(tmp_path, "bob", seed=202, directory=directory)
    directory.publish("bob", user.store)
    yield user
    user.close()
