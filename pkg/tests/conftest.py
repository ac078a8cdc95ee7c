import random

import pytest

from dhtvote.node import NodeConfig, VoteNode


class FakeClock:
    def __init__(self, start: float = 1_000_000.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


class NullTransport:
    """Transport for nodes exercised purely through handle_datagram."""

    def request(self, address, data, kind):
        return None


@pytest.fixture
def clock():
    return FakeClock()


def make_test_node(clock, state_dir=None, seed=0, **config_kwargs) -> VoteNode:
    rng = random.Random(seed)
    config = NodeConfig(state_dir=state_dir, **config_kwargs)
    return VoteNode(
        config, NullTransport(), clock=clock, rand_bytes=rng.randbytes
    )
