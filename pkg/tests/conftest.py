import pytest

from ordervqa import synth


@pytest.fixture(scope="session")
def small_world() -> synth.World:
    """A compact deterministic world shared by the fast unit tests."""
    return synth.gen_world(
        synth.WorldConfig(n_videos=12, feature_dim=16, n_segments=8, seed=3)
    )
