import pytest

from rgbdyn.synth import cuboid_walk_spec, render


@pytest.fixture(scope="session")
def mover_scene():
    """30-frame cuboid-walk prefix (with the mover), shared across modules."""
    spec = cuboid_walk_spec(n_frames=30)
    return spec, render(spec)


@pytest.fixture(scope="session")
def static_scene():
    """Same scene without the mover."""
    spec = cuboid_walk_spec(n_frames=30, with_mover=False)
    return spec, render(spec)


@pytest.fixture(scope="session")
def acceptance_dataset(tmp_path_factory):
    """Full 60-frame cuboid-walk written as a TUM-layout dataset."""
    out = tmp_path_factory.mktemp("cuboid_walk")
    spec = cuboid_walk_spec(n_frames=60)
    frames = render(spec, out_dir=out)
    return spec, frames, out
