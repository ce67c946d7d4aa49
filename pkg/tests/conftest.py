import pytest

from sepkit import simulate


@pytest.fixture(scope="session")
def scene_dataset(tmp_path_factory):
    """Small shared simulated dataset: 4 scenes, 0.7 s, light reverb."""
    out = tmp_path_factory.mktemp("scenes")
    rules = simulate.SceneRules.wsj0(duration=0.7, rir_max_order=2, t60_range=(0.1, 0.3))
    manifest = simulate.build_dataset(rules, count=4, seed=100, out_dir=out)
    return out, manifest


@pytest.fixture(scope="session")
def overfit_dataset(tmp_path_factory):
    """Two nearly-anechoic single-position scenes for overfit runs."""
    out = tmp_path_factory.mktemp("overfit")
    rules = simulate.SceneRules.wsj0(
        duration=0.8, rir_max_order=1, t60_range=(0.08, 0.12), distance_range=(0.6, 2.0)
    )
    manifest = simulate.build_dataset(rules, count=2, seed=500, out_dir=out)
    return out, manifest
