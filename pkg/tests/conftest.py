import pytest

from streamsum import features

from synth import make_event


@pytest.fixture(scope="session")
def small_events():
    return [make_event(index=i, seed=7, n_sentences=40, n_nuggets=4,
                       matches_per_nugget=(2, 3), span_hours=20.0)
            for i in range(4)]


@pytest.fixture(scope="session")
def small_resources(small_events):
    return features.build_resources(small_events[:3], features.FeatureConfig(latent_k=20))
