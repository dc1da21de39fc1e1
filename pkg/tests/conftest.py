import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybridrec.config import RunConfig
from hybridrec.domain import ContextRecord, Interaction, ItemRecord, ReviewRecord
from hybridrec.features import build_feature_space
from hybridrec.ingest import DatasetBundle
from hybridrec.scoring import ScoringEngine
from hybridrec.simgen import SynthConfig, generate_with_truth

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL_SYNTH = SynthConfig(n_users=120, n_items=80, n_interactions=1500, n_reviews=150, n_topics=8, seed=11)


@pytest.fixture(scope="session")
def small_world():
    return generate_with_truth(SMALL_SYNTH)


@pytest.fixture(scope="session")
def small_bundle(small_world):
    return small_world[0]


@pytest.fixture(scope="session")
def small_space(small_bundle):
    return build_feature_space(small_bundle, 256, 30.0, 0.25)


@pytest.fixture(scope="session")
def small_engine(small_bundle, small_space):
    return ScoringEngine.build(small_bundle, small_space, m=10, cf_variant="raw")


@pytest.fixture(scope="session")
def small_cfg():
    return RunConfig(synth=SMALL_SYNTH)


def tiny_bundle():
    """Three items, three users, hand-sized."""
    items = [
        ItemRecord("a", "red shoes", "running shoes for road", "shoes", 0.0),
        ItemRecord("b", "blue shirt", "cotton shirt", "shirts", 0.5),
        ItemRecord("c", "red shirt", "silk shirt for evening", "shirts", 1.0),
    ]
    ctx = ContextRecord("mobile", "morning")
    interactions = [
        Interaction("u1", "a", "purchase", 100, None, ctx),
        Interaction("u1", "b", "view", 200, None, ctx),
        Interaction("u2", "b", "purchase", 150, None, ContextRecord("desktop", "evening")),
        Interaction("u2", "c", "click", 250, None, ContextRecord("desktop", "evening")),
        Interaction("u3", "c", "purchase", 300, None, ctx),
    ]
    reviews = [ReviewRecord("u2", "b", "soft cotton", 160)]
    return DatasetBundle.from_records(items, reviews, interactions)


@pytest.fixture
def tiny():
    return tiny_bundle()


def rng(seed=0):
    return np.random.default_rng(seed)


# one line per acceptance criterion, echoed again at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
