"""Pytest configuration and fixtures."""

from pathlib import Path

import pytest

from fedwatch.models import (
    CorpusParams,
    InstanceRef,
    InstanceSnapshot,
    PolicyConfig,
    SimpleAction,
    SimplePolicyTarget,
)
from fedwatch.store import Store
from fedwatch.synthcorpus import generate_corpus
from fedwatch.transport import MockFediverse

FIXTURES = Path(__file__).parent / "fixtures"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: experiments on the full synthetic corpus")


@pytest.fixture
def fixtures_dir():
    """Directory of static test fixtures."""
    return FIXTURES


@pytest.fixture
def store(tmp_path):
    """Create an empty store."""
    return Store(tmp_path / "store", fsync=False)


@pytest.fixture
def fediverse():
    """Create an empty mock fediverse."""
    return MockFediverse()


def _snapshot(domain, at, users=10, posts=100, policies=(), targets=(), admins=("a",), moderators=(),
              version="2.4.2", exposed=True):
    """Build a successful snapshot with a few knobs."""
    config = PolicyConfig(
        enabled_policies=frozenset(policies),
        simple_targets=tuple(SimplePolicyTarget(SimpleAction(a), InstanceRef(t)) for a, t in targets),
    ) if exposed else PolicyConfig.unexposed()
    return InstanceSnapshot(
        instance=InstanceRef(domain),
        observed_at=at,
        user_count=users,
        post_count=posts,
        version=version,
        admins=frozenset(admins),
        moderators=frozenset(moderators),
        policy_config=config,
    )


@pytest.fixture
def make_snapshot():
    """Factory for successful snapshots."""
    return _snapshot


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 40-instance corpus with 5-day ticks."""
    params = CorpusParams(n_instances=40, cadence_seconds=5 * 86400, seed=7, text_posts=30)
    return generate_corpus(params, tmp_path_factory.mktemp("small") / "corpus")


@pytest.fixture(scope="session")
def default_corpus(tmp_path_factory):
    """The default 200-instance, 10-month corpus."""
    return generate_corpus(CorpusParams(), tmp_path_factory.mktemp("default") / "corpus")
