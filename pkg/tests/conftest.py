import numpy as np
import pytest
from hypothesis import settings, strategies as st

from hwnas.search_space import ALL_OPS, CellGenotype, CellTopology, MacroSkeleton

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

NB201 = CellTopology.fully_connected(4)
DEFAULT_SKELETON = MacroSkeleton()
# small enough for finite differences and fast NTK checks
TINY_SKELETON = MacroSkeleton(stem_channels=2, num_stacks=2, cells_per_stack=1, num_classes=3, input_shape=(2, 4, 4))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def nb201():
    return NB201


@st.composite
def genotypes(draw, topology=NB201, ops=ALL_OPS):
    choice = draw(st.lists(st.sampled_from(sorted(ops)), min_size=topology.num_edges, max_size=topology.num_edges))
    return CellGenotype(topology, tuple(choice))


@st.composite
def masks(draw, topology=NB201):
    from hwnas.search_space import SupernetMask

    rows = []
    for _ in range(topology.num_edges):
        row = draw(st.lists(st.booleans(), min_size=len(ALL_OPS), max_size=len(ALL_OPS)))
        if not any(row):
            row[draw(st.integers(0, len(ALL_OPS) - 1))] = True
        rows.append(row)
    return SupernetMask(topology, rows)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {title} ({detail})")
