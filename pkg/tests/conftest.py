import numpy as np
import pytest
from hypothesis import strategies as st

from wfbounds.trace_model import Label, LabeledDataset, PacketSequence

UP, DOWN = 1, -1


def seq(*packets) -> PacketSequence:
    return PacketSequence.from_packets(packets)


@st.composite
def traces(draw, max_len: int = 60, max_gap: float = 0.2, sizes=None):
    n = draw(st.integers(1, max_len))
    gaps = draw(st.lists(st.floats(0, max_gap, allow_nan=False), min_size=n - 1, max_size=n - 1))
    size_st = sizes if sizes is not None else st.integers(1, 1500)
    szs = draw(st.lists(size_st, min_size=n, max_size=n))
    dirs = draw(st.lists(st.sampled_from([UP, DOWN]), min_size=n, max_size=n))
    times = np.concatenate(([0.0], np.cumsum(gaps))) if n > 1 else np.zeros(1)
    return PacketSequence(times, szs, dirs)


def random_trace(rng: np.random.Generator, n=None, cell=None) -> PacketSequence:
    n = int(rng.integers(1, 120)) if n is None else n
    times = np.concatenate(([0.0], np.cumsum(rng.exponential(0.03, n - 1))))
    sizes = np.full(n, cell) if cell else rng.integers(1, 1501, n)
    dirs = rng.choice([UP, DOWN], n)
    return PacketSequence(times, sizes, dirs)


def random_dataset(seed: int = 0, pages: int = 4, instances: int = 6) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    traces_, labels, names = [], [], []
    for page in range(pages):
        for i in range(instances):
            traces_.append(random_trace(rng, cell=512))
            labels.append(Label.monitored(f"w{page}"))
            names.append(f"w{page}-{i}")
    return LabeledDataset(tuple(traces_), tuple(labels), tuple(names))


@pytest.fixture
def small_dataset() -> LabeledDataset:
    return random_dataset()
