import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import SEED
from ruinlab.io import MAGIC, ROW_DTYPE, from_bytes, read_records_csv, to_bytes, write_records_csv
from ruinlab.path_sim import RECORD_FIELDS, FirstPassageBatch, simulate_first_passage_batch
from ruinlab.rng import StreamSeed


@pytest.fixture(scope="module")
def batch(m1):
    return simulate_first_passage_batch(m1, 2.0, 300, 1e4, StreamSeed(SEED, 40))


def _equal(a, b):
    return all(np.array_equal(getattr(a, k), getattr(b, k), equal_nan=True) for k in RECORD_FIELDS)


def test_csv_round_trip(batch):
    buf = io.StringIO()
    write_records_csv(batch, buf, ("ruinlab test",))
    text = buf.getvalue()
    assert text.startswith("# ruinlab test\n")
    assert text.splitlines()[1] == ",".join(RECORD_FIELDS)
    assert _equal(read_records_csv(io.StringIO(text)), batch)


def test_binary_layout(batch):
    data = to_bytes(batch)
    assert data[:4] == MAGIC
    assert int.from_bytes(data[4:6], "little") == 1
    assert int.from_bytes(data[6:14], "little") == len(batch)
    assert len(data) == 14 + len(batch) * ROW_DTYPE.itemsize == 14 + len(batch) * 57
    assert _equal(from_bytes(data), batch)


def test_binary_rejects_bad_streams(batch):
    data = to_bytes(batch)
    with pytest.raises(ValueError):
        from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        from_bytes(data[:-5])
    with pytest.raises(ValueError):
        from_bytes(data[:4] + (2).to_bytes(2, "little") + data[6:])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.floats(allow_nan=True, allow_infinity=True, width=64)), max_size=20))
def test_round_trips_are_bit_exact(rows):
    b = FirstPassageBatch.empty(len(rows))
    for i, (r, v) in enumerate(rows):
        b.ruined[i] = r
        for k in RECORD_FIELDS[1:]:
            getattr(b, k)[i] = v
    assert _equal(from_bytes(to_bytes(b)), b)
    buf = io.StringIO()
    write_records_csv(b, buf)
    assert _equal(read_records_csv(io.StringIO(buf.getvalue())), b)
