import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcbench.core import CapacityError, ValidationError
from rcbench.ingest import (
    ParseError,
    RawTimestampFile,
    ShortfallError,
    load_dataset,
    read_dataset,
    sidecar_path,
    synth_clustered,
    synth_uniform,
    write_dataset,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_plain_pipeline(tmp_path):
    ds = load_dataset(RawTimestampFile(write(tmp_path, "a.txt", "5\n3\n5\n1\n")))
    assert ds.points.tolist() == [0, 2, 4]
    assert ds.domain_size == 5 and ds.anchor == 1


def test_truncation_and_shortfall(tmp_path):
    p = write(tmp_path, "a.txt", "10\n40\n20\n30\n20\n")
    assert load_dataset(RawTimestampFile(p), target_count=2).points.tolist() == [0, 10]
    with pytest.raises(ShortfallError):
        load_dataset(RawTimestampFile(p), target_count=5)
    with pytest.raises(ShortfallError):
        load_dataset(RawTimestampFile(write(tmp_path, "e.txt", "")))


def test_domain_override_and_scale(tmp_path):
    p = write(tmp_path, "a.txt", "1.5\n2.25\n")
    ds = load_dataset(RawTimestampFile(p, scale=4), domain_size=100)
    assert ds.points.tolist() == [0, 3] and ds.scale == 4 and ds.domain_size == 100


def test_checkin_format(tmp_path):
    text = (
        "0\t2010-10-19T23:55:27Z\t30.23\t-97.79\t22847\n"
        "0\t2010-10-18T22:17:43Z\t30.26\t-97.75\t420315\n"
        "1\t2010-10-19T23:55:27Z\t30.23\t-97.79\t22847\n"
    )
    ds = load_dataset(RawTimestampFile(write(tmp_path, "g.txt", text), "checkin"))
    assert ds.points.tolist() == [0, 92264]


def test_csv_by_name_and_index(tmp_path):
    p = write(tmp_path, "a.csv", "id,ts\n1,100\n2,130\n")
    assert load_dataset(RawTimestampFile(p, "csv", "ts")).points.tolist() == [0, 30]
    q = write(tmp_path, "b.csv", "1;100\n2;107\n")
    assert load_dataset(RawTimestampFile(q, "csv", 1, ";")).points.tolist() == [0, 7]
    with pytest.raises(ParseError):
        load_dataset(RawTimestampFile(p, "csv", "missing"))


def test_parse_errors_name_the_line(tmp_path):
    with pytest.raises(ParseError) as err:
        load_dataset(RawTimestampFile(write(tmp_path, "a.txt", "1\n2\nxyz\n")))
    assert err.value.line == 3
    with pytest.raises(ParseError, match="mixes"):
        load_dataset(RawTimestampFile(write(tmp_path, "b.txt", "1\n2010-01-01T00:00:00\n")))
    with pytest.raises(ValidationError):
        RawTimestampFile("x", "json")


def test_dump_and_sidecar_round_trip(tmp_path):
    src = write(tmp_path, "raw.txt", "105\n100\n120\n")
    ds = load_dataset(RawTimestampFile(src), domain_size=50)
    out = tmp_path / "ds.txt"
    side = write_dataset(ds, out, source=src)
    assert side == sidecar_path(out)
    meta = json.loads(side.read_text())
    assert (meta["N"], meta["M"], meta["anchor"], meta["scale"]) == (3, 50, 100, 1)
    assert len(meta["source_sha256"]) == 64
    again = read_dataset(out)
    assert again.points.tolist() == [0, 5, 20] and again.domain_size == 50 and again.anchor == 100


def test_synth_uniform():
    assert synth_uniform(16, 16).points.tolist() == list(range(16))
    assert synth_uniform(1, 999).points.tolist() == [0]
    big = synth_uniform(2**22, 49_626_707)
    step = np.diff(big.points)
    assert set(np.unique(step)) <= {11, 12} and abs(step.mean() - 11.83) < 0.01
    with pytest.raises(CapacityError):
        synth_uniform(5, 4)


def test_synth_clustered_deterministic_and_distinct():
    a = synth_clustered(4096, 2**20, 4, 0.01, seed=3)
    b = synth_clustered(4096, 2**20, 4, 0.01, seed=3)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, synth_clustered(4096, 2**20, 4, 0.01, seed=4).points)
    tight = synth_clustered(100, 10_000, 1, 0.0, seed=1)
    assert tight.points[-1] - tight.points[0] == 99
    with pytest.raises(CapacityError):
        synth_clustered(11, 10, 1, 0.1, seed=0)
    with pytest.raises(ValidationError):
        synth_clustered(5, 10, 0, 0.1, seed=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.integers(0, 200), st.integers(1, 5), st.floats(0, 0.5), st.integers(0, 2**32))
def test_synth_clustered_invariants(N, extra, clusters, spread, seed):
    ds = synth_clustered(N, N + extra, clusters, spread, seed)
    assert ds.count == N
    assert ds.points[0] >= 0 and ds.points[-1] < N + extra
