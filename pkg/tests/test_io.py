import numpy as np
import pytest

from nlslab.io import MAGIC, SnapshotError, decode_field, encode_field, read_field, write_field, write_json
from nlslab.spectral import PERIODIC, DomainSpec, Field


@pytest.mark.parametrize("dom", [DomainSpec.square(2, 1.0, 15), DomainSpec.square(1, 3.0, 16, PERIODIC)])
def test_round_trip_is_bit_exact(dom, tmp_path):
    rng = np.random.default_rng(5)
    f = Field(dom, rng.normal(size=dom.shape) + 1j * rng.normal(size=dom.shape), 0.125)
    path = tmp_path / "f.nlsf"
    write_field(path, f)
    g = read_field(path)
    assert g.domain == dom and g.time == 0.125
    assert np.array_equal(g.values, f.values)
    assert path.read_bytes().startswith(MAGIC)


def test_corruption_is_detected():
    dom = DomainSpec.square(1, 1.0, 15)
    blob = encode_field(Field(dom, np.ones(dom.shape), 0.0))
    with pytest.raises(SnapshotError, match="magic"):
        decode_field(b"X" + blob[1:])
    with pytest.raises(SnapshotError, match="payload"):
        decode_field(blob[:-3])
    with pytest.raises(SnapshotError):
        decode_field(blob[:10])


def test_atomic_writes_leave_no_temporaries(tmp_path):
    write_json(tmp_path / "sub" / "a.json", {"b": 1, "a": [1, 2]})
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.json"]
    assert (tmp_path / "sub" / "a.json").read_text().startswith('{\n  "a"')
