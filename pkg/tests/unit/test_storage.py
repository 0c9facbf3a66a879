"""Tests unitaires de l'écriture des résultats."""

import json

import numpy as np
import pandas as pd
import pytest

from spinpol.core.errors import DomainError
from spinpol.core.models.records import ProtocolRecordModel, RunMetadata, SeriesPoint
from spinpol.core.protocol import ProtocolRecord
from spinpol.storage import CsvWriter, JsonWriter, ResultPayload, get_writer, write_sidecar
from spinpol.storage.files import sidecar_path

pytestmark = pytest.mark.unit


@pytest.fixture
def payload():
    """Résultat minimal d'un protocole à trois points."""
    record = ProtocolRecord.from_series(
        [0.3, 0.55, 0.7], [0.0, np.log(0.8), np.log(0.7)], K_total=2, fingerprint="abc"
    )
    document = ProtocolRecordModel(
        K_total=2,
        fingerprint="abc",
        series=[
            SeriesPoint(M=int(m), expected_Iz=float(e), log10_P_M=float(p))
            for m, e, p in zip(record.M, record.expected_Iz, record.log10_P)
        ],
    )
    return ResultPayload(document, record.to_frame())


def test_csv_writer(payload, tmp_path):
    path = CsvWriter().write(payload, tmp_path / "out" / "series.csv")
    text = path.read_text()
    lines = text.splitlines()
    assert lines[0] == "M,expected_Iz,log10_P_M"
    assert len(lines) == 4
    assert "\r" not in text
    frame = pd.read_csv(path)
    assert frame["expected_Iz"].tolist() == pytest.approx([0.3, 0.55, 0.7])
    assert frame["log10_P_M"].iloc[1] == pytest.approx(np.log10(0.8))


def test_csv_requires_table(payload, tmp_path):
    with pytest.raises(DomainError):
        CsvWriter().write(ResultPayload(payload.document), tmp_path / "x.csv")


def test_json_writer(payload, tmp_path):
    path = JsonWriter().write(payload, tmp_path / "series.json")
    text = path.read_text()
    assert text.endswith("}\n")
    document = json.loads(text)
    assert list(document) == sorted(document)
    assert document["model"] == "exact"
    assert [p["M"] for p in document["series"]] == [0, 1, 2]


def test_writers_are_deterministic(payload, tmp_path):
    for fmt in ("csv", "json"):
        first = get_writer(fmt).write(payload, tmp_path / f"a.{fmt}")
        second = get_writer(fmt).write(payload, tmp_path / f"b.{fmt}")
        assert first.read_bytes() == second.read_bytes()


def test_get_writer():
    assert isinstance(get_writer("csv"), CsvWriter)
    with pytest.raises(DomainError):
        get_writer("parquet")


def test_sidecar(tmp_path):
    output = tmp_path / "series.csv"
    metadata = RunMetadata(
        fingerprint="abc", version="0.3.0", mode="exact", model="exact", wall_time_s=0.1
    )
    path = write_sidecar(output, metadata)
    assert path == sidecar_path(output)
    assert path.name == "series.csv.meta.json"
    assert json.loads(path.read_text())["fingerprint"] == "abc"
