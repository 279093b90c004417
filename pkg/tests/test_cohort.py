import json

import numpy as np
import pytest
from scipy import stats

from sslgm.cohort import (CohortSpec, CovariateSampler, PatientRecord, generate_cohort, read_dataset, read_truth,
                          reference_model, write_dataset, write_truth)
from sslgm.errors import ConfigurationError, DataError
from sslgm.model import dumps_model, load_model, loads_model, save_model
from sslgm.semi_markov import SuperStateSeq, nb_duration_pmf


def test_discharge_only_chain():
    model = reference_model(p0=(1.0, 0.0, 0.0))
    c = generate_cohort(CohortSpec(20, model, seed=0))
    assert all(r.J == 1 and r.F == 0 for r in c.records)


def test_icu_fraction_and_dwell_histogram():
    c = generate_cohort(CohortSpec(10_000, reference_model(), seed=1))
    frac = np.mean([r.F for r in c.records])
    assert frac == pytest.approx(0.02 + 0.54 * 0.06, abs=0.007)
    dwell = []
    for gt in c.truth:
        SuperStateSeq(gt.S, gt.T).check(3)
        dwell += [t for s, t in zip(gt.S, gt.T) if s == 2]
    dwell = np.asarray(dwell)
    edges = [1, 2, 3, 4]
    observed = [np.sum(dwell == k) for k in edges[:-1]] + [np.sum(dwell >= edges[-1])]
    p = nb_duration_pmf(np.arange(1, 4), 1.4541, 0.839)
    expected = np.r_[p, 1 - p.sum()] * len(dwell)
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_same_seed_same_bytes(tmp_path):
    spec = CohortSpec(30, reference_model(), seed=5)
    write_dataset(generate_cohort(spec).records, tmp_path / "a.jsonl")
    write_dataset(generate_cohort(spec).records, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_dataset_round_trip(tmp_path):
    c = generate_cohort(CohortSpec(25, reference_model(q_dim=3), CovariateSampler(1, [[0.3, 0.7]]), seed=2))
    write_dataset(c.records, tmp_path / "d.jsonl")
    assert read_dataset(tmp_path / "d.jsonl") == c.records
    write_truth(c.truth, tmp_path / "t.jsonl")
    assert read_truth(tmp_path / "t.jsonl") == c.truth
    text = (tmp_path / "d.jsonl").read_text(encoding="utf-8")
    assert json.loads(text.splitlines()[0])["format"] == "sslgm-data/1"


def test_model_round_trip(tmp_path, fitted):
    save_model(fitted.model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert dumps_model(back) == dumps_model(fitted.model)
    for a, b in zip(back.components[0].dynamics, fitted.model.components[0].dynamics):
        np.testing.assert_array_equal(a.C, b.C)
        np.testing.assert_array_equal(a.Sigma0, b.Sigma0)
    doc = json.loads(dumps_model(fitted.model))
    assert doc["format"] == "sslgm-model/1"
    with pytest.raises(DataError):
        loads_model(json.dumps({**doc, "format": "other"}))


def write_lines(path, header, *records):
    lines = [json.dumps(header)] + [r if isinstance(r, str) else json.dumps(r) for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


HEADER = {"format": "sslgm-data/1", "M": 2, "q_dim": 1}
GOOD = {"id": "a", "q": [0.1], "Y": [[1, 2], [3, 4]], "F": 0, "step_hours": 4}


@pytest.mark.parametrize("bad, line, field", [
    ({**GOOD, "id": "b", "F": 2}, 3, "F"),
    ({**GOOD, "id": "b", "J": 3}, 3, "J"),
    ({**GOOD, "id": "b", "Y": [[1, 2], [3]]}, 3, "Y"),
    ({**GOOD, "id": "b", "Y": [[1, 2, 3]]}, 3, "Y"),
    ({**GOOD, "id": "a"}, 3, "id"),
    ({k: v for k, v in GOOD.items() if k != "q"} | {"id": "b"}, 3, "q"),
    ("{not json", 3, None),
])
def test_schema_violations_name_line(tmp_path, bad, line, field):
    write_lines(tmp_path / "d.jsonl", HEADER, GOOD, bad)
    with pytest.raises(DataError) as err:
        read_dataset(tmp_path / "d.jsonl")
    assert err.value.line == line and err.value.field == field
    assert str(err.value).startswith(f"line {line}")


def test_header_required(tmp_path):
    write_lines(tmp_path / "d.jsonl", {"format": "nope"}, GOOD)
    with pytest.raises(DataError, match="line 1"):
        read_dataset(tmp_path / "d.jsonl")


def test_invalid_specs():
    with pytest.raises(ConfigurationError):
        CohortSpec(0, reference_model()).check()
    with pytest.raises(ConfigurationError):
        CohortSpec(3, reference_model(q_dim=2)).check()


def test_slow_absorption_warns():
    model = reference_model(p0=(0.0, 1.0, 0.0), p_down=0.5, duration=(2.0, 0.05))
    with pytest.warns(RuntimeWarning, match="redrawn"):
        c = generate_cohort(CohortSpec(20, model, max_stay=20, seed=0))
    assert c.n_resampled > 0
    assert all(r.J <= 21 for r in c.records)


def test_record_equality():
    a = PatientRecord("x", [1.0], [[1.0, 2.0]], 1)
    assert a == PatientRecord("x", [1.0], [[1.0, 2.0]], 1)
    assert a != PatientRecord("x", [1.0], [[1.0, 2.5]], 1)
