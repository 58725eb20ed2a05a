import io

import numpy as np
import pytest

from multifused.data import (PredictorSpec, PreprocessReport, apply_report, encode_categorical,
                             impute, ingest_csv, lower_median, preprocess, read_schema,
                             standardize, write_panel_csv)
from multifused.exceptions import EncodingError, ImputationError, IngestError

SMALL = """id,time,y,age,sex
a,1,yes,1.0,F
a,2,no,2.5,F
b,1,no,0.5,M
b,2,NA,NA,M
c,1,yes,3.0,NA
c,2,yes,4.0,F
"""


def ingest(text, **kw):
    return ingest_csv(io.StringIO(text), **kw)


def test_ingest_fixture_dims():
    raw = ingest(SMALL)
    assert (raw.n, raw.T, raw.p) == (3, 2, 2)
    assert raw.classes == ("yes", "no")
    assert raw.schema["age"].kind == "numeric"
    assert raw.schema["sex"] == PredictorSpec("categorical", ("F", "M"))


def test_missing_outcome_leaves_individual_out():
    data, _ = preprocess(ingest(SMALL))
    assert 1 not in data.I(1)
    assert list(data.I(0)) == [0, 1, 2]


def test_class_order_override():
    raw = ingest(SMALL, classes=("no", "yes"))
    assert raw.outcome[0].tolist() == [2, 1]


def test_time_offset_and_gaps():
    raw = ingest("id,time,y,x\na,3,1,0\na,5,2,1\nb,4,1,2\n")
    assert raw.times == (3, 4, 5)
    assert raw.outcome.tolist() == [[1, 0, 2], [0, 1, 0]]


@pytest.mark.parametrize("text, fragment", [
    ("id,time,y,x\na,1,1,0\na,1,2,3\n", "id='a', time=1"),
    ("id,time,y,x\na,1,1,0\nb,1,2\n", "line 3"),
    ("id,time,y,x\na,one,1,0\n", "not an integer"),
    ("wrong,time,y\n", "header"),
    ("", "empty"),
    ("id,time,y,x\na,1,1,0\nb,1,1,2\n", "two outcome classes"),
])
def test_ingest_errors(text, fragment):
    with pytest.raises(IngestError, match=fragment):
        ingest(text)


def test_unknown_label():
    with pytest.raises(IngestError, match="unknown outcome"):
        ingest(SMALL, classes=("yes", "maybe"))


def test_schema_non_numeric_value():
    with pytest.raises(IngestError, match="non-numeric"):
        ingest(SMALL, schema={"sex": PredictorSpec("numeric")})


def test_read_schema():
    classes, specs = read_schema(io.StringIO(
        '{"classes": ["no", "yes"], "predictors": {"sex": {"kind": "categorical", '
        '"levels": ["F", "M"], "time_invariant": true}, "age": {}}}'))
    assert classes == ("no", "yes")
    assert specs["sex"].time_invariant and specs["sex"].levels == ("F", "M")
    assert specs["age"].kind == "numeric"


def test_encode_three_levels():
    raw = ingest("id,time,y,g\na,1,1,B\nb,1,2,A\nc,1,1,NA\nd,1,2,C\n",
                 schema={"g": PredictorSpec("categorical", ("A", "B", "C"))})
    enc = encode_categorical(raw)
    assert enc.predictors == ("g.2", "g.3")
    assert (enc.values["g.2"][0, 0], enc.values["g.3"][0, 0]) == (1.0, 0.0)
    assert (enc.values["g.2"][1, 0], enc.values["g.3"][1, 0]) == (0.0, 0.0)
    assert np.isnan(enc.values["g.2"][2, 0]) and np.isnan(enc.values["g.3"][2, 0])
    assert enc.encoding["g"]["reference"] == "A"


def test_encode_two_levels_single_indicator():
    enc = encode_categorical(ingest(SMALL))
    assert enc.predictors == ("age", "sex.2")


def test_encode_rejects_undeclared_level():
    raw = ingest("id,time,y,g\na,1,1,Z\nb,1,2,A\n",
                 schema={"g": PredictorSpec("categorical", ("A", "B"))})
    with pytest.raises(EncodingError, match="Z"):
        encode_categorical(raw)


def test_impute_carry_forward():
    raw = ingest("id,time,y,x\na,1,1,5\na,2,2,NA\nb,1,2,1\nb,2,1,9\n")
    out = impute(raw)
    assert out.values["x"][0, 1] == 5
    assert out.imputation["counts"]["x"]["carry_forward"] == 1


def test_impute_cross_sectional_median():
    raw = ingest("id,time,y,x\na,1,1,1\nb,1,2,3\nc,1,1,100\nd,1,2,NA\nd,2,1,7\n")
    out = impute(raw)
    assert out.values["x"][3, 0] == 3
    assert out.imputation["counts"]["x"]["cross_sectional_median"] == 1


def test_impute_global_median_when_time_empty():
    raw = ingest("id,time,y,x\na,1,1,NA\na,2,2,4\nb,1,2,NA\nb,2,1,8\nc,2,1,6\n")
    out = impute(raw)
    assert out.values["x"][0, 0] == 6 and out.values["x"][1, 0] == 6


def test_impute_time_invariant_from_future():
    raw = ingest("id,time,y,sex\na,1,1,NA\na,2,2,NA\na,3,1,M\nb,1,2,F\nb,2,1,F\nb,3,2,F\n",
                 schema={"sex": PredictorSpec("categorical", ("F", "M"), time_invariant=True)})
    out = impute(encode_categorical(raw))
    assert out.values["sex.2"][0].tolist() == [1.0, 1.0, 1.0]
    assert out.imputation["counts"]["sex.2"]["any_time"] == 2


def test_impute_time_invariant_past_wins_ties():
    raw = ingest("id,time,y,h\na,1,1,1\na,2,2,NA\na,3,1,3\nb,1,2,0\n",
                 schema={"h": PredictorSpec("numeric", time_invariant=True)})
    assert impute(raw).values["h"][0, 1] == 1


def test_impute_all_missing_errors():
    with pytest.raises(ImputationError, match="x"):
        impute(ingest("id,time,y,x\na,1,1,NA\nb,1,2,NA\n"))


def test_no_missing_after_impute():
    data, _ = preprocess(ingest(SMALL))
    assert np.all(np.isfinite(data.X))


def test_lower_median():
    assert lower_median([4, 1, 3, 2]) == 2
    assert lower_median([1, 3, 100]) == 3


def test_standardize_population_sd():
    raw = ingest("id,time,y,x\na,1,1,1\nb,1,2,2\nc,1,1,3\n")
    data, report = standardize(raw)
    np.testing.assert_allclose(data.X[:, 0, 0], [-1.224744871391589, 0, 1.224744871391589])
    assert report.sd_convention == "population"


def test_standardize_constant_column():
    raw = ingest("id,time,y,x,z\na,1,1,1,7\nb,1,2,2,7\nc,1,1,3,7\n")
    data, report = standardize(raw)
    assert np.all(data.X[:, 1] == 0)
    assert report.constant == ("z",)


def test_standardize_pooled_moments(rng):
    rows = ["id,time,y,u,v"]
    for i in range(40):
        for t in range(1, 6):
            y = "NA" if rng.random() < 0.2 else str(rng.integers(1, 4))
            rows.append(f"i{i},{t},{y},{rng.normal(3, 2)!r},{rng.exponential(5)!r}")
    data, _ = preprocess(ingest("\n".join(rows) + "\n", classes=("1", "2", "3")))
    obs = data.observed
    for j in range(2):
        pooled = data.X[:, j][obs]
        assert abs(pooled.mean()) <= 1e-12
        assert abs(pooled.std() - 1) <= 1e-12


def test_replay_is_bit_identical():
    raw = ingest(SMALL)
    data, report = preprocess(raw)
    again = apply_report(raw, PreprocessReport.from_json(report.to_json()))
    np.testing.assert_array_equal(data.X, again.X)
    np.testing.assert_array_equal(data.Y, again.Y)
    assert preprocess(raw)[1].to_json() == report.to_json()


def test_replay_on_new_individuals():
    raw = ingest(SMALL)
    _, report = preprocess(raw.subset([0, 1]))
    held = apply_report(raw.subset([2]), report)
    assert held.n == 1 and np.all(np.isfinite(held.X))


def test_permuting_individuals(rng):
    rows = ["id,time,y,u,g"]
    for i in range(12):
        for t in range(1, 4):
            u = "NA" if rng.random() < 0.3 else repr(rng.normal())
            g = "NA" if rng.random() < 0.2 else "abc"[rng.integers(3)]
            rows.append(f"i{i},{t},{rng.integers(1, 3)},{u},{g}")
    header, body = rows[0], rows[1:]
    raw = ingest("\n".join(rows) + "\n", classes=("1", "2"))
    base, _ = preprocess(raw)
    perm = rng.permutation(12)
    shuffled = [r for i in perm for r in body[3 * i:3 * i + 3]]
    raw2 = ingest("\n".join([header] + shuffled) + "\n", classes=("1", "2"))
    other, _ = preprocess(raw2)
    np.testing.assert_array_equal(other.X, base.X[perm])
    np.testing.assert_array_equal(other.Y, base.Y[perm])


def test_write_then_ingest_round_trip(tmp_path):
    data, _ = preprocess(ingest(SMALL))
    path = tmp_path / "panel.csv"
    write_panel_csv(data, path)
    back = ingest_csv(path, classes=data.class_labels)
    assert back.ids == data.ids
    np.testing.assert_array_equal(back.outcome, data.Y)
    for j, name in enumerate(data.predictor_names):
        np.testing.assert_array_equal(back.values[name], data.X[:, j])
