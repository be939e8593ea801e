import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mile.harness import (
    BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED, ConfigError, ExperimentConfig, RecordsFormatError, ReplicateRecord,
    bootstrap_median_sd, format_summary, parse_true_params, read_records_csv, run_experiment, summarize,
    write_records_csv, write_summary_csv,
)
from oracles import bootstrap_median_sd_reference


def rec(theta, rep=0, method="mile", **kw):
    return ReplicateRecord("beta-bernoulli", method, 10, 20, rep, (theta,), **kw)


def test_one_replicate_gives_one_record_per_method():
    for model, m in (("beta-bernoulli", 30), ("log-cauchy", 30), ("gmm", 1)):
        cfg = ExperimentConfig(model, None, None, 30, m, 1, 1)
        assert len(run_experiment(cfg)) == len(cfg.methods)


def test_bsr_single_replicate():
    from mile.optim import CubeSearchConfig

    cfg = ExperimentConfig("bsr", None, None, 3, 30, 1, 1, cube=CubeSearchConfig(max_iterations=3))
    (r,) = run_experiment(cfg)
    assert len(r.theta) == 5 and r.dz_mean is not None


def test_records_are_sorted_and_deterministic(tmp_path):
    cfg = ExperimentConfig("beta-bernoulli", ("mile", "em"), {"theta": 3.0}, 20, 30, 4, 7, workers=1)
    recs = run_experiment(cfg)
    assert [(r.method, r.rep) for r in recs] == sorted((r.method, r.rep) for r in recs)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_records_csv(recs, a, include_timing=False)
    write_records_csv(run_experiment(ExperimentConfig("beta-bernoulli", ("mile", "em"), {"theta": 3.0}, 20, 30, 4, 7,
                                                      workers=2)), b, include_timing=False)
    assert a.read_bytes() == b.read_bytes()


def test_summary_basic_statistics():
    rows = summarize([rec(1.0, 0), rec(2.0, 1), rec(3.0, 2)])
    assert rows[0].est == (2.0,) and rows[0].sd == (1.0,)
    rows = summarize([rec(4.0, k) for k in range(5)])
    assert rows[0].sd == (0.0,)
    assert "theta" in format_summary(rows)


def test_summary_skips_failed_replicates():
    rows = summarize([rec(1.0, 0), rec(3.0, 1), ReplicateRecord("beta-bernoulli", "mile", 10, 20, 2, (None,),
                                                                converged=False)])
    assert rows[0].n == 2 and rows[0].est == (2.0,)
    assert rows[0].converged == pytest.approx(2 / 3)


def test_bootstrap_matches_reference_resampler():
    v = np.random.default_rng(9).normal(size=20)
    ref = bootstrap_median_sd_reference(v, BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED)
    assert bootstrap_median_sd(v) == pytest.approx(ref, rel=1e-14)


def test_empty_records_file_is_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    write_records_csv([], path)
    assert path.read_text().count("\n") == 1
    assert read_records_csv(path) == []


def test_wrong_column_count_names_line(tmp_path):
    path = tmp_path / "r.csv"
    write_records_csv([rec(1.0, 0), rec(2.0, 1)], path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2] + ",extra"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(RecordsFormatError, match=":3:"):
        read_records_csv(path)


def test_bad_converged_flag(tmp_path):
    path = tmp_path / "r.csv"
    write_records_csv([rec(1.0)], path)
    path.write_text(path.read_text().replace("true", "yes"))
    with pytest.raises(RecordsFormatError, match=":2:"):
        read_records_csv(path)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
maybe = st.one_of(st.none(), finite)
records = st.builds(
    ReplicateRecord,
    model=st.sampled_from(["beta-bernoulli", "log-cauchy"]),
    method=st.sampled_from(["mile", "em", "mom"]),
    N=st.integers(1, 10**6), M=st.integers(1, 10**6), rep=st.integers(0, 10**6),
    theta=st.tuples(maybe, maybe),
    loglik=maybe, dz_mean=maybe, dz_median=maybe, dz_sd=maybe, accuracy=maybe, time_ms=maybe,
    converged=st.booleans(),
)


@settings(max_examples=100, deadline=None)
@given(st.lists(records, max_size=30))
def test_round_trip_property(tmp_path_factory, recs):
    path = tmp_path_factory.mktemp("rt") / "r.csv"
    write_records_csv(recs, path, n_params=2)
    assert read_records_csv(path) == recs


def test_round_trip_1000_random_records(tmp_path):
    gen = np.random.default_rng(10)

    def val():
        return None if gen.random() < 0.1 else float(gen.standard_normal() * 10.0 ** gen.integers(-300, 300))

    recs = [
        ReplicateRecord("gmm", str(gen.choice(["mile", "em"])), int(gen.integers(1, 1000)), 1, k,
                        tuple(val() for _ in range(9)), val(), val(), val(), val(), val(), val(), bool(gen.random() < 0.5))
        for k in range(1000)
    ]
    path = tmp_path / "r.csv"
    write_records_csv(recs, path)
    assert read_records_csv(path) == recs


def test_round_trip_infinities(tmp_path):
    r = rec(math.inf, dz_mean=-math.inf)
    path = tmp_path / "inf.csv"
    write_records_csv([r], path)
    assert read_records_csv(path) == [r]


def test_summary_csv(tmp_path):
    path = tmp_path / "s.csv"
    write_summary_csv(summarize([rec(1.0, 0, dz_mean=0.1, dz_median=0.0), rec(2.0, 1, dz_mean=0.3, dz_median=0.2)]), path)
    text = path.read_text()
    assert "Est theta" in text and "dZ median" in text


@pytest.mark.parametrize("model, methods, msg", [
    ("log-cauchy", ("em",), "em not available for log-cauchy"),
    ("bsr", ("em",), "em not available for bsr"),
    ("beta-bernoulli", ("mom",), "mom not available"),
    ("beta-bernoulli", ("sgd",), "unknown method"),
    ("poisson", None, "unknown model"),
])
def test_config_rejects_methods(model, methods, msg):
    with pytest.raises(ConfigError, match=msg):
        ExperimentConfig(model, methods)


def test_config_other_checks():
    with pytest.raises(ConfigError, match="M = 1"):
        ExperimentConfig("gmm", None, None, 10, 5)
    with pytest.raises(ConfigError):
        ExperimentConfig("beta-bernoulli", None, None, 0)
    assert ExperimentConfig("gmm", None, None, 10, 1).param_names[0] == "mu_1"


def test_parse_true_params():
    assert parse_true_params("beta-bernoulli", ["theta=3"]) == {"theta": 3.0}
    g = parse_true_params("gmm", ["mu=-1,1", "var=1,2", "pi=0.5,0.5"])
    assert g["mu"] == (-1.0, 1.0) and len(g["var"]) == 2
    for bad in (["theta"], ["theta=x"], ["rho=1"], ["theta=-2"], ["theta=inf"]):
        with pytest.raises(ConfigError):
            parse_true_params("beta-bernoulli", bad)
    with pytest.raises(ConfigError):
        parse_true_params("gmm", ["mu=-1,1"])
