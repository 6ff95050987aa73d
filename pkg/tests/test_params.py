import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multilevel_readout.params import (
    CONFIG_ENV, CodeSpec, ConfigError, RandomStream, SystemParams, builtin_codes, dump_params,
    get_code, load_params, stream_id,
)


def test_empty_config_gives_defaults():
    p = load_params({})
    assert p.storage_T1 == pytest.approx(0.99e-3)
    assert p == SystemParams()


def test_negative_time_rejected():
    with pytest.raises(ConfigError):
        load_params({"storage_T1": -1})


@pytest.mark.parametrize("bad", [{"nonsense": 1.0}, {"ancilla_thermal_pop": 1.0},
                                 {"delta_0": True}, {"ancilla_T2_ge": 1.0}])
def test_malformed_configs_rejected(bad):
    with pytest.raises(ConfigError):
        load_params(bad)


def test_partial_override_keeps_other_fields():
    p = load_params({"ancilla_thermal_pop": 0})
    ref = SystemParams()
    assert p.ancilla_thermal_pop == 0.0
    for k, v in ref.to_dict().items():
        if k != "ancilla_thermal_pop":
            assert getattr(p, k) == v


def test_yaml_round_trip(tmp_path):
    p = SystemParams(storage_T1=1.23e-3, n_max=8, delta_0=0.04)
    path = tmp_path / "p.yaml"
    dump_params(p, path)
    assert load_params(path) == p
    # idempotent: dumping the reloaded parameters gives the same text
    assert dump_params(load_params(path)) == path.read_text()


def test_config_from_environment(tmp_path, monkeypatch):
    path = tmp_path / "env.yaml"
    path.write_text("t_map: 3.0e-6\n")
    monkeypatch.setenv(CONFIG_ENV, str(path))
    assert load_params().t_map == 3.0e-6


def test_effective_rates():
    p = SystemParams()
    assert p.kut == pytest.approx(2.7e-4)
    assert p.kdt == pytest.approx(p.cycle_time / p.storage_T1 + p.demolition_prob)


@pytest.mark.parametrize("c", builtin_codes(), ids=lambda c: c.name)
def test_builtin_code_invariants(c):
    for logical in (0, 1):
        assert sum(c.weights(logical).values()) == pytest.approx(1.0, abs=1e-12)
    assert not (c.support(0) & c.support(1))
    gap = min(abs(a - b) for a in c.support(0) for b in c.support(1))
    assert c.distance == gap
    prior = c.prior_vector(10)
    assert prior.sum() == pytest.approx(1.0, abs=1e-15)
    assert sum(prior[n] for n in c.support(0)) == pytest.approx(0.5)


def test_fock_0_5():
    c = get_code("fock-0-5")
    assert c.flip_set == frozenset({0, 1}) and c.distance == 5


def test_binomial_1_prior():
    p = get_code("binomial-1").prior_vector(10)
    assert (p[0], p[2], p[4]) == (0.25, 0.5, 0.25)


def test_fock_0_2_codewords():
    c = get_code("fock-0-2")
    assert c.support(0) == {0} and c.support(1) == {2} and c.distance == 2


def test_codespec_rejects_overlap():
    with pytest.raises(ValueError):
        CodeSpec("bad", ((0, 1.0),), ((0, 0.6), (2, 0.8)), frozenset({0}), 2)


def test_codespec_rejects_wrong_distance():
    with pytest.raises(ValueError):
        CodeSpec("bad", ((0, 1.0),), ((3, 1.0),), frozenset({0}), 2)


def test_yaml_exponent_without_dot():
    assert load_params({"t_map": "4e-06"}).t_map == 4e-6
    with pytest.raises(ConfigError):
        load_params({"t_map": "soon"})


def test_unknown_code():
    with pytest.raises(KeyError):
        get_code("fock-0-9")


def test_stream_reproducibility():
    a = RandomStream(5, stream_id("x"))
    b = RandomStream(5, stream_id("x"))
    assert [a.next_u64() for _ in range(5)] == [b.next_u64() for _ in range(5)]
    c = RandomStream(5, stream_id("y"))
    assert c.next_u64() != RandomStream(5, stream_id("x")).next_u64()
    np.testing.assert_array_equal(a.numpy().random(4), b.numpy().random(4))


def test_streams_look_independent():
    a = RandomStream(1, 0).numpy().random(200_000)
    b = RandomStream(1, 1).numpy().random(200_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 5 / math.sqrt(a.size)


@settings(max_examples=50, deadline=None)
@given(t1=st.floats(1e-6, 1.0), pop=st.floats(0.0, 0.99), nmax=st.integers(1, 30))
def test_load_dump_idempotent(t1, pop, nmax):
    p = SystemParams(storage_T1=t1, ancilla_thermal_pop=pop, n_max=nmax)
    import yaml

    assert load_params(yaml.safe_load(dump_params(p))) == p
