import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnsp.io import (
    FormatError,
    chain_config,
    dumps_dataset,
    dumps_model,
    load_config,
    load_dataset,
    load_model,
    mcem_config,
    model_from_json,
    save_dataset,
    save_model,
    sequence_from_json,
    validate_config,
)
from dnsp.mcem import FittedModel
from dnsp.mcmc import ChainConfig
from dnsp.model import EventSequence, KernelParams, SequenceParams, fully_connected_architecture, n_hidden_architecture


def sample_model():
    rng = np.random.default_rng(0)
    arch = fully_connected_architecture(
        (2, 2, 1), lambda e: KernelParams(*rng.normal(size=3)), lambda e: KernelParams(*rng.normal(size=3)))
    sp = SequenceParams((0.123456789,), {n: 0.1 * (i + 1) / 3 for i, n in enumerate(arch.hidden_nodes())})
    return FittedModel(arch, sp, [sp, sp.copy()])


def test_model_round_trip_bytes(tmp_path):
    m = sample_model()
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_model(m, p1)
    loaded = load_model(p1)
    save_model(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(loaded.arch.real_vector(), m.arch.real_vector())
    assert loaded.arch.K == m.arch.K and loaded.default_params.mu == m.default_params.mu


def test_dataset_round_trip_bytes(tmp_path):
    seqs = [EventSequence(5.0, (np.array([0.1, 1.0 / 3]), np.array([2.0]))), EventSequence(2.5, (np.empty(0),) * 2)]
    p = tmp_path / "d.jsonl"
    save_dataset(seqs, p)
    again = load_dataset(p)
    assert dumps_dataset(again) == p.read_text()
    assert again[0].events[0].tolist() == [0.1, 1.0 / 3]


def test_dataset_types_are_one_indexed(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"T": 3, "events": [{"t": 1.0, "k": 2}, {"t": 2.0, "k": 1}]}\n')
    (seq,) = load_dataset(p)
    assert seq.events[1].tolist() == [1.0] and seq.events[0].tolist() == [2.0]
    assert load_dataset(p, n_types=4)[0].n_types == 4


@pytest.mark.parametrize("line, msg", [
    ('{"T": 3, "events": [{"t": 2.0, "k": 1}, {"t": 1.0, "k": 1}]}', "sorted"),
    ('{"T": 3, "events": [{"t": 4.0, "k": 1}]}', "[0, T]"),
    ('{"T": 3, "events": [{"t": 1.0, "k": 0}]}', "integer >= 1"),
    ('{"T": 3, "events": [{"t": 1.0, "k": 5}]}', "exceeds"),
    ('{"T": -1, "events": []}', "positive"),
    ('{"T": 3, "events": [], "extra": 1}', "keys"),
    ('{"T": 3, "events": [{"t": 1.0}]}', "keys"),
    ('not json', "line 1"),
])
def test_dataset_rejections(tmp_path, line, msg):
    p = tmp_path / "d.jsonl"
    p.write_text(line + "\n")
    with pytest.raises(FormatError, match=msg[:6].replace("[", r"\[")):
        load_dataset(p, n_types=2)


def test_model_rejections():
    good = json.loads(dumps_model(sample_model()))
    for mutate in (lambda d: d.update(format="x"), lambda d: d.update(version=99),
                   lambda d: d["architecture"].pop("K"),
                   lambda d: d["architecture"]["real_edges"][0].update({"from": [1, 0]}),
                   lambda d: d["default_params"].update(mu=[-1.0])):
        bad = json.loads(json.dumps(good))
        mutate(bad)
        with pytest.raises(FormatError):
            model_from_json(bad)


def test_config_schema_rejects_unknown_keys(tmp_path):
    for bad in ({"sead": 1}, {"chain": {"burn": 3}}, {"mcem": {"r": -1}}, {"predict": {"n_mc": 0}},
                {"backend": "fortran"}, {"chain": {"move_probs": {"resample": 0.5, "flip": 0.6, "swap": 0.2}}}):
        with pytest.raises(FormatError):
            validate_config(bad)
            chain_config(bad.get("chain"))
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(FormatError):
        load_config(p)


def test_config_to_objects():
    cfg = validate_config({"chain": {"burn_in": 5, "n_samples": 3, "thin": 2,
                                     "move_probs": {"resample": 0.3, "flip": 0.5, "swap": 0.2}},
                           "mcem": {"r": 0.1, "max_iters": 7, "adam_betas": [0.8, 0.99]}})
    c = chain_config(cfg["chain"])
    assert (c.burn_in, c.n_samples, c.thin) == (5, 3, 2) and c.move_probs.p_flip == 0.5
    m = mcem_config(cfg)
    assert m.r == 0.1 and m.max_iters == 7 and m.adam_betas == (0.8, 0.99) and m.chain == c
    assert chain_config(None) == ChainConfig()
    assert load_config(None) == {}


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(0.0, 10.0), max_size=6), min_size=1, max_size=3))
def test_dataset_json_round_trip_property(per_type):
    seq = EventSequence(10.0, tuple(np.unique(np.array(t, dtype=float)) for t in per_type))
    text = dumps_dataset([seq])
    back = sequence_from_json(json.loads(text), seq.n_types)
    assert dumps_dataset([back]) == text


def test_model_json_preserves_wiring():
    arch = n_hidden_architecture(2, 2, (1.0, 2.0, 3.0))
    m = FittedModel(arch, SequenceParams((0.5,), {n: 0.1 for n in arch.hidden_nodes()}))
    back = model_from_json(json.loads(dumps_model(m)))
    assert back.arch.wiring == "2-hidden" and back.arch.real_keys == arch.real_keys
