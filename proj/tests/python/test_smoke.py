"""Smoke tests for the python bindings; run after `pip install`."""

import math
import os

import pytest

import nlq

TWO_STAGE = """
t2(a). t2(b).
t(X) :- t2(X), o(X, Y).
@existential
t1(a). t1(c).
o(X, Z) :- t1(X).
@deterministic-facts
s(a, b) : 0.3.
s(b, c) : 0.7.
r(b) : 0.4 | r(c) : 0.1.
w(X, Y) :- s(X, Y), r(Y).
v(X, PROB) :- w(X, Y).
u(max(W)) :- v(X, W).
Ans(X, P) :- v(X, P), t(X).
Ans(X, P) :- v(X, P), u(P).
"""


def test_run_two_stage():
    out = nlq.run(TWO_STAGE)
    assert len(out["results"]) == 2
    first = out["results"][0]
    assert len(first["rows"]) == 1
    sym, p = first["rows"][0]
    assert sym == "a"
    assert math.isclose(p, 0.12, abs_tol=1e-9)
    assert first["trace"]["pers"][0]["strategy"] in ("lifted", "compiled")
    assert "step" in first["trace_text"]


def test_marginals_match_oracle():
    lifted = nlq.marginals(TWO_STAGE, per_index=0)
    oracle = nlq.marginals(TWO_STAGE, per_index=0, oracle=True)
    assert lifted["head"] == "v"
    assert set(lifted["probabilities"]) == set(oracle["probabilities"]) == {("a",), ("b",)}
    for key, p in oracle["probabilities"].items():
        assert math.isclose(lifted["probabilities"][key], p, abs_tol=1e-9)
    assert math.isclose(oracle["probabilities"][("a",)], 0.12, abs_tol=1e-9)
    assert math.isclose(oracle["probabilities"][("b",)], 0.07, abs_tol=1e-9)


def test_parse_error_raises():
    with pytest.raises(ValueError):
        nlq.run("p(X :- q(X).")


def test_generate_dataset(tmp_path):
    files = nlq.generate_dataset(str(tmp_path), studies=4, terms=3, voxels=8, regions=2, seed=7)
    assert len(files) == 5
    for f in files:
        assert os.path.getsize(f) > 0
    again = nlq.generate_dataset(
        str(tmp_path / "b"), studies=4, terms=3, voxels=8, regions=2, seed=7
    )
    for a, b in zip(files, again):
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()
