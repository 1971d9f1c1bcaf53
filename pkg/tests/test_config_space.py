from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acwarm.config_space import CyclicConditionError, DomainError, SpaceError, SpaceSyntaxError, parse_space

COND_SPACE = "a cat {x,y} default x\nb int [1,10] default 5\nb | a in {y}"


def active_names(space, values):
    """Independent recursive activity evaluator."""
    conds = {}
    for c in space.conditions:
        conds.setdefault(c.child, []).append(c)

    def active(name):
        return all(active(c.parent) and values.get(c.parent) in c.values for c in conds.get(name, []))

    return {p.name for p in space.parameters if active(p.name)}


def test_parse_single_real():
    space = parse_space("p real [0.0, 1.0] default 0.5")
    assert space.names == ["p"]
    assert space["p"].default == 0.5


def test_parse_condition():
    space = parse_space(COND_SPACE)
    assert not space.is_active("b", {"a": "x"})
    assert space.is_active("b", {"a": "y"})


def test_default_outside_range():
    with pytest.raises(DomainError):
        parse_space("p real [0.0, 1.0] default 2.0")


def test_syntax_error_has_line_number():
    with pytest.raises(SpaceSyntaxError) as info:
        parse_space("p real [0.0, 1.0] default 0.5\nq what\n")
    assert info.value.lineno == 2


def test_cycle_rejected():
    text = "a cat {x,y} default x\nb cat {x,y} default x\na | b in {y}\nb | a in {y}"
    with pytest.raises(CyclicConditionError):
        parse_space(text)


@pytest.mark.parametrize("text", [
    "p real [1.0, 1.0] default 1.0",
    "p real [0.0, 1.0] default 0.5 log",
    "p cat {x,x} default x",
    "b | a in {y}",
    "a cat {x,y} default x\nb int [1,10] default 5\nb | a in {z}",
])
def test_invalid_declarations(text):
    with pytest.raises(SpaceError):
        parse_space(text)


def test_comments_and_blank_lines():
    space = parse_space("# heading\n\np int [0, 3] default 1  \n")
    assert space["p"].default == 1


def test_defaults():
    assert dict(parse_space("p real [0.0, 1.0] default 0.5").default_configuration()) == {"p": 0.5}
    assert dict(parse_space(COND_SPACE).default_configuration()) == {"a": "x"}
    alt = parse_space(COND_SPACE.replace("default x", "default y"))
    assert dict(alt.default_configuration()) == {"a": "y", "b": 5}


def test_categorical_frequency():
    space = parse_space("p cat {x,y} default x")
    rng = np.random.default_rng(3)
    draws = [space.sample_configuration(rng)["p"] for _ in range(10000)]
    assert abs(draws.count("x") / 10000 - 0.5) < 0.02


def test_sampling_deterministic():
    space = parse_space(COND_SPACE)
    a = [space.sample_configuration(np.random.default_rng(5)) for _ in range(3)]
    b = [space.sample_configuration(np.random.default_rng(5)) for _ in range(3)]
    assert a == b


def test_log_sampling_uniform_in_log_space():
    space = parse_space("p real [0.01, 100.0] default 1.0 log")
    rng = np.random.default_rng(0)
    logs = np.log10([space.sample_configuration(rng)["p"] for _ in range(4000)])
    assert abs(np.mean(logs < 0) - 0.5) < 0.03


def test_neighbor_activates_child():
    space = parse_space(COND_SPACE)
    config = space.make_configuration({"a": "x"})
    flips = [n for n in space.neighbors(config, np.random.default_rng(0), 10) if n["a"] == "y"]
    assert flips and all("b" in n for n in flips)


def test_single_categorical_neighbors():
    space = parse_space("p cat {x,y} default x")
    config = space.make_configuration({"p": "x"})
    assert all(dict(n) == {"p": "y"} for n in space.neighbors(config, np.random.default_rng(1), 5))


def test_neighbor_count():
    space = parse_space(COND_SPACE + "\nc real [0, 1] default 0.2")
    config = space.default_configuration()
    assert len(space.neighbors(config, np.random.default_rng(2), 10)) == 10


def test_neighbors_change_one_parameter():
    space = parse_space("u real [0, 1] default 0.5\nv real [0, 1] default 0.5\nw cat {p,q,r} default p")
    config = space.default_configuration()
    for n in space.neighbors(config, np.random.default_rng(4), 50):
        assert sum(n[k] != config[k] for k in config) == 1


def test_canonical_equality():
    space = parse_space(COND_SPACE)
    a = space.make_configuration({"a": "x", "b": 7})
    b = space.make_configuration({"a": "x"})
    assert a == b and hash(a) == hash(b) and a.config_id == b.config_id
    with pytest.raises(DomainError):
        space.make_configuration({"a": "x", "b": 7}, strict=True)


def test_unknown_parameter_named():
    space = parse_space(COND_SPACE)
    with pytest.raises(DomainError, match="zz"):
        space.make_configuration({"a": "x", "zz": 1})


# --------------------------------------------------------------- properties

@st.composite
def spaces(draw):
    n = draw(st.integers(1, 6))
    lines, cats = [], []
    for i in range(n):
        kind = draw(st.sampled_from(["real", "int", "cat", "log"]))
        if kind == "cat":
            k = draw(st.integers(1, 4))
            values = [f"v{j}" for j in range(k)]
            lines.append(f"p{i} cat {{{','.join(values)}}} default {values[draw(st.integers(0, k - 1))]}")
            cats.append((i, values))
        elif kind == "int":
            lo = draw(st.integers(-5, 5))
            hi = lo + draw(st.integers(1, 20))
            lines.append(f"p{i} int [{lo}, {hi}] default {draw(st.integers(lo, hi))}")
        elif kind == "log":
            lines.append(f"p{i} real [0.001, 1000.0] default 1.0 log")
        else:
            lines.append(f"p{i} real [-1.5, 2.5] default 0.25")
    # conditions only point to earlier categoricals, so the graph is acyclic
    for i in range(n):
        parents = [(j, v) for j, v in cats if j < i]
        if parents and draw(st.booleans()):
            j, values = draw(st.sampled_from(parents))
            chosen = draw(st.lists(st.sampled_from(values), min_size=1, unique=True))
            lines.append(f"p{i} | p{j} in {{{','.join(chosen)}}}")
    return parse_space("\n".join(lines))


@settings(max_examples=60, deadline=None)
@given(spaces())
def test_round_trip(space):
    assert parse_space(space.to_text()) == space


@settings(max_examples=60, deadline=None)
@given(spaces(), st.integers(0, 2**32 - 1))
def test_activity_closure(space, seed):
    rng = np.random.default_rng(seed)
    configs = [space.default_configuration(), space.sample_configuration(rng)]
    configs += space.neighbors(configs[1], rng, 5)
    for config in configs:
        assert set(config) == active_names(space, dict(config))
        space.validate(config)
