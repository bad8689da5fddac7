import itertools
import math

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from scheduler.dsl.expr import (
    BinOp,
    Call,
    Const,
    FeatureRef,
    Neg,
    binop,
    compile_expr,
    const,
    depth,
    evaluate,
    feature,
    neg,
    render_expr,
)
from scheduler.dsl.library import (
    BUILTIN_NAMES,
    PatchEdit,
    apply_patch,
    builtin,
    compose,
    has_term,
    with_params,
)
from scheduler.dsl.parser import parse_expr, parse_policy, render_policy
from scheduler.dsl.policy import DEFAULT_SLICE, policy_id
from scheduler.errors import (
    DuplicateParam,
    EmptyComposition,
    EvalDivisionByZero,
    InvalidEdit,
    PolicySyntaxError,
    SchedCPError,
    UnknownBuiltin,
    UnknownIdentifier,
)
from scheduler.models import FEATURES, TaskRuntimeState
from scheduler.sim.engine import dispatch_key


def test_builtin_orderings():
    state = TaskRuntimeState(arrival_time=5.0, vruntime=1024.0, expected_runtime=3e7)

    assert evaluate(builtin("fifo").priority_expr, state) == -5.0
    assert evaluate(builtin("ljf").priority_expr, state) == 3e7
    assert evaluate(builtin("sjf").priority_expr, state) == -3e7
    assert evaluate(builtin("fair_vruntime").priority_expr, state) == -1024.0


def test_builtin_shapes():
    fifo = builtin("fifo")
    assert fifo.priority_expr == Neg(arg=FeatureRef(name="arrival_time"))
    assert not fifo.preemptive and fifo.slice_expr is None

    fair = builtin("fair_vruntime")
    assert fair.preemptive
    assert fair.params["slice_base"].value == 3000
    assert fair.slice_fn()({}) == 3000


def test_unknown_builtin():
    with pytest.raises(UnknownBuiltin):
        builtin("cfs")


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_survive_render_and_parse(name):
    spec = builtin(name)
    again = parse_policy(render_policy(spec))
    assert again == spec
    assert policy_id(again) == policy_id(spec)


def test_unknown_identifier_names_the_culprit():
    with pytest.raises(UnknownIdentifier) as excinfo:
        parse_policy("name = typo\npriority = -vruntime + 0.5 * wait_tim\n")
    assert excinfo.value.name == "wait_tim"


def test_syntax_error_position():
    with pytest.raises(PolicySyntaxError) as excinfo:
        parse_policy("name = broken\npriority = -vruntime +\n")
    assert excinfo.value.line == 2


def test_duplicate_param():
    source = "priority = q\nparam q = 1 in [0, 2]\nparam q = 2 in [0, 2]\n"
    with pytest.raises(DuplicateParam):
        parse_policy(source)


def test_slice_rules():
    with pytest.raises(PolicySyntaxError):
        parse_policy("preemptive = true\npriority = -vruntime\nslice = inf\n")
    spec = parse_policy("preemptive = true\npriority = -vruntime\n")
    assert spec.slice_expr == Const(value=float(DEFAULT_SLICE))


def test_negative_literal_and_negated_constant():
    assert parse_expr("-5") == Const(value=-5.0)
    assert render_expr(neg(const(5))) == "-(5.0)"
    assert parse_expr(render_expr(neg(const(5)))) == neg(const(5))


def test_precedence_keeps_tree_shape():
    expr = parse_expr("expected_runtime - (wait_time - vruntime) * 2")
    assert isinstance(expr, BinOp) and expr.op == "sub"
    assert parse_expr(render_expr(expr)) == expr


def test_division_by_zero_at_evaluation():
    compiled = compile_expr(parse_expr("1 / exec_runtime"), {})
    with pytest.raises(EvalDivisionByZero):
        compiled({"exec_runtime": 0.0})


def test_calls():
    state = {"wait_time": 50.0, "vruntime": 10.0}
    assert evaluate(parse_expr("min(wait_time, vruntime)"), state) == 10.0
    assert evaluate(parse_expr("clamp(wait_time, 0, 20)"), state) == 20.0
    with pytest.raises(PolicySyntaxError):
        parse_expr("clamp(wait_time, 1)")


# Composition and patching ------------------------------------------------

def test_singleton_composition_is_the_builtin_ordering():
    assert compose(["fair_order"], [1.0]).priority_expr == builtin("fair_vruntime").priority_expr


def test_weighted_composition():
    spec = compose(["longest_first", "aging"], [1.0, 0.01])
    assert render_expr(spec.priority_expr) == "expected_runtime + 0.01 * wait_time"
    assert not spec.preemptive
    assert "composed" in spec.tags


def test_empty_composition():
    with pytest.raises(EmptyComposition):
        compose([], [])
    with pytest.raises(EmptyComposition):
        compose(["aging"], [1.0, 2.0])


def test_patch_param():
    fair = builtin("fair_vruntime")
    patched = apply_patch(fair, [PatchEdit(target="param", name="slice_base", value=1000)])

    assert patched.params["slice_base"].value == 1000
    assert fair.params["slice_base"].value == 3000
    assert patched.name.startswith("fair_vruntime-p")
    assert policy_id(patched) != policy_id(fair)


def test_patch_rejections_leave_base_alone():
    fair = builtin("fair_vruntime")
    with pytest.raises(InvalidEdit):
        apply_patch(fair, [])
    with pytest.raises(InvalidEdit):
        apply_patch(fair, [{"target": "param", "name": "slice_base", "value": 1e9}])
    with pytest.raises(UnknownIdentifier):
        apply_patch(fair, [{"target": "priority", "expr": "foo"}])
    assert fair == builtin("fair_vruntime")


def test_patch_preemptive_flag_adds_default_slice():
    patched = apply_patch(builtin("ljf"), [PatchEdit(target="preemptive", flag=True)])
    assert patched.preemptive
    assert patched.slice_expr == Const(value=float(DEFAULT_SLICE))


def test_repeated_patches_keep_one_suffix():
    once = apply_patch(builtin("ljf"), [PatchEdit(target="priority", expr="expected_runtime + 0.01 * wait_time")])
    twice = apply_patch(once, [PatchEdit(target="priority", expr="expected_runtime + 0.02 * wait_time")])
    assert twice.name.count("-p") == 1
    assert twice.description.count("[patched from") == 1


def test_with_params_and_has_term():
    fair = builtin("fair_vruntime")
    assert with_params(fair, {}) is fair
    assert with_params(fair, {"slice_base": 2000}).params["slice_base"].value == 2000

    aged = compose(["longest_first", "aging"], [1.0, 0.01])
    assert has_term(aged, feature("wait_time"))
    assert not has_term(builtin("ljf"), feature("wait_time"))


# Properties --------------------------------------------------------------

leaves = st.one_of(
    st.sampled_from(FEATURES).map(feature),
    st.floats(min_value=-1e9, max_value=1e9, allow_nan=False, allow_infinity=False).map(const),
)


def _extend(children):
    return st.one_of(
        children.map(neg),
        st.tuples(st.sampled_from(["add", "sub", "mul", "div"]), children, children).map(lambda t: binop(*t)),
        st.tuples(st.sampled_from(["min", "max"]), st.lists(children, min_size=2, max_size=3)).map(
            lambda t: Call(op=t[0], args=tuple(t[1]))
        ),
        st.tuples(children, children, children).map(lambda t: Call(op="clamp", args=t)),
    )


expressions = st.recursive(leaves, _extend, max_leaves=10).filter(lambda e: depth(e) <= 6)


@settings(max_examples=500)
@given(expressions)
def test_render_parse_round_trip(expr):
    assert parse_expr(render_expr(expr)) == expr


@given(
    st.lists(
        st.tuples(st.integers(0, 10 ** 9), st.integers(0, 10 ** 9)),
        min_size=2,
        max_size=12,
    ),
    st.sampled_from([0.5, 2.0, 4.0, 1024.0]),
)
def test_positive_scaling_keeps_the_dispatch_order(pairs, factor):
    expr = parse_expr("expected_runtime - 2 * wait_time")
    scaled = binop("mul", const(factor), expr)
    states = [
        ({"expected_runtime": float(e), "wait_time": float(w)}, f"t{i:02d}")
        for i, (e, w) in enumerate(pairs)
    ]

    def order(e):
        fn = compile_expr(e, {})
        return [tid for _, tid in sorted(states, key=lambda s: (-fn(s[0]), s[1]))]

    assert order(expr) == order(scaled)


queue_states = st.lists(
    st.tuples(
        st.fixed_dictionaries({
            name: st.floats(min_value=-1e6, max_value=1e6, allow_nan=False) for name in FEATURES
        }),
        st.integers(0, 50),
    ),
    min_size=1,
    max_size=6,
)


@settings(max_examples=200)
@given(expressions, queue_states)
def test_dispatch_order_is_a_strict_total_order(expr, states):
    fn = compile_expr(expr, {})
    keys = []
    for i, (features, enqueue_time) in enumerate(states):
        try:
            value = fn(features)
        except (SchedCPError, ArithmeticError):
            assume(False)
        assume(not math.isnan(value))
        keys.append(dispatch_key(value, enqueue_time, f"t{i:02d}"))

    for a in keys:
        assert not a < a
    for a, b in itertools.combinations(keys, 2):
        assert (a < b) != (b < a)
    for a, b, c in itertools.permutations(keys, 3):
        if a < b and b < c:
            assert a < c
