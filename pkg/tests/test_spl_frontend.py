import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lambdalab.jsonvalue import canonical
from lambdalab.spl.frontend import (
    PROGRAM_FILES,
    Bind,
    ExprStmt,
    IfElse,
    InvokeCall,
    Ret,
    check_well_formed,
    compile_program,
    load_program,
    optimize,
    optimize_live_keys,
    optimize_live_vars,
    parse_surface,
    program_text,
    state_size,
)
from lambdalab.spl.machine import run_program
from lambdalab.spl.parser import SplSyntaxError, parse_core
from lambdalab.spl.syntax import Cond, First, Invoke, ObjectPat, Transform, flatten, show

from strategies import json_values

# -- parsing --


def test_statement_forms():
    prog = parse_surface("a <- invoke f(in); invoke g(a); if (a.d == 1) { b <- get in.url; } ret a;")
    kinds = [type(s) for s in prog.statements]
    assert kinds == [Bind, ExprStmt, IfElse, Ret]
    assert prog.statements[0].call == InvokeCall("f", parse_core("in").pattern)


@pytest.mark.parametrize("text, message, where", [
    ("a <- invoke f(b); ret a;", "unbound variable 'b'", (1, 15)),
    ("ret in; a <- invoke f(in);", "ret must be the final statement", None),
    ("input <- invoke f(in); ret input;", "'input' is reserved", (1, 1)),
    ("a <- frob f(in);", "expected 'invoke' or 'get'", None),
    ("if (in) { a <- invoke f(in); } ret a;", "unbound variable 'a'", (1, 36)),
])
def test_surface_errors(text, message, where):
    with pytest.raises(SplSyntaxError, match=message) as info:
        parse_surface(text)
    if where:
        assert (info.value.line, info.value.column) == where


def test_variables_bound_on_every_path_survive_the_if():
    parse_surface("if (in) { a <- invoke f(in); } else { a <- invoke g(in); } ret a;")


# -- compilation --


def test_three_calls_pipeline_shape():
    stages = flatten(compile_program(program_text("three-calls")))
    assert len(stages) == 7
    assert [s.body.f for s in stages if isinstance(s, First)] == ["f", "g", "h"]
    assert show(stages[0]) == "[in, { input: in }]"


def test_return_of_nothing_is_null():
    assert run_program(compile_program("invoke inc(in); ret;"), 1)[0] is None
    assert run_program(compile_program("invoke inc(in);"), 1)[0] is None


def test_bank_split_branches_invoke_bank():
    e = compile_program(program_text("split-deposit"))
    conds = [s for s in flatten(e) if isinstance(s, Cond)]
    assert conds
    calls = [s.body.f for branch in (conds[0].then, conds[0].orelse) for s in flatten(branch) if isinstance(s, First)]
    assert calls and set(calls) == {"bank"}


def test_split_deposit_records_two_deposits():
    prog = load_program(program_text("split-deposit"))
    value, trace = run_program(prog, {"amount": 250, "tId1": "a", "tId2": "b"}, store={})
    committed = trace.final.store.committed
    assert value is None
    assert committed["acct:savings"] == 100 and committed["acct:checking"] == 150


def test_build_status_posts_on_failure_only():
    prog = load_program(program_text("build-status"))
    _, failing = run_program(prog, {"state": "failure", "sha": "1", "url": "u"})
    _, passing = run_program(prog, {"state": "success", "sha": "1", "url": "u"})
    count = lambda trace: sum(1 for r in trace.rules if r == "P-Invoke1")
    assert (count(failing), count(passing)) == (2, 1)


def test_csv_plot_fetches_and_plots():
    prog = load_program(program_text("csv-plot"))
    value, _ = run_program(prog, {"url": "u", "xAxis": "t", "yAxis": "v"}, resolver=lambda url: "t,v\n1,2\n3,4\n")
    assert canonical(value) == canonical({"points": [[1, 2], [3, 4]]})


def test_load_program_detects_notation():
    assert load_program("first (invoke inc) >>> in[0]") == parse_core("first (invoke inc) >>> in[0]")
    assert isinstance(load_program("ret in; // comment"), Transform)
    assert load_program(program_text("three-calls"), optimized=False) == compile_program(program_text("three-calls"))


def test_bundled_programs():
    assert set(PROGRAM_FILES) == {"three-calls", "split-deposit", "build-status", "csv-plot", "swap"}
    with pytest.raises(KeyError):
        program_text("nope")


def test_live_keys_projects_read_paths():
    keys = optimize(compile_program(program_text("three-calls")))
    states = [s.pattern.items[1] for s in flatten(keys) if isinstance(s, Transform) and hasattr(s.pattern, "items")]
    assert any(isinstance(p, ObjectPat) and [k for k, _ in p.fields] == ["ad"] for p in states)


def test_well_formedness_catches_missing_fields():
    bad = parse_core("[in, { input: in }] >>> first (invoke f) >>> [in[1].nope, in[1]] >>> first (invoke g) >>> in[0]")
    assert check_well_formed(bad)


def test_three_calls_state_sizes():
    plain = compile_program(program_text("three-calls"))
    assert (state_size(plain), state_size(optimize_live_vars(plain)), state_size(optimize(plain))) == (5, 2, 2)


# -- properties over generated programs --


@st.composite
def surface_programs(draw):
    """Straight-line programs with an optional if, over f, g and echo.

    ``f`` returns ``{d, e}``, so ``.d`` and ``.e[0]`` are only taken on its results.
    """
    lines = []
    made_by_f: dict[str, bool] = {}

    def ref():
        if not made_by_f or draw(st.booleans()) and draw(st.booleans()):
            return "in"
        name = draw(st.sampled_from(sorted(made_by_f)))
        if made_by_f[name]:
            return name + draw(st.sampled_from(["", ".d", ".e[0]", ".e"]))
        return name

    def arg():
        kind = draw(st.sampled_from(["ref", "obj", "arr", "lit"]))
        if kind == "ref":
            return ref()
        if kind == "obj":
            return "{ x: %s, y: %s }" % (ref(), ref())
        if kind == "arr":
            return "[%s, %s]" % (ref(), ref())
        return "%d" % draw(st.integers(0, 9))

    def bind(name, fn=None):
        fn = fn or draw(st.sampled_from(["f", "g", "echo"]))
        lines.append(f"{name} <- invoke {fn}({arg()});")
        made_by_f[name] = fn == "f"

    for i in range(draw(st.integers(1, 4))):
        bind(f"v{i}")
    if draw(st.booleans()):
        fn = draw(st.sampled_from(["f", "g"]))
        test = draw(st.sampled_from(["in == 1", "true", "false"]))
        a, b = arg(), arg()
        lines.append(f"if ({test}) {{ w <- invoke {fn}({a}); }} else {{ w <- invoke {fn}({b}); }}")
        made_by_f["w"] = fn == "f"
        for i in range(draw(st.integers(0, 2))):
            bind(f"u{i}")
    ending = draw(st.sampled_from(["ref", "obj", "none"]))
    if ending == "ref":
        lines.append(f"ret {ref()};")
    elif ending == "obj":
        lines.append("ret { r: %s, s: %s };" % (ref(), ref()))
    return "\n".join(lines)


@settings(max_examples=120, deadline=None)
@given(surface_programs())
def test_passes_are_idempotent_monotone_and_well_formed(text):
    plain = compile_program(text)
    v = optimize_live_vars(plain)
    k = optimize_live_keys(v)
    assert optimize_live_vars(v) == v
    assert optimize_live_keys(k) == k
    assert state_size(plain) >= state_size(v) >= state_size(k)
    for e in (plain, v, k, optimize_live_keys(plain)):
        assert check_well_formed(e) == []


@settings(max_examples=80, deadline=None)
@given(surface_programs(), json_values)
def test_optimizations_preserve_results(text, payload):
    plain = compile_program(text)
    expected = canonical(run_program(plain, payload)[0])
    for e in (optimize_live_vars(plain), optimize_live_keys(plain), optimize(plain)):
        assert canonical(run_program(e, payload)[0]) == expected


@settings(max_examples=60, deadline=None)
@given(surface_programs())
def test_compiled_programs_print_and_parse_back(text):
    for e in (compile_program(text), optimize(compile_program(text))):
        assert parse_core(show(e)) == e


def test_calls_keep_their_order():
    e = optimize(compile_program("a <- invoke g(in); b <- invoke f(a); c <- invoke echo(b.d); ret c;"))
    assert [s.body for s in flatten(e) if isinstance(s, First)] == [Invoke("g"), Invoke("f"), Invoke("echo")]
