import pytest
from hypothesis import given, strategies as st

from damp import minilang as ml
from damp.corpus import GeneratorConfig, generate_corpus

from oracles import COUNT_SOURCE, SUM_SOURCE, identifier_sites

CORPUS = generate_corpus(GeneratorConfig(methods_per_label=20, seed=3))
identifiers = st.from_regex(r"[a-z][a-z0-9_]{0,11}", fullmatch=True).filter(ml.is_valid_identifier)
methods = st.sampled_from([ast for ast, _ in CORPUS])


# ---------------------------------------------------------------- lexer


def test_token_spans_slice_the_source():
    src = "int f(int a) { return a + 12; }"
    toks = ml.tokenize(src)
    assert all(t.span[0] < t.span[1] and src[t.span[0]:t.span[1]] == t.lexeme for t in toks)
    kinds = {t.lexeme: t.kind for t in toks}
    assert kinds["int"] == ml.TokenKind.KEYWORD
    assert kinds["12"] == ml.TokenKind.INT
    assert kinds["a"] == ml.TokenKind.IDENTIFIER


def test_lex_error_reports_position_and_char():
    with pytest.raises(ml.LexError) as exc:
        ml.parse("int f() { return 1 $ 2; }")
    assert exc.value.position == 19
    assert exc.value.char == "$"


# ---------------------------------------------------------------- parse


def test_parse_minimal_method():
    ast = ml.parse("int f(int a) { return a; }")
    assert ast.label == "f"
    assert [(p.type, p.name) for p in ast.params] == [("int", "a")]
    assert len(ast.body) == 1 and isinstance(ast.body[0], ml.Return)
    assert ast.body[0].value.name == "a"


def test_undeclared_use_is_a_scope_error():
    with pytest.raises(ml.ScopeError, match="y"):
        ml.parse("int f() { int x = 0; return y; }")


def test_duplicate_declaration_is_a_scope_error():
    with pytest.raises(ml.ScopeError):
        ml.parse("int f(int a) { int a = 0; return a; }")


def test_name_reuse_in_disjoint_blocks_is_rejected():
    src = "int f(int n) { if (n > 0) { int y = 1; } else { int y = 2; } return n; }"
    with pytest.raises(ml.ScopeError):
        ml.parse(src)


def test_out_of_scope_use_is_rejected():
    with pytest.raises(ml.ScopeError):
        ml.parse("int f(int n) { if (n > 0) { int y = 1; } return y; }")


def test_parse_error_fields():
    with pytest.raises(ml.ParseError) as exc:
        ml.parse("int f( { return 1; }")
    assert exc.value.found == "{"


def test_type_errors_are_reported():
    with pytest.raises(ml.TypeCheckError):
        ml.parse("int f(int a) { return a == true; }")
    with pytest.raises(ml.TypeCheckError):
        ml.parse("bool f(int a) { return a; }")


def test_count_template_shape():
    # hand count: two parameters, locals count and i, one For, one If
    ast = ml.parse(COUNT_SOURCE)
    refs = ml.variables(ast)
    assert [(r.name, r.kind) for r in refs] == [
        ("target", "parameter"), ("array", "parameter"), ("count", "local"), ("i", "local"),
    ]
    nodes = list(ml.walk(ast))
    assert sum(isinstance(n, ml.For) for n in nodes) == 1
    assert sum(isinstance(n, ml.If) for n in nodes) == 1
    assert len(ast.params) == 2


def test_node_ids_unique():
    for ast, _ in CORPUS:
        ids = [n.node_id for n in ml.walk(ast)]
        assert len(ids) == len(set(ids))


def test_var_refs_point_at_declarations():
    ast = ml.parse(COUNT_SOURCE)
    by_id = {n.node_id: n for n in ml.walk(ast)}
    for ref in ml.variables(ast):
        decl = by_id[ref.decl_id]
        assert isinstance(decl, ml.VarDecl if ref.kind == "local" else ml.Param)
        assert decl.name == ref.name


# ---------------------------------------------------------------- pretty printer


def test_pretty_print_round_trip_and_format():
    ast = ml.parse("int f(int a){return a;}")
    text = ml.pretty_print(ast)
    assert text == "int f(int a) {\n  return a;\n}\n"
    assert ml.parse(text) == ast


def test_count_template_prints_canonically():
    ast = ml.parse(COUNT_SOURCE)
    assert ml.pretty_print(ast) == COUNT_SOURCE
    assert ml.pretty_print(ast) == ml.pretty_print(ast)


def test_precedence_parentheses_survive():
    ast = ml.parse("int f(int a, int b) { return (a + b) * (a - (b - 1)); }")
    assert ml.parse(ml.pretty_print(ast)) == ast
    assert "(a + b) * (a - (b - 1))" in ml.pretty_print(ast)


def test_negative_literal_round_trip():
    ast = ml.parse("int f() { int x = -1; return x; }")
    assert ml.parse(ml.pretty_print(ast)) == ast


@given(methods)
def test_round_trip_property(ast):
    assert ml.parse(ml.pretty_print(ast)) == ast


# ---------------------------------------------------------------- variables


def test_variables_examples():
    assert [(v.name, v.kind) for v in ml.variables(ml.parse("int f(int a){return a;}"))] == [("a", "parameter")]
    assert ml.variables(ml.parse("int f() { return 1; }")) == []


# ---------------------------------------------------------------- rename


def test_identity_rename():
    ast = ml.parse("int f(int a) { return a; }")
    assert ml.rename_variable(ast, "a", "a") is ast


def test_rename_count_to_tally():
    ast = ml.parse(COUNT_SOURCE)
    # independent route: whole-word matches in the source text
    expected = identifier_sites(COUNT_SOURCE, "count")
    assert expected == 4
    out = ml.rename_variable(ast, "count", "tally")
    assert ml.occurrences(ast, "count") == 4
    assert ml.occurrences(out, "tally") == 4
    assert ml.occurrences(out, "count") == 0
    assert out.label == "count"
    text = ml.pretty_print(out)
    assert ml.parse(text) == out
    assert text == COUNT_SOURCE.replace("int count = 0", "int tally = 0").replace(
        "count = count + 1", "tally = tally + 1").replace("return count", "return tally")


def test_rename_collision_and_invalid():
    ast = ml.parse(COUNT_SOURCE)
    with pytest.raises(ml.CollisionError):
        ml.rename_variable(ast, "i", "target")
    for bad in ("Tally", "1x", "for", "a" * 13, ""):
        with pytest.raises(ml.InvalidIdentifier):
            ml.rename_variable(ast, "i", bad)


def test_rename_accepts_var_ref():
    ast = ml.parse(COUNT_SOURCE)
    ref = ml.variables(ast)[3]
    assert ml.occurrences(ml.rename_variable(ast, ref, "k"), "k") == ml.occurrences(ast, "i")


@given(methods, st.data(), identifiers)
def test_rename_is_a_bijection_on_sites(ast, data, fresh):
    names = ml.variable_names(ast)
    v = data.draw(st.sampled_from(names))
    if fresh in names:
        return
    out = ml.rename_variable(ast, v, fresh)
    assert ml.occurrences(out, fresh) == ml.occurrences(ast, v)
    assert ml.occurrences(out, v) == 0
    assert ml.check_semantic_equivalence(ast, out)
    assert ml.parse(ml.pretty_print(out)) == out


# ---------------------------------------------------------------- dead code


def test_insert_dead_code_appends_after_return():
    ast = ml.parse("int f(int a){return a;}")
    out = ml.insert_dead_code(ast, "w")
    assert isinstance(out.body[0], ml.Return)
    assert isinstance(out.body[1], ml.VarDecl) and out.body[1].name == "w"
    assert out.body[1].init == ml.IntLit(value=0)
    assert ml.occurrences(out, "w") == 1
    assert ml.strip_dead_declarations(out) == ast
    with pytest.raises(ml.CollisionError):
        ml.insert_dead_code(ast, "a")


def test_dead_code_text():
    out = ml.insert_dead_code(ml.parse("int f(int a){return a;}"), "w")
    assert ml.pretty_print(out) == "int f(int a) {\n  return a;\n  int w = 0;\n}\n"


@given(methods, identifiers)
def test_dead_code_preserves_equivalence(ast, fresh):
    if fresh in ml.variable_names(ast):
        return
    out = ml.insert_dead_code(ast, fresh)
    assert ml.check_semantic_equivalence(ast, out)
    ids = [n.node_id for n in ml.walk(out)]
    assert len(ids) == len(set(ids))
    assert ml.parse(ml.pretty_print(out)) == out


# ---------------------------------------------------------------- equivalence


def test_equivalence_examples():
    count = ml.parse(COUNT_SOURCE)
    total = ml.parse(SUM_SOURCE)
    assert ml.check_semantic_equivalence(count, ml.rename_variable(count, "i", "k"))
    assert ml.check_semantic_equivalence(count, ml.insert_dead_code(count, "spare"))
    assert not ml.check_semantic_equivalence(count, total)


def test_equivalence_rejects_a_swapped_rename():
    # swapping which parameter is compared changes behaviour
    a = ml.parse("int f(int x, int y) { return x - y; }")
    b = ml.parse("int f(int x, int y) { return y - x; }")
    assert not ml.check_semantic_equivalence(a, b)


def test_equivalence_keeps_used_declarations():
    a = ml.parse("int f() { int x = 1; return x; }")
    b = ml.parse("int f() { int x = 2; return x; }")
    assert not ml.check_semantic_equivalence(a, b)
