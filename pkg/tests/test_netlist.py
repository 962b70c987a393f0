import itertools
import random

import pytest

from sigsim.netlist import (BenchSyntaxError, CombinationalLoop, MultipleDrivers, UndrivenNet,
                            UnsupportedGateKind, decompose_to_nor, emit_bench, evaluate, exhaustive_patterns,
                            load_c17, parse_bench)

KINDS = ("AND", "NAND", "OR", "NOR", "XOR", "XNOR", "NOT", "BUFF")


def scalar_eval(raw, vec):
    """One input vector at a time, straight from the gate definitions."""
    v = dict(vec)
    pending = list(raw.gates)
    while pending:
        rest = []
        for g in pending:
            if not all(n in v for n in g.inputs):
                rest.append(g)
                continue
            x = [v[n] for n in g.inputs]
            v[g.output] = {
                "AND": lambda: int(all(x)), "NAND": lambda: int(not all(x)),
                "OR": lambda: int(any(x)), "NOR": lambda: int(not any(x)),
                "XOR": lambda: sum(x) % 2, "XNOR": lambda: 1 - sum(x) % 2,
                "NOT": lambda: 1 - x[0], "BUFF": lambda: x[0],
                "INV": lambda: 1 - x[0], "NOR2": lambda: int(not any(x)),
            }[g.kind]()
        assert len(rest) < len(pending)
        pending = rest
    return v


def random_bench(seed, n_in=8, n_gates=25):
    rng = random.Random(seed)
    nets = [f"i{k}" for k in range(n_in)]
    lines = [f"INPUT({n})" for n in nets]
    body = []
    for k in range(n_gates):
        kind = rng.choice(KINDS)
        arity = 1 if kind in ("NOT", "BUFF") else rng.randint(2, 4)
        ins = rng.sample(nets, min(arity, len(nets)))
        out = f"g{k}"
        body.append(f"{out} = {kind}({', '.join(ins)})")
        nets.append(out)
    outs = rng.sample(nets[n_in:], 4)
    lines += [f"OUTPUT({n})" for n in outs] + body
    return "\n".join(lines) + "\n"


def test_c17_parse():
    raw = load_c17()
    assert len(raw.gates) == 6
    assert raw.kind_counts() == {"NAND": 6}
    assert raw.inputs == ["1", "2", "3", "6", "7"]
    assert raw.outputs == ["22", "23"]


def test_c17_is_24_nor():
    c = decompose_to_nor(load_c17())
    assert c.nor_count() == 24
    assert len(c.gates) == 24
    assert all(len(v) == 4 for v in c.mapping.values())


def test_nand2_is_4_nor():
    c = decompose_to_nor(parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = NAND(a, b)\n"))
    assert c.nor_count() == 4


def test_not_with_inv_allowed():
    text = "INPUT(a)\nOUTPUT(y)\ny = NOT(a)\n"
    c = decompose_to_nor(parse_bench(text), allow_inv=True)
    assert [(g.kind, g.inputs) for g in c.gates] == [("INV", ("a",))]
    c = decompose_to_nor(parse_bench(text))
    assert [(g.kind, g.inputs) for g in c.gates] == [("NOR2", ("a", "a"))]


def test_arity_is_a_syntax_error():
    with pytest.raises(BenchSyntaxError) as e:
        parse_bench("INPUT(a)\nOUTPUT(y)\ny = NAND(a)\n")
    assert e.value.lineno == 3
    assert isinstance(e.value, SyntaxError)


def test_garbage_line_position():
    with pytest.raises(BenchSyntaxError) as e:
        parse_bench("INPUT(a)\n  what is this\n")
    assert e.value.lineno == 2 and e.value.col >= 1


def test_empty_file():
    raw = parse_bench("")
    assert raw.inputs == [] and raw.outputs == [] and raw.gates == []
    assert parse_bench("# only a comment\n\n").gates == []


def test_structural_errors():
    with pytest.raises(MultipleDrivers):
        parse_bench("INPUT(a)\nOUTPUT(y)\ny = NOT(a)\ny = BUFF(a)\n")
    with pytest.raises(UndrivenNet):
        parse_bench("INPUT(a)\nOUTPUT(y)\ny = AND(a, q)\n")
    with pytest.raises(UndrivenNet):
        parse_bench("INPUT(a)\nOUTPUT(z)\ny = NOT(a)\n")
    with pytest.raises(CombinationalLoop):
        parse_bench("INPUT(a)\nOUTPUT(y)\nx = NAND(a, y)\ny = NOT(x)\n")


def test_unknown_gate_kind():
    with pytest.raises((BenchSyntaxError, UnsupportedGateKind)):
        parse_bench("INPUT(a)\nOUTPUT(y)\ny = MUX(a, a)\n")


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("allow_inv", [False, True])
def test_decomposition_truth_table(seed, allow_inv):
    raw = parse_bench(random_bench(seed))
    c = decompose_to_nor(raw, allow_inv)
    assert all(g.kind in ("NOR2", "INV") for g in c.gates)
    if not allow_inv:
        assert all(g.kind == "NOR2" for g in c.gates)
    pats, width = exhaustive_patterns(c.inputs)
    got = evaluate(c, pats, width)
    for p in range(width):
        vec = {n: (pats[n] >> p) & 1 for n in raw.inputs}
        want = scalar_eval(raw, vec)
        for po_raw, po_new in zip(raw.outputs, c.outputs):
            assert (got[po_new] >> p) & 1 == want[po_raw]


def test_c17_truth_table():
    raw = load_c17()
    c = decompose_to_nor(raw)
    for bits in itertools.product((0, 1), repeat=5):
        vec = dict(zip(raw.inputs, bits))
        want = scalar_eval(raw, vec)
        got = evaluate(c, vec)
        assert [got[o] for o in c.outputs] == [want[o] for o in raw.outputs]


def test_fanout_counts():
    c = decompose_to_nor(parse_bench(random_bench(3)))
    for n in c.nets:
        consumers = sum(1 for g in c.gates if n in g.inputs)
        assert c.fanout[n] == consumers
        assert c.load(n) == max(1, consumers + (n in c.outputs))


def test_fanout_counts_self_loop_nor_once():
    c = decompose_to_nor(parse_bench("INPUT(a)\nOUTPUT(y)\ny = NOT(a)\n"))
    assert c.fanout["a"] == 1


@pytest.mark.parametrize("seed", range(5))
def test_bench_round_trip(seed):
    raw = parse_bench(random_bench(seed))
    again = parse_bench(emit_bench(raw))
    assert again.inputs == raw.inputs and again.outputs == raw.outputs
    assert sorted((g.output, g.kind, g.inputs) for g in again.gates) == \
        sorted((g.output, g.kind, g.inputs) for g in raw.gates)
    c = decompose_to_nor(raw)
    back = parse_bench(emit_bench(c))
    assert len(back.gates) == len(c.gates)
    pats, width = exhaustive_patterns(c.inputs)
    v1, v2 = evaluate(c, pats, width), evaluate(back, pats, width)
    assert all(v1[o] == v2[o] for o in c.outputs)


def test_wide_gates_balanced():
    raw = parse_bench("INPUT(a)\nINPUT(b)\nINPUT(c)\nINPUT(d)\nINPUT(e)\nOUTPUT(y)\ny = XOR(a, b, c, d, e)\n")
    c = decompose_to_nor(raw)
    pats, width = exhaustive_patterns(c.inputs)
    got = evaluate(c, pats, width)["y"]
    for p in range(width):
        assert (got >> p) & 1 == bin(p).count("1") % 2
