"""Bench netlists: parsing, validation, NOR decomposition and boolean evaluation."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

# kind -> (min arity, max arity or None)
ARITY = {
    "AND": (2, None), "NAND": (2, None), "OR": (2, None), "NOR": (2, None),
    "XOR": (2, None), "XNOR": (2, None), "NOT": (1, 1), "BUFF": (1, 1),
}
ALIASES = {"BUF": "BUFF", "INV": "NOT"}


class BenchSyntaxError(SyntaxError):
    def __init__(self, msg: str, lineno: int, col: int, text: str = ""):
        super().__init__(f"line {lineno}, column {col}: {msg}", ("<bench>", lineno, col, text))
        self.lineno = lineno
        self.col = col


class NetlistError(ValueError):
    pass


class MultipleDrivers(NetlistError):
    pass


class UndrivenNet(NetlistError):
    pass


class CombinationalLoop(NetlistError):
    pass


class UnsupportedGateKind(NetlistError):
    pass


@dataclass(frozen=True)
class Gate:
    output: str
    kind: str
    inputs: tuple[str, ...]


def _topo_order(inputs, gates: list[Gate]) -> list[Gate]:
    driver = {g.output: g for g in gates}
    done = set(inputs)
    order: list[Gate] = []
    state: dict[str, int] = {}  # 1 visiting, 2 done
    for root in gates:
        if root.output in done:
            continue
        stack = [(root, 0)]
        while stack:
            g, i = stack.pop()
            if i == 0:
                if state.get(g.output) == 2:
                    continue
                state[g.output] = 1
            if i < len(g.inputs):
                stack.append((g, i + 1))
                net = g.inputs[i]
                if net in done:
                    continue
                dep = driver[net]
                if state.get(net) == 1:
                    raise CombinationalLoop(f"combinational loop through net {net!r}")
                if state.get(net) != 2:
                    stack.append((dep, 0))
            else:
                state[g.output] = 2
                done.add(g.output)
                order.append(g)
    return order


def _validate(inputs, outputs, gates: list[Gate]) -> None:
    seen = Counter(inputs)
    for g in gates:
        seen[g.output] += 1
    dup = sorted(n for n, c in seen.items() if c > 1)
    if dup:
        raise MultipleDrivers(f"net(s) with more than one driver: {', '.join(dup)}")
    driven = set(seen)
    for g in gates:
        for n in g.inputs:
            if n not in driven:
                raise UndrivenNet(f"gate {g.output!r} reads undriven net {n!r}")
    for n in outputs:
        if n not in driven:
            raise UndrivenNet(f"primary output {n!r} is not driven")


@dataclass
class RawCircuit:
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    gates: list[Gate] = field(default_factory=list)

    def __post_init__(self):
        _validate(self.inputs, self.outputs, self.gates)
        self.order = _topo_order(self.inputs, self.gates)

    def kind_counts(self) -> Counter:
        return Counter(g.kind for g in self.gates)


class Circuit(RawCircuit):
    """Netlist restricted to INV and two-input NOR gates, in topological order."""

    KINDS = {"INV": 1, "NOR2": 2}

    def __init__(self, inputs, outputs, gates, mapping=None, aliases=None):
        for g in gates:
            if self.KINDS.get(g.kind) != len(g.inputs):
                raise UnsupportedGateKind(f"gate {g.output!r}: {g.kind}/{len(g.inputs)} is not INV or NOR2")
        super().__init__(list(inputs), list(outputs), list(gates))
        self.gates = list(self.order)
        self.mapping: dict[str, list[str]] = dict(mapping or {})
        self.aliases: dict[str, str] = dict(aliases or {})
        fo = Counter()
        for g in self.gates:
            for n in set(g.inputs):
                fo[n] += 1
        self.fanout = {n: fo[n] for n in self.nets}
        self._po = set(self.outputs)

    @property
    def nets(self) -> list[str]:
        return list(self.inputs) + [g.output for g in self.gates]

    def load(self, net: str) -> int:
        """Gates driven by ``net``, counting a primary output as one more load; at least 1."""
        return max(1, self.fanout.get(net, 0) + (net in self._po))

    def nor_count(self) -> int:
        return sum(1 for g in self.gates if g.kind == "NOR2")


_IO_RE = re.compile(r"^(INPUT|OUTPUT)\s*\(\s*([^\s()]+)\s*\)$", re.IGNORECASE)
_GATE_RE = re.compile(r"^([^\s=()]+)\s*=\s*([A-Za-z_][A-Za-z0-9_]*)\s*\((.*)\)$")


def parse_bench(text: str) -> RawCircuit:
    inputs, outputs, gates = [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        col = len(raw) - len(raw.lstrip()) + 1
        m = _IO_RE.match(line)
        if m:
            (inputs if m.group(1).upper() == "INPUT" else outputs).append(m.group(2))
            continue
        m = _GATE_RE.match(line)
        if not m:
            raise BenchSyntaxError("expected INPUT(x), OUTPUT(x) or 'net = GATE(args)'", lineno, col, raw)
        out, kind, args = m.group(1), m.group(2).upper(), m.group(3)
        kind = ALIASES.get(kind, kind)
        if kind not in ARITY:
            raise BenchSyntaxError(f"unknown gate kind {m.group(2)!r}", lineno, col + line.index(m.group(2)), raw)
        names = [a.strip() for a in args.split(",")] if args.strip() else []
        if any(not a or re.search(r"[\s()=]", a) for a in names):
            raise BenchSyntaxError("malformed argument list", lineno, col + line.index("("), raw)
        lo, hi = ARITY[kind]
        if len(names) < lo or (hi is not None and len(names) > hi):
            want = f"{lo}" if lo == hi else f"at least {lo}"
            raise BenchSyntaxError(f"{kind} takes {want} input(s), got {len(names)}",
                                   lineno, col + line.index("("), raw)
        gates.append(Gate(out, kind, tuple(names)))
    return RawCircuit(inputs, outputs, gates)


def emit_bench(circuit: RawCircuit) -> str:
    lines = [f"INPUT({n})" for n in circuit.inputs] + [f"OUTPUT({n})" for n in circuit.outputs]
    names = {"INV": "NOT", "NOR2": "NOR"}
    for g in circuit.gates:
        lines.append(f"{g.output} = {names.get(g.kind, g.kind)}({', '.join(g.inputs)})")
    return "\n".join(lines) + "\n"


def load_c17() -> RawCircuit:
    return parse_bench(resources.files("sigsim").joinpath("data/c17.bench").read_text())


# -- NOR decomposition ------------------------------------------------------

class _Builder:
    def __init__(self, taken, allow_inv: bool):
        self.taken = set(taken)
        self.allow_inv = allow_inv
        self.gates: list[Gate] = []
        self.emitted: list[str] = []
        self.base = ""
        self.count = 0

    def fresh(self) -> str:
        while True:
            self.count += 1
            name = f"{self.base}_n{self.count}"
            if name not in self.taken:
                self.taken.add(name)
                return name

    def _emit(self, kind, ins, out):
        out = out or self.fresh()
        self.gates.append(Gate(out, kind, tuple(ins)))
        self.emitted.append(out)
        return out

    def nor(self, a, b, out=None):
        return self._emit("NOR2", (a, b), out)

    def inv(self, a, out=None):
        return self._emit("INV", (a,), out) if self.allow_inv else self.nor(a, a, out)

    def or2(self, a, b, out=None):
        return self.inv(self.nor(a, b), out)

    def and2(self, a, b, out=None, cache=None):
        cache = {} if cache is None else cache
        na = cache.get(a) or cache.setdefault(a, self.inv(a))
        nb = cache.get(b) or cache.setdefault(b, self.inv(b))
        return self.nor(na, nb, out)

    def xnor2(self, a, b, out=None):
        n1 = self.nor(a, b)
        return self.nor(self.nor(a, n1), self.nor(b, n1), out)

    def xor2(self, a, b, out=None):
        return self.inv(self.xnor2(a, b), out)

    def tree(self, op, ins, out=None):
        if len(ins) == 1:
            if out is None:
                return ins[0]
            raise AssertionError("single-input tree needs no output")
        if len(ins) == 2:
            return op(ins[0], ins[1], out)
        h = (len(ins) + 1) // 2
        return op(self.tree(op, ins[:h]), self.tree(op, ins[h:]), out)

    def nor_n(self, ins, out):
        h = (len(ins) + 1) // 2
        left, right = ins[:h], ins[h:]
        return self.nor(self.tree(self.or2, left), self.tree(self.or2, right), out)


def decompose_to_nor(raw: RawCircuit, allow_inv: bool = False) -> Circuit:
    """Rewrite ``raw`` over NOR2 (and INV when ``allow_inv``) gates.

    Every original gate output keeps its net name.  BUFF gates become
    aliases of their input net.  ``Circuit.mapping`` lists the emitted gate
    outputs per original gate.
    """
    taken = set(raw.inputs) | {g.output for g in raw.gates}
    b = _Builder(taken, allow_inv)
    alias: dict[str, str] = {}
    mapping: dict[str, list[str]] = {}

    def net(n):
        return alias.get(n, n)

    for g in raw.order:
        ins = [net(n) for n in g.inputs]
        b.base, b.count, b.emitted = g.output, 0, []
        k, out = g.kind, g.output
        if k == "BUFF":
            alias[out] = ins[0]
        elif k == "NOT":
            b.inv(ins[0], out)
        elif k == "NOR":
            b.nor_n(ins, out)
        elif k == "OR":
            b.inv(b.nor_n(ins, None), out)
        elif k == "AND":
            cache = {}
            b.tree(lambda x, y, o=None: b.and2(x, y, o, cache), ins, out)
        elif k == "NAND":
            cache = {}
            b.inv(b.tree(lambda x, y, o=None: b.and2(x, y, o, cache), ins), out)
        elif k == "XOR":
            b.tree(b.xor2, ins, out)
        elif k == "XNOR":
            if len(ins) == 2:
                b.xnor2(ins[0], ins[1], out)
            else:
                b.inv(b.tree(b.xor2, ins), out)
        else:
            raise UnsupportedGateKind(f"cannot decompose gate kind {k}")
        mapping[g.output] = list(b.emitted)
    outputs = [net(n) for n in raw.outputs]
    return Circuit(raw.inputs, outputs, b.gates, mapping, alias)


# -- boolean evaluation -----------------------------------------------------

def _eval_gate(kind: str, vals: list[int], mask: int) -> int:
    if kind in ("AND", "NAND"):
        r = mask
        for v in vals:
            r &= v
    elif kind in ("OR", "NOR", "NOR2"):
        r = 0
        for v in vals:
            r |= v
    elif kind in ("XOR", "XNOR"):
        r = 0
        for v in vals:
            r ^= v
    elif kind in ("BUFF", "NOT", "INV"):
        r = vals[0]
    else:
        raise UnsupportedGateKind(kind)
    if kind in ("NAND", "NOR", "NOR2", "XNOR", "NOT", "INV"):
        r = ~r & mask
    return r


def evaluate(circuit: RawCircuit, assignment: dict[str, int], width: int = 1) -> dict[str, int]:
    """Values of all nets; each value is a ``width``-bit vector of parallel patterns."""
    mask = (1 << width) - 1
    vals = {n: assignment[n] & mask for n in circuit.inputs}
    for g in circuit.order:
        vals[g.output] = _eval_gate(g.kind, [vals[n] for n in g.inputs], mask)
    for a, src in getattr(circuit, "aliases", {}).items():
        vals.setdefault(a, vals[src])
    return vals


def exhaustive_patterns(inputs: list[str]) -> tuple[dict[str, int], int]:
    """Bit-parallel assignment enumerating all 2**n input vectors."""
    n = len(inputs)
    width = 1 << n
    pats = {}
    for i, name in enumerate(inputs):
        v = 0
        for p in range(width):
            if p >> i & 1:
                v |= 1 << p
        pats[name] = v
    return pats, width
