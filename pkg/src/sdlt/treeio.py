"""Read and write dated trees as annotated parenthesized text.

Grammar, by example::

    ((A,B[&t=-120.0])[&t=-500.0,cats={0.25,0.8}],C)[&t=-1000.0];

Children are listed left to right (the order defines the lineage tuple
ordering used for trait patterns).  Each node may carry a bracketed
annotation: ``t`` is the node's absolute time (required on internal
nodes, default 0 on leaves) and ``cats`` lists relative positions of the
catastrophes on the branch above the node.  Node times are written with
``repr`` so values round-trip exactly.
"""

from __future__ import annotations

import re

import numpy as np

from .phylo import Catastrophe, Phylogeny

_NAME_RE = re.compile(r"[A-Za-z0-9_.+-]+")
_NUM_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


class TreeParseError(ValueError):
    def __init__(self, message, text, pos):
        line = text.count("\n", 0, pos) + 1
        col = pos - (text.rfind("\n", 0, pos) + 1) + 1
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.column = col


class _Node:
    __slots__ = ("children", "name", "time", "cats")

    def __init__(self):
        self.children = []
        self.name = None
        self.time = None
        self.cats = []


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def error(self, msg):
        raise TreeParseError(msg, self.text, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def number(self):
        self.skip_ws()
        m = _NUM_RE.match(self.text, self.pos)
        if not m:
            self.error("expected a number")
        self.pos = m.end()
        return float(m.group())

    def node(self):
        out = _Node()
        if self.peek() == "(":
            self.pos += 1
            out.children.append(self.node())
            while self.peek() == ",":
                self.pos += 1
                out.children.append(self.node())
            self.expect(")")
            if len(out.children) != 2:
                self.error(f"internal nodes must have 2 children, found {len(out.children)}")
        else:
            self.skip_ws()
            m = _NAME_RE.match(self.text, self.pos)
            if not m:
                self.error("expected a leaf name")
            out.name = m.group()
            self.pos = m.end()
        if self.peek() == "[":
            self.annotation(out)
        return out

    def annotation(self, node):
        self.expect("[")
        if self.peek() == "&":
            self.pos += 1
        while True:
            self.skip_ws()
            m = _NAME_RE.match(self.text, self.pos)
            if not m:
                self.error("expected an annotation key")
            key = m.group()
            self.pos = m.end()
            self.expect("=")
            if key == "t":
                node.time = self.number()
            elif key == "cats":
                self.expect("{")
                node.cats.append(self.number())
                while self.peek() == ",":
                    self.pos += 1
                    node.cats.append(self.number())
                self.expect("}")
            else:
                self.error(f"unknown annotation key {key!r}")
            if self.peek() != ",":
                break
            self.pos += 1
        self.expect("]")

    def parse(self):
        root = self.node()
        if self.peek() != ";":
            self.error("expected ';' after the tree")
        self.pos += 1
        if self.peek():
            self.error("trailing text after the tree")
        if not root.children:
            self.error("tree must have at least two leaves")
        return root


def parse_tree(text: str, constraints=()) -> Phylogeny:
    """Parse one tree; raises TreeParseError with line/column on bad input."""
    parser = _Parser(text)
    root = parser.parse()

    leaves: list[_Node] = []
    internal: list[_Node] = []

    def collect(n):
        if n.children:
            internal.append(n)
            for c in n.children:
                collect(c)
        else:
            leaves.append(n)

    collect(root)
    L = len(leaves)
    ids: dict[int, int] = {}
    for k, n in enumerate(internal):
        ids[id(n)] = 1 + k
    names = []
    for k, n in enumerate(leaves):
        ids[id(n)] = L + k
        if n.name in names:
            raise TreeParseError(f"duplicate leaf name {n.name!r}", text, 0)
        names.append(n.name)
        if n.time is None:
            n.time = 0.0
    for n in internal:
        if n.time is None:
            raise TreeParseError("internal node missing time annotation", text, 0)

    parent = np.full(2 * L, -1, dtype=np.int32)
    children = np.full((2 * L, 2), -1, dtype=np.int32)
    times = np.full(2 * L, -np.inf)
    children[0, 0] = ids[id(root)]
    for n in internal + leaves:
        i = ids[id(n)]
        times[i] = n.time
        for k, c in enumerate(n.children):
            children[i, k] = ids[id(c)]
            parent[ids[id(c)]] = i
    parent[ids[id(root)]] = 0

    cats = []
    for n in internal + leaves:
        for u in n.cats:
            cats.append(Catastrophe(ids[id(n)], u))
    return Phylogeny.from_arrays(parent, children, times, names, cats, constraints)


def write_tree(tree: Phylogeny) -> str:
    """Render a tree as one line of annotated parenthesized text."""
    for s in tree.leaf_names:
        if not _NAME_RE.fullmatch(s):
            raise ValueError(f"leaf name {s!r} cannot be written "
                             "(allowed: letters, digits, '_.+-')")
    cats: dict[int, list[float]] = {}
    for c in tree.catastrophes:
        cats.setdefault(c.branch, []).append(c.u)

    def annot(i):
        parts = [f"t={float(tree.times[i])!r}"]
        if i in cats:
            inner = ",".join(repr(float(u)) for u in sorted(cats[i]))
            parts.append("cats={" + inner + "}")
        return "[&" + ",".join(parts) + "]"

    def render(i):
        if tree.is_leaf(i):
            return tree.leaf_name(i) + annot(i)
        a = render(tree.children[i, 0])
        b = render(tree.children[i, 1])
        return f"({a},{b})" + annot(i)

    return render(1) + ";"


def read_tree(path, constraints=()) -> Phylogeny:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_tree(fh.read(), constraints)


def read_trees(path, constraints=()) -> list[Phylogeny]:
    """Read a file with one tree per non-empty line."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(parse_tree(line, constraints))
    return out


def save_tree(tree: Phylogeny, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_tree(tree) + "\n")
