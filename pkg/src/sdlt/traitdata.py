"""Trait presence/absence matrices and their text format.

Rows are taxa, columns are traits, cells are 0, 1, or ?.  The first
header field is a corner label (anything without whitespace), the rest
are trait names; each data row starts with its taxon name.  Fields are
whitespace-separated.
"""

from dataclasses import dataclass

import numpy as np

from .patterns import MISSING, RegistrationRule

_CELL = {"0": 0, "1": 1, "?": MISSING}
_GLYPH = {0: "0", 1: "1", MISSING: "?"}


def pattern_text(pattern):
    """Compact glyph string for a pattern tuple, e.g. (1, 0, MISSING) -> '10?'."""
    return "".join(_GLYPH[int(v)] for v in pattern)


class MatrixFormatError(ValueError):
    def __init__(self, message, line=None, field=None):
        where = ""
        if line is not None:
            where = " (line %d%s)" % (line,
                                      "" if field is None
                                      else ", field %d" % field)
        super().__init__(message + where)
        self.line = line
        self.field = field


@dataclass
class TraitMatrix:
    taxa: tuple
    traits: tuple
    cells: np.ndarray  # shape (len(taxa), len(traits)), entries 0/1/MISSING

    def __post_init__(self):
        self.taxa = tuple(self.taxa)
        self.traits = tuple(self.traits)
        self.cells = np.asarray(self.cells, dtype=np.int8)
        if self.cells.shape != (len(self.taxa), len(self.traits)):
            raise ValueError("cell array shape %r does not match %d taxa "
                             "x %d traits" % (self.cells.shape,
                                              len(self.taxa),
                                              len(self.traits)))
        bad = ~np.isin(self.cells, (0, 1, MISSING))
        if bad.any():
            raise ValueError("cells must be 0, 1, or missing")

    @property
    def n_taxa(self):
        return len(self.taxa)

    @property
    def n_traits(self):
        return len(self.traits)

    def column(self, j):
        return tuple(int(v) for v in self.cells[:, j])

    def pattern_counts(self):
        """Collapse columns to a pattern -> count map (taxa-row order)."""
        out = {}
        for j in range(self.n_traits):
            pat = self.column(j)
            out[pat] = out.get(pat, 0) + 1
        return out

    def missing_by_taxon(self):
        """Fraction of ? cells per taxon, keyed by name."""
        if self.n_traits == 0:
            return {t: 0.0 for t in self.taxa}
        frac = np.mean(self.cells == MISSING, axis=1)
        return {t: float(f) for t, f in zip(self.taxa, frac)}

    def registered(self, rule: RegistrationRule):
        """Copy with the columns failing ``rule`` dropped."""
        keep = [j for j in range(self.n_traits)
                if rule.registered(self.column(j))]
        return TraitMatrix(self.taxa,
                           tuple(self.traits[j] for j in keep),
                           self.cells[:, keep])

    def select(self, trait_indices):
        idx = list(trait_indices)
        return TraitMatrix(self.taxa,
                           tuple(self.traits[j] for j in idx),
                           self.cells[:, idx])


def parse_trait_matrix(text: str) -> TraitMatrix:
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines())
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise MatrixFormatError("empty trait matrix")
    head_no, head = lines[0]
    header = head.split()
    if len(header) < 2:
        raise MatrixFormatError("header needs a corner label and at least "
                                "one trait name", line=head_no)
    traits = tuple(header[1:])
    seen_traits = set()
    for k, name in enumerate(traits):
        if name in seen_traits:
            raise MatrixFormatError("duplicate trait name %r" % name,
                                    line=head_no, field=k + 2)
        seen_traits.add(name)

    taxa = []
    seen = set()
    rows = []
    for line_no, ln in lines[1:]:
        fields = ln.split()
        name = fields[0]
        if name in seen:
            raise MatrixFormatError("duplicate taxon name %r" % name,
                                    line=line_no, field=1)
        seen.add(name)
        if len(fields) - 1 != len(traits):
            raise MatrixFormatError(
                "expected %d cells for taxon %r, found %d"
                % (len(traits), name, len(fields) - 1), line=line_no)
        row = np.empty(len(traits), dtype=np.int8)
        for k, cell in enumerate(fields[1:]):
            try:
                row[k] = _CELL[cell]
            except KeyError:
                raise MatrixFormatError("illegal cell %r (want 0, 1, or ?)"
                                        % cell, line=line_no,
                                        field=k + 2) from None
        taxa.append(name)
        rows.append(row)
    if not rows:
        raise MatrixFormatError("no taxon rows", line=head_no)
    return TraitMatrix(tuple(taxa), traits, np.vstack(rows))


def format_trait_matrix(tm: TraitMatrix) -> str:
    out = ["taxon\t" + "\t".join(tm.traits)]
    for i, name in enumerate(tm.taxa):
        cells = "\t".join(_GLYPH[int(v)] for v in tm.cells[i])
        out.append(name + "\t" + cells)
    return "\n".join(out) + "\n"


def read_trait_matrix(path) -> TraitMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_trait_matrix(fh.read())


def save_trait_matrix(tm: TraitMatrix, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_trait_matrix(tm))
