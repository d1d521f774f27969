"""Weighted production grammar: sentence templates, sampling, and recognition.

The rule table is context-free as written; semantic constraints enter only
through rejection of slot fillings that violate the ontology's validity
relation. Probabilities steer generation and are ignored by the recognizer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ContractError, GenerationError
from .ontology import (
    ENTITY_CATEGORIES,
    STRUCTURAL_LITERALS,
    Ontology,
    SymbolCategory,
    SymbolId,
)

# Verbatim default rule table. `S -> ... SepSeq S` is present but dead
# (weight 0.0); enable via Pcsg.with_multi_sentence_weight.
DEFAULT_RULES = """\
S     -> Ph NP VP EndOfSeq [1.0]
      | Ph NP VP SepSeq S  [0.0]

NP    -> subjectID         [0.8]
      | NP Conj NP         [0.2]

VP    -> descPreP descV    [0.4]
      | relV relPreP relNP [0.4]
      | VP Conj VP         [0.2]

relNP -> objectID          [0.7]
      | objectID Conj relNP[0.3]

Ph        -> '[P]'      [1.0]
subjectID -> 'subjectID'[1.0]
objectID  -> 'objectID' [1.0]
relV      -> 'relV'     [1.0]
descV     -> 'descV'    [1.0]
descPreP  -> 'descPreP' [1.0]
relPreP   -> 'relPreP'  [1.0]
Conj      -> 'conj'     [1.0]
SepSeq    -> '<sep>'    [1.0]
EndOfSeq  -> '<eos>'    [1.0]
"""

# Terminal literal emitted by the grammar -> category of the symbol that
# fills the slot.
TERMINAL_CATEGORY = {
    "[P]": SymbolCategory.PHRASE,
    "subjectID": SymbolCategory.SUBJECT,
    "objectID": SymbolCategory.OBJECT,
    "relV": SymbolCategory.REL_PROPERTY,
    "descV": SymbolCategory.DESC_PROPERTY,
    "descPreP": SymbolCategory.DESC_PREPOSITION,
    "relPreP": SymbolCategory.REL_PREPOSITION,
    "conj": SymbolCategory.CONJUNCTION,
    "<sep>": SymbolCategory.SEPARATOR,
    "<eos>": SymbolCategory.END_OF_SEQ,
}

CATEGORY_TERMINAL = {v: k for k, v in TERMINAL_CATEGORY.items()}

_ALT_RE = re.compile(r"^(.*?)\[\s*([0-9.eE+-]+)\s*\]\s*$")


@dataclass(frozen=True)
class RhsSymbol:
    """One right-hand-side element; terminals are the quoted literals."""

    text: str
    terminal: bool

    def __str__(self) -> str:
        return f"'{self.text}'" if self.terminal else self.text


@dataclass(frozen=True)
class Rule:
    lhs: str
    rhs: tuple[RhsSymbol, ...]
    prob: float


@dataclass(frozen=True)
class SymbolicSentence:
    """Terminal yield of one derivation, with the rule indices that produced it.

    ``derivation`` lists applied rule indices in preorder. Sentences
    reconstructed from surface text (where no derivation is known) carry an
    empty derivation.
    """

    symbols: tuple[SymbolId, ...]
    derivation: tuple[int, ...] = ()

    def categories(self) -> tuple[SymbolCategory, ...]:
        return tuple(s.category for s in self.symbols)


class Pcsg:
    """Ordered weighted rule table with a designated start symbol."""

    def __init__(self, rules: list[Rule], start: str = "S"):
        if not rules:
            raise ConfigError("rules must be non-empty")
        self.rules = tuple(rules)
        self.start = start
        self.nonterminals = {r.lhs for r in rules}
        if start not in self.nonterminals:
            raise ConfigError(f"start symbol {start!r} has no productions")
        self._by_lhs: dict[str, list[int]] = {}
        for i, r in enumerate(rules):
            self._by_lhs.setdefault(r.lhs, []).append(i)
        self._validate_probs()
        self._recursive = self._recursive_rules()
        self._alts = {
            lhs: self._cumulative(idxs) for lhs, idxs in self._by_lhs.items()
        }
        self._alts_nonrec = {
            lhs: self._cumulative([i for i in idxs if i not in self._recursive])
            for lhs, idxs in self._by_lhs.items()
        }
        self._recognize_cached = lru_cache(maxsize=65536)(self._recognize)

    def _cumulative(self, idxs: list[int]):
        probs = [self.rules[i].prob for i in idxs]
        total = sum(probs)
        if total <= 0:
            return tuple(idxs), ()
        acc, cum = 0.0, []
        for p in probs:
            acc += p / total
            cum.append(acc)
        cum[-1] = 1.0 + 1e-12
        return tuple(idxs), tuple(cum)

    # -- construction -------------------------------------------------------

    @staticmethod
    def from_text(text: str, start: str = "S") -> "Pcsg":
        rules: list[Rule] = []
        lhs = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("|"):
                if lhs is None:
                    raise ConfigError("continuation line before any rule")
                body = line[1:]
            else:
                lhs_part, arrow, body = line.partition("->")
                if not arrow:
                    raise ConfigError(f"expected '->' in rule line: {raw!r}")
                lhs = lhs_part.strip()
            m = _ALT_RE.match(body)
            if not m:
                raise ConfigError(f"expected trailing [prob] in rule line: {raw!r}")
            symbols = []
            for tok in m.group(1).split():
                if tok.startswith("'") and tok.endswith("'"):
                    symbols.append(RhsSymbol(tok[1:-1], terminal=True))
                else:
                    symbols.append(RhsSymbol(tok, terminal=False))
            rules.append(Rule(lhs, tuple(symbols), float(m.group(2))))
        return Pcsg(rules, start=start)

    @staticmethod
    def from_file(path) -> "Pcsg":
        with open(path, "r", encoding="utf-8") as fh:
            return Pcsg.from_text(fh.read())

    @staticmethod
    def default() -> "Pcsg":
        return Pcsg.from_text(DEFAULT_RULES)

    def with_multi_sentence_weight(self, weight: float) -> "Pcsg":
        """Return a copy with the dead multi-clause alternative reweighted."""
        rules = []
        for r in self.rules:
            names = [s.text for s in r.rhs if not s.terminal]
            if r.lhs == "S" and "SepSeq" in names:
                rules.append(Rule(r.lhs, r.rhs, weight))
            elif r.lhs == "S":
                rules.append(Rule(r.lhs, r.rhs, 1.0 - weight))
            else:
                rules.append(r)
        return Pcsg(rules, start=self.start)

    def _validate_probs(self) -> None:
        for lhs, idxs in self._by_lhs.items():
            total = sum(self.rules[i].prob for i in idxs)
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(f"probabilities for {lhs!r} sum to {total}, not 1")

    def _recursive_rules(self) -> set[int]:
        """Indices of rules whose expansion can reproduce their own lhs."""
        reach: dict[str, set[str]] = {nt: set() for nt in self.nonterminals}
        for r in self.rules:
            for s in r.rhs:
                if not s.terminal:
                    reach[r.lhs].add(s.text)
        changed = True
        while changed:
            changed = False
            for nt in self.nonterminals:
                extra = set()
                for child in reach[nt]:
                    extra |= reach[child]
                if not extra <= reach[nt]:
                    reach[nt] |= extra
                    changed = True
        out = set()
        for i, r in enumerate(self.rules):
            for s in r.rhs:
                if not s.terminal and (s.text == r.lhs or r.lhs in reach[s.text]):
                    out.add(i)
                    break
        return out

    # -- sampling -----------------------------------------------------------

    def sample_template(
        self, rng: np.random.Generator, max_depth: int = 12
    ) -> tuple[list[str], list[int]]:
        """Expand from start, returning (terminal yield, applied rule indices).

        At the depth bound only non-recursive alternatives remain eligible,
        which keeps derivations finite without touching the printed weights
        anywhere it matters.
        """
        yield_: list[str] = []
        derivation: list[int] = []

        def expand(symbol: str, depth: int) -> None:
            idxs, cum = self._alts[symbol] if depth < max_depth else self._alts_nonrec[symbol]
            if not idxs:
                raise GenerationError(
                    f"no non-recursive alternative for {symbol!r} at depth bound"
                )
            if not cum:
                raise GenerationError(f"all alternatives for {symbol!r} have zero weight")
            r = rng.random()
            k = 0
            while cum[k] < r:
                k += 1
            choice = idxs[k]
            derivation.append(choice)
            for s in self.rules[choice].rhs:
                if s.terminal:
                    yield_.append(s.text)
                else:
                    expand(s.text, depth + 1)

        expand(self.start, 0)
        return yield_, derivation

    # -- recognition ----------------------------------------------------------

    def is_grammatical(self, categories) -> bool:
        """Earley recognition of a category sequence, probabilities ignored."""
        try:
            terminals = tuple(CATEGORY_TERMINAL[c] for c in categories)
        except KeyError:
            return False
        return self._recognize_cached(terminals)

    def _recognize(self, terminals: tuple[str, ...]) -> bool:
        n = len(terminals)
        # Earley items: (rule index, dot, origin)
        chart: list[set[tuple[int, int, int]]] = [set() for _ in range(n + 1)]
        for i in self._by_lhs[self.start]:
            chart[0].add((i, 0, 0))
        for pos in range(n + 1):
            agenda = list(chart[pos])
            while agenda:
                item = agenda.pop()
                ri, dot, origin = item
                rule = self.rules[ri]
                if dot < len(rule.rhs):
                    nxt = rule.rhs[dot]
                    if nxt.terminal:
                        if pos < n and terminals[pos] == nxt.text:
                            nitem = (ri, dot + 1, origin)
                            if nitem not in chart[pos + 1]:
                                chart[pos + 1].add(nitem)
                    else:
                        for rj in self._by_lhs.get(nxt.text, ()):
                            nitem = (rj, 0, pos)
                            if nitem not in chart[pos]:
                                chart[pos].add(nitem)
                                agenda.append(nitem)
                        # nullable completion not needed: no empty productions
                else:
                    for pitem in list(chart[origin]):
                        pri, pdot, porigin = pitem
                        prule = self.rules[pri]
                        if (
                            pdot < len(prule.rhs)
                            and not prule.rhs[pdot].terminal
                            and prule.rhs[pdot].text == rule.lhs
                        ):
                            nitem = (pri, pdot + 1, porigin)
                            if nitem not in chart[pos]:
                                chart[pos].add(nitem)
                                agenda.append(nitem)
        return any(
            ri in self._by_lhs[self.start] and dot == len(self.rules[ri].rhs) and origin == 0
            for (ri, dot, origin) in chart[n]
        )


def is_grammatical(g: Pcsg, categories) -> bool:
    return g.is_grammatical(categories)


# -- slot filling -------------------------------------------------------------


@dataclass
class _Predicate:
    kind: str  # "desc" | "rel"
    prop_pos: int
    object_pos: list[int] = field(default_factory=list)


@dataclass
class _Clause:
    subject_pos: list[int] = field(default_factory=list)
    predicates: list[_Predicate] = field(default_factory=list)


def _extract_clause_positions(cats) -> list[_Clause]:
    """Group a grammatical category sequence into clauses of slot positions.

    The default grammar is unambiguous for this purpose: after a conjunction
    the next category decides whether the conjunct extends the subject list,
    the object list, or starts a new predicate.
    """
    clauses: list[_Clause] = []
    i = 0
    n = len(cats)

    while i < n:
        if cats[i] is not SymbolCategory.PHRASE:
            raise ContractError(f"expected clause start at position {i}")
        i += 1
        clause = _Clause()
        # subjects
        while True:
            if i >= n or cats[i] is not SymbolCategory.SUBJECT:
                raise ContractError(f"expected subject at position {i}")
            clause.subject_pos.append(i)
            i += 1
            if (
                i + 1 < n
                and cats[i] is SymbolCategory.CONJUNCTION
                and cats[i + 1] is SymbolCategory.SUBJECT
            ):
                i += 1
                continue
            break
        # predicates
        while True:
            if i < n and cats[i] is SymbolCategory.DESC_PREPOSITION:
                if i + 1 >= n or cats[i + 1] is not SymbolCategory.DESC_PROPERTY:
                    raise ContractError(f"expected descriptive property at position {i + 1}")
                clause.predicates.append(_Predicate("desc", i + 1))
                i += 2
            elif i < n and cats[i] is SymbolCategory.REL_PROPERTY:
                if i + 1 >= n or cats[i + 1] is not SymbolCategory.REL_PREPOSITION:
                    raise ContractError(f"expected relational preposition at position {i + 1}")
                pred = _Predicate("rel", i)
                i += 2
                while True:
                    if i >= n or cats[i] is not SymbolCategory.OBJECT:
                        raise ContractError(f"expected object at position {i}")
                    pred.object_pos.append(i)
                    i += 1
                    if (
                        i + 1 < n
                        and cats[i] is SymbolCategory.CONJUNCTION
                        and cats[i + 1] is SymbolCategory.OBJECT
                    ):
                        i += 1
                        continue
                    break
                clause.predicates.append(pred)
            else:
                raise ContractError(f"expected predicate at position {i}")
            if i < n and cats[i] is SymbolCategory.CONJUNCTION:
                i += 1
                continue
            break
        clauses.append(clause)
        if i < n and cats[i] is SymbolCategory.END_OF_SEQ:
            i += 1
            if i == n:
                break
            continue
        if i < n and cats[i] is SymbolCategory.SEPARATOR:
            i += 1
            continue
        raise ContractError(f"expected clause terminator at position {i}")
    if i != n:
        raise ContractError(f"trailing symbols after end of sequence at position {i}")
    return clauses


@lru_cache(maxsize=4096)
def _template_plan(template: tuple[str, ...]):
    """Cached slot categories and clause structure for a terminal template."""
    cats = tuple(TERMINAL_CATEGORY[t] for t in template)
    return cats, tuple(_extract_clause_positions(cats))


def _violation_count(symbols, onto: Ontology) -> int:
    violations = 0
    for clause in _extract_clause_positions([s.category for s in symbols]):
        for sp in clause.subject_pos:
            subj = symbols[sp]
            for pred in clause.predicates:
                if pred.kind == "desc":
                    if not onto.is_desc_valid(subj, symbols[pred.prop_pos]):
                        violations += 1
                else:
                    for op in pred.object_pos:
                        if not onto.is_rel_valid(subj, symbols[pred.prop_pos], symbols[op]):
                            violations += 1
    return violations


_DEFAULT_GRAMMAR: Pcsg | None = None


def default_grammar() -> Pcsg:
    global _DEFAULT_GRAMMAR
    if _DEFAULT_GRAMMAR is None:
        _DEFAULT_GRAMMAR = Pcsg.from_text(DEFAULT_RULES)
    return _DEFAULT_GRAMMAR


def type_violations(s: SymbolicSentence, onto: Ontology, g: Pcsg | None = None) -> int:
    """Count (subject, property) / (subject, rel, object) groups violating Γ."""
    g = g or default_grammar()
    if not g.is_grammatical(s.categories()):
        raise ContractError("type_violations requires a grammatical sentence")
    return _violation_count(s.symbols, onto)


def sample_symbolic_sentence(
    g: Pcsg,
    onto: Ontology,
    seed: int | np.random.Generator = 0,
    max_depth: int = 12,
    rejection_budget: int = 1000,
) -> SymbolicSentence:
    """Sample a template from ``g`` and fill slots uniformly until Γ holds.

    Whole fillings are rejected and re-drawn (the template is kept) so that,
    conditioned on validity, concept choices stay uniform.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        np.random.SeedSequence(seed)
    )
    template, derivation = g.sample_template(rng, max_depth=max_depth)

    try:
        cats, clauses = _template_plan(tuple(template))
    except KeyError as exc:
        raise GenerationError(f"unknown terminal {exc}", template=template)
    highs = np.array([onto.category_size(c) for c in cats], dtype=np.int64)
    if (highs == 0).any():
        missing = cats[int(np.argmin(highs))]
        raise GenerationError(
            f"ontology has no symbols of category {missing.value}", template=template
        )

    class_arr = onto.class_array
    desc_mask = onto.desc_mask
    rel_mask = onto.rel_mask
    # Attempts are drawn in vectorized blocks; the first valid draw wins, which
    # leaves the accept/reject law identical to one-at-a-time rejection.
    block = min(64, rejection_budget)
    attempts = 0
    while attempts < rejection_budget:
        n_draw = min(block, rejection_budget - attempts)
        attempts += n_draw
        idx = rng.integers(0, highs, size=(n_draw, len(highs)))
        ok = np.ones(n_draw, dtype=bool)
        for clause in clauses:
            subj_cls = class_arr[idx[:, clause.subject_pos]]  # (n_draw, n_subj)
            for pred in clause.predicates:
                if pred.kind == "desc":
                    valid = desc_mask[subj_cls, idx[:, pred.prop_pos, None]]
                    ok &= valid.all(axis=1)
                else:
                    obj_cls = class_arr[idx[:, pred.object_pos]]
                    valid = rel_mask[
                        subj_cls[:, :, None],
                        idx[:, pred.prop_pos, None, None],
                        obj_cls[:, None, :],
                    ]
                    ok &= valid.all(axis=(1, 2))
        hits = np.flatnonzero(ok)
        if hits.size:
            chosen = idx[hits[0]]
            symbols = tuple(SymbolId(c, int(i)) for c, i in zip(cats, chosen))
            return SymbolicSentence(symbols, tuple(derivation))
    raise GenerationError(
        f"rejection budget of {rejection_budget} exhausted", template=template
    )
