"""Surface realization: proto-stems, cognate drift, and per-language affixes.

Every abstract symbol gets a latent proto-stem built from syllable patterns
with Zipf-weighted letters. Each language realizes the stem as a cognate at a
controllable edit distance ``d`` and wraps it in category-conditioned affixes,
so the two languages stay morphologically parallel while their word forms
drift apart as ``d`` grows.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LexiconError
from .ontology import (
    STRUCTURAL_CATEGORIES,
    STRUCTURAL_LITERALS,
    SymbolCategory,
    SymbolId,
)

VOWELS = "aeiou"
CONSONANTS = "".join(c for c in string.ascii_lowercase if c not in VOWELS)

SYLLABLE_PATTERNS = ("CVC", "CCV", "CVCC", "CV", "VC", "V")

# Which side of the stem each category marks. Prepositions, conjunctions and
# structural tokens stay bare.
PREFIX_CATEGORIES = (SymbolCategory.SUBJECT, SymbolCategory.OBJECT)
SUFFIX_CATEGORIES = (
    SymbolCategory.DESC_PROPERTY,
    SymbolCategory.REL_PROPERTY,
    SymbolCategory.DESC_VERB,
    SymbolCategory.REL_VERB,
)


def zipf_table(letters: str, exponent: float = 1.0) -> dict[str, float]:
    """Probability per letter, Zipf-shaped over the given ranking order."""
    weights = np.array([1.0 / (r + 1) ** exponent for r in range(len(letters))])
    probs = weights / weights.sum()
    return {ch: float(p) for ch, p in zip(letters, probs)}


@dataclass
class LanguageSpec:
    """Letter statistics, affixes and syllable shapes for one language."""

    id: str
    letter_probs: dict[str, float]
    affixes: dict[SymbolCategory, tuple[str, str]] = field(default_factory=dict)
    syllable_patterns: tuple[str, ...] = SYLLABLE_PATTERNS

    def __post_init__(self):
        if self.id not in ("A", "B", "proto"):
            raise ConfigError(f"language id must be 'A' or 'B', got {self.id!r}")
        for pat in self.syllable_patterns:
            if pat not in SYLLABLE_PATTERNS:
                raise ConfigError(f"unsupported syllable pattern {pat!r}")
        for group in (CONSONANTS, VOWELS):
            total = sum(self.letter_probs.get(ch, 0.0) for ch in group)
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(
                    f"letter probabilities for {self.id} sum to {total} over "
                    f"group {group[:3]}..., expected 1"
                )
        self._cons = np.array([self.letter_probs[ch] for ch in CONSONANTS])
        self._vows = np.array([self.letter_probs[ch] for ch in VOWELS])
        self._cons_cum = np.cumsum(self._cons)
        self._vows_cum = np.cumsum(self._vows)

    def sample_letter(self, rng: np.random.Generator, consonant: bool) -> str:
        pool = CONSONANTS if consonant else VOWELS
        cum = self._cons_cum if consonant else self._vows_cum
        return pool[int(np.searchsorted(cum, rng.random()))]

    def sample_any_letter(self, rng: np.random.Generator) -> str:
        return self.sample_letter(rng, consonant=rng.random() < 0.5)

    def affix_for(self, category: SymbolCategory) -> tuple[str, str]:
        return self.affixes.get(category, ("", ""))


def _perturbed_ranking(base: str, fraction: float, rng: np.random.Generator) -> str:
    """Shuffle a d-proportional share of the ranking positions."""
    letters = list(base)
    k = round(fraction * len(letters))
    if k >= 2:
        pos = rng.choice(len(letters), size=k, replace=False)
        vals = [letters[p] for p in pos]
        perm = rng.permutation(k)
        for p, j in zip(pos, perm):
            letters[p] = vals[j]
    return "".join(letters)


def make_language_specs(
    d: float,
    seed: int = 0,
    zipf_exponent: float = 1.0,
    with_affixes: bool = True,
) -> tuple["LanguageSpec", "LanguageSpec", "LanguageSpec"]:
    """Build (proto, A, B) specs.

    A shares the proto letter ranking; B's ranking is shuffled away from it in
    proportion to the lexical distance ``d``. Affix inventories are drawn
    per language and category.
    """
    if not 0.0 <= d <= 1.0:
        raise ConfigError(f"lexical distance d must be in [0, 1], got {d}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA1F)))
    cons_rank = "".join(rng.permutation(list(CONSONANTS)))
    vow_rank = "".join(rng.permutation(list(VOWELS)))

    def table(cons: str, vows: str) -> dict[str, float]:
        probs = zipf_table(cons, zipf_exponent)
        probs.update(zipf_table(vows, zipf_exponent))
        return probs

    proto = LanguageSpec("proto", table(cons_rank, vow_rank))
    spec_a = LanguageSpec("A", table(cons_rank, vow_rank))
    cons_b = _perturbed_ranking(cons_rank, d, rng)
    vow_b = _perturbed_ranking(vow_rank, d, rng)
    spec_b = LanguageSpec("B", table(cons_b, vow_b))

    if with_affixes:
        for spec in (spec_a, spec_b):
            affixes = {}
            for cat in PREFIX_CATEGORIES:
                affixes[cat] = (_sample_affix(spec, rng), "")
            for cat in SUFFIX_CATEGORIES:
                affixes[cat] = ("", _sample_affix(spec, rng))
            spec.affixes = affixes
    return proto, spec_a, spec_b


def _sample_affix(spec: LanguageSpec, rng: np.random.Generator) -> str:
    pattern = ("CV", "VC", "CVC", "CCV")[int(rng.integers(0, 4))]
    return "".join(spec.sample_letter(rng, consonant=(c == "C")) for c in pattern)


def generate_stem(
    spec: LanguageSpec, seed: int | np.random.Generator = 0, n_syllables: tuple[int, ...] = (2, 3)
) -> str:
    """Concatenate sampled syllable patterns into a stem.

    Two or three syllables put the corpus-average affixed word at about nine
    characters.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        np.random.SeedSequence(seed)
    )
    count = n_syllables[int(rng.integers(0, len(n_syllables)))]
    out = []
    for _ in range(count):
        pattern = spec.syllable_patterns[int(rng.integers(0, len(spec.syllable_patterns)))]
        for slot in pattern:
            out.append(spec.sample_letter(rng, consonant=(slot == "C")))
    return "".join(out)


def derive_cognate(
    stem: str,
    lang: LanguageSpec,
    d: float,
    seed: int | np.random.Generator = 0,
) -> str:
    """Apply ceil(d * len(stem)) edits to the stem, drawing letters from lang.

    Edits are substitute/insert/delete in equal thirds, so ``d`` reads as a
    per-character edit rate; d = 0 returns the stem unchanged.
    """
    if not 0.0 <= d <= 1.0:
        raise ConfigError(f"lexical distance d must be in [0, 1], got {d}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        np.random.SeedSequence(seed)
    )
    n_edits = int(np.ceil(d * len(stem)))
    word = list(stem)
    for _ in range(n_edits):
        op = int(rng.integers(0, 3))
        if op == 0 and word:  # substitute
            pos = int(rng.integers(0, len(word)))
            word[pos] = lang.sample_any_letter(rng)
        elif op == 1:  # insert
            pos = int(rng.integers(0, len(word) + 1))
            word.insert(pos, lang.sample_any_letter(rng))
        elif word:  # delete
            pos = int(rng.integers(0, len(word)))
            word.pop(pos)
    return "".join(word)


@dataclass
class Lexicon:
    """Realization tables for both languages; immutable after build."""

    distance: float
    seed: int
    stems: dict[SymbolId, str]
    surface: dict[tuple[str, str], str]  # (symbol key, language) -> word
    _inverse: dict[str, dict[str, SymbolId]] = field(default_factory=dict)

    def __post_init__(self):
        if not self._inverse:
            inv: dict[str, dict[str, SymbolId]] = {"A": {}, "B": {}}
            for (key, lang), word in self.surface.items():
                inv[lang][word] = SymbolId.parse(key)
            self._inverse = inv

    def word(self, symbol: SymbolId, lang: str) -> str:
        try:
            return self.surface[(symbol.key(), lang)]
        except KeyError:
            raise LexiconError(f"no {lang} realization for symbol {symbol.key()}")

    def invert(self, word: str, lang: str) -> SymbolId | None:
        return self._inverse.get(lang, {}).get(word)

    def words(self, lang: str, include_structural: bool = True) -> list[str]:
        out = []
        for (key, wl), word in self.surface.items():
            if wl != lang:
                continue
            if not include_structural and SymbolId.parse(key).category in STRUCTURAL_CATEGORIES:
                continue
            out.append(word)
        return out

    # -- manifest ------------------------------------------------------------

    def to_manifest(self) -> str:
        lines = [
            f"# distance\t{self.distance}",
            f"# seed\t{self.seed}",
            "# symbol\tcategory\tstem\tword_A\tword_B",
        ]
        for sym in sorted(self.stems, key=lambda s: (s.category.value, s.index)):
            lines.append(
                "\t".join(
                    (
                        sym.key(),
                        sym.category.value,
                        self.stems[sym],
                        self.surface[(sym.key(), "A")],
                        self.surface[(sym.key(), "B")],
                    )
                )
            )
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_manifest(text: str) -> "Lexicon":
        distance = seed = None
        stems: dict[SymbolId, str] = {}
        surface: dict[tuple[str, str], str] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                parts = line[1:].strip().split("\t")
                if parts[0] == "distance":
                    distance = float(parts[1])
                elif parts[0] == "seed":
                    seed = int(parts[1])
                continue
            key, _cat, stem, word_a, word_b = line.split("\t")
            sym = SymbolId.parse(key)
            stems[sym] = stem
            surface[(key, "A")] = word_a
            surface[(key, "B")] = word_b
        if distance is None or seed is None:
            raise LexiconError("manifest missing distance/seed header")
        return Lexicon(distance=distance, seed=seed, stems=stems, surface=surface)


def build_lexicon(
    vocab: list[SymbolId],
    specs: tuple[LanguageSpec, LanguageSpec, LanguageSpec],
    d: float,
    seed: int = 0,
    collision_budget: int = 1000,
) -> Lexicon:
    """Realize every symbol in both languages from a shared proto-stem.

    word = prefix(category) + DeriveCognate(stem, language) + suffix(category).
    On a surface collision within either language the whole symbol is redrawn
    (stem included) from a fresh stream, so forms stay morphologically regular.
    """
    proto, spec_a, spec_b = specs
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5E)))
    stems: dict[SymbolId, str] = {}
    surface: dict[tuple[str, str], str] = {}
    used = {"A": set(), "B": set()}

    for sym in vocab:
        if sym.category in STRUCTURAL_CATEGORIES:
            literal = STRUCTURAL_LITERALS[sym.category]
            stems[sym] = literal
            for lang in ("A", "B"):
                surface[(sym.key(), lang)] = literal
                used[lang].add(literal)
            continue
        for attempt in range(collision_budget):
            stem = generate_stem(proto, rng)
            words = {}
            for lang_spec in (spec_a, spec_b):
                prefix, suffix = lang_spec.affix_for(sym.category)
                words[lang_spec.id] = prefix + derive_cognate(stem, lang_spec, d, rng) + suffix
            if words["A"] not in used["A"] and words["B"] not in used["B"]:
                break
        else:
            raise LexiconError(
                f"could not find unique realizations for {sym.key()} "
                f"after {collision_budget} attempts"
            )
        stems[sym] = stem
        for lang in ("A", "B"):
            surface[(sym.key(), lang)] = words[lang]
            used[lang].add(words[lang])

    return Lexicon(distance=d, seed=seed, stems=stems, surface=surface)


def realize(sentence, lex: Lexicon, lang: str) -> str:
    """Whitespace-join the surface words of a symbolic sentence."""
    return " ".join(lex.word(sym, lang) for sym in sentence.symbols)


def levenshtein(a: str, b: str) -> int:
    """Plain dynamic-programming edit distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def measure_lexical_similarity(lex: Lexicon) -> float:
    """Mean normalized edit distance between paired A/B words.

    Structural tokens are identical in both languages by construction and are
    excluded so the measure reflects the cognate drift knob alone.
    """
    total = 0.0
    n = 0
    for sym in lex.stems:
        if sym.category in STRUCTURAL_CATEGORIES:
            continue
        wa = lex.surface[(sym.key(), "A")]
        wb = lex.surface[(sym.key(), "B")]
        total += levenshtein(wa, wb) / max(len(wa), len(wb), 1)
        n += 1
    return total / n if n else 0.0
