"""Training and evaluation corpora: mixture control, masking, task formatting.

The training corpus mixes majority-language (A) and minority-language (B)
lines at ratio λ. A quarter of the descriptive-property symbols (by default)
are withheld from B: any B sentence realizing one of them is diverted from
training into the masked evaluation split, while the same symbols stay fully
observable through their A realizations.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorpusError, GenerationError
from .grammar import Pcsg, SymbolicSentence, sample_symbolic_sentence
from .lexicon import Lexicon, realize
from .ontology import Ontology, STRUCTURAL_CATEGORIES, SymbolCategory, SymbolId

TASKS = ("T0", "T1", "T2")
LANGS = ("A", "B")

PHRASE_TOKEN = "[P]"
SEP_TOKEN = "<sep>"
EOS_TOKEN = "<eos>"

CONTROL_TOKENS = tuple(f"{t}-{l}" for t in TASKS for l in LANGS)
SPECIAL_TOKENS = (PHRASE_TOKEN, SEP_TOKEN, EOS_TOKEN) + CONTROL_TOKENS


def control_token(task: str, lang: str) -> str:
    if task not in TASKS or lang not in LANGS:
        raise ConfigError(f"unknown task/language pair ({task}, {lang})")
    return f"{task}-{lang}"


@dataclass
class CorpusSpec:
    lam: float = 0.25
    n_majority: int = 100_000
    mask_fraction: float = 0.25
    tasks: tuple[str, ...] = TASKS
    seed: int = 0
    n_eval: int = 1000
    context_budget: int = 256  # worst-case tokens per line (char-level bound)

    def validate(self) -> None:
        if not 0.0 < self.lam <= 0.5:
            raise ConfigError(f"lam must be in (0, 0.5], got {self.lam}")
        if not 0.0 <= self.mask_fraction < 1.0:
            raise ConfigError(f"mask_fraction must be in [0, 1), got {self.mask_fraction}")
        if self.n_majority < 1:
            raise ConfigError(f"n_majority must be >= 1, got {self.n_majority}")
        bad = [t for t in self.tasks if t not in TASKS]
        if bad or not self.tasks:
            raise ConfigError(f"tasks must be a non-empty subset of {TASKS}, got {self.tasks}")


@dataclass
class Corpus:
    spec: CorpusSpec
    train_lines: list[tuple[str, str, str]]  # (task, language, text)
    eval_splits: dict[str, list[str]]  # {"A", "B_seen", "B_masked"} -> raw sentences
    masked_symbols: frozenset[SymbolId]
    masked_words_b: frozenset[str]

    def train_texts(self, lang: str | None = None) -> list[str]:
        return [text for (_, l, text) in self.train_lines if lang is None or l == lang]

    def task_census(self) -> dict[str, int]:
        census: dict[str, int] = {}
        for task, lang, _ in self.train_lines:
            key = control_token(task, lang)
            census[key] = census.get(key, 0) + 1
        return census

    # -- persistence ---------------------------------------------------------

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "train.txt", "w", encoding="utf-8") as fh:
            for _, _, text in self.train_lines:
                fh.write(text + "\n")
        for split, lines in self.eval_splits.items():
            with open(out / f"eval_{split}.txt", "w", encoding="utf-8") as fh:
                for text in lines:
                    fh.write(text + "\n")
        manifest = {
            "spec": vars(self.spec),
            "counts": {
                "train_A": sum(1 for _, l, _ in self.train_lines if l == "A"),
                "train_B": sum(1 for _, l, _ in self.train_lines if l == "B"),
                **{f"eval_{k}": len(v) for k, v in self.eval_splits.items()},
            },
            "task_census": self.task_census(),
            "masked_symbols": sorted(s.key() for s in self.masked_symbols),
            "masked_words_B": sorted(self.masked_words_b),
            "train_langs": [l for _, l, _ in self.train_lines],
            "train_tasks": [t for t, _, _ in self.train_lines],
        }
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)

    @staticmethod
    def load(out_dir: str | Path) -> "Corpus":
        out = Path(out_dir)
        with open(out / "manifest.json", "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        spec = CorpusSpec(**{**manifest["spec"], "tasks": tuple(manifest["spec"]["tasks"])})
        with open(out / "train.txt", "r", encoding="utf-8") as fh:
            texts = [line.rstrip("\n") for line in fh]
        train_lines = list(zip(manifest["train_tasks"], manifest["train_langs"], texts))
        eval_splits = {}
        for split in ("A", "B_seen", "B_masked"):
            with open(out / f"eval_{split}.txt", "r", encoding="utf-8") as fh:
                eval_splits[split] = [line.rstrip("\n") for line in fh]
        return Corpus(
            spec=spec,
            train_lines=train_lines,
            eval_splits=eval_splits,
            masked_symbols=frozenset(SymbolId.parse(k) for k in manifest["masked_symbols"]),
            masked_words_b=frozenset(manifest["masked_words_B"]),
        )


def format_task(
    s: SymbolicSentence,
    lex: Lexicon,
    lang: str,
    task: str,
    seed: int | np.random.Generator = 0,
) -> str:
    """Render one training line: control token plus the task payload.

    T0 and T2 carry the realized sentence (T2 marks the conditional-generation
    convention: at evaluation time the model is prompted with the subject
    prefix and completes the rest). T1 carries the scrambled content words, a
    separator, then the correct sentence.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        np.random.SeedSequence(seed)
    )
    ctrl = control_token(task, lang)
    text = realize(s, lex, lang)
    if task in ("T0", "T2"):
        return f"{ctrl} {text}"
    content = [
        lex.word(sym, lang)
        for sym in s.symbols
        if sym.category not in STRUCTURAL_CATEGORIES
    ]
    order = rng.permutation(len(content))
    scrambled = " ".join(content[i] for i in order)
    return f"{ctrl} {scrambled} {SEP_TOKEN} {text}"


def scramble_prompt(raw_sentence: str, lang: str, seed: int | np.random.Generator = 0) -> str:
    """Build a T1 prompt (up to and including the separator) from a raw sentence."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        np.random.SeedSequence(seed)
    )
    words = raw_sentence.split()
    content = [w for w in words if w not in (PHRASE_TOKEN, SEP_TOKEN, EOS_TOKEN)]
    order = rng.permutation(len(content))
    scrambled = " ".join(content[i] for i in order)
    return f"{control_token('T1', lang)} {scrambled} {SEP_TOKEN}"


def sentence_with_property(
    onto: Ontology, prop: SymbolId, rng: np.random.Generator
) -> SymbolicSentence:
    """Minimal descriptive sentence guaranteed to contain ``prop``."""
    classes = onto.classes_licensing(prop.index)
    if not classes:
        raise GenerationError(f"{prop.key()} is licensed by no class")
    entities = [e for c in classes for e in onto.entities_of_class(c)]
    if not entities:
        raise GenerationError(f"{prop.key()} has no eligible subject")
    subj = entities[int(rng.integers(0, len(entities)))]
    symbols = (
        SymbolId(SymbolCategory.PHRASE, 0),
        SymbolId(SymbolCategory.SUBJECT, subj),
        SymbolId(SymbolCategory.DESC_PREPOSITION, 0),
        prop,
        SymbolId(SymbolCategory.END_OF_SEQ, 0),
    )
    return SymbolicSentence(symbols)


def _worst_case_tokens(text: str) -> int:
    # Upper bound on subword tokens for one line: every non-special word can
    # fragment into single characters; specials and inter-word boundaries add
    # one token each.
    words = text.split()
    n = 0
    for w in words:
        n += 1 if w in SPECIAL_TOKENS else len(w)
    return n + max(0, len(words) - 1)


def _t1_worst_tokens(s: SymbolicSentence, lex: Lexicon, lang: str) -> int:
    # Worst-case token count of the longest formatting (T1) of this sentence.
    words = [lex.word(sym, lang) for sym in s.symbols]
    content_chars = sum(
        len(w)
        for sym, w in zip(s.symbols, words)
        if sym.category not in STRUCTURAL_CATEGORIES
    )
    n_content = sum(1 for sym in s.symbols if sym.category not in STRUCTURAL_CATEGORIES)
    n_struct = len(words) - n_content
    n_line_words = 1 + n_content + 1 + len(words)
    return 1 + content_chars + 1 + content_chars + n_struct + (n_line_words - 1)


def _sample_sentences(
    g: Pcsg,
    onto: Ontology,
    n: int,
    rng: np.random.Generator,
    lex: Lexicon | None = None,
    lang: str = "A",
    budget: int | None = None,
) -> list[SymbolicSentence]:
    out = []
    attempts = 0
    max_attempts = 50 * n + 1000
    while len(out) < n:
        attempts += 1
        if attempts > max_attempts:
            raise CorpusError(
                f"drew only {len(out)}/{n} sentences within the context budget "
                f"of {budget} after {max_attempts} attempts"
            )
        try:
            s = sample_symbolic_sentence(g, onto, rng)
        except GenerationError:
            continue  # conjunction-heavy template lost the rejection lottery
        if budget is not None and lex is not None and _t1_worst_tokens(s, lex, lang) > budget:
            continue  # would not fit the context even fully fragmented
        out.append(s)
    return out


def build_corpus(spec: CorpusSpec, g: Pcsg, onto: Ontology, lex: Lexicon) -> Corpus:
    """Assemble the λ-mixture training corpus and the three eval splits.

    The masked-set exclusion is enforced twice: structurally (masked B lines
    are diverted to the B_masked split) and by an independent whitespace-token
    scan over every emitted training line.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0xC0)))

    properties = onto.symbols(SymbolCategory.DESC_PROPERTY)
    n_masked = round(spec.mask_fraction * len(properties))
    masked_idx = rng.choice(len(properties), size=n_masked, replace=False) if n_masked else []
    masked = frozenset(properties[int(i)] for i in masked_idx)
    masked_words_b = frozenset(lex.word(s, "B") for s in masked)

    for cls in range(onto.cfg.n_classes):
        trainable = [
            p for p in onto.valid_desc_properties(cls)
            if SymbolId(SymbolCategory.DESC_PROPERTY, p) not in masked
        ]
        if not trainable:
            warnings.warn(f"masking left class {cls} with no trainable descriptive property")

    def has_masked(s: SymbolicSentence) -> bool:
        return any(sym in masked for sym in s.symbols)

    def task_for(i: int) -> str:
        return spec.tasks[i % len(spec.tasks)]

    # Majority language: fixed count, every masked symbol must surface via A.
    a_sentences = _sample_sentences(
        g, onto, spec.n_majority, rng, lex, "A", spec.context_budget
    )
    seen_masked = {sym for s in a_sentences for sym in s.symbols if sym in masked}
    missing = sorted(masked - seen_masked, key=lambda s: s.index)
    for j, sym in enumerate(missing):
        a_sentences[len(a_sentences) - 1 - j] = sentence_with_property(onto, sym, rng)

    train_lines: list[tuple[str, str, str]] = []
    for i, s in enumerate(a_sentences):
        task = task_for(i)
        train_lines.append((task, "A", format_task(s, lex, "A", task, rng)))

    # Minority language: keep only mask-free lines for training, divert the
    # rest to the masked eval split.
    n_b = round(spec.lam * spec.n_majority)
    b_seen_sentences: list[SymbolicSentence] = []
    b_masked_eval: list[str] = []
    want_masked = spec.n_eval if masked else 0
    attempts = 0
    max_attempts = 50 * (n_b + spec.n_eval) + 1000
    while (len(b_seen_sentences) < n_b or len(b_masked_eval) < want_masked) and attempts < max_attempts:
        attempts += 1
        try:
            s = sample_symbolic_sentence(g, onto, rng)
        except GenerationError:
            continue
        if _t1_worst_tokens(s, lex, "B") > spec.context_budget:
            continue
        if has_masked(s):
            if len(b_masked_eval) < spec.n_eval:
                b_masked_eval.append(realize(s, lex, "B"))
        elif len(b_seen_sentences) < n_b:
            b_seen_sentences.append(s)
    if len(b_seen_sentences) < n_b:
        raise CorpusError(
            f"could not draw {n_b} mask-free B sentences in {max_attempts} attempts"
        )
    if len(b_masked_eval) < want_masked:
        raise CorpusError(
            f"could not draw {want_masked} masked B sentences in {max_attempts} attempts"
        )
    for i, s in enumerate(b_seen_sentences):
        task = task_for(i)
        train_lines.append((task, "B", format_task(s, lex, "B", task, rng)))

    eval_a = [
        realize(s, lex, "A")
        for s in _sample_sentences(g, onto, spec.n_eval, rng, lex, "A", spec.context_budget)
    ]
    eval_b_seen: list[str] = []
    attempts = 0
    while len(eval_b_seen) < spec.n_eval:
        attempts += 1
        if attempts > 50 * spec.n_eval + 1000:
            raise CorpusError(
                f"could not draw {spec.n_eval} mask-free B eval sentences"
            )
        try:
            s = sample_symbolic_sentence(g, onto, rng)
        except GenerationError:
            continue
        if _t1_worst_tokens(s, lex, "B") > spec.context_budget:
            continue
        if not has_masked(s):
            eval_b_seen.append(realize(s, lex, "B"))

    corpus = Corpus(
        spec=spec,
        train_lines=train_lines,
        eval_splits={"A": eval_a, "B_seen": eval_b_seen, "B_masked": b_masked_eval},
        masked_symbols=masked,
        masked_words_b=masked_words_b,
    )

    _check_exclusion(corpus)
    _check_context_budget(corpus)
    return corpus


def _check_exclusion(corpus: Corpus) -> None:
    if not corpus.masked_words_b:
        return
    masked = corpus.masked_words_b
    for _, _, text in corpus.train_lines:
        hit = set(text.split()) & masked
        if hit:
            raise CorpusError(
                f"masked B realization {sorted(hit)[0]!r} leaked into a training line; "
                "masked forms are not excludable at this lexical-distance/affix setting"
            )


def _check_context_budget(corpus: Corpus) -> None:
    worst = max(_worst_case_tokens(text) for _, _, text in corpus.train_lines)
    if worst > corpus.spec.context_budget:
        raise CorpusError(
            f"worst-case line needs {worst} tokens, over the context budget "
            f"of {corpus.spec.context_budget}"
        )
