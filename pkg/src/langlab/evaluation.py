"""Generation scoring, emergence steps, and trie-constrained reachability.

Reachability asks whether a model could produce a target word when decoding
is restricted, at every step, to tokens that both continue some tokenized
target and rank inside the model's top-K predictions. All live prefixes
across all searches are scored with one batched model call per decoding
step.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .corpus import PHRASE_TOKEN, control_token
from .errors import ConfigError, ContextError, ContractError
from .grammar import Pcsg, SymbolicSentence, type_violations
from .lexicon import Lexicon
from .ontology import Ontology, SymbolCategory, SymbolId


# ---------------------------------------------------------------------------
# token trie
# ---------------------------------------------------------------------------


class TokenTrie:
    """Prefix tree over token-id sequences with terminal markers."""

    def __init__(self):
        self.children: list[dict[int, int]] = [{}]
        self.terminal: list[bool] = [False]

    def insert(self, seq) -> None:
        if not len(seq):
            raise ConfigError("cannot insert an empty target sequence")
        node = 0
        for tok in seq:
            nxt = self.children[node].get(tok)
            if nxt is None:
                nxt = len(self.children)
                self.children.append({})
                self.terminal.append(False)
                self.children[node][tok] = nxt
            node = nxt
        self.terminal[node] = True

    def enumerate(self) -> set[tuple[int, ...]]:
        out: set[tuple[int, ...]] = set()

        def walk(node: int, prefix: tuple[int, ...]):
            if self.terminal[node]:
                out.add(prefix)
            for tok, child in self.children[node].items():
                walk(child, prefix + (tok,))

        walk(0, ())
        return out

    def max_depth(self) -> int:
        best = 0

        def walk(node: int, depth: int):
            nonlocal best
            best = max(best, depth)
            for child in self.children[node].values():
                walk(child, depth + 1)

        walk(0, 0)
        return best


# ---------------------------------------------------------------------------
# generation scoring
# ---------------------------------------------------------------------------


_STRUCTURAL_WORDS = frozenset({"[P]", "<sep>", "<eos>"})


def score_generation(
    text: str, lex: Lexicon, g: Pcsg, onto: Ontology, lang: str
) -> tuple[float, bool, int | None]:
    """Score one generated line: word validity, grammaticality, violations.

    Validity is the fraction of content words (structural markers excluded)
    found in the full lexicon for ``lang`` - withheld forms included, since
    the evaluator sees everything the model does not. A line with no content
    words scores zero: emitting bare markers is not lexical competence.
    Grammaticality additionally needs every word to invert and the category
    sequence to parse; violations are only counted once the line parses. The
    cascade mirrors the order in which capabilities can emerge.
    """
    words = text.split()
    if not words:
        return 0.0, False, None
    symbols = [lex.invert(w, lang) for w in words]
    content = [
        ok
        for w, ok in zip(words, (s is not None for s in symbols))
        if w not in _STRUCTURAL_WORDS
    ]
    validity = float(np.mean(content)) if content else 0.0
    if not content or any(s is None for s in symbols):
        return validity, False, None
    if not g.is_grammatical([s.category for s in symbols]):
        return validity, False, None
    violations = type_violations(SymbolicSentence(tuple(symbols)), onto, g)
    return validity, True, violations


def emergence_step(trajectory, threshold: float = 0.02):
    """First step whose value strictly exceeds the threshold, else None."""
    prev = None
    for step, value in trajectory:
        if prev is not None and step <= prev:
            raise ContractError("trajectory steps must be strictly increasing")
        prev = step
        if value > threshold:
            return step
    return None


# ---------------------------------------------------------------------------
# top-K reachability
# ---------------------------------------------------------------------------


@dataclass
class _Search:
    sid: int
    prompt: tuple[int, ...]
    trie: TokenTrie
    frontier: list[tuple[tuple[int, ...], int, float]] = field(default_factory=list)
    reached: bool = False
    cap_hit: bool = False


def _topk_member_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean (rows, vocab) mask of top-k entries; ties break toward lower ids."""
    order = np.argsort(-scores, axis=-1, kind="stable")
    mask = np.zeros(scores.shape, dtype=bool)
    rows = np.arange(scores.shape[0])[:, None]
    mask[rows, order[:, :k]] = True
    return mask


def reachable_targets(
    model,
    prompt_ids,
    target_seqs,
    k: int,
    frontier_cap: int = 4096,
) -> tuple[bool, bool]:
    """Single-search wrapper; returns (reached, frontier cap was hit)."""
    results = run_reachability_searches(
        model, [(tuple(prompt_ids), list(target_seqs))], k, frontier_cap
    )
    return results[0]


def run_reachability_searches(
    model,
    searches,
    k: int,
    frontier_cap: int = 4096,
) -> list[tuple[bool, bool]]:
    """Run many trie-frontier searches in lockstep.

    ``searches`` is a list of (prompt token ids, list of target id sequences).
    Every decoding round issues exactly one batched model call covering the
    union of all live frontiers. A prefix survives a round only if its next
    token is both a trie continuation and within the model's top-k.
    """
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    states: list[_Search] = []
    max_depth = 0
    for sid, (prompt, targets) in enumerate(searches):
        if not targets:
            raise ConfigError("target set must be non-empty")
        if model.max_context is not None and len(prompt) > model.max_context:
            raise ContextError(
                f"prompt of {len(prompt)} tokens exceeds model context {model.max_context}"
            )
        trie = TokenTrie()
        for t in targets:
            trie.insert(t)
        st = _Search(sid, tuple(prompt), trie)
        st.frontier = [(st.prompt, 0, 0.0)]
        states.append(st)
        max_depth = max(max_depth, trie.max_depth())

    for _ in range(max_depth):
        rows: list[tuple[_Search, tuple[int, ...], int, float]] = []
        for st in states:
            if st.reached:
                continue
            for ids, node, cum in st.frontier:
                rows.append((st, ids, node, cum))
            st.frontier = []
        if not rows:
            break
        scores = np.asarray(model.next_token_scores([ids for _, ids, _, _ in rows]))
        member = _topk_member_mask(scores, k)
        for r, (st, ids, node, cum) in enumerate(rows):
            if st.reached:
                continue
            for tok, child in st.trie.children[node].items():
                if not member[r, tok]:
                    continue
                if st.trie.terminal[child]:
                    st.reached = True
                    break
                if model.max_context is not None and len(ids) >= model.max_context:
                    continue  # cannot extend further inside the context window
                st.frontier.append((ids + (tok,), child, cum + float(scores[r, tok])))
        for st in states:
            if len(st.frontier) > frontier_cap:
                st.frontier.sort(key=lambda e: -e[2])
                st.frontier = st.frontier[:frontier_cap]
                st.cap_hit = True
    return [(st.reached, st.cap_hit) for st in states]


def top_k_reachability(model, tokenizer, prompt: str, targets, k: int) -> bool:
    """True iff some tokenization path of a target word survives top-K decoding.

    The prompt is encoded and extended with the word-boundary token, since
    targets are whole words that would follow the prompt.
    """
    prompt_ids = tokenizer.encode(prompt) + [tokenizer.space_id]
    target_seqs = [tuple(tokenizer.encode_word(t)) for t in sorted(targets)]
    reached, _ = reachable_targets(model, prompt_ids, target_seqs, k)
    return reached


@dataclass
class ReachabilityResult:
    fraction: float
    n_evaluated: int
    n_skipped: int
    cap_hits: int
    k_used: int
    per_symbol: dict[str, bool] = field(default_factory=dict)


def reachability_suite(
    model,
    tokenizer,
    lex: Lexicon,
    onto: Ontology,
    masked,
    lang: str = "B",
    k: int | None = None,
    subjects_per_property: int = 3,
    aggregation: str = "any",
    seed: int = 0,
    frontier_cap: int = 4096,
) -> ReachabilityResult:
    """Fraction of masked properties reachable from subject prompts.

    For each masked property we draw subjects whose class licenses it, prompt
    with ``<control> [P] <subject> <copula>`` and test whether the property's
    realization in ``lang`` is reachable. ``aggregation`` decides whether one
    reachable subject suffices ("any") or all must succeed ("all").
    """
    if not masked:
        raise ContractError("reachability undefined for an empty masked set")
    if aggregation not in ("any", "all"):
        raise ConfigError(f"aggregation must be 'any' or 'all', got {aggregation!r}")
    if k is None:
        k = int(0.1 * tokenizer.vocab_size)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x3EAC4)))
    copula = lex.word(SymbolId(SymbolCategory.DESC_PREPOSITION, 0), lang)
    ctrl = control_token("T0", lang)

    searches = []
    owners: list[tuple[str, int]] = []  # (symbol key, subject slot)
    skipped = 0
    evaluated_symbols: list[str] = []
    for sym in sorted(masked, key=lambda s: s.index):
        entities = [e for c in onto.classes_licensing(sym.index) for e in onto.entities_of_class(c)]
        if not entities:
            skipped += 1
            continue
        pick = rng.choice(len(entities), size=min(subjects_per_property, len(entities)), replace=False)
        subjects = [entities[int(i)] for i in pick]
        target = tuple(tokenizer.encode_word(lex.word(sym, lang)))
        evaluated_symbols.append(sym.key())
        for subj in subjects:
            subj_word = lex.word(SymbolId(SymbolCategory.SUBJECT, subj), lang)
            prompt = f"{ctrl} {PHRASE_TOKEN} {subj_word} {copula}"
            prompt_ids = tuple(tokenizer.encode(prompt) + [tokenizer.space_id])
            searches.append((prompt_ids, [target]))
            owners.append((sym.key(), subj))

    results = run_reachability_searches(model, searches, k, frontier_cap)
    by_symbol: dict[str, list[bool]] = {key: [] for key in evaluated_symbols}
    cap_hits = 0
    for (key, _), (reached, cap) in zip(owners, results):
        by_symbol[key].append(reached)
        cap_hits += int(cap)
    per_symbol = {
        key: (any(v) if aggregation == "any" else all(v)) for key, v in by_symbol.items()
    }
    n_eval = len(per_symbol)
    fraction = sum(per_symbol.values()) / n_eval if n_eval else 0.0
    return ReachabilityResult(
        fraction=fraction,
        n_evaluated=n_eval,
        n_skipped=skipped,
        cap_hits=cap_hits,
        k_used=k,
        per_symbol=per_symbol,
    )


# ---------------------------------------------------------------------------
# evaluation report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Aggregated metrics with a per-split breakdown."""

    validity: dict[str, float]
    grammaticality: dict[str, float]
    type_satisfaction: dict[str, float]
    reachability: float | None = None
    reachability_k: int | None = None
    metadata: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for table in (self.validity, self.grammaticality, self.type_satisfaction):
            for split, value in table.items():
                if not 0.0 <= value <= 1.0:
                    raise ConfigError(f"metric for {split} out of [0,1]: {value}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("metric,split,value\n")
        for name, table in (
            ("validity", self.validity),
            ("grammaticality", self.grammaticality),
            ("type_satisfaction", self.type_satisfaction),
        ):
            for split in sorted(table):
                buf.write(f"{name},{split},{table[split]:.6f}\n")
        if self.reachability is not None:
            buf.write(f"reachability,B_masked,{self.reachability:.6f}\n")
        return buf.getvalue()

    def to_summary(self) -> str:
        lines = []
        for name, table in (
            ("validity", self.validity),
            ("grammaticality", self.grammaticality),
            ("type_satisfaction", self.type_satisfaction),
        ):
            for split in sorted(table):
                lines.append(f"{name}.{split} = {table[split]:.6f}")
        if self.reachability is not None:
            lines.append(f"reachability.B_masked = {self.reachability:.6f}")
            lines.append(f"reachability.K = {self.reachability_k}")
        for key in sorted(self.metadata):
            lines.append(f"{key} = {self.metadata[key]}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoint-time generation probe
# ---------------------------------------------------------------------------


def make_trajectory_probe(
    tokenizer,
    eval_splits: dict[str, list[str]],
    lex: Lexicon,
    g: Pcsg,
    onto: Ontology,
    splits=("B_masked",),
    n_prompts: int = 16,
    max_new_tokens: int = 56,
    seed: int = 0,
):
    """Build an ``eval_fn(model, step)`` for unscrambling-task checkpoints.

    Prompts are fixed across checkpoints so the trajectory is comparable
    step to step.
    """
    from .corpus import scramble_prompt
    from .lm import generate_greedy

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x9E0B)))
    prepared: dict[str, list[list[int]]] = {}
    for split in splits:
        lang = "A" if split == "A" else "B"
        pool = eval_splits[split]
        idx = rng.choice(len(pool), size=min(n_prompts, len(pool)), replace=False)
        prompts = []
        for i in idx:
            text = scramble_prompt(pool[int(i)], lang, rng)
            prompts.append(tokenizer.encode(text) + [tokenizer.space_id])
        prepared[split] = prompts

    eos_id = tokenizer.id_of("<eos>")

    def probe(model, step: int) -> dict[str, float]:
        out: dict[str, float] = {}
        for split, prompts in prepared.items():
            lang = "A" if split == "A" else "B"
            gens = generate_greedy(model, prompts, max_new_tokens, eos_id, tokenizer.pad_id)
            validities, grams, sats = [], [], []
            for ids in gens:
                text = tokenizer.decode(ids).strip()
                validity, grammatical, violations = score_generation(text, lex, g, onto, lang)
                validities.append(validity)
                grams.append(grammatical)
                sats.append(bool(grammatical and violations == 0))
            out[f"{split}/validity"] = float(np.mean(validities))
            out[f"{split}/grammaticality"] = float(np.mean(grams))
            out[f"{split}/type_satisfaction"] = float(np.mean(sats))
        return out

    return probe
