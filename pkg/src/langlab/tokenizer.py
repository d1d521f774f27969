"""Whitespace-pretokenized BPE: training, coding, and fragmentation metrics.

The tokenizer is the only interface between surface text and the model.
Merges are learned greedily within whitespace words; special tokens (task
controls, structural markers, padding, and the inter-word space) are atomic
and never participate in merges.
"""

from __future__ import annotations

from collections import Counter
from functools import lru_cache
from pathlib import Path

import numpy as np

from .corpus import SPECIAL_TOKENS
from .errors import ConfigError, ContractError, TokenizerError

PAD_TOKEN = "<pad>"
SPACE_TOKEN = " "

# Metric identifier emitted alongside bridge-strength values so downstream
# comparisons know which formula produced them.
BRIDGE_METRIC_V1 = "default-bridge-v1"


def _check_lexicographic(pair_counts: Counter) -> tuple[str, str]:
    best_count = None
    best_pair = None
    for pair, count in pair_counts.items():
        if best_count is None or count > best_count or (count == best_count and pair < best_pair):
            best_count = count
            best_pair = pair
    return best_pair


class BpeTokenizer:
    """Ordered merge list plus vocabulary; immutable once trained."""

    def __init__(
        self,
        vocab: list[str],
        merges: list[tuple[str, str]],
        regime: str = "vanilla",
        seed: int = 0,
        n_specials: int | None = None,
    ):
        self.vocab = list(vocab)
        self.merges = [tuple(m) for m in merges]
        self.regime = regime
        self.seed = seed
        self.specials = (PAD_TOKEN, SPACE_TOKEN) + SPECIAL_TOKENS
        if n_specials is not None and n_specials != len(self.specials):
            raise TokenizerError(f"expected {len(self.specials)} specials, got {n_specials}")
        self.token_to_id = {tok: i for i, tok in enumerate(self.vocab)}
        if len(self.token_to_id) != len(self.vocab):
            raise TokenizerError("vocabulary contains duplicate tokens")
        self.special_ids = frozenset(self.token_to_id[t] for t in self.specials)
        self.pad_id = self.token_to_id[PAD_TOKEN]
        self.space_id = self.token_to_id[SPACE_TOKEN]
        self._merge_rank = {m: r for r, m in enumerate(self.merges)}
        self._encode_word = lru_cache(maxsize=65536)(self._encode_word_uncached)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def id_of(self, token: str) -> int:
        return self.token_to_id[token]

    # -- coding ---------------------------------------------------------------

    def _encode_word_uncached(self, word: str) -> tuple[int, ...]:
        if word in self.token_to_id and (word in self.specials):
            return (self.token_to_id[word],)
        try:
            symbols = [self.token_to_id[ch] for ch in word]
        except KeyError as exc:
            raise TokenizerError(f"character {exc} not in tokenizer alphabet")
        if len(symbols) < 2:
            return tuple(symbols)
        strings = [self.vocab[i] for i in symbols]
        while len(strings) > 1:
            best_rank, best_pos = None, None
            for i in range(len(strings) - 1):
                rank = self._merge_rank.get((strings[i], strings[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_pos = rank, i
            if best_rank is None:
                break
            strings[best_pos : best_pos + 2] = [strings[best_pos] + strings[best_pos + 1]]
        return tuple(self.token_to_id[s] for s in strings)

    def encode_word(self, word: str) -> list[int]:
        return list(self._encode_word(word))

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for i, word in enumerate(text.split()):
            if i:
                ids.append(self.space_id)
            ids.extend(self._encode_word(word))
        return ids

    def decode(self, ids) -> str:
        try:
            return "".join(self.vocab[i] for i in ids)
        except IndexError:
            bad = next(i for i in ids if not 0 <= i < len(self.vocab))
            raise TokenizerError(f"token id {bad} out of range 0..{len(self.vocab) - 1}")

    # -- metrics ---------------------------------------------------------------

    def _content_words(self, lines) -> list[str]:
        words = []
        for line in lines:
            for w in line.split():
                if w not in self.specials:
                    words.append(w)
        return words

    def fertility(self, lines) -> float:
        """Mean subword tokens per whitespace word, specials excluded."""
        words = self._content_words(lines)
        if not words:
            raise ContractError("fertility undefined on a corpus with no content words")
        return float(np.mean([len(self._encode_word(w)) for w in words]))

    def continuation_rate(self, lines) -> float:
        """Fraction of words segmented into two or more tokens."""
        words = self._content_words(lines)
        if not words:
            raise ContractError("continuation_rate undefined on a corpus with no content words")
        return float(np.mean([len(self._encode_word(w)) >= 2 for w in words]))

    def used_token_types(self, lines) -> set[int]:
        used: set[int] = set()
        for w in set(self._content_words(lines)):
            used.update(self._encode_word(w))
        return used

    def vocab_overlap(self, lines_a, lines_b) -> float:
        """Jaccard similarity of token types used to encode each corpus."""
        used_a = self.used_token_types(lines_a)
        used_b = self.used_token_types(lines_b)
        union = used_a | used_b
        if not union:
            return 1.0
        return len(used_a & used_b) / len(union)

    def bridge_strength(self, lex, masked_symbols, train_lines) -> float:
        """Mean fraction of each masked B form's token types seen in training.

        1.0 means every masked word is fully reachable through subwords the
        model observed; 0.0 means its pieces never occurred at all. This is
        the ``default-bridge-v1`` formula.
        """
        if not masked_symbols:
            raise ContractError("bridge_strength undefined for an empty masked set")
        train_types = self.used_token_types(train_lines)
        fractions = []
        for sym in sorted(masked_symbols, key=lambda s: (s.category.value, s.index)):
            types = set(self._encode_word(lex.word(sym, "B")))
            fractions.append(len(types & train_types) / len(types))
        return float(np.mean(fractions))

    # -- persistence -------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        lines = [
            "# langlab-bpe v1",
            f"# vocab_size {len(self.vocab)}",
            f"# regime {self.regime}",
            f"# seed {self.seed}",
            f"# n_specials {len(self.specials)}",
            "[VOCAB]",
        ]
        lines.extend(tok.replace(" ", "\\s") for tok in self.vocab)
        lines.append("[MERGES]")
        lines.extend(f"{a} {b}" for a, b in self.merges)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "BpeTokenizer":
        regime, seed, n_specials = "vanilla", 0, None
        vocab: list[str] = []
        merges: list[tuple[str, str]] = []
        section = None
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            if raw.startswith("# regime"):
                regime = raw.split()[-1]
            elif raw.startswith("# seed"):
                seed = int(raw.split()[-1])
            elif raw.startswith("# n_specials"):
                n_specials = int(raw.split()[-1])
            elif raw == "[VOCAB]":
                section = "vocab"
            elif raw == "[MERGES]":
                section = "merges"
            elif raw.startswith("#"):
                continue
            elif section == "vocab":
                vocab.append(raw.replace("\\s", " "))
            elif section == "merges" and raw:
                a, b = raw.split(" ")
                merges.append((a, b))
        return BpeTokenizer(vocab, merges, regime=regime, seed=seed, n_specials=n_specials)


def sample_tokenizer_corpus(
    lines_a,
    lines_b,
    regime: str,
    lam: float,
    n_lines: int,
    seed: int = 0,
) -> list[str]:
    """Draw the fixed-size tokenizer-training sample at the regime's mixture.

    ``vanilla`` mirrors the model mixture (1:λ); ``balanced`` uses equal
    shares. Pools are resampled with replacement only when too small.
    """
    if regime not in ("vanilla", "balanced"):
        raise ConfigError(f"regime must be 'vanilla' or 'balanced', got {regime!r}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x70C)))
    if regime == "vanilla":
        n_a = round(n_lines / (1.0 + lam))
    else:
        n_a = n_lines // 2
    n_b = n_lines - n_a
    out = []
    for pool, need in ((list(lines_a), n_a), (list(lines_b), n_b)):
        if not pool and need:
            raise ConfigError("tokenizer corpus pool is empty")
        idx = rng.choice(len(pool), size=need, replace=len(pool) < need)
        out.extend(pool[int(i)] for i in idx)
    return out


def train_bpe(
    corpus_sample,
    vocab_size: int,
    regime: str = "vanilla",
    seed: int = 0,
) -> BpeTokenizer:
    """Learn BPE merges by greedy highest-frequency pair merging.

    Ties break toward the lexicographically smallest pair, which makes
    training fully deterministic. The base alphabet is every character
    occurring in the sample's content words, plus the special tokens.
    """
    specials = (PAD_TOKEN, SPACE_TOKEN) + SPECIAL_TOKENS
    word_freq: Counter = Counter()
    for line in corpus_sample:
        for w in line.split():
            if w not in specials:
                word_freq[w] += 1

    alphabet = sorted({ch for w in word_freq for ch in w})
    vocab = list(specials) + alphabet
    if vocab_size < len(vocab):
        raise TokenizerError(
            f"vocab_size {vocab_size} is below base alphabet + specials ({len(vocab)})",
            achieved_vocab_size=len(vocab),
        )

    # Word states and incremental pair bookkeeping, weighted by frequency.
    words = {w: [ch for ch in w] for w in word_freq}
    pair_counts: Counter = Counter()
    pair_words: dict[tuple[str, str], set[str]] = {}
    for w, symbols in words.items():
        freq = word_freq[w]
        for pair in zip(symbols, symbols[1:]):
            pair_counts[pair] += freq
            pair_words.setdefault(pair, set()).add(w)

    merges: list[tuple[str, str]] = []
    while len(vocab) < vocab_size:
        pair_counts = +pair_counts  # drop zero/negative remnants
        if not pair_counts:
            raise TokenizerError(
                f"corpus exhausted at vocabulary size {len(vocab)} "
                f"(target {vocab_size})",
                achieved_vocab_size=len(vocab),
            )
        best = _check_lexicographic(pair_counts)
        new_token = best[0] + best[1]
        merges.append(best)
        vocab.append(new_token)
        for w in list(pair_words.get(best, ())):
            freq = word_freq[w]
            symbols = words[w]
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] -= freq
                group = pair_words.get(pair)
                if group is not None:
                    group.discard(w)
            merged = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                    merged.append(new_token)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            words[w] = merged
            for pair in zip(merged, merged[1:]):
                pair_counts[pair] += freq
                pair_words.setdefault(pair, set()).add(w)

    return BpeTokenizer(vocab, merges, regime=regime, seed=seed)
