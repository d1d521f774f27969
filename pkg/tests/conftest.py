import numpy as np
import pytest

from langlab.corpus import CorpusSpec, build_corpus
from langlab.grammar import Pcsg
from langlab.lexicon import build_lexicon, make_language_specs
from langlab.ontology import OntologyConfig, build_ontology
from langlab.tokenizer import sample_tokenizer_corpus, train_bpe

SMALL_CFG = OntologyConfig(
    n_entities=40,
    n_classes=5,
    n_desc_properties=60,
    n_desc_values=10,
    n_rel_properties=20,
)


@pytest.fixture(scope="session")
def grammar():
    return Pcsg.default()


@pytest.fixture(scope="session")
def onto_small():
    return build_ontology(SMALL_CFG, seed=3)


@pytest.fixture(scope="session")
def onto_default():
    return build_ontology(seed=7)


@pytest.fixture(scope="session")
def lex_small(onto_small):
    specs = make_language_specs(0.4, seed=5)
    return build_lexicon(onto_small.vocabulary(), specs, 0.4, seed=5)


@pytest.fixture(scope="session")
def corpus_small(onto_small, lex_small, grammar):
    spec = CorpusSpec(lam=0.25, n_majority=600, seed=2, n_eval=80)
    return build_corpus(spec, grammar, onto_small, lex_small)


@pytest.fixture(scope="session")
def tok_small(corpus_small):
    sample = sample_tokenizer_corpus(
        corpus_small.train_texts("A"),
        corpus_small.train_texts("B"),
        "vanilla",
        0.25,
        500,
        seed=4,
    )
    return train_bpe(sample, vocab_size=192, regime="vanilla", seed=4)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
