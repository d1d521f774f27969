"""End-to-end pipelines: staged execution with content-hash caching and sweeps.

A run is the seven-stage chain ontology → grammar → lexicon → corpus →
tokenizer → train → eval, persisted under one directory. Each stage records a
manifest of its parameter hash plus input/output content hashes; a stage is
skipped exactly when nothing it depends on has changed.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import svgplot
from .corpus import Corpus, CorpusSpec, TASKS, build_corpus
from .errors import LangLabError, StageError
from .evaluation import (
    emergence_step,
    make_trajectory_probe,
    reachability_suite,
    score_generation,
)
from .grammar import DEFAULT_RULES, Pcsg
from .lexicon import Lexicon, build_lexicon, make_language_specs
from .lm import (
    TrainConfig,
    TransformerConfig,
    TransformerModel,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .ontology import Ontology, OntologyConfig, build_ontology
from .tokenizer import BRIDGE_METRIC_V1, BpeTokenizer, sample_tokenizer_corpus, train_bpe

STAGES = ("ontology", "grammar", "lexicon", "corpus", "tokenizer", "train", "eval")

WORKERS_ENV = "LANGLAB_WORKERS"


@dataclass
class ExperimentConfig:
    """Flat key/value description of one experimental configuration.

    ``data_seeds`` x ``model_seeds`` defines the runs of the configuration
    (three of each at paper scale, nine runs total).
    """

    # axes under study
    d: float = 0.5
    lam: float = 0.25
    vocab_size: int = 512
    regime: str = "vanilla"
    data_seeds: tuple[int, ...] = (0, 1, 2)
    model_seeds: tuple[int, ...] = (0, 1, 2)
    tasks: tuple[str, ...] = TASKS
    out_dir: str = "runs"
    # corpus scale
    n_majority: int = 10_000
    n_eval: int = 400
    mask_fraction: float = 0.25
    tokenizer_lines: int = 4_000
    # model
    layers: int = 2
    model_dim: int = 64
    heads: int = 2
    ff_hidden: int = 128
    context: int = 256
    # training
    steps: int = 2_000
    batch: int = 32
    lr: float = 1e-3
    warmup: int = 256
    eval_every: int = 100
    eval_prompts: int = 16
    probe_splits: tuple[str, ...] = ("A", "B_seen", "B_masked")
    max_new_tokens: int = 56
    # final evaluation
    final_prompts: int = 48
    reach_subjects: int = 3
    reach_aggregation: str = "any"

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        doc = json.loads(text)
        for key in ("data_seeds", "model_seeds", "tasks", "probe_splits"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return ExperimentConfig(**doc)

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        return ExperimentConfig.from_json(Path(path).read_text(encoding="utf-8"))


# Paper-scale overrides; a run takes on the order of an hour per the source
# recipe, so this profile is opt-in.
PAPER_PROFILE = dict(
    n_majority=100_000,
    n_eval=1_000,
    tokenizer_lines=50_000,
    layers=4,
    model_dim=256,
    heads=4,
    ff_hidden=682,
    context=256,
    steps=10_000,
    batch=64,
    lr=1e-4,
    eval_every=250,
    eval_prompts=64,
    final_prompts=200,
)


def paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    return replace(cfg, **PAPER_PROFILE)


@dataclass(frozen=True)
class RunSpec:
    cfg: ExperimentConfig
    data_seed: int
    model_seed: int

    @property
    def name(self) -> str:
        c = self.cfg
        return (
            f"d{c.d}_lam{c.lam}_v{c.vocab_size}_{c.regime}"
            f"_ds{self.data_seed}_ms{self.model_seed}"
        )

    @property
    def run_dir(self) -> Path:
        return Path(self.cfg.out_dir) / self.name


def expand_runs(cfg: ExperimentConfig) -> list[RunSpec]:
    return [
        RunSpec(cfg, ds, ms) for ds in cfg.data_seeds for ms in cfg.model_seeds
    ]


# ---------------------------------------------------------------------------
# stage cache
# ---------------------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _params_hash(params: dict) -> str:
    return hashlib.sha256(
        json.dumps(params, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


class StageRunner:
    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.recomputed: list[str] = []

    def _manifest_path(self, stage: str) -> Path:
        return self.run_dir / f"stage_{stage}.json"

    def _fresh(self, stage: str, params_hash: str, inputs: list[Path], outputs: list[Path]) -> bool:
        mpath = self._manifest_path(stage)
        if not mpath.exists():
            return False
        try:
            manifest = json.loads(mpath.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return False
        if manifest.get("params_hash") != params_hash:
            return False
        if sorted(manifest.get("outputs", [])) != sorted(str(p) for p in outputs):
            return False
        for p in inputs:
            if not p.exists() or manifest["input_hashes"].get(str(p)) != _sha256_file(p):
                return False
        for p in outputs:
            if not p.exists() or manifest["output_hashes"].get(str(p)) != _sha256_file(p):
                return False
        return True

    def run(self, stage: str, params: dict, inputs: list[Path], outputs: list[Path], fn) -> None:
        phash = _params_hash(params)
        if self._fresh(stage, phash, inputs, outputs):
            return
        for p in inputs:
            if not p.exists():
                raise StageError(stage, f"missing input artifact {p}")
        try:
            fn()
        except LangLabError as exc:
            raise StageError(stage, str(exc)) from exc
        manifest = {
            "stage": stage,
            "params_hash": phash,
            "params": params,
            "input_hashes": {str(p): _sha256_file(p) for p in inputs},
            "outputs": [str(p) for p in outputs],
            "output_hashes": {str(p): _sha256_file(p) for p in outputs},
        }
        self._manifest_path(stage).write_text(
            json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8"
        )
        self.recomputed.append(stage)


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------


def _trajectory_to_csv(trajectory: list[dict], path: Path) -> None:
    columns = ["step"]
    for row in trajectory:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in trajectory:
            writer.writerow({k: _num(row.get(k, "")) for k in columns})


def _num(x):
    if isinstance(x, float):
        return f"{x:.6f}"
    return x


def _read_trajectory(path: Path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                if v == "" or v is None:
                    continue
                parsed[k] = float(v) if k != "step" else int(v)
            rows.append(parsed)
        return rows


def run_pipeline(run: RunSpec, upto: str = "eval") -> Path:
    """Execute (or resume) one run through the requested stage; returns run dir."""
    cfg = run.cfg
    if upto not in STAGES:
        raise StageError("pipeline", f"unknown stage {upto!r}")
    limit = STAGES.index(upto)
    rd = run.run_dir
    sr = StageRunner(rd)

    (rd / "config.json").write_text(
        json.dumps(
            {**dataclasses.asdict(cfg), "data_seed": run.data_seed, "model_seed": run.model_seed},
            indent=1,
            sort_keys=True,
        ),
        encoding="utf-8",
    )

    onto_path = rd / "ontology.json"
    grammar_path = rd / "grammar.txt"
    lexicon_path = rd / "lexicon.tsv"
    corpus_dir = rd / "corpus"
    corpus_files = [
        corpus_dir / "train.txt",
        corpus_dir / "eval_A.txt",
        corpus_dir / "eval_B_seen.txt",
        corpus_dir / "eval_B_masked.txt",
        corpus_dir / "manifest.json",
    ]
    tokenizer_path = rd / "tokenizer.txt"
    model_path = rd / "model.ckpt"
    trajectory_path = rd / "trajectory.csv"
    metrics_path = rd / "metrics.csv"
    report_path = rd / "eval_report.csv"
    summary_path = rd / "eval_summary.txt"

    # ontology
    def do_ontology():
        onto = build_ontology(OntologyConfig(), seed=run.data_seed)
        onto_path.write_text(onto.to_manifest(), encoding="utf-8")

    sr.run("ontology", {"seed": run.data_seed, "cfg": vars(OntologyConfig())},
           [], [onto_path], do_ontology)
    if limit == 0:
        return _finish(rd, sr)

    # grammar (static rule table, persisted for the record and for reload)
    def do_grammar():
        grammar_path.write_text(DEFAULT_RULES, encoding="utf-8")

    sr.run("grammar", {"rules": DEFAULT_RULES}, [], [grammar_path], do_grammar)
    if limit == 1:
        return _finish(rd, sr)

    # lexicon
    def do_lexicon():
        onto = Ontology.from_manifest(onto_path.read_text(encoding="utf-8"))
        specs = make_language_specs(cfg.d, seed=run.data_seed)
        lex = build_lexicon(onto.vocabulary(), specs, cfg.d, seed=run.data_seed)
        lexicon_path.write_text(lex.to_manifest(), encoding="utf-8")

    sr.run("lexicon", {"d": cfg.d, "seed": run.data_seed}, [onto_path], [lexicon_path], do_lexicon)
    if limit == 2:
        return _finish(rd, sr)

    # corpus
    corpus_spec = CorpusSpec(
        lam=cfg.lam,
        n_majority=cfg.n_majority,
        mask_fraction=cfg.mask_fraction,
        tasks=cfg.tasks,
        seed=run.data_seed,
        n_eval=cfg.n_eval,
        context_budget=cfg.context,
    )

    def do_corpus():
        onto = Ontology.from_manifest(onto_path.read_text(encoding="utf-8"))
        lex = Lexicon.from_manifest(lexicon_path.read_text(encoding="utf-8"))
        g = Pcsg.from_file(grammar_path)
        corp = build_corpus(corpus_spec, g, onto, lex)
        corp.save(corpus_dir)

    sr.run("corpus", {"spec": vars(corpus_spec)},
           [onto_path, grammar_path, lexicon_path], corpus_files, do_corpus)
    if limit == 3:
        return _finish(rd, sr)

    # tokenizer
    tok_params = {
        "vocab_size": cfg.vocab_size,
        "regime": cfg.regime,
        "lam": cfg.lam,
        "lines": cfg.tokenizer_lines,
        "seed": run.data_seed,
    }

    def do_tokenizer():
        corp = Corpus.load(corpus_dir)
        sample = sample_tokenizer_corpus(
            corp.train_texts("A"),
            corp.train_texts("B"),
            cfg.regime,
            cfg.lam,
            cfg.tokenizer_lines,
            seed=run.data_seed,
        )
        tok = train_bpe(sample, cfg.vocab_size, regime=cfg.regime, seed=run.data_seed)
        tok.save(tokenizer_path)

    sr.run("tokenizer", tok_params, [corpus_dir / "train.txt"], [tokenizer_path], do_tokenizer)
    if limit == 4:
        return _finish(rd, sr)

    # train
    model_cfg = TransformerConfig(
        vocab_size=cfg.vocab_size,
        layers=cfg.layers,
        model_dim=cfg.model_dim,
        heads=cfg.heads,
        ff_hidden=cfg.ff_hidden,
        context=cfg.context,
    )
    train_cfg = TrainConfig(
        batch=cfg.batch,
        lr=cfg.lr,
        warmup=cfg.warmup,
        steps=cfg.steps,
        seed=run.model_seed,
        eval_every=cfg.eval_every,
    )
    train_params = {
        "model": dataclasses.asdict(model_cfg),
        "train": dataclasses.asdict(train_cfg),
        "probe_splits": list(cfg.probe_splits),
        "eval_prompts": cfg.eval_prompts,
        "max_new_tokens": cfg.max_new_tokens,
        "model_seed": run.model_seed,
    }

    def do_train():
        corp = Corpus.load(corpus_dir)
        tok = BpeTokenizer.load(tokenizer_path)
        onto = Ontology.from_manifest(onto_path.read_text(encoding="utf-8"))
        lex = Lexicon.from_manifest(lexicon_path.read_text(encoding="utf-8"))
        g = Pcsg.from_file(grammar_path)
        lines = [tok.encode(text) for text in corp.train_texts()]
        model = TransformerModel(model_cfg, seed=run.model_seed)
        probe = make_trajectory_probe(
            tok,
            corp.eval_splits,
            lex,
            g,
            onto,
            splits=cfg.probe_splits,
            n_prompts=cfg.eval_prompts,
            max_new_tokens=cfg.max_new_tokens,
            seed=run.data_seed,
        )
        model, trajectory = train(
            model,
            lines,
            train_cfg,
            pad_id=tok.pad_id,
            sep_id=tok.id_of("<sep>"),
            eval_fn=probe,
        )
        save_checkpoint(model, model_path)
        _trajectory_to_csv(trajectory, trajectory_path)

    sr.run("train", train_params,
           [corpus_dir / "train.txt", tokenizer_path], [model_path, trajectory_path], do_train)
    if limit == 5:
        return _finish(rd, sr)

    # eval
    eval_params = {
        "final_prompts": cfg.final_prompts,
        "reach_subjects": cfg.reach_subjects,
        "reach_aggregation": cfg.reach_aggregation,
        "max_new_tokens": cfg.max_new_tokens,
    }

    def do_eval():
        corp = Corpus.load(corpus_dir)
        tok = BpeTokenizer.load(tokenizer_path)
        onto = Ontology.from_manifest(onto_path.read_text(encoding="utf-8"))
        lex = Lexicon.from_manifest(lexicon_path.read_text(encoding="utf-8"))
        g = Pcsg.from_file(grammar_path)
        model = load_checkpoint(model_path)
        report, metric_rows = evaluate_run(
            run, model, tok, corp, lex, g, onto, trajectory_path
        )
        report_path.write_text(report.to_csv(), encoding="utf-8")
        summary_path.write_text(report.to_summary(), encoding="utf-8")
        _write_metrics_csv(metrics_path, metric_rows)

    sr.run("eval", eval_params,
           [model_path, trajectory_path, tokenizer_path, corpus_dir / "manifest.json"],
           [report_path, summary_path, metrics_path], do_eval)
    return _finish(rd, sr)


def _finish(rd: Path, sr: StageRunner) -> Path:
    (rd / "last_run.json").write_text(
        json.dumps({"recomputed": sr.recomputed}), encoding="utf-8"
    )
    return rd


METRIC_COLUMNS = ("metric", "language", "lam", "d", "vocab_size", "regime", "seed", "value")


def _write_metrics_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _num(row.get(k, "")) for k in METRIC_COLUMNS})


def evaluate_run(
    run: RunSpec,
    model,
    tok: BpeTokenizer,
    corp: Corpus,
    lex: Lexicon,
    g: Pcsg,
    onto: Ontology,
    trajectory_path: Path | None = None,
):
    """Compute the final EvalReport and the flat metric rows for one run."""
    from .evaluation import EvalReport
    from .lm import generate_greedy
    from .corpus import scramble_prompt

    cfg = run.cfg
    seed_label = f"{run.data_seed}.{run.model_seed}"
    base = {
        "lam": cfg.lam,
        "d": cfg.d,
        "vocab_size": cfg.vocab_size,
        "regime": cfg.regime,
        "seed": seed_label,
    }
    rows: list[dict] = []

    def add(metric, language, value):
        rows.append({**base, "metric": metric, "language": language, "value": value})

    # tokenizer-level metrics
    split_lang = {"A": "A", "B_seen": "B", "B_masked": "B_masked"}
    for split, label in split_lang.items():
        lines = corp.eval_splits[split]
        add("fertility", label, tok.fertility(lines))
        add("continuation_rate", label, tok.continuation_rate(lines))
    add("vocab_overlap", "AB", tok.vocab_overlap(corp.eval_splits["A"], corp.eval_splits["B_seen"]))
    add(f"bridge_strength:{BRIDGE_METRIC_V1}", "B_masked",
        tok.bridge_strength(lex, corp.masked_symbols, corp.train_texts()))

    # generation quality on each split
    rng = np.random.default_rng(np.random.SeedSequence((run.data_seed, run.model_seed, 0xF1)))
    eos_id = tok.id_of("<eos>")
    validity: dict[str, float] = {}
    grammaticality: dict[str, float] = {}
    type_sat: dict[str, float] = {}
    for split in ("A", "B_seen", "B_masked"):
        lang = "A" if split == "A" else "B"
        pool = corp.eval_splits[split]
        idx = rng.choice(len(pool), size=min(cfg.final_prompts, len(pool)), replace=False)
        prompts = [
            tok.encode(scramble_prompt(pool[int(i)], lang, rng)) + [tok.space_id]
            for i in idx
        ]
        gens = generate_greedy(model, prompts, cfg.max_new_tokens, eos_id, tok.pad_id)
        vals, grams, sats = [], [], []
        for ids in gens:
            text = tok.decode(ids).strip()
            v, gram, viol = score_generation(text, lex, g, onto, lang)
            vals.append(v)
            grams.append(gram)
            sats.append(bool(gram and viol == 0))
        validity[split] = float(np.mean(vals))
        grammaticality[split] = float(np.mean(grams))
        type_sat[split] = float(np.mean(sats))
        add("validity", split, validity[split])
        add("grammaticality", split, grammaticality[split])
        add("type_satisfaction", split, type_sat[split])

    # masked reachability
    reach = reachability_suite(
        model,
        tok,
        lex,
        onto,
        corp.masked_symbols,
        lang="B",
        subjects_per_property=cfg.reach_subjects,
        aggregation=cfg.reach_aggregation,
        seed=run.data_seed,
    )
    add("reachability", "B_masked", reach.fraction)
    add("reachability_k", "B_masked", reach.k_used)

    # emergence steps from the training trajectory
    if trajectory_path is not None and Path(trajectory_path).exists():
        trajectory = _read_trajectory(Path(trajectory_path))
        for split in cfg.probe_splits:
            for metric in ("validity", "grammaticality", "type_satisfaction"):
                key = f"{split}/{metric}"
                series = [(row["step"], row[key]) for row in trajectory if key in row]
                step = emergence_step(series)
                add(f"emergence_step:{metric}", split, -1 if step is None else step)

    report = EvalReport(
        validity=validity,
        grammaticality=grammaticality,
        type_satisfaction=type_sat,
        reachability=reach.fraction,
        reachability_k=reach.k_used,
        metadata={
            "reachability_skipped": reach.n_skipped,
            "reachability_cap_hits": reach.cap_hits,
            "seed": seed_label,
        },
    )
    return report, rows


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def _run_one(run: RunSpec) -> tuple[str, str | None]:
    try:
        run_pipeline(run)
        return run.name, None
    except Exception as exc:  # failures recorded, aggregation proceeds
        return run.name, f"{type(exc).__name__}: {exc}"


def sweep(configs: list[ExperimentConfig], out_csv: str | Path) -> Path:
    """Execute every run of every configuration and aggregate metric rows.

    Worker count comes from the LANGLAB_WORKERS environment variable
    (sequential by default). Per-run rows are pooled; aggregation adds
    mean +- stderr over the seed cross product of each configuration.
    """
    runs = [r for cfg in configs for r in expand_runs(cfg)]
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    failures: list[tuple[str, str]] = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for name, err in pool.map(_run_one, runs):
                if err:
                    failures.append((name, err))
    else:
        for run in runs:
            name, err = _run_one(run)
            if err:
                failures.append((name, err))

    all_rows: list[dict] = []
    for run in runs:
        path = run.run_dir / "metrics.csv"
        if not path.exists():
            continue
        with open(path, "r", encoding="utf-8", newline="") as fh:
            all_rows.extend(csv.DictReader(fh))

    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    agg = aggregate_rows(all_rows)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        columns = list(METRIC_COLUMNS) + ["n", "mean", "stderr"]
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in all_rows:
            writer.writerow({**row, "n": "", "mean": "", "stderr": ""})
        for row in agg:
            writer.writerow(row)
    if failures:
        fail_path = out.with_suffix(".failures.json")
        fail_path.write_text(json.dumps(dict(failures), indent=1), encoding="utf-8")
    return out


def aggregate_rows(rows: list[dict]) -> list[dict]:
    """Mean and standard error per (metric, language, configuration)."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = (
            row["metric"],
            row["language"],
            row["lam"],
            row["d"],
            row["vocab_size"],
            row["regime"],
        )
        groups.setdefault(key, []).append(float(row["value"]))
    out = []
    for key in sorted(groups):
        vals = np.array(groups[key], dtype=float)
        stderr = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        out.append(
            {
                "metric": key[0],
                "language": key[1],
                "lam": key[2],
                "d": key[3],
                "vocab_size": key[4],
                "regime": key[5],
                "seed": "aggregate",
                "value": "",
                "n": len(vals),
                "mean": f"{vals.mean():.6f}",
                "stderr": f"{stderr:.6f}",
            }
        )
    return out


def plot(csv_path, kind, x_col, y_col, out_path, group_col=None, err_col=None, title=""):
    """Emit a self-contained SVG chart from a metrics CSV."""
    return svgplot.plot_csv(
        csv_path, kind, x_col, y_col, out_path,
        group_col=group_col, err_col=err_col, title=title,
    )
