"""Command-line pipeline: ``robustdr <stage> [--config exp.toml] [flags]``.

Every stage writes its artifacts under the output directory together with a
manifest (``manifests/<stage>.json``) holding the content hashes of its
inputs and outputs, its parameters, the seed and library versions.  A stage
whose manifest still matches is skipped unless ``--force`` is given.

Exit codes: 0 success, 1 usage or config error, 2 data validation error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__, analysis, kernels
from .corpus import CorpusError, QuestionSet, load_passages, load_qrels, load_questions
from .encoder import load_checkpoint, save_checkpoint
from .evaluation import (evaluate_run, read_per_query, significance_rows, write_per_query, write_report,
                         write_significance)
from .retrieval import DenseIndex, build_index, read_run, run_queries, write_run
from .textproc import IdfTable, Vocabulary, build_vocab
from .training import TrainConfig, TrainingData, TrainingDiverged, TrainMode, train, write_log
from .typogen import (MisspellingDictionary, TypoSetting, as_questions, build_typo_testset, read_typo_questions,
                      write_typo_questions)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("robustdr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
ORIGINAL = "Original"
REMOVAL = "removal"


class ConfigError(Exception):
    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


class DataError(Exception):
    pass


# ---------------------------------------------------------------- config

_SCHEMA = {
    "": {"seed"},
    "paths": {"passages", "train_questions", "train_qrels", "test_questions", "test_qrels", "vocab",
              "misspellings", "out"},
    "model": {"d", "vocab_size"},
    "training": {"modes", "batch_size", "steps", "lr", "warmup", "weights", "typo_p", "typo_min_edits",
                 "init_noise"},
    "typos": {"p", "seed", "settings"},
    "evaluation": {"depth", "recall_k", "mrr_k", "answer_k"},
    "analysis": {"removal_system", "metric_k", "freq_edges", "importance_edges"},
}

_INPUTS = ("passages", "train_questions", "train_qrels", "test_questions", "test_qrels")


@dataclass
class ExperimentConfig:
    seed: int
    paths: dict[str, Optional[Path]]
    out: Path
    d: int = 128
    vocab_size: int = 2048
    modes: list[str] = field(default_factory=lambda: [m.value for m in TrainMode])
    training: dict = field(default_factory=dict)
    typo_p: float = 0.2
    typo_seed: int = 1
    settings: list[str] = field(default_factory=lambda: [s.value for s in TypoSetting])
    depth: int = 100
    recall_k: list[int] = field(default_factory=lambda: [10, 50, 100])
    mrr_k: int = 10
    answer_k: list[int] = field(default_factory=list)
    removal_system: str = "DR"
    metric_k: int = 10
    freq_edges: list[float] = field(default_factory=lambda: list(analysis.DEFAULT_FREQ_EDGES))
    importance_edges: Optional[list[float]] = None

    def train_config(self, mode: str) -> TrainConfig:
        return TrainConfig(mode=mode, d=self.d, seed=self.seed, **self.training)

    def require(self, key: str, flag: str, why: str) -> Path:
        path = self.paths.get(key)
        if path is None:
            raise ConfigError(f"paths.{key} ({flag}) is required {why}")
        return path


def _check_type(problems, name, value, kind):
    ok = isinstance(value, kind) and not (kind is not bool and isinstance(value, bool))
    if not ok:
        problems.append(f"{name}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return ok


def load_config(path: Optional[Path], overrides: dict) -> ExperimentConfig:
    """Parse, merge command-line overrides, and validate with field-level messages."""
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = Path(path).resolve().parent

    problems = []
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in _SCHEMA:
                problems.append(f"unknown section [{key}]")
                continue
            problems += [f"{key}.{k}: unknown key" for k in value if k not in _SCHEMA[key]]
        elif key not in _SCHEMA[""]:
            problems.append(f"{key}: unknown key")

    section = lambda name: dict(raw.get(name, {}))  # noqa: E731
    paths_raw, model, training = section("paths"), section("model"), section("training")
    typos, evaluation, anal = section("typos"), section("evaluation"), section("analysis")

    seed = overrides.get("seed", raw.get("seed"))
    if seed is None:
        problems.append("seed: required (set it in the config or pass --seed)")
    else:
        _check_type(problems, "seed", seed, int)

    paths: dict[str, Optional[Path]] = {}
    for key in _SCHEMA["paths"] - {"out"}:
        value = overrides.get(key, paths_raw.get(key))
        if value is None:
            paths[key] = None
            continue
        p = Path(value)
        if not p.is_absolute() and key not in overrides:
            p = base / p
        if not p.exists():
            problems.append(f"paths.{key}: {p} does not exist")
        paths[key] = p
    out = Path(overrides.get("out", paths_raw.get("out", "robustdr-out")))

    cfg = ExperimentConfig(seed=seed if isinstance(seed, int) else 0, paths=paths, out=out)
    for key, kind in (("d", int), ("vocab_size", int)):
        if key in model and _check_type(problems, f"model.{key}", model[key], kind):
            setattr(cfg, key, model[key])

    modes = overrides.get("modes", training.pop("modes", cfg.modes))
    for m in modes:
        try:
            TrainMode(m)
        except ValueError:
            problems.append(f"training.modes: unknown mode {m!r} (choose from {', '.join(x.value for x in TrainMode)})")
    cfg.modes = list(dict.fromkeys(modes))
    for key in ("batch_size", "steps", "lr", "typo_p"):
        if key in overrides:
            training[key] = overrides[key]
    if "weights" in training:
        training["weights"] = tuple(training["weights"])
    cfg.training = training
    try:
        cfg.train_config(cfg.modes[0] if cfg.modes else "DR")
    except (TypeError, ValueError) as exc:
        problems.append(f"training: {exc}")

    cfg.typo_p = overrides.get("typo_p", typos.get("p", cfg.typo_p))
    if not isinstance(cfg.typo_p, (int, float)) or not 0 <= cfg.typo_p <= 1:
        problems.append(f"typos.p: must lie in [0, 1], got {cfg.typo_p!r}")
    cfg.typo_seed = overrides.get("typo_seed", typos.get("seed", cfg.seed if seed is not None else 0))
    settings = overrides.get("settings", typos.get("settings", cfg.settings))
    cfg.settings = []
    for s in settings:
        try:
            cfg.settings.append(TypoSetting.parse(s).value)
        except ValueError as exc:
            problems.append(f"typos.settings: {exc}")

    for key in ("depth", "mrr_k", "metric_k"):
        src = evaluation if key != "metric_k" else anal
        if key in src and _check_type(problems, key, src[key], int):
            setattr(cfg, key, src[key])
    for key in ("recall_k", "answer_k"):
        if key in evaluation:
            if not isinstance(evaluation[key], list) or not all(isinstance(k, int) and k > 0 for k in evaluation[key]):
                problems.append(f"evaluation.{key}: expected a list of positive integers")
            else:
                setattr(cfg, key, evaluation[key])
    cfg.depth = overrides.get("depth", cfg.depth)
    if cfg.depth < max(cfg.recall_k + cfg.answer_k + [cfg.mrr_k, cfg.metric_k]):
        problems.append(f"evaluation.depth: {cfg.depth} is below the largest metric cutoff")
    cfg.removal_system = anal.get("removal_system", cfg.removal_system)
    if "freq_edges" in anal:
        cfg.freq_edges = anal["freq_edges"]
    cfg.importance_edges = anal.get("importance_edges")
    if problems:
        raise ConfigError(problems)
    return cfg


# ---------------------------------------------------------------- manifests

def file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    return {"robustdr": __version__, "numpy": np.__version__, "kernels": kernels.BACKEND}


class Stage:
    """One cached pipeline step writing into ``out``."""

    def __init__(self, out: Path, name: str, seed: int, force: bool):
        self.out, self.name, self.seed, self.force = out, name, seed, force
        self.manifest = out / "manifests" / f"{name}.json"

    def _expected(self, inputs: dict[str, Path], params: dict) -> dict:
        missing = [f"{k} ({p})" for k, p in inputs.items() if not Path(p).exists()]
        if missing:
            raise DataError(f"stage {self.name}: missing inputs {', '.join(missing)}; run the earlier stages first")
        return {"stage": self.name, "seed": self.seed, "versions": _versions(),
                "params": json.loads(json.dumps(params, default=str)),
                "inputs": {k: file_hash(Path(p)) for k, p in sorted(inputs.items())}}

    def up_to_date(self, expected: dict) -> bool:
        if self.force or not self.manifest.exists():
            return False
        old = json.loads(self.manifest.read_text(encoding="utf-8"))
        if {k: old.get(k) for k in expected} != expected:
            return False
        return all((self.out / rel).exists() and file_hash(self.out / rel) == h
                   for rel, h in old.get("outputs", {}).items())

    def run(self, inputs: dict[str, Path], params: dict, produce: Callable[[], list[Path]]) -> bool:
        """Run ``produce`` unless cached; returns True if work was done."""
        expected = self._expected(inputs, params)
        if self.up_to_date(expected):
            log.info("%s: up to date", self.name)
            return False
        log.info("%s: running", self.name)
        outputs = produce()
        expected["outputs"] = {str(Path(p).relative_to(self.out)): file_hash(Path(p)) for p in sorted(outputs)}
        self.manifest.parent.mkdir(parents=True, exist_ok=True)
        self.manifest.write_text(json.dumps(expected, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return True


# ---------------------------------------------------------------- layout

class Layout:
    def __init__(self, out: Path):
        self.out = out

    vocab = property(lambda self: self.out / "vocab.txt")
    ingest = property(lambda self: self.out / "ingest.json")

    def typos(self, setting: str) -> Path:
        return self.out / "typos" / f"{setting}.tsv"

    def removal_questions(self) -> Path:
        return self.out / REMOVAL / "questions.tsv"

    def system(self, mode: str) -> Path:
        return self.out / mode

    def checkpoint(self, mode): return self.system(mode) / "checkpoint.bin"  # noqa: E704
    def train_log(self, mode): return self.system(mode) / "train.log"  # noqa: E704
    def index(self, mode): return self.system(mode) / "index.bin"  # noqa: E704
    def run(self, system, setting): return self.system(system) / "runs" / f"{setting}.run"  # noqa: E704
    def report(self, system, setting): return self.system(system) / "eval" / f"{setting}.csv"  # noqa: E704
    def per_query(self, system, setting): return self.system(system) / "eval" / f"{setting}.per_query.csv"  # noqa: E704
    def analysis(self, name): return self.out / "analysis" / name  # noqa: E704


def _load(what: str, fn, path):
    try:
        return fn(path)
    except (CorpusError, ValueError, KeyError) as exc:
        raise DataError(f"{what}: {exc}") from exc


def _dictionary(cfg: ExperimentConfig) -> Optional[MisspellingDictionary]:
    p = cfg.paths.get("misspellings")
    return _load("misspellings", MisspellingDictionary.load, p) if p else None


def _opt_inputs(cfg: ExperimentConfig) -> dict[str, Path]:
    p = cfg.paths.get("misspellings")
    return {"misspellings": p} if p else {}


# ---------------------------------------------------------------- stages

def stage_ingest(cfg: ExperimentConfig, force: bool) -> None:
    inputs = {k: cfg.require(k, "--" + k.replace("_", "-"), "to ingest the corpus") for k in _INPUTS}
    lay = Layout(cfg.out)

    def produce():
        passages = _load("passages", load_passages, inputs["passages"])
        summary = {"passages": len(passages)}
        splits = {}
        for split in ("train", "test"):
            qs = _load(f"{split}_questions", load_questions, inputs[f"{split}_questions"])
            qrels = _load(f"{split}_qrels", load_qrels, inputs[f"{split}_qrels"])
            problems = qrels.problems(passages, qs)
            problems += [f"question {q.id!r} has no relevant passage" for q in qs if not qrels[q.id]]
            if problems:
                raise DataError(f"{split} split: " + "; ".join(problems[:20])
                                + (f" (+{len(problems) - 20} more)" if len(problems) > 20 else ""))
            splits[split] = qs
            summary[f"{split}_questions"] = len(qs)
            summary[f"{split}_judgments"] = sum(len(qrels[q.id]) for q in qs)
        clash = sorted(set(splits["train"].ids) & set(splits["test"].ids))
        if clash:
            raise DataError(f"train and test share question ids: {', '.join(clash[:10])}")
        lay.ingest.parent.mkdir(parents=True, exist_ok=True)
        lay.ingest.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return [lay.ingest]

    Stage(cfg.out, "ingest", cfg.seed, force).run(inputs, {}, produce)


def stage_build_vocab(cfg: ExperimentConfig, force: bool) -> None:
    lay = Layout(cfg.out)
    given = cfg.paths.get("vocab")
    if given is not None:
        def produce():
            _load("vocab", Vocabulary.load, given)
            lay.vocab.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(given, lay.vocab)
            return [lay.vocab]
        Stage(cfg.out, "build-vocab", cfg.seed, force).run({"vocab": given}, {"source": "file"}, produce)
        return

    inputs = {k: cfg.require(k, "--" + k.replace("_", "-"), "to build the vocabulary")
              for k in ("passages", "train_questions")}

    def produce():
        texts = [p.text for p in _load("passages", load_passages, inputs["passages"])]
        texts += [q.text for q in _load("train_questions", load_questions, inputs["train_questions"])]
        try:
            vocab = build_vocab(texts, cfg.vocab_size)
        except ValueError as exc:
            raise DataError(f"vocabulary: {exc}") from exc
        lay.vocab.parent.mkdir(parents=True, exist_ok=True)
        vocab.save(lay.vocab)
        return [lay.vocab]

    Stage(cfg.out, "build-vocab", cfg.seed, force).run(inputs, {"vocab_size": cfg.vocab_size}, produce)


def stage_perturb(cfg: ExperimentConfig, setting: str, force: bool) -> None:
    setting = TypoSetting.parse(setting)
    inputs = {"test_questions": cfg.require("test_questions", "--questions", "to build a typo test set")}
    if setting is TypoSetting.DiscriminativeUtterances:
        why = "for the DiscriminativeUtterances setting"
        inputs["test_qrels"] = cfg.require("test_qrels", "--qrels", why)
        inputs["passages"] = cfg.require("passages", "--passages", why)
    inputs.update(_opt_inputs(cfg))
    out = Layout(cfg.out).typos(setting.value)

    def produce():
        qs = _load("test_questions", load_questions, inputs["test_questions"])
        qrels = passages = None
        if setting is TypoSetting.DiscriminativeUtterances:
            qrels = _load("test_qrels", load_qrels, inputs["test_qrels"])
            passages = _load("passages", load_passages, inputs["passages"])
        typoed = build_typo_testset(qs, setting, cfg.typo_p, cfg.typo_seed, qrels, passages, _dictionary(cfg))
        out.parent.mkdir(parents=True, exist_ok=True)
        write_typo_questions(typoed, out)
        return [out]

    params = {"setting": setting.value, "p": cfg.typo_p, "seed": cfg.typo_seed}
    Stage(cfg.out, f"perturb-{setting.value}", cfg.seed, force).run(inputs, params, produce)


def stage_train(cfg: ExperimentConfig, mode: str, force: bool) -> None:
    lay = Layout(cfg.out)
    inputs = {k: cfg.require(k, "--" + k.replace("_", "-"), "for training")
              for k in ("passages", "train_questions", "train_qrels")}
    inputs["vocab"] = lay.vocab
    inputs.update(_opt_inputs(cfg))
    tcfg = cfg.train_config(mode)

    def produce():
        data = TrainingData(_load("train_questions", load_questions, inputs["train_questions"]),
                            _load("passages", load_passages, inputs["passages"]),
                            _load("train_qrels", load_qrels, inputs["train_qrels"]),
                            _load("vocab", Vocabulary.load, lay.vocab), _dictionary(cfg))
        params, history = train(data, tcfg)
        lay.system(mode).mkdir(parents=True, exist_ok=True)
        save_checkpoint(params, lay.checkpoint(mode))
        write_log(history, lay.train_log(mode))
        return [lay.checkpoint(mode), lay.train_log(mode)]

    Stage(cfg.out, f"train-{mode}", cfg.seed, force).run(inputs, asdict(tcfg), produce)


def stage_index(cfg: ExperimentConfig, mode: str, force: bool) -> None:
    lay = Layout(cfg.out)
    inputs = {"passages": cfg.require("passages", "--passages", "to build an index"),
              "checkpoint": lay.checkpoint(mode), "vocab": lay.vocab}

    def produce():
        params = _load("checkpoint", load_checkpoint, lay.checkpoint(mode))
        index = build_index(_load("passages", load_passages, inputs["passages"]), params,
                            _load("vocab", Vocabulary.load, lay.vocab))
        index.save(lay.index(mode))
        return [lay.index(mode)]

    Stage(cfg.out, f"index-{mode}", cfg.seed, force).run(inputs, {}, produce)


def _query_file(cfg: ExperimentConfig, setting: str) -> Path:
    if setting == ORIGINAL:
        return cfg.require("test_questions", "--questions", "to run queries")
    return Layout(cfg.out).typos(setting)


def _queries(cfg: ExperimentConfig, setting: str) -> QuestionSet:
    originals = _load("test_questions", load_questions, cfg.require("test_questions", "--questions", "to run queries"))
    if setting == ORIGINAL:
        return originals
    typoed = _load(f"typo set {setting}", read_typo_questions, Layout(cfg.out).typos(setting))
    return as_questions(typoed, originals)


def stage_search(cfg: ExperimentConfig, mode: str, setting: str, force: bool) -> None:
    lay = Layout(cfg.out)
    queries = lay.removal_questions() if mode == REMOVAL else _query_file(cfg, setting)
    system = cfg.removal_system if mode == REMOVAL else mode
    inputs = {"queries": queries, "test_questions": cfg.require("test_questions", "--questions", "to run queries"),
              "index": lay.index(system), "checkpoint": lay.checkpoint(system),
              "vocab": lay.vocab}
    out = lay.run(mode, setting)

    def produce():
        params = _load("checkpoint", load_checkpoint, inputs["checkpoint"])
        index = _load("index", DenseIndex.load, inputs["index"])
        if index.model_hash != params.content_hash():
            raise DataError(f"index {inputs['index']} was built from a different checkpoint; rebuild it")
        if mode == REMOVAL:
            originals = _load("test_questions", load_questions, inputs["test_questions"])
            qs = analysis.removal_questions(_load("removal", analysis.read_removal, queries), originals)
        else:
            qs = _queries(cfg, setting)
        run = run_queries(index, qs, params, _load("vocab", Vocabulary.load, lay.vocab), cfg.depth)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_run(run, out, tag=mode)
        return [out]

    Stage(cfg.out, f"search-{mode}-{setting}", cfg.seed, force).run(inputs, {"depth": cfg.depth}, produce)


def stage_removal(cfg: ExperimentConfig, force: bool) -> None:
    lay = Layout(cfg.out)
    setting = TypoSetting.RandomWords.value
    inputs = {"test_questions": cfg.require("test_questions", "--questions", "for the removal baseline"),
              "typos": lay.typos(setting)}
    out = lay.removal_questions()

    def produce():
        originals = _load("test_questions", load_questions, inputs["test_questions"])
        variants = analysis.removal_baseline(_load("typos", read_typo_questions, lay.typos(setting)), originals)
        out.parent.mkdir(parents=True, exist_ok=True)
        analysis.write_removal(variants, out)
        return [out]

    Stage(cfg.out, "removal", cfg.seed, force).run(inputs, {}, produce)


def stage_evaluate(cfg: ExperimentConfig, system: str, setting: str, force: bool) -> None:
    lay = Layout(cfg.out)
    inputs = {"run": lay.run(system, setting),
              "test_qrels": cfg.require("test_qrels", "--qrels", "to evaluate"),
              "test_questions": cfg.require("test_questions", "--questions", "to evaluate")}
    if cfg.answer_k:
        inputs["passages"] = cfg.require("passages", "--passages", "for answer recall")

    def produce():
        run = _load("run", read_run, inputs["run"])
        qrels = _load("test_qrels", load_qrels, inputs["test_qrels"])
        qs = _load("test_questions", load_questions, inputs["test_questions"])
        passages = _load("passages", load_passages, inputs["passages"]) if cfg.answer_k else None
        reports = evaluate_run(run, qrels, cfg.recall_k, cfg.mrr_k, qs, passages, cfg.answer_k)
        rep, pq = lay.report(system, setting), lay.per_query(system, setting)
        rep.parent.mkdir(parents=True, exist_ok=True)
        write_report(reports, rep)
        write_per_query(reports, pq)
        return [rep, pq]

    params = {"recall_k": cfg.recall_k, "mrr_k": cfg.mrr_k, "answer_k": cfg.answer_k}
    Stage(cfg.out, f"evaluate-{system}-{setting}", cfg.seed, force).run(inputs, params, produce)


def _metric_column(cfg: ExperimentConfig) -> str:
    return f"Recall@{cfg.metric_k}"


def stage_analyze(cfg: ExperimentConfig, force: bool) -> None:
    lay = Layout(cfg.out)
    settings = [ORIGINAL] + cfg.settings
    inputs = {f"pq:{m}:{s}": lay.per_query(m, s) for m in cfg.modes for s in settings}
    rw = TypoSetting.RandomWords.value
    has_rw = rw in cfg.settings
    with_removal = has_rw and cfg.removal_system in cfg.modes
    if has_rw:
        inputs["typos"] = lay.typos(rw)
    if with_removal:
        inputs[f"pq:{REMOVAL}"] = lay.per_query(REMOVAL, rw)
    for k in ("passages", "train_questions", "test_questions"):
        inputs[k] = cfg.require(k, "--" + k.replace("_", "-"), "for the analyses")
    col = _metric_column(cfg)
    if cfg.metric_k not in cfg.recall_k:
        raise ConfigError(f"analysis.metric_k: {cfg.metric_k} is not among evaluation.recall_k")

    def produce():
        scores = {m: {s: read_per_query(lay.per_query(m, s))[col] for s in settings} for m in cfg.modes}
        outputs = []
        lay.analysis("x").parent.mkdir(parents=True, exist_ok=True)
        rows = analysis.trend_report(scores, settings)
        analysis.write_trend(rows, lay.analysis("trend.csv"))
        sig = []
        for s in settings:
            sig += list(significance_rows({m: scores[m][s] for m in cfg.modes}, f"{col}/{s}"))
        write_significance(sig, lay.analysis("significance.csv"))
        outputs += [lay.analysis("trend.csv"), lay.analysis("significance.csv")]
        if has_rw:
            originals = _load("test_questions", load_questions, inputs["test_questions"])
            typoed = _load("typos", read_typo_questions, lay.typos(rw))
            freq = analysis.frequency_table(_load("train_questions", load_questions, inputs["train_questions"]))
            per_sys = {m: scores[m][rw] for m in cfg.modes}
            analysis.bin_by_frequency(typoed, per_sys, freq, cfg.freq_edges).write_csv(lay.analysis("freq_bins.csv"))
            if with_removal:
                per_sys[REMOVAL] = read_per_query(lay.per_query(REMOVAL, rw))[col]
            idf = IdfTable.from_texts(p.text for p in _load("passages", load_passages, inputs["passages"]))
            analysis.bin_by_importance(typoed, per_sys, originals, idf, cfg.importance_edges).write_csv(
                lay.analysis("importance_bins.csv"))
            outputs += [lay.analysis("freq_bins.csv"), lay.analysis("importance_bins.csv")]
        return outputs

    params = {"metric": col, "freq_edges": cfg.freq_edges, "importance_edges": cfg.importance_edges,
              "modes": cfg.modes, "settings": settings}
    Stage(cfg.out, "analyze", cfg.seed, force).run(inputs, params, produce)


def run_experiment(cfg: ExperimentConfig, force: bool = False) -> None:
    stage_ingest(cfg, force)
    stage_build_vocab(cfg, force)
    for s in cfg.settings:
        stage_perturb(cfg, s, force)
    for mode in cfg.modes:
        stage_train(cfg, mode, force)
        stage_index(cfg, mode, force)
        for s in [ORIGINAL] + cfg.settings:
            stage_search(cfg, mode, s, force)
            stage_evaluate(cfg, mode, s, force)
    rw = TypoSetting.RandomWords.value
    if rw in cfg.settings and cfg.removal_system in cfg.modes:
        stage_removal(cfg, force)
        stage_search(cfg, REMOVAL, rw, force)
        stage_evaluate(cfg, REMOVAL, rw, force)
    elif rw in cfg.settings:
        log.warning("removal baseline skipped: %s is not among the trained modes", cfg.removal_system)
    stage_analyze(cfg, force)


def summary_table(cfg: ExperimentConfig) -> str:
    lay = Layout(cfg.out)
    col = _metric_column(cfg)
    settings = [ORIGINAL] + cfg.settings
    lines = ["system".ljust(12) + "".join(s[:14].rjust(16) for s in settings)]
    systems = list(cfg.modes) + ([REMOVAL] if lay.per_query(REMOVAL, TypoSetting.RandomWords.value).exists() else [])
    for m in systems:
        cells = []
        for s in settings:
            p = lay.per_query(m, s)
            if p.exists():
                vals = read_per_query(p)[col]
                cells.append(f"{100 * sum(vals.values()) / len(vals):.1f}".rjust(16))
            else:
                cells.append("-".rjust(16))
        lines.append(m.ljust(12) + "".join(cells))
    return f"{col} (x100)\n" + "\n".join(lines)


# ---------------------------------------------------------------- argv

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment TOML file")
    common.add_argument("--out", help="output directory (overrides paths.out)")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--force", action="store_true", help="re-run even if the manifest is current")
    common.add_argument("-v", "--verbose", action="store_true")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--passages")
    data.add_argument("--train-questions", dest="train_questions")
    data.add_argument("--train-qrels", dest="train_qrels")
    data.add_argument("--questions", "--test-questions", dest="test_questions")
    data.add_argument("--qrels", "--test-qrels", dest="test_qrels")
    data.add_argument("--misspellings")
    typo = argparse.ArgumentParser(add_help=False)
    typo.add_argument("--typo-p", dest="typo_p", type=float, help="per-word typo probability (default 0.2)")
    typo.add_argument("--typo-seed", dest="typo_seed", type=int)
    mode = argparse.ArgumentParser(add_help=False)
    mode.add_argument("--mode", action="append", dest="modes", choices=[m.value for m in TrainMode],
                      help="training mode (repeatable)")

    parser = _Parser(prog="robustdr", description="Typo-robust dense retrieval pipeline.")
    parser.add_argument("--version", action="version", version=f"robustdr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ingest", parents=[common, data], help="validate corpus, questions and qrels")
    p = sub.add_parser("build-vocab", parents=[common, data], help="learn the subword vocabulary")
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p = sub.add_parser("perturb", parents=[common, data, typo], help="build typoed test sets")
    p.add_argument("--setting", "--typo-setting", dest="settings", action="append",
                   help="RandomWords | NonStopwords | DiscriminativeUtterances (repeatable)")
    p = sub.add_parser("train", parents=[common, data, typo, mode], help="train dual encoders")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    sub.add_parser("index", parents=[common, data, mode], help="encode the passage collection")
    for name, text in (("search", "retrieve for original and typoed questions"),
                       ("evaluate", "score runs")):
        p = sub.add_parser(name, parents=[common, data, mode], help=text)
        p.add_argument("--setting", dest="settings", action="append",
                       help="Original or a typo setting (repeatable; default all)")
        if name == "search":
            p.add_argument("--depth", type=int, help="hits per question")
    sub.add_parser("analyze", parents=[common, data, mode], help="binning, removal baseline, trend tables")
    p = sub.add_parser("experiment", parents=[common, data, typo, mode], help="run every stage")
    p.add_argument("--steps", type=int)
    return parser


_OVERRIDE_KEYS = ("seed", "out", "passages", "train_questions", "train_qrels", "test_questions", "test_qrels",
                  "misspellings", "typo_p", "typo_seed", "modes", "steps", "batch_size", "lr", "depth")


def _overrides(args) -> dict:
    out = {k: getattr(args, k) for k in _OVERRIDE_KEYS if getattr(args, k, None) is not None}
    if getattr(args, "vocab_size", None) is not None:
        out["vocab_size"] = args.vocab_size
    settings = getattr(args, "settings", None)
    if settings and args.command == "perturb":
        out["settings"] = settings
    return out


def _query_settings(cfg: ExperimentConfig, requested) -> list[str]:
    if not requested:
        return [ORIGINAL] + cfg.settings
    out = []
    for s in requested:
        out.append(ORIGINAL if s.lower() == "original" else TypoSetting.parse(s).value)
    return out


def dispatch(args) -> None:
    overrides = _overrides(args)
    cfg = load_config(args.config, overrides)
    if "vocab_size" in overrides:
        cfg.vocab_size = overrides["vocab_size"]
    cmd, force = args.command, args.force
    if cmd == "ingest":
        stage_ingest(cfg, force)
    elif cmd == "build-vocab":
        stage_build_vocab(cfg, force)
    elif cmd == "perturb":
        for s in cfg.settings:
            stage_perturb(cfg, s, force)
    elif cmd == "train":
        for m in cfg.modes:
            stage_train(cfg, m, force)
    elif cmd == "index":
        for m in cfg.modes:
            stage_index(cfg, m, force)
    elif cmd in ("search", "evaluate"):
        try:
            settings = _query_settings(cfg, args.settings)
        except ValueError as exc:
            raise ConfigError(f"--setting: {exc}") from None
        for m in cfg.modes:
            for s in settings:
                (stage_search if cmd == "search" else stage_evaluate)(cfg, m, s, force)
    elif cmd == "analyze":
        stage_analyze(cfg, force)
    elif cmd == "experiment":
        run_experiment(cfg, force)
        print(summary_table(cfg))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CorpusError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
