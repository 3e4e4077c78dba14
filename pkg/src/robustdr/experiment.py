"""End-to-end study: train systems, build typo test sets, evaluate, analyse."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from . import analysis
from .corpus import PassageCollection, QuestionSet, RelevanceJudgments
from .encoder import ModelParams
from .evaluation import MetricReport, recall_at_k, mrr_at_k
from .retrieval import DenseIndex, build_index, run_queries
from .textproc import IdfTable, Vocabulary, build_vocab
from .training import StepRecord, TrainConfig, TrainingData, train
from .typogen import MisspellingDictionary, TypoSetting, TypoedQuestion, as_questions, build_typo_testset

log = logging.getLogger(__name__)

SETTINGS = (TypoSetting.RandomWords, TypoSetting.NonStopwords, TypoSetting.DiscriminativeUtterances)


@dataclass
class Corpus:
    passages: PassageCollection
    train: QuestionSet
    test: QuestionSet
    qrels_train: RelevanceJudgments
    qrels_test: RelevanceJudgments

    def validate(self) -> None:
        self.qrels_train.validate(self.passages, self.train, require_positive=True)
        self.qrels_test.validate(self.passages, self.test, require_positive=True)
        clash = set(self.train.ids) & set(self.test.ids)
        if clash:
            raise ValueError(f"train and test share question ids: {sorted(clash)[:5]}")


def vocab_for(corpus: Corpus, size: int) -> Vocabulary:
    return build_vocab([p.text for p in corpus.passages] + [q.text for q in corpus.train], size)


def typo_testsets(corpus: Corpus, p: float, seed: int,
                  dictionary: Optional[MisspellingDictionary] = None,
                  settings: Sequence[TypoSetting] = SETTINGS) -> dict[str, list[TypoedQuestion]]:
    return {s.value: build_typo_testset(corpus.test, s, p, seed, corpus.qrels_test, corpus.passages, dictionary)
            for s in settings}


@dataclass
class SystemResult:
    name: str
    params: ModelParams
    history: list[StepRecord]
    index: DenseIndex
    runs: dict[str, dict] = field(default_factory=dict)  # setting -> run


@dataclass
class StudyResult:
    vocab: Vocabulary
    typoed: dict[str, list[TypoedQuestion]]
    systems: dict[str, SystemResult]
    removal_run: dict
    removal: list[analysis.RemovalVariant]
    k: int

    def recall(self, system: str, setting: str, k: Optional[int] = None, qrels=None) -> MetricReport:
        run = self.removal_run if system == "removal" else self.systems[system].runs[setting]
        return recall_at_k(run, qrels, k or self.k)


def run_study(corpus: Corpus, modes: Sequence[str], base: TrainConfig, vocab_size: int = 2048,
              typo_seed: int = 1, k: int = 1000, removal_system: str = "DR",
              dictionary: Optional[MisspellingDictionary] = None,
              vocab: Optional[Vocabulary] = None) -> StudyResult:
    corpus.validate()
    vocab = vocab or vocab_for(corpus, vocab_size)
    data = TrainingData(corpus.train, corpus.passages, corpus.qrels_train, vocab, dictionary)
    typoed = typo_testsets(corpus, base.typo_p, typo_seed, dictionary)
    query_sets = {"Original": list(corpus.test)}
    query_sets.update({s: list(as_questions(t, corpus.test)) for s, t in typoed.items()})

    systems = {}
    for mode in modes:
        cfg = replace(base, mode=mode)
        log.info("training %s for %d steps", mode, cfg.steps)
        params, history = train(data, cfg)
        index = build_index(corpus.passages, params, vocab)
        res = SystemResult(mode, params, history, index)
        for setting, qs in query_sets.items():
            res.runs[setting] = run_queries(index, qs, params, vocab, k)
        systems[mode] = res

    removal = analysis.removal_baseline(typoed[TypoSetting.RandomWords.value], corpus.test)
    removal_run = {}
    if removal_system in systems:
        sysr = systems[removal_system]
        removal_run = run_queries(sysr.index, analysis.removal_questions(removal, corpus.test),
                                  sysr.params, vocab, k)
    return StudyResult(vocab, typoed, systems, removal_run, removal, k)


def idf_table(corpus: Corpus) -> IdfTable:
    return IdfTable.from_texts(p.text for p in corpus.passages)


def summary(study: StudyResult, corpus: Corpus, k: int = 10) -> dict[str, dict[str, float]]:
    out = {}
    for name, s in study.systems.items():
        out[name] = {setting: recall_at_k(run, corpus.qrels_test, k).mean for setting, run in s.runs.items()}
        out[name]["MRR@10/Original"] = mrr_at_k(s.runs["Original"], corpus.qrels_test, 10).mean
    if study.removal_run:
        out["removal"] = {"RandomWords": recall_at_k(study.removal_run, corpus.qrels_test, k).mean}
    return out
