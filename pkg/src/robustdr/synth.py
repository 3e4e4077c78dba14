"""Deterministic generator for the shipped desk-scale dataset.

Every passage describes a fictional entity whose two-word name is drawn from a
small shared lexicon, so each name word recurs across many passages and only
the pair identifies one.  Questions quote the name and are otherwise made of
interrogative and linking words that also occur throughout the passages, so
those words carry little IDF weight.  Test questions ask about passages that
have no training question.  The answer to every question is the attribute
word of its passage.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .corpus import (Passage, PassageCollection, Question, QuestionSet, RelevanceJudgments,
                     write_passages, write_qrels, write_questions)

ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gr",
          "kr", "st", "tr", "sh", "th", "ch", "pl"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ei"]
CODAS = ["", "", "", "n", "r", "l", "s", "k", "m", "th"]

TOPICS = [
    "river", "album", "mountain", "village", "tournament", "island", "capital", "library",
    "parliament", "century", "committee", "restaurant", "professor", "soldier", "language",
    "cemetery", "laboratory", "harbor", "castle", "novel", "festival", "bridge", "railway", "museum",
    "cathedral", "forest", "stadium", "university", "newspaper", "battle", "academy", "canal",
]

QUESTION_TEMPLATES = [
    "what is {name} known for",
    "where is {name}",
    "who founded {name}",
    "who built {name}",
    "what is near {name}",
    "when was {name} founded",
    "which {name} is known",
    "how was {name} built",
    "where was {name} founded",
    "what is {name} near",
]

PASSAGE_TEMPLATES = [
    "{name} is a {t1} near {a} , where the old {t2} stands .",
    "{name} , the {t1} of {a} , is what most people know .",
    "{name} : a {t1} founded by {a} , who also built the {t2} .",
    "{name} hosts the {t1} built by {a} when the {t2} was new .",
    "{name} is known for the {t1} of {a} , which is how it got its {t2} .",
]


def _syllables() -> list[str]:
    return sorted({o + v + c for o in ONSETS for v in VOWELS for c in CODAS})


def make_lexicon(rng: random.Random, size: int, min_syl: int = 2, max_syl: int = 3) -> list[str]:
    syl = _syllables()
    words: set[str] = set()
    while len(words) < size:
        w = "".join(rng.choice(syl) for _ in range(rng.randint(min_syl, max_syl)))
        if 5 <= len(w) <= 12:
            words.add(w)
    return sorted(words)


@dataclass
class DeskDataset:
    passages: PassageCollection
    train: QuestionSet
    test: QuestionSet
    qrels_train: RelevanceJudgments
    qrels_test: RelevanceJudgments

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_passages(self.passages, d / "passages.tsv")
        write_questions(self.train, d / "questions_train.tsv")
        write_questions(self.test, d / "questions_test.tsv")
        write_qrels(self.qrels_train, d / "qrels_train.tsv")
        write_qrels(self.qrels_test, d / "qrels_test.tsv")


def generate(seed: int = 13, n_passages: int = 2000, n_train: int = 500, n_test: int = 200,
             name_lexicon: int = 64, attr_lexicon: int = 10, n_topics: int = 10) -> DeskDataset:
    if name_lexicon * (name_lexicon - 1) // 2 < n_passages:
        raise ValueError(f"a name lexicon of {name_lexicon} words cannot give {n_passages} distinct names")
    if n_train + n_test > n_passages:
        raise ValueError("train and test questions need distinct passages")
    if not 2 <= n_topics <= len(TOPICS) or attr_lexicon < 1:
        raise ValueError("invalid topic or attribute count")
    rng = random.Random(seed)
    words = make_lexicon(rng, name_lexicon + attr_lexicon)
    rng.shuffle(words)
    names_lex, attrs = sorted(words[:name_lexicon]), sorted(words[name_lexicon:])
    topics = sorted(TOPICS)[:n_topics]

    seen: set[frozenset] = set()
    passages, meta = [], []
    while len(passages) < n_passages:
        w1, w2 = rng.sample(names_lex, 2)
        if frozenset((w1, w2)) in seen:
            continue
        seen.add(frozenset((w1, w2)))
        t1, t2 = rng.sample(topics, 2)
        a = rng.choice(attrs).title()
        text = rng.choice(PASSAGE_TEMPLATES).format(name=f"{w1.title()} {w2.title()}", t1=t1, t2=t2, a=a)
        passages.append(Passage(f"p{len(passages):05d}", text))
        meta.append((f"{w1} {w2}", a))

    order = list(range(n_passages))
    rng.shuffle(order)
    splits = {}
    for split, prefix, pids in (("train", "tr", order[:n_train]), ("test", "te", order[n_train:n_train + n_test])):
        qs, qrels = [], RelevanceJudgments()
        for n, i in enumerate(pids):
            name, answer = meta[i]
            q = Question(f"{prefix}{n:04d}", rng.choice(QUESTION_TEMPLATES).format(name=name), (answer,))
            qs.append(q)
            qrels.add(q.id, passages[i].id)
        splits[split] = (QuestionSet(qs), qrels)
    (train, qr_train), (test, qr_test) = splits["train"], splits["test"]
    return DeskDataset(PassageCollection(passages), train, test, qr_train, qr_test)
