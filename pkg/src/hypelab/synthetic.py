"""
Synthetic Task Suite

A toy language with a latent grammar: determiners, adjectives, nouns, verbs,
prepositions and adverbs, where verbs agree with the parity of their subject
noun and content words come in synonym pairs. From it we derive a corpus for
masked-token pretraining and three fine-tuning tasks shaped like the small
GLUE sets:

    acceptability   single sentence, grammatical or not    (matthews)
    paraphrase      sentence pair, same meaning or not      (f1)
    similarity      sentence pair, graded score in [0, 5]   (pearson_spearman)

Classification labels are flipped with probability `label_noise` so that a
small model over-fits a 1k-example training set within a few epochs.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import DataFormat, Dataset, Example, TokenizerSpec, write_dataset
from .errors import InputError, OutputError
from .metrics import MetricKind
from .rng import RngStream

logger = logging.getLogger(__name__)

# category -> (prefix, vocabulary size); noun and verb sizes are multiples of
# four so that their synonyms (index i and i + size/2) keep agreement parity
CATEGORIES = {
    "det": ("d", 8),
    "adj": ("a", 30),
    "noun": ("n", 40),
    "verb": ("v", 40),
    "prep": ("p", 10),
    "adv": ("r", 20),
}
CONTENT = ("adj", "noun", "verb", "adv")

Word = tuple[str, int]


def render(word: Word) -> str:
    return f"{CATEGORIES[word[0]][0]}{word[1]}"


def vocabulary() -> list[str]:
    return [render((cat, i)) for cat, (_, size) in CATEGORIES.items() for i in range(size)]


def synonym(word: Word) -> Word:
    cat, i = word
    half = CATEGORIES[cat][1] // 2
    return cat, (i + half) % (2 * half)


def concept(word: Word) -> int:
    return word[1] % (CATEGORIES[word[0]][1] // 2)


@dataclass(frozen=True)
class TaskData:
    name: str
    train: Dataset
    dev: Dataset
    metric: MetricKind


@dataclass(frozen=True)
class SyntheticSuite:
    seed: int
    corpus: tuple[str, ...]
    tasks: dict[str, TaskData] = field(hash=False)
    tokenizer: TokenizerSpec = field(hash=False)


class Grammar:
    """Sentence sampler and corruptions over the toy language."""

    def __init__(self, gen: np.random.Generator):
        self.gen = gen

    def pick(self, cat: str, parity: int | None = None) -> Word:
        size = CATEGORIES[cat][1]
        if parity is None:
            return cat, int(self.gen.integers(size))
        return cat, int(self.gen.integers(size // 2)) * 2 + parity

    def noun_phrase(self) -> list[Word]:
        words = [self.pick("det")]
        if self.gen.random() < 0.5:
            words.append(self.pick("adj"))
        words.append(self.pick("noun"))
        return words

    def sentence(self) -> list[Word]:
        subject = self.noun_phrase()
        words = subject + [self.pick("verb", parity=subject[-1][1] % 2)]
        if self.gen.random() < 0.6:
            words += self.noun_phrase()
        if self.gen.random() < 0.3:
            words += [self.pick("prep")] + self.noun_phrase()
        if self.gen.random() < 0.4:
            words.append(self.pick("adv"))
        return words

    def corrupt(self, words: list[Word]) -> list[Word]:
        words = list(words)
        verb = next(i for i, w in enumerate(words) if w[0] == "verb")
        kind = self.gen.integers(3)
        if kind == 0:
            # agreement violation
            words[verb] = self.pick("verb", parity=1 - words[verb][1] % 2)
        elif kind == 1:
            # subject noun before its determiner
            words[0], words[verb - 1] = words[verb - 1], words[0]
        else:
            # verb moved to the front
            words.insert(0, words.pop(verb))
        return words

    def replace_content(self, words: list[Word], k: int, synonyms: float = 0.0) -> list[Word]:
        """
        Swap `k` content words for words of another concept (same category
        and parity, so agreement survives); other content words become their
        synonym with probability `synonyms`.
        """
        words = list(words)
        slots = [i for i, w in enumerate(words) if w[0] in CONTENT]
        chosen = set(self.gen.choice(slots, size=min(k, len(slots)), replace=False).tolist()) if k else set()
        for i in slots:
            if i in chosen:
                cat, idx = words[i]
                while True:
                    other = self.pick(cat, parity=idx % 2)
                    if concept(other) != concept(words[i]):
                        break
                words[i] = other
            elif self.gen.random() < synonyms:
                words[i] = synonym(words[i])
        return words


def _text(words: list[Word]) -> str:
    return " ".join(render(w) for w in words)


def _split(
    name: str,
    make: Callable[[Grammar], Example],
    gen: np.random.Generator,
    n_train: int,
    n_dev: int,
    kind: str,
    label_names: tuple[str, ...],
) -> tuple[Dataset, Dataset]:
    grammar = Grammar(gen)
    seen: set[tuple[str, str | None]] = set()
    splits: list[list[Example]] = [[], []]
    for split, n in enumerate((n_train, n_dev)):
        attempts = 0
        while len(splits[split]) < n:
            attempts += 1
            if attempts > 50 * n:
                raise InputError(f"cannot draw {n} distinct examples for task '{name}'")
            example = make(grammar)
            key = (example.text_a, example.text_b)
            if key in seen:
                continue
            seen.add(key)
            splits[split].append(example)
    train = Dataset(f"{name}.train", tuple(splits[0]), kind, label_names)  # type: ignore[arg-type]
    dev = Dataset(f"{name}.dev", tuple(splits[1]), kind, label_names)  # type: ignore[arg-type]
    return train, dev


def _flip(gen: np.random.Generator, label: int, noise: float) -> int:
    return 1 - label if gen.random() < noise else label


def generate_synthetic_suite(
    seed: int = 0,
    n_train: int = 4000,
    n_dev: int = 600,
    corpus_size: int = 20000,
    label_noise: float = 0.1,
) -> SyntheticSuite:
    """
    Build the pretraining corpus and the three fine-tuning tasks.

    Every task draws from its own keyed stream, so the suite is a function of
    `seed` alone and train/dev splits never share an example.
    """
    if not 0.0 <= label_noise < 0.5:
        raise InputError(f"label noise must lie in [0, 0.5), got {label_noise}")
    if min(n_train, n_dev, corpus_size) < 1:
        raise InputError("suite sizes must be positive")

    def stream(purpose: str) -> np.random.Generator:
        return RngStream(seed, purpose=f"synthetic:{purpose}").generator()

    corpus_grammar = Grammar(stream("corpus"))
    corpus = tuple(_text(corpus_grammar.sentence()) for _ in range(corpus_size))

    noise_gen = stream("label-noise")

    def acceptability(g: Grammar):
        words = g.sentence()
        label = int(g.gen.random() < 0.5)
        if not label:
            words = g.corrupt(words)
        return Example(_text(words), None, _flip(noise_gen, label, label_noise))

    def paraphrase(g: Grammar):
        words = g.sentence()
        label = int(g.gen.random() < 0.5)
        other = g.replace_content(words, 0 if label else int(g.gen.integers(1, 3)), synonyms=0.5)
        return Example(_text(words), _text(other), _flip(noise_gen, label, label_noise))

    def similarity(g: Grammar):
        words = g.sentence()
        n = sum(w[0] in CONTENT for w in words)
        k = int(g.gen.integers(0, n + 1))
        other = g.replace_content(words, k, synonyms=0.5)
        score = 5.0 * (1.0 - k / n) + g.gen.normal(0.0, 0.25)
        return Example(_text(words), _text(other), float(np.clip(score, 0.0, 5.0)))

    tasks = {}
    for name, make, kind, labels, metric in (
        ("acceptability", acceptability, "classification", ("unacceptable", "acceptable"), "matthews"),
        ("paraphrase", paraphrase, "classification", ("different", "paraphrase"), "f1"),
        ("similarity", similarity, "regression", (), "pearson_spearman"),
    ):
        train, dev = _split(name, make, stream(name), n_train, n_dev, kind, labels)
        tasks[name] = TaskData(name, train, dev, metric)  # type: ignore[arg-type]
        logger.debug("synthetic task %s: %d train / %d dev", name, len(train), len(dev))

    return SyntheticSuite(seed, corpus, tasks, TokenizerSpec.build(vocabulary()))


def write_suite(suite: SyntheticSuite, out_dir: str | Path, format: DataFormat = "jsonl") -> list[Path]:
    """
    Write corpus.txt plus <task>.train.<ext> / <task>.dev.<ext> for every task.
    """
    out = Path(out_dir)
    written = []
    for task in suite.tasks.values():
        written.append(write_dataset(task.train, out / f"{task.name}.train.{format}", format))
        written.append(write_dataset(task.dev, out / f"{task.name}.dev.{format}", format))
    corpus = out / "corpus.txt"
    try:
        corpus.write_text("\n".join(suite.corpus) + "\n", encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write corpus '{corpus}': {e.strerror}")
    written.append(corpus)
    return written
