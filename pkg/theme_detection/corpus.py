import csv
import json
import logging
import math
import xml.etree.ElementTree as ET
from collections import Counter
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Sequence

import numpy as np
from bs4 import BeautifulSoup
from pydantic import ValidationError

from theme_detection.errors import DataError
from theme_detection.misc import parallel_map
from theme_detection.model.corpus import (
    CorpusStats,
    Question,
    SentenceUnit,
    SplitCorpus,
    TagFrequency,
    TagSet,
)

LOG = logging.getLogger(__name__)

Segment = Callable[[str], list[str]]
Rewrite = Callable[[Question, list[str]], list[str]]

BLOCK_TAGS = ["p", "div", "li", "blockquote", "h1", "h2", "h3", "h4", "h5", "h6", "tr"]


class CorpusFormat(str, Enum):
    JSONL = "jsonl"
    CSV = "csv"
    POSTS_XML = "posts-xml"


class CorpusFormatError(DataError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateQuestionError(DataError):
    def __init__(self, question_id: str) -> None:
        super().__init__(f"duplicate question id: {question_id}")
        self.question_id = question_id


class NoTagsError(DataError):
    pass


class EmptySplitError(DataError):
    pass


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as file:
        for line_no, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(line_no, f"invalid JSON: {e.msg}") from e
            if not isinstance(record, dict):
                raise CorpusFormatError(line_no, "record is not an object")
            yield line_no, record


def _iter_csv(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8", newline="") as file:
        reader = csv.DictReader(file)
        for record in reader:
            record = dict(record)
            tags = record.get("tags")
            if tags is not None:
                record["tags"] = [tag for tag in tags.split("|") if tag]
            # Header is line 1; multi-line bodies make line_num the record's last line.
            yield reader.line_num, record


def parse_posts_tags(value: str) -> list[str]:
    """Tags from a data dump field, either `<a><b>` or `|a|b|`."""

    if value.startswith("<"):
        return [tag for tag in value.strip("<>").split("><") if tag]
    return [tag for tag in value.split("|") if tag]


def _iter_posts_xml(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    row_no = 0
    try:
        for _, element in ET.iterparse(path, events=("end",)):
            if element.tag != "row":
                continue
            row_no += 1
            attrs = element.attrib
            if attrs.get("PostTypeId") == "1":
                yield row_no, {
                    "id": attrs.get("Id"),
                    "body": attrs.get("Body", ""),
                    "tags": parse_posts_tags(attrs.get("Tags", "")),
                    "created_at": attrs.get("CreationDate"),
                }
            element.clear()
    except ET.ParseError as e:
        raise CorpusFormatError(e.position[0], f"invalid XML: {e}") from e


def load_corpus(
    path: Path | str, format: CorpusFormat | str = CorpusFormat.JSONL
) -> list[Question]:
    """Load a tagged question corpus.

    :param path: Corpus file.
    :param format: `jsonl`, `csv` (pipe-delimited tags) or `posts-xml` (data dump).
    :return: Questions in file order, bodies verbatim.
    """

    path = Path(path)
    readers = {
        CorpusFormat.JSONL: _iter_jsonl,
        CorpusFormat.CSV: _iter_csv,
        CorpusFormat.POSTS_XML: _iter_posts_xml,
    }

    questions: list[Question] = []
    seen: set[str] = set()

    for line_no, record in readers[CorpusFormat(format)](path):
        try:
            question = Question.model_validate(record)
        except ValidationError as e:
            fields = ", ".join(".".join(map(str, err["loc"])) or "record" for err in e.errors())
            raise CorpusFormatError(line_no, f"invalid record ({fields})") from e

        if question.id in seen:
            raise DuplicateQuestionError(question.id)

        seen.add(question.id)
        questions.append(question)

    LOG.info("Loaded %d questions from %s", len(questions), path)
    return questions


def _aware(value: datetime) -> datetime:
    return value if value.tzinfo is not None else value.replace(tzinfo=timezone.utc)


def filter_by_date(
    corpus: Iterable[Question],
    created_after: datetime | None = None,
    created_before: datetime | None = None,
) -> list[Question]:
    """Keep questions created in [created_after, created_before). Naive timestamps are UTC."""

    result = []
    for question in corpus:
        created = _aware(question.created_at)
        if created_after is not None and created < _aware(created_after):
            continue
        if created_before is not None and created >= _aware(created_before):
            continue
        result.append(question)
    return result


def select_tags(
    corpus: Sequence[Question],
    min_support: int,
    allowlist: Iterable[str] | None = None,
) -> TagSet:
    """Select tags carried by at least `min_support` questions.

    :param corpus: Questions.
    :param min_support: Minimal number of questions per tag.
    :param allowlist: Optional curated tags; the result is intersected with it.
    :return: Tags by descending frequency, ties by name.
    """

    if min_support < 1:
        raise ValueError("min_support must be >= 1")

    counts = Counter(tag for question in corpus for tag in question.tags)
    allowed = set(allowlist) if allowlist is not None else None

    selected = sorted(
        (
            tag
            for tag, count in counts.items()
            if count >= min_support and (allowed is None or tag in allowed)
        ),
        key=lambda tag: (-counts[tag], tag),
    )

    if not selected:
        raise NoTagsError("no tags meet support")

    LOG.info("Selected %d tags with min_support=%d", len(selected), min_support)
    return TagSet(
        tags=selected,
        min_support=min_support,
        counts={tag: counts[tag] for tag in selected},
    )


def restrict_to_tagset(corpus: Iterable[Question], tagset: TagSet) -> list[Question]:
    """Drop tags outside the tag set, then drop questions left without tags."""

    result = []
    for question in corpus:
        tags = question.tags & tagset.members
        if tags:
            result.append(question.model_copy(update={"tags": tags}))
    return result


def split_train_test(
    corpus: Sequence[Question],
    tagset: TagSet,
    ratio: float = 0.8,
    seed: int = 0,
) -> SplitCorpus:
    """Seeded split, then tag filtering.

    Question ids are sorted, shuffled with `seed` and the first ceil(ratio * N) become train.
    Train keeps questions with at least one tag in the tag set (other tags dropped); test keeps
    questions whose whole tag set is a single tag from the tag set.
    """

    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")

    by_id = {question.id: question for question in corpus}
    ids = sorted(by_id)
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]

    # Rounding guard: 0.7 * 10 is 7.000000000000001 in binary floating point.
    n_train = math.ceil(round(ratio * len(ids), 9))

    train = restrict_to_tagset((by_id[i] for i in shuffled[:n_train]), tagset)
    test = [
        by_id[i]
        for i in shuffled[n_train:]
        if len(by_id[i].tags) == 1 and next(iter(by_id[i].tags)) in tagset
    ]

    if not train:
        raise EmptySplitError("train split is empty after tag filtering")
    if not test:
        raise EmptySplitError("test split is empty after single-tag filtering")

    LOG.info("Split %d questions into %d train / %d test", len(ids), len(train), len(test))
    return SplitCorpus(train=train, test=test, seed=seed, ratio=ratio)


def dump_split_manifest(split: SplitCorpus) -> str:
    """JSONL of {id, split} sorted by id."""

    rows = [(q.id, "train") for q in split.train] + [(q.id, "test") for q in split.test]
    return "".join(
        json.dumps({"id": question_id, "split": name}, sort_keys=True) + "\n"
        for question_id, name in sorted(rows)
    )


def strip_markup(body: str) -> str:
    """Plain text of an HTML body. Code blocks are removed, block elements end paragraphs."""

    if "<" not in body and "&" not in body:
        return body

    soup = BeautifulSoup(body, "html.parser")
    for block in soup.find_all("pre"):
        block.decompose()
    for br in soup.find_all("br"):
        br.replace_with("\n")
    for element in soup.find_all(BLOCK_TAGS):
        element.append("\n\n")

    return soup.get_text()


def segment_question(question: Question, segmenter: Segment) -> list[str]:
    return segmenter(strip_markup(question.body))


def _units(question: Question, sentences: Sequence[str]) -> list[SentenceUnit]:
    return [
        SentenceUnit(
            sentence_id=f"{question.id}:{position}",
            question_id=question.id,
            position=position,
            text=text,
            tags=question.tags,
        )
        for position, text in enumerate(sentences)
    ]


def segment_corpus(
    questions: Sequence[Question],
    segmenter: Segment,
    workers: int = 1,
    rewrite: Rewrite | None = None,
) -> list[SentenceUnit]:
    """Every sentence of every question, in question then position order.

    `rewrite` sees a question's full sentence list before any cap is applied. Questions whose body
    yields no sentence are skipped with a warning.
    """

    def run(question: Question) -> list[str]:
        sentences = segment_question(question, segmenter)
        return rewrite(question, sentences) if rewrite is not None and sentences else sentences

    units: list[SentenceUnit] = []
    for question, sentences in zip(questions, parallel_map(run, questions, workers), strict=True):
        if not sentences:
            LOG.warning("Question %s has no sentences, skipped", question.id)
            continue
        units.extend(_units(question, sentences))
    return units


def cap_units(units: Iterable[SentenceUnit], max_n: int) -> list[SentenceUnit]:
    """First min(max_n, sentence count) sentences of every question."""

    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    return [unit for unit in units if unit.position < max_n]


def extract_sentence_units(
    questions: Sequence[Question],
    segmenter: Segment,
    max_n: int,
    workers: int = 1,
) -> list[SentenceUnit]:
    """First min(max_n, sentence count) sentences of every question, in order."""

    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    return cap_units(segment_corpus(questions, segmenter, workers), max_n)


def build_datasets(
    questions: Sequence[Question],
    segmenter: Segment,
    max_ns: Iterable[int] = range(1, 6),
    workers: int = 1,
    rewrite: Rewrite | None = None,
) -> dict[int, list[SentenceUnit]]:
    """Segment once and cut every requested max-N dataset. Smaller datasets nest in larger ones."""

    return cut_datasets(segment_corpus(questions, segmenter, workers, rewrite), max_ns)


def cut_datasets(
    units: Sequence[SentenceUnit], max_ns: Iterable[int] = range(1, 6)
) -> dict[int, list[SentenceUnit]]:
    """Every requested max-N dataset from already segmented units."""

    max_ns = sorted(set(max_ns))
    if not max_ns or max_ns[0] < 1:
        raise ValueError("max_n must be >= 1")

    datasets = {max_n: cap_units(units, max_n) for max_n in max_ns}
    for max_n in max_ns:
        LOG.info("Dataset max_n=%d: %d sentence units", max_n, len(datasets[max_n]))
    return datasets


def corpus_stats(
    n_questions: int,
    tagset: TagSet,
    split: SplitCorpus,
    datasets: dict[int, list[SentenceUnit]] | None = None,
    segmenter: Segment | None = None,
) -> CorpusStats:
    """Per-tag train/test shares with an example question, and sentence counts per dataset."""

    train_counts = Counter(tag for q in split.train for tag in q.tags)
    test_counts = Counter(tag for q in split.test for tag in q.tags)

    examples: dict[str, str] = {}
    for question in sorted(split.train, key=lambda q: q.id):
        if len(question.tags) != 1:
            continue
        tag = next(iter(question.tags))
        if tag not in examples:
            text = strip_markup(question.body)
            examples[tag] = " ".join(segmenter(text)) if segmenter else " ".join(text.split())

    frequencies = [
        TagFrequency(
            tag=tag,
            train=train_counts[tag] / len(split.train),
            test=test_counts[tag] / len(split.test),
            example=examples.get(tag),
        )
        for tag in sorted(tagset.tags, key=lambda t: (-train_counts[t], t))
    ]

    return CorpusStats(
        questions=n_questions,
        train=len(split.train),
        test=len(split.test),
        tags=len(tagset.tags),
        frequencies=frequencies,
        sentence_counts={max_n: len(units) for max_n, units in (datasets or {}).items()},
    )


def dump_units(units: Iterable[SentenceUnit]) -> str:
    return "".join(unit.model_dump_json() + "\n" for unit in units)


def parse_units(data: str) -> list[SentenceUnit]:
    return [SentenceUnit.model_validate_json(line) for line in data.splitlines() if line]
