import json
import logging
import re
from collections import defaultdict
from pathlib import Path
from typing import Callable, Iterable, Sequence

from pydantic import ValidationError

from theme_detection.errors import DataError
from theme_detection.model.corpus import SentenceUnit
from theme_detection.model.represent import (
    NON_PERSONAL_PRONOUNS,
    PLURAL_PRONOUNS,
    POSSESSIVE_PRONOUNS,
    CorefAnnotation,
    CorefChain,
    Discard,
    Mention,
    ReducedString,
    SrlArgument,
    SrlParse,
)

LOG = logging.getLogger(__name__)

Lemmatize = Callable[[str], str]

CORE_ROLE_RE = re.compile(r"^(?:R-|C-)?ARG\d$")
NOMINAL_POS = frozenset({"NOUN", "PROPN", "PRON", "NN", "NNS", "NNP", "NNPS", "PRP", "WP"})
MODIFIER_POS = frozenset({"ADV", "ADJ", "RB", "RBR", "RBS", "JJ", "JJR", "JJS", "WRB"})
# Contraction clitics are kept as tokens; the ambiguous 's is dropped.
TOKEN_RE = re.compile(r"\w+|['’](?:m|re|ve|ll|d)\b", re.IGNORECASE)
NEED_WANT_FORMS = frozenset(
    {"need", "needs", "needed", "needing", "want", "wants", "wanted", "wanting"}
)


class SpanError(DataError):
    def __init__(self, sentence_id: str, message: str) -> None:
        super().__init__(f"{sentence_id}: {message}")
        self.sentence_id = sentence_id


class AnnotationFormatError(DataError):
    def __init__(self, path: Path | str, line: int, message: str) -> None:
        super().__init__(f"{path} line {line}: {message}")
        self.line = line


def _replacement(mention: Mention, antecedent: Mention) -> str | None:
    word = mention.text.lower()
    if word not in NON_PERSONAL_PRONOUNS:
        return None
    if word in PLURAL_PRONOUNS and antecedent.is_human:
        return None
    if word in POSSESSIVE_PRONOUNS:
        return f"{antecedent.text}'s"
    return antecedent.text


def _apply(text: str, edits: list[tuple[int, int, str, str]]) -> str:
    """Apply (start, end, expected, replacement) edits right to left.

    Edits whose span no longer holds `expected`, or that overlap an applied edit, are skipped.
    """

    limit = len(text) + 1
    for start, end, expected, replacement in sorted(edits, key=lambda e: e[0], reverse=True):
        if end > limit or text[start:end] != expected:
            continue
        text = text[:start] + replacement + text[end:]
        limit = start
    return text


def resolve_pronouns(
    sentences: Sequence[str],
    chains: Iterable[CorefChain],
    question_id: str = "",
) -> list[str]:
    """Replace non-personal pronoun mentions with their chain antecedent.

    `they`, `them` and `their` are only replaced when the antecedent is not human. Possessive
    `its` and `their` become the antecedent followed by `'s`. Mentions whose text no longer matches
    the sentence are left alone, so resolving twice is the same as resolving once.

    :raises SpanError: A mention points outside the given sentences.
    """

    edits: dict[int, list[tuple[int, int, str, str]]] = defaultdict(list)

    for chain in chains:
        antecedent = chain.antecedent
        for mention in chain.mentions:
            sentence_id = f"{question_id}:{mention.sentence_index}"
            if mention.sentence_index >= len(sentences):
                raise SpanError(sentence_id, "sentence index out of range")
            if mention.end > len(sentences[mention.sentence_index]):
                raise SpanError(
                    sentence_id, f"mention span {mention.start}:{mention.end} out of range"
                )

            if mention is antecedent:
                continue
            replacement = _replacement(mention, antecedent)
            if replacement is not None:
                edits[mention.sentence_index].append(
                    (mention.start, mention.end, mention.text, replacement)
                )

    return [_apply(sentence, edits[index]) for index, sentence in enumerate(sentences)]


def resolve_units(
    units: Sequence[SentenceUnit], coref: dict[str, list[CorefChain]]
) -> list[SentenceUnit]:
    """Resolve pronouns question by question. Units must hold every sentence of their question."""

    by_question: dict[str, list[SentenceUnit]] = defaultdict(list)
    for unit in units:
        by_question[unit.question_id].append(unit)

    resolved: dict[str, str] = {}
    for question_id, members in by_question.items():
        chains = coref.get(question_id)
        if not chains:
            continue
        members.sort(key=lambda unit: unit.position)
        texts = resolve_pronouns([unit.text for unit in members], chains, question_id)
        resolved.update((unit.sentence_id, text) for unit, text in zip(members, texts, strict=True))

    changed = sum(1 for unit in units if resolved.get(unit.sentence_id, unit.text) != unit.text)
    LOG.info("Pronoun resolution rewrote %d of %d sentences", changed, len(units))
    return [
        unit.model_copy(update={"text": resolved[unit.sentence_id]})
        if unit.sentence_id in resolved
        else unit
        for unit in units
    ]


def resolve_argument_pronouns(
    parse: SrlParse, mentions: Iterable[tuple[Mention, Mention]]
) -> SrlParse:
    """Substitute resolvable pronoun mentions inside argument spans.

    :param mentions: (mention, antecedent) pairs located in the parse's sentence.
    """

    mentions = list(mentions)
    if not mentions:
        return parse

    arguments = []
    for argument in parse.arguments:
        edits = []
        for mention, antecedent in mentions:
            if argument.start <= mention.start and mention.end <= argument.end:
                replacement = _replacement(mention, antecedent)
                if replacement is not None:
                    offset = argument.start
                    span = (mention.start - offset, mention.end - offset)
                    edits.append((*span, mention.text, replacement))

        text = _apply(argument.text, edits)
        if text != argument.text:
            update: dict[str, object] = {"text": text}
            if argument.text.lower() in NON_PERSONAL_PRONOUNS:
                update["head_pos"] = "NOUN"
            argument = argument.model_copy(update=update)
        arguments.append(argument)

    return parse.model_copy(update={"arguments": arguments})


def render(text: str, lemmatizer: Lemmatize) -> str:
    return " ".join(lemmatizer(token).lower() for token in TOKEN_RE.findall(text))


def reduce_parse(parse: SrlParse, lemmatizer: Lemmatize) -> ReducedString | Discard:
    """Reduce a parse to "(arg, predicate, arg, ...)".

    The parse is discarded unless some core (subject or object) argument has a nominal head and
    renders to at least one token. Arguments headed by adverbs or adjectives are deleted.
    Everything left is lemmatized, lowercased and rendered in surface order.
    """

    core = [a for a in parse.arguments if CORE_ROLE_RE.match(a.role)]
    if not any(a.head_pos in NOMINAL_POS and render(a.text, lemmatizer) for a in core):
        return Discard(sentence_id=parse.sentence_id, reason="no nominal subject or object")

    kept = [a for a in parse.arguments if a.head_pos not in MODIFIER_POS]

    spans = [(a.start, a.text) for a in kept] + [(parse.predicate.start, parse.predicate.text)]
    parts = []
    for _, text in sorted(spans):
        rendered = render(text, lemmatizer)
        if rendered:
            parts.append(rendered)

    return ReducedString(sentence_id=parse.sentence_id, text="(" + ", ".join(parts) + ")")


def _complement(parse: SrlParse) -> SrlArgument | None:
    if parse.predicate.text.lower() not in NEED_WANT_FORMS:
        return None

    for argument in parse.arguments:
        if CORE_ROLE_RE.match(argument.role) and argument.text.lower().startswith("to "):
            return argument
    return None


def filter_infinitive_complements(parses: Sequence[SrlParse]) -> list[SrlParse]:
    """Drop parses headed by a to-infinitive that complements need or want.

    For "I need to know my password" the labeller yields (I, need, to know my password) and
    (I, know, my password). The know-parse is dropped and the need-parse's complement is narrowed
    to the embedded verb's arguments, giving (I, need, my password).
    """

    if len({p.sentence_id for p in parses}) > 1:
        raise ValueError("parses must share a sentence_id")

    dropped: set[int] = set()
    rewritten: dict[int, SrlParse] = {}

    for i, outer in enumerate(parses):
        complement = _complement(outer)
        if complement is None:
            continue

        for j, inner in enumerate(parses):
            if j == i or j in dropped:
                continue
            predicate = inner.predicate
            if not (complement.start <= predicate.start and predicate.end <= complement.end):
                continue

            dropped.add(j)
            objects = [
                a.model_copy(update={"role": complement.role})
                for a in inner.arguments
                if complement.start <= a.start and a.end <= complement.end
            ]
            if objects:
                arguments = [a for a in outer.arguments if a is not complement] + objects
                arguments.sort(key=lambda a: a.start)
                rewritten[i] = outer.model_copy(update={"arguments": arguments})

            LOG.debug(
                "Dropped infinitive complement parse %r in %s", predicate.text, inner.sentence_id
            )
            break

    return [rewritten.get(i, parse) for i, parse in enumerate(parses) if i not in dropped]


def reduce_sentence(
    parses: Sequence[SrlParse],
    lemmatizer: Lemmatize,
    chains: Iterable[CorefChain] = (),
    sentence_index: int | None = None,
) -> list[ReducedString | Discard]:
    """Pronoun substitution, infinitive filtering and reduction for the parses of one sentence."""

    mentions = [
        (mention, chain.antecedent)
        for chain in chains
        for mention in chain.mentions
        if mention.sentence_index == sentence_index and mention is not chain.antecedent
    ]
    resolved = [resolve_argument_pronouns(parse, mentions) for parse in parses]
    return [reduce_parse(parse, lemmatizer) for parse in filter_infinitive_complements(resolved)]


def build_srl_units(
    units: Sequence[SentenceUnit],
    parses: dict[str, list[SrlParse]],
    lemmatizer: Lemmatize,
    coref: dict[str, list[CorefChain]] | None = None,
) -> tuple[list[SentenceUnit], list[Discard]]:
    """One unit per surviving parse, id `<sentence_id>:<parse index>`, tags inherited."""

    result: list[SentenceUnit] = []
    discards: list[Discard] = []
    coref = coref or {}

    for unit in units:
        reduced = reduce_sentence(
            parses.get(unit.sentence_id, []),
            lemmatizer,
            coref.get(unit.question_id, []),
            unit.position,
        )
        for index, item in enumerate(reduced):
            if isinstance(item, Discard):
                discards.append(item)
                continue
            result.append(
                unit.model_copy(
                    update={"sentence_id": f"{unit.sentence_id}:{index}", "text": item.text}
                )
            )

    LOG.info(
        "Reduced %d sentences to %d parse units (%d discarded)",
        len(units),
        len(result),
        len(discards),
    )
    return result, discards


def _iter_annotations(path: Path | str) -> Iterable[tuple[int, str]]:
    with open(path, encoding="utf-8") as file:
        for line_no, line in enumerate(file, start=1):
            if line.strip():
                yield line_no, line


def load_srl(path: Path | str) -> dict[str, list[SrlParse]]:
    """SRL annotation JSONL, grouped by sentence id in file order."""

    result: dict[str, list[SrlParse]] = defaultdict(list)
    for line_no, line in _iter_annotations(path):
        try:
            parse = SrlParse.model_validate(json.loads(line))
        except (ValidationError, json.JSONDecodeError) as e:
            raise AnnotationFormatError(path, line_no, str(e).splitlines()[0]) from e
        result[parse.sentence_id].append(parse)

    LOG.info("Loaded SRL parses for %d sentences", len(result))
    return dict(result)


def load_coref(path: Path | str) -> dict[str, list[CorefChain]]:
    """Coreference annotation JSONL keyed by question id."""

    result: dict[str, list[CorefChain]] = {}
    for line_no, line in _iter_annotations(path):
        try:
            record = json.loads(line)
            annotation = CorefAnnotation.model_validate(
                {
                    "question_id": record.get("question_id") if isinstance(record, dict) else None,
                    "chains": [
                        {"mentions": chain}
                        for chain in (record.get("chains", []) if isinstance(record, dict) else [])
                    ],
                }
            )
        except (ValidationError, json.JSONDecodeError) as e:
            raise AnnotationFormatError(path, line_no, str(e).splitlines()[0]) from e
        result.setdefault(annotation.question_id, []).extend(annotation.chains)

    LOG.info("Loaded coreference chains for %d questions", len(result))
    return result
