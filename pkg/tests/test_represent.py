import json

import numpy as np
import pytest

from theme_detection.lemmatize import Lemmatizer
from theme_detection.model.corpus import SentenceUnit
from theme_detection.model.represent import CorefChain, Discard, Mention, ReducedString, SrlParse
from theme_detection.represent import (
    AnnotationFormatError,
    SpanError,
    build_srl_units,
    filter_infinitive_complements,
    load_coref,
    load_srl,
    reduce_parse,
    reduce_sentence,
    render,
    resolve_pronouns,
    resolve_units,
)


@pytest.fixture(scope="module")
def lemmatizer() -> Lemmatizer:
    return Lemmatizer.default()


def arg(role: str, text: str, start: int, head_pos: str) -> dict:
    end = start + len(text)
    return {"role": role, "text": text, "start": start, "end": end, "head_pos": head_pos}


def parse(sentence_id: str, predicate: str, start: int, *arguments: dict) -> SrlParse:
    return SrlParse.model_validate(
        {
            "sentence_id": sentence_id,
            "predicate": {"text": predicate, "start": start, "end": start + len(predicate)},
            "args": list(arguments),
        }
    )


def mention(text: str, sentence_index: int, start: int, antecedent=False, human=False) -> dict:
    return {
        "text": text,
        "start": start,
        "end": start + len(text),
        "sentence_index": sentence_index,
        "is_antecedent": antecedent,
        "is_human": human,
    }


def chain(*mentions: dict) -> CorefChain:
    return CorefChain.model_validate({"mentions": list(mentions)})


CARD_CHAIN = [mention("card", 0, 3, antecedent=True), mention("It", 1, 0)]

# "I need to know my password"
NEED = parse(
    "q:0",
    "need",
    2,
    arg("ARG0", "I", 0, "PRP"),
    arg("ARG1", "to know my password", 7, "VB"),
)
KNOW = parse("q:0", "know", 10, arg("ARG0", "I", 0, "PRP"), arg("ARG1", "my password", 15, "NN"))

# "I want to open an account"
WANT = parse(
    "q:0",
    "want",
    2,
    arg("ARG0", "I", 0, "PRP"),
    arg("ARG1", "to open an account", 7, "VB"),
)
OPEN = parse("q:0", "open", 10, arg("ARG0", "I", 0, "PRP"), arg("ARG1", "an account", 15, "NN"))

ROLES = ["ARG0", "ARG1", "ARG2", "R-ARG1", "ARGM-TMP", "ARGM-LOC", "ARGM-MNR"]
HEAD_POS = ["NN", "NNP", "PRP", "JJ", "RB", "VB", "IN", "CD"]
ARGUMENT_TEXTS = ["my card", "%", "it", "quickly", "in California", "--", "the fee", "$", "5"]


class TestReduceParse:
    def test_subject_predicate_object(self, lemmatizer):
        p = parse(
            "q:0", "opened", 10, arg("ARG0", "I", 0, "PRP"), arg("ARG1", "an account", 17, "NN")
        )
        expected = ReducedString(sentence_id="q:0", text="(i, open, an account)")
        assert reduce_parse(p, lemmatizer) == expected

    def test_modifier_arguments_deleted(self, lemmatizer):
        p = parse(
            "q:0",
            "opened",
            10,
            arg("ARG0", "I", 0, "PRP"),
            arg("ARGM-MNR", "quickly", 2, "RB"),
            arg("ARG1", "an account", 17, "NN"),
        )
        assert reduce_parse(p, lemmatizer).text == "(i, open, an account)"

    def test_surface_order(self, lemmatizer):
        # "Was my card stolen"
        p = parse("q:0", "stolen", 12, arg("ARG1", "my card", 4, "NN"))
        assert reduce_parse(p, lemmatizer).text == "(my card, steal)"

    def test_no_nominal_core_argument_discarded(self, lemmatizer):
        p = parse("q:3", "raining", 6, arg("ARGM-TMP", "today", 14, "NN"))
        result = reduce_parse(p, lemmatizer)
        assert isinstance(result, Discard)
        assert result.sentence_id == "q:3"

    def test_adjective_headed_object_does_not_count(self, lemmatizer):
        p = parse("q:0", "seems", 3, arg("ARG1", "expensive", 9, "JJ"))
        assert isinstance(reduce_parse(p, lemmatizer), Discard)

    def test_nominal_argument_without_tokens_discarded(self, lemmatizer):
        p = parse("q:0", "rose", 2, arg("ARG1", "%", 0, "NN"))
        assert isinstance(reduce_parse(p, lemmatizer), Discard)

    def test_locative_argument_kept(self, lemmatizer):
        p = parse(
            "q:0",
            "live",
            2,
            arg("ARG0", "I", 0, "PRP"),
            arg("ARGM-LOC", "in California", 7, "NNP"),
        )
        assert reduce_parse(p, lemmatizer).text == "(i, live, in california)"

    @pytest.mark.parametrize("seed", range(20))
    def test_reduced_strings_keep_a_nominal_argument(self, lemmatizer, seed):
        rng = np.random.default_rng(seed)
        reduced = 0
        for _ in range(50):
            arguments, offset = [], 0
            for _ in range(int(rng.integers(0, 4))):
                text = str(rng.choice(ARGUMENT_TEXTS))
                role, head_pos = str(rng.choice(ROLES)), str(rng.choice(HEAD_POS))
                arguments.append(arg(role, text, offset, head_pos))
                offset += len(text) + 1
            p = parse("q:0", "paid", offset, *arguments)

            result = reduce_parse(p, lemmatizer)
            if isinstance(result, Discard):
                continue
            reduced += 1
            parts = result.text[1:-1].split(", ")
            assert any(
                a.role in ("ARG0", "ARG1", "ARG2", "R-ARG1")
                and a.head_pos in ("NN", "NNP", "PRP")
                and render(a.text, lemmatizer) in parts
                for a in p.arguments
            )
        assert reduced > 0


class TestInfinitiveComplements:
    def test_need_to_know(self, lemmatizer):
        filtered = filter_infinitive_complements([NEED, KNOW])
        assert len(filtered) == 1
        assert reduce_parse(filtered[0], lemmatizer).text == "(i, need, my password)"

    def test_want_to_open(self, lemmatizer):
        filtered = filter_infinitive_complements([WANT, OPEN])
        assert len(filtered) == 1
        assert reduce_parse(filtered[0], lemmatizer).text == "(i, want, an account)"

    def test_other_verbs_untouched(self):
        predicate = NEED.predicate.model_copy(update={"text": "tried"})
        tried = NEED.model_copy(update={"predicate": predicate})
        assert filter_infinitive_complements([tried, KNOW]) == [tried, KNOW]

    def test_mixed_sentences_rejected(self):
        with pytest.raises(ValueError):
            filter_infinitive_complements([NEED, KNOW.model_copy(update={"sentence_id": "q:1"})])


class TestResolvePronouns:
    def test_non_personal_pronoun_replaced(self):
        sentences = ["My card was stolen.", "It was never found."]
        assert resolve_pronouns(sentences, [chain(*CARD_CHAIN)]) == [
            "My card was stolen.",
            "card was never found.",
        ]

    def test_possessive(self):
        sentences = ["My card was stolen.", "Its limit was high."]
        chains = [chain(mention("card", 0, 3, antecedent=True), mention("Its", 1, 0))]
        assert resolve_pronouns(sentences, chains)[1] == "card's limit was high."

    def test_personal_pronouns_kept(self):
        sentences = ["John lost his card.", "He is upset."]
        chains = [chain(mention("John", 0, 0, antecedent=True), mention("He", 1, 0, human=True))]
        assert resolve_pronouns(sentences, chains) == sentences

    def test_they_kept_for_human_antecedent(self):
        sentences = ["My parents retired.", "They need income."]
        parents = mention("parents", 0, 3, antecedent=True, human=True)
        chains = [chain(parents, mention("They", 1, 0))]
        assert resolve_pronouns(sentences, chains) == sentences

    def test_they_replaced_for_non_human_antecedent(self):
        sentences = ["The bonds matured.", "They paid well."]
        chains = [chain(mention("bonds", 0, 4, antecedent=True), mention("They", 1, 0))]
        assert resolve_pronouns(sentences, chains)[1] == "bonds paid well."

    def test_idempotent(self):
        sentences = ["My card was stolen.", "It was never found."]
        chains = [chain(*CARD_CHAIN)]
        once = resolve_pronouns(sentences, chains)
        assert resolve_pronouns(once, chains) == once

    def test_out_of_range_mention(self):
        with pytest.raises(SpanError):
            resolve_pronouns(["My card was stolen."], [chain(*CARD_CHAIN)], "q")

    def test_span_past_sentence_end(self):
        chains = [chain(mention("card", 0, 3, antecedent=True), mention("It", 1, 40))]
        with pytest.raises(SpanError) as info:
            resolve_pronouns(["My card was stolen.", "It was found."], chains, "q")
        assert info.value.sentence_id == "q:1"

    def test_chain_needs_earliest_nominal_antecedent(self):
        with pytest.raises(ValueError):
            chain(mention("card", 0, 3), mention("It", 1, 0, antecedent=True))


def unit(question_id: str, position: int, text: str) -> SentenceUnit:
    return SentenceUnit(
        sentence_id=f"{question_id}:{position}",
        question_id=question_id,
        position=position,
        text=text,
        tags=frozenset({"credit-card"}),
    )


class TestResolveUnits:
    def test_rewrites_only_annotated_questions(self):
        units = [
            unit("q", 1, "It was never found."),
            unit("q", 0, "My card was stolen."),
            unit("r", 0, "It is fine."),
        ]
        resolved = resolve_units(units, {"q": [chain(*CARD_CHAIN)]})
        assert [u.text for u in resolved] == [
            "card was never found.",
            "My card was stolen.",
            "It is fine.",
        ]
        assert [u.sentence_id for u in resolved] == ["q:1", "q:0", "r:0"]


class TestReduceSentence:
    def test_argument_pronoun_resolved(self, lemmatizer):
        stolen = parse("q:1", "stolen", 7, arg("ARG1", "It", 0, "PRP"))
        expected = [ReducedString(sentence_id="q:1", text="(it, steal)")]
        assert reduce_sentence([stolen], lemmatizer) == expected

        reduced = reduce_sentence([stolen], lemmatizer, [chain(*CARD_CHAIN)], sentence_index=1)
        assert reduced == [ReducedString(sentence_id="q:1", text="(card, steal)")]


class TestBuildSrlUnits:
    def test_parse_units_inherit_provenance(self, lemmatizer):
        units = [unit("q", 0, "I need to know my password."), unit("q", 1, "It pays.")]
        parses = {
            "q:0": [NEED, KNOW],
            "q:1": [parse("q:1", "pays", 3), parse("q:1", "pays", 3, arg("ARG0", "It", 0, "PRP"))],
        }
        result, discards = build_srl_units(units, parses, lemmatizer)

        assert [(u.sentence_id, u.text) for u in result] == [
            ("q:0:0", "(i, need, my password)"),
            ("q:1:1", "(it, pay)"),
        ]
        assert all(u.tags == frozenset({"credit-card"}) and u.question_id == "q" for u in result)
        assert [d.sentence_id for d in discards] == ["q:1"]

    def test_sentence_without_parses_yields_nothing(self, lemmatizer):
        result, discards = build_srl_units([unit("q", 0, "Hello there.")], {}, lemmatizer)
        assert result == [] and discards == []


class TestLoaders:
    def test_load_srl_groups_by_sentence(self, tmp_path):
        path = tmp_path / "srl.jsonl"
        records = [p.model_dump(by_alias=True, exclude_none=True) for p in (NEED, KNOW)]
        path.write_text("".join(json.dumps(r) + "\n" for r in records) + "\n", encoding="utf-8")
        assert load_srl(path) == {"q:0": [NEED, KNOW]}

    def test_load_srl_bad_role(self, tmp_path):
        path = tmp_path / "srl.jsonl"
        record = NEED.model_dump(by_alias=True, exclude_none=True)
        record["args"][0]["role"] = "arg0"
        lines = [json.dumps(NEED.model_dump(by_alias=True)), json.dumps(record)]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(AnnotationFormatError) as info:
            load_srl(path)
        assert info.value.line == 2

    def test_load_coref(self, tmp_path):
        path = tmp_path / "coref.jsonl"
        record = {"question_id": "q", "chains": [CARD_CHAIN]}
        path.write_text(json.dumps(record) + "\n", encoding="utf-8")
        chains = load_coref(path)["q"]
        assert len(chains) == 1
        assert chains[0].antecedent == Mention.model_validate(CARD_CHAIN[0])

    def test_load_coref_invalid_chain(self, tmp_path):
        path = tmp_path / "coref.jsonl"
        path.write_text(json.dumps({"question_id": "q", "chains": [[CARD_CHAIN[1]]]}) + "\n")
        with pytest.raises(AnnotationFormatError):
            load_coref(path)
