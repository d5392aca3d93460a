import logging
from datetime import datetime, timezone

import pytest

from tests.conftest import synthetic_questions, write_jsonl
from theme_detection.corpus import (
    CorpusFormatError,
    DuplicateQuestionError,
    EmptySplitError,
    NoTagsError,
    build_datasets,
    cap_units,
    corpus_stats,
    cut_datasets,
    dump_split_manifest,
    extract_sentence_units,
    filter_by_date,
    load_corpus,
    parse_posts_tags,
    restrict_to_tagset,
    segment_corpus,
    select_tags,
    split_train_test,
    strip_markup,
)
from theme_detection.model.corpus import Question
from theme_detection.segment import Segmenter


def question(
    qid: str, tags: list[str], body: str = "A question.", created: str = "2020-01-01"
) -> Question:
    created_at = datetime.fromisoformat(created)
    return Question(id=qid, body=body, tags=frozenset(tags), created_at=created_at)


def record(qid: str, tags: list[str] | None = None, body: str = "Body.") -> dict:
    data = {"id": qid, "body": body, "created_at": "2020-01-01T00:00:00Z"}
    if tags is not None:
        data["tags"] = tags
    return data


class TestLoadCorpus:
    def test_jsonl(self, tmp_path):
        records = [record("1", ["a"]), record("2", ["b"]), record("3", ["a", "b"])]
        path = write_jsonl(tmp_path / "c.jsonl", records)
        questions = load_corpus(path)
        assert [q.id for q in questions] == ["1", "2", "3"]
        assert questions[2].tags == {"a", "b"}

    def test_body_verbatim(self, tmp_path):
        body = "<p>Keep  me\n as is.</p>"
        path = write_jsonl(tmp_path / "c.jsonl", [record("1", ["a"], body)])
        assert load_corpus(path)[0].body == body

    def test_missing_tags_names_line(self, tmp_path):
        path = write_jsonl(tmp_path / "c.jsonl", [record("1", ["a"]), record("2")])
        with pytest.raises(CorpusFormatError) as e:
            load_corpus(path)
        assert e.value.line == 2
        assert "tags" in str(e.value)

    def test_empty_tags_rejected(self, tmp_path):
        path = write_jsonl(tmp_path / "c.jsonl", [record("1", [])])
        with pytest.raises(CorpusFormatError) as e:
            load_corpus(path)
        assert e.value.line == 1

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        good = '{"id": "1", "body": "x", "tags": ["a"], "created_at": "2020-01-01T00:00:00Z"}'
        path.write_text(good + "\n{oops\n")
        with pytest.raises(CorpusFormatError) as e:
            load_corpus(path)
        assert e.value.line == 2

    def test_duplicate_id(self, tmp_path):
        path = write_jsonl(tmp_path / "c.jsonl", [record("7", ["a"]), record("7", ["b"])])
        with pytest.raises(DuplicateQuestionError) as e:
            load_corpus(path)
        assert e.value.question_id == "7"

    def test_csv_pipe_tags(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(
            "id,body,tags,created_at\n"
            '1,"Hello, world.",tax|irs,2020-01-01T00:00:00Z\n'
            "2,Second.,mortgage,2020-02-01T00:00:00Z\n"
        )
        questions = load_corpus(path, "csv")
        assert questions[0].tags == {"tax", "irs"}
        assert questions[0].body == "Hello, world."
        assert questions[1].tags == {"mortgage"}

    def test_posts_xml_keeps_questions_only(self, tmp_path):
        path = tmp_path / "Posts.xml"
        path.write_text(
            "<posts>\n"
            '  <row Id="1" PostTypeId="1" Body="&lt;p&gt;Hi there.&lt;/p&gt;" '
            'Tags="&lt;tax&gt;&lt;irs&gt;" CreationDate="2020-01-01T00:00:00.000" />\n'
            '  <row Id="2" PostTypeId="2" Body="An answer."'
            ' CreationDate="2020-01-02T00:00:00.000" />\n'
            '  <row Id="3" PostTypeId="1" Body="Why?" Tags="|mortgage|" '
            'CreationDate="2020-01-03T00:00:00.000" />\n'
            "</posts>\n"
        )
        questions = load_corpus(path, "posts-xml")
        assert [q.id for q in questions] == ["1", "3"]
        assert questions[0].body == "<p>Hi there.</p>"
        assert questions[0].tags == {"tax", "irs"}
        assert questions[1].tags == {"mortgage"}

    @pytest.mark.parametrize(
        ("value", "expected"),
        [("<a><b-c>", ["a", "b-c"]), ("|a|b|", ["a", "b"]), ("", [])],
    )
    def test_posts_tags(self, value, expected):
        assert parse_posts_tags(value) == expected


class TestFilterByDate:
    def test_half_open_window(self):
        corpus = [
            question("1", ["a"], created="2019-12-31T23:59:59"),
            question("2", ["a"], created="2020-01-01T00:00:00"),
            question("3", ["a"], created="2020-06-30T12:00:00"),
            question("4", ["a"], created="2020-07-01T00:00:00"),
        ]
        kept = filter_by_date(
            corpus,
            datetime(2020, 1, 1, tzinfo=timezone.utc),
            datetime(2020, 7, 1, tzinfo=timezone.utc),
        )
        assert [q.id for q in kept] == ["2", "3"]

    def test_open_bounds(self):
        corpus = [question("1", ["a"]), question("2", ["a"])]
        assert filter_by_date(corpus) == corpus


class TestSelectTags:
    def test_support_boundary(self):
        corpus = [question(f"a{i}", ["a"]) for i in range(50)]
        corpus += [question(f"b{i}", ["b"]) for i in range(49)]
        tagset = select_tags(corpus, 50)
        assert tagset.tags == ["a"]
        assert tagset.counts == {"a": 50}

    def test_frequency_then_name(self):
        corpus = [question(f"{tag}{i}", [tag]) for tag in ["c", "a", "b"] for i in range(100)]
        corpus += [question("extra", ["c"])]
        assert select_tags(corpus, 100).tags == ["c", "a", "b"]

    def test_allowlist(self):
        corpus = [question(f"{tag}{i}", [tag]) for tag in ["a", "b", "c"] for i in range(3)]
        assert select_tags(corpus, 1, allowlist=["b", "c", "zzz"]).tags == ["b", "c"]

    def test_no_tags(self):
        with pytest.raises(NoTagsError, match="no tags meet support"):
            select_tags([question("1", ["a"])], 2)

    def test_min_support_must_be_positive(self):
        with pytest.raises(ValueError):
            select_tags([question("1", ["a"])], 0)

    def test_idempotent(self):
        corpus = [question(f"q{i}", ["a", "b"] if i % 3 else ["c"]) for i in range(30)]
        corpus += [question("rare", ["rare"])]
        tagset = select_tags(corpus, 5)
        assert select_tags(restrict_to_tagset(corpus, tagset), 5) == tagset


class TestSplitTrainTest:
    corpus = [question(f"q{i}", ["a" if i % 2 else "b"]) for i in range(10)]

    def test_exact_ratio(self):
        tagset = select_tags(self.corpus, 1)
        split = split_train_test(self.corpus, tagset, 0.8, seed=3)
        assert (len(split.train), len(split.test)) == (8, 2)
        assert {q.id for q in split.train}.isdisjoint({q.id for q in split.test})

    def test_deterministic(self):
        tagset = select_tags(self.corpus, 1)
        first = split_train_test(self.corpus, tagset, 0.8, seed=11)
        second = split_train_test(list(reversed(self.corpus)), tagset, 0.8, seed=11)
        assert dump_split_manifest(first) == dump_split_manifest(second)

    def test_filters(self):
        corpus = [question(f"q{i:02d}", ["a", "x"] if i % 2 else ["b"]) for i in range(40)]
        corpus += [question(f"m{i:02d}", ["a", "b"]) for i in range(20)]
        tagset = select_tags(corpus, 1, allowlist=["a", "b"])
        split = split_train_test(corpus, tagset, 0.5, seed=0)

        assert all(q.tags <= {"a", "b"} and q.tags for q in split.train)
        assert all(len(q.tags) == 1 and next(iter(q.tags)) in tagset for q in split.test)
        assert not any(q.id.startswith("m") for q in split.test)
        # "a"-questions also carry "x", so none of them can be test questions.
        assert all(q.tags == {"b"} for q in split.test)

    def test_empty_test(self):
        corpus = [question(f"q{i}", ["a", "b"]) for i in range(10)]
        with pytest.raises(EmptySplitError):
            split_train_test(corpus, select_tags(corpus, 1), 0.8, seed=0)

    @pytest.mark.parametrize("ratio", [0, 1, 1.5])
    def test_ratio_range(self, ratio):
        with pytest.raises(ValueError):
            split_train_test(self.corpus, select_tags(self.corpus, 1), ratio)

    def test_manifest(self):
        split = split_train_test(self.corpus, select_tags(self.corpus, 1), 0.8, seed=0)
        lines = dump_split_manifest(split).splitlines()
        assert len(lines) == 10
        assert lines == sorted(lines)
        assert sum('"split": "test"' in line for line in lines) == 2


class TestStripMarkup:
    def test_code_blocks_removed(self):
        body = "<p>My code fails.</p><pre><code>x = 1. y = 2.</code></pre><p>Why?</p>"
        assert Segmenter()(strip_markup(body)) == ["My code fails.", "Why?"]

    def test_blocks_end_paragraphs(self):
        body = "<ul><li>no stop here</li><li>next item</li></ul>"
        assert Segmenter()(strip_markup(body)) == ["no stop here", "next item"]

    def test_entities(self):
        assert strip_markup("Tom &amp; Jerry") == "Tom & Jerry"

    def test_plain_text_untouched(self):
        assert strip_markup("Plain text.") == "Plain text."


class TestExtractSentenceUnits:
    segmenter = Segmenter()

    def test_truncation(self):
        body = " ".join(f"Sentence number {i}." for i in range(7))
        units = extract_sentence_units([question("q", ["a"], body)], self.segmenter, 5)
        assert [u.position for u in units] == [0, 1, 2, 3, 4]
        assert units[4].text == "Sentence number 4."
        assert units[0].sentence_id == "q:0"

    def test_short_question(self):
        units = extract_sentence_units([question("q", ["a"], "One. Two.")], self.segmenter, 5)
        assert len(units) == 2

    def test_tags_inherited(self):
        units = extract_sentence_units([question("q", ["a", "b"], "One. Two.")], self.segmenter, 5)
        assert all(u.tags == {"a", "b"} and u.question_id == "q" for u in units)

    def test_empty_question_skipped(self, caplog):
        questions = [question("empty", ["a"], "<pre>only code</pre>"), question("q", ["a"], "Hi.")]
        with caplog.at_level(logging.WARNING):
            units = extract_sentence_units(questions, self.segmenter, 3)
        assert [u.question_id for u in units] == ["q"]
        assert "empty" in caplog.text

    def test_max_n_positive(self):
        with pytest.raises(ValueError):
            extract_sentence_units([question("q", ["a"])], self.segmenter, 0)

    def test_parallel_matches_sequential(self):
        questions = [Question.model_validate(r) for r in synthetic_questions(per_tag=10)]
        sequential = extract_sentence_units(questions, self.segmenter, 2)
        parallel = extract_sentence_units(questions, self.segmenter, 2, workers=4)
        assert parallel == sequential


class TestBuildDatasets:
    def test_nested(self):
        questions = [Question.model_validate(r) for r in synthetic_questions(per_tag=5)]
        datasets = build_datasets(questions, Segmenter())

        assert sorted(datasets) == [1, 2, 3, 4, 5]
        for small, large in zip(range(1, 5), range(2, 6)):
            assert len(datasets[small]) <= len(datasets[large])
            assert set(u.model_dump_json() for u in datasets[small]) <= set(
                u.model_dump_json() for u in datasets[large]
            )

    def test_rewrite_sees_full_question(self):
        seen = []

        def rewrite(q: Question, sentences: list[str]) -> list[str]:
            seen.append(len(sentences))
            return [s.upper() for s in sentences]

        body = "One. Two. Three. Four."
        datasets = build_datasets([question("q", ["a"], body)], Segmenter(), [2], rewrite=rewrite)
        assert seen == [4]
        assert [u.text for u in datasets[2]] == ["ONE.", "TWO."]

    def test_cap_units(self):
        units = segment_corpus([question("q", ["a"], "One. Two. Three.")], Segmenter())
        assert [u.text for u in cap_units(units, 2)] == ["One.", "Two."]

    def test_cut_from_segmented_units(self):
        questions = [Question.model_validate(r) for r in synthetic_questions(per_tag=5)]
        units = segment_corpus(questions, Segmenter())
        assert cut_datasets(units) == build_datasets(questions, Segmenter())
        assert cut_datasets(units, [3])[3] == cap_units(units, 3)

    @pytest.mark.parametrize("max_ns", [[], [0, 2]])
    def test_invalid_max_n(self, max_ns):
        with pytest.raises(ValueError):
            cut_datasets([], max_ns)
        with pytest.raises(ValueError):
            build_datasets([], Segmenter(), max_ns)


class TestCorpusStats:
    def test_shares_and_counts(self):
        questions = [Question.model_validate(r) for r in synthetic_questions(per_tag=20)]
        tagset = select_tags(questions, 10)
        split = split_train_test(questions, tagset, 0.8, seed=0)
        datasets = build_datasets(split.train, Segmenter())
        stats = corpus_stats(len(questions), tagset, split, datasets, Segmenter())

        assert stats.questions == 100
        assert stats.train + stats.test == 100
        assert stats.tags == 5
        assert sum(f.train for f in stats.frequencies) == pytest.approx(1.0)
        assert sum(f.test for f in stats.frequencies) == pytest.approx(1.0)
        assert all(f.example for f in stats.frequencies)
        assert stats.sentence_counts[1] == stats.train
        assert stats.sentence_counts[5] == 3 * stats.train
