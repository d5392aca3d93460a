from datetime import datetime

from pydantic import Field, field_serializer, field_validator, model_validator

from theme_detection.model.model import BaseModel


class Question(BaseModel):
    """Tagged text unit, the corpus atom."""

    id: str = Field(..., description="Unique question ID", min_length=1)
    body: str = Field(..., description="Question body, verbatim (may contain markup)")
    tags: frozenset[str] = Field(..., description="Topic tags")
    created_at: datetime = Field(..., description="Creation timestamp")

    @field_validator("tags")
    @classmethod
    def validate_tags(cls, v: frozenset[str]) -> frozenset[str]:
        if not v:
            raise ValueError("question must carry at least one tag")
        return v

    @field_serializer("tags")
    def serialize_tags(self, v: frozenset[str]) -> list[str]:
        return sorted(v)


class TagSet(BaseModel):
    tags: list[str] = Field(..., description="Tags by descending frequency, then name")
    min_support: int = Field(..., description="Minimal question count per tag", ge=1)
    counts: dict[str, int] = Field(default_factory=dict, description="Question count per tag")

    @model_validator(mode="after")
    def validate_support(self) -> "TagSet":
        for tag in self.tags:
            if self.counts and self.counts.get(tag, 0) < self.min_support:
                raise ValueError(f"tag {tag!r} is below min_support={self.min_support}")
        return self

    def __contains__(self, tag: object) -> bool:
        return tag in self.members

    @property
    def members(self) -> frozenset[str]:
        return frozenset(self.tags)


class SplitCorpus(BaseModel):
    train: list[Question] = Field(
        ..., description="Training questions, tags filtered to the tag set"
    )
    test: list[Question] = Field(..., description="Single-tag test questions")
    seed: int = Field(..., description="Shuffle seed")
    ratio: float = Field(0.8, description="Train fraction before filtering")

    @model_validator(mode="after")
    def validate_disjoint(self) -> "SplitCorpus":
        overlap = {q.id for q in self.train} & {q.id for q in self.test}
        if overlap:
            raise ValueError(f"train and test share question ids: {sorted(overlap)[:5]}")
        return self

    def golds(self) -> dict[str, str]:
        """Test question id -> its only tag."""

        return {q.id: next(iter(q.tags)) for q in self.test}


class SentenceUnit(BaseModel):
    """One extracted sentence (or reduced SRL string) with provenance."""

    sentence_id: str = Field(..., description="Unique unit ID: <question_id>:<position>[:<parse>]")
    question_id: str = Field(..., description="Source question ID")
    position: int = Field(..., description="0-based sentence index in the question", ge=0)
    text: str = Field(..., description="Sentence text")
    tags: frozenset[str] = Field(..., description="Tags inherited from the question")

    @field_serializer("tags")
    def serialize_tags(self, v: frozenset[str]) -> list[str]:
        return sorted(v)


class TagFrequency(BaseModel):
    tag: str
    train: float = Field(..., description="Share of training questions carrying the tag")
    test: float = Field(..., description="Share of test questions carrying the tag")
    example: str | None = Field(None, description="Representative training question text")


class CorpusStats(BaseModel):
    questions: int = Field(..., description="Questions loaded")
    train: int
    test: int
    tags: int
    frequencies: list[TagFrequency] = Field(default_factory=list)
    sentence_counts: dict[int, int] = Field(
        default_factory=dict, description="Training units per max_n dataset"
    )
