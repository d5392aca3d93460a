from fractions import Fraction

from pydantic import Field, computed_field

from theme_detection.model.model import BaseModel
from theme_detection.types import Rational


class TagDistribution(BaseModel):
    """Tag counts of one cluster's training sentences."""

    cluster: int = Field(..., description="Cluster index", ge=0)
    counts: dict[str, int] = Field(..., description="N_ij: (sentence, tag) pairs per tag")

    @computed_field  # type: ignore[prop-decorator]
    @property
    def total(self) -> int:
        """N_i, a multi-tag sentence counted once per tag."""

        return sum(self.counts.values())

    @property
    def probabilities(self) -> dict[str, Fraction]:
        total = self.total
        return {tag: Fraction(count, total) for tag, count in sorted(self.counts.items())}

    def p(self, tag: str) -> Fraction:
        count = self.counts.get(tag, 0)
        return Fraction(count, self.total) if count else Fraction(0)

    def top_tags(self, n: int = 3) -> list[tuple[str, Fraction]]:
        return sorted(self.probabilities.items(), key=lambda item: (-item[1], item[0]))[:n]

    @property
    def purity(self) -> Fraction:
        return max(self.probabilities.values(), default=Fraction(0))


class QuestionPrediction(BaseModel):
    question_id: str
    clusters: list[int] = Field(
        default_factory=list, description="Nearest cluster per scored sentence"
    )
    scores: dict[str, Rational] = Field(default_factory=dict, description="Averaged tag scores")
    predicted_tag: str | None = Field(None, description="Argmax tag; None means abstain")
    skipped: int = Field(0, description="Sentences without a usable vector", ge=0)

    @property
    def abstained(self) -> bool:
        return self.predicted_tag is None

    @property
    def score(self) -> Fraction:
        return self.scores[self.predicted_tag] if self.predicted_tag is not None else Fraction(0)


class TagScore(BaseModel):
    tag: str
    precision: float
    recall: float
    f1: float
    support: int = Field(..., description="Gold test questions with this tag")


class ConfusionMatrix(BaseModel):
    labels: list[str] = Field(..., description="Row labels: top gold tags by frequency")
    columns: list[str] = Field(..., description="Column labels: the row labels plus 'other'")
    matrix: list[list[int]] = Field(..., description="Counts, rows = gold, columns = predicted")


class EvalReport(BaseModel):
    micro_f1: float = Field(..., ge=0, le=1)
    macro_f1: float = Field(..., ge=0, le=1)
    questions: int = Field(..., description="Evaluated test questions")
    abstained: int = Field(0, description="Questions without any scored sentence")
    per_tag: list[TagScore] = Field(default_factory=list)
    confusion: ConfusionMatrix
    predictions: list[QuestionPrediction] = Field(default_factory=list)


class Exemplar(BaseModel):
    rank: int = Field(..., ge=1)
    sentence_id: str
    text: str
    distance: float = Field(..., description="Cosine distance to the centroid")


class ClusterExemplars(BaseModel):
    cluster: int
    size: int = Field(..., description="Training members of the cluster")
    tags: list[tuple[str, Rational]] = Field(default_factory=list, description="Top tags by p_ij")
    purity: Rational = Field(Fraction(0), description="Largest p_ij")
    exemplars: list[Exemplar] = Field(default_factory=list)
