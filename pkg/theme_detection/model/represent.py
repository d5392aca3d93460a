import re

from pydantic import Field, model_validator

from theme_detection.model.model import BaseModel

ROLE_RE = re.compile(r"^[A-Z][A-Za-z0-9]*(?:-[A-Za-z0-9]+)*$")

PERSONAL_PRONOUNS = frozenset(
    {
        "i", "me", "my", "mine", "myself",
        "you", "your", "yours", "yourself", "yourselves",
        "we", "us", "our", "ours", "ourselves",
        "he", "him", "his", "himself",
        "she", "her", "hers", "herself",
    }
)  # fmt: skip
NON_PERSONAL_PRONOUNS = frozenset(
    {"it", "its", "this", "that", "these", "those", "they", "them", "their"}
)
PLURAL_PRONOUNS = frozenset({"they", "them", "their"})
POSSESSIVE_PRONOUNS = frozenset({"its", "their"})
PRONOUNS = PERSONAL_PRONOUNS | NON_PERSONAL_PRONOUNS | {"itself", "themselves", "theirs"}


def is_pronoun(text: str) -> bool:
    return text.strip().lower() in PRONOUNS


class Span(BaseModel):
    text: str = Field(..., description="Surface text")
    start: int = Field(..., description="Character offset in the sentence, inclusive", ge=0)
    end: int = Field(..., description="Character offset in the sentence, exclusive")

    @model_validator(mode="after")
    def validate_bounds(self) -> "Span":
        if self.end <= self.start:
            raise ValueError("span must be non-empty")
        return self


class SrlArgument(Span):
    role: str = Field(..., description="Role label, e.g. ARG0, ARGM-LOC, R-ARG1")
    head_pos: str = Field(..., description="Part-of-speech tag of the argument head")

    @model_validator(mode="after")
    def validate_role(self) -> "SrlArgument":
        if not ROLE_RE.match(self.role):
            raise ValueError(f"invalid role label {self.role!r}")
        return self


class SrlParse(BaseModel):
    """One predicate-argument structure of a sentence, as produced by an external labeller."""

    sentence_id: str = Field(..., description="Sentence the parse belongs to")
    predicate: Span = Field(..., description="Predicate span")
    arguments: list[SrlArgument] = Field(default_factory=list, alias="args")
    source_text: str | None = Field(None, description="The parsed sentence")


class Mention(Span):
    sentence_index: int = Field(..., description="0-based sentence index within the question", ge=0)
    is_antecedent: bool = False
    is_human: bool = False


class CorefChain(BaseModel):
    mentions: list[Mention]

    @model_validator(mode="after")
    def validate_antecedent(self) -> "CorefChain":
        if len(self.mentions) < 2:
            raise ValueError("coreference chain needs at least two mentions")

        antecedents = [m for m in self.mentions if m.is_antecedent]
        if len(antecedents) != 1:
            raise ValueError("coreference chain needs exactly one antecedent")

        nominal = [m for m in self.mentions if not is_pronoun(m.text)]
        if not nominal:
            raise ValueError("coreference chain has no non-pronominal mention")

        earliest = min(nominal, key=lambda m: (m.sentence_index, m.start))
        if antecedents[0] is not earliest:
            raise ValueError("antecedent must be the earliest non-pronominal mention")

        return self

    @property
    def antecedent(self) -> Mention:
        return next(m for m in self.mentions if m.is_antecedent)


class CorefAnnotation(BaseModel):
    question_id: str
    chains: list[CorefChain] = Field(default_factory=list)


class ReducedString(BaseModel):
    sentence_id: str
    text: str = Field(
        ..., description='Rendering "(arg, predicate, arg, ...)", lemmatized and lowercased'
    )


class Discard(BaseModel):
    """A parse dropped by reduction. A value, not an error."""

    sentence_id: str
    reason: str
