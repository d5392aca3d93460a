import json
from pathlib import Path

import numpy as np
import pytest

from theme_detection.config import RunConfig, validate_config

TOPICS = {
    "credit-card": [
        "card", "balance", "overdraft", "statement", "issuer", "cashback", "limit", "swipe"
    ],
    "investing": ["stock", "portfolio", "dividend", "index", "broker", "shares", "etf", "bond"],
    "mortgage": [
        "mortgage", "lender", "escrow", "refinance", "appraisal", "closing", "lien", "realtor"
    ],
    "retirement": [
        "pension", "ira", "annuity", "rollover", "vesting", "retiree", "beneficiary", "roth"
    ],
    "taxes": [
        "irs", "deduction", "refund", "withholding", "audit", "filing", "bracket", "exemption"
    ],
}

TEMPLATES = [
    "My {0} and {1} are confusing.",
    "Should the {0} affect my {1} and {2}?",
    "I worry about the {0} because of the {1}.",
    "What happens to {0} after {1}?",
]


def synthetic_questions(per_tag: int = 200, seed: int = 7) -> list[dict]:
    """Single-tag questions whose sentences only use their tag's topic words."""

    rng = np.random.default_rng(seed)
    records = []
    for tag, words in TOPICS.items():
        for i in range(per_tag):
            sentences = []
            for _ in range(3):
                template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
                picked = rng.choice(words, size=3, replace=False)
                sentences.append(template.format(*picked))
            records.append(
                {
                    "id": f"{tag}-{i:03d}",
                    "body": "<p>" + " ".join(sentences) + "</p>",
                    "tags": [tag],
                    "created_at": f"2020-01-{1 + i % 28:02d}T10:00:00Z",
                }
            )
    return records


def write_jsonl(path: Path, records: list[dict]) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def synthetic_corpus(tmp_path_factory: pytest.TempPathFactory) -> Path:
    path = tmp_path_factory.mktemp("corpus") / "questions.jsonl"
    return write_jsonl(path, synthetic_questions())


def config_data(corpus: Path, out_dir: Path, **sections: dict) -> dict:
    """Synthetic run configuration; `sections` replace whole sections."""

    data = {
        "name": "synthetic",
        "seed": 0,
        "out_dir": str(out_dir),
        "corpus": {"path": str(corpus)},
        "tags": {"min_support": 50},
        "represent": {"max_n": 3},
        "encoder": {"kind": "tfidf"},
        "cluster": {"algorithm": "kmeans", "k": 25},
    }
    data.update(sections)
    return data


@pytest.fixture()
def run_config(synthetic_corpus: Path, tmp_path: Path) -> RunConfig:
    return validate_config(config_data(synthetic_corpus, tmp_path / "out"))
