"""
DriveLens Explainer Module
Turns generative micro-events into human-readable explanations
"""

import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.preprocessing import normalize

from .errors import EmptyList, EmptyQuery, ParseError, UnknownFeature, ValidationError
from .features import CATALOG_BY_NAME, CONFOUNDER
from .scoring import FluctuationEvent
from .som import GenerativeEvent, GenerativeEvents

logger = logging.getLogger(__name__)

RESOURCES = os.path.join(os.path.dirname(__file__), "resources")
DEFAULT_CORPUS_PATH = os.path.join(RESOURCES, "guidelines.txt")
DEFAULT_LEXICON_PATH = os.path.join(RESOURCES, "adverbs.tsv")

TOKEN_PATTERN = r"[A-Za-z0-9]+"
SUBJECT = "the ego vehicle"
PRONOUN = "it"
CONJUNCTION = " and "
DETERMINERS = ("the", "a", "an")

# maneuver -> (degree adjective or None for the severity tier, verb)
ACTIONS: Dict[str, Tuple[Optional[str], str]] = {
    "A_W": (None, "weaves"),
    "A_S": (None, "swerves"),
    "A_L": (None, "side-slips"),
    "A_Q": ("abrupt", "stops"),
    "A_U": ("sharp", "turns"),
    "A_J": ("severe", "jerks"),
}

# spatial or confounding feature -> guideline search keyword
KEYWORDS: Dict[str, str] = {
    "O": "closing gap",
    "B": "brake lights",
    "C": "heavy traffic",
    "car_count": "heavy traffic",
    "P": "pedestrian crossing",
    "Q": "walker hurrying",
    "ped_speed": "walker hurrying",
    "L": "red signal",
    "H": "large truck",
    "S": "relative speed",
    "S_mps": "relative speed",
    "D": "following distance",
    "D_m": "following distance",
    "G": "road setting",
    "W": "weather",
}


def _tier(level: float) -> str:
    if level < 1 / 3:
        return "slight"
    if level < 2 / 3:
        return "moderate"
    return "severe"


class GuidelineCorpus:
    """
    Traffic guideline sentences with a TF-IDF index.

    Term frequency is the raw count, idf = ln(N / df), rows are L2-normalized.
    """

    def __init__(self, entries: Iterable[Tuple[str, str]]):
        self.entries: List[Tuple[str, str]] = [(str(i), str(t)) for i, t in entries]
        if not self.entries:
            raise ValidationError("corpus", "guideline corpus is empty")
        ids = [i for i, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("corpus", "guideline ids must be unique")

        self.vectorizer = CountVectorizer(lowercase=True, token_pattern=TOKEN_PATTERN)
        try:
            counts = self.vectorizer.fit_transform([t for _, t in self.entries]).toarray().astype(float)
        except ValueError as e:
            raise ValidationError("corpus", f"guideline corpus has no terms: {e}") from e
        n_docs = counts.shape[0]
        df = np.count_nonzero(counts, axis=0)
        self.idf = np.log(n_docs / df)
        self.matrix = normalize(counts * self.idf)
        self._analyzer = self.vectorizer.build_analyzer()

    @classmethod
    def from_sentences(cls, sentences: Sequence[str]) -> "GuidelineCorpus":
        return cls((f"G{n:03d}", s) for n, s in enumerate(sentences, start=1))

    @classmethod
    def from_file(cls, path: str) -> "GuidelineCorpus":
        """One sentence per line, blank lines and `#` comments skipped"""
        try:
            with open(path, "r", encoding="utf-8") as f:
                lines = [line.strip() for line in f]
        except OSError as e:
            raise ParseError(f"cannot read guideline corpus {path}: {e}") from e
        sentences = [line for line in lines if line and not line.startswith("#")]
        logger.info("Loaded %d guidelines from %s", len(sentences), path)
        return cls.from_sentences(sentences)

    @classmethod
    def default(cls) -> "GuidelineCorpus":
        return cls.from_file(DEFAULT_CORPUS_PATH)

    def __len__(self) -> int:
        return len(self.entries)

    def text_of(self, guideline_id: str) -> str:
        return dict(self.entries)[guideline_id]

    def vectorize(self, query: str) -> np.ndarray:
        if not self._analyzer(query):
            raise EmptyQuery(f"query {query!r} has no terms")
        counts = self.vectorizer.transform([query]).toarray().astype(float)
        return normalize(counts * self.idf)[0]

    def rank(self, query: str) -> List[Tuple[str, float]]:
        return tfidf_cosine(query, self)


def tfidf_cosine(query: str, corpus: GuidelineCorpus) -> List[Tuple[str, float]]:
    """Guideline ids ranked by cosine similarity to the query, ties broken by id"""
    q = corpus.vectorize(query)
    sims = np.clip(corpus.matrix @ q, 0.0, 1.0)
    ranked = [(gid, float(s)) for (gid, _), s in zip(corpus.entries, sims)]
    ranked.sort(key=lambda item: (-item[1], item[0]))
    return ranked


class AdverbLexicon:
    """Adjective to adverb lookup with identity fallback"""

    def __init__(self, mapping: Optional[Dict[str, str]] = None):
        self.mapping = {k.lower(): v for k, v in (mapping or {}).items()}

    @classmethod
    def from_file(cls, path: str) -> "AdverbLexicon":
        mapping = {}
        try:
            with open(path, "r", encoding="utf-8") as f:
                for lineno, line in enumerate(f, start=1):
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    parts = line.split("\t")
                    if len(parts) != 2:
                        raise ParseError(f"{path}:{lineno}: expected 'adjective<TAB>adverb'")
                    mapping[parts[0].strip()] = parts[1].strip()
        except OSError as e:
            raise ParseError(f"cannot read adverb lexicon {path}: {e}") from e
        return cls(mapping)

    @classmethod
    def default(cls) -> "AdverbLexicon":
        return cls.from_file(DEFAULT_LEXICON_PATH)

    def convert(self, word: str) -> str:
        return self.mapping.get(word.lower(), word)


def _strip_punctuation(text: str) -> str:
    return re.sub(r"[^\w\s-]", "", text).strip()


def guideline_object(sentence: str, keyword: str) -> str:
    """Noun phrase of a guideline: from the keyword onward, else after the last determiner"""
    clean = _strip_punctuation(sentence)
    at = clean.lower().find(keyword.lower())
    if at >= 0:
        return clean[at:]
    words = clean.split()
    last = max((i for i, w in enumerate(words) if w.lower() in DETERMINERS), default=-1)
    return " ".join(words[last + 1:]) if last + 1 < len(words) else clean


def make_event(name: str, level: float = 1.0, weight: float = 1.0) -> GenerativeEvent:
    """Generative event for a catalog feature at a normalized level"""
    if name not in CATALOG_BY_NAME:
        raise UnknownFeature(f"unknown feature {name!r}")
    feature = CATALOG_BY_NAME[name]
    return GenerativeEvent(name, weight, feature.decode(level), level, feature.category)


def render_feature(event: GenerativeEvent, corpus: Optional[GuidelineCorpus] = None,
                   lexicon: Optional[AdverbLexicon] = None) -> str:
    """
    Maneuvers become an action of the ego vehicle; spatial and confounding features
    become the object of the guideline retrieved for their keyword.
    """
    lexicon = lexicon or AdverbLexicon.default()
    name = event.feature
    if name in ACTIONS:
        degree, verb = ACTIONS[name]
        adjective = degree or _tier(event.level)
        return f"{SUBJECT} {lexicon.convert(adjective)} {verb}"
    if name not in KEYWORDS:
        raise UnknownFeature(f"no explanation template for feature {name!r}")

    corpus = corpus or GuidelineCorpus.default()
    keyword = KEYWORDS[name]
    best_id, similarity = tfidf_cosine(keyword, corpus)[0]
    if similarity == 0:
        logger.warning("No guideline matches keyword '%s', using it verbatim", keyword)
        phrase = keyword
    else:
        phrase = guideline_object(corpus.text_of(best_id), keyword)
    if event.category == CONFOUNDER:
        phrase = f"{event.value} {phrase}"
    return phrase


def assemble_explanation(sentences: Sequence[str]) -> str:
    """Join with 'and', later mentions of the ego vehicle become 'it'"""
    if not sentences:
        raise EmptyList("nothing to assemble")
    parts = [sentences[0]]
    for sentence in sentences[1:]:
        if sentence.startswith(SUBJECT + " "):
            sentence = PRONOUN + sentence[len(SUBJECT):]
        parts.append(sentence)
    return CONJUNCTION.join(parts)


@dataclass
class ExplanationReport:
    """Explanation of one fluctuation window"""
    trip_id: str
    window_index: int
    f_gen: GenerativeEvents
    sentences: List[str] = field(default_factory=list)
    final_text: str = ""
    t_start: Optional[float] = None
    t_end: Optional[float] = None
    score: Optional[int] = None
    baseline: Optional[int] = None
    delta: Optional[int] = None

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["f_gen"] = self.f_gen.to_dict()
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=str)

    def to_line(self) -> str:
        """Compact single-line record for JSON-lines output"""
        return json.dumps(self.to_dict(), sort_keys=True, default=str)

    def to_text(self) -> str:
        head = f"[{self.trip_id} #{self.window_index}]"
        if self.t_start is not None and self.t_end is not None:
            head += f" {self.t_start:.1f}-{self.t_end:.1f}s"
        if self.score is not None and self.baseline is not None:
            head += f" score {self.score} (baseline {self.baseline})"
        factors = ", ".join(f"{e.feature}={e.value}" for e in self.f_gen.events)
        return f"{head}\n  factors: {factors or '-'}\n  {self.final_text or '(no explanation)'}"

    @classmethod
    def from_dict(cls, data: Dict) -> "ExplanationReport":
        data = dict(data)
        data["f_gen"] = GenerativeEvents.from_dict(data["f_gen"])
        return cls(**data)


class Explainer:
    """Renders F_GEN into reports, the corpus index is built once"""

    def __init__(self, corpus: Optional[GuidelineCorpus] = None,
                 lexicon: Optional[AdverbLexicon] = None):
        self.corpus = corpus or GuidelineCorpus.default()
        self.lexicon = lexicon or AdverbLexicon.default()

    @classmethod
    def from_paths(cls, corpus_path: Optional[str] = None,
                   lexicon_path: Optional[str] = None) -> "Explainer":
        corpus = GuidelineCorpus.from_file(corpus_path) if corpus_path else None
        lexicon = AdverbLexicon.from_file(lexicon_path) if lexicon_path else None
        return cls(corpus, lexicon)

    def render(self, event: GenerativeEvent) -> str:
        return render_feature(event, self.corpus, self.lexicon)

    def explain(self, trip_id: str, window_index: int, f_gen: GenerativeEvents,
                fluctuation: Optional[FluctuationEvent] = None,
                t_start: Optional[float] = None, t_end: Optional[float] = None) -> ExplanationReport:
        sentences = [self.render(e) for e in f_gen.events]
        final_text = assemble_explanation(sentences) if sentences else ""
        report = ExplanationReport(trip_id=trip_id, window_index=window_index, f_gen=f_gen,
                                   sentences=sentences, final_text=final_text,
                                   t_start=t_start, t_end=t_end)
        if fluctuation is not None:
            report.score = fluctuation.current
            report.baseline = fluctuation.baseline
            report.delta = fluctuation.delta
        return report
