"""
News catalog and behavior log IO

Catalog TSV: `news_id<TAB>title`, one article per line.
Behavior TSV: `user_id<TAB>unix_ts<TAB>hist_id,hist_id,...<TAB>cand-1 cand-0 ...`,
one impression per line; the history column lists the user's clicks
before the impression, oldest first.
"""

import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from ..core.errors import DataError, ParseError
from ..nn.rng import RngState
from ..utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass(frozen=True)
class NewsArticle:
    news_id: str
    words: Tuple[str, ...]
    token_ids: Tuple[int, ...]


@dataclass
class Catalog:
    articles: Dict[str, NewsArticle] = field(default_factory=dict)
    vocabulary: Dict[str, int] = field(default_factory=dict)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def __len__(self) -> int:
        return len(self.articles)

    def __contains__(self, news_id: str) -> bool:
        return news_id in self.articles

    def news_ids(self) -> List[str]:
        return list(self.articles)

    def title(self, news_id: str) -> Tuple[int, ...]:
        article = self.articles.get(news_id)
        if article is None:
            raise DataError(f"unknown news id '{news_id}'")
        return article.token_ids

    def add(self, news_id: str, raw_title: str, title_len: int) -> NewsArticle:
        """Lowercase, split on whitespace, keep the first title_len words, extend the vocabulary."""
        if news_id in self.articles:
            raise DataError(f"duplicate news id '{news_id}'")
        words = tuple(raw_title.lower().split()[:title_len])
        if not words:
            raise DataError(f"news '{news_id}' has an empty title")
        token_ids = []
        for word in words:
            if word not in self.vocabulary:
                self.vocabulary[word] = len(self.vocabulary)
            token_ids.append(self.vocabulary[word])
        article = NewsArticle(news_id=news_id, words=words, token_ids=tuple(token_ids))
        self.articles[news_id] = article
        return article


@dataclass(frozen=True)
class Impression:
    user_id: str
    timestamp: int
    history: Tuple[str, ...]
    candidates: Tuple[Tuple[str, bool], ...]
    index: int = 0

    @property
    def clicked(self) -> List[str]:
        return [news_id for news_id, label in self.candidates if label]

    @property
    def non_clicked(self) -> List[str]:
        return [news_id for news_id, label in self.candidates if not label]

    @property
    def labels(self) -> List[int]:
        return [1 if label else 0 for _, label in self.candidates]


def load_catalog(path: str, title_len: int = 30) -> Catalog:
    if not os.path.exists(path):
        raise DataError(f"catalog file not found: {path}")
    catalog = Catalog()
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            columns = line.split("\t")
            if len(columns) != 2:
                raise ParseError(f"expected 2 tab-separated columns, found {len(columns)}", line_number, path)
            news_id = columns[0].strip()
            if not news_id:
                raise ParseError("empty news id", line_number, path)
            try:
                catalog.add(news_id, columns[1], title_len)
            except DataError as e:
                raise DataError(f"{path}:{line_number}: {e}") from e

    logger.info(
        f"Loaded {len(catalog)} news articles",
        extra={"event_type": "data.loaded", "path": path, "news": len(catalog), "vocab_size": catalog.vocab_size}
    )
    return catalog


def write_catalog(catalog: Catalog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for article in catalog.articles.values():
            handle.write(f"{article.news_id}\t{' '.join(article.words)}\n")


def _parse_candidates(column: str, line_number: int, path: str) -> List[Tuple[str, bool]]:
    candidates = []
    for token in column.split():
        news_id, sep, label = token.rpartition("-")
        if not sep or not news_id or label not in ("0", "1"):
            raise ParseError(f"candidate '{token}' is not of the form newsid-0 / newsid-1", line_number, path)
        candidates.append((news_id, label == "1"))
    if not candidates:
        raise ParseError("impression has no candidates", line_number, path)
    return candidates


def _pad_negatives(
    candidates: List[Tuple[str, bool]], history: Sequence[str], catalog: Catalog, count: int, rng: RngState
) -> List[Tuple[str, bool]]:
    excluded = set(history) | {news_id for news_id, _ in candidates}
    pool = [news_id for news_id in catalog.news_ids() if news_id not in excluded]
    if not pool:
        return candidates
    chosen = rng.generator().choice(len(pool), size=min(count, len(pool)), replace=False)
    return candidates + [(pool[int(i)], False) for i in chosen]


def load_behaviors(
    path: str,
    catalog: Catalog,
    history_len: int = 50,
    test_negatives: int = 0,
    rng: Optional[RngState] = None,
) -> List[Impression]:
    """Parse a behavior TSV into impressions with histories capped to the most recent history_len clicks.

    With test_negatives > 0, impressions without any non-clicked candidate are
    padded with that many catalog news the user neither clicked nor saw.
    """
    if not os.path.exists(path):
        raise DataError(f"behavior file not found: {path}")
    if test_negatives and rng is None:
        raise DataError("test_negatives needs an rng")

    impressions: List[Impression] = []
    last_seen: Dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            columns = line.split("\t")
            if len(columns) != 4:
                raise ParseError(f"expected 4 tab-separated columns, found {len(columns)}", line_number, path)
            user_id, raw_ts, raw_history, raw_candidates = columns
            user_id = user_id.strip()
            if not user_id:
                raise ParseError("empty user id", line_number, path)
            try:
                timestamp = int(raw_ts)
            except ValueError:
                raise ParseError(f"timestamp '{raw_ts}' is not an integer", line_number, path)

            history = [h.strip() for h in raw_history.split(",") if h.strip()]
            candidates = _parse_candidates(raw_candidates, line_number, path)

            for news_id in history + [c for c, _ in candidates]:
                if news_id not in catalog:
                    raise DataError(f"{path}:{line_number}: unknown news id '{news_id}'")
            if user_id in last_seen and timestamp < last_seen[user_id]:
                raise DataError(
                    f"{path}:{line_number}: timestamp {timestamp} of user '{user_id}' precedes "
                    f"an earlier impression at {last_seen[user_id]}"
                )
            last_seen[user_id] = timestamp
            leaked = set(history) & {news_id for news_id, label in candidates if label}
            if leaked:
                raise DataError(
                    f"{path}:{line_number}: history already contains clicked candidates {sorted(leaked)}"
                )

            if test_negatives and not any(not label for _, label in candidates):
                candidates = _pad_negatives(
                    candidates, history, catalog, test_negatives, rng.split(len(impressions))
                )

            impressions.append(Impression(
                user_id=user_id,
                timestamp=timestamp,
                history=tuple(history[-history_len:]),
                candidates=tuple(candidates),
                index=len(impressions),
            ))

    logger.info(
        f"Loaded {len(impressions)} impressions",
        extra={"event_type": "data.loaded", "path": path, "impressions": len(impressions), "users": len(last_seen)}
    )
    return impressions


def write_behaviors(impressions: Iterable[Impression], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for imp in impressions:
            candidates = " ".join(f"{news_id}-{1 if label else 0}" for news_id, label in imp.candidates)
            handle.write(f"{imp.user_id}\t{imp.timestamp}\t{','.join(imp.history)}\t{candidates}\n")
