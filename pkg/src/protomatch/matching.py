"""Similarity scoring: plain inner product and text-adaptive max over prototypes.

A text matches a video through whichever of the video's K+1 embedded
prototypes it is most similar to.  The winning prototype index is recorded
per (text, video) pair, and the backward pass routes the upstream gradient
only through that winning row (the subgradient of max).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError, ValidationError


@dataclass(eq=False)
class SimilarityMatrix:
    """Scores for every (text, video) pair plus the winning prototype index."""

    scores: np.ndarray  # (n_texts, n_videos) float64
    winners: np.ndarray  # (n_texts, n_videos) int64, values in [0, K]


def base_similarity(text_embedded: np.ndarray, video_embedded: np.ndarray) -> float:
    """Inner product of two joint-space unit vectors."""
    if text_embedded.shape != video_embedded.shape or text_embedded.ndim != 1:
        raise ShapeError(
            f"similarity needs two equal-length vectors, got {text_embedded.shape} "
            f"and {video_embedded.shape}"
        )
    return float(np.dot(text_embedded, video_embedded))


def tmvm_similarity(text_embedded: np.ndarray, prototypes: np.ndarray) -> tuple[float, int]:
    """Max inner product over a video's (K+1, embed_dim) prototype rows.

    Returns (score, winner index).  Ties break toward the lowest index.
    Each row score is computed with the same dot kernel base_similarity
    uses, so a single-row prototype set reduces to it bit-for-bit.
    """
    if prototypes.ndim != 2 or prototypes.shape[0] == 0:
        raise ValidationError(f"prototype set must be a non-empty matrix, got {prototypes.shape}")
    if text_embedded.shape != (prototypes.shape[1],):
        raise ShapeError(
            f"text vector {text_embedded.shape} does not conform with prototypes {prototypes.shape}"
        )
    scores = np.array([np.dot(text_embedded, row) for row in prototypes])
    winner = int(np.argmax(scores))
    return float(scores[winner]), winner


def similarity_matrix(text_embedded: np.ndarray, video_embedded: np.ndarray) -> SimilarityMatrix:
    """All-pairs max-over-prototypes scores.

    text_embedded: (n_texts, embed_dim) unit rows.
    video_embedded: (n_videos, K+1, embed_dim) unit rows per video.
    """
    if (
        text_embedded.ndim != 2
        or video_embedded.ndim != 3
        or text_embedded.shape[1] != video_embedded.shape[2]
    ):
        raise ShapeError(
            f"text embeddings {text_embedded.shape} do not conform with video "
            f"prototype stack {video_embedded.shape}"
        )
    per_proto = np.einsum("td,vkd->tvk", text_embedded, video_embedded)
    winners = per_proto.argmax(axis=2)
    scores = np.take_along_axis(per_proto, winners[:, :, None], axis=2)[:, :, 0]
    return SimilarityMatrix(scores, winners.astype(np.int64))


def similarity_vjp(
    grad_scores: np.ndarray,
    text_embedded: np.ndarray,
    video_embedded: np.ndarray,
    winners: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward of similarity_matrix.

    The gradient for pair (t, v) flows into text row t and into the single
    winning prototype row of video v recorded in winners.  Returns
    (grad_text_embedded, grad_video_embedded).
    """
    n_texts, n_videos = grad_scores.shape
    if text_embedded.shape[0] != n_texts or video_embedded.shape[0] != n_videos:
        raise ShapeError(
            f"grad {grad_scores.shape} does not conform with {text_embedded.shape} "
            f"texts and {video_embedded.shape} videos"
        )
    video_index = np.broadcast_to(np.arange(n_videos), (n_texts, n_videos))
    # winning_rows[t, v, :] is the prototype that produced scores[t, v]
    winning_rows = video_embedded[video_index, winners]  # (T, V, D_e)
    grad_text = np.einsum("tv,tvd->td", grad_scores, winning_rows)
    grad_video = np.zeros_like(video_embedded)
    contrib = grad_scores[:, :, None] * text_embedded[:, None, :]  # (T, V, D_e)
    np.add.at(grad_video, (video_index, winners), contrib)
    return grad_text, grad_video


def save_similarity_csv(
    path: str | Path,
    matrix: SimilarityMatrix,
    text_ids: list[str],
    video_ids: list[str],
) -> None:
    """Scores as CSV: header of video ids, one row per text id, full precision."""
    n_texts, n_videos = matrix.scores.shape
    if len(text_ids) != n_texts or len(video_ids) != n_videos:
        raise ValidationError(
            f"id lists ({len(text_ids)} texts, {len(video_ids)} videos) do not match "
            f"matrix shape {matrix.scores.shape}"
        )
    lines = ["text_id," + ",".join(video_ids)]
    for i, tid in enumerate(text_ids):
        lines.append(tid + "," + ",".join(repr(float(v)) for v in matrix.scores[i]))
    Path(path).write_text("\n".join(lines) + "\n")
