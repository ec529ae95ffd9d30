"""Step-by-step image composition.

Three strategies over a background image and an ordered instruction list:

  iterative_insert  one candidate per step, chained
  beam_search       k surviving beams, N candidates each, scored by cosine
                    similarity between the candidate image embedding and the
                    cumulative prompt (instructions so far joined with ", ")
  oneshot_baseline  matched-budget baseline: k*N*t generations straight from
                    the cumulative prompt with an all-zero source image

Determinism: all randomness flows from the caller's base seed through
derive_seed, and candidate i of a generator call uses seed + i, so any
candidate can be regenerated in isolation.  Ties in top-k selection break
toward the lower candidate creation index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from insertkit.backends.base import Embedder, Generator
from insertkit.core.image import RasterImage
from insertkit.errors import CompositionError, InvalidArgument
from insertkit.seeds import derive_seed

CUMULATIVE_JOIN = ", "


@dataclass(frozen=True)
class EditPlan:
    """A background plus the ordered edits to apply to it."""

    background: RasterImage
    instructions: tuple[str, ...]

    def __post_init__(self):
        instructions = tuple(self.instructions)
        if not instructions:
            raise InvalidArgument("plan needs at least one instruction")
        if any(not i or not i.strip() for i in instructions):
            raise InvalidArgument("instructions must be nonempty")
        object.__setattr__(self, "instructions", instructions)

    def cumulative_prompt(self, step_index: int) -> str:
        """Instructions 0..step_index inclusive, joined with ', '."""
        if not 0 <= step_index < len(self.instructions):
            raise InvalidArgument(
                f"step_index must be in [0, {len(self.instructions) - 1}], got {step_index}"
            )
        return CUMULATIVE_JOIN.join(self.instructions[: step_index + 1])


@dataclass(frozen=True)
class Beam:
    """One live search state: an image and how it was reached."""

    image: RasterImage
    step_index: int
    history: tuple[int, ...]  # chosen candidate index per completed step
    score: float

    def __post_init__(self):
        if len(self.history) != self.step_index:
            raise InvalidArgument(
                f"history length {len(self.history)} != step_index {self.step_index}"
            )
        if not np.isfinite(self.score):
            raise InvalidArgument("beam score must be finite")


@dataclass(frozen=True)
class CandidateRecord:
    """One scored candidate inside a beam step."""

    index: int  # creation order within the step; the tie-break key
    parent_beam: int
    parent_history: tuple[int, ...]
    seed: int
    score: float
    image: RasterImage


@dataclass(frozen=True)
class BeamStepTrace:
    step_index: int
    instruction: str
    cumulative_prompt: str
    candidates: tuple[CandidateRecord, ...]
    survivor_indices: tuple[int, ...]


@dataclass
class BeamTrace:
    """Everything the search saw, step by step, plus the winner."""

    plan_instructions: tuple[str, ...]
    k: int
    n: int
    seed: int
    steps: list[BeamStepTrace] = field(default_factory=list)
    final: Beam | None = None


def clip_score(image: RasterImage, text: str, embedder: Embedder) -> float:
    """Cosine similarity of the unit-normalized image and text embeddings."""
    return _cosine(
        np.asarray(embedder.embed_image(image), dtype=np.float64),
        np.asarray(embedder.embed_text(text), dtype=np.float64),
    )


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a < 1e-12 or norm_b < 1e-12:
        return 0.0
    return float(np.dot(a / norm_a, b / norm_b))


def iterative_insert(
    plan: EditPlan,
    generator: Generator,
    seed: int = 0,
    step_seeds: Sequence[int] | None = None,
) -> list[RasterImage]:
    """Applies the plan one instruction at a time, single candidate per step.

    Returns [background, image_1, ..., image_n].  Step t uses a seed derived
    from the base seed, or ``step_seeds[t]`` verbatim when given — that is
    the replay path: committing candidate i of a step that ran with seed s
    is reproduced by replaying with step seed s + i.
    """
    if step_seeds is not None and len(step_seeds) != len(plan.instructions):
        raise InvalidArgument(
            f"step_seeds must have one entry per instruction "
            f"({len(plan.instructions)}), got {len(step_seeds)}"
        )
    images = [plan.background]
    for t, instruction in enumerate(plan.instructions):
        step_seed = (
            int(step_seeds[t]) if step_seeds is not None
            else derive_seed(seed, "insert", t)
        )
        try:
            candidates = generator.edit(images[-1], instruction, 1, step_seed)
        except Exception as exc:
            raise CompositionError(
                f"generation failed at step {t}: {exc}",
                step_index=t,
                completed=tuple(images),
            ) from exc
        if not candidates:
            raise CompositionError(
                f"generator returned no candidates at step {t}",
                step_index=t,
                completed=tuple(images),
            )
        images.append(candidates[0])
    return images


def beam_search(
    plan: EditPlan,
    generator: Generator,
    embedder: Embedder,
    k: int = 3,
    n: int = 4,
    seed: int = 0,
) -> BeamTrace:
    """Beam search over candidate insertions, scored against the cumulative
    prompt.  Step 0 starts from the single background beam; every later step
    expands each surviving beam with n candidates, so it scores
    len(survivors) * n images.  The top k by score survive, ties breaking
    toward the lower candidate creation index."""
    if k < 1 or n < 1:
        raise InvalidArgument(f"k and n must be >= 1, got k={k}, n={n}")
    trace = BeamTrace(plan_instructions=plan.instructions, k=k, n=n, seed=seed)
    beams = [Beam(image=plan.background, step_index=0, history=(), score=0.0)]

    for t, instruction in enumerate(plan.instructions):
        prompt = plan.cumulative_prompt(t)
        candidates: list[CandidateRecord] = []
        for beam_idx, beam in enumerate(beams):
            step_seed = derive_seed(seed, "beam", t, beam_idx)
            try:
                images = generator.edit(beam.image, instruction, n, step_seed)
            except Exception as exc:
                raise CompositionError(
                    f"generation failed at step {t} (beam {beam_idx}): {exc}",
                    step_index=t,
                    completed=tuple(b.image for b in beams),
                ) from exc
            for i, image in enumerate(images):
                try:
                    score = clip_score(image, prompt, embedder)
                except Exception as exc:
                    raise CompositionError(
                        f"scoring failed at step {t} (beam {beam_idx}): {exc}",
                        step_index=t,
                        completed=tuple(b.image for b in beams),
                    ) from exc
                candidates.append(
                    CandidateRecord(
                        index=len(candidates),
                        parent_beam=beam_idx,
                        parent_history=beam.history,
                        seed=step_seed + i,
                        score=score,
                        image=image,
                    )
                )

        order = sorted(candidates, key=lambda c: (-c.score, c.index))
        survivors = order[:k]
        trace.steps.append(
            BeamStepTrace(
                step_index=t,
                instruction=instruction,
                cumulative_prompt=prompt,
                candidates=tuple(candidates),
                survivor_indices=tuple(c.index for c in survivors),
            )
        )
        beams = [
            Beam(
                image=c.image,
                step_index=t + 1,
                history=c.parent_history + (c.index,),
                score=c.score,
            )
            for c in survivors
        ]

    trace.final = beams[0]
    return trace


def oneshot_baseline(
    plan: EditPlan,
    t: int,
    generator: Generator,
    embedder: Embedder,
    k: int = 3,
    n: int = 4,
    seed: int = 0,
) -> RasterImage:
    """Matched-budget baseline: k*n*t generations of the first t instructions
    as one cumulative prompt, from an all-zero source image (pure text
    conditioning), returning the highest-scoring image (ties: lowest index).

    ``t`` counts steps, starting at 1: t=2 covers instructions[0] and [1].
    """
    if not 1 <= t <= len(plan.instructions):
        raise InvalidArgument(
            f"t must be in [1, {len(plan.instructions)}], got {t}"
        )
    if k < 1 or n < 1:
        raise InvalidArgument(f"k and n must be >= 1, got k={k}, n={n}")
    prompt = plan.cumulative_prompt(t - 1)
    budget = k * n * t
    blank = RasterImage.zeros(
        plan.background.width, plan.background.height, plan.background.channels
    )
    try:
        images = generator.edit(blank, prompt, budget, derive_seed(seed, "oneshot"))
    except Exception as exc:
        raise CompositionError(
            f"one-shot generation failed: {exc}", step_index=0
        ) from exc
    if len(images) != budget:
        raise CompositionError(
            f"generator returned {len(images)} images for budget {budget}",
            step_index=0,
        )
    scores = [clip_score(image, prompt, embedder) for image in images]
    best = max(range(budget), key=lambda i: (scores[i], -i))
    return images[best]


def write_beam_trace(trace: BeamTrace, out_dir: str | Path) -> Path:
    """Persists a trace as trace.json plus one PNG per candidate.

    Layout: images/step{t}_cand{i}.png, background.png; the JSON references
    those relative paths so the document is self-contained and portable.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    doc = {
        "instructions": list(trace.plan_instructions),
        "k": trace.k,
        "n": trace.n,
        "seed": trace.seed,
        "steps": [],
    }
    for step in trace.steps:
        step_doc = {
            "step_index": step.step_index,
            "instruction": step.instruction,
            "cumulative_prompt": step.cumulative_prompt,
            "survivor_indices": list(step.survivor_indices),
            "candidates": [],
        }
        for cand in step.candidates:
            rel = f"images/step{step.step_index:02d}_cand{cand.index:02d}.png"
            cand.image.save_png(out_dir / rel)
            step_doc["candidates"].append(
                {
                    "index": cand.index,
                    "parent_beam": cand.parent_beam,
                    "parent_history": list(cand.parent_history),
                    "seed": cand.seed,
                    "score": cand.score,
                    "path": rel,
                }
            )
        doc["steps"].append(step_doc)

    if trace.final is not None:
        final_rel = "images/final.png"
        trace.final.image.save_png(out_dir / final_rel)
        doc["final"] = {
            "path": final_rel,
            "score": trace.final.score,
            "history": list(trace.final.history),
            "step_index": trace.final.step_index,
        }

    trace_path = out_dir / "trace.json"
    trace_path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return trace_path
