"""Deterministic in-process mock backends.

The mocks implement every backend role over a synthetic world of flat-color
shapes on a plain background.  Scenes are described analytically, so ground
truth (captions, boxes, masks) is exact, while the embedder, segmenter and
eraser work purely from pixel content and therefore also handle images the
scenario has never seen (e.g. generator outputs).

Everything is a pure function of (scenario, inputs): rerunning any call with
the same arguments yields bit-identical results, including under concurrent
use.
"""

from __future__ import annotations

import hashlib
import math
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from insertkit.backends.base import (
    BackendSuite,
    Captioner,
    Embedder,
    Eraser,
    Generator,
    GroundingDetector,
    ObjectProposal,
    Segmenter,
)
from insertkit.core.geometry import BBox
from insertkit.core.image import RasterImage
from insertkit.core.mask import BinaryMask
from insertkit.errors import InvalidArgument
from insertkit.seeds import derive_seed

COLOR_PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.70, 0.15),
    "blue": (0.12, 0.25, 0.85),
    "yellow": (0.90, 0.85, 0.10),
    "purple": (0.55, 0.15, 0.70),
    "orange": (0.95, 0.55, 0.10),
}

SHAPE_NAMES = ("circle", "square", "triangle")

# 3x3 placement grid, row-major.
GRID_CELLS = (
    "top left", "top center", "top right",
    "middle left", "center", "middle right",
    "bottom left", "bottom center", "bottom right",
)

DEFAULT_BACKGROUND = (0.93, 0.93, 0.90)

# Pixels diverging from the background by more than this (max over channels)
# count as foreground for the threshold segmenter and the blob analyzer.
FOREGROUND_THRESHOLD = 0.08

_MIN_BLOB_AREA = 16  # px; smaller specks are rasterization noise

_CAPTION_TEMPLATES = (
    "a {color} {shape} in the {cell}",
    "a {color} {shape} at the {cell} of the image",
    "the {color} {shape} located in the {cell}",
    "a small {color} {shape} near the {cell}",
    "one {color} {shape} occupying the {cell}",
)


def cell_center(cell: str) -> tuple[float, float]:
    idx = GRID_CELLS.index(cell)
    row, col = divmod(idx, 3)
    return ((col + 0.5) / 3.0, (row + 0.5) / 3.0)


def cell_of_point(x: float, y: float) -> str:
    col = min(2, int(x * 3.0))
    row = min(2, int(y * 3.0))
    return GRID_CELLS[row * 3 + col]


@dataclass(frozen=True)
class SceneObject:
    """One analytic shape: color/shape/cell labels plus exact placement."""

    color: str
    shape: str
    cell: str
    cx: float
    cy: float
    radius: float  # fraction of min(width, height)

    @property
    def label(self) -> str:
        return f"{self.color} {self.shape}"

    def bbox(self, width: int, height: int) -> BBox:
        """Tight analytic bounding box in normalized coordinates."""
        r = self.radius * min(width, height)
        ccx, ccy = self.cx * width, self.cy * height
        if self.shape == "triangle":
            half_w = r * math.sin(math.pi / 3.0)
            x0, x1 = ccx - half_w, ccx + half_w
            y0, y1 = ccy - r, ccy + r / 2.0
        else:
            x0, x1 = ccx - r, ccx + r
            y0, y1 = ccy - r, ccy + r
        return BBox(
            max(0.0, x0 / width),
            max(0.0, y0 / height),
            min(1.0, x1 / width),
            min(1.0, y1 / height),
        )

    def captions(self, count: int) -> tuple[str, ...]:
        if count < 1 or count > len(_CAPTION_TEMPLATES):
            raise InvalidArgument(
                f"captions per object must be in [1, {len(_CAPTION_TEMPLATES)}], got {count}"
            )
        return tuple(
            t.format(color=self.color, shape=self.shape, cell=self.cell)
            for t in _CAPTION_TEMPLATES[:count]
        )


@dataclass(frozen=True)
class SceneSpec:
    image_id: str
    width: int
    height: int
    objects: tuple[SceneObject, ...]


@dataclass(frozen=True)
class MockScenario:
    """A closed world the mock suite operates over."""

    name: str
    scenes: tuple[SceneSpec, ...]
    background: tuple[float, float, float] = DEFAULT_BACKGROUND
    captions_per_object: int = 3
    detector_noise: float = 0.0  # box corner jitter stddev at temperature 0.2
    seed: int = 0
    embed_dim: int = 32

    def scene(self, image_id: str) -> SceneSpec:
        for s in self.scenes:
            if s.image_id == image_id:
                return s
        raise InvalidArgument(f"scenario {self.name!r} has no scene {image_id!r}")


def _shape_region(obj: SceneObject, width: int, height: int) -> np.ndarray:
    """Boolean raster of the shape, evaluated at pixel centers."""
    ys = (np.arange(height, dtype=np.float64) + 0.5)[:, None]
    xs = (np.arange(width, dtype=np.float64) + 0.5)[None, :]
    r = obj.radius * min(width, height)
    ccx, ccy = obj.cx * width, obj.cy * height
    if obj.shape == "circle":
        return (xs - ccx) ** 2 + (ys - ccy) ** 2 <= r * r
    if obj.shape == "square":
        return np.maximum(np.abs(xs - ccx), np.abs(ys - ccy)) <= r
    if obj.shape == "triangle":
        sin60 = math.sin(math.pi / 3.0)
        v0 = (ccx, ccy - r)
        v1 = (ccx - r * sin60, ccy + r / 2.0)
        v2 = (ccx + r * sin60, ccy + r / 2.0)
        # y grows downward, so this vertex order winds clockwise on screen
        # and the interior sits on the negative side of every edge.
        region = np.ones((height, width), dtype=bool)
        for (ax, ay), (bx, by) in ((v0, v1), (v1, v2), (v2, v0)):
            cross = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
            region &= cross <= 0.0
        return region
    raise InvalidArgument(f"unknown shape {obj.shape!r}")


def paint_object(canvas: np.ndarray, obj: SceneObject) -> None:
    region = _shape_region(obj, canvas.shape[1], canvas.shape[0])
    canvas[region] = np.asarray(COLOR_PALETTE[obj.color], dtype=np.float32)


def render_scene(spec: SceneSpec, background: tuple[float, float, float]) -> RasterImage:
    canvas = np.empty((spec.height, spec.width, 3), dtype=np.float32)
    canvas[:] = np.asarray(background, dtype=np.float32)
    for obj in spec.objects:
        paint_object(canvas, obj)
    # Pass through uint8 so rendered images are identical to their PNG
    # round-trips (lookup by fingerprint relies on this).
    return RasterImage(RasterImage(canvas).to_uint8())


def _as_rgb(image: RasterImage) -> np.ndarray:
    if image.channels == 3:
        return image.data
    if image.channels == 1:
        return np.repeat(image.data, 3, axis=2)
    return image.data[:, :, :3]


def image_fingerprint(image: RasterImage) -> str:
    h = hashlib.sha1()
    h.update(f"{image.width}x{image.height}x{image.channels}:".encode("ascii"))
    h.update(image.to_uint8().tobytes())
    return h.hexdigest()


class _SuiteState:
    """Shared scenario state: rendered scenes, lookup tables, draw counters."""

    def __init__(self, scenario: MockScenario):
        self.scenario = scenario
        self.images: dict[str, RasterImage] = {}
        self.by_fingerprint: dict[str, SceneSpec] = {}
        for spec in scenario.scenes:
            img = render_scene(spec, scenario.background)
            self.images[spec.image_id] = img
            self.by_fingerprint[image_fingerprint(img)] = spec
        self._lock = threading.Lock()
        self._draw_counts: dict[tuple[str, str], int] = {}

    def lookup(self, image: RasterImage) -> SceneSpec | None:
        return self.by_fingerprint.get(image_fingerprint(image))

    def require_scene(self, image: RasterImage, role: str) -> SceneSpec:
        spec = self.lookup(image)
        if spec is None:
            raise InvalidArgument(
                f"mock {role} only recognizes images rendered by scenario {self.scenario.name!r}"
            )
        return spec

    def next_draw_index(self, image_id: str, phrase: str) -> int:
        with self._lock:
            key = (image_id, phrase)
            idx = self._draw_counts.get(key, 0)
            self._draw_counts[key] = idx + 1
            return idx

    def write_inputs(self, directory: str | Path) -> list[Path]:
        """Persist every scene as {image_id}.png; returns the paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for spec in self.scenario.scenes:
            p = directory / f"{spec.image_id}.png"
            self.images[spec.image_id].save_png(p)
            paths.append(p)
        return paths


class MockCaptioner(Captioner):
    identifier = "mock-captioner"

    def __init__(self, state: _SuiteState):
        self._state = state

    def describe(self, image: RasterImage) -> list[ObjectProposal]:
        spec = self._state.require_scene(image, "captioner")
        count = self._state.scenario.captions_per_object
        return [ObjectProposal(obj.label, obj.captions(count)) for obj in spec.objects]


class MockDetector(GroundingDetector):
    """Returns analytically exact boxes, optionally jittered.

    Noise scales linearly with temperature (relative to the 0.2 reference),
    so temperature 0 is exact regardless of the configured amplitude.  Each
    (image, phrase) pair has its own draw counter; draw k is a pure function
    of (scenario seed, image, phrase, k).
    """

    identifier = "mock-detector"

    def __init__(self, state: _SuiteState):
        self._state = state

    def locate(self, image: RasterImage, phrase: str, temperature: float | None = None) -> BBox | None:
        spec = self._state.require_scene(image, "detector")
        wanted = phrase.strip().lower()
        target = next((o for o in spec.objects if o.label == wanted), None)
        if target is None:
            return None
        box = target.bbox(spec.width, spec.height)
        temp = 0.2 if temperature is None else temperature
        sigma = self._state.scenario.detector_noise * (temp / 0.2)
        if sigma <= 0.0:
            return box
        draw = self._state.next_draw_index(spec.image_id, wanted)
        rng = np.random.default_rng(
            derive_seed(self._state.scenario.seed, "detector", spec.image_id, wanted, draw)
        )
        jitter = rng.normal(0.0, sigma, size=4)
        x = sorted((box.x0 + jitter[0], box.x1 + jitter[1]))
        y = sorted((box.y0 + jitter[2], box.y1 + jitter[3]))
        clip = lambda v: min(1.0, max(0.0, v))
        return BBox(clip(x[0]), clip(y[0]), clip(x[1]), clip(y[1]))


class MockSegmenter(Segmenter):
    """Threshold segmenter: foreground = pixels off the scenario background.

    Operates on content only, restricted to the query box, so it works on
    arbitrary images including generator outputs.
    """

    identifier = "mock-segmenter"

    def __init__(self, state: _SuiteState):
        self._state = state

    def segment(self, image: RasterImage, box: BBox) -> BinaryMask:
        bg = np.asarray(self._state.scenario.background, dtype=np.float32)
        data = _as_rgb(image)
        diff = np.abs(data - bg).max(axis=2)
        bits = diff > FOREGROUND_THRESHOLD
        px0, py0, px1, py1 = box.to_pixels(image.width, image.height)
        out = np.zeros_like(bits)
        out[py0:py1, px0:px1] = bits[py0:py1, px0:px1]
        return BinaryMask(out)


class MockEraser(Eraser):
    """Fills the masked region with the scenario background."""

    identifier = "mock-eraser"

    def __init__(self, state: _SuiteState):
        self._state = state

    def erase(self, image: RasterImage, mask: BinaryMask) -> RasterImage:
        if (mask.height, mask.width) != (image.height, image.width):
            raise InvalidArgument("mask dimensions must match the image")
        bg = np.asarray(self._state.scenario.background, dtype=np.float32)
        if image.channels == 1:
            fill = np.asarray([bg.mean()], dtype=np.float32)
        elif image.channels == 4:
            fill = np.concatenate([bg, [1.0]]).astype(np.float32)
        else:
            fill = bg
        out = image.data.copy()
        out[mask.bits] = fill
        return RasterImage(out)


_WORD_RE = re.compile(r"[a-z0-9]+")


class MockEmbedder(Embedder):
    """Bag-of-words embedding over a seeded random word basis.

    Texts are tokenized to lowercase words; images are reduced to words by
    blob analysis (nearest palette color, fill-ratio shape class, grid cell
    of the centroid).  Both sides then share the same word-vector sum, which
    makes cosine scores behave like a crude CLIP: images score higher
    against texts that mention their objects.
    """

    identifier = "mock-embedder"

    def __init__(self, state: _SuiteState):
        self._state = state
        self.dim = state.scenario.embed_dim
        self._cache: dict[str, np.ndarray] = {}
        self._cache_lock = threading.Lock()

    def _word_vector(self, word: str) -> np.ndarray:
        with self._cache_lock:
            vec = self._cache.get(word)
            if vec is None:
                rng = np.random.default_rng(
                    derive_seed(self._state.scenario.seed, "embed-word", word)
                )
                vec = rng.normal(0.0, 1.0, size=self.dim)
                vec /= np.linalg.norm(vec)
                vec.setflags(write=False)
                self._cache[word] = vec
            return vec

    def _combine(self, words: list[str]) -> np.ndarray:
        if not words:
            return self._word_vector("")
        total = np.zeros(self.dim, dtype=np.float64)
        for w in words:
            total += self._word_vector(w)
        norm = np.linalg.norm(total)
        if norm < 1e-12:
            return self._word_vector("")
        return total / norm

    def embed_text(self, text: str) -> np.ndarray:
        return self._combine(_WORD_RE.findall(text.lower()))

    def embed_image(self, image: RasterImage) -> np.ndarray:
        words: list[str] = []
        for color, shape, cell in analyze_blobs(image, self._state.scenario.background):
            words.extend([color, shape])
            words.extend(cell.split())
        return self._combine(words)


def analyze_blobs(
    image: RasterImage, background: tuple[float, float, float]
) -> list[tuple[str, str, str]]:
    """Detect flat-color blobs and classify (color, shape, cell) for each.

    Shape comes from the fill ratio of the blob inside its bounding box:
    squares fill ~1.0, circles ~pi/4, triangles ~0.5.
    """
    bg = np.asarray(background, dtype=np.float32)
    data = _as_rgb(image)
    diff = np.abs(data - bg).max(axis=2)
    fg = diff > FOREGROUND_THRESHOLD
    labels, count = ndimage.label(fg, structure=np.ones((3, 3), dtype=bool))
    found = []
    palette_names = list(COLOR_PALETTE)
    palette = np.asarray([COLOR_PALETTE[n] for n in palette_names], dtype=np.float32)
    for idx in range(1, count + 1):
        ys, xs = np.nonzero(labels == idx)
        area = ys.size
        if area < _MIN_BLOB_AREA:
            continue
        mean_color = data[ys, xs].mean(axis=0)
        color = palette_names[int(np.argmin(((palette - mean_color) ** 2).sum(axis=1)))]
        box_area = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
        fill = area / box_area
        if fill >= 0.89:
            shape = "square"
        elif fill <= 0.64:
            shape = "triangle"
        else:
            shape = "circle"
        cy = (ys.mean() + 0.5) / image.height
        cx = (xs.mean() + 0.5) / image.width
        found.append(((cy, cx), (color, shape, cell_of_point(cx, cy))))
    found.sort(key=lambda item: item[0])
    return [words for _, words in found]


class MockGenerator(Generator):
    """Paints the requested shape onto the source image.

    The instruction is scanned for a palette color, a shape name and a grid
    cell; missing parts fall back to a gray circle at a seeded random
    position.  Candidate i is a pure function of (image, instruction,
    seed + i): position and size jitter derive from seed + i alone.
    """

    identifier = "mock-generator"

    def __init__(self, state: _SuiteState):
        self._state = state

    def edit(self, image: RasterImage, instruction: str, n: int = 1, seed: int = 0) -> list[RasterImage]:
        if n < 1:
            raise InvalidArgument(f"candidate count must be >= 1, got {n}")
        color, shape, cell = parse_insertion_phrase(instruction)
        out = []
        for i in range(n):
            rng = np.random.default_rng(derive_seed(seed + i, "mock-generator"))
            if cell is not None:
                cx, cy = cell_center(cell)
                cx += rng.uniform(-0.05, 0.05)
                cy += rng.uniform(-0.05, 0.05)
            else:
                cx = rng.uniform(0.15, 0.85)
                cy = rng.uniform(0.15, 0.85)
            radius = rng.uniform(0.08, 0.12)
            obj = SceneObject(
                color=color or "gray",
                shape=shape or "circle",
                cell=cell or cell_of_point(cx, cy),
                cx=cx,
                cy=cy,
                radius=radius,
            )
            canvas = image.data.astype(np.float32).copy()
            if canvas.shape[2] == 1:
                canvas = np.repeat(canvas, 3, axis=2)
            region = _shape_region(obj, canvas.shape[1], canvas.shape[0])
            rgb = COLOR_PALETTE.get(obj.color, (0.5, 0.5, 0.5))
            canvas[region] = np.asarray(rgb, dtype=np.float32)
            out.append(RasterImage(RasterImage(canvas).to_uint8()))
        return out


def parse_insertion_phrase(text: str) -> tuple[str | None, str | None, str | None]:
    """Extract (color, shape, cell) mentions from an instruction."""
    lowered = text.lower()
    words = set(_WORD_RE.findall(lowered))
    color = next((c for c in COLOR_PALETTE if c in words), None)
    shape = next((s for s in SHAPE_NAMES if s in words), None)
    cell = None
    for name in sorted(GRID_CELLS, key=len, reverse=True):
        if name in lowered:
            cell = name
            break
    return color, shape, cell


class IdentityGenerator(Generator):
    """Returns the input unchanged; handy for wiring and determinism tests."""

    identifier = "identity-generator"

    def edit(self, image: RasterImage, instruction: str, n: int = 1, seed: int = 0) -> list[RasterImage]:
        if n < 1:
            raise InvalidArgument(f"candidate count must be >= 1, got {n}")
        return [image] * n


def shapes_scenario(
    name: str = "shapes",
    *,
    num_images: int = 20,
    objects_per_image: int = 2,
    captions_per_object: int = 3,
    size: int = 64,
    seed: int = 0,
    detector_noise: float = 0.0,
    background: tuple[float, float, float] = DEFAULT_BACKGROUND,
    combos: list[tuple[str, str]] | None = None,
    empty_scenes: int = 0,
    embed_dim: int = 32,
) -> MockScenario:
    """Procedurally build a scenario of shape scenes.

    ``combos`` restricts the (color, shape) pairs in play; by default the
    full palette x shape product is available.  Each scene draws distinct
    cells and distinct combos, so subject labels are unambiguous per image.
    """
    if num_images < 1 or objects_per_image < 1:
        raise InvalidArgument("need at least one image and one object per image")
    if objects_per_image > len(GRID_CELLS):
        raise InvalidArgument(f"at most {len(GRID_CELLS)} objects per image")
    pool = combos if combos is not None else [
        (c, s) for c in COLOR_PALETTE for s in SHAPE_NAMES
    ]
    if objects_per_image > len(pool):
        raise InvalidArgument("not enough (color, shape) combos for objects_per_image")
    rng = np.random.default_rng(derive_seed(seed, "scenario", name))
    scenes = []
    for idx in range(num_images):
        scene_objects = []
        if idx >= num_images - empty_scenes:
            scenes.append(SceneSpec(f"img{idx:04d}", size, size, ()))
            continue
        cells = rng.choice(len(GRID_CELLS), size=objects_per_image, replace=False)
        picks = rng.choice(len(pool), size=objects_per_image, replace=False)
        for cell_idx, pick in zip(cells, picks):
            color, shape = pool[int(pick)]
            cell = GRID_CELLS[int(cell_idx)]
            cx, cy = cell_center(cell)
            scene_objects.append(
                SceneObject(
                    color=color,
                    shape=shape,
                    cell=cell,
                    cx=cx + rng.uniform(-0.02, 0.02),
                    cy=cy + rng.uniform(-0.02, 0.02),
                    radius=rng.uniform(0.07, 0.11),
                )
            )
        scenes.append(SceneSpec(f"img{idx:04d}", size, size, tuple(scene_objects)))
    return MockScenario(
        name=name,
        scenes=tuple(scenes),
        background=background,
        captions_per_object=captions_per_object,
        detector_noise=detector_noise,
        seed=seed,
        embed_dim=embed_dim,
    )


SCENARIOS: dict[str, Callable[[], MockScenario]] = {}


def _register_defaults() -> None:
    SCENARIOS.update(
        {
            "shapes-small": lambda: shapes_scenario("shapes-small", num_images=20),
            "shapes-noisy": lambda: shapes_scenario(
                "shapes-noisy", num_images=20, detector_noise=0.05
            ),
            "shapes-sparse": lambda: shapes_scenario(
                "shapes-sparse", num_images=12, objects_per_image=1, empty_scenes=2
            ),
        }
    )


_register_defaults()


@dataclass
class MockSuite(BackendSuite):
    """BackendSuite plus scenario helpers the tests lean on."""

    state: _SuiteState = field(default=None, repr=False)  # type: ignore[assignment]

    def write_inputs(self, directory: str | Path) -> list[Path]:
        return self.state.write_inputs(directory)

    def scene_image(self, image_id: str) -> RasterImage:
        return self.state.images[image_id]

    @property
    def scenario(self) -> MockScenario:
        return self.state.scenario


def mock_suite(scenario: MockScenario | str) -> MockSuite:
    """Build the full backend suite for a scenario (or registered name)."""
    if isinstance(scenario, str):
        factory = SCENARIOS.get(scenario)
        if factory is None:
            raise InvalidArgument(
                f"unknown mock scenario {scenario!r}; known: {sorted(SCENARIOS)}"
            )
        scenario = factory()
    if not isinstance(scenario, MockScenario):
        raise InvalidArgument(f"expected MockScenario or name, got {type(scenario).__name__}")
    state = _SuiteState(scenario)
    return MockSuite(
        captioner=MockCaptioner(state),
        detector=MockDetector(state),
        segmenter=MockSegmenter(state),
        eraser=MockEraser(state),
        embedder=MockEmbedder(state),
        generator=MockGenerator(state),
        state=state,
    )
