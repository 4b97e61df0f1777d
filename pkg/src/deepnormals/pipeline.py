"""End-to-end data preparation, training, prediction and the ablation study."""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field

import numpy as np

from .coding import LayoutCodebook, NormalCodebook
from .coding.layouts import GRID
from .fusion import (OPTIONAL, FeatureStack, assemble, coarse_to_map, fuse_predict,
                     fusion_distributions)
from .geometry import resize_nearest, sample_grid
from .metrics import evaluate
from .networks.estimators import (BaselineRegressionNetwork, BottomUpNetwork, FusionNetwork, TopDownNetwork,
                                  infer_topdown, preprocess_image, resize_image)
from .networks.sliding import MARGIN, infer_sliding, pad_edges
from .normalmap import NormalMap
from .scenegen.patches import center_offset, patch_at, window_positions
from .scenegen.render import SceneConfig, generate_scene, render_layout, sample_camera

ABLATION_ROWS = ("Top-down", "Bottom-up", "Fusion", "+Layout", "+Edge", "+VP", "Full", "Full(Soft)")
FUSION_VARIANTS = {
    "Fusion": (),
    "+Layout": ("layout",),
    "+Edge": ("edge",),
    "+VP": ("vp",),
    "Full": OPTIONAL,
}


def sub_seed(root: int, name: str) -> int:
    """Deterministic named child seed of ``root``."""
    return int(np.random.SeedSequence([int(root), zlib.crc32(name.encode())]).generate_state(1)[0])


def scene_seeds(root: int, split: str, count: int) -> list[int]:
    base = sub_seed(root, f"scenes.{split}")
    return [int(np.random.SeedSequence([base, i]).generate_state(1)[0]) for i in range(count)]


def generate_split(cfg: SceneConfig, root_seed: int, split: str, count: int):
    return [generate_scene(cfg, s) for s in scene_seeds(root_seed, split, count)]


# --- codebooks -------------------------------------------------------------

def normal_samples(samples, per_scene: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        n = s.normals.normals[s.normals.valid].astype(np.float64)
        idx = rng.choice(len(n), size=min(per_scene, len(n)), replace=False)
        out.append(n[idx])
    x = np.concatenate(out)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def layout_grid(layout: NormalMap) -> np.ndarray:
    return sample_grid(layout.normals.astype(np.float64), GRID)


def layout_corpus(samples, cfg: SceneConfig, extra: int, seed: int) -> np.ndarray:
    """Layouts of the given scenes plus ``extra`` freshly drawn empty-room poses."""
    maps = [layout_grid(s.layout_gt) for s in samples]
    rng = np.random.default_rng(seed)
    for _ in range(extra):
        room = rng.uniform(cfg.room_min, cfg.room_max)
        cam = sample_camera(rng, cfg, room, [])
        maps.append(layout_grid(render_layout(room, cam, cfg.height, cfg.width)))
    return np.stack(maps)


@dataclass
class Codebooks:
    coarse: NormalCodebook
    local: NormalCodebook
    layout: LayoutCodebook


def build_codebooks(samples, cfg: SceneConfig, k_t: int, k_b: int, k_l: int, seed: int,
                    corpus_size: int = 0, normals_per_scene: int = 500) -> Codebooks:
    x = normal_samples(samples, normals_per_scene, sub_seed(seed, "codebook.samples"))
    coarse = NormalCodebook(k_t, random_state=sub_seed(seed, "codebook.coarse")).fit(x)
    local = NormalCodebook(k_b, random_state=sub_seed(seed, "codebook.local")).fit(x)
    extra = max(0, corpus_size - len(samples))
    corpus = layout_corpus(samples, cfg, extra, sub_seed(seed, "codebook.corpus"))
    layout = LayoutCodebook(k_l, random_state=sub_seed(seed, "codebook.layout")).fit(corpus)
    return Codebooks(coarse, local, layout)


def encode_layouts(samples, lcb: LayoutCodebook) -> np.ndarray:
    return lcb.predict(np.stack([layout_grid(s.layout_gt) for s in samples]))


# --- training arrays ---------------------------------------------------------

def topdown_arrays(samples, cb: NormalCodebook, lcb: LayoutCodebook):
    """(images 55x55, coarse labels, coarse valid, layout classes)."""
    X = np.stack([resize_image(s.image) for s in samples])
    grids = [sample_grid(s.normals.normals.astype(np.float64), GRID) for s in samples]
    y = np.stack([cb.predict(g) for g in grids])
    valid = np.stack([sample_grid(s.normals.valid, GRID) for s in samples])
    layouts = np.array([s.layout_class if s.layout_class >= 0 else -1 for s in samples])
    missing = layouts < 0
    if missing.any():
        layouts[missing] = encode_layouts([s for s, m in zip(samples, missing) if m], lcb)
    return X, y, valid, layouts


def bottomup_arrays(samples, cb: NormalCodebook, per_scene: int, seed: int):
    """Random training windows: (patches, centre labels, centre valid, centre edges).

    Windows are cut from the edge-padded image, matching sliding inference.
    """
    rng = np.random.default_rng(seed)
    X, y, valid, edges = [], [], [], []
    for s in samples:
        padded = pad_edges(s.image, MARGIN)
        for r, c in window_positions(rng, *s.shape, per_scene, pad=MARGIN):
            img, lab, val, edge = patch_at(s, cb, int(r), int(c), pad=MARGIN, padded_image=padded)
            X.append(img)
            y.append(lab)
            valid.append(val)
            edges.append(edge)
    return np.stack(X), np.stack(y), np.stack(valid), np.array(edges)


def fusion_arrays(samples, stacks, cb: NormalCodebook, per_scene: int, seed: int):
    """Random 55x55x18 windows of the edge-padded feature stacks with centre labels."""
    rng = np.random.default_rng(seed)
    o = center_offset() - MARGIN
    X, y, valid = [], [], []
    for s, st in zip(samples, stacks):
        data = pad_edges(st.data, MARGIN)
        for r, c in window_positions(rng, *s.shape, per_scene, pad=MARGIN):
            r, c = int(r), int(c)
            X.append(data[r:r + 55, c:c + 55])
            sl = np.s_[r + o:r + o + 13, c + o:c + o + 13]
            y.append(cb.predict(s.normals.normals[sl]))
            valid.append(s.normals.valid[sl])
    return np.stack(X), np.stack(y), np.stack(valid)


# --- inference -----------------------------------------------------------------

@dataclass
class InputPredictions:
    """Outputs of the two input networks on one image."""
    coarse: np.ndarray        # (20, 20, K_t)
    layout: np.ndarray        # (K_l,)
    local: np.ndarray         # (H, W, K_b)
    edges: np.ndarray         # (rows, cols, 4)


def input_predictions(image, topdown, bottomup) -> InputPredictions:
    coarse, layout = infer_topdown(topdown, resize_image(image))
    local, edges, _ = infer_sliding(bottomup.network_, preprocess_image(image))
    return InputPredictions(coarse, layout, local, edges)


def feature_stack(image, vps, preds: InputPredictions, books: Codebooks, channels=OPTIONAL,
                  tau_deg: float = 30.0, mode: str = "triangle") -> FeatureStack:
    return assemble(preds.coarse, preds.layout, preds.local, preds.edges, vps, image,
                    coarse_codebook=books.coarse, local_codebook=books.local,
                    layout_codebook=books.layout, tau_deg=tau_deg, channels=channels, mode=mode)


def topdown_map(preds: InputPredictions, books: Codebooks, h: int, w: int, mode="triangle") -> NormalMap:
    return NormalMap(coarse_to_map(preds.coarse, books.coarse, h, w, mode).astype(np.float32), None)


def bottomup_map(preds: InputPredictions, books: Codebooks, mode="triangle") -> NormalMap:
    return NormalMap(books.local.inverse_transform(preds.local, mode).astype(np.float32), None)


# --- training -------------------------------------------------------------

def train_topdown(samples, books: Codebooks, c: "StudyConfig") -> TopDownNetwork:
    X, y, valid, lay = topdown_arrays(samples, books.coarse, books.layout)
    return TopDownNetwork(n_layouts=len(books.layout.medoids_), coarse_classes=books.coarse.n_classes,
                          tiny=c.tiny, learning_rate=c.topdown_lr, epochs=c.topdown_epochs,
                          batch_size=c.batch_size, random_state=sub_seed(c.seed, "train.topdown"),
                          init=c.init).fit(X, y, lay, valid)


def train_bottomup(samples, books: Codebooks, c: "StudyConfig") -> BottomUpNetwork:
    X, y, valid, e = bottomup_arrays(samples, books.local, c.bottomup_patches,
                                     sub_seed(c.seed, "patches.bottomup"))
    return BottomUpNetwork(local_classes=books.local.n_classes, tiny=c.tiny, learning_rate=c.bottomup_lr,
                           epochs=c.bottomup_epochs, batch_size=c.batch_size,
                           random_state=sub_seed(c.seed, "train.bottomup"), init=c.init).fit(X, y, e, valid)


def train_fusion(samples, books: Codebooks, c: "StudyConfig", stacks) -> FusionNetwork:
    """Fit a fusion network on windows of precomputed feature stacks.

    The input networks only enter through ``stacks``; their weights are never touched.
    """
    X, y, valid = fusion_arrays(samples, stacks, books.local, c.fusion_patches,
                                sub_seed(c.seed, "patches.fusion"))
    return FusionNetwork(local_classes=books.local.n_classes, tiny=c.tiny, learning_rate=c.fusion_lr,
                         epochs=c.fusion_epochs, batch_size=c.fusion_batch_size,
                         random_state=sub_seed(c.seed, "train.fusion"), init=c.init).fit(X, y, valid)


def baseline_arrays(samples):
    X = np.stack([resize_image(s.image) for s in samples])
    y = np.stack([sample_grid(s.normals.normals, GRID) for s in samples]).astype(np.float32)
    valid = np.stack([sample_grid(s.normals.valid, GRID) for s in samples])
    return X, y, valid


def train_baseline(samples, c: "StudyConfig") -> BaselineRegressionNetwork:
    X, y, valid = baseline_arrays(samples)
    return BaselineRegressionNetwork(tiny=c.tiny, learning_rate=c.baseline_lr, epochs=c.baseline_epochs,
                                     batch_size=c.batch_size, random_state=sub_seed(c.seed, "train.baseline"),
                                     init=c.init).fit(X, y, valid)


def baseline_map(model: BaselineRegressionNetwork, image) -> NormalMap:
    h, w = np.shape(image)[:2]
    coarse = model.predict(resize_image(image)[None])[0]
    return NormalMap(resize_nearest(coarse, h, w).astype(np.float32), None)


# --- the study ---------------------------------------------------------------

@dataclass
class StudyConfig:
    """Sizes and hyperparameters of one train/evaluate run."""
    seed: int = 0
    tiny: bool = False
    height: int = 195
    width: int = 260
    n_train: int = 200
    n_fusion: int = 100        # scenes for fusion training, disjoint from n_train; 0 reuses train
    n_test: int = 50
    k_t: int = 20
    k_b: int = 40
    k_l: int = 300
    layout_corpus: int = 1000
    tau_deg: float = 30.0
    init: str = "he"
    topdown_lr: float = 1e-3
    topdown_epochs: int = 30
    bottomup_lr: float = 1e-3
    bottomup_epochs: int = 30
    bottomup_patches: int = 20
    fusion_lr: float = 3e-4
    fusion_epochs: int = 15
    fusion_patches: int = 20
    fusion_batch_size: int = 4
    baseline_lr: float = 1e-3
    baseline_epochs: int = 30
    batch_size: int = 16

    def scene_config(self) -> SceneConfig:
        return SceneConfig(height=self.height, width=self.width)


@dataclass
class Study:
    cfg: StudyConfig
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    fusion_set: list = field(default_factory=list)
    books: Codebooks | None = None
    topdown: TopDownNetwork | None = None
    bottomup: BottomUpNetwork | None = None
    fusion: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def generate(self):
        sc = self.cfg.scene_config()
        self.train = generate_split(sc, self.cfg.seed, "train", self.cfg.n_train)
        self.test = generate_split(sc, self.cfg.seed, "test", self.cfg.n_test)
        self.fusion_set = generate_split(sc, self.cfg.seed, "fusion", self.cfg.n_fusion)
        return self

    def fusion_samples(self):
        """Scenes the fusion network trains on: the fusion split, or train when it is empty."""
        return self.fusion_set or self.train

    def build_codebooks(self):
        c = self.cfg
        self.books = build_codebooks(self.train, c.scene_config(), c.k_t, c.k_b, c.k_l, c.seed,
                                     c.layout_corpus)
        classes = encode_layouts(self.train + self.test, self.books.layout)
        for s, k in zip(self.train + self.test, classes):
            s.layout_class = int(k)
        return self

    def train_topdown(self):
        self.topdown = train_topdown(self.train, self.books, self.cfg)
        return self

    def train_bottomup(self):
        self.bottomup = train_bottomup(self.train, self.books, self.cfg)
        return self

    def predictions(self, samples):
        return [input_predictions(s.image, self.topdown, self.bottomup) for s in samples]

    def stacks(self, samples, preds, channels):
        return [feature_stack(s.image, s.vps, p, self.books, channels, self.cfg.tau_deg)
                for s, p in zip(samples, preds)]

    def train_fusion(self, name: str, channels, preds=None):
        """``preds`` are input-network outputs on :meth:`fusion_samples`."""
        samples = self.fusion_samples()
        preds = preds or self.predictions(samples)
        self.fusion[name] = train_fusion(samples, self.books, self.cfg, self.stacks(samples, preds, channels))
        return self

    def run(self) -> list[tuple[str, object]]:
        """Train every network and return the eight ablation rows in order."""
        self.generate().build_codebooks().train_topdown().train_bottomup()
        preds = self.predictions(self.fusion_samples())
        for name, ch in FUSION_VARIANTS.items():
            self.train_fusion(name, ch, preds)
        return self.evaluate()

    def evaluate(self, samples=None) -> list[tuple[str, object]]:
        samples = self.test if samples is None else samples
        preds = self.predictions(samples)
        gts = [s.normals for s in samples]
        h, w = samples[0].shape
        rows = {
            "Top-down": evaluate([topdown_map(p, self.books, h, w) for p in preds], gts),
            "Bottom-up": evaluate([bottomup_map(p, self.books) for p in preds], gts),
        }
        for name, ch in FUSION_VARIANTS.items():
            stacks = self.stacks(samples, preds, ch)
            dists = [fusion_distributions(self.fusion[name], st) for st in stacks]
            rows[name] = evaluate([fuse_predict(None, st, self.books.local, dist=d)
                                   for st, d in zip(stacks, dists)], gts)
            if name == "Full":
                # same weights, soft decoding only
                rows["Full(Soft)"] = evaluate([fuse_predict(None, st, self.books.local, "soft", dist=d)
                                               for st, d in zip(stacks, dists)], gts)
        return [(name, rows[name]) for name in ABLATION_ROWS]


def replace(cfg: StudyConfig, **kw) -> StudyConfig:
    return dataclasses.replace(cfg, **kw)
