import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from sketchgen.fixtures import (
    N_CATEGORIES,
    N_PARTS,
    creature_caption,
    encode_caption,
    synth_creature,
    synth_noise,
)
from sketchgen.sketch import (
    MIN_BOX_EXTENT,
    UNLABELED,
    AdjacencyGraph,
    CoarseLayout,
    PartBox,
    RasterImage,
    SketchValidationError,
    VectorSketch,
    apply_affine,
    augment_affine,
    boxes_from_annotations,
    boxes_overlap,
    build_box_adjacency,
    build_stroke_adjacency,
    flatten_strokes,
    load_sketches,
    rasterize,
    save_sketches,
)


def dense_segment_raster(strokes, size):
    """Oracle renderer: distance to a dense sampling of every segment."""
    ink = np.zeros((size, size))
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    for stroke in strokes:
        pts = np.asarray(stroke) * (size - 1)
        for i in range(len(pts) - 1):
            samples = pts[i] + np.linspace(0, 1, 4000)[:, None] * (pts[i + 1] - pts[i])
            d = np.min(np.hypot(xs[..., None] - samples[:, 0],
                                ys[..., None] - samples[:, 1]), axis=-1)
            ink = np.maximum(ink, np.clip(1.0 - d / 0.75, 0.0, 1.0))
    return 1.0 - ink


class TestRasterize:
    def test_matches_dense_sampling_oracle(self):
        strokes = [np.array([[0.1, 0.2], [0.8, 0.75], [0.85, 0.3]]),
                   np.array([[0.5, 0.5], [0.5, 0.9]])]
        sk = VectorSketch(strokes)
        got = rasterize(sk, size=32).pixels
        want = dense_segment_raster(strokes, 32)
        np.testing.assert_allclose(got, want, atol=5e-4)

    def test_empty_sketch_is_blank(self):
        img = rasterize(VectorSketch([]), size=64)
        np.testing.assert_array_equal(img.pixels, np.ones((64, 64)))

    def test_deterministic(self):
        sk, _, _ = synth_creature(7)
        a = rasterize(sk, 128).pixels
        b = rasterize(sk, 128).pixels
        np.testing.assert_array_equal(a, b)

    def test_range_and_ink_present(self):
        sk, _, _ = synth_creature(3)
        img = rasterize(sk, 128)
        assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0
        assert img.ink().sum() > 0

    def test_corner_points_land_on_corner_pixels(self):
        # [0,1] maps to pixel centers 0..size-1, so a diagonal endpoint
        # at (1,1) inks the last pixel fully.
        sk = VectorSketch([np.array([[0.0, 0.0], [1.0, 1.0]])])
        img = rasterize(sk, 16)
        assert img.pixels[0, 0] == 0.0
        assert img.pixels[15, 15] == 0.0

    def test_size_too_small_rejected(self):
        with pytest.raises(SketchValidationError):
            rasterize(VectorSketch([]), size=8)

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_fixture_rasters_always_valid(self, seed):
        sk, _, _ = synth_creature(seed)
        img = rasterize(sk, 64)
        assert img.pixels.shape == (64, 64)
        assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0


class TestBoxesFromAnnotations:
    def oracle(self, sketch, n_parts):
        """Independent min/max scan over raw points."""
        out = []
        for t in range(n_parts):
            pts = [p for s, lab in zip(sketch.strokes, sketch.labels)
                   if lab == t for p in np.asarray(s)]
            if not pts:
                out.append(None)
                continue
            arr = np.asarray(pts)
            out.append((arr[:, 0].min(), arr[:, 1].min(),
                        arr[:, 0].max(), arr[:, 1].max()))
        return out

    def test_matches_minmax_oracle(self):
        for seed in range(25):
            sk, _, _ = synth_creature(seed)
            layout = boxes_from_annotations(sk, N_PARTS)
            want = self.oracle(sk, N_PARTS)
            for t, bounds in enumerate(want):
                box = layout.boxes[t]
                if bounds is None:
                    assert not box.present
                    continue
                xmin, ymin, xmax, ymax = bounds
                assert box.present
                if xmax - xmin >= MIN_BOX_EXTENT:
                    np.testing.assert_allclose(box.bounds()[0], xmin, atol=1e-12)
                    np.testing.assert_allclose(box.bounds()[2], xmax, atol=1e-12)
                if ymax - ymin >= MIN_BOX_EXTENT:
                    np.testing.assert_allclose(box.bounds()[1], ymin, atol=1e-12)
                    np.testing.assert_allclose(box.bounds()[3], ymax, atol=1e-12)

    def test_degenerate_stroke_inflated(self):
        sk = VectorSketch([np.array([[0.2, 0.5], [0.6, 0.5]])], [0])
        box = boxes_from_annotations(sk, 1).boxes[0]
        assert box.h == MIN_BOX_EXTENT
        np.testing.assert_allclose(box.w, 0.4)
        box.validate()

    def test_degenerate_at_canvas_edge_stays_inside(self):
        sk = VectorSketch([np.array([[0.3, 0.0], [0.7, 0.0]])], [0])
        box = boxes_from_annotations(sk, 1).boxes[0]
        assert box.y - box.h / 2 >= 0.0
        box.validate()

    def test_unlabeled_strokes_ignored(self):
        sk = VectorSketch(
            [np.array([[0.1, 0.1], [0.2, 0.2]]), np.array([[0.8, 0.8], [0.9, 0.9]])],
            [0, UNLABELED])
        layout = boxes_from_annotations(sk, 2)
        assert layout.boxes[0].present and not layout.boxes[1].present
        assert layout.boxes[0].bounds()[2] <= 0.2 + 1e-12

    def test_fixture_layout_roundtrips_exactly(self):
        for seed in range(40):
            sk, layout, _ = synth_creature(seed)
            again = boxes_from_annotations(sk, N_PARTS)
            for a, b in zip(layout.boxes, again.boxes):
                assert a.present == b.present
                assert (a.x, a.y, a.w, a.h) == (b.x, b.y, b.w, b.h)


class TestAdjacency:
    def interval_oracle(self, a, b):
        ax0, ay0, ax1, ay1 = a.bounds()
        bx0, by0, bx1, by1 = b.bounds()
        x_meet = max(ax0, bx0) <= min(ax1, bx1)
        y_meet = max(ay0, by0) <= min(ay1, by1)
        return x_meet and y_meet

    def test_box_adjacency_matches_interval_oracle(self):
        for seed in range(30):
            _, layout, _ = synth_creature(seed)
            g = build_box_adjacency(layout)
            present = layout.present_ids()
            for i in range(layout.n_parts):
                for j in range(layout.n_parts):
                    want = (i != j and i in present and j in present
                            and self.interval_oracle(layout.boxes[i], layout.boxes[j]))
                    assert g.adj[i, j] == want

    def test_boundary_touch_counts_as_overlap(self):
        a = PartBox(0, 0.25, 0.5, 0.5, 0.5, present=True)
        b = PartBox(1, 0.75, 0.5, 0.5, 0.5, present=True)  # shares x=0.5 edge
        assert boxes_overlap(a, b)
        g = build_box_adjacency(CoarseLayout([a, b]))
        assert g.adj[0, 1] and g.adj[1, 0]

    def test_absent_parts_isolated(self):
        boxes = [PartBox(0, 0.5, 0.5, 0.9, 0.9, present=True),
                 PartBox(1), PartBox(2, 0.5, 0.5, 0.2, 0.2, present=True)]
        g = build_box_adjacency(CoarseLayout(boxes))
        assert not g.adj[1].any()
        assert g.adj[0, 2]

    def test_stroke_adjacency_consecutive_pairs_only(self):
        ids = np.array([0, 0, 0, 1, 1, 2])
        g = build_stroke_adjacency(ids)
        want = np.zeros((6, 6), dtype=bool)
        for i, j in [(0, 1), (1, 2), (3, 4)]:
            want[i, j] = want[j, i] = True
        np.testing.assert_array_equal(g.adj, want)

    def test_graph_validation_rejects_asymmetry(self):
        bad = np.zeros((3, 3), dtype=bool)
        bad[0, 1] = True
        with pytest.raises(SketchValidationError):
            AdjacencyGraph(3, bad)

    def test_graph_validation_rejects_self_loops(self):
        with pytest.raises(SketchValidationError):
            AdjacencyGraph(2, np.eye(2, dtype=bool))


class TestAffine:
    def test_quarter_turn_closed_form(self):
        sk = VectorSketch([np.array([[0.9, 0.5], [0.5, 0.5]])])
        out = apply_affine(sk, 90.0, 1.0, (0.0, 0.0))
        # (0.9, 0.5) quarter-turned about (0.5, 0.5) lands on (0.5, 0.9)
        np.testing.assert_allclose(out.strokes[0][0], [0.5, 0.9], atol=1e-12)
        np.testing.assert_allclose(out.strokes[0][1], [0.5, 0.5], atol=1e-12)

    def test_scale_and_translate_closed_form(self):
        sk = VectorSketch([np.array([[0.7, 0.5], [0.5, 0.3]])])
        out = apply_affine(sk, 0.0, 0.5, (0.1, -0.05))
        np.testing.assert_allclose(out.strokes[0][0], [0.7, 0.45], atol=1e-12)
        np.testing.assert_allclose(out.strokes[0][1], [0.6, 0.35], atol=1e-12)

    def test_augment_deterministic_per_seed(self):
        sk, _, _ = synth_creature(11)
        a = augment_affine(sk, 123)
        b = augment_affine(sk, 123)
        c = augment_affine(sk, 124)
        for s1, s2 in zip(a.strokes, b.strokes):
            np.testing.assert_array_equal(s1, s2)
        assert any(not np.array_equal(s1, s3)
                   for s1, s3 in zip(a.strokes, c.strokes))

    @given(st.integers(0, 5000), st.integers(0, 5000))
    @settings(max_examples=25, deadline=None)
    def test_augment_preserves_structure_and_bounds(self, sketch_seed, aug_seed):
        sk, _, _ = synth_creature(sketch_seed)
        out = augment_affine(sk, aug_seed)
        assert out.labels == sk.labels
        assert [len(s) for s in out.strokes] == [len(s) for s in sk.strokes]
        for s in out.strokes:
            assert s.min() >= 0.0 and s.max() <= 1.0

    def test_augment_jitter_is_small(self):
        # max displacement bound: rotation 10deg + 10% scale + 0.05 shift
        # of a point at corner distance ~0.71 from center is well under 0.25.
        sk, _, _ = synth_creature(2)
        out = augment_affine(sk, 9)
        for s_in, s_out in zip(sk.strokes, out.strokes):
            assert np.max(np.abs(s_in - s_out)) < 0.25


class TestFlatten:
    def test_flatten_concatenates_in_order(self):
        sk = VectorSketch([np.array([[0.1, 0.1], [0.2, 0.2]]),
                           np.array([[0.5, 0.5], [0.6, 0.6], [0.7, 0.7]])])
        pts, ids = flatten_strokes(sk)
        assert pts.shape == (5, 2)
        np.testing.assert_array_equal(ids, [0, 0, 1, 1, 1])

    def test_flatten_cap_keeps_endpoints(self):
        sk = VectorSketch([np.linspace([0.1, 0.1], [0.9, 0.9], 200)])
        pts, ids = flatten_strokes(sk, max_points=50)
        assert len(pts) <= 50
        np.testing.assert_allclose(pts[0], [0.1, 0.1])
        np.testing.assert_allclose(pts[-1], [0.9, 0.9])

    def test_flatten_empty(self):
        pts, ids = flatten_strokes(VectorSketch([]))
        assert pts.shape == (0, 2) and ids.shape == (0,)


class TestIO:
    def test_ndjson_roundtrip_exact(self, tmp_path):
        sketches = [synth_creature(i)[0] for i in range(5)] + [synth_noise(1)]
        path = tmp_path / "data.ndjson"
        save_sketches(path, sketches)
        back = load_sketches(path)
        assert len(back) == len(sketches)
        for a, b in zip(sketches, back):
            assert a.labels == b.labels
            for s1, s2 in zip(a.strokes, b.strokes):
                np.testing.assert_array_equal(s1, s2)

    def test_ndjson_is_one_record_per_line(self, tmp_path):
        path = tmp_path / "data.ndjson"
        save_sketches(path, [synth_creature(0)[0], synth_creature(1)[0]])
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 2
        assert all(isinstance(json.loads(ln)["strokes"], list) for ln in lines)

    def test_png_roundtrip(self, tmp_path):
        img = rasterize(synth_creature(5)[0], 64)
        path = tmp_path / "out.png"
        img.save_png(path)
        back = np.asarray(Image.open(path))
        assert back.shape == (64, 64)
        want = np.clip(np.rint(img.pixels * 255), 0, 255).astype(np.uint8)
        np.testing.assert_array_equal(back, want)


class TestFixtures:
    def test_creature_has_core_parts(self):
        for seed in range(20):
            sk, layout, cat = synth_creature(seed)
            assert 0 <= cat < N_CATEGORIES
            assert layout.boxes[0].present  # body
            assert layout.boxes[1].present  # head
            sk.validate(N_PARTS)

    def test_categories_reachable_and_respected(self):
        for cat in range(N_CATEGORIES):
            _, _, got = synth_creature(99, category=cat)
            assert got == cat

    def test_presence_varies_across_seeds(self):
        presences = {tuple(b.present for b in synth_creature(s)[1].boxes)
                     for s in range(60)}
        assert len(presences) > 1

    def test_noise_is_unlabeled(self):
        nz = synth_noise(4)
        assert set(nz.labels) == {UNLABELED}
        assert not nz.is_empty()

    def test_caption_tokenizes_fully(self):
        for seed in range(10):
            _, layout, cat = synth_creature(seed)
            text = creature_caption(cat, layout)
            ids = encode_caption(text)
            assert ids.shape == (12,)
            # every word of the caption is in-vocabulary
            assert (ids > 0).sum() == len(text.split())


class TestRasterImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(SketchValidationError):
            RasterImage(np.full((8, 8), 1.5))

    def test_ink_complements_pixels(self):
        img = rasterize(synth_creature(1)[0], 32)
        np.testing.assert_allclose(img.ink(), 1.0 - img.pixels)
