"""House-layout tests: geometry oracles, metric axioms, and the generator."""

import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchgen.checkpoint import load_bundle, save_bundle
from sketchgen.gat import GatConfig
from sketchgen.house import (GROUPS, SNAP, BubbleDiagram, FloorPlan,
                             HouseConfig, HouseModel, RoomLayout,
                             compatibility, fit_house, group_eval,
                             layout_to_bubble, postprocess, random_layout,
                             render_layout, room_group, synth_house,
                             synth_house_dataset)
from sketchgen.locator import LocatorConfig
from sketchgen.metrics import FeatureExtractor
from sketchgen.sketch import SketchValidationError

PAIRS_6 = [(i, j) for i in range(6) for j in range(i + 1, 6)]


def tiny_house_cfg(max_rooms=6, **kw):
    base = dict(n_room_types=10, max_rooms=max_rooms,
                locator=LocatorConfig(n_parts=max_rooms, n_components=3,
                                      z_dim=8, n_decoder_layers=1,
                                      gat=GatConfig(d_model=64, n_heads=2,
                                                    n_blocks=1)))
    base.update(kw)
    return HouseConfig(**base)


def box(x0, y0, x1, y1):
    return [(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0]


def random_edges(rng, n_rooms):
    pairs = [(i, j) for i in range(n_rooms) for j in range(i + 1, n_rooms)]
    return {p for p in pairs if rng.random() < 0.4}


class TestBubbleDiagram:
    def test_edges_normalize_to_sorted_pairs(self):
        bd = BubbleDiagram(rooms=[0, 1, 2], edges={(2, 0), (1, 2)})
        assert bd.edges == {(0, 2), (1, 2)}

    def test_self_edge_rejected(self):
        with pytest.raises(SketchValidationError, match="self-edge"):
            BubbleDiagram(rooms=[0, 1], edges={(1, 1)}).validate()

    def test_edge_out_of_range_rejected(self):
        with pytest.raises(SketchValidationError, match="out of range"):
            BubbleDiagram(rooms=[0, 1], edges={(0, 2)}).validate()

    def test_negative_room_type_rejected(self):
        with pytest.raises(SketchValidationError, match="non-negative"):
            BubbleDiagram(rooms=[0, -1]).validate()

    def test_json_round_trip(self):
        bd = BubbleDiagram(rooms=[3, 1, 4, 1], edges={(0, 1), (2, 3), (0, 3)})
        again = BubbleDiagram.from_json(bd.to_json())
        assert again.rooms == bd.rooms and again.edges == bd.edges

    def test_json_edges_sorted_lists(self):
        data = BubbleDiagram(rooms=[0, 0, 0], edges={(2, 1), (1, 0)}).to_json()
        assert data["edges"] == [[0, 1], [1, 2]]


class TestRoomLayout:
    def test_corners_round_trip(self):
        rng = np.random.default_rng(0)
        lay = random_layout(7, rng)
        again = RoomLayout.from_corners(lay.corners())
        np.testing.assert_allclose(again.boxes, lay.boxes, atol=1e-12)

    def test_rejects_empty(self):
        with pytest.raises(SketchValidationError, match="no rooms"):
            RoomLayout(np.zeros((0, 4))).validate()

    def test_rejects_non_positive_extent(self):
        with pytest.raises(SketchValidationError, match="extent"):
            RoomLayout(np.array([[0.5, 0.5, 0.0, 0.2]])).validate()

    def test_rejects_out_of_canvas(self):
        with pytest.raises(SketchValidationError, match="canvas"):
            RoomLayout(np.array([[0.9, 0.5, 0.4, 0.2]])).validate()


class TestLayoutToBubble:
    """Hand-constructed geometry with known adjacency answers."""

    def test_shared_wall_is_adjacent(self):
        lay = RoomLayout(np.array([box(0.0, 0.0, 0.5, 1.0),
                                   box(0.5, 0.0, 1.0, 1.0)]))
        assert layout_to_bubble(lay).edges == {(0, 1)}

    def test_gap_of_one_cell_is_adjacent(self):
        lay = RoomLayout(np.array([box(0.0, 0.0, 0.4, 0.5),
                                   box(0.4 + SNAP, 0.0, 0.9, 0.5)]))
        assert layout_to_bubble(lay).edges == {(0, 1)}

    def test_wider_gap_is_not_adjacent(self):
        lay = RoomLayout(np.array([box(0.0, 0.0, 0.4, 0.5),
                                   box(0.4 + 2 * SNAP, 0.0, 0.9, 0.5)]))
        assert layout_to_bubble(lay).edges == set()

    def test_corner_touch_is_not_adjacent(self):
        lay = RoomLayout(np.array([box(0.0, 0.0, 0.5, 0.5),
                                   box(0.5, 0.5, 1.0, 1.0)]))
        assert layout_to_bubble(lay).edges == set()

    def test_overlapping_boxes_are_adjacent(self):
        lay = RoomLayout(np.array([box(0.1, 0.1, 0.6, 0.6),
                                   box(0.4, 0.4, 0.9, 0.9)]))
        assert layout_to_bubble(lay).edges == {(0, 1)}

    def test_near_on_one_axis_disjoint_on_other(self):
        lay = RoomLayout(np.array([box(0.0, 0.0, 0.4, 0.4),
                                   box(0.41, 0.45, 0.8, 0.8)]))
        assert layout_to_bubble(lay).edges == set()

    def test_room_types_pass_through(self):
        lay = RoomLayout(np.array([box(0.0, 0.0, 0.5, 1.0),
                                   box(0.5, 0.0, 1.0, 1.0)]))
        assert layout_to_bubble(lay, [7, 2]).rooms == [7, 2]

    def test_type_count_mismatch_rejected(self):
        lay = RoomLayout(np.array([box(0.0, 0.0, 0.5, 1.0)]))
        with pytest.raises(ValueError, match="room types"):
            layout_to_bubble(lay, [1, 2])


class TestCompatibility:
    def test_identity_and_zero_iff_equal(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            rooms = rng.integers(0, 10, size=6).tolist()
            a = BubbleDiagram(rooms, random_edges(rng, 6))
            b = BubbleDiagram(rooms, random_edges(rng, 6))
            assert compatibility(a, a) == 0
            assert (compatibility(a, b) == 0) == (a.edges == b.edges)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            rooms = rng.integers(0, 10, size=5).tolist()
            a = BubbleDiagram(rooms, random_edges(rng, 5))
            b = BubbleDiagram(rooms, random_edges(rng, 5))
            assert compatibility(a, b) == compatibility(b, a)

    @settings(max_examples=100, deadline=None)
    @given(a=st.sets(st.sampled_from(PAIRS_6)),
           b=st.sets(st.sampled_from(PAIRS_6)),
           c=st.sets(st.sampled_from(PAIRS_6)))
    def test_triangle_inequality(self, a, b, c):
        rooms = [0, 1, 2, 3, 4, 5]
        da, db, dc = (BubbleDiagram(rooms, e) for e in (a, b, c))
        assert compatibility(da, dc) \
            <= compatibility(da, db) + compatibility(db, dc)

    def test_counts_the_edge_disagreements(self):
        rooms = [0, 0, 0, 0]
        a = BubbleDiagram(rooms, {(0, 1), (1, 2)})
        b = BubbleDiagram(rooms, {(1, 2), (2, 3), (0, 3)})
        assert compatibility(a, b) == 3

    def test_room_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="room count"):
            compatibility(BubbleDiagram([0, 1]), BubbleDiagram([0, 1, 2]))

    def test_room_type_mismatch_rejected(self):
        with pytest.raises(ValueError, match="types"):
            compatibility(BubbleDiagram([0, 1]), BubbleDiagram([0, 2]))


class TestPostprocess:
    def test_polygons_closed_and_axis_aligned_on_grid(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            plan = postprocess(random_layout(1 + trial % 12, rng))
            plan.validate()    # closure + axis alignment
            for poly in plan.polygons:
                cells = poly / SNAP
                np.testing.assert_array_equal(cells, np.round(cells))

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        for trial in range(200):
            plan = postprocess(random_layout(1 + trial % 12, rng))
            again = postprocess(plan)
            assert len(plan.polygons) == len(again.polygons)
            for p, q in zip(plan.polygons, again.polygons):
                np.testing.assert_array_equal(p, q)

    def test_near_coincident_walls_unify(self):
        lay = RoomLayout.from_corners(np.array([
            [0.1, 0.1, 0.499, 0.9],
            [0.504, 0.1, 0.9, 0.9],
        ]))
        a, b = postprocess(lay).polygons
        assert a[:, 0].max() == b[:, 0].min()    # one shared wall line

    def test_degenerate_room_becomes_one_cell(self):
        lay = RoomLayout(np.array([box(0.5, 0.2, 0.504, 0.8),
                                   box(0.0, 0.0, 0.1, 0.1)]))
        plan = postprocess(lay)
        sliver = plan.polygons[0]
        width = sliver[:, 0].max() - sliver[:, 0].min()
        assert width == pytest.approx(SNAP, abs=1e-12)
        assert sliver[:, 0].min() >= 0 and sliver[:, 0].max() <= 1

    def test_accepts_a_floor_plan(self):
        rng = np.random.default_rng(2)
        plan = postprocess(random_layout(5, rng))
        again = postprocess(plan)
        for p, q in zip(plan.polygons, again.polygons):
            np.testing.assert_array_equal(p, q)

    def test_room_count_preserved(self):
        rng = np.random.default_rng(3)
        for n in (1, 3, 8, 12):
            assert len(postprocess(random_layout(n, rng)).polygons) == n

    def test_svg_export_mentions_every_room(self):
        rng = np.random.default_rng(4)
        svg = postprocess(random_layout(4, rng)).to_svg()
        assert svg.count("<polygon") == 4 and svg.startswith("<svg")


class TestSynthHouse:
    def test_layout_matches_its_own_diagram(self):
        for seed in range(30):
            bd, lay = synth_house(seed)
            assert compatibility(bd, layout_to_bubble(lay, bd.rooms)) == 0

    def test_rooms_tile_the_canvas(self):
        for seed in range(10):
            _, lay = synth_house(seed, n_rooms=6)
            areas = lay.boxes[:, 2] * lay.boxes[:, 3]
            assert areas.sum() == pytest.approx(1.0, abs=1e-9)

    def test_deterministic_in_seed(self):
        a_bd, a_lay = synth_house(7)
        b_bd, b_lay = synth_house(7)
        assert a_bd.rooms == b_bd.rooms and a_bd.edges == b_bd.edges
        np.testing.assert_array_equal(a_lay.boxes, b_lay.boxes)

    def test_respects_requested_room_counts(self):
        for n in (1, 2, 5, 9, 13):
            bd, lay = synth_house(0, n_rooms=n)
            assert bd.n_rooms == n and lay.n_rooms == n

    def test_dataset_helper(self):
        ds = synth_house_dataset(5, seed=3, n_rooms=4)
        assert len(ds) == 5
        assert all(bd.n_rooms == 4 for bd, _ in ds)


class TestRoomGroup:
    def test_group_boundaries(self):
        assert room_group(1) == "1-3" and room_group(3) == "1-3"
        assert room_group(4) == "4-6" and room_group(12) == "10-12"
        assert room_group(13) == "13+" and room_group(40) == "13+"

    def test_groups_cover_every_count(self):
        for n in range(1, 30):
            room_group(n)


@pytest.fixture(scope="module")
def trained_house():
    dataset = synth_house_dataset(8, seed=0, n_rooms=4)
    torch.manual_seed(0)
    model = HouseModel(tiny_house_cfg())
    losses = fit_house(model, dataset, steps=300, lr=1e-3, batch_size=8,
                       seed=0, kl_weight=0.1)
    return model, dataset, losses


class TestHouseModel:
    def test_loss_terms_finite(self, trained_house):
        _, _, losses = trained_house
        for rec in losses:
            for key in ("total", "box", "presence", "kl"):
                assert np.isfinite(rec[key])

    def test_loss_decreases_when_overfitting(self, trained_house):
        _, _, losses = trained_house
        tail = np.mean([r["total"] for r in losses[-5:]])
        assert tail < losses[0]["total"]

    def test_generates_one_box_per_room(self, trained_house):
        model, dataset, _ = trained_house
        gen = torch.Generator().manual_seed(0)
        for diag, _ in dataset[:3]:
            out = model.generate_rooms(diag, generator=gen)
            assert out.n_rooms == diag.n_rooms
            out.validate()

    def test_generation_deterministic_in_seed(self, trained_house):
        model, dataset, _ = trained_house
        diag = dataset[0][0]
        a = model.generate_rooms(diag,
                                 generator=torch.Generator().manual_seed(3))
        b = model.generate_rooms(diag,
                                 generator=torch.Generator().manual_seed(3))
        np.testing.assert_array_equal(a.boxes, b.boxes)

    def test_overfit_model_beats_random_baseline(self, trained_house):
        model, dataset, _ = trained_house
        rng = np.random.default_rng(99)
        gen = torch.Generator().manual_seed(7)
        model_scores, random_scores = [], []
        for diag, _ in dataset:
            for rep in range(4):
                tau = 0.0 if rep == 0 else 0.5
                sample = model.generate_rooms(diag, generator=gen,
                                              temperature=tau)
                model_scores.append(compatibility(
                    diag, layout_to_bubble(sample, diag.rooms)))
                baseline = random_layout(diag.n_rooms, rng)
                random_scores.append(compatibility(
                    diag, layout_to_bubble(baseline, diag.rooms)))
        assert np.mean(model_scores) < np.mean(random_scores)

    def test_untrained_model_refuses_to_generate(self):
        model = HouseModel(tiny_house_cfg())
        with pytest.raises(RuntimeError, match="trained"):
            model.generate_rooms(BubbleDiagram([0, 1], {(0, 1)}))

    def test_empty_diagram_rejected(self, trained_house):
        model = trained_house[0]
        with pytest.raises(ValueError, match="empty"):
            model.generate_rooms(BubbleDiagram([], set()))

    def test_too_many_rooms_rejected(self, trained_house):
        model = trained_house[0]
        too_big = BubbleDiagram(list(range(model.cfg.max_rooms + 1)))
        with pytest.raises(ValueError, match="capacity"):
            model.generate_rooms(too_big)

    def test_unknown_room_type_rejected(self, trained_house):
        model = trained_house[0]
        with pytest.raises(ValueError, match="vocabulary"):
            model.generate_rooms(BubbleDiagram([model.cfg.n_room_types]))

    def test_diagram_layout_size_mismatch_rejected(self, trained_house):
        model, dataset, _ = trained_house
        diag = dataset[0][0]
        wrong = RoomLayout(np.array([box(0.0, 0.0, 0.5, 0.5)]))
        with pytest.raises(ValueError, match="room count"):
            model.loss([diag], [wrong])

    def test_bundle_round_trip(self, trained_house, tmp_path):
        model, dataset, _ = trained_house
        path = tmp_path / "house.ckpt"
        save_bundle(path, house=model, meta={"kind": "house"})
        bundle = load_bundle(path)
        assert bundle.locator is None and bundle.sketcher is None
        for (k, v), (k2, v2) in zip(model.state_dict().items(),
                                    bundle.house.state_dict().items()):
            assert k == k2
            assert torch.equal(v, v2)
        diag = dataset[0][0]
        a = model.generate_rooms(diag,
                                 generator=torch.Generator().manual_seed(5))
        b = bundle.house.generate_rooms(
            diag, generator=torch.Generator().manual_seed(5))
        np.testing.assert_array_equal(a.boxes, b.boxes)


class TestRenderLayout:
    def test_shape_and_range(self):
        rng = np.random.default_rng(0)
        lay = random_layout(4, rng)
        img = render_layout(lay, [0, 1, 2, 3])
        assert img.shape == (1, 64, 64)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_rooms_darken_the_canvas(self):
        lay = RoomLayout(np.array([box(0.25, 0.25, 0.75, 0.75)]))
        img = render_layout(lay, [0])
        assert img.mean() < 1.0
        assert img[0, 0, 0] == 1.0    # background stays paper-white

    def test_type_changes_the_shade(self):
        lay = RoomLayout(np.array([box(0.25, 0.25, 0.75, 0.75)]))
        a = render_layout(lay, [0])
        b = render_layout(lay, [5])
        assert not torch.equal(a, b)


class TestGroupEval:
    def test_report_schema_and_group_skipping(self):
        dataset = (synth_house_dataset(3, seed=0, n_rooms=2)
                   + synth_house_dataset(3, seed=50, n_rooms=5))
        extractor = FeatureExtractor(channels=4, embed_dim=8).eval()
        with pytest.warns(UserWarning, match="skipped"):
            report = group_eval(dataset, extractor,
                                model_cfg=tiny_house_cfg(),
                                train_steps=20, n_samples=2, seed=0)
        assert set(report) == {"1-3", "4-6"}
        for label, entry in report.items():
            assert entry["count"] == 3
            assert entry["fid"] >= 0.0
            assert entry["compatibility"] >= 0.0

    def test_single_group_dataset_has_no_complement(self):
        dataset = synth_house_dataset(2, seed=0, n_rooms=2)
        extractor = FeatureExtractor(channels=4, embed_dim=8).eval()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            report = group_eval(dataset, extractor,
                                model_cfg=tiny_house_cfg(), train_steps=1)
        assert report == {}
        assert any("complement" in str(w.message) for w in caught)

    def test_group_labels_match_the_bands(self):
        labels = [f"{lo}+" if hi is None else f"{lo}-{hi}"
                  for lo, hi in GROUPS]
        assert labels == ["1-3", "4-6", "7-9", "10-12", "13+"]
