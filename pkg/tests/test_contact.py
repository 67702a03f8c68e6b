from __future__ import annotations

import math

import numpy as np
import oracles
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uagrasp.contact import (
    LinkGeometry,
    ReceptiveFieldParams,
    closest_point,
    contact_model_norm,
    learn_contact_model,
    mix_contact_models,
    receptive_field,
    receptive_field_values,
    select_contacts,
    surface_distance,
)
from uagrasp.errors import EmptyModelError, NoContactsError
from uagrasp.geom import Bandwidth, Density, Feature, Pose, compose, eval_density, quat_from_axis_angle, random_quaternions
from uagrasp.object_model import ObjectModel, build_object_model
from uagrasp.surface import SurfaceFeatureSet

BW = Bandwidth(0.005, 100.0, 5.0)
IDENTITY = Pose.identity()


def object_model(positions, quats=None, curvs=None):
    positions = np.asarray(positions, dtype=float)
    k = len(positions)
    quats = np.tile([1.0, 0, 0, 0], (k, 1)) if quats is None else quats
    curvs = np.zeros((k, 2)) if curvs is None else curvs
    return ObjectModel(Density(positions, quats, curvs, np.full(k, 1.0 / k), BW))


class TestObjectModel:
    def test_single_feature(self):
        f = Feature(Pose([0.1, 0, 0], [1, 0, 0, 0]), [1.0, 0.5])
        om = build_object_model(SurfaceFeatureSet([f], np.array([0])), BW)
        assert len(om) == 1
        assert om.density.weights[0] == 1.0

    def test_empty(self):
        with pytest.raises(EmptyModelError):
            build_object_model(SurfaceFeatureSet([], np.zeros(0, int)), BW)

    def test_decay_away_from_feature(self):
        f = Feature(Pose([0, 0, 0], [1, 0, 0, 0]), [1.0, 0.5])
        om = build_object_model(SurfaceFeatureSet([f], np.array([0])), BW)
        far = Feature(Pose([10 * BW.sigma_p, 0, 0], f.q), f.r)
        assert eval_density(om.density, f) >= eval_density(om.density, far)

    def test_cap_subsamples(self):
        rng = np.random.default_rng(0)
        feats = [Feature(Pose(p, [1, 0, 0, 0]), [0, 0]) for p in rng.normal(0, 0.1, (50, 3))]
        om = build_object_model(SurfaceFeatureSet(feats, np.arange(50)), BW, cap=10, rng=rng)
        assert len(om) == 10
        np.testing.assert_allclose(om.density.weights, 0.1)

    def test_marginal_matches_smoothed_histogram(self):
        rng = np.random.default_rng(1)
        curvs = rng.normal(0, 10, (40, 2))
        om = object_model(rng.normal(0, 0.1, (40, 3)), curvs=curvs)
        for r in rng.normal(0, 10, (20, 2)):
            smoothed = np.mean([oracles.gauss(r, c, BW.sigma_r) for c in curvs])
            assert abs(np.exp(om.density.log_marginal_r(r[None]))[0] - smoothed) < 1e-3


class TestGeometry:
    box = LinkGeometry("box", (0.02, 0.01, 0.005))
    capsule = LinkGeometry("capsule", (0.01, 0.04))

    def test_box_hand_computed(self):
        np.testing.assert_allclose(closest_point(self.box, IDENTITY, [0.05, 0, 0]), [0.01, 0, 0])
        assert math.isclose(surface_distance(self.box, IDENTITY, [0.05, 0, 0])[0], 0.04)

    def test_point_on_surface(self):
        p = np.array([0.01, 0.002, -0.001])
        np.testing.assert_allclose(closest_point(self.box, IDENTITY, p), p)
        assert surface_distance(self.box, IDENTITY, p)[0] == 0.0
        q = np.array([0.0, 0.01, 0.02])
        assert surface_distance(self.capsule, IDENTITY, q)[0] < 1e-15

    def test_capsule_axis(self):
        assert surface_distance(self.capsule, IDENTITY, [0.0, 0.0, 0.02])[0] == 0.01

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_against_oracle(self, seed):
        rng = np.random.default_rng(seed)
        pose = Pose(rng.normal(0, 0.05, 3), random_quaternions(rng, 1)[0])
        pts = pose.p + rng.normal(0, 0.04, (30, 3))
        np.testing.assert_allclose(
            surface_distance(self.capsule, pose, pts), oracles.capsule_distance(pts, pose.p, pose.q, 0.01, 0.04), atol=1e-12
        )
        np.testing.assert_allclose(
            surface_distance(self.box, pose, pts), oracles.box_distance(pts, pose.p, pose.q, self.box.dims), atol=1e-12
        )
        cp = closest_point(self.capsule, pose, pts)
        assert np.max(surface_distance(self.capsule, pose, cp)) < 1e-12

    @pytest.mark.parametrize("geom", [box, capsule])
    def test_cover_spheres_contain_primitive(self, geom):
        rng = np.random.default_rng(2)
        centers, radius = geom.cover_spheres()
        lo = -np.array([0.03, 0.03, 0.03])
        pts = rng.uniform(lo, -lo + [0, 0, 0.05], (20000, 3))
        inside = pts[geom.signed_distance_local(pts) <= 0]
        d = np.linalg.norm(inside[:, None, :] - centers[None], axis=2).min(axis=1)
        assert np.all(d <= radius + 1e-12)
        far = np.linalg.norm(pts - geom.center, axis=1) > geom.bounding_radius
        assert np.all(geom.signed_distance_local(pts[far]) > 0)

    def test_support_min(self):
        rng = np.random.default_rng(3)
        dirs = rng.normal(size=(50, 3))
        half = np.asarray(self.box.dims) / 2
        corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * half
        np.testing.assert_allclose(self.box.support_min(dirs), (dirs @ corners.T).min(axis=1), atol=1e-15)
        # capsule: the minimum is attained on one of the two end spheres
        radius, length = self.capsule.dims
        sphere = rng.normal(size=(200000, 3))
        sphere *= radius / np.linalg.norm(sphere, axis=1, keepdims=True)
        surface = np.vstack([sphere, sphere + [0, 0, length]])
        brute = (dirs @ surface.T).min(axis=1)
        got = self.capsule.support_min(dirs)
        assert np.all(got <= brute + 1e-15)
        assert np.all(got >= brute - 1e-4 * np.linalg.norm(dirs, axis=1))


class TestReceptiveField:
    def test_values(self):
        params = ReceptiveFieldParams(1000.0, 0.05)
        link = LinkGeometry("box", (0.02, 0.02, 0.02))
        at = lambda d: receptive_field(link, IDENTITY, Pose([0.01 + d, 0, 0], [1, 0, 0, 0]), params)
        assert at(0.0) == 1.0
        assert math.isclose(at(0.02), math.exp(-0.4), rel_tol=1e-12)
        assert at(0.05) == 0.0
        assert at(0.07) == 0.0

    @given(st.lists(st.floats(0.0, 0.1), min_size=2, max_size=20))
    def test_monotone(self, dists):
        params = ReceptiveFieldParams(2500.0, 0.04)
        link = LinkGeometry("box", (0.02, 0.02, 0.02))
        d = np.sort(np.asarray(dists))
        pts = np.column_stack([0.01 + d, np.zeros_like(d), np.zeros_like(d)])
        v = receptive_field_values(link, IDENTITY, pts, params)
        assert np.all(np.diff(v) <= 0)
        assert np.all(v[d >= 0.04] == 0.0)


class TestContactModel:
    params = ReceptiveFieldParams(2500.0, 0.04)
    palm = LinkGeometry("box", (0.03, 0.03, 0.01))

    def test_all_beyond_cutoff(self):
        om = object_model([[1.0, 0, 0], [0, 1.0, 0]])
        cm = learn_contact_model(om, self.palm, IDENTITY, self.params, BW)
        assert cm.empty and contact_model_norm(cm) == 0.0 and len(cm) == 0

    def test_single_coincident_feature(self):
        # feature on the palm face with the palm's orientation: u = v^-1 o s is a pure offset
        om = object_model([[0.0, 0.0, 0.005]])
        cm = learn_contact_model(om, self.palm, IDENTITY, self.params, BW)
        assert cm.norm == 1.0
        assert len(cm) == 1 and cm.density.weights[0] == 1.0
        np.testing.assert_allclose(cm.density.positions[0], [0.0, 0.0, -0.005], atol=1e-15)
        np.testing.assert_allclose(np.abs(cm.density.quats[0]), [1.0, 0, 0, 0], atol=1e-15)

    def test_plane_brute_force(self):
        rng = np.random.default_rng(0)
        xy = rng.uniform(-0.05, 0.05, (100, 2))
        pos = np.column_stack([xy, np.full(100, -0.02)])
        quats = random_quaternions(rng, 100)
        om = object_model(pos, quats, rng.normal(0, 1, (100, 2)))
        link_pose = Pose([0.0, 0.0, 0.0], quat_from_axis_angle([0, 0, 1], 0.3))
        cm = learn_contact_model(om, self.palm, link_pose, self.params, BW)
        d = oracles.box_distance(pos, link_pose.p, link_pose.q, self.palm.dims)
        rf = np.where(d < 0.04, np.exp(-2500.0 * d * d), 0.0)
        raw = rf / 100
        keep = raw > 0
        np.testing.assert_allclose(cm.density.weights, raw[keep] / raw[keep].sum(), rtol=1e-12)
        assert math.isclose(cm.norm, raw.sum(), rel_tol=1e-12)
        # particle poses: u = v^-1 o s, checked through scipy rotations
        v_rot = oracles.rot(quats[keep])
        u_p = v_rot.inv().apply(link_pose.p - pos[keep])
        u_q = oracles.to_wxyz(v_rot.inv() * oracles.rot(link_pose.q))
        np.testing.assert_allclose(cm.density.positions, u_p, atol=1e-15)
        assert np.max(oracles.rotation_angle(cm.density.quats, u_q)) < 1e-7

    def test_norm_values(self):
        on_surface = [[0.015, 0.0, 0.0], [-0.015, 0.0, 0.0], [0.0, 0.015, 0.0], [0.0, 0.0, 0.005]]
        cm = learn_contact_model(object_model(on_surface), self.palm, IDENTITY, self.params, BW)
        assert cm.norm == 1.0
        half = on_surface[:2] + [[1.0, 0, 0], [0, 1.0, 0]]
        cm = learn_contact_model(object_model(half), self.palm, IDENTITY, self.params, BW)
        assert cm.norm == 0.5

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_norm_bounds_and_invariance(self, seed):
        rng = np.random.default_rng(seed)
        om = object_model(rng.normal(0, 0.03, (60, 3)), random_quaternions(rng, 60), rng.normal(0, 5, (60, 2)))
        link_pose = Pose(rng.normal(0, 0.02, 3), random_quaternions(rng, 1)[0])
        cm = learn_contact_model(om, self.palm, link_pose, self.params, BW)
        assert 0.0 <= cm.norm <= 1.0
        t = Pose(rng.normal(0, 1, 3), random_quaternions(rng, 1)[0])
        d = om.density
        moved_p = oracles.rot(t.q).apply(d.positions) + t.p
        moved_q = oracles.to_wxyz(oracles.rot(t.q) * oracles.rot(d.quats))
        om_t = ObjectModel(Density(moved_p, moved_q, d.curvs, d.weights, BW))
        cm_t = learn_contact_model(om_t, self.palm, compose(t, link_pose), self.params, BW)
        assert abs(cm.norm - cm_t.norm) < 1e-9
        if not cm.empty:
            np.testing.assert_allclose(cm.density.positions, cm_t.density.positions, atol=1e-9)
            np.testing.assert_allclose(cm.density.weights, cm_t.density.weights, atol=1e-9)
            assert np.max(oracles.rotation_angle(cm.density.quats, cm_t.density.quats)) < 1e-7


class TestSelection:
    def test_equal_norms(self):
        b, c = select_contacts(np.full((3, 4), 0.2), 0.5)
        assert b.all() and c.all()

    def test_zeta_boundary(self):
        b, c = select_contacts([[1.0, 0.0], [1.0, 1.0]], 0.5, 0.5)
        np.testing.assert_array_equal(b[0], [True, False])
        assert not c[0]

    def test_two_of_three(self):
        b, c = select_contacts([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]], 0.5, 0.5)
        np.testing.assert_array_equal(b[0], [True, True, False])
        assert c[0]

    def test_all_zero(self):
        with pytest.raises(NoContactsError):
            select_contacts(np.zeros((2, 2)), 0.5)

    @given(
        st.lists(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3), min_size=2, max_size=5),
        st.floats(1e-3, 1e3),
    )
    def test_scale_invariance(self, norms, scale):
        norms = np.asarray(norms)
        if norms.sum() <= 0:
            return
        b1, c1 = select_contacts(norms, 0.7, 0.5)
        # powers of two scale exactly, so the strict comparisons see identical ratios
        k = 2.0 ** round(math.log2(scale))
        b2, c2 = select_contacts(norms * k, 0.7, 0.5)
        np.testing.assert_array_equal(b1, b2)
        np.testing.assert_array_equal(c1, c2)


class TestMixing:
    def models(self, seed, k=5):
        rng = np.random.default_rng(seed)
        om = object_model(rng.normal(0, 0.01, (k, 3)), random_quaternions(rng, k), rng.normal(0, 3, (k, 2)))
        palm = LinkGeometry("box", (0.03, 0.03, 0.01))
        return learn_contact_model(om, palm, IDENTITY, ReceptiveFieldParams(), BW)

    def test_single_example(self):
        m = self.models(0)
        mixed = mix_contact_models([[m]], [[True]], [True])
        np.testing.assert_array_equal(mixed.models[0].positions, m.density.positions)
        np.testing.assert_allclose(mixed.models[0].weights, m.density.weights, rtol=1e-15)

    def test_two_examples(self):
        a, b = self.models(1), self.models(2)
        mixed = mix_contact_models([[a], [b]], [[True, True]], [True]).models[0]
        assert len(mixed) == len(a) + len(b)
        assert abs(mixed.weights.sum() - 1.0) < 1e-12
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = Feature(Pose(rng.normal(0, 0.01, 3), random_quaternions(rng, 1)[0]), rng.normal(0, 3, 2))
            avg = 0.5 * (eval_density(a.density, x) + eval_density(b.density, x))
            assert math.isclose(eval_density(mixed, x), avg, rel_tol=1e-12, abs_tol=1e-300)

    def test_excluded_example_ignored(self):
        a, b = self.models(1), self.models(2)
        mixed = mix_contact_models([[a], [b]], [[True, False]], [True]).models[0]
        assert len(mixed) == len(a)

    def test_selected_but_empty(self):
        om = object_model([[1.0, 0, 0]])
        empty = learn_contact_model(om, LinkGeometry("box", (0.01, 0.01, 0.01)), IDENTITY, ReceptiveFieldParams(), BW)
        with pytest.raises(EmptyModelError):
            mix_contact_models([[empty]], [[True]], [True])
