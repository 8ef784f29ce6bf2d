import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tdm.skeleton import (PoseError, PoseSequence, SkeletonConfigError, SkeletonTopology, body_bones,
                          bone_orientations, chain_topology, default_topology, dump_skeleton,
                          load_skeleton, parse_skeleton, topology_from_dict)

TWO = SkeletonTopology(("p", "c"), ((0, 1),))


def one_bone(parent, child):
    return PoseSequence(np.array([[parent, child]], dtype=float))


class TestBoneOrientations:
    def test_axis_aligned(self):
        q, deg = bone_orientations(one_bone((0, 0, 0), (1, 0, 0)), TWO)
        np.testing.assert_array_equal(q[0, 0], [1, 0, 0])
        assert not deg.any()

    def test_three_four_five(self):
        q, _ = bone_orientations(one_bone((0, 0, 0), (0, 3, 4)), TWO)
        np.testing.assert_allclose(q[0, 0], [0, 0.6, 0.8], rtol=0, atol=1e-15)

    def test_degenerate_bone(self):
        q, deg = bone_orientations(one_bone((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)), TWO)
        np.testing.assert_array_equal(q[0, 0], [0, 0, 0])
        assert deg[0, 0]

    def test_tiny_bone_still_unit(self):
        q, deg = bone_orientations(one_bone((0, 0, 0), (0, 2.25e-159, 2.25e-159)), TWO)
        assert not deg[0, 0]
        np.testing.assert_allclose(q[0, 0], [0, np.sqrt(0.5), np.sqrt(0.5)], atol=1e-15)

    def test_joint_count_mismatch(self, topo):
        with pytest.raises(PoseError, match="joints"):
            bone_orientations(PoseSequence(np.zeros((2, 4, 3))), topo)

    def test_shape(self, topo, rng):
        q, deg = bone_orientations(PoseSequence(rng.normal(size=(5, 11, 3))), topo)
        assert q.shape == (5, topo.num_bones, 3) and deg.shape == (5, topo.num_bones)


coords = hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.just(11), st.just(3)),
                    elements=st.floats(-4, 4, allow_nan=False))
# multiples of 1/8 in a small range keep translation arithmetic exact
dyadic = hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.just(11), st.just(3)),
                    elements=st.integers(-32, 32).map(lambda k: k / 8))


@settings(max_examples=50, deadline=None)
@given(coords)
def test_unit_norm(c):
    q, deg = bone_orientations(PoseSequence(c), default_topology())
    norms = np.linalg.norm(q, axis=-1)
    np.testing.assert_allclose(norms[~deg], 1.0, atol=1e-12, rtol=0)
    assert np.all(norms[deg] == 0)


@settings(max_examples=50, deadline=None)
@given(dyadic, st.tuples(*[st.integers(-16, 16).map(lambda k: k / 4)] * 3))
def test_translation_invariance_exact(c, offset):
    topo = default_topology()
    q1, _ = bone_orientations(PoseSequence(c), topo)
    q2, _ = bone_orientations(PoseSequence(c + np.array(offset)), topo)
    np.testing.assert_array_equal(q1, q2)


@settings(max_examples=50, deadline=None)
@given(coords, st.floats(0.01, 100))
def test_scale_invariance(c, k):
    topo = default_topology()
    q1, d1 = bone_orientations(PoseSequence(c), topo)
    q2, d2 = bone_orientations(PoseSequence(c * k), topo)
    ok = ~d1 & ~d2
    np.testing.assert_allclose(q1[ok], q2[ok], atol=1e-12)


class TestBodyBones:
    def test_no_face(self):
        topo = chain_topology(["a", "b", "c", "d"])
        assert body_bones(topo) == [0, 1, 2]

    def test_all_face(self):
        topo = chain_topology(["a", "b", "c"], face=["a", "b", "c"])
        assert body_bones(topo) == []

    def test_mixed_bone_excluded(self, tiny_topo):
        assert body_bones(tiny_topo) == [0, 1]

    def test_default(self, topo):
        assert topo.num_joints == 11 and topo.num_bones == 10
        assert len(body_bones(topo)) == 7


class TestTopologyInvariants:
    @pytest.mark.parametrize("bones", [((0, 0),), ((0, 5),), ((0, 1), (0, 1))])
    def test_bad_bones(self, bones):
        with pytest.raises(SkeletonConfigError):
            SkeletonTopology(("a", "b"), bones)

    def test_face_out_of_range(self):
        with pytest.raises(SkeletonConfigError):
            SkeletonTopology(("a", "b"), ((0, 1),), frozenset({2}))

    def test_pose_invariants(self):
        with pytest.raises(PoseError):
            PoseSequence(np.zeros((0, 2, 3)))
        with pytest.raises(PoseError):
            PoseSequence(np.array([[[np.nan, 0, 0]]]))
        # NaN allowed in a masked frame
        PoseSequence(np.array([[[np.nan, 0, 0]], [[0, 0, 0]]]), mask=[False, True])


class TestConfigFile:
    def test_round_trip(self, topo):
        again = parse_skeleton(dump_skeleton(topo))
        assert again == topo
        assert topology_from_dict(topo.to_dict()) == topo

    def test_load_from_disk(self, tmp_path, tiny_topo):
        path = tmp_path / "s.yaml"
        path.write_text(dump_skeleton(tiny_topo))
        assert load_skeleton(path) == tiny_topo

    @pytest.mark.parametrize("text, line, pattern", [
        ("joints: [a, b]\nbones:\n  - [a, b]\n  - [a, zz]\n", 4, "unknown joint 'zz'"),
        ("joints: [a, b]\nbones:\n  - [a, a]\n", 3, "itself"),
        ("joints: [a, b]\nbones:\n  - [a, b]\n  - [a, b]\n", 4, "duplicate bone"),
        ("joints:\n  - a\n  - a\n", 3, "duplicate joint"),
        ("joints: [a, b]\nface: [q]\n", 2, "unknown joint 'q'"),
        ("joints: [a]\nlimbs: []\n", 2, "unknown key"),
        ("joints: [a, b]\nbones:\n  - [a, b, a]\n", 3, "pair"),
    ])
    def test_line_precise_errors(self, text, line, pattern):
        with pytest.raises(SkeletonConfigError, match=pattern) as info:
            parse_skeleton(text, "cfg.yaml")
        assert info.value.line == line
        assert str(info.value).startswith(f"cfg.yaml:{line}:")

    def test_malformed_yaml(self):
        with pytest.raises(SkeletonConfigError, match="malformed"):
            parse_skeleton("joints: [a, b\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(SkeletonConfigError):
            load_skeleton(tmp_path / "none.yaml")
