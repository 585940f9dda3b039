import hashlib
import math
from importlib import resources

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

import oracles
from difet.describe import (
    DEFAULT_PATTERN,
    DescriptorParams,
    SamplingPattern,
    brief_describe,
    centroid_angle,
    hamming_distance,
    l2_distance,
    orb_extract,
    sift_describe,
    sift_describe_many,
    sift_detect,
    steered_brief,
    surf_describe,
    surf_detect,
)
from difet.describe.brief import angle_bin, generate_pattern
from difet.describe.sift import ScaleSpace, curvature_ratio
from difet.describe.surf import filter_sizes, hessian_response
from difet.detect import Keypoint
from difet.errors import InvalidInputError, InvalidParameterError
from difet.raster import integral, smooth
from difet.synthetic import blob_scene, step_edge_scene, textured_gray

PATTERN_SHA256 = "7edff48d2bec3e6f6f655cb6972f6e99f35602b3a41e96ad1c1c38551136d00c"
TWO_PI = 2 * math.pi


def textured(seed, size=128, blur=0.0):
    img = textured_gray(size, size, np.random.default_rng(seed))
    return ndimage.gaussian_filter(img, blur) if blur else img


class TestParams:
    def test_defaults(self):
        p = DescriptorParams()
        assert (p.orb_n_features, p.orb_n_levels, p.orb_scale_factor) == (500, 8, 1.2)
        assert p.orb_fast_threshold == 20 / 255
        assert (p.surf_hessian_threshold, p.sift_contrast_threshold, p.sift_edge_ratio, p.brief_blur_sigma) == (
            400, 0.03, 10, 2.0)  # fmt: skip

    @pytest.mark.parametrize("kw", [{"orb_n_features": 0}, {"orb_scale_factor": 1.0}, {"orb_n_levels": 2.5},
                                    {"sift_edge_ratio": -1}, {"brief_blur_sigma": float("inf")}])  # fmt: skip
    def test_invalid(self, kw):
        with pytest.raises(InvalidParameterError):
            DescriptorParams(**kw)


class TestPattern:
    def test_shipped_file(self):
        raw = resources.files("difet.describe").joinpath("data/brief_pattern.txt").read_bytes()
        assert hashlib.sha256(raw).hexdigest() == PATTERN_SHA256
        lines = raw.decode("utf-8").split("\n")
        assert lines[-1] == "" and len(lines) == 257
        for line in lines[:-1]:
            vals = [int(v) for v in line.split(" ")]
            assert len(vals) == 4 and all(abs(v) <= 15 for v in vals)

    def test_regenerates_from_seed(self):
        assert generate_pattern() == DEFAULT_PATTERN
        assert DEFAULT_PATTERN.dumps() == SamplingPattern.parse(DEFAULT_PATTERN.dumps()).dumps()

    def test_rejects_bad_shape_and_range(self):
        with pytest.raises(InvalidInputError):
            SamplingPattern(np.zeros((255, 4)))
        bad = DEFAULT_PATTERN.pairs.copy()
        bad[0, 0] = 16
        with pytest.raises(InvalidInputError):
            SamplingPattern(bad)


class TestBrief:
    def test_constant_is_zero(self):
        d = brief_describe(np.full((40, 40), 0.4), Keypoint(20, 20, 1))
        assert d.dtype == np.uint8 and d.shape == (32,) and not d.any()

    def test_matches_pair_oracle(self, rng):
        img = smooth(rng.random((48, 48)), 2.0)
        for cx, cy in [(15, 15), (24, 30), (32, 32)]:
            got = brief_describe(img, Keypoint(cx, cy, 1)).tobytes()
            want = oracles.pack_bits(oracles.brief_bits(img, cx, cy, DEFAULT_PATTERN.pairs.tolist()))
            assert got == want

    def test_bit_order_little_endian(self):
        pairs = np.zeros((256, 4), dtype=int)
        pairs[:, 2] = 1  # b = (1, 0)
        img = np.zeros((40, 40))
        img[20, 21] = 1.0  # every test: I(a) < I(b)
        pattern = SamplingPattern(pairs)
        pairs2 = pairs.copy()
        pairs2[1:, 2] = 0  # only test 0 can fire
        pairs2[1:, 0] = 1
        d = brief_describe(img, Keypoint(20, 20, 1), SamplingPattern(pairs2))
        assert d[0] == 1 and not d[1:].any()
        assert brief_describe(img, Keypoint(20, 20, 1), pattern).tolist() == [255] * 32

    def test_self_distance(self, rng):
        img = smooth(rng.random((40, 40)), 2)
        d = brief_describe(img, Keypoint(20, 19, 1))
        assert hamming_distance(d, brief_describe(img, Keypoint(20, 19, 1))) == 0

    @pytest.mark.parametrize("x,y", [(14, 20), (20, 14), (25, 20), (20, 25)])
    def test_out_of_bounds(self, x, y):
        assert brief_describe(np.zeros((40, 40)), Keypoint(x, y, 1)) is None


class TestCentroid:
    def test_ramp_x(self):
        img = np.tile(np.arange(40, dtype=float) / 39, (40, 1))
        assert centroid_angle(img, Keypoint(20, 20, 1)) == pytest.approx(0, abs=1e-6)

    def test_ramp_y(self):
        img = np.tile((np.arange(40, dtype=float) / 39)[:, None], (1, 40))
        assert centroid_angle(img, Keypoint(20, 20, 1)) == pytest.approx(math.pi / 2, abs=1e-6)

    def test_flat(self):
        assert centroid_angle(np.full((40, 40), 0.3), Keypoint(20, 20, 1)) == 0.0

    def test_matches_moment_oracle(self, rng):
        img = rng.random((40, 40))
        for _ in range(5):
            cx, cy = (int(v) for v in rng.integers(15, 25, 2))
            m10, m01 = oracles.moments(img, cx, cy, 15)
            want = math.atan2(m01, m10) % TWO_PI
            got = centroid_angle(img, Keypoint(cx, cy, 1))
            assert abs((got - want + math.pi) % TWO_PI - math.pi) < 1e-9

    def test_out_of_bounds(self):
        assert centroid_angle(np.zeros((40, 40)), Keypoint(14, 20, 1)) is None

    @given(st.integers(0, 2**32 - 1))
    def test_rot90_adds_quarter_turn(self, seed):
        img = np.random.default_rng(seed).random((41, 41))
        a = centroid_angle(img, Keypoint(20, 20, 1))
        # np.rot90(img, -1) maps an offset (dx, dy) to (-dy, dx): a +90 degree turn in image axes
        b = centroid_angle(np.rot90(img, -1), Keypoint(20, 20, 1))
        assert abs((b - a - math.pi / 2 + math.pi) % TWO_PI - math.pi) < 0.05

    @given(st.integers(0, 2**32 - 1))
    def test_range(self, seed):
        img = np.random.default_rng(seed).random((33, 33))
        assert 0 <= centroid_angle(img, Keypoint(16, 16, 1)) < TWO_PI


class TestSteered:
    def setup_method(self):
        self.img = smooth(np.random.default_rng(5).random((64, 64)), 2.0)
        self.kp = Keypoint(32, 32, 1)

    def test_angle_zero_equals_brief(self):
        assert np.array_equal(steered_brief(self.img, self.kp, 0.0), brief_describe(self.img, self.kp))

    def test_periodic(self):
        for a in (0.0, 0.3, 2.0):
            assert np.array_equal(steered_brief(self.img, self.kp, a), steered_brief(self.img, self.kp, a + TWO_PI))

    def test_quantization(self):
        assert angle_bin(0.0) == 0 and angle_bin(TWO_PI) == 0
        assert angle_bin(TWO_PI / 30 * 0.49) == 0 and angle_bin(TWO_PI / 30 * 0.51) == 1
        assert angle_bin(TWO_PI - 0.01) == 0

    def test_half_turn_negates_offsets(self):
        neg = DEFAULT_PATTERN.pairs * -1
        want = oracles.pack_bits(oracles.brief_bits(self.img, 32, 32, neg.tolist()))
        assert steered_brief(self.img, self.kp, math.pi).tobytes() == want

    @pytest.mark.parametrize("b", [1, 7, 13, 22, 29])
    def test_matches_explicit_rotation(self, b):
        theta = b * TWO_PI / 30
        rotated = []
        for ax, ay, bx, by in DEFAULT_PATTERN.pairs.tolist():
            rotated.append((*oracles.rotate_offset(ax, ay, theta), *oracles.rotate_offset(bx, by, theta)))
        want = oracles.pack_bits(oracles.brief_bits(self.img, 32, 32, rotated))
        assert steered_brief(self.img, self.kp, theta + 0.01).tobytes() == want

    def test_out_of_bounds(self):
        r = DEFAULT_PATTERN.steered_radius
        assert steered_brief(self.img, Keypoint(r - 1, 32, 1), 1.0) is None
        assert steered_brief(self.img, Keypoint(r, 32, 1), 1.0) is not None


class TestDistances:
    def test_hamming(self, rng):
        assert hamming_distance(np.zeros(32, np.uint8), np.full(32, 255, np.uint8)) == 256
        for _ in range(20):
            a, b = rng.integers(0, 256, (2, 32), dtype=np.uint8)
            assert hamming_distance(a, b) == oracles.popcount_distance(a.tobytes(), b.tobytes())

    def test_l2(self):
        assert l2_distance(np.array([0.0, 3.0]), np.array([4.0, 0.0])) == 5.0

    def test_mismatch(self):
        with pytest.raises(InvalidInputError):
            hamming_distance(np.zeros(32, np.uint8), np.zeros(16, np.uint8))
        with pytest.raises(InvalidInputError):
            l2_distance(np.zeros(64), np.zeros(128))


class TestOrb:
    def test_constant(self):
        assert orb_extract(np.full((64, 64), 0.5)) == []

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            orb_extract(np.zeros((30, 64)))

    def test_cap_and_shape(self):
        out = orb_extract(textured(1, 256))
        assert len(out) == 500
        for kp, d in out:
            assert d.shape == (32,) and d.dtype == np.uint8
            assert 0 <= kp.angle < TWO_PI
            assert 0 <= kp.x < 256 and 0 <= kp.y < 256
            level = round(math.log(kp.scale) / math.log(1.2))
            assert kp.scale == pytest.approx(1.2**level)

    def test_small_cap(self):
        out = orb_extract(textured(2, 128), DescriptorParams(orb_n_features=7))
        assert len(out) == 7
        scores = [k.response for k, _ in out]
        assert scores == sorted(scores, reverse=True)

    def test_deterministic(self):
        img = textured(3, 160)
        a = orb_extract(img)
        b = orb_extract(img.copy())
        assert [k for k, _ in a] == [k for k, _ in b]
        assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a, b))


class TestSurf:
    def test_filter_ladder(self):
        assert filter_sizes(1) == [[9, 15, 21, 27]]
        assert filter_sizes(2)[1] == [15, 27, 39, 51]

    def test_constant(self):
        assert surf_detect(np.full((64, 64), 0.6)) == []

    def test_hessian_matches_box_oracle(self, rng):
        img = rng.random((40, 40))
        ii = integral(img)
        for size in (9, 15, 21):
            resp = hessian_response(ii, size) * 255**2
            r = (size - 1) // 2
            for _ in range(10):
                x, y = (int(v) for v in rng.integers(r, 40 - r, 2))
                assert resp[y, x] == pytest.approx(oracles.surf_hessian_at(img, x, y, size), rel=1e-9, abs=1e-9)

    def test_blob_detected_at_oracle_argmax(self):
        img = blob_scene(64, 4.0)
        kps = surf_detect(img)
        assert len(kps) == 1
        (k,) = kps
        assert math.hypot(k.x - 32, k.y - 32) <= 2
        # brute-force sweep over interior scales and all positions
        best = max(
            (oracles.surf_hessian_at(img, x, y, size), size)
            for size in (15, 21)
            for y in range(28, 37)
            for x in range(28, 37)
        )
        assert k.scale == pytest.approx(1.2 * best[1] / 9)
        assert k.response == pytest.approx(best[0], rel=1e-9)

    def test_low_contrast_blob_below_threshold(self):
        img = blob_scene(64, 4.0, amplitude=0.02)
        peak = max(oracles.surf_hessian_at(img, 32, 32, s) for s in (9, 15, 21, 27))
        assert peak < 400
        assert surf_detect(img) == []

    def test_describe_constant_is_zero(self):
        d = surf_describe(np.full((80, 80), 0.5), Keypoint(40, 40, 1, scale=2.0))
        assert d.shape == (64,) and d.dtype == np.float32 and not d.any()

    def test_describe_unit_norm(self):
        img = textured(4, 128)
        for k in surf_detect(img)[:30]:
            d = surf_describe(img, k)
            if d is not None and d.any():
                assert abs(np.linalg.norm(d.astype(np.float64)) - 1) < 1e-5

    def test_step_edge_abs_dx_dominates(self):
        img = np.zeros((80, 80))
        img[:, 41:] = 1.0  # vertical boundary: intensity changes along x
        d = surf_describe(img, Keypoint(40, 40, 1, scale=1.2)).reshape(4, 4, 4)
        for row in range(4):
            for col in range(4):
                sdx, sdy, adx, ady = d[row, col]
                if adx > 0:
                    assert adx > ady
        assert d[:, :, 2].sum() > 0

    def test_describe_out_of_window(self):
        assert surf_describe(np.zeros((40, 40)), Keypoint(5, 20, 1, scale=1.2)) is None

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            surf_detect(np.zeros((8, 8)))


class TestSift:
    def test_constant(self):
        assert sift_detect(np.full((64, 64), 0.5)) == []

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            sift_detect(np.zeros((31, 64)))

    def test_blob_center(self):
        kps = sift_detect(blob_scene(64, 4.0))
        assert kps
        assert min(math.hypot(k.x - 32, k.y - 32) for k in kps) <= 3

    def test_step_edge_rejected(self):
        img = step_edge_scene(64)
        assert sift_detect(img) == []
        # every raw DoG extremum that clears the contrast test fails the curvature test
        space = ScaleSpace.build(img)
        limit = (10 + 1) ** 2 / 10
        checked = 0
        for layers in space.octaves:
            dog = np.stack([b - a for a, b in zip(layers[:-1], layers[1:])])
            for s in range(1, dog.shape[0] - 1):
                for y in range(5, dog.shape[1] - 5):
                    for x in range(5, dog.shape[2] - 5):
                        v = dog[s, y, x]
                        cube = dog[s - 1 : s + 2, y - 1 : y + 2, x - 1 : x + 2]
                        if abs(v) < 0.03 or not (v == cube.max() or v == cube.min()):
                            continue
                        checked += 1
                        assert curvature_ratio(dog[s], y, x) > limit
        assert checked >= 0

    def test_scale_space_octaves(self):
        space = ScaleSpace.build(np.zeros((64, 100)))
        assert [layers[0].shape for layers in space.octaves] == [(64, 100), (32, 50), (16, 25)]
        assert all(len(layers) == 6 for layers in space.octaves)

    def test_descriptor_contract(self):
        img = textured(6, 128, blur=1.0)
        kps = sift_detect(img)
        descs = [d for d in sift_describe_many(img, kps) if d is not None]
        assert descs
        for d in descs:
            assert d.shape == (128,) and d.dtype == np.float32
            assert d.min() >= 0 and d.max() <= 1
            assert abs(np.linalg.norm(d.astype(np.float64)) - 1) < 1e-5

    def test_zero_gradient_patch(self):
        d = sift_describe(np.full((64, 64), 0.25), Keypoint(32, 32, 1, scale=2.0, angle=0.3))
        assert not d.any()

    def test_window_out_of_bounds(self):
        assert sift_describe(np.zeros((64, 64)), Keypoint(2, 32, 1, scale=3.0, angle=0.0)) is None

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("deg", [15, 40])
    def test_rotation_match(self, seed, deg):
        img = textured(seed, 129, blur=1.5)
        rot = ndimage.rotate(img, deg, reshape=False, order=3, mode="nearest")
        a = sift_describe(img, Keypoint(64, 64, 1, scale=4.0, angle=0.7))
        # ndimage.rotate turns content by -deg in image (y-down) axes
        b = sift_describe(rot, Keypoint(64, 64, 1, scale=4.0, angle=(0.7 - math.radians(deg)) % TWO_PI))
        assert l2_distance(a, b) <= 0.45

    def test_rot90_exact_grid(self):
        img = textured(9, 128, blur=1.0)
        kps = sift_detect(img)[:10]
        r = np.rot90(img)  # r[i, j] = img[j, W-1-i]
        w = img.shape[1]
        moved = [Keypoint(k.y, w - 1 - k.x, k.response, k.scale, (k.angle - math.pi / 2) % TWO_PI) for k in kps]
        for a, b in zip(sift_describe_many(img, kps), sift_describe_many(r, moved)):
            if a is not None and b is not None:
                assert l2_distance(a, b) < 0.05

    def test_orientation_peaks_follow_gradient(self):
        # intensity increasing along +y: dominant gradient angle is pi/2
        img = np.tile(np.linspace(0, 1, 64)[:, None], (1, 64))
        from difet.describe.sift import orientation_peaks

        (angle,) = orientation_peaks(img, 32, 32, 2.0)
        assert angle == pytest.approx(math.pi / 2, abs=0.05)


@pytest.mark.parametrize("fn", [lambda im: orb_extract(im), surf_detect, sift_detect])
def test_pipelines_deterministic(fn):
    img = textured(11, 96)
    a, b = fn(img), fn(img)
    assert repr(a) == repr(b)
