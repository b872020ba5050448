import numpy as np
import pytest

from diffeo2d import (Deformation, Grid2D, Image, Mask, NonConvergentError,
                      VectorField, bilinear_sample, compose, invert,
                      jacobian_determinant, spatial_gradient, warp_image)
from diffeo2d.errors import GridMismatchError


def gaussian_bump_deformation(grid, amp_x, amp_y, cx, cy, sigma):
    X, Y = grid.coords()
    b = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * sigma ** 2))
    return Deformation(VectorField(grid, amp_x * b, amp_y * b))


class TestGrid2D:
    def test_invariants(self):
        g = Grid2D(8, 6, 0.5)
        assert g.shape == (6, 8)
        assert g.extent == (3.5, 2.5)
        with pytest.raises(ValueError):
            Grid2D(1, 6)
        with pytest.raises(ValueError):
            Grid2D(4, 4, 0.0)

    def test_field_validation(self):
        g = Grid2D(4, 4)
        with pytest.raises(GridMismatchError):
            Image(g, np.zeros((3, 4)))
        with pytest.raises(ValueError):
            Image(g, np.full((4, 4), np.nan))
        with pytest.raises(ValueError):
            Mask(g, np.full((4, 4), 0.5))


class TestBilinearSample:
    def test_constant_image_inside(self):
        g = Grid2D(10, 10)
        img = Image.full(g, 5.0)
        for x, y in [(0.0, 0.0), (3.3, 4.7), (8.99, 0.01), (9.0, 9.0)]:
            assert bilinear_sample(img, x, y) == 5.0

    def test_pixel_center_identity(self):
        rng = np.random.default_rng(1)
        g = Grid2D(7, 5, 2.0)
        img = Image(g, rng.standard_normal(g.shape))
        for j in range(5):
            for i in range(7):
                assert bilinear_sample(img, i * 2.0, j * 2.0) == img.data[j, i]

    def test_midpoint_is_mean(self):
        # ux = x is a linear ramp; the bilinear value halfway between two
        # pixel centers is the arithmetic mean of the stored samples
        g = Grid2D(10, 10)
        X, _ = g.coords()
        f = VectorField(g, X, np.zeros(g.shape))
        sx, sy = bilinear_sample(f, 3.5, 2.0)
        assert sx == pytest.approx(0.5 * (3.0 + 4.0), abs=1e-15)
        assert sy == 0.0

    def test_image_clamps_outside(self):
        g = Grid2D(4, 4)
        data = np.arange(16.0).reshape(4, 4)
        img = Image(g, data)
        assert bilinear_sample(img, -5.0, 0.0) == data[0, 0]
        assert bilinear_sample(img, 100.0, 100.0) == data[3, 3]
        assert bilinear_sample(img, 1.0, -2.0) == data[0, 1]

    def test_field_zero_outside(self):
        g = Grid2D(4, 4)
        f = VectorField(g, np.ones(g.shape), np.ones(g.shape))
        # beyond one pixel outside the hull the zero extension is exact
        assert bilinear_sample(f, -1.5, 2.0) == (0.0, 0.0)
        assert bilinear_sample(f, 2.0, 5.0) == (0.0, 0.0)
        # within one pixel it ramps down linearly
        sx, _ = bilinear_sample(f, 3.5, 2.0)
        assert sx == pytest.approx(0.5, abs=1e-15)


class TestSpatialGradient:
    def test_constant(self):
        g = Grid2D(8, 8)
        grad = spatial_gradient(Image.full(g, 2.5))
        assert np.all(grad.ux == 0) and np.all(grad.uy == 0)

    def test_linear(self):
        g = Grid2D(16, 16, 0.5)
        X, _ = g.coords()
        grad = spatial_gradient(Image(g, 3.0 * X))
        assert np.allclose(grad.ux, 3.0, atol=1e-12)
        assert np.allclose(grad.uy, 0.0, atol=1e-12)

    def test_quadratic_exact_interior(self):
        # central differences are exact for quadratics
        g = Grid2D(12, 12, 1.0)
        X, _ = g.coords()
        grad = spatial_gradient(Image(g, X ** 2))
        interior = grad.ux[:, 1:-1]
        assert np.allclose(interior, 2.0 * X[:, 1:-1], atol=1e-12)


class TestWarpImage:
    def test_identity_exact(self):
        rng = np.random.default_rng(2)
        g = Grid2D(16, 16)
        img = Image(g, rng.standard_normal(g.shape))
        out = warp_image(img, Deformation.identity(g))
        assert np.array_equal(out.data, img.data)

    def test_translation_one_pixel(self):
        rng = np.random.default_rng(3)
        g = Grid2D(16, 16)
        img = Image(g, rng.standard_normal(g.shape))
        shift = Deformation(VectorField(g, np.ones(g.shape), np.zeros(g.shape)))
        out = warp_image(img, shift)
        # out(x) = img(x + 1px); last column clamps to the edge value
        assert np.array_equal(out.data[:, :-1], img.data[:, 1:])
        assert np.array_equal(out.data[:, -1], img.data[:, -1])

    def test_grid_mismatch(self):
        img = Image.zeros(Grid2D(8, 8))
        with pytest.raises(GridMismatchError):
            warp_image(img, Deformation.identity(Grid2D(9, 9)))

    def test_roundtrip_error_shrinks_with_refinement(self):
        # warp, then warp back with the numerically inverted deformation;
        # the residual against the original must drop under grid refinement
        errs = {}
        for n in (64, 128):
            g = Grid2D(n, n, 64.0 / n)
            X, Y = g.coords()
            img = Image(g, 0.8 * np.exp(-((X - 30.0) ** 2 + (Y - 34.0) ** 2) / 72.0))
            phi = gaussian_bump_deformation(g, 2.0, -1.5, 32.0, 30.0, 9.0)
            phi_inv = invert(phi, max_iter=200, tol=1e-4)
            once = warp_image(img, phi)
            back = warp_image(once, phi_inv)
            errs[n] = float(np.max(np.abs(back.data - img.data)))
        assert errs[64] < 0.05
        assert errs[128] < 0.7 * errs[64]


class TestCompose:
    def test_identity_left_bitwise(self):
        g = Grid2D(12, 12)
        psi = gaussian_bump_deformation(g, 1.0, 0.5, 5.0, 6.0, 3.0)
        out = compose(Deformation.identity(g), psi)
        assert np.array_equal(out.disp.ux, psi.disp.ux)
        assert np.array_equal(out.disp.uy, psi.disp.uy)

    def test_identity_right_bitwise(self):
        g = Grid2D(12, 12)
        phi = gaussian_bump_deformation(g, 1.0, 0.5, 5.0, 6.0, 3.0)
        out = compose(phi, Deformation.identity(g))
        assert np.array_equal(out.disp.ux, phi.disp.ux)

    def test_translations_add(self):
        g = Grid2D(16, 16)
        a = Deformation(VectorField(g, np.full(g.shape, 1.0), np.full(g.shape, 0.5)))
        b = Deformation(VectorField(g, np.full(g.shape, 2.0), np.full(g.shape, -0.5)))
        out = compose(a, b)
        # interior pixels see the constant displacement; the zero extension
        # only bites within max-displacement of the boundary
        inner = (slice(2, -2), slice(3, -3))
        assert np.allclose(out.disp.ux[inner], 3.0, atol=1e-14)
        assert np.allclose(out.disp.uy[inner], 0.0, atol=1e-14)

    def test_compose_with_inverse_is_identity(self):
        g = Grid2D(64, 64)
        phi = gaussian_bump_deformation(g, 2.0, 1.0, 30.0, 32.0, 8.0)
        phi_inv = invert(phi, max_iter=200, tol=1e-4)
        resid = compose(phi, phi_inv).disp.max_abs()
        assert resid < 0.05

    def test_associativity_under_refinement(self):
        errs = {}
        for n in (64, 128):
            g = Grid2D(n, n, 64.0 / n)
            phi = gaussian_bump_deformation(g, 1.5, 0.0, 24.0, 30.0, 8.0)
            psi = gaussian_bump_deformation(g, 0.0, 1.5, 36.0, 34.0, 9.0)
            chi = gaussian_bump_deformation(g, -1.0, 1.0, 30.0, 26.0, 10.0)
            left = compose(compose(phi, psi), chi)
            right = compose(phi, compose(psi, chi))
            errs[n] = max(float(np.max(np.abs(left.disp.ux - right.disp.ux))),
                          float(np.max(np.abs(left.disp.uy - right.disp.uy))))
        assert errs[128] <= errs[64] / 2.0


class TestInvert:
    def test_identity(self):
        g = Grid2D(8, 8)
        out = invert(Deformation.identity(g))
        assert out.is_identity()

    def test_small_translation_interior_exact(self):
        g = Grid2D(16, 16)
        t = 0.5
        phi = Deformation(VectorField(g, np.full(g.shape, t), np.zeros(g.shape)))
        out = invert(phi, max_iter=50, tol=1e-6)
        inner = (slice(None), slice(1, -1))
        assert np.allclose(out.disp.ux[inner], -t, atol=1e-5)

    def test_smooth_bump(self):
        g = Grid2D(64, 64)
        phi = gaussian_bump_deformation(g, 2.0, 0.0, 32.0, 32.0, 8.0)
        phi_inv = invert(phi, max_iter=100, tol=1e-3)
        assert compose(phi, phi_inv).disp.max_abs() < 0.05

    def test_large_displacement_within_10_tol(self):
        # max displacement 25% of the domain extent, vanishing near the edges
        g = Grid2D(64, 64)
        phi = gaussian_bump_deformation(g, 15.75, 0.0, 32.0, 32.0, 12.0)
        tol = 0.01
        phi_inv = invert(phi, max_iter=300, tol=tol)
        assert compose(phi, phi_inv).disp.max_abs() <= 10.0 * tol

    def test_nonconvergent_raises(self):
        # a fold (displacement gradient > 1) defeats the fixed point
        g = Grid2D(32, 32)
        phi = gaussian_bump_deformation(g, 12.0, 0.0, 16.0, 16.0, 3.0)
        with pytest.raises(NonConvergentError):
            invert(phi, max_iter=10, tol=1e-8)


class TestJacobianDeterminant:
    def test_identity(self):
        g = Grid2D(10, 10)
        det = jacobian_determinant(Deformation.identity(g))
        assert np.array_equal(det.data, np.ones(g.shape))

    def test_uniform_scaling(self):
        # phi(x) = 1.1 x in both axes: det = 1.21, exact for linear maps
        g = Grid2D(12, 12)
        X, Y = g.coords()
        phi = Deformation(VectorField(g, 0.1 * X, 0.1 * Y))
        det = jacobian_determinant(phi)
        assert np.allclose(det.data[1:-1, 1:-1], 1.21, atol=1e-12)

    def test_area_integral(self):
        # change of variables: for a deformation supported away from the
        # boundary, sum(det) h^2 equals the pixel-cell area sum(1) h^2
        n = 128
        g = Grid2D(n, n, 1.0 / (n - 1))
        phi = gaussian_bump_deformation(g, 0.02, -0.015, 0.45, 0.55, 0.12)
        det = jacobian_determinant(phi)
        h2 = g.spacing ** 2
        area = float(np.sum(det.data) * h2)
        ref = n * n * h2
        assert abs(area - ref) / ref < 1e-3

    def test_validity_flag(self):
        g = Grid2D(32, 32)
        assert Deformation.identity(g).is_valid()
        fold = gaussian_bump_deformation(g, 12.0, 0.0, 16.0, 16.0, 3.0)
        assert not fold.is_valid()
