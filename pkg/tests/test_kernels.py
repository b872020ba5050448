import numpy as np
import pytest

from diffeo2d import (DegeneratePartitionError, GaussianKernel, Grid2D, Image,
                      Mask, NotPSDError, PartitionKernel, SumKernel,
                      SymmetrizedKernel, VectorField, apply_kernel,
                      apply_kernel_transpose, make_partition_weights, reflect,
                      vnorm_sq)
from diffeo2d.errors import GridMismatchError
from diffeo2d.kernels import l2_inner
import diffeo2d.kernels as kernels_mod


def dense_gaussian_apply(data, sigma, spacing):
    """O(N^2) direct summation of the truncated grid-sampled kernel.

    Independent route: builds per-axis dense tap matrices and contracts
    them against the full array, instead of separable 1D convolution.
    """
    h, w = data.shape
    radius = int(np.ceil(4.0 * sigma / spacing))

    def taps(m):
        idx = np.arange(m)
        dist = idx[:, None] - idx[None, :]
        a = np.exp(-((dist * spacing) ** 2) / (2.0 * sigma ** 2))
        a[np.abs(dist) > radius] = 0.0
        return a

    return taps(h) @ data @ taps(w).T


def random_field(grid, seed):
    rng = np.random.default_rng(seed)
    return VectorField(grid, rng.standard_normal(grid.shape),
                       rng.standard_normal(grid.shape))


@pytest.fixture(scope="module")
def families():
    g = Grid2D(32, 32, 1.0)
    chi = np.zeros(g.shape)
    chi[:, :16] = 1.0
    weights = make_partition_weights([Mask(g, chi), Mask(g, 1.0 - chi)], 3.0)
    part = PartitionKernel([(weights[0], GaussianKernel(4.0)),
                            (weights[1], GaussianKernel(7.0))])
    return g, {
        "gaussian": GaussianKernel(5.0),
        "sum": SumKernel((GaussianKernel(3.0), GaussianKernel(8.0))),
        "symmetrized": SymmetrizedKernel(0.5, GaussianKernel(5.0)),
        "partition": part,
    }


class TestReflect:
    def test_zero(self):
        g = Grid2D(9, 7)
        out = reflect(VectorField.zeros(g))
        assert np.all(out.ux == 0) and np.all(out.uy == 0)

    @pytest.mark.parametrize("width", [8, 9])
    def test_involution_bitwise(self, width):
        g = Grid2D(width, 6)
        v = random_field(g, 5)
        rr = reflect(reflect(v))
        assert np.array_equal(rr.ux, v.ux)
        assert np.array_equal(rr.uy, v.uy)

    def test_constant_field(self):
        g = Grid2D(8, 8)
        v = VectorField(g, np.ones(g.shape), 2.0 * np.ones(g.shape))
        r = reflect(v)
        assert np.all(r.ux == -1.0)
        assert np.all(r.uy == 2.0)

    def test_self_adjoint(self):
        g = Grid2D(16, 12)
        p, q = random_field(g, 1), random_field(g, 2)
        lhs = l2_inner(reflect(p), q)
        rhs = l2_inner(p, reflect(q))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestGaussianApply:
    def test_zero_momentum(self, families):
        g, fams = families
        for spec in fams.values():
            out = apply_kernel(spec, VectorField.zeros(g))
            assert np.all(out.ux == 0) and np.all(out.uy == 0)

    def test_impulse_response_matches_formula(self):
        g = Grid2D(64, 64)
        sigma = 6.0
        imp = np.zeros(g.shape)
        imp[32, 20] = 1.0
        out = apply_kernel(GaussianKernel(sigma), VectorField(g, imp, np.zeros(g.shape)))
        X, Y = g.coords()
        analytic = np.exp(-((X - 20.0) ** 2 + (Y - 32.0) ** 2) / (2.0 * sigma ** 2))
        radius = int(np.ceil(4 * sigma))
        box = (np.abs(X - 20.0) <= radius) & (np.abs(Y - 32.0) <= radius)
        assert np.max(np.abs(out.ux - analytic)[box]) < 1e-12
        assert np.all(out.uy == 0)

    @pytest.mark.parametrize("sigma", [3.0, 6.0])
    def test_dense_oracle_direct_path(self, sigma):
        g = Grid2D(64, 64)
        p = random_field(g, 7)
        out = apply_kernel(GaussianKernel(sigma), p)
        assert np.max(np.abs(out.ux - dense_gaussian_apply(p.ux, sigma, 1.0))) < 1e-10
        assert np.max(np.abs(out.uy - dense_gaussian_apply(p.uy, sigma, 1.0))) < 1e-10

    def test_dense_oracle_fft_path(self):
        # radius > 32 switches to the FFT evaluation of the same operator
        g = Grid2D(48, 48)
        sigma = 10.0
        p = random_field(g, 8)
        out = apply_kernel(GaussianKernel(sigma), p)
        assert np.max(np.abs(out.ux - dense_gaussian_apply(p.ux, sigma, 1.0))) < 1e-10

    def test_physical_spacing(self):
        g = Grid2D(32, 32, 0.5)
        sigma = 2.0
        imp = np.zeros(g.shape)
        imp[16, 16] = 1.0
        out = apply_kernel(GaussianKernel(sigma), VectorField(g, imp, np.zeros(g.shape)))
        X, Y = g.coords()
        analytic = np.exp(-((X - 8.0) ** 2 + (Y - 8.0) ** 2) / (2.0 * sigma ** 2))
        box = (np.abs(X - 8.0) <= 4 * sigma) & (np.abs(Y - 8.0) <= 4 * sigma)
        assert np.max(np.abs(out.ux - analytic)[box]) < 1e-12


class TestSymmetrized:
    def test_c_zero_bitwise(self):
        g = Grid2D(24, 24)
        p = random_field(g, 9)
        inner = GaussianKernel(4.0)
        a = apply_kernel(SymmetrizedKernel(0.0, inner), p)
        b = apply_kernel(inner, p)
        assert np.array_equal(a.ux, b.ux)
        assert np.array_equal(a.uy, b.uy)

    @pytest.mark.parametrize("width", [24, 25])
    def test_c_one_projects(self, width):
        g = Grid2D(width, 24)
        p = random_field(g, 10)
        out = apply_kernel(SymmetrizedKernel(1.0, GaussianKernel(4.0)), p)
        r = reflect(out)
        assert np.array_equal(r.ux, out.ux)
        assert np.array_equal(r.uy, out.uy)

    def test_c_validation(self):
        with pytest.raises(ValueError):
            SymmetrizedKernel(1.5, GaussianKernel(1.0))
        with pytest.raises(ValueError):
            SymmetrizedKernel(-0.1, GaussianKernel(1.0))


class TestAlgebraInvariants:
    def test_linearity(self, families):
        g, fams = families
        p, q = random_field(g, 11), random_field(g, 12)
        a, b = 1.7, -0.4
        for name, spec in fams.items():
            lin = apply_kernel(spec, VectorField(g, a * p.ux + b * q.ux,
                                                 a * p.uy + b * q.uy))
            kp = apply_kernel(spec, p)
            kq = apply_kernel(spec, q)
            scale = max(np.max(np.abs(lin.ux)), np.max(np.abs(lin.uy)))
            err = max(np.max(np.abs(lin.ux - a * kp.ux - b * kq.ux)),
                      np.max(np.abs(lin.uy - a * kp.uy - b * kq.uy)))
            assert err / scale < 1e-10, name

    def test_self_adjointness_pairing(self, families):
        g, fams = families
        p, q = random_field(g, 13), random_field(g, 14)
        for name, spec in fams.items():
            lhs = l2_inner(p, apply_kernel(spec, q))
            rhs = l2_inner(q, apply_kernel(spec, p))
            assert abs(lhs - rhs) / abs(lhs) < 1e-10, name

    def test_transpose_matches_for_standard_families(self, families):
        g, fams = families
        p = random_field(g, 15)
        for name, spec in fams.items():
            a = apply_kernel(spec, p)
            b = apply_kernel_transpose(spec, p)
            scale = max(np.max(np.abs(a.ux)), 1e-300)
            assert np.max(np.abs(a.ux - b.ux)) / scale < 1e-12, name

    @pytest.mark.parametrize("c", [0.0, 0.5, 1.0])
    def test_psd_random_momenta(self, families, c):
        g, fams = families
        specs = list(fams.values()) + [SymmetrizedKernel(c, GaussianKernel(5.0))]
        rng = np.random.default_rng(16)
        for spec in specs:
            for _ in range(25):
                p = VectorField(g, rng.standard_normal(g.shape),
                                rng.standard_normal(g.shape))
                val = vnorm_sq(spec, p)  # raises NotPSDError when negative
                assert val >= -1e-9 * l2_inner(p, p)


class TestVnorm:
    def test_zero(self):
        g = Grid2D(16, 16)
        assert vnorm_sq(GaussianKernel(3.0), VectorField.zeros(g)) == 0.0

    def test_impulse(self):
        g = Grid2D(32, 32, 0.5)
        w = 3.0
        imp = np.zeros(g.shape)
        imp[16, 16] = w
        val = vnorm_sq(GaussianKernel(2.0), VectorField(g, imp, np.zeros(g.shape)))
        assert val == pytest.approx(w * w * 0.5 ** 2, rel=1e-14)

    def test_not_psd_raises(self, families, monkeypatch):
        g, _ = families
        monkeypatch.setattr(kernels_mod, "apply_kernel",
                            lambda spec, p: VectorField(g, -p.ux, -p.uy))
        with pytest.raises(NotPSDError):
            kernels_mod.vnorm_sq(GaussianKernel(1.0), random_field(g, 17))


class TestPartition:
    def test_single_full_weight_reduces_bitwise(self):
        g = Grid2D(24, 24)
        p = random_field(g, 18)
        inner = GaussianKernel(4.0)
        part = PartitionKernel([(Image.full(g, 1.0), inner)])
        a = apply_kernel(part, p)
        b = apply_kernel(inner, p)
        assert np.array_equal(a.ux, b.ux)
        assert np.array_equal(a.uy, b.uy)

    def test_weights_validation(self):
        g = Grid2D(8, 8)
        with pytest.raises(ValueError):
            PartitionKernel([(Image.full(g, 0.5), GaussianKernel(1.0))])

    def test_grid_mismatch(self):
        g = Grid2D(8, 8)
        part = PartitionKernel([(Image.full(g, 1.0), GaussianKernel(1.0))])
        with pytest.raises(GridMismatchError):
            apply_kernel(part, VectorField.zeros(Grid2D(9, 9)))


class TestMakePartitionWeights:
    def test_single_mask(self):
        g = Grid2D(16, 16)
        (chi,) = make_partition_weights([Mask.ones(g)], 2.0)
        assert np.allclose(chi.data, 1.0, atol=1e-15)

    def test_complementary_halves_no_blur(self):
        g = Grid2D(16, 16)
        left = np.zeros(g.shape)
        left[:, :8] = 1.0
        w = make_partition_weights([Mask(g, left), Mask(g, 1.0 - left)], 0.0)
        assert np.array_equal(w[0].data, left)
        assert np.max(np.abs(w[0].data + w[1].data - 1.0)) == 0.0

    def test_blurred_partition_sums_to_one(self):
        g = Grid2D(32, 32)
        left = np.zeros(g.shape)
        left[:, :16] = 1.0
        w = make_partition_weights([Mask(g, left), Mask(g, 1.0 - left)], 4.0)
        total = w[0].data + w[1].data
        assert np.max(np.abs(total - 1.0)) < 1e-12
        # smooth sigmoid-like transition: strictly decreasing across the seam
        row = w[0].data[16]
        assert np.all(np.diff(row[8:24]) < 0)

    def test_degenerate(self):
        g = Grid2D(16, 16)
        with pytest.raises(DegeneratePartitionError):
            make_partition_weights([Mask.zeros(g)], 1.0)
