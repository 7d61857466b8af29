//! Exact finite-dimensional realization of so(n): the Ad-invariant inner
//! product ⟨u,v⟩ = ½ tr(uᵀv), the adapted splitting so(n) = h ⊕ h⊥ relative
//! to the stabilizer of e_n, brackets, Ad, exp and the principal log.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};

/// Frobenius tolerance accepted for skew-symmetry of matrix views.
pub const SKEW_TOL: f64 = 1e-12;
/// Orthogonality defect ‖sᵀs − 1‖_F accepted for group points.
pub const ORTH_TOL: f64 = 1e-9;
/// Largest algebra-norm of a one-step increment that keeps exp(a) inside
/// the principal-log safety region: the largest rotation angle of exp(a)
/// is at most √2·‖a‖, and ‖exp(a) − 1‖₂ < 1 needs angles below π/3.
pub const SAFE_INCREMENT: f64 = std::f64::consts::FRAC_PI_3 / std::f64::consts::SQRT_2;

/// Element of so(n). The canonical storage is the skew-symmetric matrix
/// view; coordinates in the adapted orthonormal basis (Y block first, then
/// Z block) are the strict upper-triangle entries read in basis order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraVector {
    mat: DMatrix<f64>,
}

impl AlgebraVector {
    pub fn zero(n: usize) -> Self {
        Self {
            mat: DMatrix::zeros(n, n),
        }
    }

    /// Validates skew-symmetry to `SKEW_TOL` before accepting the matrix.
    pub fn from_matrix(mat: DMatrix<f64>) -> Result<Self> {
        assert_eq!(mat.nrows(), mat.ncols(), "matrix view must be square");
        let residual = (&mat + mat.transpose()).norm();
        if residual > SKEW_TOL {
            return Err(CoreError::NotSkewSymmetric { residual });
        }
        Ok(Self { mat })
    }

    /// Builds the matrix view from coordinates in the adapted basis.
    pub fn from_coords(n: usize, coords: &DVector<f64>) -> Self {
        let pairs = basis_pairs(n);
        assert_eq!(coords.len(), pairs.len(), "coordinate length must be n(n-1)/2");
        let mut mat = DMatrix::zeros(n, n);
        for (p, &(i, j)) in pairs.iter().enumerate() {
            mat[(i, j)] = coords[p];
            mat[(j, i)] = -coords[p];
        }
        Self { mat }
    }

    pub(crate) fn from_matrix_unchecked(mat: DMatrix<f64>) -> Self {
        Self { mat }
    }

    pub fn n(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Coordinates in the adapted orthonormal basis; the round trip through
    /// `from_coords` is exact.
    pub fn coords(&self) -> DVector<f64> {
        let pairs = basis_pairs(self.n());
        DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, j)| self.mat[(i, j)]))
    }

    /// ⟨u,v⟩ = ½ tr(uᵀv), i.e. half the Frobenius pairing. Panics if the
    /// dimensions differ.
    pub fn inner(&self, other: &Self) -> f64 {
        assert_eq!(self.n(), other.n(), "inner: mismatched so(n) dimensions");
        0.5 * self.mat.component_mul(&other.mat).sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// Matrix commutator [u,v] = uv − vu. Panics if the dimensions differ.
    pub fn bracket(&self, other: &Self) -> Self {
        assert_eq!(self.n(), other.n(), "bracket: mismatched so(n) dimensions");
        let uv = &self.mat * &other.mat;
        let vu = &other.mat * &self.mat;
        Self { mat: uv - vu }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            mat: &self.mat * c,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n(), other.n(), "add: mismatched so(n) dimensions");
        Self {
            mat: &self.mat + &other.mat,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.n(), other.n(), "sub: mismatched so(n) dimensions");
        Self {
            mat: &self.mat - &other.mat,
        }
    }

    /// Gaussian coordinates scaled by `scale`; handy for sampling test points.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Self {
        let m = n * (n - 1) / 2;
        let coords = DVector::from_iterator(
            m,
            (0..m).map(|_| {
                let g: f64 = rng.sample(StandardNormal);
                g * scale
            }),
        );
        Self::from_coords(n, &coords)
    }
}

/// Element of SO(n) with a tracked orthogonality defect. The stored value
/// is an upper bound on ‖sᵀs − 1‖_F: products accumulate the bound
/// d(AB) ≤ d(A) + d(B) + d(A)d(B), and re-orthonormalization resets it to
/// the exactly measured defect.
#[derive(Debug, Clone)]
pub struct GroupPoint {
    mat: DMatrix<f64>,
    orth_defect: f64,
}

fn orth_defect_of(mat: &DMatrix<f64>) -> f64 {
    let n = mat.nrows();
    (mat.transpose() * mat - DMatrix::<f64>::identity(n, n)).norm()
}

impl GroupPoint {
    pub fn identity(n: usize) -> Self {
        Self {
            mat: DMatrix::identity(n, n),
            orth_defect: 0.0,
        }
    }

    /// Validates the rotation invariants (defect < 1e−9, det = +1 to 1e−9).
    pub fn from_matrix(mat: DMatrix<f64>) -> Result<Self> {
        assert_eq!(mat.nrows(), mat.ncols(), "group point must be square");
        let orth_defect = orth_defect_of(&mat);
        let det = mat.clone().lu().determinant();
        if orth_defect >= ORTH_TOL || (det - 1.0).abs() >= 1e-9 {
            return Err(CoreError::NotARotation { orth_defect, det });
        }
        Ok(Self { mat, orth_defect })
    }

    /// For products of already-validated rotations; recomputes the defect
    /// but skips the determinant check.
    pub(crate) fn from_rotation_product(mat: DMatrix<f64>) -> Self {
        let orth_defect = orth_defect_of(&mat);
        Self { mat, orth_defect }
    }

    pub fn n(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn orth_defect(&self) -> f64 {
        self.orth_defect
    }

    pub fn compose(&self, other: &Self) -> Self {
        assert_eq!(self.n(), other.n(), "compose: mismatched dimensions");
        let d = self.orth_defect + other.orth_defect + self.orth_defect * other.orth_defect;
        Self {
            mat: &self.mat * &other.mat,
            orth_defect: d,
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            mat: self.mat.transpose(),
            orth_defect: self.orth_defect,
        }
    }

    /// Left-trivialized update s·exp(u).
    pub fn translate_exp(&self, u: &AlgebraVector) -> Self {
        self.compose(&exp_map(u))
    }
}

/// Index pairs of the adapted basis in canonical order: the Y block
/// (E_ij − E_ji for i < j ≤ n−2, lexicographic, spanning the stabilizer
/// algebra of the last axis) followed by the Z block (E_a,n−1 − E_n−1,a).
/// All indices 0-based; every element has unit norm under ⟨·,·⟩.
pub fn basis_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n - 1 {
        for j in i + 1..n - 1 {
            pairs.push((i, j));
        }
    }
    for a in 0..n - 1 {
        pairs.push((a, n - 1));
    }
    pairs
}

/// The adapted orthonormal basis of so(n) split as h ⊕ h⊥, plus the
/// structure tensor of brackets in that basis.
#[derive(Debug, Clone)]
pub struct BasisSet {
    n: usize,
    y: Vec<AlgebraVector>,
    z: Vec<AlgebraVector>,
    /// structure[(p*m + q)*m + r] = coefficient of b_r in [b_p, b_q].
    structure: Vec<f64>,
}

impl BasisSet {
    pub fn n(&self) -> usize {
        self.n
    }

    /// dim so(n) = n(n−1)/2.
    pub fn dim(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    /// dim h = (n−1)(n−2)/2.
    pub fn dim_h(&self) -> usize {
        (self.n - 1) * (self.n - 2) / 2
    }

    pub fn y(&self) -> &[AlgebraVector] {
        &self.y
    }

    pub fn z(&self) -> &[AlgebraVector] {
        &self.z
    }

    /// Basis element by flat index (Y block first, then Z block).
    pub fn element(&self, p: usize) -> &AlgebraVector {
        let k = self.dim_h();
        if p < k {
            &self.y[p]
        } else {
            &self.z[p - k]
        }
    }

    pub fn structure_coeff(&self, p: usize, q: usize, r: usize) -> f64 {
        let m = self.dim();
        self.structure[(p * m + q) * m + r]
    }

    /// Coordinate projection onto h (zeroes the Z block).
    pub fn project_h(&self, u: &AlgebraVector) -> AlgebraVector {
        let mut coords = u.coords();
        for p in self.dim_h()..self.dim() {
            coords[p] = 0.0;
        }
        AlgebraVector::from_coords(self.n, &coords)
    }

    /// Coordinate projection onto h⊥ (zeroes the Y block).
    pub fn project_hperp(&self, u: &AlgebraVector) -> AlgebraVector {
        let mut coords = u.coords();
        for p in 0..self.dim_h() {
            coords[p] = 0.0;
        }
        AlgebraVector::from_coords(self.n, &coords)
    }
}

/// Builds the adapted basis for so(n), n ≥ 3. The h⊥ block and the quotient
/// sphere degenerate for smaller n, so those are rejected.
pub fn build_basis(n: usize) -> Result<BasisSet> {
    if n < 3 {
        return Err(CoreError::DimensionTooSmall(n));
    }
    let m = n * (n - 1) / 2;
    let k = (n - 1) * (n - 2) / 2;
    let pairs = basis_pairs(n);

    let mut elements = Vec::with_capacity(m);
    for &(i, j) in &pairs {
        let mut mat = DMatrix::zeros(n, n);
        mat[(i, j)] = 1.0;
        mat[(j, i)] = -1.0;
        elements.push(AlgebraVector::from_matrix_unchecked(mat));
    }

    let mut structure = vec![0.0; m * m * m];
    for p in 0..m {
        for q in 0..m {
            let br = elements[p].bracket(&elements[q]);
            let coords = br.coords();
            for r in 0..m {
                structure[(p * m + q) * m + r] = coords[r];
            }
        }
    }

    let z = elements.split_off(k);
    Ok(BasisSet {
        n,
        y: elements,
        z,
        structure,
    })
}

/// Ad(s)u = s u sᵀ.
pub fn ad(s: &GroupPoint, u: &AlgebraVector) -> AlgebraVector {
    assert_eq!(s.n(), u.n(), "Ad: mismatched dimensions");
    AlgebraVector::from_matrix_unchecked(s.matrix() * u.matrix() * s.matrix().transpose())
}

/// Matrix exponential of the skew view via scaling-and-squaring with a
/// diagonal Padé [6/6] kernel. A diagonal Padé approximant of a skew
/// matrix is exactly orthogonal (numerator and denominator are mutually
/// commuting transposes), so the defect of the result sits at round-off;
/// it is recorded as a constant bound rather than recomputed.
pub fn exp_map(u: &AlgebraVector) -> GroupPoint {
    GroupPoint {
        mat: expm(u.matrix()),
        orth_defect: 1e-14,
    }
}

pub(crate) fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().column_sum().max();
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-squarings);

    // Padé [6/6] with even/odd Horner assembly:
    // N = E + A·O, D = E − A·O with E, O even polynomials in A².
    const C: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let mut even = DMatrix::zeros(n, n);
    let mut odd_inner = DMatrix::zeros(n, n);
    for i in 0..n {
        even[(i, i)] = C[0];
        odd_inner[(i, i)] = C[1];
    }
    for idx in 0..n * n {
        even[idx] += C[2] * a2[idx] + C[4] * a4[idx] + C[6] * a6[idx];
        odd_inner[idx] += C[3] * a2[idx] + C[5] * a4[idx];
    }
    let odd = &scaled * odd_inner;
    let numerator = &even + &odd;
    let denominator = even - odd;
    let mut result = denominator
        .lu()
        .solve(&numerator)
        .expect("Padé denominator is invertible within the scaling region");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Largest singular value, used for the principal-branch safety check.
fn spectral_norm(mat: &DMatrix<f64>) -> f64 {
    mat.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

fn sqrtm_denman_beavers(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..60 {
        let y_inv = y
            .clone()
            .try_inverse()
            .ok_or_else(|| CoreError::NotSpd("singular iterate in matrix square root".into()))?;
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| CoreError::NotSpd("singular iterate in matrix square root".into()))?;
        let y_next = (&y + z_inv) * 0.5;
        let z_next = (&z + y_inv) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta < 1e-15 * y.norm().max(1.0) {
            break;
        }
    }
    Ok(y)
}

/// Principal matrix logarithm via inverse scaling-and-squaring. Requires
/// ‖s − 1‖₂ < 1; callers outside that region get an explicit error, which
/// signals that an integration step was too large.
pub fn log_map(s: &GroupPoint) -> Result<AlgebraVector> {
    let n = s.n();
    let eye = DMatrix::<f64>::identity(n, n);
    let norm = spectral_norm(&(s.matrix() - &eye));
    if norm >= 1.0 {
        return Err(CoreError::LogOutsideSafetyRegion { norm });
    }

    let mut a = s.matrix().clone();
    let mut squarings = 0u32;
    while (&a - &eye).norm() > 0.25 {
        a = sqrtm_denman_beavers(&a)?;
        squarings += 1;
        if squarings > 40 {
            return Err(CoreError::LogOutsideSafetyRegion { norm });
        }
    }

    // log(1 + x) by alternating series; ‖x‖_F ≤ 0.25 so 30 terms reach
    // round-off level.
    let x = &a - &eye;
    let mut term = x.clone();
    let mut acc = x.clone();
    for j in 2..=30 {
        term *= &x;
        let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
        acc += &term * (sign / j as f64);
    }
    acc *= 2f64.powi(squarings as i32);

    // The principal log of a rotation is skew; project out round-off.
    let skew = (&acc - acc.transpose()) * 0.5;
    Ok(AlgebraVector::from_matrix_unchecked(skew))
}

/// Approximately Haar-distributed rotation: QR of a Gaussian matrix with
/// the R-diagonal sign fix, then a determinant fix into SO(n).
pub fn random_group_point<R: Rng + ?Sized>(rng: &mut R, n: usize) -> GroupPoint {
    GroupPoint::from_rotation_product(random_orthogonal(rng, n))
}

/// Haar-ish orthogonal matrix with det +1, any dimension ≥ 1.
pub(crate) fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    let gauss = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for i in 0..dim {
        if r[(i, i)] < 0.0 {
            for row in 0..dim {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }
    if q.clone().lu().determinant() < 0.0 {
        for row in 0..dim {
            q[(row, 0)] = -q[(row, 0)];
        }
    }
    q
}

/// Nearest rotation in Frobenius norm (polar projection); resets the
/// orthogonality defect to round-off level.
pub fn reorthonormalize(s: &GroupPoint) -> GroupPoint {
    let svd = s.matrix().clone().svd(true, true);
    let u = svd.u.expect("SVD of a finite matrix");
    let v_t = svd.v_t.expect("SVD of a finite matrix");
    GroupPoint::from_rotation_product(u * v_t)
}

/// Embeds r ∈ SO(n−1) as the block rotation fixing the last axis, i.e. an
/// element of the stabilizer subgroup H.
pub fn embed_stabilizer(r: &DMatrix<f64>, n: usize) -> GroupPoint {
    assert_eq!(r.nrows(), n - 1, "stabilizer block must be (n−1)×(n−1)");
    let mut mat = DMatrix::identity(n, n);
    mat.view_mut((0, 0), (n - 1, n - 1)).copy_from(r);
    GroupPoint::from_rotation_product(mat)
}

/// Random element of the stabilizer H = SO(n−1) ⊂ SO(n).
pub fn random_stabilizer<R: Rng + ?Sized>(rng: &mut R, n: usize) -> GroupPoint {
    embed_stabilizer(&random_orthogonal(rng, n - 1), n)
}
