//! Periodic tensor-product B-spline spaces on uniform knot vectors.
//!
//! Degrees 1 and 2 are supported. Periodicity is realized by index
//! arithmetic modulo the number of elements, so the space has exactly
//! `m` basis functions per direction and all system matrices stay square.
//! Values and derivatives are returned in physical coordinates.

use crate::error::{Error, Result};
use crate::linsolve::{LinearSolver, SystemStructure};
use crate::quadrature::QuadratureGrid;

/// One-dimensional periodic B-spline space of degree `p` on `m` uniform
/// elements covering `[0, length)`.
#[derive(Debug, Clone)]
pub struct SplineSpace1D {
    pub degree: usize,
    pub num_elements: usize,
    pub length: f64,
    pub spacing: f64,
    /// Extended uniform knot vector in physical units, `knots[j] = (j - p) h`.
    knots: Vec<f64>,
}

/// Value and first two physical derivatives of one basis function at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl SplineSpace1D {
    /// Builds the space. `m >= p + 1` is required so the wrap-around
    /// identification leaves every basis function single-valued on an element.
    pub fn new(degree: usize, num_elements: usize, length: f64) -> Result<Self> {
        if degree != 1 && degree != 2 {
            return Err(Error::InvalidConfig(format!(
                "spline degree must be 1 or 2, got {degree}"
            )));
        }
        if num_elements < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 elements per direction, got {num_elements}"
            )));
        }
        if !(length > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "domain length must be positive, got {length}"
            )));
        }
        let h = length / num_elements as f64;
        let knots = (0..=num_elements + 2 * degree)
            .map(|j| (j as isize - degree as isize) as f64 * h)
            .collect();
        Ok(Self {
            degree,
            num_elements,
            length,
            spacing: h,
            knots,
        })
    }

    /// Number of periodic basis functions (equals the element count).
    pub fn num_functions(&self) -> usize {
        self.num_elements
    }

    /// Global indices of the `p+1` functions active on `element`,
    /// ordered leftmost support first.
    pub fn active_functions(&self, element: usize) -> Vec<usize> {
        let m = self.num_elements as isize;
        (0..=self.degree)
            .map(|a| {
                let i = element as isize - self.degree as isize + a as isize;
                i.rem_euclid(m) as usize
            })
            .collect()
    }

    /// Evaluates the active basis functions on `element` at parent
    /// coordinate `xi` in `[-1, 1]`. Values and derivatives are physical
    /// (the chain rule with `d xi / dx = 2/h` is already applied, since the
    /// knot vector carries physical units).
    pub fn eval_basis(&self, element: usize, xi: f64) -> Result<Vec<BasisEval>> {
        if element >= self.num_elements {
            return Err(Error::IndexOutOfRange(format!(
                "element {element} out of range (m = {})",
                self.num_elements
            )));
        }
        let x = (element as f64 + 0.5 * (xi + 1.0)) * self.spacing;
        Ok(self.eval_in_element(element, x))
    }

    /// Evaluates at physical coordinate `x` (wrapped into `[0, length)`),
    /// returning `(element, evaluations)`.
    pub fn eval_at(&self, x: f64) -> (usize, Vec<BasisEval>) {
        let xw = x.rem_euclid(self.length);
        let mut element = (xw / self.spacing).floor() as usize;
        if element >= self.num_elements {
            element = self.num_elements - 1;
        }
        (element, self.eval_in_element(element, xw))
    }

    fn eval_in_element(&self, element: usize, x: f64) -> Vec<BasisEval> {
        let p = self.degree;
        // Extended-index span: knots[span] <= x < knots[span + 1].
        let span = element + p;
        let ders = ders_basis_funs(span, x, p, 2, &self.knots);
        (0..=p)
            .map(|a| BasisEval {
                value: ders[0][a],
                d1: ders[1][a],
                d2: ders[2][a],
            })
            .collect()
    }
}

/// Cox-de Boor evaluation of the `p+1` non-vanishing basis functions and
/// derivatives up to `n_ders` at `u` in span `span`. Derivative orders
/// beyond the degree are returned as exact zeros.
fn ders_basis_funs(span: usize, u: f64, p: usize, n_ders: usize, knots: &[f64]) -> Vec<Vec<f64>> {
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let n_out = n_ders.min(p);
    let mut ders = vec![vec![0.0; p + 1]; n_ders + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }

    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let mut s1 = 0usize;
        let mut s2 = 1usize;
        a[0][0] = 1.0;
        for k in 1..=n_out {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p as isize - k as isize;
            if rk >= 0 {
                a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk as usize];
            }
            let j1 = if rk >= -1 { 1usize } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk { k - 1 } else { p - r };
            for j in j1..=j2 {
                a[s2][j] =
                    (a[s1][j] - a[s1][j - 1]) / ndu[(pk + 1) as usize][(rk + j as isize) as usize];
                d += a[s2][j] * ndu[(rk + j as isize) as usize][pk as usize];
            }
            if r as isize <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[(pk + 1) as usize][r];
                d += a[s2][k] * ndu[r][pk as usize];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }

    let mut factor = p as f64;
    for k in 1..=n_out {
        for j in 0..=p {
            ders[k][j] *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

/// Tensor-product space of two periodic 1D factors. Global function index
/// is `ix + m_x * iy`.
#[derive(Debug, Clone)]
pub struct SplineSpace2D {
    pub x: SplineSpace1D,
    pub y: SplineSpace1D,
}

/// Value, physical gradient and Laplacian of one tensor basis function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisEval2D {
    pub value: f64,
    pub grad: [f64; 2],
    pub laplacian: f64,
}

impl SplineSpace2D {
    pub fn new(degree: usize, m_x: usize, m_y: usize, lengths: [f64; 2]) -> Result<Self> {
        Ok(Self {
            x: SplineSpace1D::new(degree, m_x, lengths[0])?,
            y: SplineSpace1D::new(degree, m_y, lengths[1])?,
        })
    }

    pub fn degree(&self) -> usize {
        self.x.degree
    }

    /// Total number of global basis functions `N = m_x * m_y`.
    pub fn num_functions(&self) -> usize {
        self.x.num_functions() * self.y.num_functions()
    }

    pub fn num_elements(&self) -> usize {
        self.x.num_elements * self.y.num_elements
    }

    pub fn element_dims(&self) -> (usize, usize) {
        (self.x.num_elements, self.y.num_elements)
    }

    pub fn domain_area(&self) -> f64 {
        self.x.length * self.y.length
    }

    /// Splits a flat element index into `(ex, ey)`.
    pub fn element_coords(&self, element: usize) -> (usize, usize) {
        (
            element % self.x.num_elements,
            element / self.x.num_elements,
        )
    }

    /// Global indices of the `(p+1)^2` functions active on `element`,
    /// x-fastest, matching the ordering of [`SplineSpace2D::eval_basis`].
    pub fn connectivity(&self, element: usize) -> Vec<usize> {
        let (ex, ey) = self.element_coords(element);
        let ax = self.x.active_functions(ex);
        let ay = self.y.active_functions(ey);
        let m_x = self.x.num_functions();
        let mut out = Vec::with_capacity(ax.len() * ay.len());
        for &iy in &ay {
            for &ix in &ax {
                out.push(ix + m_x * iy);
            }
        }
        out
    }

    /// Evaluates all active functions on `element` at parent coordinates
    /// `(xi, eta)`, each in `[-1, 1]`. The Laplacian is
    /// `d2/dx2 + d2/dy2`; tensor cross derivatives do not enter it.
    pub fn eval_basis(&self, element: usize, xi: f64, eta: f64) -> Result<Vec<BasisEval2D>> {
        if element >= self.num_elements() {
            return Err(Error::IndexOutOfRange(format!(
                "element {element} out of range ({})",
                self.num_elements()
            )));
        }
        let (ex, ey) = self.element_coords(element);
        let bx = self.x.eval_basis(ex, xi)?;
        let by = self.y.eval_basis(ey, eta)?;
        Ok(tensor_combine(&bx, &by))
    }

    /// Evaluates at a physical point (periodic wrap), returning the element
    /// index and the active evaluations.
    pub fn eval_at(&self, x: f64, y: f64) -> (usize, Vec<BasisEval2D>) {
        let (ex, bx) = self.x.eval_at(x);
        let (ey, by) = self.y.eval_at(y);
        (ex + self.x.num_elements * ey, tensor_combine(&bx, &by))
    }

    /// Evaluates the spline field with the given coefficients at `(x, y)`.
    pub fn field_value(&self, coeffs: &[f64], x: f64, y: f64) -> f64 {
        let (element, evals) = self.eval_at(x, y);
        let conn = self.connectivity(element);
        conn.iter()
            .zip(&evals)
            .map(|(&g, e)| coeffs[g] * e.value)
            .sum()
    }
}

fn tensor_combine(bx: &[BasisEval], by: &[BasisEval]) -> Vec<BasisEval2D> {
    let mut out = Vec::with_capacity(bx.len() * by.len());
    for ey in by {
        for ex in bx {
            out.push(BasisEval2D {
                value: ex.value * ey.value,
                grad: [ex.d1 * ey.value, ex.value * ey.d1],
                laplacian: ex.d2 * ey.value + ex.value * ey.d2,
            });
        }
    }
    out
}

/// L2-projects a pointwise function onto the spline space: the returned
/// coefficients minimize the L2 distance between the spline field and `f`.
/// Functions that lie in the span are reproduced to solver tolerance.
pub fn project_l2<F>(space: &SplineSpace2D, grid: &QuadratureGrid, f: F) -> Result<Vec<f64>>
where
    F: Fn(f64, f64) -> f64,
{
    let n = space.num_functions();
    let n_loc = grid.funcs_per_element();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut rhs = vec![0.0; n];

    // The mass block is element-independent on a uniform mesh.
    let mut local = vec![0.0; n_loc * n_loc];
    for q in 0..grid.points_per_element() {
        let w = grid.weight(q);
        let tab = grid.tables(q);
        for i in 0..n_loc {
            for j in 0..n_loc {
                local[i * n_loc + j] += w * tab.value[i] * tab.value[j];
            }
        }
    }

    for e in 0..space.num_elements() {
        let conn = space.connectivity(e);
        for (i, &gi) in conn.iter().enumerate() {
            for (j, &gj) in conn.iter().enumerate() {
                triplets.push((gi, gj, local[i * n_loc + j]));
            }
            for q in 0..grid.points_per_element() {
                let [x, y] = grid.physical_point(space, e, q);
                rhs[gi] += grid.weight(q) * grid.tables(q).value[i] * f(x, y);
            }
        }
    }

    let matrix = crate::linsolve::CsrMatrix::from_triplets(n, n, &triplets);
    let structure = SystemStructure::BlockCirculant {
        m_x: space.x.num_functions(),
        m_y: space.y.num_functions(),
        blocks: 1,
    };
    let solver = LinearSolver::prepare(&matrix, structure)?;
    // Mass matrices of B-splines are well conditioned; failure here is a bug.
    solver.solve(&matrix, &rhs)
}

/// Quadrature L2 norm of `spline(coeffs) - f` over the domain.
pub fn projection_residual<F>(
    space: &SplineSpace2D,
    grid: &QuadratureGrid,
    coeffs: &[f64],
    f: F,
) -> f64
where
    F: Fn(f64, f64) -> f64,
{
    let n_loc = grid.funcs_per_element();
    let mut acc = 0.0;
    for e in 0..space.num_elements() {
        let conn = space.connectivity(e);
        for q in 0..grid.points_per_element() {
            let tab = grid.tables(q);
            let mut v = 0.0;
            for i in 0..n_loc {
                v += coeffs[conn[i]] * tab.value[i];
            }
            let [x, y] = grid.physical_point(space, e, q);
            let d = v - f(x, y);
            acc += grid.weight(q) * d * d;
        }
    }
    acc.sqrt()
}
