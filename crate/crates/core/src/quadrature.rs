//! Gauss-Legendre quadrature over the uniform Cartesian mesh and the
//! element metric tensor.
//!
//! The parent element is `[-1, 1]^2` with Jacobian `diag(h_x/2, h_y/2)`.
//! Basis values at the quadrature points are precomputed once; on a uniform
//! mesh the tables are identical for every element. Because Gauss points
//! never fall on knot lines, quadrature sums realize integrals over element
//! interiors without sampling the second-derivative jumps.

use crate::spline::SplineSpace2D;

/// 1D Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Returns the `n`-point rule. Hardcoded for the orders this crate
    /// uses (2 and 3 for assembly, 6 for independent verification).
    pub fn new(n: usize) -> Self {
        let (nodes, weights): (Vec<f64>, Vec<f64>) = match n {
            1 => (vec![0.0], vec![2.0]),
            2 => {
                let a = 1.0 / 3.0f64.sqrt();
                (vec![-a, a], vec![1.0, 1.0])
            }
            3 => {
                let a = (3.0f64 / 5.0).sqrt();
                (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
            }
            6 => (
                vec![
                    -0.932469514203152028,
                    -0.661209386466264514,
                    -0.238619186083196909,
                    0.238619186083196909,
                    0.661209386466264514,
                    0.932469514203152028,
                ],
                vec![
                    0.171324492379170345,
                    0.360761573048138608,
                    0.467913934572691047,
                    0.467913934572691047,
                    0.360761573048138608,
                    0.171324492379170345,
                ],
            ),
            _ => panic!("unsupported Gauss rule order {n}"),
        };
        Self { nodes, weights }
    }
}

/// Precomputed basis data at one tensor quadrature point, for the
/// `(p+1)^2` active functions of any element (uniform mesh).
#[derive(Debug, Clone)]
pub struct PointTables {
    pub value: Vec<f64>,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
    pub laplacian: Vec<f64>,
}

/// Quadrature layout for a tensor-product spline space: per-element Gauss
/// points, combined weights and the (constant) metric tensor.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    rule: GaussRule,
    /// Parent coordinates of the tensor points, x-fastest.
    parent_points: Vec<[f64; 2]>,
    /// Gauss weight times Jacobian determinant, one per tensor point.
    combined_weights: Vec<f64>,
    tables: Vec<PointTables>,
    h: [f64; 2],
    dims: (usize, usize),
    funcs_per_element: usize,
}

impl QuadratureGrid {
    /// Builds the `(p+1)`-point tensor rule for `space`. That order
    /// integrates every mass-matrix product exactly.
    pub fn new(space: &SplineSpace2D) -> Self {
        Self::with_order(space, space.degree() + 1)
    }

    /// Same layout with an explicit 1D rule order.
    pub fn with_order(space: &SplineSpace2D, order: usize) -> Self {
        let rule = GaussRule::new(order);
        let h = [space.x.spacing, space.y.spacing];
        let jac_det = h[0] * h[1] / 4.0;
        let mut parent_points = Vec::new();
        let mut combined_weights = Vec::new();
        let mut tables = Vec::new();
        for (gy, &eta) in rule.nodes.iter().enumerate() {
            for (gx, &xi) in rule.nodes.iter().enumerate() {
                parent_points.push([xi, eta]);
                combined_weights.push(rule.weights[gx] * rule.weights[gy] * jac_det);
                let evals = space.eval_basis(0, xi, eta).expect("element 0 exists");
                tables.push(PointTables {
                    value: evals.iter().map(|e| e.value).collect(),
                    grad_x: evals.iter().map(|e| e.grad[0]).collect(),
                    grad_y: evals.iter().map(|e| e.grad[1]).collect(),
                    laplacian: evals.iter().map(|e| e.laplacian).collect(),
                });
            }
        }
        let p1 = space.degree() + 1;
        Self {
            rule,
            parent_points,
            combined_weights,
            tables,
            h,
            dims: space.element_dims(),
            funcs_per_element: p1 * p1,
        }
    }

    pub fn points_per_element(&self) -> usize {
        self.parent_points.len()
    }

    pub fn funcs_per_element(&self) -> usize {
        self.funcs_per_element
    }

    pub fn num_elements(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    pub fn rule(&self) -> &GaussRule {
        &self.rule
    }

    /// Combined weight (Gauss weight x Jacobian determinant) of point `q`.
    pub fn weight(&self, q: usize) -> f64 {
        self.combined_weights[q]
    }

    pub fn parent_point(&self, q: usize) -> [f64; 2] {
        self.parent_points[q]
    }

    /// Basis tables at point `q`; identical for every element.
    pub fn tables(&self, q: usize) -> &PointTables {
        &self.tables[q]
    }

    /// Physical position of quadrature point `q` of `element`.
    pub fn physical_point(&self, space: &SplineSpace2D, element: usize, q: usize) -> [f64; 2] {
        let (ex, ey) = space.element_coords(element);
        let [xi, eta] = self.parent_points[q];
        [
            (ex as f64 + 0.5 * (xi + 1.0)) * self.h[0],
            (ey as f64 + 0.5 * (eta + 1.0)) * self.h[1],
        ]
    }

    /// Per-element metric tensor `G = (d xi/d x)^T (d xi/d x)`. Diagonal on
    /// a Cartesian mesh and constant across elements; scales as `h^-2`.
    pub fn metric_tensor(&self) -> [[f64; 2]; 2] {
        let gx = (2.0 / self.h[0]).powi(2);
        let gy = (2.0 / self.h[1]).powi(2);
        [[gx, 0.0], [0.0, gy]]
    }

    /// Sum of all combined weights over all elements (the measured domain
    /// area).
    pub fn total_measure(&self) -> f64 {
        let per_element: f64 = self.combined_weights.iter().sum();
        per_element * self.num_elements() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::SplineSpace2D;
    use approx::assert_relative_eq;

    #[test]
    fn metric_tensor_values() {
        let s = SplineSpace2D::new(2, 16, 16, [1.0, 1.0]).unwrap();
        let g = QuadratureGrid::new(&s).metric_tensor();
        assert_relative_eq!(g[0][0], 1024.0, max_relative = 1e-14);
        assert_relative_eq!(g[1][1], 1024.0, max_relative = 1e-14);
        assert_eq!(g[0][1], 0.0);

        let s = SplineSpace2D::new(2, 16, 32, [1.0, 1.0]).unwrap();
        let g = QuadratureGrid::new(&s).metric_tensor();
        assert_relative_eq!(g[0][0], 1024.0, max_relative = 1e-14);
        assert_relative_eq!(g[1][1], 4096.0, max_relative = 1e-14);
    }

    #[test]
    fn metric_tensor_h_scaling() {
        let coarse = QuadratureGrid::new(&SplineSpace2D::new(2, 8, 8, [1.0, 1.0]).unwrap());
        let fine = QuadratureGrid::new(&SplineSpace2D::new(2, 16, 16, [1.0, 1.0]).unwrap());
        let gc = coarse.metric_tensor();
        let gf = fine.metric_tensor();
        assert_relative_eq!(gf[0][0] / gc[0][0], 4.0, max_relative = 1e-14);
        assert_relative_eq!(gf[1][1] / gc[1][1], 4.0, max_relative = 1e-14);
    }

    #[test]
    fn nine_points_with_product_weights() {
        let s = SplineSpace2D::new(2, 4, 4, [1.0, 1.0]).unwrap();
        let grid = QuadratureGrid::new(&s);
        assert_eq!(grid.points_per_element(), 9);
        let jac = 0.25 * 0.25 / 4.0;
        assert_relative_eq!(grid.weight(0), 25.0 / 81.0 * jac, max_relative = 1e-14);
        assert_relative_eq!(grid.weight(4), 64.0 / 81.0 * jac, max_relative = 1e-14);
    }

    #[test]
    fn integrates_area_and_linear_exactly() {
        let s = SplineSpace2D::new(2, 5, 7, [1.0, 1.0]).unwrap();
        let grid = QuadratureGrid::new(&s);
        assert_relative_eq!(grid.total_measure(), 1.0, max_relative = 1e-14);

        // integral of x over the unit square.
        let mut acc = 0.0;
        for e in 0..s.num_elements() {
            for q in 0..grid.points_per_element() {
                let [x, _] = grid.physical_point(&s, e, q);
                acc += grid.weight(q) * x;
            }
        }
        assert_relative_eq!(acc, 0.5, max_relative = 1e-14);
    }

    #[test]
    fn mass_matrix_symmetric_with_total_sum_area() {
        let s = SplineSpace2D::new(2, 4, 4, [1.0, 1.0]).unwrap();
        let grid = QuadratureGrid::new(&s);
        let n = s.num_functions();
        let n_loc = grid.funcs_per_element();
        let mut mass = vec![0.0; n * n];
        for e in 0..s.num_elements() {
            let conn = s.connectivity(e);
            for q in 0..grid.points_per_element() {
                let tab = grid.tables(q);
                for i in 0..n_loc {
                    for j in 0..n_loc {
                        mass[conn[i] * n + conn[j]] += grid.weight(q) * tab.value[i] * tab.value[j];
                    }
                }
            }
        }
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += mass[i * n + j];
                assert!(
                    (mass[i * n + j] - mass[j * n + i]).abs() <= 1e-14,
                    "asymmetric mass entry ({i},{j})"
                );
            }
        }
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }
}
