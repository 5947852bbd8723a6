//! Quadratic Lagrange shape functions, Gauss quadrature and per-element
//! geometry caches.

use crate::mesh::{BoundarySet, ElementKind, Mesh};

/// Three-point Gauss-Legendre rule on [-1, 1].
pub const GAUSS3_POINTS: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
pub const GAUSS3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Quadratic Lagrange basis on [-1, 1] with nodes at -1, 0, 1.
pub fn lagrange2(xi: f64) -> [f64; 3] {
    [0.5 * xi * (xi - 1.0), 1.0 - xi * xi, 0.5 * xi * (xi + 1.0)]
}

pub fn lagrange2_deriv(xi: f64) -> [f64; 3] {
    [xi - 0.5, -2.0 * xi, xi + 0.5]
}

/// Quadrature data for one set of points sharing the same element.
///
/// Arrays are flattened: `n[q * nloc + a]` is shape function `a` at point
/// `q`, `grad[(q * nloc + a)]` its physical gradient.
#[derive(Clone, Debug, Default)]
pub struct PointSet {
    pub nloc: usize,
    pub weights: Vec<f64>,
    pub x: Vec<[f64; 3]>,
    pub n: Vec<f64>,
    pub grad: Vec<[f64; 3]>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn shape(&self, q: usize) -> &[f64] {
        &self.n[q * self.nloc..(q + 1) * self.nloc]
    }

    pub fn shape_grad(&self, q: usize) -> &[[f64; 3]] {
        &self.grad[q * self.nloc..(q + 1) * self.nloc]
    }
}

/// Facet quadrature: the parent element's shape functions evaluated on the
/// facet, with the outward unit normal.
#[derive(Clone, Debug)]
pub struct FacetPoints {
    pub element: usize,
    pub set: BoundarySet,
    pub normal: [f64; 3],
    pub points: PointSet,
}

/// Precomputed quadrature for every element and boundary facet of a mesh.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub nloc: usize,
    pub elements: Vec<PointSet>,
    pub facets: Vec<FacetPoints>,
    /// Facet indices grouped by owning element.
    pub element_facets: Vec<Vec<usize>>,
    /// Integral of each nodal shape function over the domain.
    pub lumped: Vec<f64>,
}

impl Geometry {
    pub fn new(mesh: &Mesh) -> Self {
        let nloc = mesh.kind().nodes_per_element();
        let mut elements = Vec::with_capacity(mesh.n_elements());
        for e in 0..mesh.n_elements() {
            elements.push(element_points(mesh, e, None));
        }
        let mut facets = Vec::with_capacity(mesh.facets().len());
        let mut element_facets = vec![Vec::new(); mesh.n_elements()];
        for (fi, f) in mesh.facets().iter().enumerate() {
            let points = element_points(mesh, f.element, Some((f.axis, f.side)));
            let normal = match mesh.kind() {
                ElementKind::Line3 => {
                    let a = mesh.axis();
                    let s = f.side as f64;
                    [s * a[0], s * a[1], s * a[2]]
                }
                ElementKind::Hex27 => {
                    let mut n = [0.0; 3];
                    n[f.axis] = f.side as f64;
                    n
                }
            };
            element_facets[f.element].push(fi);
            facets.push(FacetPoints {
                element: f.element,
                set: f.set,
                normal,
                points,
            });
        }
        let mut lumped = vec![0.0; mesh.n_nodes()];
        for (e, ps) in elements.iter().enumerate() {
            let en = mesh.element_nodes(e);
            for q in 0..ps.len() {
                for (a, &node) in en.iter().enumerate() {
                    lumped[node] += ps.weights[q] * ps.shape(q)[a];
                }
            }
        }
        Geometry {
            nloc,
            elements,
            facets,
            element_facets,
            lumped,
        }
    }

    /// Integral of a nodal field over the domain.
    pub fn integrate_nodal(&self, values: &[f64]) -> f64 {
        self.lumped.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Quadrature points of element `e`; with `facet = Some((axis, side))` the
/// points lie on that face of the reference cell.
fn element_points(mesh: &Mesh, e: usize, facet: Option<(usize, i8)>) -> PointSet {
    let b = mesh.element_box(e);
    match mesh.kind() {
        ElementKind::Line3 => {
            let h = b.size[0];
            let axis = mesh.axis();
            let area = mesh.cross_section_area();
            let mut ps = PointSet {
                nloc: 3,
                ..Default::default()
            };
            let pts: Vec<(f64, f64)> = match facet {
                None => GAUSS3_POINTS
                    .iter()
                    .zip(GAUSS3_WEIGHTS)
                    .map(|(&x, w)| (x, w * 0.5 * h * area))
                    .collect(),
                Some((_, side)) => vec![(side as f64, area)],
            };
            for (xi, w) in pts {
                let n = lagrange2(xi);
                let dn = lagrange2_deriv(xi);
                let s = b.origin[0] + 0.5 * (xi + 1.0) * h;
                ps.weights.push(w);
                ps.x.push([s * axis[0], s * axis[1], s * axis[2]]);
                ps.n.extend_from_slice(&n);
                for d in dn {
                    let g = d * 2.0 / h;
                    ps.grad.push([g * axis[0], g * axis[1], g * axis[2]]);
                }
            }
            ps
        }
        ElementKind::Hex27 => {
            let mut ps = PointSet {
                nloc: 27,
                ..Default::default()
            };
            let half = [0.5 * b.size[0], 0.5 * b.size[1], 0.5 * b.size[2]];
            let detj = half[0] * half[1] * half[2];
            // Reference coordinates and weights per direction.
            let mut dir: [Vec<(f64, f64)>; 3] = Default::default();
            for d in 0..3 {
                dir[d] = match facet {
                    Some((axis, side)) if axis == d => vec![(side as f64, 1.0 / half[d])],
                    _ => GAUSS3_POINTS.iter().copied().zip(GAUSS3_WEIGHTS).collect(),
                };
            }
            for &(zk, wk) in &dir[2] {
                for &(yj, wj) in &dir[1] {
                    for &(xi, wi) in &dir[0] {
                        let r = [xi, yj, zk];
                        ps.weights.push(wi * wj * wk * detj);
                        ps.x.push([
                            b.origin[0] + (r[0] + 1.0) * half[0],
                            b.origin[1] + (r[1] + 1.0) * half[1],
                            b.origin[2] + (r[2] + 1.0) * half[2],
                        ]);
                        let l = [lagrange2(r[0]), lagrange2(r[1]), lagrange2(r[2])];
                        let dl = [
                            lagrange2_deriv(r[0]),
                            lagrange2_deriv(r[1]),
                            lagrange2_deriv(r[2]),
                        ];
                        for k in 0..3 {
                            for j in 0..3 {
                                for i in 0..3 {
                                    ps.n.push(l[0][i] * l[1][j] * l[2][k]);
                                    ps.grad.push([
                                        dl[0][i] * l[1][j] * l[2][k] / half[0],
                                        l[0][i] * dl[1][j] * l[2][k] / half[1],
                                        l[0][i] * l[1][j] * dl[2][k] / half[2],
                                    ]);
                                }
                            }
                        }
                    }
                }
            }
            ps
        }
    }
}

/// Nodal gradients of a nodal field (stored with `stride` values per node,
/// component `offset`), averaged over the elements sharing each node.
pub fn nodal_gradients(mesh: &Mesh, values: &[f64], stride: usize, offset: usize) -> Vec<[f64; 3]> {
    let n = mesh.n_nodes();
    let mut acc = vec![[0.0; 3]; n];
    let mut count = vec![0usize; n];
    for e in 0..mesh.n_elements() {
        let en = mesh.element_nodes(e);
        let b = mesh.element_box(e);
        match mesh.kind() {
            ElementKind::Line3 => {
                let axis = mesh.axis();
                let h = b.size[0];
                for (a, xi) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
                    let dn = lagrange2_deriv(xi);
                    let g: f64 = dn
                        .iter()
                        .zip(en)
                        .map(|(d, &i)| d * values[i * stride + offset])
                        .sum::<f64>()
                        * 2.0
                        / h;
                    for d in 0..3 {
                        acc[en[a]][d] += g * axis[d];
                    }
                    count[en[a]] += 1;
                }
            }
            ElementKind::Hex27 => {
                let half = [0.5 * b.size[0], 0.5 * b.size[1], 0.5 * b.size[2]];
                let refs = [-1.0, 0.0, 1.0];
                for (a, &node) in en.iter().enumerate() {
                    let r = [refs[a % 3], refs[(a / 3) % 3], refs[a / 9]];
                    let l = [lagrange2(r[0]), lagrange2(r[1]), lagrange2(r[2])];
                    let dl = [
                        lagrange2_deriv(r[0]),
                        lagrange2_deriv(r[1]),
                        lagrange2_deriv(r[2]),
                    ];
                    let mut g = [0.0; 3];
                    for (c, &other) in en.iter().enumerate() {
                        let (i, j, k) = (c % 3, (c / 3) % 3, c / 9);
                        let v = values[other * stride + offset];
                        g[0] += dl[0][i] * l[1][j] * l[2][k] / half[0] * v;
                        g[1] += l[0][i] * dl[1][j] * l[2][k] / half[1] * v;
                        g[2] += l[0][i] * l[1][j] * dl[2][k] / half[2] * v;
                    }
                    for d in 0..3 {
                        acc[node][d] += g[d];
                    }
                    count[node] += 1;
                }
            }
        }
    }
    for (g, c) in acc.iter_mut().zip(count) {
        for v in g.iter_mut() {
            *v /= c as f64;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, build_line_mesh};
    use approx::assert_relative_eq;

    #[test]
    fn partition_of_unity() {
        for xi in [-1.0, -0.3, 0.0, 0.71, 1.0] {
            let n = lagrange2(xi);
            let d = lagrange2_deriv(xi);
            assert_relative_eq!(n.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
            assert!(d.iter().sum::<f64>().abs() < 1e-15);
        }
        assert_eq!(lagrange2(-1.0), [1.0, 0.0, 0.0]);
        assert_eq!(lagrange2(1.0), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn gauss_rule_integrates_quintics() {
        let f = |x: f64| x.powi(4) + x.powi(5) + 1.0;
        let q: f64 = GAUSS3_POINTS
            .iter()
            .zip(GAUSS3_WEIGHTS)
            .map(|(&x, w)| w * f(x))
            .sum();
        assert_relative_eq!(q, 2.0 / 5.0 + 2.0, max_relative = 1e-14);
    }

    #[test]
    fn quadrature_of_one_is_volume() {
        let m = build_line_mesh(0.4, 80, std::f64::consts::PI * 0.025f64.powi(2), true).unwrap();
        let g = Geometry::new(&m);
        let v: f64 = g.elements.iter().flat_map(|p| p.weights.iter()).sum();
        assert_relative_eq!(v, m.volume(), max_relative = 1e-12);
        assert_relative_eq!(
            g.lumped.iter().sum::<f64>(),
            m.volume(),
            max_relative = 1e-12
        );

        let m = build_box_mesh([0.13, 0.09, 0.09], [4, 2, 3], 2).unwrap();
        let g = Geometry::new(&m);
        let v: f64 = g.elements.iter().flat_map(|p| p.weights.iter()).sum();
        assert_relative_eq!(v, m.volume(), max_relative = 1e-12);
    }

    #[test]
    fn facet_areas_and_normals() {
        let m = build_box_mesh([0.5, 0.2, 0.3], [2, 2, 2], 2).unwrap();
        let g = Geometry::new(&m);
        let inlet: f64 = g
            .facets
            .iter()
            .filter(|f| f.set == BoundarySet::Inlet)
            .inspect(|f| assert_eq!(f.normal, [0.0, 0.0, -1.0]))
            .flat_map(|f| f.points.weights.iter())
            .sum();
        assert_relative_eq!(inlet, 0.1, max_relative = 1e-12);
        let wall: f64 = g
            .facets
            .iter()
            .filter(|f| f.set == BoundarySet::Wall)
            .flat_map(|f| f.points.weights.iter())
            .sum();
        assert_relative_eq!(wall, 2.0 * (0.5 + 0.2) * 0.3, max_relative = 1e-12);
    }

    #[test]
    fn recovered_gradients_of_quadratic_in_1d() {
        let m = build_line_mesh(2.0, 4, 1.0, false).unwrap();
        let v: Vec<f64> = m.axial_coordinates().iter().map(|x| x * x).collect();
        let g = nodal_gradients(&m, &v, 1, 0);
        for (i, gi) in g.iter().enumerate() {
            assert_relative_eq!(gi[0], 2.0 * m.axial_coordinate(i), epsilon = 1e-12);
        }
        let m = build_box_mesh([1.0, 1.0, 2.0], [2, 1, 3], 2).unwrap();
        let v: Vec<f64> = m.nodes().iter().map(|p| 3.0 * p[2] - p[0]).collect();
        for gi in nodal_gradients(&m, &v, 1, 0) {
            assert_relative_eq!(gi[2], 3.0, epsilon = 1e-12);
            assert_relative_eq!(gi[0], -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradients_reproduce_linear_field() {
        let m = build_box_mesh([1.0, 2.0, 3.0], [1, 1, 1], 2).unwrap();
        let g = Geometry::new(&m);
        let en = m.element_nodes(0);
        let f = |p: [f64; 3]| 2.0 * p[0] - p[1] + 0.5 * p[2];
        let ps = &g.elements[0];
        for q in 0..ps.len() {
            let mut gr = [0.0; 3];
            for (a, &node) in en.iter().enumerate() {
                let v = f(m.node(node));
                for d in 0..3 {
                    gr[d] += v * ps.shape_grad(q)[a][d];
                }
            }
            assert_relative_eq!(gr[0], 2.0, epsilon = 1e-12);
            assert_relative_eq!(gr[1], -1.0, epsilon = 1e-12);
            assert_relative_eq!(gr[2], 0.5, epsilon = 1e-12);
        }
    }
}
