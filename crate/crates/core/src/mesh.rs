//! Structured quadratic-Lagrange meshes.
//!
//! Two families are supported: a 1D axial line of 3-node elements carrying a
//! constant cross-section area, and a 3D axis-aligned box of 27-node
//! hexahedra. Both tag their boundary facets as inlet (bottom of the flow
//! axis), outlet (top) or wall.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundarySet {
    Inlet,
    Outlet,
    Wall,
}

impl BoundarySet {
    pub const ALL: [BoundarySet; 3] = [BoundarySet::Inlet, BoundarySet::Outlet, BoundarySet::Wall];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    /// 3-node quadratic line.
    Line3,
    /// 27-node triquadratic hexahedron.
    Hex27,
}

impl ElementKind {
    pub fn nodes_per_element(self) -> usize {
        match self {
            ElementKind::Line3 => 3,
            ElementKind::Hex27 => 27,
        }
    }

    pub fn reference_dim(self) -> usize {
        match self {
            ElementKind::Line3 => 1,
            ElementKind::Hex27 => 3,
        }
    }
}

/// A boundary facet: the face of `element` where reference coordinate
/// `axis` equals `side` (-1 or +1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Facet {
    pub element: usize,
    pub set: BoundarySet,
    pub axis: usize,
    pub side: i8,
}

/// Axis-aligned element extent. For line elements only `origin` and
/// `size[0]` are meaningful and the reference axis maps onto `Mesh::axis`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementBox {
    pub origin: [f64; 3],
    pub size: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct Mesh {
    kind: ElementKind,
    nodes: Vec<[f64; 3]>,
    /// Axial (flow-direction) coordinate of every node.
    axial: Vec<f64>,
    connectivity: Vec<usize>,
    boxes: Vec<ElementBox>,
    facets: Vec<Facet>,
    /// Unit vector of the flow axis in physical space.
    axis: [f64; 3],
    /// Index of the physical axis the flow runs along (box meshes).
    flow_axis: usize,
    length: f64,
    /// Cross-section area; for box meshes the product of transverse extents.
    area: f64,
    vertical: bool,
}

impl Mesh {
    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.kind.reference_dim()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.boxes.len()
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [f64; 3] {
        self.nodes[i]
    }

    pub fn axial_coordinate(&self, i: usize) -> f64 {
        self.axial[i]
    }

    pub fn axial_coordinates(&self) -> &[f64] {
        &self.axial
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        let n = self.kind.nodes_per_element();
        &self.connectivity[e * n..(e + 1) * n]
    }

    pub fn element_box(&self, e: usize) -> &ElementBox {
        &self.boxes[e]
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn axis(&self) -> [f64; 3] {
        self.axis
    }

    pub fn flow_axis(&self) -> usize {
        self.flow_axis
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cross_section_area(&self) -> f64 {
        self.area
    }

    pub fn is_vertical(&self) -> bool {
        self.vertical
    }

    pub fn volume(&self) -> f64 {
        self.length * self.area
    }

    pub fn element_volume(&self, e: usize) -> f64 {
        let b = &self.boxes[e];
        match self.kind {
            ElementKind::Line3 => b.size[0] * self.area,
            ElementKind::Hex27 => b.size[0] * b.size[1] * b.size[2],
        }
    }

    /// Sorted, de-duplicated nodes lying on facets of `set`.
    pub fn boundary_nodes(&self, set: BoundarySet) -> Vec<usize> {
        let mut out = Vec::new();
        for f in self.facets.iter().filter(|f| f.set == set) {
            out.extend(self.facet_nodes(f));
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Element-local indices of the nodes on a facet.
    pub fn facet_local_nodes(&self, f: &Facet) -> Vec<usize> {
        match self.kind {
            ElementKind::Line3 => vec![if f.side < 0 { 0 } else { 2 }],
            ElementKind::Hex27 => {
                let fixed = if f.side < 0 { 0 } else { 2 };
                let mut v = Vec::with_capacity(9);
                for k in 0..3 {
                    for j in 0..3 {
                        for i in 0..3 {
                            let idx = [i, j, k];
                            if idx[f.axis] == fixed {
                                v.push(i + 3 * j + 9 * k);
                            }
                        }
                    }
                }
                v
            }
        }
    }

    pub fn facet_nodes(&self, f: &Facet) -> Vec<usize> {
        let en = self.element_nodes(f.element);
        self.facet_local_nodes(f)
            .into_iter()
            .map(|l| en[l])
            .collect()
    }

    /// Writes `node,x,y,z` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "node,x,y,z")?;
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(w, "{},{:.16e},{:.16e},{:.16e}", i, p[0], p[1], p[2])?;
        }
        Ok(())
    }
}

/// Builds a line of `n_elements` quadratic elements. The inlet is the node at
/// axial coordinate 0; for a vertical mesh the axis is `z` so elevation equals
/// the axial coordinate, otherwise the axis is `x` and `z` is identically 0.
pub fn build_line_mesh(length: f64, n_elements: usize, area: f64, vertical: bool) -> Result<Mesh> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidGeometry(format!(
            "length must be positive, got {length}"
        )));
    }
    if !(area > 0.0 && area.is_finite()) {
        return Err(Error::InvalidGeometry(format!(
            "area must be positive, got {area}"
        )));
    }
    if n_elements == 0 {
        return Err(Error::InvalidGeometry(
            "line mesh needs at least one element".into(),
        ));
    }
    let axis = if vertical {
        [0.0, 0.0, 1.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let n_nodes = 2 * n_elements + 1;
    let h = length / n_elements as f64;
    let mut nodes = Vec::with_capacity(n_nodes);
    let mut axial = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        // i/2 * h keeps element ends exact multiples of h
        let s = if i == n_nodes - 1 {
            length
        } else {
            (i / 2) as f64 * h + (i % 2) as f64 * 0.5 * h
        };
        axial.push(s);
        nodes.push([s * axis[0], s * axis[1], s * axis[2]]);
    }
    let mut connectivity = Vec::with_capacity(3 * n_elements);
    let mut boxes = Vec::with_capacity(n_elements);
    for e in 0..n_elements {
        connectivity.extend_from_slice(&[2 * e, 2 * e + 1, 2 * e + 2]);
        let s0 = axial[2 * e];
        let s1 = axial[2 * e + 2];
        boxes.push(ElementBox {
            origin: [s0, 0.0, 0.0],
            size: [s1 - s0, 0.0, 0.0],
        });
    }
    let facets = vec![
        Facet {
            element: 0,
            set: BoundarySet::Inlet,
            axis: 0,
            side: -1,
        },
        Facet {
            element: n_elements - 1,
            set: BoundarySet::Outlet,
            axis: 0,
            side: 1,
        },
    ];
    Ok(Mesh {
        kind: ElementKind::Line3,
        nodes,
        axial,
        connectivity,
        boxes,
        facets,
        axis,
        flow_axis: if vertical { 2 } else { 0 },
        length,
        area,
        vertical,
    })
}

/// Builds a box of `counts[0] x counts[1] x counts[2]` triquadratic
/// hexahedra. Flow runs along `vertical_axis`; the inlet is the face at its
/// minimum, the outlet the opposite face, all other faces are walls. The mesh
/// counts as vertical when the flow axis is `z` (index 2).
pub fn build_box_mesh(lengths: [f64; 3], counts: [usize; 3], vertical_axis: usize) -> Result<Mesh> {
    if vertical_axis > 2 {
        return Err(Error::InvalidGeometry(format!(
            "axis index {vertical_axis} out of range"
        )));
    }
    for d in 0..3 {
        if !(lengths[d] > 0.0 && lengths[d].is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "extent {d} must be positive"
            )));
        }
        if counts[d] == 0 {
            return Err(Error::InvalidGeometry(format!(
                "element count {d} must be positive"
            )));
        }
    }
    let np = [2 * counts[0] + 1, 2 * counts[1] + 1, 2 * counts[2] + 1];
    // Number nodes with the flow axis slowest so the matrix band stays narrow.
    let order: [usize; 3] = match vertical_axis {
        0 => [1, 2, 0],
        1 => [0, 2, 1],
        _ => [0, 1, 2],
    };
    let node_id = |g: [usize; 3]| -> usize {
        let (a, b, c) = (order[0], order[1], order[2]);
        g[a] + np[a] * (g[b] + np[b] * g[c])
    };
    let h = [
        lengths[0] / counts[0] as f64,
        lengths[1] / counts[1] as f64,
        lengths[2] / counts[2] as f64,
    ];
    let coord = |d: usize, i: usize| -> f64 {
        if i == np[d] - 1 {
            lengths[d]
        } else {
            (i / 2) as f64 * h[d] + (i % 2) as f64 * 0.5 * h[d]
        }
    };
    let n_nodes = np[0] * np[1] * np[2];
    let mut nodes = vec![[0.0; 3]; n_nodes];
    let mut axial = vec![0.0; n_nodes];
    for k in 0..np[2] {
        for j in 0..np[1] {
            for i in 0..np[0] {
                let g = [i, j, k];
                let id = node_id(g);
                let p = [coord(0, i), coord(1, j), coord(2, k)];
                nodes[id] = p;
                axial[id] = p[vertical_axis];
            }
        }
    }
    let n_el = counts[0] * counts[1] * counts[2];
    let mut connectivity = Vec::with_capacity(27 * n_el);
    let mut boxes = Vec::with_capacity(n_el);
    let mut facets = Vec::new();
    // Element ordering follows the node ordering (flow axis slowest).
    let (a, b, c) = (order[0], order[1], order[2]);
    for ec in 0..counts[c] {
        for eb in 0..counts[b] {
            for ea in 0..counts[a] {
                let mut e = [0usize; 3];
                e[a] = ea;
                e[b] = eb;
                e[c] = ec;
                let eid = boxes.len();
                for lk in 0..3 {
                    for lj in 0..3 {
                        for li in 0..3 {
                            connectivity.push(node_id([
                                2 * e[0] + li,
                                2 * e[1] + lj,
                                2 * e[2] + lk,
                            ]));
                        }
                    }
                }
                let origin = [coord(0, 2 * e[0]), coord(1, 2 * e[1]), coord(2, 2 * e[2])];
                let far = [
                    coord(0, 2 * e[0] + 2),
                    coord(1, 2 * e[1] + 2),
                    coord(2, 2 * e[2] + 2),
                ];
                boxes.push(ElementBox {
                    origin,
                    size: [far[0] - origin[0], far[1] - origin[1], far[2] - origin[2]],
                });
                for d in 0..3 {
                    for (side, at_edge) in [(-1i8, e[d] == 0), (1i8, e[d] == counts[d] - 1)] {
                        if !at_edge {
                            continue;
                        }
                        let set = if d == vertical_axis {
                            if side < 0 {
                                BoundarySet::Inlet
                            } else {
                                BoundarySet::Outlet
                            }
                        } else {
                            BoundarySet::Wall
                        };
                        facets.push(Facet {
                            element: eid,
                            set,
                            axis: d,
                            side,
                        });
                    }
                }
            }
        }
    }
    let mut axis = [0.0; 3];
    axis[vertical_axis] = 1.0;
    let area = (0..3)
        .filter(|&d| d != vertical_axis)
        .map(|d| lengths[d])
        .product();
    Ok(Mesh {
        kind: ElementKind::Hex27,
        nodes,
        axial,
        connectivity,
        boxes,
        facets,
        axis,
        flow_axis: vertical_axis,
        length: lengths[vertical_axis],
        area,
        vertical: vertical_axis == 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn hendry_column_line_mesh() {
        let m = build_line_mesh(0.40, 80, PI * 0.025 * 0.025, true).unwrap();
        assert_eq!(m.n_nodes(), 161);
        assert_eq!(m.boundary_nodes(BoundarySet::Inlet), vec![0]);
        assert_eq!(m.node(0)[2], 0.0);
        assert_eq!(m.boundary_nodes(BoundarySet::Outlet), vec![160]);
        assert_eq!(m.node(160)[2], 0.40);
    }

    #[test]
    fn single_element_horizontal() {
        let m = build_line_mesh(2.5, 1, 1.0, false).unwrap();
        assert_eq!(m.n_nodes(), 3);
        assert!(m.nodes().iter().all(|p| p[2] == 0.0));
    }

    #[test]
    fn uniform_spacing() {
        let m = build_line_mesh(300.0, 150, 1.0, false).unwrap();
        assert_eq!(m.n_nodes(), 301);
        for i in 1..m.n_nodes() {
            let d = m.axial_coordinate(i) - m.axial_coordinate(i - 1);
            assert!((d - 1.0).abs() < 1e-12, "spacing {d}");
        }
        for e in 0..m.n_elements() {
            assert!((m.element_box(e).size[0] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_geometry() {
        assert!(matches!(
            build_line_mesh(0.0, 4, 1.0, true),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(matches!(
            build_line_mesh(1.0, 4, -1.0, true),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(matches!(
            build_line_mesh(1.0, 0, 1.0, true),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(build_box_mesh([1.0, 1.0, 1.0], [1, 0, 1], 2).is_err());
        assert!(build_box_mesh([1.0, 0.0, 1.0], [1, 1, 1], 2).is_err());
    }

    #[test]
    fn box_counts() {
        let m = build_box_mesh([0.09, 0.09, 0.13], [3, 3, 8], 2).unwrap();
        assert_eq!(m.n_elements(), 72);
        assert_eq!(m.n_nodes(), 7 * 7 * 17);
        let inlet = m.boundary_nodes(BoundarySet::Inlet);
        assert_eq!(inlet.len(), 49);
        assert!(inlet.iter().all(|&n| m.node(n)[2] == 0.0));
        let single = build_box_mesh([1.0, 1.0, 1.0], [1, 1, 1], 2).unwrap();
        assert_eq!(single.n_elements(), 1);
        assert_eq!(single.n_nodes(), 27);
        assert_eq!(single.facets().len(), 6);
    }

    #[test]
    fn every_boundary_face_tagged_once() {
        let m = build_box_mesh([1.0, 2.0, 3.0], [2, 3, 4], 1).unwrap();
        let mut seen = std::collections::HashSet::new();
        for f in m.facets() {
            assert!(seen.insert((f.element, f.axis, f.side)), "duplicate facet");
        }
        // 2*(3*4) + 2*(2*4) + 2*(2*3) faces
        assert_eq!(m.facets().len(), 24 + 16 + 12);
        let inlet = m
            .facets()
            .iter()
            .filter(|f| f.set == BoundarySet::Inlet)
            .count();
        assert_eq!(inlet, 2 * 4);
    }

    #[test]
    fn element_volumes_sum_to_domain() {
        let m = build_box_mesh([0.13, 0.09, 0.07], [5, 3, 2], 0).unwrap();
        let total: f64 = (0..m.n_elements()).map(|e| m.element_volume(e)).sum();
        assert!((total - 0.13 * 0.09 * 0.07).abs() / total < 1e-12);
        let l = build_line_mesh(0.13, 37, 8.1e-3, true).unwrap();
        let total: f64 = (0..l.n_elements()).map(|e| l.element_volume(e)).sum();
        assert!((total - l.volume()).abs() / total < 1e-12);
    }

    #[test]
    fn vertical_extremes_on_boundary_sets() {
        let m = build_box_mesh([0.05, 0.05, 0.4], [1, 1, 6], 2).unwrap();
        let zmin = m
            .boundary_nodes(BoundarySet::Inlet)
            .iter()
            .map(|&n| m.node(n)[2])
            .fold(f64::MAX, f64::min);
        let zmax = m
            .boundary_nodes(BoundarySet::Outlet)
            .iter()
            .map(|&n| m.node(n)[2])
            .fold(f64::MIN, f64::max);
        assert_eq!(zmin, 0.0);
        assert_eq!(zmax, 0.4);
    }

    #[test]
    fn csv_export() {
        let m = build_line_mesh(1.0, 2, 1.0, true).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("node,x,y,z\n"));
        assert_eq!(s.lines().count(), 6);
    }
}
