//! Galerkin assembly of balance laws written in coefficient form.
//!
//! Every PDE field obeys
//!
//! ```text
//! d m(u)/dt + div J(u, grad u) = s(u, grad u)
//! ```
//!
//! where the physics supplies the stored quantity `m`, the flux `J` and the
//! source `s` at quadrature points, plus prescribed outward normal fluxes on
//! boundary facets. Fields flagged as nodal obey pointwise ODEs
//! `d m(u)/dt = r(u)` collocated at the nodes. Time derivatives use BDF
//! coefficients applied to `m`, so stored quantities are conserved exactly by
//! the discrete scheme. The Jacobian is built by forward differences of the
//! element-local residuals.

use crate::error::Result;
use crate::mesh::{BoundarySet, Mesh};
use crate::numerics::basis::{Geometry, PointSet};
use crate::numerics::newton::NonlinearProblem;
use crate::numerics::sparse::CsrMatrix;

/// Adapter exposing an assembled weak form to the Newton solver.
pub struct FormProblem<'a, F: WeakForm + ?Sized> {
    pub assembler: &'a Assembler,
    pub form: &'a F,
}

impl<F: WeakForm + ?Sized> NonlinearProblem for FormProblem<'_, F> {
    fn n_fields(&self) -> usize {
        self.form.n_fields()
    }

    fn evaluate(&mut self, u: &[f64], r: &mut [f64], jac: Option<&mut CsrMatrix>) -> Result<()> {
        self.assembler.evaluate(self.form, u, r, jac, None)
    }

    fn residual_weights(&self) -> Option<&[f64]> {
        Some(self.assembler.residual_weights())
    }
}

/// Evaluation context at one quadrature point.
pub struct QpContext<'a> {
    pub element: usize,
    /// Index of the volume quadrature point within the element; `None` on
    /// facets.
    pub point: Option<usize>,
    pub x: [f64; 3],
    pub shape: &'a [f64],
    pub shape_grad: &'a [[f64; 3]],
    pub nodes: &'a [usize],
    /// Element-local nodal values of all fields at the level being
    /// evaluated, node-major.
    pub u_nodes: &'a [f64],
    pub n_fields: usize,
}

impl QpContext<'_> {
    /// Interpolates a global nodal field.
    pub fn interp(&self, nodal: &[f64]) -> f64 {
        self.shape
            .iter()
            .zip(self.nodes)
            .map(|(n, &i)| n * nodal[i])
            .sum()
    }

    pub fn grad_of(&self, nodal: &[f64]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (dn, &i) in self.shape_grad.iter().zip(self.nodes) {
            for d in 0..3 {
                g[d] += dn[d] * nodal[i];
            }
        }
        g
    }

    /// Interpolates `f(node, nodal values)` evaluated at each element node.
    pub fn interp_nodal_fn(&self, f: impl Fn(usize, &[f64]) -> f64) -> f64 {
        let nf = self.n_fields;
        let mut s = 0.0;
        for (a, (&n, &node)) in self.shape.iter().zip(self.nodes).enumerate() {
            s += n * f(node, &self.u_nodes[a * nf..(a + 1) * nf]);
        }
        s
    }
}

pub trait WeakForm {
    fn n_fields(&self) -> usize;

    fn is_nodal(&self, _field: usize) -> bool {
        false
    }

    /// Typical magnitude of a field, used for finite-difference steps and
    /// Dirichlet residual weights.
    fn field_scale(&self, _field: usize) -> f64 {
        1.0
    }

    /// Stored quantity at time level `level` (0 is the unknown level).
    fn storage(&self, _ctx: &QpContext, _level: usize, _u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }

    fn flux(&self, ctx: &QpContext, u: &[f64], grad: &[[f64; 3]], out: &mut [[f64; 3]]);

    fn source(&self, _ctx: &QpContext, _u: &[f64], _grad: &[[f64; 3]], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Prescribed outward normal flux per field; `None` leaves the natural
    /// (zero-flux) condition.
    fn boundary_flux(
        &self,
        _ctx: &QpContext,
        _set: BoundarySet,
        _normal: [f64; 3],
        _u: &[f64],
        _grad: &[[f64; 3]],
        out: &mut [Option<f64>],
    ) {
        out.iter_mut().for_each(|v| *v = None);
    }

    fn nodal_storage(&self, _node: usize, _level: usize, _u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }

    fn nodal_rate(&self, _node: usize, _u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Fixed values as (global dof, value) pairs.
    fn dirichlet(&self, _out: &mut Vec<(usize, f64)>) {}
}

struct Scratch {
    u_loc: Vec<f64>,
    r0: Vec<f64>,
    r1: Vec<f64>,
    uq: Vec<f64>,
    gq: Vec<[f64; 3]>,
    m: Vec<f64>,
    s: Vec<f64>,
    j: Vec<[f64; 3]>,
    bn: Vec<Option<f64>>,
}

impl Scratch {
    fn new(nloc: usize, nf: usize) -> Self {
        Scratch {
            u_loc: vec![0.0; nloc * nf],
            r0: vec![0.0; nloc * nf],
            r1: vec![0.0; nloc * nf],
            uq: vec![0.0; nf],
            gq: vec![[0.0; 3]; nf],
            m: vec![0.0; nf],
            s: vec![0.0; nf],
            j: vec![[0.0; 3]; nf],
            bn: vec![None; nf],
        }
    }
}

pub struct Assembler {
    nf: usize,
    nloc: usize,
    n_nodes: usize,
    connectivity: Vec<usize>,
    geom: Geometry,
    nodal: Vec<bool>,
    scale: Vec<f64>,
    alpha: Vec<f64>,
    hist_qp: Vec<f64>,
    hist_nodal: Vec<f64>,
    dirichlet: Vec<(usize, f64)>,
    weights: Vec<f64>,
    fd_rel: f64,
}

fn interp_point(
    ps: &PointSet,
    q: usize,
    u_loc: &[f64],
    nf: usize,
    uq: &mut [f64],
    gq: &mut [[f64; 3]],
) {
    uq.iter_mut().for_each(|v| *v = 0.0);
    gq.iter_mut().for_each(|v| *v = [0.0; 3]);
    let n = ps.shape(q);
    let dn = ps.shape_grad(q);
    for a in 0..ps.nloc {
        for f in 0..nf {
            let v = u_loc[a * nf + f];
            uq[f] += n[a] * v;
            for d in 0..3 {
                gq[f][d] += dn[a][d] * v;
            }
        }
    }
}

impl Assembler {
    pub fn new<F: WeakForm + ?Sized>(mesh: &Mesh, form: &F) -> Self {
        let nf = form.n_fields();
        Self::with_layout(
            mesh,
            (0..nf).map(|f| form.is_nodal(f)).collect(),
            (0..nf).map(|f| form.field_scale(f)).collect(),
        )
    }

    /// Builds an assembler from the per-field nodal flags and scales.
    pub fn with_layout(mesh: &Mesh, nodal: Vec<bool>, scale: Vec<f64>) -> Self {
        let nf = nodal.len();
        let geom = Geometry::new(mesh);
        let nloc = geom.nloc;
        let connectivity = (0..mesh.n_elements())
            .flat_map(|e| mesh.element_nodes(e).to_vec())
            .collect();
        let mut a = Assembler {
            nf,
            nloc,
            n_nodes: mesh.n_nodes(),
            connectivity,
            geom,
            nodal,
            scale,
            alpha: Vec::new(),
            hist_qp: Vec::new(),
            hist_nodal: Vec::new(),
            dirichlet: Vec::new(),
            weights: Vec::new(),
            fd_rel: 1e-7,
        };
        a.refresh_weights();
        a
    }

    pub fn n_dofs(&self) -> usize {
        self.n_nodes * self.nf
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn pattern(&self, mesh: &Mesh) -> CsrMatrix {
        CsrMatrix::for_mesh(mesh, self.nf)
    }

    pub fn residual_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dirichlet_dofs(&self) -> &[(usize, f64)] {
        &self.dirichlet
    }

    fn element_nodes(&self, e: usize) -> &[usize] {
        &self.connectivity[e * self.nloc..(e + 1) * self.nloc]
    }

    fn refresh_weights(&mut self) {
        let nf = self.nf;
        self.weights = (0..self.n_nodes * nf)
            .map(|dof| {
                if self.nodal[dof % nf] {
                    1.0
                } else {
                    1.0 / self.geom.lumped[dof / nf]
                }
            })
            .collect();
        for &(dof, _) in &self.dirichlet {
            self.weights[dof] = 1.0 / self.scale[dof % nf];
        }
    }

    /// Sets the BDF coefficients of the coming step and caches the history
    /// part of the time derivative. `history[k]` is the state at level
    /// `k + 1`; an empty `alpha` gives a steady problem.
    pub fn prepare<F: WeakForm + ?Sized>(&mut self, form: &F, alpha: &[f64], history: &[&[f64]]) {
        let nf = self.nf;
        let nloc = self.nloc;
        self.alpha = alpha.to_vec();
        self.dirichlet.clear();
        form.dirichlet(&mut self.dirichlet);
        self.refresh_weights();

        let nq_total: usize = self.geom.elements.iter().map(|p| p.len()).sum();
        self.hist_qp = vec![0.0; nq_total * nf];
        self.hist_nodal = vec![0.0; self.n_nodes * nf];
        if alpha.len() < 2 {
            return;
        }
        let mut u_loc = vec![0.0; nloc * nf];
        let mut uq = vec![0.0; nf];
        let mut gq = vec![[0.0; 3]; nf];
        let mut m = vec![0.0; nf];
        let mut offset = 0;
        for e in 0..self.geom.elements.len() {
            let ps = &self.geom.elements[e];
            let en = &self.connectivity[e * nloc..(e + 1) * nloc];
            for (k, hist) in history.iter().enumerate().take(alpha.len() - 1) {
                let level = k + 1;
                for (a, &node) in en.iter().enumerate() {
                    u_loc[a * nf..(a + 1) * nf].copy_from_slice(&hist[node * nf..(node + 1) * nf]);
                }
                for q in 0..ps.len() {
                    interp_point(ps, q, &u_loc, nf, &mut uq, &mut gq);
                    let ctx = QpContext {
                        point: Some(q),
                        element: e,
                        x: ps.x[q],
                        shape: ps.shape(q),
                        shape_grad: ps.shape_grad(q),
                        nodes: en,
                        u_nodes: &u_loc,
                        n_fields: nf,
                    };
                    form.storage(&ctx, level, &uq, &mut m);
                    for f in 0..nf {
                        self.hist_qp[(offset + q) * nf + f] += alpha[level] * m[f];
                    }
                }
            }
            offset += ps.len();
        }
        if self.nodal.iter().any(|&b| b) {
            for node in 0..self.n_nodes {
                for (k, hist) in history.iter().enumerate().take(alpha.len() - 1) {
                    let level = k + 1;
                    form.nodal_storage(node, level, &hist[node * nf..(node + 1) * nf], &mut m);
                    for f in 0..nf {
                        self.hist_nodal[node * nf + f] += alpha[level] * m[f];
                    }
                }
            }
        }
    }

    fn qp_offset(&self, e: usize) -> usize {
        // Elements of a structured mesh share the point count.
        e * self.geom.elements.first().map_or(0, |p| p.len())
    }

    fn element_residual<F: WeakForm + ?Sized>(
        &self,
        form: &F,
        e: usize,
        sc: &mut Scratch,
        perturbed: bool,
    ) {
        let nf = self.nf;
        let ps = &self.geom.elements[e];
        let en = self.element_nodes(e);
        let out = if perturbed { &mut sc.r1 } else { &mut sc.r0 };
        out.iter_mut().for_each(|v| *v = 0.0);
        let alpha0 = self.alpha.first().copied().unwrap_or(0.0);
        let off = self.qp_offset(e);
        for q in 0..ps.len() {
            interp_point(ps, q, &sc.u_loc, nf, &mut sc.uq, &mut sc.gq);
            let ctx = QpContext {
                point: Some(q),
                element: e,
                x: ps.x[q],
                shape: ps.shape(q),
                shape_grad: ps.shape_grad(q),
                nodes: en,
                u_nodes: &sc.u_loc,
                n_fields: nf,
            };
            if alpha0 != 0.0 {
                form.storage(&ctx, 0, &sc.uq, &mut sc.m);
            } else {
                sc.m.iter_mut().for_each(|v| *v = 0.0);
            }
            form.flux(&ctx, &sc.uq, &sc.gq, &mut sc.j);
            form.source(&ctx, &sc.uq, &sc.gq, &mut sc.s);
            let w = ps.weights[q];
            let n = ps.shape(q);
            let dn = ps.shape_grad(q);
            for f in 0..nf {
                if self.nodal[f] {
                    continue;
                }
                let point = alpha0 * sc.m[f] + self.hist_qp[(off + q) * nf + f] - sc.s[f];
                let jf = sc.j[f];
                for a in 0..ps.nloc {
                    let div = dn[a][0] * jf[0] + dn[a][1] * jf[1] + dn[a][2] * jf[2];
                    out[a * nf + f] += w * (n[a] * point - div);
                }
            }
        }
        for &fi in &self.geom.element_facets[e] {
            let fp = &self.geom.facets[fi];
            let ps = &fp.points;
            for q in 0..ps.len() {
                interp_point(ps, q, &sc.u_loc, nf, &mut sc.uq, &mut sc.gq);
                let ctx = QpContext {
                    point: None,
                    element: e,
                    x: ps.x[q],
                    shape: ps.shape(q),
                    shape_grad: ps.shape_grad(q),
                    nodes: en,
                    u_nodes: &sc.u_loc,
                    n_fields: nf,
                };
                form.boundary_flux(&ctx, fp.set, fp.normal, &sc.uq, &sc.gq, &mut sc.bn);
                let w = ps.weights[q];
                let n = ps.shape(q);
                for f in 0..nf {
                    if self.nodal[f] {
                        continue;
                    }
                    if let Some(jn) = sc.bn[f] {
                        for a in 0..ps.nloc {
                            out[a * nf + f] += w * n[a] * jn;
                        }
                    }
                }
            }
        }
    }

    fn fd_step(&self, v: f64, f: usize) -> f64 {
        let h = self.fd_rel * v.abs().max(self.scale[f]);
        // Keep the perturbation exactly representable.
        (v + h) - v
    }

    /// Assembles the residual, optionally the Jacobian, and optionally the
    /// residual before Dirichlet rows are overwritten (whose entries on
    /// fixed dofs are the reaction terms).
    pub fn evaluate<F: WeakForm + ?Sized>(
        &self,
        form: &F,
        u: &[f64],
        r: &mut [f64],
        mut jac: Option<&mut CsrMatrix>,
        raw: Option<&mut [f64]>,
    ) -> Result<()> {
        let nf = self.nf;
        let nloc = self.nloc;
        r.iter_mut().for_each(|v| *v = 0.0);
        if let Some(j) = jac.as_deref_mut() {
            j.zero();
        }
        let mut sc = Scratch::new(nloc, nf);
        for e in 0..self.geom.elements.len() {
            let en = self.element_nodes(e);
            for (a, &node) in en.iter().enumerate() {
                sc.u_loc[a * nf..(a + 1) * nf].copy_from_slice(&u[node * nf..(node + 1) * nf]);
            }
            self.element_residual(form, e, &mut sc, false);
            for (a, &node) in en.iter().enumerate() {
                for f in 0..nf {
                    r[node * nf + f] += sc.r0[a * nf + f];
                }
            }
            if let Some(j) = jac.as_deref_mut() {
                for (b, &col_node) in en.iter().enumerate() {
                    for g in 0..nf {
                        let c = b * nf + g;
                        let saved = sc.u_loc[c];
                        let h = self.fd_step(saved, g);
                        sc.u_loc[c] = saved + h;
                        self.element_residual(form, e, &mut sc, true);
                        sc.u_loc[c] = saved;
                        let col = col_node * nf + g;
                        for (a, &row_node) in en.iter().enumerate() {
                            for f in 0..nf {
                                if self.nodal[f] {
                                    continue;
                                }
                                let d = (sc.r1[a * nf + f] - sc.r0[a * nf + f]) / h;
                                if d != 0.0 {
                                    j.add(row_node * nf + f, col, d);
                                }
                            }
                        }
                    }
                }
            }
        }
        if self.nodal.iter().any(|&b| b) {
            let alpha0 = self.alpha.first().copied().unwrap_or(0.0);
            let mut m = vec![0.0; nf];
            let mut rate = vec![0.0; nf];
            let mut un = vec![0.0; nf];
            let nodal_res =
                |node: usize, un: &[f64], m: &mut [f64], rate: &mut [f64], out: &mut [f64]| {
                    form.nodal_storage(node, 0, un, m);
                    form.nodal_rate(node, un, rate);
                    for f in 0..nf {
                        out[f] = alpha0 * m[f] + self.hist_nodal[node * nf + f] - rate[f];
                    }
                };
            let mut base = vec![0.0; nf];
            let mut pert = vec![0.0; nf];
            for node in 0..self.n_nodes {
                un.copy_from_slice(&u[node * nf..(node + 1) * nf]);
                nodal_res(node, &un, &mut m, &mut rate, &mut base);
                for f in 0..nf {
                    if self.nodal[f] {
                        r[node * nf + f] = base[f];
                    }
                }
                if let Some(j) = jac.as_deref_mut() {
                    for g in 0..nf {
                        let saved = un[g];
                        let h = self.fd_step(saved, g);
                        un[g] = saved + h;
                        nodal_res(node, &un, &mut m, &mut rate, &mut pert);
                        un[g] = saved;
                        for f in 0..nf {
                            if self.nodal[f] {
                                let d = (pert[f] - base[f]) / h;
                                if d != 0.0 {
                                    j.add(node * nf + f, node * nf + g, d);
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(raw) = raw {
            raw.copy_from_slice(r);
        }
        for &(dof, value) in &self.dirichlet {
            r[dof] = u[dof] - value;
            if let Some(j) = jac.as_deref_mut() {
                j.set_identity_row(dof);
            }
        }
        Ok(())
    }

    /// Integral over facets of `set` of the prescribed outward fluxes, per
    /// field (fields without a prescribed flux report zero).
    pub fn boundary_flux_integral<F: WeakForm + ?Sized>(
        &self,
        form: &F,
        u: &[f64],
        set: BoundarySet,
    ) -> Vec<f64> {
        let nf = self.nf;
        let mut total = vec![0.0; nf];
        let mut sc = Scratch::new(self.nloc, nf);
        for fp in self.geom.facets.iter().filter(|f| f.set == set) {
            let e = fp.element;
            let en = self.element_nodes(e);
            for (a, &node) in en.iter().enumerate() {
                sc.u_loc[a * nf..(a + 1) * nf].copy_from_slice(&u[node * nf..(node + 1) * nf]);
            }
            let ps = &fp.points;
            for q in 0..ps.len() {
                interp_point(ps, q, &sc.u_loc, nf, &mut sc.uq, &mut sc.gq);
                let ctx = QpContext {
                    point: None,
                    element: e,
                    x: ps.x[q],
                    shape: ps.shape(q),
                    shape_grad: ps.shape_grad(q),
                    nodes: en,
                    u_nodes: &sc.u_loc,
                    n_fields: nf,
                };
                form.boundary_flux(&ctx, fp.set, fp.normal, &sc.uq, &sc.gq, &mut sc.bn);
                for f in 0..nf {
                    if let Some(jn) = sc.bn[f] {
                        total[f] += ps.weights[q] * jn;
                    }
                }
            }
        }
        total
    }

    /// Integral of the stored quantity at `level` for state `u`; nodal fields
    /// are integrated with the lumped weights.
    pub fn integrate_storage<F: WeakForm + ?Sized>(
        &self,
        form: &F,
        level: usize,
        u: &[f64],
    ) -> Vec<f64> {
        let nf = self.nf;
        let mut total = vec![0.0; nf];
        let mut sc = Scratch::new(self.nloc, nf);
        for (e, ps) in self.geom.elements.iter().enumerate() {
            let en = self.element_nodes(e);
            for (a, &node) in en.iter().enumerate() {
                sc.u_loc[a * nf..(a + 1) * nf].copy_from_slice(&u[node * nf..(node + 1) * nf]);
            }
            for q in 0..ps.len() {
                interp_point(ps, q, &sc.u_loc, nf, &mut sc.uq, &mut sc.gq);
                let ctx = QpContext {
                    point: Some(q),
                    element: e,
                    x: ps.x[q],
                    shape: ps.shape(q),
                    shape_grad: ps.shape_grad(q),
                    nodes: en,
                    u_nodes: &sc.u_loc,
                    n_fields: nf,
                };
                form.storage(&ctx, level, &sc.uq, &mut sc.m);
                for f in 0..nf {
                    if !self.nodal[f] {
                        total[f] += ps.weights[q] * sc.m[f];
                    }
                }
            }
        }
        if self.nodal.iter().any(|&b| b) {
            for node in 0..self.n_nodes {
                form.nodal_storage(node, level, &u[node * nf..(node + 1) * nf], &mut sc.m);
                for f in 0..nf {
                    if self.nodal[f] {
                        total[f] += self.geom.lumped[node] * sc.m[f];
                    }
                }
            }
        }
        total
    }

    /// Integral over the domain of the source term per field.
    pub fn integrate_source<F: WeakForm + ?Sized>(&self, form: &F, u: &[f64]) -> Vec<f64> {
        let nf = self.nf;
        let mut total = vec![0.0; nf];
        let mut sc = Scratch::new(self.nloc, nf);
        for (e, ps) in self.geom.elements.iter().enumerate() {
            let en = self.element_nodes(e);
            for (a, &node) in en.iter().enumerate() {
                sc.u_loc[a * nf..(a + 1) * nf].copy_from_slice(&u[node * nf..(node + 1) * nf]);
            }
            for q in 0..ps.len() {
                interp_point(ps, q, &sc.u_loc, nf, &mut sc.uq, &mut sc.gq);
                let ctx = QpContext {
                    point: Some(q),
                    element: e,
                    x: ps.x[q],
                    shape: ps.shape(q),
                    shape_grad: ps.shape_grad(q),
                    nodes: en,
                    u_nodes: &sc.u_loc,
                    n_fields: nf,
                };
                form.source(&ctx, &sc.uq, &sc.gq, &mut sc.s);
                for f in 0..nf {
                    if !self.nodal[f] {
                        total[f] += ps.weights[q] * sc.s[f];
                    }
                }
            }
        }
        if self.nodal.iter().any(|&b| b) {
            for node in 0..self.n_nodes {
                form.nodal_rate(node, &u[node * nf..(node + 1) * nf], &mut sc.s);
                for f in 0..nf {
                    if self.nodal[f] {
                        total[f] += self.geom.lumped[node] * sc.s[f];
                    }
                }
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_line_mesh;
    use crate::numerics::bdf::StepHistory;
    use crate::numerics::newton::{newton_solve, NewtonConfig};
    use std::f64::consts::PI;

    /// -div(grad u) = f(x) with u = g on both ends.
    struct Poisson {
        n_nodes: usize,
        f: fn(f64) -> f64,
        left: f64,
        right: f64,
    }

    impl WeakForm for Poisson {
        fn n_fields(&self) -> usize {
            1
        }
        fn flux(&self, _ctx: &QpContext, _u: &[f64], grad: &[[f64; 3]], out: &mut [[f64; 3]]) {
            out[0] = [-grad[0][0], -grad[0][1], -grad[0][2]];
        }
        fn source(&self, ctx: &QpContext, _u: &[f64], _g: &[[f64; 3]], out: &mut [f64]) {
            out[0] = (self.f)(ctx.x[0]);
        }
        fn dirichlet(&self, out: &mut Vec<(usize, f64)>) {
            out.push((0, self.left));
            out.push((self.n_nodes - 1, self.right));
        }
    }

    fn solve_poisson(
        n_el: usize,
        f: fn(f64) -> f64,
        left: f64,
        right: f64,
    ) -> (Mesh, Assembler, Vec<f64>) {
        let mesh = build_line_mesh(1.0, n_el, 1.0, false).unwrap();
        let form = Poisson {
            n_nodes: mesh.n_nodes(),
            f,
            left,
            right,
        };
        let mut asm = Assembler::new(&mesh, &form);
        asm.prepare(&form, &[], &[]);
        let mut jac = asm.pattern(&mesh);
        let mut u = vec![0.0; mesh.n_nodes()];
        let mut p = FormProblem {
            assembler: &asm,
            form: &form,
        };
        let cfg = NewtonConfig {
            rtol: 1e-12,
            atol: 1e-12,
            max_iterations: 5,
        };
        let rep = newton_solve(&mut p, &mut u, &mut jac, &cfg).unwrap();
        assert!(rep.iterations <= 3);
        (mesh, asm, u)
    }

    fn l2_error(mesh: &Mesh, asm: &Assembler, u: &[f64], exact: impl Fn(f64) -> f64) -> f64 {
        let g = asm.geometry();
        let mut s = 0.0;
        for (e, ps) in g.elements.iter().enumerate() {
            let en = mesh.element_nodes(e);
            for q in 0..ps.len() {
                let uh: f64 = ps.shape(q).iter().zip(en).map(|(n, &i)| n * u[i]).sum();
                s += ps.weights[q] * (uh - exact(ps.x[q][0])).powi(2);
            }
        }
        s.sqrt()
    }

    #[test]
    fn poisson_max_is_one_eighth() {
        let (_, _, u) = solve_poisson(8, |_| 1.0, 0.0, 0.0);
        let max = u.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max - 0.125).abs() < 1e-6, "max {max}");
    }

    #[test]
    fn linear_solution_reproduced() {
        let (mesh, _, u) = solve_poisson(5, |_| 0.0, 1.0, 3.0);
        for (i, ui) in u.iter().enumerate() {
            let x = mesh.axial_coordinate(i);
            assert!((ui - (1.0 + 2.0 * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_manufactured_solution_is_exact() {
        // u = x (1 - x) solves -u'' = 2.
        let (mesh, _, u) = solve_poisson(3, |_| 2.0, 0.0, 0.0);
        for (i, ui) in u.iter().enumerate() {
            let x = mesh.axial_coordinate(i);
            assert!((ui - x * (1.0 - x)).abs() < 1e-12);
        }
    }

    #[test]
    fn spatial_order_at_least_three() {
        let exact = |x: f64| (PI * x).sin();
        let errs: Vec<f64> = [4, 8, 16]
            .iter()
            .map(|&n| {
                let (m, a, u) = solve_poisson(n, |x| PI * PI * (PI * x).sin(), 0.0, 0.0);
                l2_error(&m, &a, &u, exact)
            })
            .collect();
        for w in errs.windows(2) {
            let p = (w[0] / w[1]).log2();
            assert!(p >= 2.9, "order {p} from {errs:?}");
        }
    }

    /// du/dt - u_xx = f with u = exp(-t) x (1 - x), exactly representable in
    /// space so only the time error remains.
    struct Heat {
        n_nodes: usize,
        t: f64,
    }

    impl WeakForm for Heat {
        fn n_fields(&self) -> usize {
            1
        }
        fn storage(&self, _ctx: &QpContext, _level: usize, u: &[f64], out: &mut [f64]) {
            out[0] = u[0];
        }
        fn flux(&self, _ctx: &QpContext, _u: &[f64], grad: &[[f64; 3]], out: &mut [[f64; 3]]) {
            out[0] = [-grad[0][0], 0.0, 0.0];
        }
        fn source(&self, ctx: &QpContext, _u: &[f64], _g: &[[f64; 3]], out: &mut [f64]) {
            let x = ctx.x[0];
            out[0] = (-self.t).exp() * (2.0 - x * (1.0 - x));
        }
        fn dirichlet(&self, out: &mut Vec<(usize, f64)>) {
            out.push((0, 0.0));
            out.push((self.n_nodes - 1, 0.0));
        }
    }

    fn heat_error(n_steps: usize) -> f64 {
        let mesh = build_line_mesh(1.0, 4, 1.0, false).unwrap();
        let mut form = Heat {
            n_nodes: mesh.n_nodes(),
            t: 0.0,
        };
        let mut asm = Assembler::new(&mesh, &form);
        let mut jac = asm.pattern(&mesh);
        let x = mesh.axial_coordinates().to_vec();
        let mut levels: Vec<Vec<f64>> = vec![x.iter().map(|x| x * (1.0 - x)).collect()];
        let dt = 1.0 / n_steps as f64;
        let mut hist = StepHistory::new(2);
        for k in 1..=n_steps {
            form.t = k as f64 * dt;
            let alpha = hist.coefficients(dt);
            let h: Vec<&[f64]> = levels.iter().map(|v| v.as_slice()).collect();
            asm.prepare(&form, &alpha, &h);
            let mut u = levels[0].clone();
            let mut p = FormProblem {
                assembler: &asm,
                form: &form,
            };
            newton_solve(&mut p, &mut u, &mut jac, &NewtonConfig::default()).unwrap();
            levels.insert(0, u);
            levels.truncate(2);
            hist.accept(dt);
        }
        let e = (-1.0f64).exp();
        levels[0]
            .iter()
            .zip(&x)
            .map(|(u, x)| (u - e * x * (1.0 - x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn bdf2_temporal_order_on_heat_equation() {
        let errs: Vec<f64> = [20, 40, 80].iter().map(|&n| heat_error(n)).collect();
        for w in errs.windows(2) {
            let p = (w[0] / w[1]).log2();
            assert!((p - 2.0).abs() < 0.1, "order {p} from {errs:?}");
        }
    }
}
