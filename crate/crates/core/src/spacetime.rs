//! Multilinear space-time discretization of dual functionals.
//!
//! Dual fields live at the nodes of a uniform tensor grid whose last axis is
//! time, and are interpolated multilinearly on each cell. A dual functional
//!
//! ```text
//! S[D] = sign · ∫ M*(P[D], L[D], x) + load · D
//! ```
//!
//! with `P`, `L` linear in the dual fields and their first derivatives is
//! integrated exactly cell by cell with the tensor two-point Gauss rule, so the
//! discrete gradient and Hessian are the exact derivatives of the discrete
//! action. Prescribed (masked) dual values are held fixed.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::optcore::{newton_critical, CriticalPointResult, NewtonConfig, SymmetricMatrix};
use crate::{DualError, Result};

pub const MAX_DIM: usize = 3;

/// Uniform node grid on a box; axis 0 varies slowest in the flat node index.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    dims: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    h: Vec<f64>,
    strides: Vec<usize>,
    cell_strides: Vec<usize>,
}

impl TensorGrid {
    pub fn new(dims: &[usize], lower: &[f64], upper: &[f64]) -> Result<Self> {
        let d = dims.len();
        if d == 0 || d > MAX_DIM || lower.len() != d || upper.len() != d {
            return Err(DualError::invalid("grid", format!("need 1 to {MAX_DIM} axes with matching bounds")));
        }
        for a in 0..d {
            if dims[a] < 2 {
                return Err(DualError::invalid("grid", format!("axis {a} needs at least 2 nodes")));
            }
            if !(upper[a] > lower[a]) || !upper[a].is_finite() || !lower[a].is_finite() {
                return Err(DualError::invalid("grid", format!("axis {a} has an empty or non-finite extent")));
            }
        }
        let h = (0..d).map(|a| (upper[a] - lower[a]) / (dims[a] - 1) as f64).collect();
        let mut strides = vec![1; d];
        let mut cell_strides = vec![1; d];
        for a in (0..d - 1).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
            cell_strides[a] = cell_strides[a + 1] * (dims[a + 1] - 1);
        }
        Ok(Self { dims: dims.to_vec(), lower: lower.to_vec(), upper: upper.to_vec(), h, strides, cell_strides })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
    pub fn spacing(&self, axis: usize) -> f64 {
        self.h[axis]
    }
    pub fn num_nodes(&self) -> usize {
        self.dims.iter().product()
    }
    pub fn num_cells(&self) -> usize {
        self.dims.iter().map(|n| n - 1).product()
    }
    /// Points per cell of the tensor Gauss rule.
    pub fn points_per_cell(&self) -> usize {
        1 << self.ndim()
    }
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.dims[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.h[axis]
        }
    }
    pub fn node_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }
    pub fn node_multi(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut m = [0; MAX_DIM];
        for a in 0..self.ndim() {
            m[a] = idx / self.strides[a];
            idx %= self.strides[a];
        }
        m
    }
    pub fn node_coords(&self, idx: usize) -> [f64; MAX_DIM] {
        let m = self.node_multi(idx);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.ndim() {
            x[a] = self.coord(a, m[a]);
        }
        x
    }
    fn cell_multi(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut m = [0; MAX_DIM];
        for a in 0..self.ndim() {
            m[a] = idx / self.cell_strides[a];
            idx %= self.cell_strides[a];
        }
        m
    }
    /// Flat indices of the `2^D` corners of a cell, local corner `k` having
    /// offset bit `D−1−a` along axis `a`.
    pub fn cell_nodes(&self, cell: usize) -> Vec<usize> {
        let d = self.ndim();
        let cm = self.cell_multi(cell);
        let base: usize = (0..d).map(|a| cm[a] * self.strides[a]).sum();
        (0..1usize << d)
            .map(|k| base + (0..d).filter(|&a| (k >> (d - 1 - a)) & 1 == 1).map(|a| self.strides[a]).sum::<usize>())
            .collect()
    }
    /// Physical coordinates of a point given by reference coordinates in a cell.
    fn cell_point(&self, cell: usize, xi: &[f64]) -> [f64; MAX_DIM] {
        let cm = self.cell_multi(cell);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.ndim() {
            x[a] = self.lower[a] + (cm[a] as f64 + xi[a]) * self.h[a];
        }
        x
    }
    pub fn is_boundary_node(&self, idx: usize, axis: usize) -> bool {
        let m = self.node_multi(idx);
        m[axis] == 0 || m[axis] + 1 == self.dims[axis]
    }
}

const GAUSS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Shape-function values and derivatives at a fixed set of reference points.
#[derive(Debug, Clone)]
struct PointTable {
    xi: Vec<[f64; MAX_DIM]>,
    value: Vec<Vec<f64>>,
    /// `deriv[a][pt][k]`, already scaled by `1/h_a`.
    deriv: Vec<Vec<Vec<f64>>>,
    weight: f64,
}

impl PointTable {
    fn new(grid: &TensorGrid, nodes_1d: [f64; 2]) -> Self {
        let d = grid.ndim();
        let npts = 1 << d;
        let nloc = 1 << d;
        let mut xi = Vec::with_capacity(npts);
        for q in 0..npts {
            let mut p = [0.0; MAX_DIM];
            for (a, pa) in p.iter_mut().enumerate().take(d) {
                *pa = nodes_1d[(q >> (d - 1 - a)) & 1];
            }
            xi.push(p);
        }
        let shape_1d = |s: f64, bit: usize| if bit == 1 { s } else { 1.0 - s };
        let dshape_1d = |bit: usize| if bit == 1 { 1.0 } else { -1.0 };
        let mut value = vec![vec![0.0; nloc]; npts];
        let mut deriv = vec![vec![vec![0.0; nloc]; npts]; d];
        for q in 0..npts {
            for k in 0..nloc {
                let bits: Vec<usize> = (0..d).map(|a| (k >> (d - 1 - a)) & 1).collect();
                value[q][k] = (0..d).map(|a| shape_1d(xi[q][a], bits[a])).product();
                for a in 0..d {
                    deriv[a][q][k] = (0..d)
                        .map(|b| if b == a { dshape_1d(bits[b]) / grid.h[b] } else { shape_1d(xi[q][b], bits[b]) })
                        .product();
                }
            }
        }
        let weight = (0..d).map(|a| 0.5 * grid.h[a]).product();
        Self { xi, value, deriv, weight }
    }
}

/// Differential operator applied to one dual field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Value,
    Deriv(usize),
}

pub type CoefFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Coef {
    Const(f64),
    /// Position-dependent coefficient, evaluated at physical coordinates.
    Field(CoefFn),
}

impl Coef {
    fn at(&self, x: &[f64]) -> f64 {
        match self {
            Coef::Const(c) => *c,
            Coef::Field(f) => f(x),
        }
    }
}

impl std::fmt::Debug for Coef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coef::Const(c) => write!(f, "Const({c})"),
            Coef::Field(_) => write!(f, "Field(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Term {
    pub field: usize,
    pub op: Op,
    pub coef: Coef,
}

impl Term {
    pub fn new(field: usize, op: Op, c: f64) -> Self {
        Self { field, op, coef: Coef::Const(c) }
    }
    pub fn field_coef(field: usize, op: Op, f: CoefFn) -> Self {
        Self { field, op, coef: Coef::Field(f) }
    }
}

/// Vector of linear combinations of dual fields and their first derivatives.
#[derive(Debug, Clone, Default)]
pub struct LinearMap {
    pub rows: Vec<Vec<Term>>,
}

impl LinearMap {
    pub fn new(rows: Vec<Vec<Term>>) -> Self {
        Self { rows }
    }
    pub fn dim(&self) -> usize {
        self.rows.len()
    }
}

/// Output of a pointwise conjugate evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateEval {
    /// Primal values `U_H(P, L, x)`, one per component of `P`.
    pub u: Vec<f64>,
    /// `F(U_H)`, one per component of `L`.
    pub f: Vec<f64>,
    /// `M*(P, L, x)`.
    pub value: f64,
}

/// Pointwise convex conjugate `M*(P, L, x)` of `M(U, L, x) = H(U, x) − L·F(U)`
/// in `U`, with `∂M*/∂P = U_H` and `∂M*/∂L = F(U_H)`.
pub trait PointConjugate: Sync {
    fn p_dim(&self) -> usize;
    fn l_dim(&self) -> usize;
    fn conjugate(&self, p: &[f64], l: &[f64], x: &[f64]) -> Result<ConjugateEval>;
    /// Hessian of `M*` in `(P, L)`, row-major of side `p_dim + l_dim`.
    fn hessian(&self, p: &[f64], l: &[f64], x: &[f64], eval: &ConjugateEval) -> Result<Vec<f64>>;
}

/// Primal values at the Gauss points of every cell, in cell-major order.
#[derive(Debug, Clone)]
pub struct PointFields {
    pub coords: Vec<[f64; MAX_DIM]>,
    pub weights: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
}

/// Nodal `P`, `L` and recovered `U`, each `[node][component]`.
#[derive(Debug, Clone)]
pub struct NodalFields {
    pub p: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

/// A discrete dual functional over `nfields` nodal dual fields.
pub struct DualProblem<C: PointConjugate> {
    grid: TensorGrid,
    nfields: usize,
    p_map: LinearMap,
    l_map: LinearMap,
    conj: C,
    sign: f64,
    load: DVector<f64>,
    free: Vec<bool>,
    prescribed: DVector<f64>,
    gauss: PointTable,
    corners: PointTable,
}

impl<C: PointConjugate> DualProblem<C> {
    /// All dual unknowns start free with zero load; see [`Self::fix`] and [`Self::add_load`].
    pub fn new(grid: TensorGrid, nfields: usize, p_map: LinearMap, l_map: LinearMap, conj: C, sign: f64) -> Result<Self> {
        if p_map.dim() != conj.p_dim() {
            return Err(DualError::Dimension { context: "P map", expected: conj.p_dim(), got: p_map.dim() });
        }
        if l_map.dim() != conj.l_dim() {
            return Err(DualError::Dimension { context: "L map", expected: conj.l_dim(), got: l_map.dim() });
        }
        for t in p_map.rows.iter().chain(&l_map.rows).flatten() {
            if t.field >= nfields || matches!(t.op, Op::Deriv(a) if a >= grid.ndim()) {
                return Err(DualError::invalid("dual map", format!("term {t:?} out of range")));
            }
        }
        let n = nfields * grid.num_nodes();
        let gauss = PointTable::new(&grid, GAUSS);
        let corners = PointTable::new(&grid, [0.0, 1.0]);
        Ok(Self {
            grid,
            nfields,
            p_map,
            l_map,
            conj,
            sign,
            load: DVector::zeros(n),
            free: vec![true; n],
            prescribed: DVector::zeros(n),
            gauss,
            corners,
        })
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }
    pub fn conjugate(&self) -> &C {
        &self.conj
    }
    pub fn nfields(&self) -> usize {
        self.nfields
    }
    pub fn num_dofs(&self) -> usize {
        self.nfields * self.grid.num_nodes()
    }
    pub fn dof(&self, field: usize, node: usize) -> usize {
        field * self.grid.num_nodes() + node
    }
    pub fn load(&self) -> &DVector<f64> {
        &self.load
    }
    pub fn free_mask(&self) -> &[bool] {
        &self.free
    }

    /// Hold `field` at `node` fixed to `value`.
    pub fn fix(&mut self, field: usize, node: usize, value: f64) {
        let i = self.dof(field, node);
        self.free[i] = false;
        self.prescribed[i] = value;
    }

    /// Add `values[node]` to the load on `field`.
    pub fn add_load(&mut self, field: usize, values: &[f64]) {
        let n = self.grid.num_nodes();
        assert_eq!(values.len(), n);
        for (i, v) in values.iter().enumerate() {
            self.load[field * n + i] += v;
        }
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.num_dofs()).filter(|&i| self.free[i]).collect()
    }

    /// Full dual vector from free unknowns, masked entries at their prescribed values.
    pub fn expand(&self, free_values: &DVector<f64>) -> DVector<f64> {
        let mut full = self.prescribed.clone();
        let mut k = 0;
        for (i, f) in self.free.iter().enumerate() {
            if *f {
                full[i] = free_values[k];
                k += 1;
            }
        }
        full
    }

    pub fn restrict(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.free.iter().filter(|f| **f).count(),
            full.iter().zip(&self.free).filter(|(_, f)| **f).map(|(v, _)| *v),
        )
    }

    /// Full vector with every masked entry reset to its prescription.
    pub fn with_prescriptions(&self, full: &DVector<f64>) -> DVector<f64> {
        self.expand(&self.restrict(full))
    }

    fn check_len(&self, full: &DVector<f64>) -> Result<()> {
        if full.len() != self.num_dofs() {
            return Err(DualError::Dimension { context: "dual vector", expected: self.num_dofs(), got: full.len() });
        }
        Ok(())
    }

    fn local_dofs(&self, cell: usize) -> Vec<usize> {
        let nodes = self.grid.cell_nodes(cell);
        (0..self.nfields).flat_map(|f| nodes.iter().map(move |&n| (f, n))).map(|(f, n)| self.dof(f, n)).collect()
    }

    /// Rows of the local operator: output `r` = Σ_j B[r][j] · local_dof_j.
    fn local_operator(&self, map: &LinearMap, table: &PointTable, pt: usize, x: &[f64]) -> Vec<Vec<f64>> {
        let nloc = table.value[pt].len();
        map.rows
            .iter()
            .map(|terms| {
                let mut row = vec![0.0; self.nfields * nloc];
                for t in terms {
                    let c = t.coef.at(x);
                    let shape = match t.op {
                        Op::Value => &table.value[pt],
                        Op::Deriv(a) => &table.deriv[a][pt],
                    };
                    for k in 0..nloc {
                        row[t.field * nloc + k] += c * shape[k];
                    }
                }
                row
            })
            .collect()
    }

    fn apply(rows: &[Vec<f64>], local: &[f64]) -> Vec<f64> {
        rows.iter().map(|r| r.iter().zip(local).map(|(a, b)| a * b).sum()).collect()
    }

    fn cell_point_data(&self, table: &PointTable, cell: usize, pt: usize, local: &[f64]) -> PointData {
        let x = self.grid.cell_point(cell, &table.xi[pt]);
        let bp = self.local_operator(&self.p_map, table, pt, &x);
        let bl = self.local_operator(&self.l_map, table, pt, &x);
        let p = Self::apply(&bp, local);
        let l = Self::apply(&bl, local);
        PointData { x, bp, bl, p, l }
    }

    fn for_cells<T: Send, F>(&self, f: F) -> Result<Vec<T>>
    where
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        (0..self.grid.num_cells()).into_par_iter().map(f).collect()
    }

    /// `S[D]` at a full dual vector.
    pub fn action(&self, full: &DVector<f64>) -> Result<f64> {
        self.check_len(full)?;
        let cells = self.for_cells(|cell| {
            let local: Vec<f64> = self.local_dofs(cell).iter().map(|&i| full[i]).collect();
            let mut s = 0.0;
            for pt in 0..self.gauss.xi.len() {
                let d = self.cell_point_data(&self.gauss, cell, pt, &local);
                s += self.conj.conjugate(&d.p, &d.l, &d.x)?.value;
            }
            Ok(s * self.gauss.weight)
        })?;
        let volume: f64 = cells.iter().sum();
        Ok(self.sign * volume + self.load.dot(full))
    }

    /// Gradient of `S` with respect to every dual entry, masked ones included.
    pub fn gradient(&self, full: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(full)?;
        let cells = self.for_cells(|cell| {
            let dofs = self.local_dofs(cell);
            let local: Vec<f64> = dofs.iter().map(|&i| full[i]).collect();
            let mut g = vec![0.0; dofs.len()];
            for pt in 0..self.gauss.xi.len() {
                let d = self.cell_point_data(&self.gauss, cell, pt, &local);
                let e = self.conj.conjugate(&d.p, &d.l, &d.x)?;
                accumulate(&mut g, &d.bp, &e.u, self.gauss.weight);
                accumulate(&mut g, &d.bl, &e.f, self.gauss.weight);
            }
            Ok((dofs, g))
        })?;
        let mut grad = DVector::zeros(self.num_dofs());
        for (dofs, g) in cells {
            for (i, v) in dofs.iter().zip(g) {
                grad[*i] += v;
            }
        }
        grad *= self.sign;
        grad += &self.load;
        check_finite(&grad, "dual gradient")?;
        Ok(grad)
    }

    /// Sparsity pattern over free unknowns: all field pairs of nodes sharing a cell.
    fn free_pattern(&self, free_index: &[Option<usize>]) -> Vec<Vec<usize>> {
        let nfree = free_index.iter().filter(|i| i.is_some()).count();
        let d = self.grid.ndim();
        let nn = self.grid.num_nodes();
        let mut rows = vec![Vec::new(); nfree];
        let mut neigh = Vec::new();
        for node in 0..nn {
            let m = self.grid.node_multi(node);
            neigh.clear();
            let span = 3usize.pow(d as u32);
            for k in 0..span {
                let mut idx = 0;
                let mut ok = true;
                let mut kk = k;
                for a in 0..d {
                    let off = (kk % 3) as isize - 1;
                    kk /= 3;
                    let c = m[a] as isize + off;
                    if c < 0 || c >= self.grid.dims[a] as isize {
                        ok = false;
                        break;
                    }
                    idx += c as usize * self.grid.strides[a];
                }
                if ok {
                    neigh.push(idx);
                }
            }
            for f in 0..self.nfields {
                let Some(i) = free_index[f * nn + node] else { continue };
                for g in 0..self.nfields {
                    for &nb in &neigh {
                        if let Some(j) = free_index[g * nn + nb] {
                            if j >= i {
                                rows[i].push(j);
                            }
                        }
                    }
                }
            }
        }
        rows
    }

    /// Hessian of `S` restricted to the free unknowns.
    pub fn hessian_free(&self, full: &DVector<f64>) -> Result<SymmetricMatrix> {
        self.check_len(full)?;
        let mut free_index = vec![None; self.num_dofs()];
        let mut k = 0;
        for (i, f) in self.free.iter().enumerate() {
            if *f {
                free_index[i] = Some(k);
                k += 1;
            }
        }
        let mut mat = SymmetricMatrix::with_pattern(k, &self.free_pattern(&free_index));
        let pdim = self.conj.p_dim();
        let ldim = self.conj.l_dim();
        let ncells = self.grid.num_cells();
        let chunk = 2048;
        for start in (0..ncells).step_by(chunk) {
            let end = (start + chunk).min(ncells);
            let blocks: Vec<(Vec<usize>, Vec<f64>)> = (start..end)
                .into_par_iter()
                .map(|cell| {
                    let dofs = self.local_dofs(cell);
                    let local: Vec<f64> = dofs.iter().map(|&i| full[i]).collect();
                    let nl = dofs.len();
                    let mut kmat = vec![0.0; nl * nl];
                    for pt in 0..self.gauss.xi.len() {
                        let d = self.cell_point_data(&self.gauss, cell, pt, &local);
                        let e = self.conj.conjugate(&d.p, &d.l, &d.x)?;
                        let h = self.conj.hessian(&d.p, &d.l, &d.x, &e)?;
                        let b: Vec<&Vec<f64>> = d.bp.iter().chain(d.bl.iter()).collect();
                        let m = pdim + ldim;
                        // kmat += w · Bᵀ H B
                        let mut hb = vec![0.0; m * nl];
                        for r in 0..m {
                            for s in 0..m {
                                let hrs = h[r * m + s];
                                if hrs != 0.0 {
                                    for j in 0..nl {
                                        hb[r * nl + j] += hrs * b[s][j];
                                    }
                                }
                            }
                        }
                        for r in 0..m {
                            for i in 0..nl {
                                let bri = b[r][i] * self.gauss.weight;
                                if bri != 0.0 {
                                    for j in 0..nl {
                                        kmat[i * nl + j] += bri * hb[r * nl + j];
                                    }
                                }
                            }
                        }
                    }
                    Ok((dofs, kmat))
                })
                .collect::<Result<_>>()?;
            for (dofs, kmat) in blocks {
                let nl = dofs.len();
                for a in 0..nl {
                    let Some(i) = free_index[dofs[a]] else { continue };
                    for b in 0..nl {
                        let Some(j) = free_index[dofs[b]] else { continue };
                        if i <= j {
                            mat.add(i, j, self.sign * kmat[a * nl + b]);
                        }
                    }
                }
            }
        }
        Ok(mat)
    }

    /// Gradient restricted to the free unknowns.
    pub fn gradient_free(&self, full: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.restrict(&self.gradient(full)?))
    }

    /// Critical point of `S` over the free unknowns, starting from `start`
    /// (masked entries are reset to their prescriptions first).
    pub fn solve(&self, start: &DVector<f64>, cfg: &NewtonConfig) -> Result<(DVector<f64>, CriticalPointResult)> {
        self.check_len(start)?;
        let z0 = self.restrict(start);
        let res = newton_critical(
            |z| self.gradient_free(&self.expand(z)),
            |z| self.hessian_free(&self.expand(z)),
            &z0,
            cfg,
        )?;
        Ok((self.expand(&res.point), res))
    }

    /// `P`, `L`, `U_H`, `F(U_H)` at every Gauss point.
    pub fn point_fields(&self, full: &DVector<f64>) -> Result<PointFields> {
        self.check_len(full)?;
        type CellPoints = Vec<([f64; MAX_DIM], Vec<f64>, Vec<f64>, ConjugateEval)>;
        let cells: Vec<CellPoints> = self.for_cells(|cell| {
            let local: Vec<f64> = self.local_dofs(cell).iter().map(|&i| full[i]).collect();
            (0..self.gauss.xi.len())
                .map(|pt| {
                    let d = self.cell_point_data(&self.gauss, cell, pt, &local);
                    let e = self.conj.conjugate(&d.p, &d.l, &d.x)?;
                    Ok((d.x, d.p, d.l, e))
                })
                .collect()
        })?;
        let mut out = PointFields { coords: vec![], weights: vec![], u: vec![], f: vec![], p: vec![], l: vec![] };
        for (x, p, l, e) in cells.into_iter().flatten() {
            out.coords.push(x);
            out.weights.push(self.gauss.weight);
            out.p.push(p);
            out.l.push(l);
            out.u.push(e.u);
            out.f.push(e.f);
        }
        Ok(out)
    }

    /// Nodal `P` and `L`, each the average over adjacent cells of the cell
    /// polynomial evaluated at the node, and `U_H` evaluated from them.
    pub fn nodal_fields(&self, full: &DVector<f64>) -> Result<NodalFields> {
        self.check_len(full)?;
        let nn = self.grid.num_nodes();
        let pdim = self.conj.p_dim();
        let ldim = self.conj.l_dim();
        let cells = self.for_cells(|cell| {
            let nodes = self.grid.cell_nodes(cell);
            let local: Vec<f64> = self.local_dofs(cell).iter().map(|&i| full[i]).collect();
            let vals: Vec<(usize, Vec<f64>, Vec<f64>)> = (0..self.corners.xi.len())
                .map(|pt| {
                    let d = self.cell_point_data(&self.corners, cell, pt, &local);
                    (nodes[pt], d.p, d.l)
                })
                .collect();
            Ok(vals)
        })?;
        let mut p = vec![vec![0.0; pdim]; nn];
        let mut l = vec![vec![0.0; ldim]; nn];
        let mut count = vec![0usize; nn];
        for (node, pv, lv) in cells.into_iter().flatten() {
            count[node] += 1;
            p[node].iter_mut().zip(&pv).for_each(|(a, b)| *a += b);
            l[node].iter_mut().zip(&lv).for_each(|(a, b)| *a += b);
        }
        for n in 0..nn {
            let c = count[n] as f64;
            p[n].iter_mut().for_each(|v| *v /= c);
            l[n].iter_mut().for_each(|v| *v /= c);
        }
        let u = (0..nn)
            .into_par_iter()
            .map(|n| {
                let x = self.grid.node_coords(n);
                Ok(self.conj.conjugate(&p[n], &l[n], &x[..self.grid.ndim()])?.u)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NodalFields { p, l, u })
    }
}

struct PointData {
    x: [f64; MAX_DIM],
    bp: Vec<Vec<f64>>,
    bl: Vec<Vec<f64>>,
    p: Vec<f64>,
    l: Vec<f64>,
}

fn accumulate(g: &mut [f64], rows: &[Vec<f64>], coef: &[f64], w: f64) {
    for (row, c) in rows.iter().zip(coef) {
        let c = c * w;
        if c != 0.0 {
            for (gi, bi) in g.iter_mut().zip(row) {
                *gi += c * bi;
            }
        }
    }
}

fn check_finite(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(DualError::NonFinite(what))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    pub fn normal(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

/// A Gauss point on a boundary face with the face traces of its cell's basis.
#[derive(Debug, Clone)]
pub struct FacePoint {
    pub x: [f64; MAX_DIM],
    pub weight: f64,
    /// Cell nodes lying on the face, with their basis values.
    pub nodes: Vec<usize>,
    pub phi: Vec<f64>,
}

/// Visit the tensor two-point Gauss points of the face `axis = lower/upper`.
pub fn for_each_face_point(grid: &TensorGrid, axis: usize, side: Side, mut f: impl FnMut(&FacePoint)) {
    let d = grid.ndim();
    let others: Vec<usize> = (0..d).filter(|&a| a != axis).collect();
    let npts = 1usize << others.len();
    let weight: f64 = others.iter().map(|&a| 0.5 * grid.h[a]).product();
    let (layer, offset) = match side {
        Side::Lower => (0, 0),
        Side::Upper => (grid.dims[axis] - 2, 1),
    };
    for cell in 0..grid.num_cells() {
        if grid.cell_multi(cell)[axis] != layer {
            continue;
        }
        let cell_nodes = grid.cell_nodes(cell);
        for q in 0..npts {
            let mut xi = [0.0; MAX_DIM];
            xi[axis] = offset as f64;
            for (j, &a) in others.iter().enumerate() {
                xi[a] = GAUSS[(q >> (others.len() - 1 - j)) & 1];
            }
            let mut pt = FacePoint { x: grid.cell_point(cell, &xi), weight, nodes: vec![], phi: vec![] };
            for (k, &node) in cell_nodes.iter().enumerate() {
                if (k >> (d - 1 - axis)) & 1 != offset {
                    continue;
                }
                let phi: f64 = others
                    .iter()
                    .map(|&a| {
                        let bit = (k >> (d - 1 - a)) & 1;
                        if bit == 1 { xi[a] } else { 1.0 - xi[a] }
                    })
                    .product();
                pt.nodes.push(node);
                pt.phi.push(phi);
            }
            f(&pt);
        }
    }
}

/// `∫_face f φ_n dS` for every node `n`, over the face `axis = lower/upper`,
/// with the tensor two-point Gauss rule on each face cell.
pub fn face_load(grid: &TensorGrid, axis: usize, side: Side, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let d = grid.ndim();
    let mut out = vec![0.0; grid.num_nodes()];
    for_each_face_point(grid, axis, side, |pt| {
        let fx = f(&pt.x[..d]) * pt.weight;
        for (&node, phi) in pt.nodes.iter().zip(&pt.phi) {
            out[node] += fx * phi;
        }
    });
    out
}

/// `∫_face a b dS` for nodal fields `a`, `b` interpolated multilinearly; exact.
pub fn face_product(grid: &TensorGrid, axis: usize, side: Side, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for_each_face_point(grid, axis, side, |pt| {
        let av: f64 = pt.nodes.iter().zip(&pt.phi).map(|(&n, p)| a[n] * p).sum();
        let bv: f64 = pt.nodes.iter().zip(&pt.phi).map(|(&n, p)| b[n] * p).sum();
        s += pt.weight * av * bv;
    });
    s
}

/// One point of the tensor Gauss rule with the basis of its cell.
#[derive(Debug, Clone)]
pub struct GaussPoint {
    pub x: [f64; MAX_DIM],
    pub weight: f64,
    pub nodes: Vec<usize>,
    pub phi: Vec<f64>,
    /// `dphi[axis][k]`.
    pub dphi: Vec<Vec<f64>>,
}

/// Visit every Gauss point, cells in flat order and points within a cell in
/// the same order as [`DualProblem::point_fields`].
pub fn for_each_gauss_point(grid: &TensorGrid, mut f: impl FnMut(&GaussPoint)) {
    let table = PointTable::new(grid, GAUSS);
    for cell in 0..grid.num_cells() {
        let nodes = grid.cell_nodes(cell);
        for pt in 0..table.xi.len() {
            let gp = GaussPoint {
                x: grid.cell_point(cell, &table.xi[pt]),
                weight: table.weight,
                nodes: nodes.clone(),
                phi: table.value[pt].clone(),
                dphi: (0..grid.ndim()).map(|a| table.deriv[a][pt].clone()).collect(),
            };
            f(&gp);
        }
    }
}

/// Lumped mass `∫ φ_n` of every node.
pub fn lumped_mass(grid: &TensorGrid) -> Vec<f64> {
    let d = grid.ndim();
    let cell_volume: f64 = (0..d).map(|a| grid.h[a]).product();
    let share = cell_volume / (1 << d) as f64;
    let mut m = vec![0.0; grid.num_nodes()];
    for cell in 0..grid.num_cells() {
        for n in grid.cell_nodes(cell) {
            m[n] += share;
        }
    }
    m
}

/// Quadratic conjugate `M*(P) = Σ (base·P + ½ P²/c)` with no `L` dependence:
/// the conjugate of `H(U) = ½ Σ c (U − base(x))²`.
#[derive(Clone)]
pub struct QuadraticConjugate {
    pub coef: Vec<f64>,
    pub base: Option<Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
}

impl QuadraticConjugate {
    pub fn new(coef: Vec<f64>) -> Result<Self> {
        if let Some(c) = coef.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(DualError::invalid("coefficient", format!("must be positive, got {c}")));
        }
        Ok(Self { coef, base: None })
    }

    pub fn with_base(mut self, base: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>) -> Self {
        self.base = Some(base);
        self
    }

    pub fn base_at(&self, x: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.coef.len()];
        if let Some(f) = &self.base {
            f(x, &mut b);
        }
        b
    }
}

impl std::fmt::Debug for QuadraticConjugate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuadraticConjugate").field("coef", &self.coef).field("base", &self.base.is_some()).finish()
    }
}

impl PointConjugate for QuadraticConjugate {
    fn p_dim(&self) -> usize {
        self.coef.len()
    }
    fn l_dim(&self) -> usize {
        0
    }
    fn conjugate(&self, p: &[f64], _l: &[f64], x: &[f64]) -> Result<ConjugateEval> {
        let base = self.base_at(x);
        let mut value = 0.0;
        let u = p
            .iter()
            .zip(&self.coef)
            .zip(&base)
            .map(|((p, c), b)| {
                value += b * p + 0.5 * p * p / c;
                b + p / c
            })
            .collect();
        Ok(ConjugateEval { u, f: vec![], value })
    }
    fn hessian(&self, _p: &[f64], _l: &[f64], _x: &[f64], _e: &ConjugateEval) -> Result<Vec<f64>> {
        let m = self.coef.len();
        let mut h = vec![0.0; m * m];
        for (i, c) in self.coef.iter().enumerate() {
            h[i * m + i] = 1.0 / c;
        }
        Ok(h)
    }
}
