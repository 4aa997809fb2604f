//! Nodal analysis of a resistive crossbar mesh.
//!
//! Every cross-point `(i, j)` owns a source-line node `s(i,j)` and a bit-line
//! node `b(i,j)`. Drivers sit behind `r_source` at `s(i,0)`, sinks behind
//! `r_sink` at `b(R-1,j)`, and `r_wire` joins horizontally adjacent source-line
//! nodes and vertically adjacent bit-line nodes. Zero resistances are shorts:
//! the nodes they join are merged, and nodes merged with a driver or with
//! ground become fixed voltages instead of unknowns.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::banded::{BandedCholesky, BandedSymmetric};
use super::model::{ConductanceMatrix, CrossbarGeometry, DeviceModel};

/// Fixed-point tolerance on node voltages for nonlinear devices, in volt.
pub const NONLINEAR_TOLERANCE: f64 = 1e-8;
pub const NONLINEAR_MAX_ITERATIONS: usize = 100;
const MAX_REFINEMENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EdgeKind {
    Device { row: usize, col: usize },
    SourceWire { row: usize },
    BitWire { col: usize },
    Source { row: usize },
    Sink { col: usize },
}

impl EdgeKind {
    fn row(self) -> Option<usize> {
        match self {
            EdgeKind::Device { row, .. }
            | EdgeKind::SourceWire { row }
            | EdgeKind::Source { row } => Some(row),
            _ => None,
        }
    }

    fn col(self) -> Option<usize> {
        match self {
            EdgeKind::Device { col, .. } | EdgeKind::BitWire { col } | EdgeKind::Sink { col } => {
                Some(col)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeClass {
    Unknown(usize),
    Driver(usize),
    Ground,
}

#[derive(Debug, Clone, Copy)]
struct Edge<T> {
    a: usize,
    b: usize,
    g: T,
    kind: EdgeKind,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Node classes and fixed wiring of one geometry; independent of conductances.
#[derive(Debug, Clone)]
struct Topology<T> {
    rows: usize,
    cols: usize,
    /// class of every physical node; drivers and ground are appended after mesh nodes
    class: Vec<NodeClass>,
    unknowns: usize,
    bandwidth: usize,
    wires: Vec<Edge<T>>,
}

impl<T: Scalar> Topology<T> {
    fn s(&self, i: usize, j: usize) -> usize {
        2 * (i * self.cols + j)
    }

    fn b(&self, i: usize, j: usize) -> usize {
        2 * (i * self.cols + j) + 1
    }

    fn new(geo: &CrossbarGeometry<T>) -> Self {
        let (rows, cols) = (geo.rows, geo.cols);
        let mesh = 2 * rows * cols;
        let driver = |i: usize| mesh + i;
        let ground = mesh + rows;
        let s = |i: usize, j: usize| 2 * (i * cols + j);
        let b = |i: usize, j: usize| 2 * (i * cols + j) + 1;

        // (a, b, resistance, kind) of every non-device element
        let mut raw = Vec::new();
        for i in 0..rows {
            raw.push((
                driver(i),
                s(i, 0),
                geo.r_source,
                EdgeKind::Source { row: i },
            ));
            for j in 0..cols.saturating_sub(1) {
                raw.push((
                    s(i, j),
                    s(i, j + 1),
                    geo.r_wire,
                    EdgeKind::SourceWire { row: i },
                ));
            }
        }
        for j in 0..cols {
            for i in 0..rows.saturating_sub(1) {
                raw.push((
                    b(i, j),
                    b(i + 1, j),
                    geo.r_wire,
                    EdgeKind::BitWire { col: j },
                ));
            }
            raw.push((
                b(rows - 1, j),
                ground,
                geo.r_sink,
                EdgeKind::Sink { col: j },
            ));
        }

        let mut parent: Vec<usize> = (0..=ground).collect();
        for &(a, bb, r, _) in &raw {
            if r == T::zero() {
                union(&mut parent, a, bb);
            }
        }
        let mut root_class: Vec<Option<NodeClass>> = vec![None; ground + 1];
        for i in 0..rows {
            let r = find(&mut parent, driver(i));
            root_class[r] = Some(NodeClass::Driver(i));
        }
        let rg = find(&mut parent, ground);
        root_class[rg] = Some(NodeClass::Ground);
        let mut unknowns = 0;
        let mut class = Vec::with_capacity(ground + 1);
        for node in 0..=ground {
            let r = find(&mut parent, node);
            let c = match root_class[r] {
                Some(c) => c,
                None => {
                    let c = NodeClass::Unknown(unknowns);
                    unknowns += 1;
                    root_class[r] = Some(c);
                    c
                }
            };
            class.push(c);
        }

        let wires: Vec<Edge<T>> = raw
            .into_iter()
            .filter(|&(_, _, r, _)| r != T::zero() && r.is_finite())
            .map(|(a, bb, r, kind)| Edge {
                a,
                b: bb,
                g: r.recip(),
                kind,
            })
            .collect();

        let mut topo = Self {
            rows,
            cols,
            class,
            unknowns,
            bandwidth: 0,
            wires,
        };
        let mut bw = 0;
        let device_pairs: Vec<(usize, usize)> = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| (topo.s(i, j), topo.b(i, j)))
            .collect();
        for (a, bb) in topo.wires.iter().map(|e| (e.a, e.b)).chain(device_pairs) {
            if let (NodeClass::Unknown(x), NodeClass::Unknown(y)) = (topo.class[a], topo.class[bb])
            {
                bw = bw.max(x.abs_diff(y));
            }
        }
        topo.bandwidth = bw;
        topo
    }

    fn device_edges(&self, conductance: impl Fn(usize, usize) -> T) -> Vec<Edge<T>> {
        let mut edges = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                edges.push(Edge {
                    a: self.s(i, j),
                    b: self.b(i, j),
                    g: conductance(i, j),
                    kind: EdgeKind::Device { row: i, col: j },
                });
            }
        }
        edges
    }

    fn fixed_voltage(&self, class: NodeClass, v: &[T]) -> Option<T> {
        match class {
            NodeClass::Unknown(_) => None,
            NodeClass::Driver(i) => Some(v[i]),
            NodeClass::Ground => Some(T::zero()),
        }
    }

    fn assemble(&self, edges: &[Edge<T>], v: &[T]) -> (BandedSymmetric<T>, Vec<T>) {
        let mut k = BandedSymmetric::zeros(self.unknowns, self.bandwidth);
        let mut rhs = vec![T::zero(); self.unknowns];
        for e in edges {
            if e.g == T::zero() {
                continue;
            }
            let (ca, cb) = (self.class[e.a], self.class[e.b]);
            match (ca, cb) {
                (NodeClass::Unknown(x), NodeClass::Unknown(y)) => {
                    if x != y {
                        k.add(x, x, e.g);
                        k.add(y, y, e.g);
                        k.add(x, y, -e.g);
                    }
                }
                (NodeClass::Unknown(x), fixed) | (fixed, NodeClass::Unknown(x)) => {
                    k.add(x, x, e.g);
                    let vf = self.fixed_voltage(fixed, v).expect("fixed class");
                    rhs[x] = rhs[x] + e.g * vf;
                }
                _ => {}
            }
        }
        (k, rhs)
    }

    fn voltage(&self, node: usize, x: &[T], v: &[T]) -> T {
        match self.class[node] {
            NodeClass::Unknown(u) => x[u],
            fixed => self.fixed_voltage(fixed, v).expect("fixed class"),
        }
    }

    /// Column currents into ground and driver currents out of each source.
    fn terminal_currents(&self, edges: &[Edge<T>], x: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        let mut cols = vec![T::zero(); self.cols];
        let mut rows = vec![T::zero(); self.rows];
        for e in edges {
            if e.g == T::zero() {
                continue;
            }
            let (ca, cb) = (self.class[e.a], self.class[e.b]);
            if ca == cb {
                continue;
            }
            let (va, vb) = (self.voltage(e.a, x, v), self.voltage(e.b, x, v));
            // current flowing a -> b
            let i_ab = e.g * (va - vb);
            if cb == NodeClass::Ground {
                if let Some(c) = e.kind.col() {
                    cols[c] = cols[c] + i_ab;
                }
            } else if ca == NodeClass::Ground {
                if let Some(c) = e.kind.col() {
                    cols[c] = cols[c] - i_ab;
                }
            }
            if let NodeClass::Driver(_) = ca {
                if let Some(r) = e.kind.row() {
                    rows[r] = rows[r] + i_ab;
                }
            }
            if let NodeClass::Driver(_) = cb {
                if let Some(r) = e.kind.row() {
                    rows[r] = rows[r] - i_ab;
                }
            }
        }
        (cols, rows)
    }
}

fn norm2<T: Scalar>(x: &[T]) -> T {
    x.iter().map(|&a| a * a).sum::<T>().sqrt()
}

/// Solves `K x = rhs` with iterative refinement; returns `(x, relative residual)`.
fn solve_refined<T: Scalar>(
    k: &BandedSymmetric<T>,
    factor: &BandedCholesky<T>,
    rhs: &[T],
) -> (Vec<T>, T) {
    let bnorm = norm2(rhs);
    if bnorm == T::zero() {
        return (vec![T::zero(); rhs.len()], T::zero());
    }
    let mut x = rhs.to_vec();
    factor.solve_in_place(&mut x);
    let tol = T::of(T::SOLVE_TOLERANCE);
    let mut residual = T::infinity();
    for _ in 0..=MAX_REFINEMENTS {
        let kx = k.mul_vec(&x);
        let mut r: Vec<T> = rhs.iter().zip(&kx).map(|(&b, &a)| b - a).collect();
        residual = norm2(&r) / bnorm;
        if residual <= tol {
            break;
        }
        factor.solve_in_place(&mut r);
        for (xi, di) in x.iter_mut().zip(&r) {
            *xi = *xi + *di;
        }
    }
    (x, residual)
}

/// Assembled linear system over the unknown mesh node voltages.
#[derive(Debug, Clone)]
pub struct NodalSystem<T> {
    pub matrix: BandedSymmetric<T>,
    pub rhs: Vec<T>,
}

impl<T: Scalar> NodalSystem<T> {
    pub fn unknowns(&self) -> usize {
        self.rhs.len()
    }
}

/// Result of a non-ideal crossbar solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalSolution<T> {
    /// Current into ground at every bit-line, in ampere.
    pub column_currents: Vec<T>,
    /// Current delivered by every source-line driver, in ampere.
    pub source_currents: Vec<T>,
    /// Voltages of all `2·R·C` mesh nodes, `s(i,j)` at `2(iC+j)` and `b(i,j)` at `2(iC+j)+1`.
    pub node_voltages: Vec<T>,
    pub iterations: usize,
    pub residual: T,
}

impl<T: Scalar> NodalSolution<T> {
    /// Voltage across the device at `(i, j)`.
    pub fn device_voltage(&self, cols: usize, i: usize, j: usize) -> T {
        let base = 2 * (i * cols + j);
        self.node_voltages[base] - self.node_voltages[base + 1]
    }
}

fn check_shapes<T: Scalar>(
    v: &[T],
    g: &ConductanceMatrix<T>,
    geo: &CrossbarGeometry<T>,
) -> Result<()> {
    geo.validate()?;
    if g.rows() != geo.rows || g.cols() != geo.cols {
        return Err(Error::shape(format!(
            "conductance matrix is {}x{}, geometry is {}x{}",
            g.rows(),
            g.cols(),
            geo.rows,
            geo.cols
        )));
    }
    if v.len() != geo.rows {
        return Err(Error::shape(format!(
            "voltage vector has {} entries, crossbar has {} rows",
            v.len(),
            geo.rows
        )));
    }
    Ok(())
}

/// Stamps the mesh conductances for input voltages `v` using the device's
/// small-signal conductances `g`.
pub fn build_nodal_system<T: Scalar>(
    v: &[T],
    g: &ConductanceMatrix<T>,
    geometry: &CrossbarGeometry<T>,
    _device: &DeviceModel<T>,
) -> Result<NodalSystem<T>> {
    check_shapes(v, g, geometry)?;
    let topo = Topology::new(geometry);
    let mut edges = topo.wires.clone();
    edges.extend(topo.device_edges(|i, j| g.get(i, j)));
    let (matrix, rhs) = topo.assemble(&edges, v);
    Ok(NodalSystem { matrix, rhs })
}

fn check_voltages<T: Scalar>(v: &[T], device: &DeviceModel<T>) -> Result<()> {
    if let Some(bad) = v.iter().find(|&&x| !(x >= T::zero() && x <= device.v_max)) {
        return Err(Error::invalid(format!(
            "input voltage {bad} outside [0, {}]",
            device.v_max
        )));
    }
    Ok(())
}

/// Non-ideal crossbar currents by nodal analysis of the full resistive mesh.
///
/// Linear devices take one solve. Nonlinear devices are iterated with secant
/// conductances `I(V)/V` until no node voltage moves by more than
/// [`NONLINEAR_TOLERANCE`].
pub fn solve_nonideal<T: Scalar>(
    v: &[T],
    g: &ConductanceMatrix<T>,
    geometry: &CrossbarGeometry<T>,
    device: &DeviceModel<T>,
) -> Result<NodalSolution<T>> {
    check_shapes(v, g, geometry)?;
    check_voltages(v, device)?;
    let topo = Topology::new(geometry);
    let mut edges = topo.wires.clone();
    let n_wires = edges.len();
    edges.extend(topo.device_edges(|i, j| g.get(i, j)));

    let mesh_nodes = 2 * geometry.rows * geometry.cols;
    let mut trace = Vec::new();
    let mut prev: Option<Vec<T>> = None;
    let tol = T::of(NONLINEAR_TOLERANCE);
    for iteration in 1..=NONLINEAR_MAX_ITERATIONS {
        let (k, rhs) = topo.assemble(&edges, v);
        let (x, residual) = if topo.unknowns == 0 {
            (Vec::new(), T::zero())
        } else {
            let factor = k.cholesky()?;
            solve_refined(&k, &factor, &rhs)
        };
        let voltages: Vec<T> = (0..mesh_nodes).map(|n| topo.voltage(n, &x, v)).collect();
        let converged = if device.is_linear() {
            true
        } else {
            match &prev {
                None => false,
                Some(p) => {
                    let delta = voltages
                        .iter()
                        .zip(p)
                        .map(|(a, b)| (*a - *b).abs())
                        .fold(T::zero(), |m, d| m.max(d));
                    trace.push(delta.as_f64());
                    delta <= tol
                }
            }
        };
        if converged {
            let (column_currents, source_currents) = topo.terminal_currents(&edges, &x, v);
            return Ok(NodalSolution {
                column_currents,
                source_currents,
                node_voltages: voltages,
                iterations: iteration,
                residual,
            });
        }
        for e in edges[n_wires..].iter_mut() {
            if let EdgeKind::Device { row, col } = e.kind {
                let vd = voltages[2 * (row * geometry.cols + col)]
                    - voltages[2 * (row * geometry.cols + col) + 1];
                e.g = device.secant_conductance(g.get(row, col), vd);
            }
        }
        prev = Some(voltages);
    }
    Err(Error::Convergence { trace })
}

/// Factored mesh of a linear-device crossbar; repeated solves reuse the factor.
#[derive(Debug, Clone)]
pub struct LinearMesh<T> {
    topo: Topology<T>,
    edges: Vec<Edge<T>>,
    matrix: BandedSymmetric<T>,
    factor: Option<BandedCholesky<T>>,
}

impl<T: Scalar> LinearMesh<T> {
    pub fn new(
        g: &ConductanceMatrix<T>,
        geometry: &CrossbarGeometry<T>,
        device: &DeviceModel<T>,
    ) -> Result<Self> {
        if !device.is_linear() {
            return Err(Error::invalid(
                "a factored mesh requires linear devices; use solve_nonideal",
            ));
        }
        let zeros = vec![T::zero(); geometry.rows];
        check_shapes(&zeros, g, geometry)?;
        let topo = Topology::new(geometry);
        let mut edges = topo.wires.clone();
        edges.extend(topo.device_edges(|i, j| g.get(i, j)));
        let (matrix, _) = topo.assemble(&edges, &zeros);
        let factor = if topo.unknowns == 0 {
            None
        } else {
            Some(matrix.cholesky()?)
        };
        Ok(Self {
            topo,
            edges,
            matrix,
            factor,
        })
    }

    /// Column currents for input voltages `v` (any sign; the mesh is linear).
    pub fn column_currents(&self, v: &[T]) -> Result<Vec<T>> {
        Ok(self.solve(v)?.column_currents)
    }

    pub fn solve(&self, v: &[T]) -> Result<NodalSolution<T>> {
        if v.len() != self.topo.rows {
            return Err(Error::shape(format!(
                "voltage vector has {} entries, crossbar has {} rows",
                v.len(),
                self.topo.rows
            )));
        }
        let (_, rhs) = self.topo.assemble(&self.edges, v);
        let (x, residual) = match &self.factor {
            None => (Vec::new(), T::zero()),
            Some(f) => solve_refined(&self.matrix, f, &rhs),
        };
        let mesh_nodes = 2 * self.topo.rows * self.topo.cols;
        let node_voltages = (0..mesh_nodes)
            .map(|n| self.topo.voltage(n, &x, v))
            .collect();
        let (column_currents, source_currents) = self.topo.terminal_currents(&self.edges, &x, v);
        Ok(NodalSolution {
            column_currents,
            source_currents,
            node_voltages,
            iterations: 1,
            residual,
        })
    }

    /// `C × R` row-major matrix `M` with `I = M·v`.
    pub fn transfer_matrix(&self) -> Result<Vec<T>> {
        let (rows, cols) = (self.topo.rows, self.topo.cols);
        let mut m = vec![T::zero(); rows * cols];
        let mut e = vec![T::zero(); rows];
        for i in 0..rows {
            e[i] = T::one();
            let currents = self.column_currents(&e)?;
            for (j, c) in currents.into_iter().enumerate() {
                m[j * rows + i] = c;
            }
            e[i] = T::zero();
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::ideal_mvm;
    use crate::circuit::model::Nonlinearity;

    fn device() -> DeviceModel<f64> {
        DeviceModel::linear(100e3, 1e6, 4).unwrap()
    }

    #[test]
    fn one_by_one_without_parasitics_has_full_device_voltage() {
        let d = device();
        let g = ConductanceMatrix::from_levels(&d, 1, 1, &[3]).unwrap();
        let geo = CrossbarGeometry::ideal(1, 1);
        let sys = build_nodal_system(&[0.5], &g, &geo, &d).unwrap();
        assert_eq!(sys.unknowns(), 0);
        let sol = solve_nonideal(&[0.5], &g, &geo, &d).unwrap();
        assert_eq!(sol.device_voltage(1, 0, 0), 0.5);
        assert_eq!(sol.column_currents, vec![0.5 / 100e3]);
    }

    #[test]
    fn fully_resistive_mesh_has_two_unknowns_per_crosspoint() {
        let d = device();
        let g = ConductanceMatrix::from_levels(&d, 3, 5, &[1; 15]).unwrap();
        let geo = CrossbarGeometry {
            rows: 3,
            cols: 5,
            r_source: 10.0,
            r_sink: 10.0,
            r_wire: 1.0,
        };
        let sys = build_nodal_system(&[0.1, 0.2, 0.3], &g, &geo, &d).unwrap();
        assert_eq!(sys.unknowns(), 30);
        assert_eq!(sys.matrix.bandwidth(), 10);
    }

    #[test]
    fn open_sink_with_dead_column_is_singular() {
        let g = ConductanceMatrix::from_raw(1, 1, vec![0.0]).unwrap();
        let geo = CrossbarGeometry {
            rows: 1,
            cols: 1,
            r_source: 0.0,
            r_sink: f64::INFINITY,
            r_wire: 0.0,
        };
        let d = device();
        assert!(matches!(
            solve_nonideal(&[0.5], &g, &geo, &d),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn shape_errors() {
        let d = device();
        let g = ConductanceMatrix::from_levels(&d, 2, 2, &[0; 4]).unwrap();
        let geo = CrossbarGeometry::ideal(2, 2);
        assert!(matches!(
            solve_nonideal(&[0.1], &g, &geo, &d),
            Err(Error::Shape(_))
        ));
        let geo3 = CrossbarGeometry::ideal(3, 2);
        assert!(matches!(
            solve_nonideal(&[0.1, 0.1, 0.1], &g, &geo3, &d),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            solve_nonideal(&[0.1, 1.5], &g, &geo, &d),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn partially_shorted_geometries_match_ideal_limit() {
        let d = device();
        let g = ConductanceMatrix::from_levels(&d, 3, 4, &[0, 1, 2, 3, 3, 2, 1, 0, 1, 1, 2, 2])
            .unwrap();
        let v = [0.2, 0.9, 0.4];
        let ideal = ideal_mvm(&v, &g).unwrap();
        // only one kind of parasitic at a time; each attenuates
        for geo in [
            CrossbarGeometry {
                rows: 3,
                cols: 4,
                r_source: 1e3,
                r_sink: 0.0,
                r_wire: 0.0,
            },
            CrossbarGeometry {
                rows: 3,
                cols: 4,
                r_source: 0.0,
                r_sink: 1e3,
                r_wire: 0.0,
            },
            CrossbarGeometry {
                rows: 3,
                cols: 4,
                r_source: 0.0,
                r_sink: 0.0,
                r_wire: 100.0,
            },
        ] {
            let sol = solve_nonideal(&v, &g, &geo, &d).unwrap();
            let total_in: f64 = sol.source_currents.iter().sum();
            let total_out: f64 = sol.column_currents.iter().sum();
            assert!((total_in - total_out).abs() <= 1e-12 * total_in);
            for (a, b) in sol.column_currents.iter().zip(&ideal) {
                assert!(*a > 0.0 && a < b, "{a} vs {b} for {geo:?}");
            }
        }
    }

    #[test]
    fn factored_mesh_agrees_with_direct_solve() {
        let d = device();
        let levels: Vec<usize> = (0..20).map(|k| (k * 7) % 4).collect();
        let g = ConductanceMatrix::from_levels(&d, 4, 5, &levels).unwrap();
        let geo = CrossbarGeometry {
            rows: 4,
            cols: 5,
            r_source: 300.0,
            r_sink: 200.0,
            r_wire: 20.0,
        };
        let v = [0.0, 1.0, 0.5, 0.25];
        let direct = solve_nonideal(&v, &g, &geo, &d).unwrap();
        let mesh = LinearMesh::new(&g, &geo, &d).unwrap();
        let fast = mesh.column_currents(&v).unwrap();
        let m = mesh.transfer_matrix().unwrap();
        for j in 0..5 {
            let via_m: f64 = (0..4).map(|i| m[j * 4 + i] * v[i]).sum();
            assert!((fast[j] - direct.column_currents[j]).abs() <= 1e-15 + 1e-12 * fast[j]);
            assert!((via_m - direct.column_currents[j]).abs() <= 1e-12 * fast[j]);
        }
    }

    #[test]
    fn exponential_devices_converge_below_linear_current() {
        let mut d = device();
        d.nonlinearity = Some(Nonlinearity::ExponentialIv { beta: 2.0 });
        let g = ConductanceMatrix::from_levels(&d, 4, 4, &[3; 16]).unwrap();
        let geo = CrossbarGeometry {
            rows: 4,
            cols: 4,
            r_source: 1e3,
            r_sink: 1e3,
            r_wire: 50.0,
        };
        let v = [1.0, 0.5, 1.0, 0.0];
        let sol = solve_nonideal(&v, &g, &geo, &d).unwrap();
        assert!(sol.iterations > 1 && sol.iterations <= NONLINEAR_MAX_ITERATIONS);
        // every device obeys its own I-V law at the converged voltages
        let total_in: f64 = sol.source_currents.iter().sum();
        let total_out: f64 = sol.column_currents.iter().sum();
        assert!((total_in - total_out).abs() <= 1e-9 * total_in);
        let lin = {
            let mut dl = d;
            dl.nonlinearity = None;
            solve_nonideal(&v, &g, &geo, &dl).unwrap()
        };
        for (a, b) in sol.column_currents.iter().zip(&lin.column_currents) {
            assert!(a < b);
        }
    }

    #[test]
    fn nonlinear_mesh_refuses_factored_path() {
        let mut d = device();
        d.nonlinearity = Some(Nonlinearity::ExponentialIv { beta: 2.0 });
        let g = ConductanceMatrix::all_off(&d, 2, 2);
        assert!(LinearMesh::new(&g, &CrossbarGeometry::ideal(2, 2), &d).is_err());
    }

    #[test]
    fn single_precision_solver_runs() {
        let d = DeviceModel::<f32>::linear(100e3, 1e6, 4).unwrap();
        let g = ConductanceMatrix::from_levels(&d, 8, 8, &[2; 64]).unwrap();
        let geo = CrossbarGeometry {
            rows: 8,
            cols: 8,
            r_source: 100.0,
            r_sink: 100.0,
            r_wire: 5.0,
        };
        let sol = solve_nonideal(&[1.0f32; 8], &g, &geo, &d).unwrap();
        let ideal = ideal_mvm(&[1.0f32; 8], &g).unwrap();
        for (a, b) in sol.column_currents.iter().zip(&ideal) {
            assert!(*a < *b && *a > 0.8 * *b);
        }
    }
}
