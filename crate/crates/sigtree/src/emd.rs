//! Exact Earth Mover's Distance between weight vectors.
//!
//! The distance is the optimum of a transportation problem: move mass from
//! supply bins to demand bins at the per-unit cost given by a ground
//! distance matrix, so that total flow equals the smaller of the two
//! totals, then divide the transport cost by that flow. The solver is a
//! successive-shortest-path min-cost flow over the bipartite supply/demand
//! graph; instances here are at most palette-sized (16x16), so the simple
//! O(V^2) Dijkstra inside is plenty.
//!
//! `oracle_transport` is an independent brute-force reference used by the
//! test suites; it shares nothing with the solver path.

use thiserror::Error;

use crate::palette::Palette;
use crate::signature::{Signature, SignatureError, WeightVector};

#[derive(Debug, Error)]
pub enum EmdError {
    #[error("both weight vectors are all-zero; EMD is undefined")]
    ZeroMass,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative mass at bin {0}")]
    NegativeMass(usize),
    #[error("oracle instance too large: {0}")]
    InstanceTooLarge(String),
    #[error(transparent)]
    Signature(#[from] SignatureError),
}

/// Ground-distance matrix. Palette matrices are square, symmetric, and
/// metric (Euclidean RGB); the type itself allows rectangular instances for
/// general transportation problems.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self, EmdError> {
        if entries.len() != rows * cols {
            return Err(EmdError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        if let Some(i) = entries.iter().position(|&c| c < 0.0 || !c.is_finite()) {
            return Err(EmdError::DimensionMismatch(format!(
                "cost entry {i} is not a finite non-negative number"
            )));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, EmdError> {
        let r = rows.len();
        let c = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return Err(EmdError::DimensionMismatch("ragged cost rows".into()));
        }
        Self::new(r, c, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }
}

/// Euclidean RGB distance matrix between all palette color pairs.
pub fn cost_matrix(palette: &Palette) -> CostMatrix {
    let n = palette.len();
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let a = palette.color(i).rgb;
            let b = palette.color(j).rgb;
            let d: f64 = (0..3)
                .map(|k| (a[k] as f64 - b[k] as f64).powi(2))
                .sum();
            entries.push(d.sqrt());
        }
    }
    CostMatrix { rows: n, cols: n, entries }
}

/// An optimal solution of one transportation instance.
#[derive(Debug, Clone)]
pub struct FlowPlan {
    flows: Vec<f64>,
    rows: usize,
    cols: usize,
    total_cost: f64,
    total_flow: f64,
}

impl FlowPlan {
    pub fn flow(&self, i: usize, j: usize) -> f64 {
        self.flows[i * self.cols + j]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn total_flow(&self) -> f64 {
        self.total_flow
    }
}

struct Arc {
    to: usize,
    rev: usize,
    residual: f64,
    cost: f64,
}

struct Network {
    graph: Vec<Vec<Arc>>,
}

impl Network {
    fn new(nodes: usize) -> Self {
        Self { graph: (0..nodes).map(|_| Vec::new()).collect() }
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        let rev_from = self.graph[to].len();
        let rev_to = self.graph[from].len();
        self.graph[from].push(Arc { to, rev: rev_from, residual: cap, cost });
        self.graph[to].push(Arc { to: from, rev: rev_to, residual: 0.0, cost: -cost });
    }

    /// Successive shortest paths with Johnson potentials. All original arc
    /// costs are non-negative, so potentials start at zero.
    fn run(&mut self, src: usize, sink: usize) {
        let nn = self.graph.len();
        let mut phi = vec![0.0f64; nn];
        loop {
            let mut dist = vec![f64::INFINITY; nn];
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; nn];
            let mut done = vec![false; nn];
            dist[src] = 0.0;
            loop {
                let mut u = usize::MAX;
                let mut best = f64::INFINITY;
                for v in 0..nn {
                    if !done[v] && dist[v] < best {
                        best = dist[v];
                        u = v;
                    }
                }
                if u == usize::MAX {
                    break;
                }
                done[u] = true;
                for (ai, a) in self.graph[u].iter().enumerate() {
                    if a.residual > 0.0 {
                        // Clamp fp noise; true reduced costs are >= 0.
                        let rc = (a.cost + phi[u] - phi[a.to]).max(0.0);
                        let nd = dist[u] + rc;
                        if nd < dist[a.to] {
                            dist[a.to] = nd;
                            prev[a.to] = Some((u, ai));
                        }
                    }
                }
            }
            if dist[sink].is_infinite() {
                return;
            }
            for v in 0..nn {
                if dist[v].is_finite() {
                    phi[v] += dist[v];
                }
            }
            // Bottleneck along the path; only source/sink arcs are finite,
            // so one of them saturates exactly each round.
            let mut delta = f64::INFINITY;
            let mut v = sink;
            while let Some((u, ai)) = prev[v] {
                delta = delta.min(self.graph[u][ai].residual);
                v = u;
            }
            if !(delta > 0.0) || delta.is_infinite() {
                return;
            }
            let mut v = sink;
            while let Some((u, ai)) = prev[v] {
                let rev = self.graph[u][ai].rev;
                self.graph[u][ai].residual -= delta;
                self.graph[v][rev].residual += delta;
                v = u;
            }
        }
    }
}

/// Solves the transportation problem exactly: minimize the summed
/// flow-times-cost subject to non-negative flows, row sums bounded by the
/// supplies, column sums bounded by the demands, and a total flow equal to
/// the smaller of the two totals.
///
/// Zero-mass rows and columns are dropped before solving and come back as
/// zero rows in the returned plan.
pub fn solve_transport(
    supply: &[f64],
    demand: &[f64],
    cost: &CostMatrix,
) -> Result<FlowPlan, EmdError> {
    if supply.len() != cost.rows || demand.len() != cost.cols {
        return Err(EmdError::DimensionMismatch(format!(
            "supply {} / demand {} vs cost {}x{}",
            supply.len(),
            demand.len(),
            cost.rows,
            cost.cols
        )));
    }
    if let Some(i) = supply.iter().position(|&x| x < 0.0) {
        return Err(EmdError::NegativeMass(i));
    }
    if let Some(j) = demand.iter().position(|&y| y < 0.0) {
        return Err(EmdError::NegativeMass(j));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if total_s <= 0.0 && total_d <= 0.0 {
        return Err(EmdError::ZeroMass);
    }

    let rows: Vec<usize> = (0..supply.len()).filter(|&i| supply[i] > 0.0).collect();
    let cols: Vec<usize> = (0..demand.len()).filter(|&j| demand[j] > 0.0).collect();
    let (ns, nc) = (rows.len(), cols.len());

    let mut flows = vec![0.0f64; supply.len() * demand.len()];
    if ns > 0 && nc > 0 {
        // Node layout: 0 = source, 1..=ns suppliers, ns+1..=ns+nc consumers,
        // ns+nc+1 = sink. Cross arcs are uncapacitated so every bottleneck
        // is a source or sink arc and the augmentation count stays bounded.
        let src = 0;
        let sink = ns + nc + 1;
        let mut net = Network::new(ns + nc + 2);
        for (a, &i) in rows.iter().enumerate() {
            net.add_arc(src, 1 + a, supply[i], 0.0);
        }
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                net.add_arc(1 + a, 1 + ns + b, f64::INFINITY, cost.at(i, j));
            }
        }
        for (b, &j) in cols.iter().enumerate() {
            net.add_arc(1 + ns + b, sink, demand[j], 0.0);
        }
        net.run(src, sink);
        for (a, &i) in rows.iter().enumerate() {
            for arc in &net.graph[1 + a] {
                let b = arc.to.checked_sub(1 + ns);
                if let Some(b) = b.filter(|&b| b < nc) {
                    if arc.cost >= 0.0 {
                        // Forward cross arc; its flow sits on the reverse arc.
                        let f = net.graph[arc.to][arc.rev].residual;
                        flows[i * demand.len() + cols[b]] = f;
                    }
                }
            }
        }
    }

    let mut total_cost = 0.0;
    let mut total_flow = 0.0;
    for i in 0..supply.len() {
        for j in 0..demand.len() {
            let f = flows[i * demand.len() + j];
            total_cost += f * cost.at(i, j);
            total_flow += f;
        }
    }
    Ok(FlowPlan {
        flows,
        rows: supply.len(),
        cols: demand.len(),
        total_cost,
        total_flow,
    })
}

/// Normalized Earth Mover's Distance between two weight vectors: optimal
/// transport cost divided by the total flow, which equals the smaller of
/// the two mass totals. The smaller side plays the consumer, so partial
/// matching leaves surplus mass unmoved.
///
/// Both vectors all-zero is an error; when exactly one side is empty there
/// is nothing to move and the distance is 0.
pub fn emd(supply: &WeightVector, demand: &WeightVector, cost: &CostMatrix) -> Result<f64, EmdError> {
    let plan = solve_transport(supply.weights(), demand.weights(), cost)?;
    if plan.total_flow <= 0.0 {
        return Ok(0.0);
    }
    Ok(plan.total_cost / plan.total_flow)
}

/// EMD between two signatures' decoded weight vectors; the single distance
/// every index decision uses.
pub fn emd_signatures(a: &Signature, b: &Signature, cost: &CostMatrix) -> Result<f64, EmdError> {
    if a.bins() != b.bins() || a.bits_per_block() != b.bits_per_block() {
        return Err(EmdError::DimensionMismatch(format!(
            "signatures {}x{} vs {}x{}",
            a.bins(),
            a.bits_per_block(),
            b.bins(),
            b.bits_per_block()
        )));
    }
    if a.bins() as usize != cost.rows {
        return Err(EmdError::DimensionMismatch(format!(
            "signature bins {} vs cost rows {}",
            a.bins(),
            cost.rows
        )));
    }
    emd(&a.weight_vector(), &b.weight_vector(), cost)
}

/// Brute-force reference for `solve_transport`, for test use.
///
/// Masses must be integer multiples of `granularity`, at most 20 units per
/// bin and at most 4 bins per side. Every integer flow matrix satisfying
/// the transportation constraints with saturating total flow is enumerated
/// (with admissible cost-bound pruning that never skips an optimum) and the
/// minimum cost returned.
pub fn oracle_transport(
    supply: &[f64],
    demand: &[f64],
    cost: &CostMatrix,
    granularity: f64,
) -> Result<f64, EmdError> {
    if supply.len() != cost.rows || demand.len() != cost.cols {
        return Err(EmdError::DimensionMismatch(format!(
            "supply {} / demand {} vs cost {}x{}",
            supply.len(),
            demand.len(),
            cost.rows,
            cost.cols
        )));
    }
    if supply.len() > 4 || demand.len() > 4 {
        return Err(EmdError::InstanceTooLarge(format!(
            "{}x{} bins, oracle handles at most 4x4",
            supply.len(),
            demand.len()
        )));
    }
    if !(granularity > 0.0) {
        return Err(EmdError::InstanceTooLarge(format!("granularity {granularity}")));
    }
    let to_units = |mass: &[f64]| -> Result<Vec<u32>, EmdError> {
        mass.iter()
            .map(|&x| {
                let u = x / granularity;
                let r = u.round();
                if (u - r).abs() > 1e-9 || r < 0.0 || r > 20.0 {
                    Err(EmdError::InstanceTooLarge(format!(
                        "mass {x} is not an integer 0..=20 at granularity {granularity}"
                    )))
                } else {
                    Ok(r as u32)
                }
            })
            .collect()
    };
    let su = to_units(supply)?;
    let du = to_units(demand)?;
    let total_s: u32 = su.iter().sum();
    let total_d: u32 = du.iter().sum();
    if total_s == 0 && total_d == 0 {
        return Err(EmdError::ZeroMass);
    }

    // Orient so rows are the smaller side; then saturation forces every row
    // to ship exactly its supply while columns stay capacity-bounded.
    let (rows, cols, cost_at): (Vec<u32>, Vec<u32>, Box<dyn Fn(usize, usize) -> f64>) =
        if total_s <= total_d {
            (su.clone(), du.clone(), Box::new(|r, c| cost.at(r, c)))
        } else {
            (du.clone(), su.clone(), Box::new(|r, c| cost.at(c, r)))
        };

    // Admissible remaining-cost bound: each row's unshipped units pay at
    // least that row's cheapest cell.
    let row_min: Vec<f64> = (0..rows.len())
        .map(|r| {
            (0..cols.len())
                .map(|c| cost_at(r, c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    struct Search<'a> {
        rows: &'a [u32],
        n_cols: usize,
        cost_at: &'a dyn Fn(usize, usize) -> f64,
        row_min: &'a [f64],
        best: f64,
    }

    impl Search<'_> {
        fn go(&mut self, r: usize, shipped: u32, col_rem: &mut [u32], acc: f64) {
            if r == self.rows.len() {
                if acc < self.best {
                    self.best = acc;
                }
                return;
            }
            let lower: f64 = (r..self.rows.len())
                .map(|i| {
                    let rem = if i == r { self.rows[i] - shipped } else { self.rows[i] };
                    rem as f64 * self.row_min[i]
                })
                .sum();
            if acc + lower >= self.best {
                return;
            }
            self.cell(r, 0, shipped, col_rem, acc);
        }

        fn cell(&mut self, r: usize, c: usize, shipped: u32, col_rem: &mut [u32], acc: f64) {
            let need = self.rows[r] - shipped;
            if c + 1 == self.n_cols {
                // Last column of the row takes whatever is left.
                if need <= col_rem[c] {
                    col_rem[c] -= need;
                    self.go(r + 1, 0, col_rem, acc + need as f64 * (self.cost_at)(r, c));
                    col_rem[c] += need;
                }
                return;
            }
            for f in 0..=need.min(col_rem[c]) {
                col_rem[c] -= f;
                self.cell(r, c + 1, shipped + f, col_rem, acc + f as f64 * (self.cost_at)(r, c));
                col_rem[c] += f;
            }
        }
    }

    let mut col_rem = cols.clone();
    let mut search = Search {
        rows: &rows,
        n_cols: cols.len(),
        cost_at: &*cost_at,
        row_min: &row_min,
        best: f64::INFINITY,
    };
    if rows.is_empty() || cols.is_empty() || rows.iter().all(|&r| r == 0) {
        return Ok(0.0);
    }
    search.go(0, 0, &mut col_rem, 0.0);
    Ok(search.best * granularity)
}
