//! Rate-compatible weighted belief-propagation decoder.
//!
//! The decoder unrolls sum-product iterations into cells; each cell owns a
//! multiplicative weight (and an optional, default-disabled bias) for every
//! potential edge of the full precode grid, so one parameter set serves every
//! punctured rate: decoding a shorter word simply runs on the sub-graph
//! induced by the first checks and variables.

use crate::autodiff::Real;
use crate::gf2::BitMatrix;

/// Channel LLRs are clipped to this magnitude before decoding.
pub const LLR_CLIP: f64 = 30.0;
/// The atanh argument is clipped to `[-1 + eps, 1 - eps]`.
pub const ATANH_CLIP_EPS: f64 = 1e-7;

/// Bipartite adjacency of a parity-check matrix: one edge per nonzero,
/// enumerated row-major so masked and standalone constructions agree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TannerGraph {
    n_vars: usize,
    n_checks: usize,
    edge_var: Vec<u32>,
    edge_check: Vec<u32>,
    var_edges: Vec<Vec<u32>>,
    check_edges: Vec<Vec<u32>>,
}

impl TannerGraph {
    pub fn from_parity_check(h: &BitMatrix) -> Self {
        Self::masked(h, h.rows(), h.cols())
    }

    /// Sub-graph induced by the first `n_checks` rows and `n_vars` columns.
    pub fn masked(h: &BitMatrix, n_checks: usize, n_vars: usize) -> Self {
        assert!(n_checks <= h.rows() && n_vars <= h.cols());
        let mut g = TannerGraph {
            n_vars,
            n_checks,
            edge_var: Vec::new(),
            edge_check: Vec::new(),
            var_edges: vec![Vec::new(); n_vars],
            check_edges: vec![Vec::new(); n_checks],
        };
        for j in 0..n_checks {
            for i in 0..n_vars {
                if h.get(j, i) {
                    let e = g.edge_var.len() as u32;
                    g.edge_var.push(i as u32);
                    g.edge_check.push(j as u32);
                    g.var_edges[i].push(e);
                    g.check_edges[j].push(e);
                }
            }
        }
        g
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_checks(&self) -> usize {
        self.n_checks
    }

    pub fn n_edges(&self) -> usize {
        self.edge_var.len()
    }

    pub fn edge_endpoints(&self, e: usize) -> (usize, usize) {
        (self.edge_var[e] as usize, self.edge_check[e] as usize)
    }

    pub fn var_edges(&self, i: usize) -> &[u32] {
        &self.var_edges[i]
    }

    pub fn check_edges(&self, j: usize) -> &[u32] {
        &self.check_edges[j]
    }
}

/// Per-cell, per-potential-edge decoder parameters over the full precode grid.
///
/// Entries are addressed by (cell, check row, variable column); only positions
/// where the current sub-matrix has a 1 are ever read, so the same grid serves
/// every rate. With all weights 1 and biases disabled the decoder is exactly
/// plain sum-product BP.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    cells: usize,
    checks: usize,
    vars: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    bias_enabled: bool,
}

impl DecoderParams {
    /// Grid with weights 1 and biases 0 (plain BP).
    pub fn plain(cells: usize, checks: usize, vars: usize) -> Self {
        DecoderParams {
            cells,
            checks,
            vars,
            alpha: vec![1.0; cells * checks * vars],
            beta: vec![0.0; cells * checks * vars],
            bias_enabled: false,
        }
    }

    /// Rebuilds a grid from stored values.
    pub fn from_parts(
        cells: usize,
        checks: usize,
        vars: usize,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        bias_enabled: bool,
    ) -> Result<Self, String> {
        let expected = cells * checks * vars;
        if alpha.len() != expected || beta.len() != expected {
            return Err(format!(
                "weight grids must hold {expected} values, got {} and {}",
                alpha.len(),
                beta.len()
            ));
        }
        Ok(DecoderParams { cells, checks, vars, alpha, beta, bias_enabled })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn checks(&self) -> usize {
        self.checks
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    #[inline]
    pub fn grid_index(&self, cell: usize, check: usize, var: usize) -> usize {
        debug_assert!(cell < self.cells && check < self.checks && var < self.vars);
        (cell * self.checks + check) * self.vars + var
    }

    pub fn alpha(&self, cell: usize, check: usize, var: usize) -> f64 {
        self.alpha[self.grid_index(cell, check, var)]
    }

    pub fn set_alpha(&mut self, cell: usize, check: usize, var: usize, value: f64) {
        let idx = self.grid_index(cell, check, var);
        self.alpha[idx] = value;
    }

    pub fn beta(&self, cell: usize, check: usize, var: usize) -> f64 {
        self.beta[self.grid_index(cell, check, var)]
    }

    pub fn set_beta(&mut self, cell: usize, check: usize, var: usize, value: f64) {
        let idx = self.grid_index(cell, check, var);
        self.beta[idx] = value;
    }

    pub fn bias_enabled(&self) -> bool {
        self.bias_enabled
    }

    pub fn set_bias_enabled(&mut self, enabled: bool) {
        self.bias_enabled = enabled;
    }

    pub fn alpha_values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_values_mut(&mut self) -> &mut [f64] {
        &mut self.alpha
    }

    pub fn beta_values(&self) -> &[f64] {
        &self.beta
    }

    /// Weights copied out per cell in the edge order of `graph`.
    pub fn edge_alphas(&self, graph: &TannerGraph) -> Vec<Vec<f64>> {
        (0..self.cells)
            .map(|l| {
                (0..graph.n_edges())
                    .map(|e| {
                        let (i, j) = graph.edge_endpoints(e);
                        self.alpha(l, j, i)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn edge_betas(&self, graph: &TannerGraph) -> Option<Vec<Vec<f64>>> {
        self.bias_enabled.then(|| {
            (0..self.cells)
                .map(|l| {
                    (0..graph.n_edges())
                        .map(|e| {
                            let (i, j) = graph.edge_endpoints(e);
                            self.beta(l, j, i)
                        })
                        .collect()
                })
                .collect()
        })
    }

    /// Copy of the top-left `checks x vars` block of the grid.
    pub fn sub_grid(&self, checks: usize, vars: usize) -> DecoderParams {
        assert!(checks <= self.checks && vars <= self.vars);
        let mut out = DecoderParams::plain(self.cells, checks, vars);
        out.bias_enabled = self.bias_enabled;
        for l in 0..self.cells {
            for j in 0..checks {
                for i in 0..vars {
                    let idx = out.grid_index(l, j, i);
                    out.alpha[idx] = self.alpha(l, j, i);
                    out.beta[idx] = self.beta(l, j, i);
                }
            }
        }
        out
    }
}

/// Variable-to-check half step: `V_e = L_i + sum of C over the other edges at i`.
pub(crate) fn v2c_step<T: Real>(llr: &[T], c_prev: Option<&[T]>, graph: &TannerGraph) -> Vec<T> {
    debug_assert_eq!(llr.len(), graph.n_vars());
    let mut out = Vec::with_capacity(graph.n_edges());
    for e in 0..graph.n_edges() {
        let (i, _) = graph.edge_endpoints(e);
        let mut v = llr[i];
        if let Some(c) = c_prev {
            for &e2 in graph.var_edges(i) {
                if e2 as usize != e {
                    v = v + c[e2 as usize];
                }
            }
        }
        out.push(v);
    }
    out
}

/// Check-to-variable half step:
/// `C_e = alpha_e * 2 atanh(prod of tanh(V/2) over the other edges at j) + beta_e`,
/// with the atanh argument clipped away from +-1.
pub(crate) fn c2v_step<T: Real>(
    v: &[T],
    alpha: &[T],
    beta: Option<&[T]>,
    graph: &TannerGraph,
) -> Vec<T> {
    debug_assert_eq!(v.len(), graph.n_edges());
    debug_assert_eq!(alpha.len(), graph.n_edges());
    let half_tanh: Vec<T> = v.iter().map(|&m| m.scale(0.5).tanh()).collect();
    let mut out = Vec::with_capacity(graph.n_edges());
    for e in 0..graph.n_edges() {
        let (_, j) = graph.edge_endpoints(e);
        let mut prod: Option<T> = None;
        for &e2 in graph.check_edges(j) {
            if e2 as usize != e {
                let t = half_tanh[e2 as usize];
                prod = Some(match prod {
                    None => t,
                    Some(p) => p * t,
                });
            }
        }
        // Degree-1 check: empty product is 1, saturating at the clip cap.
        let p = prod.unwrap_or_else(|| alpha[e].constant_like(1.0));
        let msg = p.clamp_sym(1.0 - ATANH_CLIP_EPS).atanh().scale(2.0);
        let weighted = alpha[e] * msg;
        out.push(match beta {
            Some(b) => weighted + b[e],
            None => weighted,
        });
    }
    out
}

/// Runs `alphas.len()` decoding cells and returns the output LLRs
/// `O_i = L_i + sum of final C over the edges at i`.
///
/// `llr` must already be clipped; both the inference and training paths call
/// this same function, so their arithmetic agrees bit for bit.
pub(crate) fn run_cells<T: Real>(
    llr: &[T],
    graph: &TannerGraph,
    alphas: &[Vec<T>],
    betas: Option<&[Vec<T>]>,
) -> Vec<T> {
    let mut c_msgs: Option<Vec<T>> = None;
    for (l, alpha) in alphas.iter().enumerate() {
        let v = v2c_step(llr, c_msgs.as_deref(), graph);
        c_msgs = Some(c2v_step(&v, alpha, betas.map(|b| &b[l][..]), graph));
    }
    let mut out = Vec::with_capacity(graph.n_vars());
    for i in 0..graph.n_vars() {
        let mut o = llr[i];
        if let Some(c) = &c_msgs {
            for &e in graph.var_edges(i) {
                o = o + c[e as usize];
            }
        }
        out.push(o);
    }
    out
}

/// One variable-to-check message layer (first cell passes all-zero `c_prev`).
pub fn v2c_messages(llr: &[f64], c_prev: &[f64], graph: &TannerGraph) -> Vec<f64> {
    assert_eq!(c_prev.len(), graph.n_edges());
    v2c_step(llr, Some(c_prev), graph)
}

/// One check-to-variable message layer using the weights of `cell`.
pub fn c2v_messages(
    v: &[f64],
    params: &DecoderParams,
    cell: usize,
    graph: &TannerGraph,
) -> Vec<f64> {
    let alpha: Vec<f64> = (0..graph.n_edges())
        .map(|e| {
            let (i, j) = graph.edge_endpoints(e);
            params.alpha(cell, j, i)
        })
        .collect();
    let beta: Option<Vec<f64>> = params.bias_enabled().then(|| {
        (0..graph.n_edges())
            .map(|e| {
                let (i, j) = graph.edge_endpoints(e);
                params.beta(cell, j, i)
            })
            .collect()
    });
    c2v_step(v, &alpha, beta.as_deref(), graph)
}

/// Decodes on a prebuilt graph; returns output LLRs and the hard decision
/// (sign zero resolves to bit 0).
pub fn decode_on_graph(
    llr: &[f64],
    graph: &TannerGraph,
    params: &DecoderParams,
    cells: usize,
) -> (Vec<f64>, Vec<u8>) {
    assert_eq!(llr.len(), graph.n_vars());
    assert!(cells <= params.cells());
    let clipped: Vec<f64> = llr.iter().map(|&l| l.clamp_sym(LLR_CLIP)).collect();
    let alphas = &params.edge_alphas(graph)[..cells];
    let betas = params.edge_betas(graph);
    let out = run_cells(&clipped, graph, alphas, betas.as_deref().map(|b| &b[..cells]).as_deref());
    let hard: Vec<u8> = out.iter().map(|&o| (o < 0.0) as u8).collect();
    (out, hard)
}

/// Decodes against a parity-check matrix, building its graph on the fly.
pub fn decode(
    llr: &[f64],
    h_sub: &BitMatrix,
    params: &DecoderParams,
    cells: usize,
) -> (Vec<f64>, Vec<u8>) {
    decode_on_graph(llr, &TannerGraph::from_parity_check(h_sub), params, cells)
}
