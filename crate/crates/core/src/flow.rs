//! Coverage complexity by linear programming.
//!
//! `phi_star` solves the stochastic minimum-flow problem: find the cheapest
//! nonnegative flow `eta` (in episodes) that obeys the navigation constraints and
//! dominates the target `c`. Its value is the minimal expected number of episodes
//! needed to meet `c`, and `eta / value` is the optimal sampling distribution.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::lp::{LinearProgram, LpError, LpStatus, Relation, Sense};
use crate::mdp::{
    max_reach_table, Dims, MdpError, Occupancy, StageTable, TabularMdp, Triplet, VisitCounts,
};

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("target requires samples at unreachable triplet {0:?}")]
    UnreachableSupport(Triplet),
    #[error("invalid target entry {value} at {at:?}")]
    InvalidTarget { at: Triplet, value: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Required visit counts `c_h(s,a) >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetFunction {
    c: StageTable<f64>,
}

#[derive(Serialize, Deserialize)]
struct TargetFile {
    c: Vec<Vec<Vec<f64>>>,
}

impl TargetFunction {
    pub fn new(c: StageTable<f64>) -> Result<Self, FlowError> {
        if let Some((at, &value)) = c.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(FlowError::InvalidTarget { at, value });
        }
        Ok(TargetFunction { c })
    }

    pub fn zeros(dims: Dims) -> Self {
        TargetFunction {
            c: StageTable::zeros(dims),
        }
    }

    pub fn constant(dims: Dims, value: f64) -> Result<Self, FlowError> {
        Self::new(StageTable::filled(dims, value))
    }

    /// `value` on every triplet some policy reaches, 0 elsewhere.
    pub fn constant_on_reachable(mdp: &TabularMdp, value: f64) -> Result<Self, FlowError> {
        Self::new(max_reach_table(mdp).map(|&w| if w > 0.0 { value } else { 0.0 }))
    }

    /// Indicator of `set`.
    pub fn indicator(dims: Dims, set: &[Triplet]) -> Self {
        let mut c = StageTable::zeros(dims);
        for &t in set {
            c[t] = 1.0;
        }
        TargetFunction { c }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.c.dims()
    }

    #[inline]
    pub fn table(&self) -> &StageTable<f64> {
        &self.c
    }

    #[inline]
    pub fn get(&self, t: Triplet) -> f64 {
        self.c[t]
    }

    pub fn into_table(self) -> StageTable<f64> {
        self.c
    }

    /// Triplets with a positive requirement, in storage order.
    pub fn support(&self) -> Vec<Triplet> {
        self.c
            .iter()
            .filter(|(_, &v)| v > 0.0)
            .map(|(t, _)| t)
            .collect()
    }

    /// Smallest positive requirement, at least 1.
    pub fn c_min(&self) -> f64 {
        self.c
            .as_slice()
            .iter()
            .copied()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min)
            .max(1.0)
            .min(f64::MAX)
    }

    pub fn c_max(&self) -> f64 {
        self.c.as_slice().iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, FlowError> {
        Self::new(self.c.scaled(factor))
    }

    /// Zero outside stage `stage`.
    pub fn restricted_to_stage(&self, stage: usize) -> Self {
        let c = StageTable::from_fn(self.dims(), |t| {
            if t.stage == stage {
                self.c[t]
            } else {
                0.0
            }
        });
        TargetFunction { c }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TargetFile {
            c: self.c.to_nested(),
        })
        .expect("serialising nested floats cannot fail")
    }

    pub fn from_json(dims: Dims, text: &str) -> Result<Self, FlowError> {
        let file: TargetFile = serde_json::from_str(text)?;
        Self::new(StageTable::from_nested(dims, file.c)?)
    }

    pub fn load(dims: Dims, path: impl AsRef<Path>) -> Result<Self, FlowError> {
        Self::from_json(dims, &std::fs::read_to_string(path)?)
    }
}

/// Result of one of the occupancy LPs.
#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective value; NaN unless optimal.
    pub value: f64,
    /// Flow or distribution at the optimum.
    pub primal: Option<Occupancy>,
}

#[derive(Serialize)]
struct LpSolutionRecord<'a> {
    status: LpStatus,
    value: Option<f64>,
    primal: Option<&'a [f64]>,
}

impl LpSolution {
    fn not_optimal(status: LpStatus) -> Self {
        LpSolution {
            status,
            value: f64::NAN,
            primal: None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// `{"status", "value", "primal"}` with the primal flattened in `[h][s][a]` order.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(LpSolutionRecord {
            status: self.status,
            value: self.is_optimal().then_some(self.value),
            primal: self.primal.as_ref().map(|o| o.rho.as_slice()),
        })
        .expect("record is plain data")
    }
}

/// `phi*(c)` with its minimal flow.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiStar {
    pub value: f64,
    /// Minimal flow `eta*`, in episodes.
    pub flow: Occupancy,
}

impl PhiStar {
    /// Optimal coverage distribution `eta* / phi*`; `None` for a zero target.
    pub fn rho(&self) -> Option<Occupancy> {
        self.flow.normalize()
    }

    pub fn to_solution(&self) -> LpSolution {
        LpSolution {
            status: LpStatus::Optimal,
            value: self.value,
            primal: Some(self.flow.clone()),
        }
    }
}

fn check_dims(mdp: &TabularMdp, got: Dims) -> Result<(), FlowError> {
    if mdp.dims() != got {
        return Err(MdpError::DimensionMismatch {
            expected: mdp.dims(),
            got,
        }
        .into());
    }
    Ok(())
}

/// Variables of the occupancy LPs: one per triplet in `keep`, others fixed at 0.
struct FlowVars {
    dims: Dims,
    var_of: Vec<Option<usize>>,
    triplets: Vec<Triplet>,
}

impl FlowVars {
    fn new(dims: Dims, keep: impl Fn(Triplet) -> bool) -> Self {
        let mut var_of = vec![None; dims.len()];
        let mut triplets = Vec::new();
        for (i, t) in dims.triplets().enumerate() {
            if keep(t) {
                var_of[i] = Some(triplets.len());
                triplets.push(t);
            }
        }
        FlowVars {
            dims,
            var_of,
            triplets,
        }
    }

    fn len(&self) -> usize {
        self.triplets.len()
    }

    fn var(&self, h: usize, s: usize, a: usize) -> Option<usize> {
        self.var_of[self.dims.index(h, s, a)]
    }

    /// Navigation rows `sum_a x_h(s,a) = sum x_{h-1}(s',a') p(s|s',a')` for `h >= 1`.
    fn add_navigation(&self, lp: &mut LinearProgram, mdp: &TabularMdp) {
        let d = self.dims;
        for h in 1..d.horizon {
            let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d.states];
            for s in 0..d.states {
                for a in 0..d.actions {
                    if let Some(v) = self.var(h, s, a) {
                        rows[s].push((v, 1.0));
                    }
                }
            }
            for sp in 0..d.states {
                for a in 0..d.actions {
                    if let Some(v) = self.var(h - 1, sp, a) {
                        for (s, &p) in mdp.next_state_probs(h - 1, sp, a).iter().enumerate() {
                            if p != 0.0 {
                                rows[s].push((v, -p));
                            }
                        }
                    }
                }
            }
            for row in rows {
                if !row.is_empty() {
                    lp.add(row, Relation::Eq, 0.0);
                }
            }
        }
    }

    fn occupancy(&self, x: &[f64]) -> StageTable<f64> {
        let mut rho = StageTable::zeros(self.dims);
        for (t, &v) in self.triplets.iter().zip(x) {
            rho[*t] = v;
        }
        rho
    }
}

fn reachable_mask(mdp: &TabularMdp) -> StageTable<bool> {
    max_reach_table(mdp).map(|&w| w > 0.0)
}

/// Solves the stochastic minimum-flow problem for `c`.
pub fn phi_star(mdp: &TabularMdp, c: &TargetFunction) -> Result<PhiStar, FlowError> {
    check_dims(mdp, c.dims())?;
    let reachable = reachable_mask(mdp);
    if let Some(t) = c.support().into_iter().find(|&t| !reachable[t]) {
        return Err(FlowError::UnreachableSupport(t));
    }
    let vars = FlowVars::new(mdp.dims(), |t| reachable[t]);
    let s1 = mdp.initial_state();
    let mut objective = vec![0.0; vars.len()];
    for a in 0..mdp.num_actions() {
        if let Some(v) = vars.var(0, s1, a) {
            objective[v] = 1.0;
        }
    }
    let mut lp = LinearProgram::new(Sense::Minimize, objective);
    for (v, &t) in vars.triplets.iter().enumerate() {
        lp.set_lower(v, c.get(t));
    }
    vars.add_navigation(&mut lp, mdp);
    let out = lp.solve()?;
    match out.status {
        LpStatus::Optimal => Ok(PhiStar {
            value: out.value,
            flow: Occupancy::flow(vars.occupancy(&out.x)),
        }),
        // with a reachable support a feasible bounded flow always exists
        other => unreachable!("minimum-flow LP returned {other:?} on a reachable support"),
    }
}

/// The three bounds of the sandwich `b1 <= phi* <= b2 <= b3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoverageBounds {
    /// `max_h sum_{s,a} c_h(s,a)`.
    pub b1: f64,
    /// Sum over stages of the single-stage coverage complexities.
    pub b2: f64,
    /// `sum c_h(s,a) / max_reach(h,s,a)`.
    pub b3: f64,
}

pub fn coverage_bounds(mdp: &TabularMdp, c: &TargetFunction) -> Result<CoverageBounds, FlowError> {
    check_dims(mdp, c.dims())?;
    let d = mdp.dims();
    let reach = max_reach_table(mdp);
    let mut b3 = 0.0;
    for t in c.support() {
        if reach[t] <= 0.0 {
            return Err(FlowError::UnreachableSupport(t));
        }
        b3 += c.get(t) / reach[t];
    }
    let b1 = (0..d.horizon)
        .map(|h| c.table().stage_sum(h))
        .fold(0.0, f64::max);
    let mut b2 = 0.0;
    for h in 0..d.horizon {
        let stage = c.restricted_to_stage(h);
        if stage.table().stage_sum(h) > 0.0 {
            b2 += phi_star(mdp, &stage)?.value;
        }
    }
    Ok(CoverageBounds { b1, b2, b3 })
}

/// `max_{h,s,a} max_reach(h,s,a) / rho_h(s,a)`, skipping unreachable triplets.
/// Returns `f64::INFINITY` when `rho` misses a reachable triplet.
pub fn concentrability(mdp: &TabularMdp, rho: &Occupancy) -> Result<f64, FlowError> {
    check_dims(mdp, rho.dims())?;
    let reach = max_reach_table(mdp);
    let mut worst: f64 = 0.0;
    for (t, &w) in reach.iter() {
        if w <= 0.0 {
            continue;
        }
        let r = rho.rho[t];
        if r <= 0.0 {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(w / r);
    }
    Ok(worst)
}

/// `Omega(p_hat)` intersected with `rho <= 2^-k n` and, optionally, `rho . r_hat >= v_lower`.
pub struct OccupancyPolytope<'a> {
    model: &'a TabularMdp,
    vars: FlowVars,
    caps: Vec<f64>,
    value_floor: Option<(&'a StageTable<f64>, f64)>,
}

impl<'a> OccupancyPolytope<'a> {
    /// `model` is the (empirical) transition model; its rewards are ignored.
    pub fn new(
        model: &'a TabularMdp,
        counts: &VisitCounts,
        phase: u32,
        value_floor: Option<(&'a StageTable<f64>, f64)>,
    ) -> Result<Self, FlowError> {
        check_dims(model, counts.dims())?;
        if let Some((r, _)) = value_floor {
            check_dims(model, r.dims())?;
        }
        let scale = 0.5f64.powi(phase as i32);
        let reachable = reachable_mask(model);
        let vars = FlowVars::new(model.dims(), |t| reachable[t] && counts.get(t) > 0);
        let caps = vars
            .triplets
            .iter()
            .map(|&t| scale * counts.get(t) as f64)
            .collect();
        Ok(OccupancyPolytope {
            model,
            vars,
            caps,
            value_floor,
        })
    }

    /// Maximises `objective . rho` over the polytope.
    pub fn maximize(&self, objective: &StageTable<f64>) -> Result<LpSolution, FlowError> {
        check_dims(self.model, objective.dims())?;
        let obj: Vec<f64> = self.vars.triplets.iter().map(|&t| objective[t]).collect();
        let mut lp = LinearProgram::new(Sense::Maximize, obj);
        let s1 = self.model.initial_state();
        let start: Vec<(usize, f64)> = (0..self.model.num_actions())
            .filter_map(|a| self.vars.var(0, s1, a).map(|v| (v, 1.0)))
            .collect();
        if start.is_empty() {
            return Ok(LpSolution::not_optimal(LpStatus::Infeasible));
        }
        lp.add(start, Relation::Eq, 1.0);
        self.vars.add_navigation(&mut lp, self.model);
        for (v, &cap) in self.caps.iter().enumerate() {
            lp.add(vec![(v, 1.0)], Relation::Le, cap);
        }
        if let Some((r, floor)) = self.value_floor {
            let row: Vec<(usize, f64)> = self
                .vars
                .triplets
                .iter()
                .enumerate()
                .filter(|(_, &t)| r[t] != 0.0)
                .map(|(v, &t)| (v, r[t]))
                .collect();
            if !row.is_empty() {
                lp.add(row, Relation::Ge, floor);
            } else if floor > 0.0 {
                return Ok(LpSolution::not_optimal(LpStatus::Infeasible));
            }
        }
        let out = lp.solve()?;
        if out.status != LpStatus::Optimal {
            return Ok(LpSolution::not_optimal(out.status));
        }
        Ok(LpSolution {
            status: LpStatus::Optimal,
            value: out.value,
            primal: Some(Occupancy::distribution(self.vars.occupancy(&out.x))),
        })
    }
}

/// `max rho . r_hat` over `rho in Omega(p_hat)` with `rho <= 2^-k n`.
pub fn constrained_best_value(
    p_hat: &TabularMdp,
    r_hat: &StageTable<f64>,
    counts: &VisitCounts,
    phase: u32,
) -> Result<LpSolution, FlowError> {
    OccupancyPolytope::new(p_hat, counts, phase, None)?.maximize(r_hat)
}

/// `max rho_h(s,a)` over the polytope that additionally requires `rho . r_hat >= v_lower`.
pub fn constrained_max_occupancy(
    p_hat: &TabularMdp,
    r_hat: &StageTable<f64>,
    counts: &VisitCounts,
    phase: u32,
    v_lower: f64,
    target: Triplet,
) -> Result<LpSolution, FlowError> {
    let polytope = OccupancyPolytope::new(p_hat, counts, phase, Some((r_hat, v_lower)))?;
    let mut objective = StageTable::zeros(p_hat.dims());
    objective[target] = 1.0;
    polytope.maximize(&objective)
}
