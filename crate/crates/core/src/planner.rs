//! Inverse design of S-shaped channels.
//!
//! The reachable shape depends only on (outer arc, inner length, relative
//! roll); a common roll spins it rigidly about the sheath axis. The search
//! therefore runs over those three parameters, matching the target in
//! axial/radial coordinates, and the outer roll is solved in closed form.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{numeric_jacobian, tip_position, JacobianSteps};
use crate::model::{Dof, JointState, Precurvature, RobotConfig};
use crate::sim::{channel_clearance, opposed_schedule, roll_in_place_schedule, ScenarioScript};

/// Relative rolls the planner may use.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum RollSet {
    #[default]
    Continuous,
    /// Allowed relative rolls, degrees.
    Discrete(Vec<f64>),
}

impl Serialize for RollSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RollSet::Continuous => s.serialize_str("continuous"),
            RollSet::Discrete(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for RollSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Word(String),
            List(Vec<f64>),
        }
        match Repr::deserialize(d)? {
            Repr::Word(w) if w == "continuous" => Ok(RollSet::Continuous),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "expected \"continuous\" or a list of rolls, got \"{w}\""
            ))),
            Repr::List(v) if v.is_empty() => Err(serde::de::Error::custom("roll set must not be empty")),
            Repr::List(v) => Ok(RollSet::Discrete(v)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub tip: f64,
    pub length: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { tip: 1.0, length: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridResolution {
    /// mm
    pub translation: f64,
    /// deg
    pub roll: f64,
}

impl Default for GridResolution {
    fn default() -> Self {
        Self {
            translation: 2.0,
            roll: 15.0,
        }
    }
}

/// Heat-treatment radii to try, applied to both tubes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSearch {
    pub min_radius: f64,
    pub max_radius: f64,
    pub step: f64,
}

fn default_total_length() -> f64 {
    90.0
}
fn default_threshold() -> f64 {
    1.0
}
fn default_top_k() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub target: Point3<f64>,
    /// Desired channel length (inner tube insertion), mm.
    #[serde(default = "default_total_length")]
    pub total_length: f64,
    #[serde(default)]
    pub allowed_relative_rolls: RollSet,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub grid: GridResolution,
    /// Largest tip error accepted as a hit, mm.
    #[serde(default = "default_threshold")]
    pub feasibility_threshold: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub curvature_search: Option<CurvatureSearch>,
}

impl PlanRequest {
    pub fn new(target: Point3<f64>, total_length: f64) -> Self {
        Self {
            target,
            total_length,
            allowed_relative_rolls: RollSet::Continuous,
            weights: CostWeights::default(),
            grid: GridResolution::default(),
            feasibility_threshold: default_threshold(),
            top_k: default_top_k(),
            curvature_search: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanCandidate {
    pub joints: JointState,
    pub predicted_tip: Point3<f64>,
    pub tip_error: f64,
    pub length_error: f64,
    pub cost: f64,
}

impl PlanCandidate {
    pub fn outer_arc(&self) -> f64 {
        self.joints.outer_translation
    }
    pub fn inner_arc(&self) -> f64 {
        self.joints.inner_translation - self.joints.outer_translation
    }
    pub fn relative_roll(&self) -> f64 {
        wrap_deg(self.joints.relative_roll())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleStyle {
    /// Rolls set before drilling (S2-like).
    Opposed,
    /// Aligned co-advance, then inner roll in place (S1-like).
    RollInPlace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSchedule {
    pub style: ScheduleStyle,
    /// False when an in-place roll would move the tip by more than the
    /// channel clearance.
    pub feasible: bool,
    /// Tip displacement of the in-place roll, mm (0 for opposed schedules).
    pub roll_jump: f64,
    pub script: ScenarioScript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub best: PlanCandidate,
    /// Refined candidates, best first.
    pub ranking: Vec<PlanCandidate>,
    /// Cost of the best grid point before refinement.
    pub grid_best_cost: f64,
    pub grid_evaluations: usize,
    /// Heat-treatment radius used when curvature search is on, mm.
    pub precurvature_radius: Option<f64>,
    pub schedules: Vec<PlannedSchedule>,
}

impl PlanResult {
    pub fn script(&self, style: ScheduleStyle) -> Option<&ScenarioScript> {
        self.schedules.iter().find(|s| s.style == style).map(|s| &s.script)
    }
}

/// Wraps an angle to (−180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// `w_tip·‖tip − target‖² + w_len·(length − L_target)²`.
pub fn plan_cost(config: &RobotConfig, joints: &JointState, request: &PlanRequest) -> Result<f64> {
    let tip = tip_position(config, joints)?;
    Ok(cost_of(&tip, joints.inner_translation, request))
}

fn cost_of(tip: &Point3<f64>, length: f64, request: &PlanRequest) -> f64 {
    request.weights.tip * (tip - request.target).norm_squared()
        + request.weights.length * (length - request.total_length).powi(2)
}

/// Reduced parameters: (outer arc, inner length, relative roll).
#[derive(Debug, Clone, Copy)]
struct Params {
    outer: f64,
    inner: f64,
    relative: f64,
}

struct Problem<'a> {
    config: &'a RobotConfig,
    request: &'a PlanRequest,
    outer_range: (f64, f64),
    inner_range: (f64, f64),
}

impl Problem<'_> {
    fn clamp(&self, p: Params) -> Params {
        let outer = p.outer.clamp(self.outer_range.0, self.outer_range.1);
        let inner = p.inner.clamp(self.inner_range.0.max(outer), self.inner_range.1);
        Params {
            outer: outer.min(inner),
            inner,
            relative: wrap_deg(p.relative),
        }
    }

    /// Completes `p` with the outer roll that turns the shape toward the target.
    fn candidate(&self, p: Params) -> Result<PlanCandidate> {
        let shape = JointState::new(p.outer, p.inner, 0.0, p.relative);
        let tip0 = tip_position(self.config, &shape)?;
        let base = self.config.sheath.pose;
        let local = base.orientation.inverse() * (tip0 - base.origin);
        let target = base.orientation.inverse() * (self.request.target - base.origin);
        let (r0, rt) = (local.x.hypot(local.y), target.x.hypot(target.y));
        let roll = if r0 < 1e-12 || rt < 1e-12 {
            0.0
        } else {
            wrap_deg((target.y.atan2(target.x) - local.y.atan2(local.x)).to_degrees())
        };
        let joints = JointState::new(p.outer, p.inner, roll, wrap_deg(roll + p.relative));
        let tip = tip_position(self.config, &joints)?;
        Ok(PlanCandidate {
            joints,
            predicted_tip: tip,
            tip_error: (tip - self.request.target).norm(),
            length_error: p.inner - self.request.total_length,
            cost: cost_of(&tip, p.inner, self.request),
        })
    }

    fn params_of(c: &PlanCandidate) -> Params {
        Params {
            outer: c.joints.outer_translation,
            inner: c.joints.inner_translation,
            relative: c.relative_roll(),
        }
    }

    fn continuous(&self) -> bool {
        matches!(self.request.allowed_relative_rolls, RollSet::Continuous)
    }

    /// Shrinking-step coordinate descent; stops once the translation step
    /// falls below 1e-3 mm.
    fn coordinate_descent(&self, start: PlanCandidate) -> Result<PlanCandidate> {
        let mut best = start;
        let mut step = 0.5 * self.request.grid.translation;
        let mut roll_step = 0.5 * self.request.grid.roll;
        while step >= 1e-3 {
            let mut improved = false;
            let dims = if self.continuous() { 3 } else { 2 };
            for dim in 0..dims {
                for sign in [1.0, -1.0] {
                    loop {
                        let mut p = Self::params_of(&best);
                        match dim {
                            0 => p.outer += sign * step,
                            1 => p.inner += sign * step,
                            _ => p.relative += sign * roll_step,
                        }
                        let c = self.candidate(self.clamp(p))?;
                        if c.cost < best.cost - 1e-15 {
                            best = c;
                            improved = true;
                        } else {
                            break;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
                roll_step *= 0.5;
            }
        }
        Ok(best)
    }

    /// Gauss-Newton steps on the full joint vector using the numeric
    /// Jacobian; the common roll moves both roll joints together.
    fn gauss_newton(&self, start: PlanCandidate, iterations: usize) -> Result<PlanCandidate> {
        let mut best = start;
        let (wt, wl) = (self.request.weights.tip.sqrt(), self.request.weights.length.sqrt());
        let free_relative = self.continuous();
        let ncols = if free_relative { 4 } else { 3 };
        for _ in 0..iterations {
            let jac = numeric_jacobian(self.config, &best.joints, JacobianSteps::default())?;
            let mut a = DMatrix::zeros(4, ncols);
            let mut r = DVector::zeros(4);
            let cols = [
                jac.column(Dof::OuterTranslation),
                jac.column(Dof::InnerTranslation),
                jac.column(Dof::OuterRoll) + jac.column(Dof::InnerRoll),
                jac.column(Dof::InnerRoll),
            ];
            for (k, col) in cols.iter().take(ncols).enumerate() {
                for row in 0..3 {
                    a[(row, k)] = wt * col[row];
                }
            }
            a[(3, 1)] = wl;
            let err = best.predicted_tip - self.request.target;
            for row in 0..3 {
                r[row] = -wt * err[row];
            }
            r[3] = -wl * best.length_error;
            let Ok(delta) = a.svd(true, true).solve(&r, 1e-10) else {
                break;
            };
            let p = Self::params_of(&best);
            let trial = Params {
                outer: p.outer + delta[0],
                inner: p.inner + delta[1],
                relative: p.relative + if free_relative { delta[3] } else { 0.0 },
            };
            let c = self.candidate(self.clamp(trial))?;
            if c.cost < best.cost {
                best = c;
            } else {
                break;
            }
        }
        Ok(best)
    }

    fn refine(&self, seed: PlanCandidate) -> Result<PlanCandidate> {
        let c = self.gauss_newton(seed, 10)?;
        let c = self.coordinate_descent(c)?;
        self.gauss_newton(c, 5)
    }
}

fn steps(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let n = ((hi - lo) / h).floor() as usize;
    let mut v: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
    if hi - v[v.len() - 1] > 1e-9 {
        v.push(hi);
    }
    v
}

/// (cost, total length, |relative roll|), then the remaining parameters so
/// the order is total.
fn rank(a: &PlanCandidate, b: &PlanCandidate) -> Ordering {
    a.cost
        .total_cmp(&b.cost)
        .then(a.joints.inner_translation.total_cmp(&b.joints.inner_translation))
        .then(a.relative_roll().abs().total_cmp(&b.relative_roll().abs()))
        .then(a.joints.outer_translation.total_cmp(&b.joints.outer_translation))
        .then(a.relative_roll().total_cmp(&b.relative_roll()))
        .then(a.joints.outer_roll.total_cmp(&b.joints.outer_roll))
}

fn validate(request: &PlanRequest) -> Result<()> {
    let ok = request.target.coords.iter().all(|v| v.is_finite())
        && request.total_length.is_finite()
        && request.total_length >= 0.0
        && request.weights.tip >= 0.0
        && request.weights.length >= 0.0
        && request.weights.tip + request.weights.length > 0.0
        && request.grid.translation > 0.0
        && request.grid.roll > 0.0
        && request.feasibility_threshold > 0.0
        && request.top_k > 0;
    if !ok {
        return Err(Error::InvalidArgument(
            "plan request needs a finite target, non-negative weights, positive grid steps, threshold and top_k".into(),
        ));
    }
    if let RollSet::Discrete(v) = &request.allowed_relative_rolls {
        if v.is_empty() || v.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidArgument(
                "allowed relative rolls must be finite and non-empty".into(),
            ));
        }
    }
    Ok(())
}

fn plan_fixed(request: &PlanRequest, config: &RobotConfig) -> Result<(PlanCandidate, Vec<PlanCandidate>, f64, usize)> {
    let limits = &config.joint_limits;
    let problem = Problem {
        config,
        request,
        outer_range: (limits.outer_translation.min.max(0.0), limits.outer_translation.max),
        inner_range: (limits.inner_translation.min.max(0.0), limits.inner_translation.max),
    };
    let rolls: Vec<f64> = match &request.allowed_relative_rolls {
        RollSet::Continuous => {
            let n = (360.0 / request.grid.roll).round().max(1.0) as usize;
            (0..n).map(|i| wrap_deg(180.0 - i as f64 * 360.0 / n as f64)).collect()
        }
        RollSet::Discrete(v) => {
            let mut v: Vec<f64> = v.iter().map(|r| wrap_deg(*r)).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        }
    };
    let h = request.grid.translation;
    let outers = steps(problem.outer_range.0, problem.outer_range.1, h);
    let mut grid = Vec::new();
    for &outer in &outers {
        for inner in steps(outer.max(problem.inner_range.0), problem.inner_range.1, h) {
            for &relative in &rolls {
                grid.push(Params { outer, inner, relative });
            }
        }
    }
    let mut evaluated: Vec<PlanCandidate> = grid.par_iter().map(|p| problem.candidate(*p)).collect::<Result<_>>()?;
    evaluated.sort_by(rank);
    let grid_best = evaluated[0];

    // refine distinct seeds; refined results are ranked again
    let seeds: Vec<PlanCandidate> = evaluated.iter().take(8.max(request.top_k)).copied().collect();
    let mut refined: Vec<PlanCandidate> = seeds.par_iter().map(|s| problem.refine(*s)).collect::<Result<_>>()?;
    refined.sort_by(rank);
    let mut ranking: Vec<PlanCandidate> = Vec::new();
    for c in refined {
        let duplicate = ranking.iter().any(|r| {
            (r.joints.outer_translation - c.joints.outer_translation).abs() < 1e-2
                && (r.joints.inner_translation - c.joints.inner_translation).abs() < 1e-2
                && wrap_deg(r.relative_roll() - c.relative_roll()).abs() < 0.1
        });
        if !duplicate {
            ranking.push(c);
        }
    }
    ranking.truncate(request.top_k);
    Ok((ranking[0], ranking, grid_best.cost, grid.len()))
}

/// Schedules reaching `joints` in both drilling styles.
pub fn schedules_for(config: &RobotConfig, joints: &JointState) -> Result<Vec<PlannedSchedule>> {
    let feed = config.feed_default;
    let (lo, li, ro, ri) = (
        joints.outer_translation,
        joints.inner_translation,
        joints.outer_roll,
        joints.inner_roll,
    );
    let aligned = tip_position(config, &JointState::new(lo, lo, ro, ro))?;
    let rolled = tip_position(config, &JointState::new(lo, lo, ro, ri))?;
    let jump = (rolled - aligned).norm();
    Ok(vec![
        PlannedSchedule {
            style: ScheduleStyle::Opposed,
            feasible: true,
            roll_jump: 0.0,
            script: opposed_schedule("plan-opposed", lo, li, ro, ri, feed),
        },
        PlannedSchedule {
            style: ScheduleStyle::RollInPlace,
            feasible: jump <= channel_clearance(config),
            roll_jump: jump,
            script: roll_in_place_schedule(
                "plan-roll-in-place",
                lo,
                li,
                ro,
                ri,
                feed,
                config.joint_limits.max_roll_speed,
            ),
        },
    ])
}

/// Best candidate, ranking, grid cost, evaluations, pre-curvature and the
/// configuration it was planned with.
type SearchBest = (PlanCandidate, Vec<PlanCandidate>, f64, usize, Option<f64>, RobotConfig);

/// Coarse grid over (outer arc, inner length, relative roll), then local
/// refinement of the best grid points.
pub fn plan_s_shape(request: &PlanRequest, config: &RobotConfig) -> Result<PlanResult> {
    validate(request)?;
    let mut best: Option<SearchBest> = None;
    let radii: Vec<Option<f64>> = match request.curvature_search {
        None => vec![None],
        Some(cs) => {
            if !(cs.min_radius > 0.0 && cs.max_radius >= cs.min_radius && cs.step > 0.0) {
                return Err(Error::InvalidArgument(
                    "curvature search needs 0 < min ≤ max and a positive step".into(),
                ));
            }
            steps(cs.min_radius, cs.max_radius, cs.step)
                .into_iter()
                .map(Some)
                .collect()
        }
    };
    let mut evaluations = 0;
    for radius in radii {
        let cfg = match radius {
            Some(r) => config.clone().with_precurvature(Precurvature::Radius(r)),
            None => config.clone(),
        };
        let (winner, ranking, grid_cost, n) = plan_fixed(request, &cfg)?;
        evaluations += n;
        let better = match &best {
            None => true,
            Some((b, ..)) => rank(&winner, b) == Ordering::Less,
        };
        if better {
            best = Some((winner, ranking, grid_cost, n, radius, cfg));
        }
    }
    let (winner, ranking, grid_best_cost, _, precurvature_radius, cfg) = best.expect("at least one radius");
    if winner.tip_error > request.feasibility_threshold {
        return Err(Error::Unreachable {
            tip_error: winner.tip_error,
            cost: winner.cost,
        });
    }
    Ok(PlanResult {
        best: winner,
        schedules: schedules_for(&cfg, &winner.joints)?,
        ranking,
        grid_best_cost,
        grid_evaluations: evaluations,
        precurvature_radius,
    })
}
