//! Physical description of the robot: tubes, sheath, drill bit and limits.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::Frame;

/// Default elastic modulus assumed for superelastic NiTi, GPa.
pub const NITI_MODULUS_GPA: f64 = 60.0;

/// Radius of the stress-free pre-curvature of a tube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Precurvature {
    Radius(f64),
    Straight,
}

impl Precurvature {
    /// Curvature in 1/mm; zero for a straight tube.
    pub fn curvature(&self) -> f64 {
        match *self {
            Precurvature::Radius(r) => 1.0 / r,
            Precurvature::Straight => 0.0,
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match *self {
            Precurvature::Radius(r) => Some(r),
            Precurvature::Straight => None,
        }
    }
}

impl Serialize for Precurvature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Precurvature::Radius(r) => s.serialize_f64(*r),
            Precurvature::Straight => s.serialize_str("straight"),
        }
    }
}

impl<'de> Deserialize<'de> for Precurvature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(r) => Ok(Precurvature::Radius(r)),
            Raw::Text(t) if t == "straight" => Ok(Precurvature::Straight),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a radius in mm or \"straight\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSpec {
    pub name: String,
    pub outer_diameter: f64,
    pub wall_thickness: f64,
    pub total_length: f64,
    pub precurvature_radius: Precurvature,
    /// GPa
    #[serde(default = "default_modulus")]
    pub elastic_modulus: f64,
    #[serde(default = "default_curved_fraction")]
    pub curved_fraction: f64,
}

fn default_modulus() -> f64 {
    NITI_MODULUS_GPA
}

fn default_curved_fraction() -> f64 {
    1.0
}

impl TubeSpec {
    pub fn inner_diameter(&self) -> f64 {
        self.outer_diameter - 2.0 * self.wall_thickness
    }

    pub fn curvature(&self) -> f64 {
        self.precurvature_radius.curvature()
    }

    /// Length of the distal, heat-treated portion, mm.
    pub fn curved_length(&self) -> f64 {
        self.curved_fraction * self.total_length
    }

    pub fn second_moment(&self) -> f64 {
        second_moment_of_area(self.outer_diameter, self.inner_diameter().max(0.0)).unwrap_or(f64::NAN)
    }

    /// Bending stiffness EI in N·mm² (GPa = 1e3 N/mm²).
    pub fn bending_stiffness(&self) -> f64 {
        self.elastic_modulus * 1e3 * self.second_moment()
    }

    fn check(&self, report: &mut ValidationReport) {
        let n = &self.name;
        if !(self.wall_thickness > 0.0 && self.outer_diameter > 2.0 * self.wall_thickness) {
            report.push(
                "tube geometry",
                format!("{n}: need outer_diameter > 2 x wall_thickness > 0"),
            );
        }
        if !(self.total_length > 0.0) {
            report.push("tube geometry", format!("{n}: total_length must be positive"));
        }
        if let Precurvature::Radius(r) = self.precurvature_radius {
            if !(r > 0.0 && r.is_finite()) {
                report.push("tube geometry", format!("{n}: precurvature_radius must be positive"));
            }
        }
        if !(self.curved_fraction > 0.0 && self.curved_fraction <= 1.0) {
            report.push("tube geometry", format!("{n}: curved_fraction must lie in (0, 1]"));
        }
        if !(self.elastic_modulus > 0.0) {
            report.push("tube geometry", format!("{n}: elastic_modulus must be positive"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheathSpec {
    pub inner_diameter: f64,
    pub length: f64,
    #[serde(default)]
    pub pose: Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrillBitSpec {
    pub bit_diameter: f64,
    #[serde(default)]
    pub runout: f64,
    pub min_cut_rpm: f64,
    pub torque_coil_od: f64,
    pub shaft_od: f64,
}

impl DrillBitSpec {
    pub fn cut_diameter(&self) -> f64 {
        self.bit_diameter + 2.0 * self.runout
    }

    pub fn cut_radius(&self) -> f64 {
        0.5 * self.cut_diameter()
    }
}

/// Limits of one actuated degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    /// mm
    pub outer_translation: Range,
    /// mm
    pub inner_translation: Range,
    /// deg
    pub outer_roll: Range,
    /// deg
    pub inner_roll: Range,
    /// mm/s
    pub max_translation_speed: f64,
    /// deg/s
    pub max_roll_speed: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            outer_translation: Range::new(0.0, 41.5),
            inner_translation: Range::new(0.0, 100.0),
            outer_roll: Range::new(-360.0, 360.0),
            inner_roll: Range::new(-360.0, 360.0),
            max_translation_speed: 5.0,
            max_roll_speed: 30.0,
        }
    }
}

impl JointLimits {
    pub fn range(&self, dof: Dof) -> Range {
        match dof {
            Dof::OuterTranslation => self.outer_translation,
            Dof::InnerTranslation => self.inner_translation,
            Dof::OuterRoll => self.outer_roll,
            Dof::InnerRoll => self.inner_roll,
        }
    }

    pub fn max_speed(&self, dof: Dof) -> f64 {
        if dof.is_translation() {
            self.max_translation_speed
        } else {
            self.max_roll_speed
        }
    }

    pub fn contains(&self, joints: &JointState) -> bool {
        Dof::ALL.iter().all(|&d| self.range(d).contains(joints.get(d)))
    }
}

/// The four actuated degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dof {
    OuterTranslation,
    InnerTranslation,
    OuterRoll,
    InnerRoll,
}

impl Dof {
    pub const ALL: [Dof; 4] = [
        Dof::OuterTranslation,
        Dof::InnerTranslation,
        Dof::OuterRoll,
        Dof::InnerRoll,
    ];

    pub fn is_translation(self) -> bool {
        matches!(self, Dof::OuterTranslation | Dof::InnerTranslation)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dof::OuterTranslation => "outer_translation",
            Dof::InnerTranslation => "inner_translation",
            Dof::OuterRoll => "outer_roll",
            Dof::InnerRoll => "inner_roll",
        }
    }
}

impl fmt::Display for Dof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    /// Exposed arc length of the outer tube beyond the sheath mouth, mm.
    pub outer_translation: f64,
    /// Exposed arc length of the inner tube beyond the sheath mouth, mm.
    pub inner_translation: f64,
    /// deg
    pub outer_roll: f64,
    /// deg
    pub inner_roll: f64,
    /// rpm
    #[serde(default)]
    pub spindle: f64,
}

impl JointState {
    pub fn new(outer_translation: f64, inner_translation: f64, outer_roll: f64, inner_roll: f64) -> Self {
        Self {
            outer_translation,
            inner_translation,
            outer_roll,
            inner_roll,
            spindle: 0.0,
        }
    }

    /// Roll of the inner tube's bend plane relative to the outer's, deg.
    pub fn relative_roll(&self) -> f64 {
        self.inner_roll - self.outer_roll
    }

    pub fn get(&self, dof: Dof) -> f64 {
        match dof {
            Dof::OuterTranslation => self.outer_translation,
            Dof::InnerTranslation => self.inner_translation,
            Dof::OuterRoll => self.outer_roll,
            Dof::InnerRoll => self.inner_roll,
        }
    }

    pub fn set(&mut self, dof: Dof, value: f64) {
        match dof {
            Dof::OuterTranslation => self.outer_translation = value,
            Dof::InnerTranslation => self.inner_translation = value,
            Dof::OuterRoll => self.outer_roll = value,
            Dof::InnerRoll => self.inner_roll = value,
        }
    }

    pub fn with(mut self, dof: Dof, value: f64) -> Self {
        self.set(dof, value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub outer_tube: TubeSpec,
    pub inner_tube: TubeSpec,
    pub sheath: SheathSpec,
    pub bit: DrillBitSpec,
    pub joint_limits: JointLimits,
    /// mm/s
    pub feed_limit: f64,
    /// rpm
    pub spindle_max: f64,
    /// Default insertion feed used by the builtin scenarios, mm/s.
    #[serde(default = "default_feed")]
    pub feed_default: f64,
    /// Effective outer/inner bending stiffness ratio. When set it replaces
    /// the ratio derived from tube geometry and moduli.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness_ratio: Option<f64>,
}

fn default_feed() -> f64 {
    1.65
}

impl RobotConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Bending stiffness pair `(outer, inner)` used by the kinematics,
    /// honouring the calibrated ratio when present.
    pub fn bending_stiffnesses(&self) -> (f64, f64) {
        let inner = self.inner_tube.bending_stiffness();
        let outer = match self.stiffness_ratio {
            Some(rho) => rho * inner,
            None => self.outer_tube.bending_stiffness(),
        };
        (outer, inner)
    }

    pub fn stiffness_ratio(&self) -> f64 {
        let (o, i) = self.bending_stiffnesses();
        o / i
    }

    pub fn with_stiffness_ratio(mut self, rho: f64) -> Self {
        self.stiffness_ratio = Some(rho);
        self
    }

    pub fn with_runout(mut self, runout: f64) -> Self {
        self.bit.runout = runout;
        self
    }

    pub fn with_precurvature(mut self, radius: Precurvature) -> Self {
        self.outer_tube.precurvature_radius = radius;
        self.inner_tube.precurvature_radius = radius;
        self
    }
}

/// Annular second moment of area `π/64 (D⁴ − d⁴)`, mm⁴.
pub fn second_moment_of_area(outer_diameter: f64, inner_diameter: f64) -> Result<f64> {
    if !(inner_diameter >= 0.0 && outer_diameter > inner_diameter) {
        return Err(Error::InvalidArgument(format!(
            "second moment needs outer_diameter > inner_diameter >= 0 (got {outer_diameter}, {inner_diameter})"
        )));
    }
    Ok(PI / 64.0 * (outer_diameter.powi(4) - inner_diameter.powi(4)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, rule: &str, detail: String) {
        self.violations.push(Violation {
            rule: rule.to_string(),
            detail,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.rule, v.detail)?;
        }
        Ok(())
    }
}

/// Lists every violated clearance or invariant of `config`.
pub fn validate_config(config: &RobotConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    config.outer_tube.check(&mut report);
    config.inner_tube.check(&mut report);

    let outer = &config.outer_tube;
    let inner = &config.inner_tube;
    if !(inner.outer_diameter < outer.inner_diameter()) {
        report.push(
            "nesting clearance",
            format!(
                "inner tube OD {} must be below outer tube ID {}",
                inner.outer_diameter,
                outer.inner_diameter()
            ),
        );
    }
    if !(config.bit.torque_coil_od < inner.inner_diameter()) {
        report.push(
            "torque coil clearance",
            format!(
                "torque coil OD {} must be below inner tube ID {}",
                config.bit.torque_coil_od,
                inner.inner_diameter()
            ),
        );
    }
    if !(outer.outer_diameter <= config.sheath.inner_diameter) {
        report.push(
            "sheath clearance",
            format!(
                "outer tube OD {} exceeds sheath ID {}",
                outer.outer_diameter, config.sheath.inner_diameter
            ),
        );
    }
    if !(config.bit.bit_diameter > outer.outer_diameter) {
        report.push(
            "bit smaller than outer tube",
            format!(
                "bit diameter {} must exceed outer tube OD {}",
                config.bit.bit_diameter, outer.outer_diameter
            ),
        );
    }
    if !(config.bit.bit_diameter > 0.0) || !(config.bit.runout >= 0.0) {
        report.push(
            "drill bit",
            "bit_diameter must be positive and runout non-negative".into(),
        );
    }
    if !(config.sheath.length > 0.0) {
        report.push("sheath", "sheath length must be positive".into());
    }
    if config.sheath.pose.orthonormality_error() > 1e-9 {
        report.push("sheath", "sheath pose orientation is not orthonormal".into());
    }
    for dof in Dof::ALL {
        let r = config.joint_limits.range(dof);
        if !(r.min <= r.max) {
            report.push("joint limits", format!("{dof}: min {} exceeds max {}", r.min, r.max));
        }
    }
    let jl = &config.joint_limits;
    if !(jl.max_translation_speed > 0.0 && jl.max_roll_speed > 0.0) {
        report.push("joint limits", "speed limits must be positive".into());
    }
    if !(config.feed_limit > 0.0) {
        report.push("feed", "feed_limit must be positive".into());
    }
    if !(config.spindle_max >= config.bit.min_cut_rpm) {
        report.push("spindle", "spindle_max is below min_cut_rpm".into());
    }
    if let Some(rho) = config.stiffness_ratio {
        if !(rho > 0.0 && rho.is_finite()) {
            report.push(
                "stiffness ratio",
                format!("effective stiffness ratio {rho} must be positive"),
            );
        }
    }
    report
}

/// The two-tube system as built: 3.61/0.25 mm outer and 2.6/0.2 mm inner
/// NiTi tubes with a 50 mm pre-curvature radius, 6 mm ball-nose bit.
pub fn default_config() -> RobotConfig {
    RobotConfig {
        outer_tube: TubeSpec {
            name: "outer".into(),
            outer_diameter: 3.61,
            wall_thickness: 0.25,
            total_length: 110.0,
            precurvature_radius: Precurvature::Radius(50.0),
            elastic_modulus: NITI_MODULUS_GPA,
            curved_fraction: 1.0,
        },
        inner_tube: TubeSpec {
            name: "inner".into(),
            outer_diameter: 2.6,
            wall_thickness: 0.2,
            total_length: 290.0,
            precurvature_radius: Precurvature::Radius(50.0),
            elastic_modulus: NITI_MODULUS_GPA,
            curved_fraction: 1.0,
        },
        sheath: SheathSpec {
            inner_diameter: 4.0,
            length: 150.0,
            pose: Frame::default(),
        },
        bit: DrillBitSpec {
            bit_diameter: 6.0,
            runout: 0.0,
            min_cut_rpm: 200.0,
            torque_coil_od: 1.63,
            shaft_od: 0.95,
        },
        joint_limits: JointLimits::default(),
        feed_limit: 3.0,
        spindle_max: 1000.0,
        feed_default: 1.65,
        stiffness_ratio: None,
    }
}
