//! Virtual experiments on a trained surrogate: full-factorial plans, per-factor
//! control limits around a context point, and pre-production lot checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    FactorDef, FactorKind, FactorSchema, FactorValue, FactorValues, ProductionRecord, Role,
};
use crate::error::{Error, Result};
use crate::eval::is_defect;
use crate::net::Mlp;

pub const DEFAULT_GRID: usize = 101;
pub const DEFAULT_LEVELS: usize = 10;

fn default_levels() -> usize {
    DEFAULT_LEVELS
}

/// One swept factor in a plan request: explicit levels, or `count` equally spaced
/// levels across the schema range (all states for a discrete factor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub factor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<FactorValue>>,
    #[serde(default = "default_levels")]
    pub count: usize,
}

impl SweepSpec {
    pub fn equally_spaced(factor: &str, count: usize) -> Self {
        Self {
            factor: factor.to_string(),
            levels: None,
            count,
        }
    }
}

/// How factors that are not swept get their value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum FixedPolicy {
    Explicit {
        values: FactorValues,
    },
    /// Mean of continuous factors and median of count factors over a dataset; discrete
    /// factors take the stated level. `values` overrides either.
    Statistics {
        #[serde(default)]
        levels: BTreeMap<String, String>,
        #[serde(default)]
        values: FactorValues,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweptFactor {
    pub factor: String,
    pub levels: Vec<FactorValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub swept: Vec<SweptFactor>,
    pub fixed: FactorValues,
    pub threshold: f64,
}

/// A plan request as read from JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub swept: Vec<SweepSpec>,
    pub fixed: FixedPolicy,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    crate::eval::DEFAULT_THRESHOLD
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "threshold {threshold} not in (0, 1)"
        )))
    }
}

/// `n` equally spaced values from `lo` to `hi`, both ends exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| {
                if k == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fixed values from dataset statistics for every factor not in `skip`.
pub fn fixed_from_statistics(
    schema: &FactorSchema,
    records: &[ProductionRecord],
    levels: &BTreeMap<String, String>,
    skip: &[&str],
) -> Result<FactorValues> {
    let mut out = FactorValues::new();
    for f in schema
        .factors
        .iter()
        .filter(|f| !skip.contains(&f.name.as_str()))
    {
        let value = match &f.kind {
            FactorKind::Discrete { .. } => {
                let level = levels
                    .get(&f.name)
                    .ok_or_else(|| Error::MissingValue(f.name.clone()))?;
                f.coerce(&FactorValue::Level(level.clone()))?
            }
            FactorKind::Continuous { integer, .. } => {
                let vals: Vec<f64> = records
                    .iter()
                    .filter_map(|r| {
                        r.factor_values
                            .get(&f.name)
                            .and_then(FactorValue::as_number)
                    })
                    .collect();
                if vals.is_empty() {
                    return Err(Error::MissingValue(f.name.clone()));
                }
                let v = if *integer {
                    median(vals)
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                };
                FactorValue::Number(v)
            }
        };
        out.insert(f.name.clone(), value);
    }
    Ok(out)
}

/// Builds the Cartesian plan. `data` is required by [`FixedPolicy::Statistics`].
pub fn build_full_factorial(
    schema: &FactorSchema,
    swept: &[SweepSpec],
    policy: &FixedPolicy,
    data: Option<&[ProductionRecord]>,
    threshold: f64,
) -> Result<ExperimentPlan> {
    check_threshold(threshold)?;
    let mut plan_swept = Vec::with_capacity(swept.len());
    for s in swept {
        let def = schema.require(&s.factor)?;
        if def.role != Role::Controllable {
            return Err(Error::NotControllable(s.factor.clone()));
        }
        if plan_swept
            .iter()
            .any(|p: &SweptFactor| p.factor == s.factor)
        {
            return Err(Error::Config(format!("factor `{}` swept twice", s.factor)));
        }
        let levels = match (&s.levels, &def.kind) {
            (Some(given), _) => given
                .iter()
                .map(|v| def.check_in_range(v))
                .collect::<Result<Vec<_>>>()?,
            (None, FactorKind::Continuous { range, .. }) => {
                if s.count < 1 {
                    return Err(Error::Config(format!(
                        "factor `{}` needs at least one level",
                        s.factor
                    )));
                }
                linspace(range[0], range[1], s.count)
                    .into_iter()
                    .map(FactorValue::Number)
                    .collect()
            }
            (None, FactorKind::Discrete { states }) => states
                .iter()
                .map(|s| FactorValue::Level(s.clone()))
                .collect(),
        };
        if levels.is_empty() {
            return Err(Error::Config(format!(
                "factor `{}` has no levels",
                s.factor
            )));
        }
        plan_swept.push(SweptFactor {
            factor: s.factor.clone(),
            levels,
        });
    }

    let names: Vec<&str> = plan_swept.iter().map(|s| s.factor.as_str()).collect();
    let mut fixed = match policy {
        FixedPolicy::Explicit { values } => values.clone(),
        FixedPolicy::Statistics { levels, values } => {
            let records =
                data.ok_or_else(|| Error::Config("statistics policy needs a dataset".into()))?;
            let mut v = fixed_from_statistics(schema, records, levels, &names)?;
            v.extend(values.clone());
            v
        }
    };
    for name in &names {
        fixed.remove(*name);
    }
    for f in &schema.factors {
        if names.contains(&f.name.as_str()) {
            continue;
        }
        let v = fixed
            .get(&f.name)
            .ok_or_else(|| Error::MissingValue(f.name.clone()))?;
        let v = f.check_in_range(v)?;
        fixed.insert(f.name.clone(), v);
    }
    if let Some(name) = fixed.keys().find(|k| schema.factor(k).is_none()) {
        return Err(Error::UnknownFactor(name.clone()));
    }
    Ok(ExperimentPlan {
        swept: plan_swept,
        fixed,
        threshold,
    })
}

impl PlanSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(
        &self,
        schema: &FactorSchema,
        data: Option<&[ProductionRecord]>,
    ) -> Result<ExperimentPlan> {
        build_full_factorial(schema, &self.swept, &self.fixed, data, self.threshold)
    }
}

impl ExperimentPlan {
    pub fn row_count(&self) -> usize {
        self.swept.iter().map(|s| s.levels.len()).product()
    }

    /// Level indices of row `r`; the first swept factor varies slowest.
    pub fn level_indices(&self, mut r: usize) -> Vec<usize> {
        let mut idx = vec![0; self.swept.len()];
        for (k, s) in self.swept.iter().enumerate().rev() {
            idx[k] = r % s.levels.len();
            r /= s.levels.len();
        }
        idx
    }

    pub fn row_values(&self, r: usize) -> FactorValues {
        let mut v = self.fixed.clone();
        for (s, &i) in self.swept.iter().zip(&self.level_indices(r)) {
            v.insert(s.factor.clone(), s.levels[i].clone());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    /// Swept-factor values in plan order.
    pub levels: Vec<FactorValue>,
    pub risk: f64,
}

/// Mean predicted risk at each level of one swept factor, averaged over the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub factor: String,
    pub levels: Vec<FactorValue>,
    pub mean_risk: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSurface {
    pub factors: Vec<String>,
    pub fixed: FactorValues,
    pub threshold: f64,
    pub rows: Vec<SurfaceRow>,
    pub marginals: Vec<Marginal>,
}

fn check_model_schema(mlp: &Mlp, schema: &FactorSchema) -> Result<()> {
    if mlp.encoding().is_none() {
        return Err(Error::Model("model has no stored encoding".into()));
    }
    let fp = &mlp.meta().schema_fingerprint;
    if !fp.is_empty() && *fp != schema.fingerprint() {
        return Err(Error::Model(
            "model was trained on a different schema".into(),
        ));
    }
    Ok(())
}

/// Predicts every row of the plan.
pub fn evaluate_plan(mlp: &Mlp, plan: &ExperimentPlan) -> Result<ResponseSurface> {
    let enc = mlp
        .encoding()
        .ok_or_else(|| Error::Model("model has no stored encoding".into()))?;
    for s in &plan.swept {
        if enc.columns_of(&s.factor).is_empty() || !mlp.uses_factor(&s.factor) {
            return Err(Error::FactorNotInModel(s.factor.clone()));
        }
    }
    let n = plan.row_count();
    let risks: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|r| mlp.predict_values(&plan.row_values(r)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(n);
    let mut sums: Vec<Vec<f64>> = plan
        .swept
        .iter()
        .map(|s| vec![0.0; s.levels.len()])
        .collect();
    for (r, &risk) in risks.iter().enumerate() {
        let idx = plan.level_indices(r);
        for (k, &i) in idx.iter().enumerate() {
            sums[k][i] += risk;
        }
        rows.push(SurfaceRow {
            levels: plan
                .swept
                .iter()
                .zip(&idx)
                .map(|(s, &i)| s.levels[i].clone())
                .collect(),
            risk,
        });
    }
    let marginals = plan
        .swept
        .iter()
        .zip(sums)
        .map(|(s, sum)| {
            let per_level = (n / s.levels.len()) as f64;
            Marginal {
                factor: s.factor.clone(),
                levels: s.levels.clone(),
                mean_risk: sum.into_iter().map(|t| t / per_level).collect(),
            }
        })
        .collect();
    Ok(ResponseSurface {
        factors: plan.swept.iter().map(|s| s.factor.clone()).collect(),
        fixed: plan.fixed.clone(),
        threshold: plan.threshold,
        rows,
        marginals,
    })
}

impl ResponseSurface {
    /// One line per grid row: swept factors, predicted risk, 0/1 defect call.
    pub fn grid_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{},risk,defect", self.factors.join(","));
        for r in &self.rows {
            for v in &r.levels {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(s, "{},{}", r.risk, is_defect(r.risk, self.threshold) as u8);
        }
        s
    }

    /// Long format: `factor,level,mean_risk`.
    pub fn marginals_csv(&self) -> String {
        let mut s = String::from("factor,level,mean_risk\n");
        for m in &self.marginals {
            for (l, r) in m.levels.iter().zip(&m.mean_risk) {
                let _ = writeln!(s, "{},{l},{r}", m.factor);
            }
        }
        s
    }

    /// One SVG line chart per marginal, with the threshold drawn dashed.
    pub fn marginal_plots(&self) -> Vec<(String, String)> {
        self.marginals
            .iter()
            .map(|m| (m.factor.clone(), marginal_svg(m, self.threshold)))
            .collect()
    }
}

fn marginal_svg(m: &Marginal, threshold: f64) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let n = m.levels.len();
    let xs: Vec<f64> = match m
        .levels
        .iter()
        .map(FactorValue::as_number)
        .collect::<Option<Vec<_>>>()
    {
        Some(v) => v,
        None => (0..n).map(|i| i as f64).collect(),
    };
    let (x_lo, x_hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let px = |x: f64| PAD + (x - x_lo) / span * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - y.clamp(0.0, 1.0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#,
            PAD - 6.0,
            py(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{y}" x2="{}" y2="{y}" stroke="red" stroke-dasharray="4 4"/>"#,
        W - PAD,
        y = py(threshold)
    );
    let points: Vec<String> = xs
        .iter()
        .zip(&m.mean_risk)
        .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        points.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="start">{}</text>"#,
        PAD,
        H - PAD + 20.0,
        m.levels[0]
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        W - PAD,
        H - PAD + 20.0,
        m.levels[n - 1]
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 10.0,
        m.factor
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">mean predicted risk</text>"#,
        W / 2.0,
        PAD - 16.0
    );
    s.push_str("</svg>\n");
    s
}

/// Closed interval of acceptable settings in natural units (state labels for a
/// discrete factor, in declaration order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: FactorValue,
    pub hi: FactorValue,
}

impl Interval {
    pub fn contains(&self, def: &FactorDef, value: &FactorValue) -> bool {
        match (&self.lo, &self.hi, value) {
            (FactorValue::Number(lo), FactorValue::Number(hi), FactorValue::Number(v)) => {
                lo <= v && v <= hi
            }
            (FactorValue::Level(lo), FactorValue::Level(hi), FactorValue::Level(v)) => {
                let pos = |s: &str| def.states().and_then(|st| st.iter().position(|x| x == s));
                match (pos(lo), pos(hi), pos(v)) {
                    (Some(a), Some(b), Some(c)) => a <= c && c <= b,
                    _ => false,
                }
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits {
    pub threshold: f64,
    pub grid_resolution: usize,
    pub context: FactorValues,
    /// `None` when no grid point is below the threshold.
    pub limits: BTreeMap<String, Option<Interval>>,
}

impl ControlLimits {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("limits serialize")
    }
}

/// Grid over a factor's range (its states for a discrete factor).
pub fn scan_grid(def: &FactorDef, resolution: usize) -> Vec<FactorValue> {
    match &def.kind {
        FactorKind::Continuous { range, .. } => linspace(range[0], range[1], resolution)
            .into_iter()
            .map(FactorValue::Number)
            .collect(),
        FactorKind::Discrete { states } => states
            .iter()
            .map(|s| FactorValue::Level(s.clone()))
            .collect(),
    }
}

/// Widest run of consecutive `true`; ties go to the earliest. Inclusive bounds.
pub fn widest_run(ok: &[bool]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, &b) in ok.iter().chain(std::iter::once(&false)).enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(a, z)| i - s > z - a + 1) {
                    best = Some((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

fn factor_limits(
    mlp: &Mlp,
    def: &FactorDef,
    context: &FactorValues,
    threshold: f64,
    resolution: usize,
) -> Result<Option<Interval>> {
    let grid = scan_grid(def, resolution);
    let ok = grid
        .iter()
        .map(|g| {
            let mut v = context.clone();
            v.insert(def.name.clone(), g.clone());
            mlp.predict_values(&v).map(|r| r < threshold)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(widest_run(&ok).map(|(a, b)| Interval {
        lo: grid[a].clone(),
        hi: grid[b].clone(),
    }))
}

/// Context with every factor present. A scanned factor missing from `fixed` is held at
/// its identification mean (first state if discrete) while the other factors are scanned.
fn full_context(
    mlp: &Mlp,
    schema: &FactorSchema,
    fixed: &FactorValues,
    scanned: &[&str],
) -> Result<FactorValues> {
    let mut ctx = FactorValues::new();
    for f in &schema.factors {
        match fixed.get(&f.name) {
            Some(v) => {
                ctx.insert(f.name.clone(), f.coerce(v)?);
            }
            None if scanned.contains(&f.name.as_str()) => {
                let mean = mlp
                    .encoding()
                    .and_then(|e| e.norm_params.iter().find(|p| p.factor == f.name))
                    .map(|p| p.mean);
                let v = match (f.range(), mean) {
                    (Some((lo, hi)), Some(m)) => FactorValue::Number(m.clamp(lo, hi)),
                    _ => scan_grid(f, 2)[0].clone(),
                };
                ctx.insert(f.name.clone(), v);
            }
            None => return Err(Error::MissingValue(f.name.clone())),
        }
    }
    Ok(ctx)
}

fn limits_for(
    mlp: &Mlp,
    schema: &FactorSchema,
    fixed: &FactorValues,
    threshold: f64,
    grid_resolution: usize,
    factors: &[&FactorDef],
) -> Result<ControlLimits> {
    check_model_schema(mlp, schema)?;
    check_threshold(threshold)?;
    if grid_resolution < 2 {
        return Err(Error::Config("grid_resolution must be >= 2".into()));
    }
    let names: Vec<&str> = factors.iter().map(|f| f.name.as_str()).collect();
    let context = full_context(mlp, schema, fixed, &names)?;
    let limits = factors
        .par_iter()
        .map(|f| {
            factor_limits(mlp, f, &context, threshold, grid_resolution).map(|l| (f.name.clone(), l))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(ControlLimits {
        threshold,
        grid_resolution,
        context,
        limits,
    })
}

/// Per-factor limits for each controllable factor, scanning one factor at a time with
/// all others held at `fixed`. Controllable factors missing from `fixed` are allowed.
pub fn compute_limits(
    mlp: &Mlp,
    schema: &FactorSchema,
    fixed: &FactorValues,
    threshold: f64,
    grid_resolution: usize,
) -> Result<ControlLimits> {
    let controllable: Vec<&FactorDef> = schema.with_role(Role::Controllable).collect();
    limits_for(
        mlp,
        schema,
        fixed,
        threshold,
        grid_resolution,
        &controllable,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    Warning,
    Limitation,
}

impl std::str::FromStr for CheckMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warning" => Ok(CheckMode::Warning),
            "limitation" => Ok(CheckMode::Limitation),
            other => Err(Error::Config(format!("unknown check mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorStatus {
    InLimits,
    OutOfLimitsControllable,
    OutOfLimitsNonControllable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub factor: String,
    pub current: FactorValue,
    /// `None` when no setting of this factor alone gets below the threshold.
    pub target: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Proceed,
    /// Warning mode: predicted risk at or above the threshold.
    Alert,
    Adjust {
        factors: Vec<Adjustment>,
    },
    /// Context makes the lot unsafe whatever the controllable settings; run it later.
    Reschedule {
        factors: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotDecision {
    pub mode: CheckMode,
    pub risk: f64,
    pub threshold: f64,
    /// Limitation mode only.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub statuses: BTreeMap<String, FactorStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<ControlLimits>,
    #[serde(flatten)]
    pub verdict: Verdict,
}

impl LotDecision {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("decision serializes")
    }
}

/// Non-controllable continuous factors moved to their identification means, taken
/// from the model's normalization constants.
fn typical_context(mlp: &Mlp, schema: &FactorSchema, proposed: &FactorValues) -> FactorValues {
    let mut ctx = proposed.clone();
    if let Some(enc) = mlp.encoding() {
        for f in schema.with_role(Role::NonControllable) {
            if let Some(p) = enc.norm_params.iter().find(|p| p.factor == f.name) {
                let (lo, hi) = f.range().unwrap_or((p.mean, p.mean));
                ctx.insert(f.name.clone(), FactorValue::Number(p.mean.clamp(lo, hi)));
            }
        }
    }
    ctx
}

/// Decides whether a proposed lot may run.
///
/// Warning mode alerts when the predicted risk reaches the threshold. Limitation mode
/// scans every factor around the proposed point; controllable factors outside their
/// interval must be adjusted, and a lot whose controllable limits are empty only
/// because of the environmental context is rescheduled.
pub fn check_lot(
    mlp: &Mlp,
    schema: &FactorSchema,
    proposed: &FactorValues,
    mode: CheckMode,
    threshold: f64,
    grid_resolution: usize,
) -> Result<LotDecision> {
    check_model_schema(mlp, schema)?;
    check_threshold(threshold)?;
    let proposed = schema.check_values(proposed, true)?;
    let risk = mlp.predict_values(&proposed)?;
    if mode == CheckMode::Warning {
        return Ok(LotDecision {
            mode,
            risk,
            threshold,
            statuses: BTreeMap::new(),
            limits: None,
            verdict: if is_defect(risk, threshold) {
                Verdict::Alert
            } else {
                Verdict::Proceed
            },
        });
    }

    let all: Vec<&FactorDef> = schema.factors.iter().collect();
    let limits = limits_for(mlp, schema, &proposed, threshold, grid_resolution, &all)?;
    let mut statuses = BTreeMap::new();
    let mut adjust = Vec::new();
    let mut context_out = Vec::new();
    let mut empty_controllable = Vec::new();
    for f in &schema.factors {
        let value = &proposed[&f.name];
        let interval = &limits.limits[&f.name];
        let inside = interval.as_ref().is_some_and(|i| i.contains(f, value));
        let status = match (inside, f.role) {
            (true, _) => FactorStatus::InLimits,
            (false, Role::Controllable) => FactorStatus::OutOfLimitsControllable,
            (false, _) => FactorStatus::OutOfLimitsNonControllable,
        };
        statuses.insert(f.name.clone(), status);
        match status {
            FactorStatus::InLimits => {}
            FactorStatus::OutOfLimitsControllable => {
                if interval.is_none() {
                    empty_controllable.push(f.name.clone());
                }
                adjust.push(Adjustment {
                    factor: f.name.clone(),
                    current: value.clone(),
                    target: interval.clone(),
                });
            }
            FactorStatus::OutOfLimitsNonControllable => context_out.push(f.name.clone()),
        }
    }

    // every value inside its grid interval can still sit at or above the threshold
    // between grid points; point at the controllable intervals in that case
    if adjust.is_empty() && context_out.is_empty() && is_defect(risk, threshold) {
        for f in schema.with_role(Role::Controllable) {
            adjust.push(Adjustment {
                factor: f.name.clone(),
                current: proposed[&f.name].clone(),
                target: limits.limits[&f.name].clone(),
            });
        }
    }
    let verdict = if adjust.is_empty() && context_out.is_empty() {
        Verdict::Proceed
    } else {
        let typical = typical_context(mlp, schema, &proposed);
        let empty_defs: Vec<&FactorDef> = empty_controllable
            .iter()
            .map(|n| schema.require(n))
            .collect::<Result<_>>()?;
        let due_to_context = !empty_defs.is_empty()
            && limits_for(
                mlp,
                schema,
                &typical,
                threshold,
                grid_resolution,
                &empty_defs,
            )?
            .limits
            .values()
            .any(Option::is_some);
        if due_to_context {
            let mut factors: Vec<String> = schema
                .with_role(Role::NonControllable)
                .map(|f| f.name.clone())
                .filter(|n| proposed[n] != typical[n])
                .collect();
            factors.sort();
            Verdict::Reschedule { factors }
        } else if !adjust.is_empty() {
            Verdict::Adjust { factors: adjust }
        } else {
            Verdict::Reschedule {
                factors: context_out,
            }
        }
    };
    Ok(LotDecision {
        mode,
        risk,
        threshold,
        statuses,
        limits: Some(limits),
        verdict,
    })
}
