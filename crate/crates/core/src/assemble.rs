//! Canonical cone-program form and the assembly of the full trading problem
//! into it.
//!
//! The canonical program is
//!
//! ```text
//! maximize    obj' x + const
//! subject to  b - A x  in  K
//! ```
//!
//! where `K` is a product of zero, nonnegative, second-order, and 3/2-power
//! cones, in that block order. Every row is tagged with the named constraint
//! it came from so duals can be read back in user-level units.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasts::{ForecastBundle, RiskModel};
use crate::portfolio::{Benchmark, Portfolio};
use crate::problem::ParameterSet;

/// A cone block; rows of the program are grouped by block in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeBlock {
    Zero(usize),
    Nonnegative(usize),
    SecondOrder(usize),
    /// Three rows `(t, u, v)` with `t^(2/3) u^(1/3) >= |v|`, the epigraph
    /// cone for the 3/2-power impact term.
    Power32,
}

impl ConeBlock {
    pub fn len(&self) -> usize {
        match *self {
            ConeBlock::Zero(n) | ConeBlock::Nonnegative(n) | ConeBlock::SecondOrder(n) => n,
            ConeBlock::Power32 => 3,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Names for every constraint row group in the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintKey {
    Budget,
    TradeDefinition,
    FactorNeutrality,
    MinHoldingZero,
    AbsWeight,
    AbsTrade,
    AbsCash,
    AbsActive,
    WeightLower,
    WeightUpper,
    CashLower,
    CashUpper,
    TradeLower,
    TradeUpper,
    MinHoldingLong,
    MinHoldingShort,
    Liquidation,
    ConcentrationAux,
    Concentration,
    SoftBound,
    Leverage,
    Turnover,
    Risk,
}

/// Maps a named constraint to its contiguous rows in the program.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintMeta {
    pub key: ConstraintKey,
    pub first_row: usize,
    pub rows: usize,
    /// True when the constraint was softened into a penalty.
    pub soft: bool,
}

/// Index layout of the variable vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarLayout {
    pub num_assets: usize,
    pub w: usize,
    pub c: usize,
    pub z: usize,
    pub abs_w: Option<usize>,
    pub abs_z: Option<usize>,
    pub abs_c: Option<usize>,
    pub abs_active: Option<usize>,
    pub impact_t: Option<usize>,
    pub risk_wc: usize,
    pub soft_risk: Option<usize>,
    pub soft_leverage: Option<usize>,
    pub soft_turnover: Option<usize>,
    pub total: usize,
}

/// A sparse cone program in canonical form with row metadata.
#[derive(Debug, Clone)]
pub struct ConeProgram {
    num_vars: usize,
    objective: Vec<(usize, f64)>,
    objective_constant: f64,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    blocks: Vec<ConeBlock>,
    metadata: Vec<ConstraintMeta>,
    layout: VarLayout,
}

impl ConeProgram {
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn objective(&self) -> &[(usize, f64)] {
        &self.objective
    }

    pub fn objective_constant(&self) -> f64 {
        self.objective_constant
    }

    pub fn row_triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn blocks(&self) -> &[ConeBlock] {
        &self.blocks
    }

    pub fn metadata(&self) -> &[ConstraintMeta] {
        &self.metadata
    }

    pub fn layout(&self) -> &VarLayout {
        &self.layout
    }

    pub fn meta_for(&self, key: ConstraintKey) -> Option<&ConstraintMeta> {
        self.metadata.iter().find(|m| m.key == key)
    }

    /// Dump the program in a plain sparse text format for cross-solver
    /// checks: one `# section` per part, `row col value` triplets for the
    /// constraint matrix, and one cone block descriptor per line.
    pub fn write_debug(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "# vars {}", self.num_vars).unwrap();
        writeln!(out, "# rows {}", self.num_rows()).unwrap();
        writeln!(out, "# maximize").unwrap();
        for &(col, val) in &self.objective {
            writeln!(out, "obj {col} {val:.17e}").unwrap();
        }
        writeln!(out, "# A (b - Ax in K)").unwrap();
        for &(r, c, v) in &self.triplets {
            writeln!(out, "A {r} {c} {v:.17e}").unwrap();
        }
        writeln!(out, "# b").unwrap();
        for (r, v) in self.rhs.iter().enumerate() {
            writeln!(out, "b {r} {v:.17e}").unwrap();
        }
        writeln!(out, "# cones").unwrap();
        for blk in &self.blocks {
            match blk {
                ConeBlock::Zero(n) => writeln!(out, "cone zero {n}").unwrap(),
                ConeBlock::Nonnegative(n) => writeln!(out, "cone nonneg {n}").unwrap(),
                ConeBlock::SecondOrder(n) => writeln!(out, "cone soc {n}").unwrap(),
                ConeBlock::Power32 => writeln!(out, "cone pow32 3").unwrap(),
            }
        }
        writeln!(out, "# named rows").unwrap();
        for m in &self.metadata {
            writeln!(
                out,
                "name {:?} {} {} {}",
                m.key,
                m.first_row,
                m.rows,
                if m.soft { "soft" } else { "hard" }
            )
            .unwrap();
        }
        out
    }
}

/// How the 3/2-power impact epigraph is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImpactRepr {
    /// Native three-dimensional power cone, `(t, 1, z) in P(2/3)`.
    #[default]
    PowerCone,
    /// Pair of rotated quadratic blocks `u^2 <= t s`, `s^2 <= u`, written as
    /// second-order cones. Requires the trade magnitude bound `u = |z|`.
    SocPair,
}

/// Per-asset holding pattern imposed by the minimum-holding heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HoldingPattern {
    Free,
    Zero,
    LongAtLeast(f64),
    ShortAtMost(f64),
}

/// Assembly options beyond the parameter set.
#[derive(Debug, Clone, Default)]
pub struct AssembleOptions {
    pub impact_repr: ImpactRepr,
    pub holding_patterns: Option<Vec<HoldingPattern>>,
}

struct Row {
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
}

#[derive(Default)]
struct Builder {
    num_vars: usize,
    objective: Vec<(usize, f64)>,
    objective_constant: f64,
    zero: Vec<Row>,
    nonneg: Vec<Row>,
    soc: Vec<Vec<Row>>,
    pow: Vec<[Row; 3]>,
    // (key, soft, group, first-in-group, count)
    names: Vec<(ConstraintKey, bool, Group, usize, usize)>,
}

#[derive(Clone, Copy, PartialEq)]
enum Group {
    Zero,
    Nonneg,
}

impl Builder {
    fn var(&mut self) -> usize {
        let idx = self.num_vars;
        self.num_vars += 1;
        idx
    }

    fn vars(&mut self, count: usize) -> usize {
        let idx = self.num_vars;
        self.num_vars += count;
        idx
    }

    fn obj(&mut self, col: usize, coeff: f64) {
        if coeff != 0.0 {
            self.objective.push((col, coeff));
        }
    }

    fn name(&mut self, key: ConstraintKey, soft: bool, group: Group, first: usize, count: usize) {
        self.names.push((key, soft, group, first, count));
    }

    fn eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.zero.push(Row { coeffs, rhs });
        self.zero.len() - 1
    }

    /// `sum coeffs . x <= rhs`
    fn le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.nonneg.push(Row { coeffs, rhs });
        self.nonneg.len() - 1
    }

    fn soc(&mut self, rows: Vec<Row>) {
        self.soc.push(rows);
    }

    fn pow32(&mut self, rows: [Row; 3]) {
        self.pow.push(rows);
    }

    fn finish(self, layout: VarLayout) -> ConeProgram {
        let mut triplets = Vec::new();
        let mut rhs = Vec::new();
        let mut blocks = Vec::new();

        let mut push_row = |row: &Row, rhs_vec: &mut Vec<f64>, trip: &mut Vec<(usize, usize, f64)>| {
            let r = rhs_vec.len();
            for &(col, val) in &row.coeffs {
                trip.push((r, col, val));
            }
            rhs_vec.push(row.rhs);
        };

        let zero_off = 0usize;
        if !self.zero.is_empty() {
            blocks.push(ConeBlock::Zero(self.zero.len()));
            for row in &self.zero {
                push_row(row, &mut rhs, &mut triplets);
            }
        }
        let nonneg_off = rhs.len();
        if !self.nonneg.is_empty() {
            blocks.push(ConeBlock::Nonnegative(self.nonneg.len()));
            for row in &self.nonneg {
                push_row(row, &mut rhs, &mut triplets);
            }
        }
        for block in &self.soc {
            blocks.push(ConeBlock::SecondOrder(block.len()));
            for row in block {
                push_row(row, &mut rhs, &mut triplets);
            }
        }
        for block in &self.pow {
            blocks.push(ConeBlock::Power32);
            for row in block {
                push_row(row, &mut rhs, &mut triplets);
            }
        }

        let metadata = self
            .names
            .into_iter()
            .map(|(key, soft, group, first, count)| ConstraintMeta {
                key,
                soft,
                first_row: match group {
                    Group::Zero => zero_off + first,
                    Group::Nonneg => nonneg_off + first,
                },
                rows: count,
            })
            .collect();

        ConeProgram {
            num_vars: self.num_vars,
            objective: self.objective,
            objective_constant: self.objective_constant,
            triplets,
            rhs,
            blocks,
            metadata,
            layout,
        }
    }
}

/// Assemble the softened, robustified trading problem with default options.
pub fn assemble(
    pre: &Portfolio,
    forecast: &ForecastBundle,
    params: &ParameterSet,
) -> Result<ConeProgram> {
    assemble_with(pre, forecast, params, &AssembleOptions::default())
}

/// Assemble with explicit options.
pub fn assemble_with(
    pre: &Portfolio,
    forecast: &ForecastBundle,
    params: &ParameterSet,
    opts: &AssembleOptions,
) -> Result<ConeProgram> {
    let n = pre.num_assets();
    forecast.validate()?;
    params.validate(n)?;
    if forecast.num_assets() != n {
        return Err(Error::DimensionMismatch {
            context: "assemble",
            expected: n,
            actual: forecast.num_assets(),
        });
    }
    if let Some(pats) = &opts.holding_patterns {
        if pats.len() != n {
            return Err(Error::DimensionMismatch {
                context: "holding patterns",
                expected: n,
                actual: pats.len(),
            });
        }
    }

    let mut b = Builder::default();

    // --- variables ---
    let w0 = b.vars(n);
    let c0 = b.var();
    let z0 = b.vars(n);

    let benchmark = params.benchmark.as_ref();
    let rho_active = forecast.mean_uncertainty.iter().any(|&r| r > 0.0);
    let hold_active = params.gamma_hold > 0.0 && forecast.kappa_short.iter().any(|&k| k > 0.0);
    let borrow_active = params.gamma_hold > 0.0 && forecast.kappa_borrow > 0.0;
    let spread_active = params.gamma_trade > 0.0 && forecast.kappa_spread.iter().any(|&k| k > 0.0);
    let impact_active = params.gamma_trade > 0.0 && forecast.kappa_impact.iter().any(|&k| k > 0.0);
    let leverage_active = params.leverage_target.is_finite() || params.soft_leverage;
    let turnover_active = params.turnover_target.is_finite() || params.soft_turnover;
    let robust_risk = forecast.cov_uncertainty > 0.0;

    let need_abs_w = (rho_active && benchmark.is_none())
        || hold_active
        || leverage_active
        || params.liquidation_max.is_some()
        || params.concentration.is_some()
        || (robust_risk && benchmark.is_none());
    let need_abs_z =
        spread_active || turnover_active || (impact_active && opts.impact_repr == ImpactRepr::SocPair);
    let need_abs_active = benchmark.is_some() && (rho_active || robust_risk);

    let abs_w = need_abs_w.then(|| b.vars(n));
    let abs_z = need_abs_z.then(|| b.vars(n));
    let abs_c = borrow_active.then(|| b.var());
    let abs_active = need_abs_active.then(|| b.vars(n));
    let impact_t = impact_active.then(|| b.vars(n));
    let impact_s = (impact_active && opts.impact_repr == ImpactRepr::SocPair).then(|| b.vars(n));

    let factor = matches!(forecast.risk, RiskModel::Factor { .. });
    let t_fac = factor.then(|| b.var());
    let t_idio = factor.then(|| b.var());
    let t_sigma = b.var();
    let t_wc = if robust_risk { b.var() } else { t_sigma };

    let conc = params.concentration.as_ref();
    let conc_t = conc.map(|_| b.var());
    let conc_s = conc.map(|_| b.vars(n));

    let v_risk = params.soft_risk.then(|| b.var());
    let v_lev = (params.soft_leverage && leverage_active).then(|| b.var());
    let v_turn = (params.soft_turnover && turnover_active).then(|| b.var());

    // --- objective: worst-case net return minus soft penalties ---
    let wb = benchmark.map(Benchmark::weights);
    for i in 0..n {
        let mut coeff = forecast.mean[i];
        if hold_active {
            // holding cost (-w)_+ written as (|w| - w)/2
            coeff += 0.5 * params.gamma_hold * forecast.kappa_short[i];
        }
        b.obj(w0 + i, coeff);
    }
    if let Some(wb) = wb {
        b.objective_constant -= forecast.mean.dot(wb);
    }
    b.obj(c0, forecast.risk_free + 0.5 * params.gamma_hold * forecast.kappa_borrow);
    if let Some(aw) = abs_w {
        for i in 0..n {
            let mut coeff = 0.0;
            if rho_active && benchmark.is_none() {
                coeff -= forecast.mean_uncertainty[i];
            }
            if hold_active {
                coeff -= 0.5 * params.gamma_hold * forecast.kappa_short[i];
            }
            b.obj(aw + i, coeff);
        }
    }
    if let Some(aa) = abs_active {
        if rho_active {
            for i in 0..n {
                b.obj(aa + i, -forecast.mean_uncertainty[i]);
            }
        }
    }
    if let Some(ac) = abs_c {
        b.obj(ac, -0.5 * params.gamma_hold * forecast.kappa_borrow);
    }
    if let Some(az) = abs_z {
        if spread_active {
            for i in 0..n {
                b.obj(az + i, -params.gamma_trade * forecast.kappa_spread[i]);
            }
        }
    }
    if let Some(ti) = impact_t {
        for i in 0..n {
            b.obj(ti + i, -params.gamma_trade * forecast.kappa_impact[i]);
        }
    }
    if let Some(v) = v_risk {
        b.obj(v, -params.gamma_risk);
    }
    if let Some(v) = v_lev {
        b.obj(v, -params.gamma_leverage);
    }
    if let Some(v) = v_turn {
        b.obj(v, -params.gamma_turnover);
    }

    // --- equality rows ---
    {
        let mut coeffs: Vec<(usize, f64)> = (0..n).map(|i| (w0 + i, 1.0)).collect();
        coeffs.push((c0, 1.0));
        let first = b.eq(coeffs, 1.0);
        b.name(ConstraintKey::Budget, false, Group::Zero, first, 1);
    }
    {
        let mut first = 0;
        for i in 0..n {
            let r = b.eq(vec![(w0 + i, 1.0), (z0 + i, -1.0)], pre.weights()[i]);
            if i == 0 {
                first = r;
            }
        }
        b.name(ConstraintKey::TradeDefinition, false, Group::Zero, first, n);
    }
    if !params.factor_neutral.is_empty() {
        let rows = crate::problem::factor_neutrality_rows(&forecast.risk, &params.factor_neutral)?;
        let mut first = 0;
        for (j, row) in rows.row_iter().enumerate() {
            let coeffs: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, &v)| (w0 + i, v))
                .collect();
            let r = b.eq(coeffs, 0.0);
            if j == 0 {
                first = r;
            }
        }
        b.name(
            ConstraintKey::FactorNeutrality,
            false,
            Group::Zero,
            first,
            rows.nrows(),
        );
    }
    if let Some(pats) = &opts.holding_patterns {
        let zeros: Vec<usize> = pats
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p, HoldingPattern::Zero))
            .map(|(i, _)| i)
            .collect();
        if !zeros.is_empty() {
            let mut first = 0;
            for (j, &i) in zeros.iter().enumerate() {
                let r = b.eq(vec![(w0 + i, 1.0)], 0.0);
                if j == 0 {
                    first = r;
                }
            }
            b.name(
                ConstraintKey::MinHoldingZero,
                false,
                Group::Zero,
                first,
                zeros.len(),
            );
        }
    }

    // --- absolute-value bounds ---
    if let Some(aw) = abs_w {
        let first = b.nonneg.len();
        for i in 0..n {
            b.le(vec![(w0 + i, 1.0), (aw + i, -1.0)], 0.0);
            b.le(vec![(w0 + i, -1.0), (aw + i, -1.0)], 0.0);
        }
        b.name(ConstraintKey::AbsWeight, false, Group::Nonneg, first, 2 * n);
    }
    if let Some(az) = abs_z {
        let first = b.nonneg.len();
        for i in 0..n {
            b.le(vec![(z0 + i, 1.0), (az + i, -1.0)], 0.0);
            b.le(vec![(z0 + i, -1.0), (az + i, -1.0)], 0.0);
        }
        b.name(ConstraintKey::AbsTrade, false, Group::Nonneg, first, 2 * n);
    }
    if let Some(ac) = abs_c {
        let first = b.nonneg.len();
        b.le(vec![(c0, 1.0), (ac, -1.0)], 0.0);
        b.le(vec![(c0, -1.0), (ac, -1.0)], 0.0);
        b.name(ConstraintKey::AbsCash, false, Group::Nonneg, first, 2);
    }
    if let (Some(aa), Some(wb)) = (abs_active, wb) {
        let first = b.nonneg.len();
        for i in 0..n {
            b.le(vec![(w0 + i, 1.0), (aa + i, -1.0)], wb[i]);
            b.le(vec![(w0 + i, -1.0), (aa + i, -1.0)], -wb[i]);
        }
        b.name(ConstraintKey::AbsActive, false, Group::Nonneg, first, 2 * n);
    }

    // --- box constraints; infinite bounds are skipped ---
    let mut add_box =
        |b: &mut Builder, key, var0: usize, sign: f64, bounds: &DVector<f64>| {
            let finite: Vec<usize> = (0..n).filter(|&i| bounds[i].is_finite()).collect();
            if finite.is_empty() {
                return;
            }
            let first = b.nonneg.len();
            for &i in &finite {
                b.le(vec![(var0 + i, sign)], sign * bounds[i]);
            }
            b.name(key, false, Group::Nonneg, first, finite.len());
        };
    add_box(&mut b, ConstraintKey::WeightLower, w0, -1.0, &params.w_min);
    add_box(&mut b, ConstraintKey::WeightUpper, w0, 1.0, &params.w_max);
    add_box(&mut b, ConstraintKey::TradeLower, z0, -1.0, &params.z_min);
    add_box(&mut b, ConstraintKey::TradeUpper, z0, 1.0, &params.z_max);
    if params.c_min.is_finite() {
        let first = b.le(vec![(c0, -1.0)], -params.c_min);
        b.name(ConstraintKey::CashLower, false, Group::Nonneg, first, 1);
    }
    if params.c_max.is_finite() {
        let first = b.le(vec![(c0, 1.0)], params.c_max);
        b.name(ConstraintKey::CashUpper, false, Group::Nonneg, first, 1);
    }

    if let Some(pats) = &opts.holding_patterns {
        let longs: Vec<(usize, f64)> = pats
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p {
                HoldingPattern::LongAtLeast(m) => Some((i, *m)),
                _ => None,
            })
            .collect();
        if !longs.is_empty() {
            let first = b.nonneg.len();
            for &(i, m) in &longs {
                b.le(vec![(w0 + i, -1.0)], -m);
            }
            b.name(
                ConstraintKey::MinHoldingLong,
                false,
                Group::Nonneg,
                first,
                longs.len(),
            );
        }
        let shorts: Vec<(usize, f64)> = pats
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p {
                HoldingPattern::ShortAtMost(m) => Some((i, *m)),
                _ => None,
            })
            .collect();
        if !shorts.is_empty() {
            let first = b.nonneg.len();
            for &(i, m) in &shorts {
                b.le(vec![(w0 + i, 1.0)], m);
            }
            b.name(
                ConstraintKey::MinHoldingShort,
                false,
                Group::Nonneg,
                first,
                shorts.len(),
            );
        }
    }

    // --- liquidation cost limit: kappa_spread' |w| <= l_max ---
    if let Some(l_max) = params.liquidation_max {
        let aw = abs_w.expect("liquidation limit requires |w| bounds");
        let coeffs: Vec<(usize, f64)> = (0..n)
            .filter(|&i| forecast.kappa_spread[i] != 0.0)
            .map(|i| (aw + i, forecast.kappa_spread[i]))
            .collect();
        let first = b.le(coeffs, l_max);
        b.name(ConstraintKey::Liquidation, false, Group::Nonneg, first, 1);
    }

    // --- concentration: sum of the K largest |w_i| <= cap ---
    if let Some(limit) = conc {
        let aw = abs_w.expect("concentration limit requires |w| bounds");
        let (ct, cs) = (conc_t.unwrap(), conc_s.unwrap());
        let first = b.nonneg.len();
        for i in 0..n {
            b.le(vec![(aw + i, 1.0), (ct, -1.0), (cs + i, -1.0)], 0.0);
            b.le(vec![(cs + i, -1.0)], 0.0);
        }
        b.name(
            ConstraintKey::ConcentrationAux,
            false,
            Group::Nonneg,
            first,
            2 * n,
        );
        let mut coeffs: Vec<(usize, f64)> = vec![(ct, limit.count as f64)];
        coeffs.extend((0..n).map(|i| (cs + i, 1.0)));
        let row = b.le(coeffs, limit.cap);
        b.name(ConstraintKey::Concentration, false, Group::Nonneg, row, 1);
    }

    // --- soft variable sign bounds ---
    {
        let softs: Vec<usize> = [v_risk, v_lev, v_turn].iter().flatten().copied().collect();
        if !softs.is_empty() {
            let first = b.nonneg.len();
            for v in softs.iter() {
                b.le(vec![(*v, -1.0)], 0.0);
            }
            b.name(
                ConstraintKey::SoftBound,
                false,
                Group::Nonneg,
                first,
                softs.len(),
            );
        }
    }

    // --- leverage: 1'|w| <= L_tar, optionally softened ---
    if leverage_active {
        let aw = abs_w.expect("leverage requires |w| bounds");
        let mut coeffs: Vec<(usize, f64)> = (0..n).map(|i| (aw + i, 1.0)).collect();
        if let Some(v) = v_lev {
            coeffs.push((v, -1.0));
        }
        let row = b.le(coeffs, params.leverage_target);
        b.name(
            ConstraintKey::Leverage,
            params.soft_leverage,
            Group::Nonneg,
            row,
            1,
        );
    }

    // --- turnover: ||z||_1 / 2 <= T_tar, optionally softened ---
    if turnover_active {
        let az = abs_z.expect("turnover requires |z| bounds");
        let mut coeffs: Vec<(usize, f64)> = (0..n).map(|i| (az + i, 0.5)).collect();
        if let Some(v) = v_turn {
            coeffs.push((v, -1.0));
        }
        let row = b.le(coeffs, params.turnover_target);
        b.name(
            ConstraintKey::Turnover,
            params.soft_turnover,
            Group::Nonneg,
            row,
            1,
        );
    }

    // --- worst-case risk: t_wc <= sigma_tar, optionally softened ---
    {
        let mut coeffs = vec![(t_wc, 1.0)];
        if let Some(v) = v_risk {
            coeffs.push((v, -1.0));
        }
        let row = b.le(coeffs, params.sigma_target);
        b.name(ConstraintKey::Risk, params.soft_risk, Group::Nonneg, row, 1);
    }

    // --- risk norm machinery (never forms the covariance for factor models) ---
    {
        // Risk is evaluated on active weights when a benchmark is set.
        let risk_rhs = |row_of_wb: f64| -> f64 {
            match wb {
                Some(_) => -row_of_wb,
                None => 0.0,
            }
        };
        match &forecast.risk {
            RiskModel::Dense { chol, .. } => {
                // (t_sigma, chol' w) in SOC(n+1)
                let mut rows = Vec::with_capacity(n + 1);
                rows.push(Row {
                    coeffs: vec![(t_sigma, -1.0)],
                    rhs: 0.0,
                });
                for j in 0..n {
                    let col = chol.column(j);
                    let coeffs: Vec<(usize, f64)> = (j..n)
                        .filter(|&i| col[i] != 0.0)
                        .map(|i| (w0 + i, -col[i]))
                        .collect();
                    let wb_term = wb.map_or(0.0, |wb| col.rows(j, n - j).dot(&wb.rows(j, n - j)));
                    rows.push(Row {
                        coeffs,
                        rhs: risk_rhs(wb_term),
                    });
                }
                b.soc(rows);
            }
            RiskModel::Factor {
                scaled_loadings,
                idio_var,
                ..
            } => {
                let k = scaled_loadings.ncols();
                // (t_fac, scaled_loadings' w) in SOC(k+1)
                let mut rows = Vec::with_capacity(k + 1);
                rows.push(Row {
                    coeffs: vec![(t_fac.unwrap(), -1.0)],
                    rhs: 0.0,
                });
                for j in 0..k {
                    let col = scaled_loadings.column(j);
                    let coeffs: Vec<(usize, f64)> = (0..n)
                        .filter(|&i| col[i] != 0.0)
                        .map(|i| (w0 + i, -col[i]))
                        .collect();
                    let wb_term = wb.map_or(0.0, |wb| col.dot(wb));
                    rows.push(Row {
                        coeffs,
                        rhs: risk_rhs(wb_term),
                    });
                }
                b.soc(rows);
                // (t_idio, sqrt(D) . w) in SOC(n+1)
                let mut rows = Vec::with_capacity(n + 1);
                rows.push(Row {
                    coeffs: vec![(t_idio.unwrap(), -1.0)],
                    rhs: 0.0,
                });
                for i in 0..n {
                    let d = idio_var[i].sqrt();
                    rows.push(Row {
                        coeffs: vec![(w0 + i, -d)],
                        rhs: risk_rhs(wb.map_or(0.0, |wb| d * wb[i])),
                    });
                }
                b.soc(rows);
                // (t_sigma, t_fac, t_idio) in SOC(3)
                b.soc(vec![
                    Row {
                        coeffs: vec![(t_sigma, -1.0)],
                        rhs: 0.0,
                    },
                    Row {
                        coeffs: vec![(t_fac.unwrap(), -1.0)],
                        rhs: 0.0,
                    },
                    Row {
                        coeffs: vec![(t_idio.unwrap(), -1.0)],
                        rhs: 0.0,
                    },
                ]);
            }
        }
        if robust_risk {
            // (t_wc, t_sigma, sqrt(varrho) vol' |w|) in SOC(3)
            let vols = forecast.risk.vol();
            let scale = forecast.cov_uncertainty.sqrt();
            let abs_var = abs_active.or(abs_w).expect("robust risk requires |w| bounds");
            let coeffs: Vec<(usize, f64)> = (0..n)
                .filter(|&i| vols[i] != 0.0)
                .map(|i| (abs_var + i, -scale * vols[i]))
                .collect();
            b.soc(vec![
                Row {
                    coeffs: vec![(t_wc, -1.0)],
                    rhs: 0.0,
                },
                Row {
                    coeffs: vec![(t_sigma, -1.0)],
                    rhs: 0.0,
                },
                Row { coeffs, rhs: 0.0 },
            ]);
        }
    }

    // --- market impact epigraphs: t_i >= |z_i|^(3/2) ---
    if let Some(ti) = impact_t {
        match opts.impact_repr {
            ImpactRepr::PowerCone => {
                for i in 0..n {
                    b.pow32([
                        Row {
                            coeffs: vec![(ti + i, -1.0)],
                            rhs: 0.0,
                        },
                        Row {
                            coeffs: vec![],
                            rhs: 1.0,
                        },
                        Row {
                            coeffs: vec![(z0 + i, -1.0)],
                            rhs: 0.0,
                        },
                    ]);
                }
            }
            ImpactRepr::SocPair => {
                let az = abs_z.expect("SOC impact representation requires |z| bounds");
                let si = impact_s.unwrap();
                for i in 0..n {
                    // u^2 <= t s  <=>  (t + s, t - s, 2u) in SOC(3)
                    b.soc(vec![
                        Row {
                            coeffs: vec![(ti + i, -1.0), (si + i, -1.0)],
                            rhs: 0.0,
                        },
                        Row {
                            coeffs: vec![(ti + i, -1.0), (si + i, 1.0)],
                            rhs: 0.0,
                        },
                        Row {
                            coeffs: vec![(az + i, -2.0)],
                            rhs: 0.0,
                        },
                    ]);
                    // s^2 <= u  <=>  (u + 1, u - 1, 2s) in SOC(3)
                    b.soc(vec![
                        Row {
                            coeffs: vec![(az + i, -1.0)],
                            rhs: 1.0,
                        },
                        Row {
                            coeffs: vec![(az + i, -1.0)],
                            rhs: -1.0,
                        },
                        Row {
                            coeffs: vec![(si + i, -2.0)],
                            rhs: 0.0,
                        },
                    ]);
                }
            }
        }
        // Tag the epigraph variables by name so every row maps somewhere.
        b.name(ConstraintKey::ImpactEpigraph, false, Group::Nonneg, usize::MAX, 0);
    }

    let layout = VarLayout {
        num_assets: n,
        w: w0,
        c: c0,
        z: z0,
        abs_w,
        abs_z,
        abs_c,
        abs_active,
        impact_t,
        risk_wc: t_wc,
        soft_risk: v_risk,
        soft_leverage: v_lev,
        soft_turnover: v_turn,
        total: b.num_vars,
    };
    Ok(b.finish(layout))
}

/// Cone program for the unconstrained risk-adjusted problem
/// `maximize mu'w - gamma w'Sigma w  s.t.  1'w = 1`, with the quadratic term
/// written through its epigraph `q >= ||chol' w||^2`.
pub fn risk_adjusted_program(
    mu: &DVector<f64>,
    chol: &nalgebra::DMatrix<f64>,
    gamma: f64,
) -> Result<ConeProgram> {
    let n = mu.len();
    if chol.nrows() != n || chol.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "risk_adjusted_program",
            expected: n,
            actual: chol.nrows(),
        });
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid("risk aversion must be positive"));
    }
    let mut b = Builder::default();
    let w0 = b.vars(n);
    let q = b.var();
    for i in 0..n {
        b.obj(w0 + i, mu[i]);
    }
    b.obj(q, -gamma);
    let coeffs: Vec<(usize, f64)> = (0..n).map(|i| (w0 + i, 1.0)).collect();
    let first = b.eq(coeffs, 1.0);
    b.name(ConstraintKey::Budget, false, Group::Zero, first, 1);

    // q >= ||chol' w||^2  <=>  (q + 1, q - 1, 2 chol' w) in SOC(n+2)
    let mut rows = Vec::with_capacity(n + 2);
    rows.push(Row {
        coeffs: vec![(q, -1.0)],
        rhs: 1.0,
    });
    rows.push(Row {
        coeffs: vec![(q, -1.0)],
        rhs: -1.0,
    });
    for j in 0..n {
        let col = chol.column(j);
        rows.push(Row {
            coeffs: (j..n)
                .filter(|&i| col[i] != 0.0)
                .map(|i| (w0 + i, -2.0 * col[i]))
                .collect(),
            rhs: 0.0,
        });
    }
    b.soc(rows);

    let layout = VarLayout {
        num_assets: n,
        w: w0,
        c: usize::MAX,
        z: usize::MAX,
        abs_w: None,
        abs_z: None,
        abs_c: None,
        abs_active: None,
        impact_t: None,
        risk_wc: q,
        soft_risk: None,
        soft_leverage: None,
        soft_turnover: None,
        total: b.num_vars,
    };
    Ok(b.finish(layout))
}
