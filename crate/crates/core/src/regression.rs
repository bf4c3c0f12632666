//! Cubic BER-versus-temperature models: least-squares fitting and inversion.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dram::{BerCubic, TempDomain};
use crate::error::{Error, Result};

/// Grid step of the root scan, in °C.
pub const SCAN_STEP: f64 = 0.1;
/// Bisection stops once the bracket is narrower than this, in °C.
pub const ROOT_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelSource {
    Donor,
    Victim,
}

/// Flips per row as a cubic in temperature, valid on `[t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub c3: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub source: ModelSource,
}

impl RegressionModel {
    pub fn new(cubic: BerCubic, domain: TempDomain, source: ModelSource) -> Self {
        let [c3, c2, c1, c0] = cubic.coeffs();
        Self { c3, c2, c1, c0, t_min: f64::from(domain.min), t_max: f64::from(domain.max), source }
    }

    pub fn cubic(&self) -> BerCubic {
        BerCubic::new(self.c3, self.c2, self.c1, self.c0)
    }

    pub fn coeffs(&self) -> [f64; 4] {
        [self.c3, self.c2, self.c1, self.c0]
    }

    pub fn eval(&self, t: f64) -> f64 {
        ((self.c3 * t + self.c2) * t + self.c1) * t + self.c0
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_min + self.t_max)
    }

    /// The same curve multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self { c3: self.c3 * k, c2: self.c2 * k, c1: self.c1 * k, c0: self.c0 * k, ..*self }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min.is_finite() && self.t_max.is_finite() && self.t_min < self.t_max) {
            return Err(Error::config(format!("invalid model domain [{}, {}]", self.t_min, self.t_max)));
        }
        if !self.coeffs().iter().all(|c| c.is_finite()) {
            return Err(Error::config("non-finite model coefficient"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimateKind {
    Absolute,
    RelativeDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureEstimate {
    /// °C for absolute estimates, a signed difference for relative ones.
    pub value: f64,
    pub kind: EstimateKind,
    /// |predicted BER - observed BER| at the returned temperature.
    pub residual: f64,
    /// The observation had no exact preimage and was matched to the nearest point.
    pub clamped: bool,
}

impl fmt::Display for TemperatureEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EstimateKind::Absolute => write!(f, "{:.3} °C", self.value)?,
            EstimateKind::RelativeDelta => write!(f, "{:+.3} °C", self.value)?,
        }
        if self.clamped {
            write!(f, " (clamped, residual {:.4})", self.residual)?;
        }
        Ok(())
    }
}

/// Least-squares cubic over `samples` of `(temperature, flips_per_row)` on the default domain.
pub fn fit_cubic(samples: &[(f64, f64)]) -> Result<RegressionModel> {
    fit_cubic_with(samples, TempDomain::default(), ModelSource::Victim)
}

/// Least-squares cubic with an explicit validity domain and source tag.
///
/// The normal equations are built on `x = (t - mid) / half`, where `mid` and
/// `half` span the sample temperatures, and converted back to raw powers of `t`.
pub fn fit_cubic_with(samples: &[(f64, f64)], domain: TempDomain, source: ModelSource) -> Result<RegressionModel> {
    if samples.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
        return Err(Error::domain("non-finite sample"));
    }
    let mut temps: Vec<f64> = samples.iter().map(|s| s.0).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    if temps.len() < 4 {
        return Err(Error::Underdetermined(temps.len()));
    }
    let (lo, hi) = (temps[0], temps[temps.len() - 1]);
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);

    let mut ata = [[0.0f64; 4]; 4];
    let mut aty = [0.0f64; 4];
    for &(t, y) in samples {
        let x = (t - mid) / half;
        let pow = [1.0, x, x * x, x * x * x];
        for i in 0..4 {
            aty[i] += pow[i] * y;
            for j in 0..4 {
                ata[i][j] += pow[i] * pow[j];
            }
        }
    }
    let a = solve4(ata, aty).ok_or(Error::Underdetermined(temps.len()))?;

    // P(t) = sum_k a_k ((t - mid) / half)^k, expanded in powers of t.
    let mut raw = [0.0f64; 4];
    let binom = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
    for k in 0..4 {
        let scale = a[k] / half.powi(k as i32);
        for j in 0..=k {
            raw[j] += scale * binom[k][j] * (-mid).powi((k - j) as i32);
        }
    }
    Ok(RegressionModel::new(BerCubic::new(raw[3], raw[2], raw[1], raw[0]), domain, source))
}

/// Gaussian elimination with partial pivoting.
fn solve4(mut m: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..4 {
            let f = m[r][col] / m[col][col];
            let pivot_row = m[col];
            for (x, p) in m[r].iter_mut().zip(pivot_row).skip(col) {
                *x -= f * p;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| m[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    Some(x)
}

/// All temperatures in the model domain where the model equals `ber`.
pub fn model_roots(model: &RegressionModel, ber: f64) -> Vec<f64> {
    let f = |t: f64| model.eval(t) - ber;
    let n = ((model.t_max - model.t_min) / SCAN_STEP).round().max(1.0) as usize;
    let grid: Vec<f64> = (0..=n).map(|i| model.t_min + (model.t_max - model.t_min) * i as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
    let tol = 1e-9 * ber.abs().max(model.c0.abs()).max(1.0);
    let mut roots = Vec::new();
    for i in 0..=n {
        if vals[i] == 0.0 {
            roots.push(grid[i]);
            continue;
        }
        if i > 0 && vals[i - 1] != 0.0 && (vals[i - 1] < 0.0) != (vals[i] < 0.0) {
            roots.push(bisect(f, grid[i - 1], grid[i], vals[i - 1]));
        }
        // A root where the curve touches the level without crossing it.
        if i > 0 && i < n {
            let (a, b, c) = (vals[i - 1], vals[i], vals[i + 1]);
            let same_sign = (a < 0.0) == (b < 0.0) && (b < 0.0) == (c < 0.0) && a != 0.0 && c != 0.0;
            if same_sign && b.abs() < a.abs() && b.abs() <= c.abs() {
                let t = argmin_abs(f, grid[i - 1], grid[i + 1]);
                if f(t).abs() <= tol {
                    roots.push(t);
                }
            }
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    roots
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, f_lo: f64) -> f64 {
    let neg_lo = f_lo < 0.0;
    while hi - lo > ROOT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v == 0.0 {
            return mid;
        }
        if (v < 0.0) == neg_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Ternary search for the minimum of |f| on a bracket where it is unimodal.
fn argmin_abs(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > ROOT_TOLERANCE {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1).abs() <= f(m2).abs() {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

/// Temperature at which the model predicts `ber`.
///
/// With several roots the one nearest `prior` (or the domain midpoint) wins,
/// lower temperature on ties. Without a root the temperature minimizing the
/// residual is returned and flagged as clamped.
pub fn invert_model(model: &RegressionModel, ber: f64, prior: Option<f64>) -> TemperatureEstimate {
    let anchor = prior.unwrap_or_else(|| model.midpoint());
    let roots = model_roots(model, ber);
    if let Some(&t) = roots
        .iter()
        .min_by(|a, b| (*a - anchor).abs().total_cmp(&(*b - anchor).abs()).then(a.total_cmp(b)))
    {
        return TemperatureEstimate {
            value: t,
            kind: EstimateKind::Absolute,
            residual: (model.eval(t) - ber).abs(),
            clamped: false,
        };
    }
    let f = |t: f64| model.eval(t) - ber;
    let n = ((model.t_max - model.t_min) / SCAN_STEP).round().max(1.0) as usize;
    let at = |i: usize| model.t_min + (model.t_max - model.t_min) * i as f64 / n as f64;
    let best = (0..=n).min_by(|&i, &j| f(at(i)).abs().total_cmp(&f(at(j)).abs())).unwrap_or(0);
    let t = if best == 0 || best == n { at(best) } else { argmin_abs(f, at(best - 1), at(best + 1)) };
    TemperatureEstimate { value: t, kind: EstimateKind::Absolute, residual: f(t).abs(), clamped: true }
}

/// Signed temperature change between a reference and a current observation.
///
/// The reference temperature is resolved first; the current observation is
/// then inverted with the reference as prior. When the reference has no exact
/// preimage the curve is rescaled to pass through it at an anchor: the prior,
/// kept inside the central half of the domain so both directions stay open.
/// A uniform gain error then does not freeze both estimates at the same clamp.
pub fn estimate_relative_change(
    model: &RegressionModel,
    ber_ref: f64,
    ber_now: f64,
    prior_ref: Option<f64>,
) -> TemperatureEstimate {
    let reference = invert_model(model, ber_ref, prior_ref);
    let t_ref = reference.value;
    let (curve, t_ref) = if reference.clamped {
        let quarter = 0.25 * (model.t_max - model.t_min);
        let anchor = prior_ref.unwrap_or_else(|| model.midpoint()).clamp(model.t_min + quarter, model.t_max - quarter);
        let p = model.eval(anchor);
        if p > 0.0 && ber_ref > 0.0 { (model.scaled(ber_ref / p), anchor) } else { (*model, t_ref) }
    } else {
        (*model, t_ref)
    };
    let now = invert_model(&curve, ber_now, Some(t_ref));
    TemperatureEstimate {
        value: now.value - t_ref,
        kind: EstimateKind::RelativeDelta,
        residual: now.residual,
        clamped: reference.clamped || now.clamped,
    }
}

/// Nearest-rank `q`-th percentile of the absolute values of `errors`.
pub fn error_percentile(errors: &[f64], q: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::domain("percentile of an empty list"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::domain(format!("percentile {q} outside [0, 100]")));
    }
    let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * abs.len() as f64).ceil().max(1.0) as usize;
    Ok(abs[rank.min(abs.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::ModuleProfile;
    use approx::assert_relative_eq;

    fn model_of(id: u32) -> RegressionModel {
        let p = ModuleProfile::builtin(id).unwrap();
        RegressionModel::new(p.ber_cubic, p.temp_domain, ModelSource::Victim)
    }

    fn grid_samples(m: &RegressionModel) -> Vec<(f64, f64)> {
        (50..=95).map(|t| (f64::from(t), m.eval(f64::from(t)))).collect()
    }

    #[test]
    fn fit_recovers_generating_cubics() {
        for id in 1..=12 {
            let truth = model_of(id);
            let fit = fit_cubic(&grid_samples(&truth)).unwrap();
            for (a, b) in fit.coeffs().iter().zip(truth.coeffs()) {
                assert_relative_eq!(*a, b, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn constant_fit() {
        let s: Vec<(f64, f64)> = (50..=95).map(|t| (f64::from(t), 7.5)).collect();
        let m = fit_cubic(&s).unwrap();
        assert!(m.c3.abs() < 1e-12 && m.c2.abs() < 1e-10 && m.c1.abs() < 1e-8);
        assert_relative_eq!(m.c0, 7.5, max_relative = 1e-9);
    }

    #[test]
    fn underdetermined_fits() {
        let s = [(50.0, 1.0), (60.0, 2.0), (70.0, 3.0), (50.0, 1.5)];
        assert!(matches!(fit_cubic(&s), Err(Error::Underdetermined(3))));
        assert!(matches!(fit_cubic(&[(60.0, 1.0); 8]), Err(Error::Underdetermined(1))));
    }

    #[test]
    fn fit_idempotent() {
        let noisy: Vec<(f64, f64)> =
            (50..=95).map(|t| (f64::from(t), 100.0 + f64::from(t) * 0.7 + f64::from(t % 7) * 1.3)).collect();
        let first = fit_cubic(&noisy).unwrap();
        let second = fit_cubic(&grid_samples(&first)).unwrap();
        for (a, b) in first.coeffs().iter().zip(second.coeffs()) {
            assert_relative_eq!(*a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn invert_module4_at_60() {
        let m = model_of(4);
        let ber = m.eval(60.0);
        assert_relative_eq!(ber, 152.96, epsilon = 1e-9);
        let est = invert_model(&m, ber, None);
        assert!((est.value - 60.0).abs() < 1e-3);
        assert!(!est.clamped);
    }

    #[test]
    fn invert_boundary() {
        for id in 1..=12 {
            let m = model_of(id);
            let est = invert_model(&m, m.eval(50.0), Some(50.0));
            assert!((est.value - 50.0).abs() < 1e-3, "module {id}: {}", est.value);
        }
    }

    #[test]
    fn round_trip_every_grid_point() {
        for id in 1..=12 {
            let m = model_of(id);
            for t in 50..=95 {
                let t = f64::from(t);
                let est = invert_model(&m, m.eval(t), Some(t));
                assert!((est.value - t).abs() < 1e-3, "module {id} t {t}: {}", est.value);
            }
        }
    }

    #[test]
    fn two_root_instance_picks_root_nearest_prior() {
        let m = model_of(8);
        // Level between the local minimum near 74 and the local maximum near 56:
        // three crossings, two of them above 70.
        let ber = m.eval(80.0);
        let brute: Vec<f64> = (0..=45_000)
            .map(|i| 50.0 + i as f64 * 1e-3)
            .collect::<Vec<_>>()
            .windows(2)
            .filter(|w| (m.eval(w[0]) - ber).signum() != (m.eval(w[1]) - ber).signum())
            .map(|w| w[0])
            .collect();
        assert!(brute.len() >= 2, "{brute:?}");
        let above_70: Vec<f64> = brute.iter().copied().filter(|t| *t > 70.0).collect();
        let want = *above_70
            .iter()
            .min_by(|a, b| (*a - 85.0).abs().total_cmp(&(*b - 85.0).abs()))
            .unwrap();
        let est = invert_model(&m, ber, Some(85.0));
        assert!((est.value - want).abs() < 2e-3, "{} vs {want}", est.value);
        let roots = model_roots(&m, ber);
        assert_eq!(roots.len(), brute.len());
    }

    #[test]
    fn touching_root_detected() {
        // (t - 70)^2 touches zero at 70 without a sign change.
        let m = RegressionModel::new(BerCubic::new(0.0, 1.0, -140.0, 4900.0), TempDomain::default(), ModelSource::Victim);
        let roots = model_roots(&m, 0.0);
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - 70.0).abs() < 1e-3);
        let m = RegressionModel::new(BerCubic::new(0.0, 1.0, -140.05 * 2.0 / 2.0, 70.025f64.powi(2)), TempDomain::default(), ModelSource::Victim);
        let est = invert_model(&m, 0.0, None);
        assert!((est.value - 70.025).abs() < 1e-3 && !est.clamped, "{est:?}");
    }

    #[test]
    fn no_root_clamps() {
        let m = model_of(1);
        let below = invert_model(&m, 0.0, None);
        assert!(below.clamped);
        assert!(below.value >= 50.0 && below.value <= 95.0);
        // Brute-force argmin of the residual.
        let brute = (0..=45_000)
            .map(|i| 50.0 + i as f64 * 1e-3)
            .min_by(|a, b| m.eval(*a).abs().total_cmp(&m.eval(*b).abs()))
            .unwrap();
        assert!((below.value - brute).abs() < 2e-3);
        assert_relative_eq!(below.residual, m.eval(below.value), epsilon = 1e-12);
        let above = invert_model(&m, 1e6, None);
        assert!(above.clamped);
        assert!((above.value - brute_argmin(&m, 1e6)).abs() < 2e-3);
    }

    fn brute_argmin(m: &RegressionModel, ber: f64) -> f64 {
        (0..=45_000)
            .map(|i| 50.0 + i as f64 * 1e-3)
            .min_by(|a, b| (m.eval(*a) - ber).abs().total_cmp(&(m.eval(*b) - ber).abs()))
            .unwrap()
    }

    #[test]
    fn relative_examples() {
        let m4 = model_of(4);
        let d = estimate_relative_change(&m4, m4.eval(60.0), m4.eval(65.0), None);
        assert!((d.value - 5.0).abs() < 1e-2, "{d:?}");
        assert_eq!(d.kind, EstimateKind::RelativeDelta);
        let same = estimate_relative_change(&m4, 150.0, 150.0, Some(70.0));
        assert!(same.value.abs() < 1e-9);
        let m1 = model_of(1);
        let down = estimate_relative_change(&m1, m1.eval(80.0), m1.eval(75.0), None);
        assert!(down.value < 0.0);
    }

    #[test]
    fn relative_antisymmetry_on_monotone_models() {
        for id in [1, 7, 10] {
            let m = model_of(id);
            for (a, b) in [(55.0, 58.0), (60.0, 90.0), (70.0, 71.0)] {
                let (ba, bb) = (m.eval(a), m.eval(b));
                let ab = estimate_relative_change(&m, ba, bb, Some(a)).value;
                let ba_ = estimate_relative_change(&m, bb, ba, Some(b)).value;
                assert!((ab + ba_).abs() < 1e-5, "module {id}: {ab} vs {ba_}");
            }
        }
    }

    #[test]
    fn relative_with_gain_error_uses_anchor() {
        // Observations 20% below a monotone model's range stay informative.
        let m = model_of(1);
        let truth = m.scaled(1.0 / 1.2);
        let d = estimate_relative_change(&m, truth.eval(52.0), truth.eval(55.0), Some(52.0));
        assert!(d.clamped);
        assert!((d.value - 3.0).abs() < 0.5, "{d:?}");
    }

    #[test]
    fn percentiles() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(error_percentile(&xs, 90.0).unwrap(), 9.0);
        assert_eq!(error_percentile(&[0.0, 0.0, 0.0], 37.0).unwrap(), 0.0);
        assert_eq!(error_percentile(&[-3.0, 1.0, 2.0], 100.0).unwrap(), 3.0);
        assert_eq!(error_percentile(&[-3.0, 1.0, 2.0], 0.0).unwrap(), 1.0);
        assert!(matches!(error_percentile(&[], 50.0), Err(Error::Domain(_))));
        assert!(matches!(error_percentile(&[1.0], 101.0), Err(Error::Domain(_))));
    }

    #[test]
    fn json_shape() {
        let m = model_of(4);
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort();
        assert_eq!(keys, ["c0", "c1", "c2", "c3", "source", "t_max", "t_min"]);
        assert_eq!(v["source"], "Victim");
        assert_eq!(RegressionModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
