//! Probability-flow ODE and reverse-SDE solvers in the `sigma(t) = t`
//! parametrization, where the ODE reads `dx/dsigma = -sigma * score(x, sigma)`.

use alloc::format;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::rng::standard_normal;
use crate::scorefield::ScoreField;

pub const DEFAULT_SIGMA_MAX: f64 = 80.0;
pub const DEFAULT_SIGMA_MIN: f64 = 0.002;
pub const DEFAULT_RHO: f64 = 7.0;

/// Decreasing noise levels `sigma_max = s_0 > ... > s_{n-1} = sigma_min > s_n = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule {
    levels: Vec<f64>,
    sigma_max: f64,
    sigma_min: f64,
    rho: f64,
}

impl SigmaSchedule {
    /// Polynomial discretization with curvature `rho`.
    pub fn new(steps: usize, sigma_max: f64, sigma_min: f64, rho: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(sigma_max > sigma_min && sigma_min > 0.0) || !sigma_max.is_finite() {
            return Err(Error::invalid(format!(
                "need sigma_max > sigma_min > 0, got {sigma_max} and {sigma_min}"
            )));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("rho must be positive, got {rho}")));
        }
        let mut levels = Vec::with_capacity(steps + 1);
        if steps == 1 {
            levels.push(sigma_max);
        } else {
            let (a, b) = (libm::pow(sigma_max, 1.0 / rho), libm::pow(sigma_min, 1.0 / rho));
            let last = (steps - 1) as f64;
            for i in 0..steps {
                let s = if i == 0 {
                    sigma_max
                } else if i == steps - 1 {
                    sigma_min
                } else {
                    libm::pow(a + (i as f64 / last) * (b - a), rho)
                };
                levels.push(s);
            }
        }
        levels.push(0.0);
        Ok(Self {
            levels,
            sigma_max,
            sigma_min,
            rho,
        })
    }

    pub fn with_defaults(steps: usize) -> Result<Self> {
        Self::new(steps, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN, DEFAULT_RHO)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn steps(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Shape of the schedules a search builds: `sigma_max`, `sigma_min`, `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSettings {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rho: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            sigma_max: DEFAULT_SIGMA_MAX,
            sigma_min: DEFAULT_SIGMA_MIN,
            rho: DEFAULT_RHO,
        }
    }
}

impl SamplerSettings {
    pub fn schedule(&self, steps: usize) -> Result<SigmaSchedule> {
        SigmaSchedule::new(steps, self.sigma_max, self.sigma_min, self.rho)
    }

    /// Levels from `sigma_from` down to `sigma_to` in `steps` intervals.
    ///
    /// Segments ending above zero are spaced polynomially with both endpoints
    /// exact. Segments ending at zero use the full schedule from `sigma_from`
    /// and `sigma_min`.
    pub fn segment(&self, sigma_from: f64, sigma_to: f64, steps: usize) -> Result<Vec<f64>> {
        if steps == 0 {
            return Err(Error::invalid("segment needs at least one step"));
        }
        if !(sigma_from > sigma_to && sigma_to >= 0.0) || !sigma_from.is_finite() {
            return Err(Error::invalid(format!(
                "need sigma_from > sigma_to >= 0, got {sigma_from} and {sigma_to}"
            )));
        }
        if sigma_to == 0.0 {
            return Ok(SigmaSchedule::new(steps, sigma_from, self.sigma_min, self.rho)?.levels);
        }
        let (a, b) = (libm::pow(sigma_from, 1.0 / self.rho), libm::pow(sigma_to, 1.0 / self.rho));
        let mut levels = Vec::with_capacity(steps + 1);
        levels.push(sigma_from);
        for i in 1..steps {
            levels.push(libm::pow(a + (i as f64 / steps as f64) * (b - a), self.rho));
        }
        levels.push(sigma_to);
        Ok(levels)
    }
}

/// Heun steps whose cost `2n - 1` fits in `nfe`.
pub fn heun_steps_for_nfe(nfe: u64) -> usize {
    (nfe.max(1) as usize).div_ceil(2)
}

/// NFEs of a Heun solve over `steps` intervals ending at zero.
pub fn heun_cost(steps: usize) -> u64 {
    2 * steps as u64 - 1
}

/// Which side of the ledger a solve is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Charge {
    Search,
    Denoise,
}

/// Audited count of score-field evaluations.
#[derive(Debug, Default)]
pub struct NfeLedger {
    search: AtomicU64,
    denoise: AtomicU64,
}

/// Plain copy of a ledger at one point in time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerSnapshot {
    pub search_nfe: u64,
    pub denoise_nfe: u64,
}

impl LedgerSnapshot {
    pub fn total(&self) -> u64 {
        self.search_nfe + self.denoise_nfe
    }
}

impl NfeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&self, kind: Charge, nfe: u64) {
        match kind {
            Charge::Search => self.search.fetch_add(nfe, Ordering::Relaxed),
            Charge::Denoise => self.denoise.fetch_add(nfe, Ordering::Relaxed),
        };
    }

    pub fn search_nfe(&self) -> u64 {
        self.search.load(Ordering::Relaxed)
    }

    pub fn denoise_nfe(&self) -> u64 {
        self.denoise.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.search_nfe() + self.denoise_nfe()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            search_nfe: self.search_nfe(),
            denoise_nfe: self.denoise_nfe(),
        }
    }
}

/// States visited by a solver. `x_predictions` holds the Tweedie estimate
/// at every level where the score was evaluated at a step start.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<(f64, Vec<f64>)>,
    pub x_predictions: Vec<(f64, Vec<f64>)>,
}

impl Trajectory {
    fn start(sigma: f64, x: Vec<f64>) -> Self {
        Self {
            states: alloc::vec![(sigma, x)],
            x_predictions: Vec::new(),
        }
    }

    pub fn final_state(&self) -> &[f64] {
        &self.states.last().expect("trajectory is never empty").1
    }

    pub fn final_sigma(&self) -> f64 {
        self.states.last().expect("trajectory is never empty").0
    }

    pub fn is_complete(&self) -> bool {
        self.final_sigma() == 0.0
    }

    pub fn into_final(mut self) -> Vec<f64> {
        self.states.pop().expect("trajectory is never empty").1
    }

    /// The cached x-prediction at the first level `<= sigma`.
    pub fn x_prediction_at_or_below(&self, sigma: f64) -> Option<&[f64]> {
        self.x_predictions
            .iter()
            .find(|(s, _)| *s <= sigma)
            .map(|(_, x)| x.as_slice())
    }
}

fn check_finite_state(x: &[f64], sigma: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalDivergence { sigma })
    }
}

fn slope<F: ScoreField + ?Sized>(field: &F, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let s = field.score(x, sigma)?;
    let d: Vec<f64> = s.iter().map(|v| -sigma * v).collect();
    check_finite_state(&d, sigma)?;
    Ok(d)
}

fn check_start<F: ScoreField + ?Sized>(field: &F, x: &[f64], levels: &[f64]) -> Result<()> {
    ensure_dim(x, field.dim(), "noise")?;
    ensure_finite(x, "noise")?;
    if levels.len() < 2 {
        return Err(Error::invalid("solver needs at least two levels"));
    }
    if levels.windows(2).any(|w| !(w[1] <= w[0])) || levels.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::invalid("levels must be non-negative and non-increasing"));
    }
    Ok(())
}

/// Heun integration over explicit levels. Steps ending at zero take a plain
/// Euler step; all others take the trapezoidal corrector.
pub fn heun_over_levels<F: ScoreField + ?Sized>(
    field: &F,
    x: &[f64],
    levels: &[f64],
    ledger: &NfeLedger,
    charge: Charge,
) -> Result<Trajectory> {
    check_start(field, x, levels)?;
    let mut traj = Trajectory::start(levels[0], x.to_vec());
    let mut cur = x.to_vec();
    for w in levels.windows(2) {
        let (s, s_next) = (w[0], w[1]);
        let d = slope(field, &cur, s)?;
        ledger.charge(charge, 1);
        traj.x_predictions
            .push((s, cur.iter().zip(&d).map(|(xi, di)| xi - s * di).collect()));
        let h = s_next - s;
        let euler: Vec<f64> = cur.iter().zip(&d).map(|(xi, di)| xi + h * di).collect();
        let next = if s_next > 0.0 {
            let d2 = slope(field, &euler, s_next)?;
            ledger.charge(charge, 1);
            cur.iter()
                .zip(d.iter().zip(&d2))
                .map(|(xi, (a, b))| xi + h * 0.5 * (a + b))
                .collect()
        } else {
            euler
        };
        check_finite_state(&next, s_next)?;
        traj.states.push((s_next, next.clone()));
        cur = next;
    }
    Ok(traj)
}

/// Euler integration over explicit levels, one NFE per step.
pub fn euler_over_levels<F: ScoreField + ?Sized>(
    field: &F,
    x: &[f64],
    levels: &[f64],
    ledger: &NfeLedger,
    charge: Charge,
) -> Result<Trajectory> {
    check_start(field, x, levels)?;
    let mut traj = Trajectory::start(levels[0], x.to_vec());
    let mut cur = x.to_vec();
    for w in levels.windows(2) {
        let (s, s_next) = (w[0], w[1]);
        let d = slope(field, &cur, s)?;
        ledger.charge(charge, 1);
        traj.x_predictions
            .push((s, cur.iter().zip(&d).map(|(xi, di)| xi - s * di).collect()));
        let next: Vec<f64> = cur.iter().zip(&d).map(|(xi, di)| xi + (s_next - s) * di).collect();
        check_finite_state(&next, s_next)?;
        traj.states.push((s_next, next.clone()));
        cur = next;
    }
    Ok(traj)
}

/// Second-order Heun solve of the probability-flow ODE; costs `2n - 1` NFEs.
pub fn heun_solve<F: ScoreField + ?Sized>(
    field: &F,
    noise: &[f64],
    schedule: &SigmaSchedule,
    ledger: &NfeLedger,
    charge: Charge,
) -> Result<Trajectory> {
    heun_over_levels(field, noise, schedule.levels(), ledger, charge)
}

/// First-order Euler solve; costs `n` NFEs.
pub fn euler_solve<F: ScoreField + ?Sized>(
    field: &F,
    noise: &[f64],
    schedule: &SigmaSchedule,
    ledger: &NfeLedger,
    charge: Charge,
) -> Result<Trajectory> {
    euler_over_levels(field, noise, schedule.levels(), ledger, charge)
}

/// One Euler-Maruyama step of the reverse SDE
/// `dx = -2 sigma score dsigma + sqrt(2 sigma) dW` from `sigma` to `sigma_next`.
pub fn sde_step<F: ScoreField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    x: &[f64],
    sigma: f64,
    sigma_next: f64,
    rng: &mut R,
    ledger: &NfeLedger,
    charge: Charge,
) -> Result<Vec<f64>> {
    if !(sigma_next <= sigma && sigma_next >= 0.0) {
        return Err(Error::invalid(format!(
            "reverse step needs sigma >= sigma_next >= 0, got {sigma} and {sigma_next}"
        )));
    }
    let s = field.score(x, sigma)?;
    ledger.charge(charge, 1);
    let dt = sigma - sigma_next;
    let noise_scale = libm::sqrt(2.0 * sigma * dt);
    let z = standard_normal(rng, x.len());
    let next: Vec<f64> = x
        .iter()
        .zip(s.iter().zip(&z))
        .map(|(xi, (si, zi))| xi + 2.0 * sigma * dt * si + noise_scale * zi)
        .collect();
    check_finite_state(&next, sigma_next)?;
    Ok(next)
}

/// Euler-Maruyama solve of the reverse SDE; costs `n` NFEs.
pub fn sde_solve<F: ScoreField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    noise: &[f64],
    schedule: &SigmaSchedule,
    rng: &mut R,
    ledger: &NfeLedger,
    charge: Charge,
) -> Result<Trajectory> {
    let levels = schedule.levels();
    check_start(field, noise, levels)?;
    let mut traj = Trajectory::start(levels[0], noise.to_vec());
    let mut cur = noise.to_vec();
    for w in levels.windows(2) {
        cur = sde_step(field, &cur, w[0], w[1], rng, ledger, charge)?;
        traj.states.push((w[1], cur.clone()));
    }
    Ok(traj)
}

/// Forward noising kernel: `x + sqrt(sigma_to^2 - sigma_from^2) eps`.
pub fn forward_noise<R: Rng + ?Sized>(x: &[f64], sigma_from: f64, sigma_to: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma_to >= sigma_from && sigma_from >= 0.0) || !sigma_to.is_finite() {
        return Err(Error::invalid(format!(
            "forward noising needs sigma_to >= sigma_from >= 0, got {sigma_from} -> {sigma_to}"
        )));
    }
    let scale = libm::sqrt(sigma_to * sigma_to - sigma_from * sigma_from);
    if scale == 0.0 {
        return Ok(x.to_vec());
    }
    let eps = standard_normal(rng, x.len());
    Ok(x.iter().zip(&eps).map(|(xi, e)| xi + scale * e).collect())
}

/// Heun solve restricted to `[sigma_to, sigma_from]` on a fresh sub-schedule.
///
/// Costs `2 steps - 1` NFEs when `sigma_to = 0` and `2 steps` otherwise.
pub fn partial_solve<F: ScoreField + ?Sized>(
    field: &F,
    x: &[f64],
    sigma_from: f64,
    sigma_to: f64,
    steps: usize,
    settings: &SamplerSettings,
    ledger: &NfeLedger,
    charge: Charge,
) -> Result<Trajectory> {
    let levels = settings.segment(sigma_from, sigma_to, steps)?;
    heun_over_levels(field, x, &levels, ledger, charge)
}

/// NFE cost of [`partial_solve`].
pub fn partial_cost(sigma_to: f64, steps: usize) -> u64 {
    if sigma_to == 0.0 {
        heun_cost(steps)
    } else {
        2 * steps as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::scorefield::{ConditionedField, CountingField, MixtureModel};

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(SigmaSchedule::new(1, 4.0, 1.0, 7.0).unwrap().levels(), &[4.0, 0.0]);
        let lin = SigmaSchedule::new(4, 4.0, 1.0, 1.0).unwrap();
        for (a, b) in lin.levels().iter().zip([4.0, 3.0, 2.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        let s = SigmaSchedule::with_defaults(18).unwrap();
        assert_eq!(s.levels()[0], DEFAULT_SIGMA_MAX);
        assert_eq!(s.levels()[17], DEFAULT_SIGMA_MIN);
        assert_eq!(s.levels()[18], 0.0);
        assert!(s.levels().windows(2).all(|w| w[1] < w[0]));
        assert!(SigmaSchedule::new(0, 4.0, 1.0, 7.0).is_err());
        assert!(SigmaSchedule::new(3, 1.0, 4.0, 7.0).is_err());
    }

    #[test]
    fn heun_matches_gaussian_closed_form() {
        let m = MixtureModel::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        let f = ConditionedField::unconditional(&m);
        let noise = [80.0, -40.0];
        let ledger = NfeLedger::new();
        let t = heun_solve(&f, &noise, &SigmaSchedule::with_defaults(128).unwrap(), &ledger, Charge::Search).unwrap();
        let exact: Vec<f64> = noise.iter().map(|v| v / 6401f64.sqrt()).collect();
        // rho=7 leaves the steps near sigma=1 coarse; 128 steps land at ~7.3e-4.
        assert!(rel_err(t.final_state(), &exact) < 1e-3);
        assert_eq!(ledger.search_nfe(), 255);
        assert!(t.is_complete());
        let fine = heun_solve(&f, &noise, &SigmaSchedule::with_defaults(512).unwrap(), &ledger, Charge::Search).unwrap();
        assert!(rel_err(fine.final_state(), &exact) < 1e-4);
    }

    #[test]
    fn single_step_is_one_euler_step_to_tweedie() {
        let m = MixtureModel::default_toy();
        let f = ConditionedField::unconditional(&m);
        let noise = [30.0, -70.0];
        let sched = SigmaSchedule::with_defaults(1).unwrap();
        let ledger = NfeLedger::new();
        let h = heun_solve(&f, &noise, &sched, &ledger, Charge::Search).unwrap();
        assert_eq!(ledger.search_nfe(), 1);
        let e = euler_solve(&f, &noise, &sched, &ledger, Charge::Denoise).unwrap();
        assert_eq!(ledger.denoise_nfe(), 1);
        let tweedie = crate::scorefield::x_prediction(&f, &noise, 80.0).unwrap();
        for i in 0..2 {
            assert!((e.final_state()[i] - tweedie[i]).abs() < 1e-12);
        }
        assert_eq!(h.final_state(), e.final_state());
    }

    #[test]
    fn solves_are_deterministic() {
        let m = MixtureModel::default_toy();
        let f = ConditionedField::unconditional(&m);
        let sched = SigmaSchedule::with_defaults(25).unwrap();
        let ledger = NfeLedger::new();
        let a = heun_solve(&f, &[12.0, -3.0], &sched, &ledger, Charge::Search).unwrap();
        let b = heun_solve(&f, &[12.0, -3.0], &sched, &ledger, Charge::Search).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn euler_matches_closed_form_at_512_steps() {
        let m = MixtureModel::isotropic(vec![0.0], 1.0).unwrap();
        let ledger = NfeLedger::new();
        let t = euler_solve(&m, &[80.0], &SigmaSchedule::with_defaults(512).unwrap(), &ledger, Charge::Search).unwrap();
        // first order: ~5.0e-3 at 512 steps, ~6.3e-4 at 4096
        assert!(rel_err(t.final_state(), &[80.0 / 6401f64.sqrt()]) < 1e-2);
        assert_eq!(ledger.search_nfe(), 512);
        let fine = euler_solve(&m, &[80.0], &SigmaSchedule::with_defaults(4096).unwrap(), &ledger, Charge::Search).unwrap();
        assert!(rel_err(fine.final_state(), &[80.0 / 6401f64.sqrt()]) < 1e-3);
    }

    #[test]
    fn sde_terminal_variance() {
        let s = 1.5;
        let m = MixtureModel::isotropic(vec![0.0], s).unwrap();
        let sched = SigmaSchedule::with_defaults(200).unwrap();
        let ledger = NfeLedger::new();
        let mut rng = substream(11, &[]);
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let noise = crate::rng::gaussian(&mut rng, 1, (s * s + 80.0 * 80.0f64).sqrt());
            let t = sde_solve(&m, &noise, &sched, &mut rng, &ledger, Charge::Denoise).unwrap();
            acc += t.final_state()[0].powi(2);
        }
        let var = acc / n as f64;
        assert!((var / (s * s) - 1.0).abs() < 0.05, "variance {var}");
        assert_eq!(ledger.denoise_nfe(), 200 * n as u64);
    }

    #[test]
    fn sde_is_seed_deterministic_and_zero_segment_is_identity() {
        let m = MixtureModel::default_toy();
        let sched = SigmaSchedule::with_defaults(10).unwrap();
        let ledger = NfeLedger::new();
        let a = sde_solve(&m, &[1.0, 2.0], &sched, &mut substream(3, &[]), &ledger, Charge::Search).unwrap();
        let b = sde_solve(&m, &[1.0, 2.0], &sched, &mut substream(3, &[]), &ledger, Charge::Search).unwrap();
        assert_eq!(a, b);
        let x = [0.5, -0.25];
        let y = sde_step(&m, &x, 2.0, 2.0, &mut substream(3, &[]), &ledger, Charge::Search).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn forward_noise_cases() {
        let mut rng = substream(5, &[]);
        assert_eq!(forward_noise(&[1.0, 2.0], 3.0, 3.0, &mut rng).unwrap(), vec![1.0, 2.0]);
        assert!(forward_noise(&[1.0], 3.0, 2.0, &mut rng).is_err());
        let n = 10_000;
        let (a, b, c) = (0.5, 2.0, 3.0);
        let (mut v1, mut v2) = (0.0, 0.0);
        for _ in 0..n {
            let y = forward_noise(&[0.0], a, b, &mut rng).unwrap();
            v1 += y[0] * y[0];
            let z = forward_noise(&y, b, c, &mut rng).unwrap();
            v2 += z[0] * z[0];
        }
        assert!((v1 / n as f64 / (b * b - a * a) - 1.0).abs() < 0.05);
        assert!((v2 / n as f64 / (c * c - a * a) - 1.0).abs() < 0.05);
    }

    #[test]
    fn partial_solve_to_zero_equals_full_solve() {
        let m = MixtureModel::default_toy();
        let f = ConditionedField::unconditional(&m);
        let settings = SamplerSettings::default();
        let ledger = NfeLedger::new();
        let x = [5.0, -9.0];
        let p = partial_solve(&f, &x, 10.0, 0.0, 12, &settings, &ledger, Charge::Search).unwrap();
        assert_eq!(ledger.search_nfe(), 23);
        let sched = SigmaSchedule::new(12, 10.0, settings.sigma_min, settings.rho).unwrap();
        let full = heun_solve(&f, &x, &sched, &ledger, Charge::Denoise).unwrap();
        assert_eq!(p, full);
    }

    #[test]
    fn chained_segments_equal_concatenated_solve() {
        let m = MixtureModel::default_toy();
        let f = CountingField::new(ConditionedField::unconditional(&m));
        let settings = SamplerSettings::default();
        let ledger = NfeLedger::new();
        let x = [40.0, 25.0];
        let first = partial_solve(&f, &x, 80.0, 1.5, 10, &settings, &ledger, Charge::Search).unwrap();
        assert_eq!(ledger.search_nfe(), 20);
        let second = partial_solve(&f, first.final_state(), 1.5, 0.0, 8, &settings, &ledger, Charge::Search).unwrap();
        assert_eq!(ledger.search_nfe(), 20 + 15);
        let mut levels = settings.segment(80.0, 1.5, 10).unwrap();
        levels.pop();
        levels.extend(settings.segment(1.5, 0.0, 8).unwrap());
        let whole = heun_over_levels(&f, &x, &levels, &ledger, Charge::Denoise).unwrap();
        assert_eq!(whole.final_state(), second.final_state());
        assert_eq!(f.calls(), ledger.total());
    }

    #[test]
    fn divergence_reports_sigma() {
        struct Exploding;
        impl ScoreField for Exploding {
            fn dim(&self) -> usize {
                1
            }
            fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
                Ok(alloc::vec![if sigma < 10.0 { f64::INFINITY } else { x[0] }])
            }
        }
        let ledger = NfeLedger::new();
        let err = heun_solve(&Exploding, &[1.0], &SigmaSchedule::with_defaults(8).unwrap(), &ledger, Charge::Search)
            .unwrap_err();
        assert!(matches!(err, Error::NumericalDivergence { sigma } if sigma < 10.0));
    }

    #[test]
    fn cost_helpers() {
        assert_eq!(heun_steps_for_nfe(5), 3);
        assert_eq!(heun_cost(heun_steps_for_nfe(5)), 5);
        assert_eq!(heun_cost(heun_steps_for_nfe(50)), 49);
        assert_eq!(heun_cost(heun_steps_for_nfe(1)), 1);
        assert_eq!(partial_cost(0.0, 4), 7);
        assert_eq!(partial_cost(0.5, 4), 8);
    }
}
