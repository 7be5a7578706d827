//! The online conformal wrappers. Every method follows the issue-then-observe
//! contract of [`OnlineProtocol`].

use serde::{Deserialize, Serialize};

use super::source::{pair_levels, CalibrationSource};
use super::{
    conformal_interval, corrected_quantile_sorted, cqr_score, ConformalError, PredictionInterval,
};
use crate::aggregation::{ClipBound, IntervalAggregator, RuleKind};
use crate::models::{BaseLearner, QuantilePair};
use crate::protocol::{OnlineProtocol, ProtocolViolation};
use crate::stats;

pub const STATE_VERSION: u32 = 1;

/// One step of the ACI recursion.
pub fn aci_update(alpha_t: f64, alpha: f64, gamma: f64, covered: bool) -> f64 {
    let miss = if covered { 0.0 } else { 1.0 };
    alpha_t + gamma * (alpha - miss)
}

/// Interval at effective level `alpha_t`: the whole line when `alpha_t <= 0`,
/// the raw quantile pair when `alpha_t >= 1`, otherwise the conformalized pair.
pub fn interval_at_level(
    q_lo: f64,
    q_hi: f64,
    sorted_scores: &[f64],
    alpha_t: f64,
    level: f64,
) -> Result<PredictionInterval, ConformalError> {
    if alpha_t <= 0.0 {
        Ok(PredictionInterval::unbounded(level))
    } else if alpha_t >= 1.0 {
        PredictionInterval::new(q_lo, q_hi, level)
    } else {
        let q = corrected_quantile_sorted(sorted_scores, alpha_t)?;
        Ok(conformal_interval(q_lo, q_hi, q, level))
    }
}

/// `{0}` followed by seven log-spaced rates from `1e-4` to `5e-2`.
pub fn default_gamma_grid() -> Vec<f64> {
    let (a, b) = (1e-4f64, 5e-2f64);
    let mut g = vec![0.0];
    g.extend((0..7).map(|i| (a.ln() + (b.ln() - a.ln()) * i as f64 / 6.0).exp()));
    g
}

fn check_alpha(alpha: f64) -> Result<(), ConformalError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ConformalError::InvalidAlpha(alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    x: Vec<f64>,
    interval: PredictionInterval,
}

fn begin(pending: &Option<Pending>) -> Result<(), ConformalError> {
    if pending.is_some() {
        Err(ConformalError::Protocol(ProtocolViolation::IssueWhilePending))
    } else {
        Ok(())
    }
}

fn finish(pending: &mut Option<Pending>) -> Result<Pending, ConformalError> {
    pending
        .take()
        .ok_or(ConformalError::Protocol(ProtocolViolation::ObserveBeforeIssue))
}

/// The fitted quantile pair with no conformal correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQuantile {
    source: CalibrationSource,
    alpha: f64,
    pending: Option<Pending>,
}

impl RawQuantile {
    pub fn new(source: CalibrationSource, alpha: f64) -> Result<Self, ConformalError> {
        check_alpha(alpha)?;
        Ok(Self {
            source,
            alpha,
            pending: None,
        })
    }

    pub fn source(&self) -> &CalibrationSource {
        &self.source
    }
}

impl OnlineProtocol for RawQuantile {
    type Input = [f64];
    type Output = PredictionInterval;
    type Error = ConformalError;

    fn issue(&mut self, x: &[f64]) -> Result<PredictionInterval, ConformalError> {
        begin(&self.pending)?;
        let (lo, hi) = self.source.predict(x)?;
        let interval = PredictionInterval::new(lo, hi, 1.0 - self.alpha)?;
        self.pending = Some(Pending {
            x: x.to_vec(),
            interval,
        });
        Ok(interval)
    }

    fn observe(&mut self, y: f64) -> Result<(), ConformalError> {
        let p = finish(&mut self.pending)?;
        self.source.update(&p.x, y)
    }
}

/// Conformalized pair at a fixed level over a rolling calibration source
/// (OSSCP or OSSCP-horizon, depending on the source).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConformal {
    source: CalibrationSource,
    alpha: f64,
    pending: Option<Pending>,
}

impl SplitConformal {
    pub fn new(source: CalibrationSource, alpha: f64) -> Result<Self, ConformalError> {
        check_alpha(alpha)?;
        Ok(Self {
            source,
            alpha,
            pending: None,
        })
    }

    pub fn source(&self) -> &CalibrationSource {
        &self.source
    }
}

impl OnlineProtocol for SplitConformal {
    type Input = [f64];
    type Output = PredictionInterval;
    type Error = ConformalError;

    fn issue(&mut self, x: &[f64]) -> Result<PredictionInterval, ConformalError> {
        begin(&self.pending)?;
        let (lo, hi) = self.source.predict(x)?;
        let q = corrected_quantile_sorted(self.source.scores().sorted(), self.alpha)?;
        let interval = conformal_interval(lo, hi, q, 1.0 - self.alpha);
        self.pending = Some(Pending {
            x: x.to_vec(),
            interval,
        });
        Ok(interval)
    }

    fn observe(&mut self, y: f64) -> Result<(), ConformalError> {
        let p = finish(&mut self.pending)?;
        self.source.update(&p.x, y)
    }
}

/// Classical split conformal: one pair, one calibration set, no updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSplitConformal {
    pair: QuantilePair,
    sorted_scores: Vec<f64>,
    alpha: f64,
    pending: Option<Pending>,
}

impl StaticSplitConformal {
    pub fn fit(
        learner: &BaseLearner,
        alpha: f64,
        train: (&[Vec<f64>], &[f64]),
        cal: (&[Vec<f64>], &[f64]),
    ) -> Result<Self, ConformalError> {
        let (lo, hi) = pair_levels(alpha)?;
        let pair = QuantilePair::fit(learner, train.0, train.1, lo, hi, None)?;
        if cal.0.is_empty() || cal.0.len() != cal.1.len() {
            return Err(ConformalError::EmptyScores);
        }
        let scores = cal
            .0
            .iter()
            .zip(cal.1)
            .map(|(x, y)| {
                let (a, b) = pair.predict(x)?;
                cqr_score(*y, a, b)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            pair,
            sorted_scores: stats::sorted(&scores),
            alpha,
            pending: None,
        })
    }

    /// The correction added to each side.
    pub fn correction(&self) -> f64 {
        corrected_quantile_sorted(&self.sorted_scores, self.alpha).expect("validated at fit")
    }
}

impl OnlineProtocol for StaticSplitConformal {
    type Input = [f64];
    type Output = PredictionInterval;
    type Error = ConformalError;

    fn issue(&mut self, x: &[f64]) -> Result<PredictionInterval, ConformalError> {
        begin(&self.pending)?;
        let (lo, hi) = self.pair.predict(x)?;
        let interval = conformal_interval(lo, hi, self.correction(), 1.0 - self.alpha);
        self.pending = Some(Pending {
            x: Vec::new(),
            interval,
        });
        Ok(interval)
    }

    fn observe(&mut self, _y: f64) -> Result<(), ConformalError> {
        finish(&mut self.pending).map(|_| ())
    }
}

/// Adaptive conformal inference over a rolling calibration source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aci {
    source: CalibrationSource,
    alpha: f64,
    gamma: f64,
    alpha_t: f64,
    /// `alpha_t` in force at each issued step.
    trace: Vec<f64>,
    pending: Option<Pending>,
}

impl Aci {
    pub fn new(source: CalibrationSource, alpha: f64, gamma: f64) -> Result<Self, ConformalError> {
        check_alpha(alpha)?;
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(ConformalError::Config(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Self {
            source,
            alpha,
            gamma,
            alpha_t: alpha,
            trace: Vec::new(),
            pending: None,
        })
    }

    pub fn alpha_t(&self) -> f64 {
        self.alpha_t
    }

    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl OnlineProtocol for Aci {
    type Input = [f64];
    type Output = PredictionInterval;
    type Error = ConformalError;

    fn issue(&mut self, x: &[f64]) -> Result<PredictionInterval, ConformalError> {
        begin(&self.pending)?;
        let (lo, hi) = self.source.predict(x)?;
        let interval =
            interval_at_level(lo, hi, self.source.scores().sorted(), self.alpha_t, 1.0 - self.alpha)?;
        self.trace.push(self.alpha_t);
        self.pending = Some(Pending {
            x: x.to_vec(),
            interval,
        });
        Ok(interval)
    }

    fn observe(&mut self, y: f64) -> Result<(), ConformalError> {
        let p = finish(&mut self.pending)?;
        self.alpha_t = aci_update(self.alpha_t, self.alpha, self.gamma, p.interval.contains(y));
        self.source.update(&p.x, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AgPending {
    x: Vec<f64>,
    experts: Vec<PredictionInterval>,
}

/// Aggregated ACI: one ACI expert per learning rate, sharing a calibration
/// source, combined bound by bound with online aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgAci {
    source: CalibrationSource,
    alpha: f64,
    gammas: Vec<f64>,
    alpha_ts: Vec<f64>,
    aggregator: IntervalAggregator,
    pending: Option<AgPending>,
    last_experts: Vec<PredictionInterval>,
}

impl AgAci {
    /// `observed` seeds the running clip bound with past targets.
    pub fn new(
        source: CalibrationSource,
        alpha: f64,
        gammas: Vec<f64>,
        rule: &RuleKind,
        gradient_trick: bool,
        observed: &[f64],
    ) -> Result<Self, ConformalError> {
        check_alpha(alpha)?;
        if gammas.is_empty() {
            return Err(ConformalError::Config("gamma grid is empty".into()));
        }
        if let Some(g) = gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
            return Err(ConformalError::Config(format!("gamma must be >= 0, got {g}")));
        }
        let aggregator = IntervalAggregator::new(gammas.len(), alpha, rule, gradient_trick, observed)?;
        Ok(Self {
            source,
            alpha,
            alpha_ts: vec![alpha; gammas.len()],
            gammas,
            aggregator,
            pending: None,
            last_experts: Vec::new(),
        })
    }

    /// Record the weights used at every step (both bounds).
    pub fn with_history(mut self) -> Self {
        self.aggregator = self.aggregator.with_history();
        self
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn alpha_ts(&self) -> &[f64] {
        &self.alpha_ts
    }

    pub fn aggregator(&self) -> &IntervalAggregator {
        &self.aggregator
    }

    /// Unclipped expert intervals from the latest `issue`.
    pub fn last_experts(&self) -> &[PredictionInterval] {
        &self.last_experts
    }

    pub fn last_bound(&self) -> Option<ClipBound> {
        self.aggregator.last_bound()
    }
}

impl OnlineProtocol for AgAci {
    type Input = [f64];
    type Output = PredictionInterval;
    type Error = ConformalError;

    fn issue(&mut self, x: &[f64]) -> Result<PredictionInterval, ConformalError> {
        if self.pending.is_some() {
            return Err(ConformalError::Protocol(ProtocolViolation::IssueWhilePending));
        }
        let (lo, hi) = self.source.predict(x)?;
        let sorted = self.source.scores().sorted();
        let level = 1.0 - self.alpha;
        let experts = self
            .alpha_ts
            .iter()
            .map(|a| interval_at_level(lo, hi, sorted, *a, level))
            .collect::<Result<Vec<_>, _>>()?;
        let lowers: Vec<f64> = experts.iter().map(|i| i.lower).collect();
        let uppers: Vec<f64> = experts.iter().map(|i| i.upper).collect();
        let (a, b) = self.aggregator.issue(&lowers, &uppers)?;
        self.last_experts.clone_from(&experts);
        self.pending = Some(AgPending {
            x: x.to_vec(),
            experts,
        });
        PredictionInterval::new(a, b, level)
    }

    fn observe(&mut self, y: f64) -> Result<(), ConformalError> {
        let p = self
            .pending
            .take()
            .ok_or(ConformalError::Protocol(ProtocolViolation::ObserveBeforeIssue))?;
        for ((a, g), e) in self.alpha_ts.iter_mut().zip(&self.gammas).zip(&p.experts) {
            *a = aci_update(*a, self.alpha, *g, e.contains(y));
        }
        self.aggregator.observe(y)?;
        self.source.update(&p.x, y)
    }
}

/// Any wrapper, as one serializable state machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ConformalMethod {
    Raw(RawQuantile),
    Split(SplitConformal),
    Static(StaticSplitConformal),
    Aci(Aci),
    AgAci(AgAci),
}

#[derive(Serialize, Deserialize)]
struct StateDocument {
    schema_version: u32,
    state: ConformalMethod,
}

/// Alias kept for checkpoint documents.
pub type MethodState = ConformalMethod;

impl ConformalMethod {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            schema_version: u32,
            state: &'a ConformalMethod,
        }
        serde_json::to_string(&Doc {
            schema_version: STATE_VERSION,
            state: self,
        })
        .expect("state serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ConformalError> {
        #[derive(Deserialize)]
        struct Header {
            schema_version: u32,
        }
        let h: Header = serde_json::from_str(s).map_err(|e| ConformalError::Document(e.to_string()))?;
        if h.schema_version != STATE_VERSION {
            return Err(ConformalError::Version(h.schema_version));
        }
        let doc: StateDocument =
            serde_json::from_str(s).map_err(|e| ConformalError::Document(e.to_string()))?;
        Ok(doc.state)
    }
}

impl OnlineProtocol for ConformalMethod {
    type Input = [f64];
    type Output = PredictionInterval;
    type Error = ConformalError;

    fn issue(&mut self, x: &[f64]) -> Result<PredictionInterval, ConformalError> {
        match self {
            Self::Raw(m) => m.issue(x),
            Self::Split(m) => m.issue(x),
            Self::Static(m) => m.issue(x),
            Self::Aci(m) => m.issue(x),
            Self::AgAci(m) => m.issue(x),
        }
    }

    fn observe(&mut self, y: f64) -> Result<(), ConformalError> {
        match self {
            Self::Raw(m) => m.observe(y),
            Self::Split(m) => m.observe(y),
            Self::Static(m) => m.observe(y),
            Self::Aci(m) => m.observe(y),
            Self::AgAci(m) => m.observe(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::SourceSpec;
    use crate::models::LinearQrOptions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn linear() -> BaseLearner {
        BaseLearner::Linear {
            lambda: 0.0,
            options: LinearQrOptions::default(),
        }
    }

    fn gaussian_stream(n: usize, seed: u64, shift_at: Option<(usize, f64)>) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.sample(StandardNormal)]).collect();
        let y = x
            .iter()
            .enumerate()
            .map(|(t, r)| {
                let shift = match shift_at {
                    Some((s, m)) if t >= s => m,
                    _ => 0.0,
                };
                r[0] + shift + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        (x, y)
    }

    fn run<M: OnlineProtocol<Input = [f64], Output = PredictionInterval, Error = ConformalError>>(
        m: &mut M,
        x: &[Vec<f64>],
        y: &[f64],
    ) -> Vec<PredictionInterval> {
        x.iter()
            .zip(y)
            .map(|(xi, yi)| {
                let i = m.issue(xi).unwrap();
                m.observe(*yi).unwrap();
                i
            })
            .collect()
    }

    fn coverage(iv: &[PredictionInterval], y: &[f64]) -> f64 {
        iv.iter().zip(y).filter(|(i, y)| i.contains(**y)).count() as f64 / y.len() as f64
    }

    #[test]
    fn aci_recursion_examples() {
        assert!((aci_update(0.1, 0.1, 0.01, true) - 0.101).abs() < 1e-15);
        assert!((aci_update(0.1, 0.1, 0.01, false) - 0.091).abs() < 1e-15);
        assert_eq!(aci_update(0.1, 0.1, 0.0, false), 0.1);
        assert_eq!(aci_update(0.1, 0.1, 0.0, true), 0.1);
    }

    #[test]
    fn level_conventions() {
        let s = [1.0, 2.0, 3.0];
        let i = interval_at_level(3.0, 7.0, &s, 0.0, 0.9).unwrap();
        assert_eq!((i.lower, i.upper), (f64::NEG_INFINITY, f64::INFINITY));
        let i = interval_at_level(3.0, 7.0, &s, -0.3, 0.9).unwrap();
        assert!(!i.is_finite());
        let i = interval_at_level(3.0, 7.0, &s, 1.0, 0.9).unwrap();
        assert_eq!((i.lower, i.upper), (3.0, 7.0));
        let i = interval_at_level(3.0, 7.0, &s, 0.7, 0.9).unwrap();
        assert_eq!((i.lower, i.upper), (1.0, 9.0));
    }

    #[test]
    fn gamma_grid_shape() {
        let g = default_gamma_grid();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1e-4).abs() < 1e-18 && (g[7] - 5e-2).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn osscp_covers_iid_stream() {
        let (x, y) = gaussian_stream(2400, 5, None);
        let spec = SourceSpec::Osscp { window: 400, cal_frac: 0.5, refit_every: 0 };
        let src = CalibrationSource::build(&spec, &linear(), 0.1, &x[..400], &y[..400]).unwrap();
        let mut m = SplitConformal::new(src, 0.1).unwrap();
        let iv = run(&mut m, &x[400..], &y[400..]);
        let c = coverage(&iv, &y[400..]);
        assert!((0.87..=0.93).contains(&c), "{c}");
    }

    #[test]
    fn constant_stream_gives_zero_width() {
        let x: Vec<Vec<f64>> = (0..200).map(|t| vec![(t % 5) as f64]).collect();
        let y = vec![3.5; 200];
        for spec in [
            SourceSpec::Osscp { window: 40, cal_frac: 0.5, refit_every: 0 },
            SourceSpec::Horizon { window: 40, cal_frac: 0.5, horizon: 1 },
        ] {
            let src = CalibrationSource::build(&spec, &linear(), 0.1, &x[..40], &y[..40]).unwrap();
            assert!(src.scores().iter().all(|s| *s == 0.0));
            let mut m = SplitConformal::new(src, 0.1).unwrap();
            let iv = run(&mut m, &x[40..], &y[40..]);
            assert!(iv.iter().all(|i| i.lower == 3.5 && i.upper == 3.5));
            assert_eq!(coverage(&iv, &y[40..]), 1.0);
        }
    }

    #[test]
    fn osscp_undercovers_after_a_large_shift() {
        let (x, y) = gaussian_stream(700, 6, Some((650, 10.0)));
        let spec = SourceSpec::Osscp { window: 400, cal_frac: 0.5, refit_every: 1 };
        let src = CalibrationSource::build(&spec, &linear(), 0.1, &x[..400], &y[..400]).unwrap();
        let mut m = SplitConformal::new(src, 0.1).unwrap();
        let iv = run(&mut m, &x[400..], &y[400..]);
        let c = coverage(&iv[250..], &y[650..]);
        assert!(c < 0.9, "{c}");
    }

    #[test]
    fn aci_with_zero_gamma_matches_fixed_level() {
        let (x, y) = gaussian_stream(500, 7, Some((300, 4.0)));
        let spec = SourceSpec::Osscp { window: 100, cal_frac: 0.5, refit_every: 1 };
        let src = CalibrationSource::build(&spec, &linear(), 0.2, &x[..100], &y[..100]).unwrap();
        let mut a = Aci::new(src.clone(), 0.2, 0.0).unwrap();
        let mut b = SplitConformal::new(src, 0.2).unwrap();
        assert_eq!(run(&mut a, &x[100..], &y[100..]), run(&mut b, &x[100..], &y[100..]));
    }

    #[test]
    fn aci_adapts_after_a_shift() {
        let (x, y) = gaussian_stream(1400, 8, Some((700, 4.0)));
        let spec = SourceSpec::Osscp { window: 200, cal_frac: 0.5, refit_every: 0 };
        let src = CalibrationSource::build(&spec, &linear(), 0.1, &x[..200], &y[..200]).unwrap();
        let mut fixed = SplitConformal::new(src.clone(), 0.1).unwrap();
        let mut aci = Aci::new(src, 0.1, 0.05).unwrap();
        let f = run(&mut fixed, &x[200..], &y[200..]);
        let a = run(&mut aci, &x[200..], &y[200..]);
        // the fixed-level method recovers only once shifted scores fill its window
        let (ca, cf) = (coverage(&a[500..600], &y[700..800]), coverage(&f[500..600], &y[700..800]));
        assert!(ca > cf + 0.1, "aci {ca} fixed {cf}");
        assert_eq!(aci.trace().len(), 1200);
    }

    #[test]
    fn agaci_single_expert_equals_aci() {
        let (x, y) = gaussian_stream(600, 9, Some((350, 3.0)));
        let spec = SourceSpec::Osscp { window: 100, cal_frac: 0.5, refit_every: 1 };
        let src = CalibrationSource::build(&spec, &linear(), 0.1, &x[..100], &y[..100]).unwrap();
        let mut aci = Aci::new(src.clone(), 0.1, 0.02).unwrap();
        let mut ag = AgAci::new(src, 0.1, vec![0.02], &RuleKind::Boa, true, &y[..100]).unwrap();
        for t in 100..600 {
            let a = aci.issue(&x[t]).unwrap();
            let g = ag.issue(&x[t]).unwrap();
            let b = ag.last_bound().unwrap();
            assert_eq!((g.lower, g.upper), (b.clamp(a.lower), b.clamp(a.upper)));
            aci.observe(y[t]).unwrap();
            ag.observe(y[t]).unwrap();
        }
    }

    #[test]
    fn agaci_bounds_stay_in_expert_envelope() {
        let (x, y) = gaussian_stream(800, 10, Some((400, 5.0)));
        let spec = SourceSpec::Osscp { window: 100, cal_frac: 0.5, refit_every: 1 };
        let src = CalibrationSource::build(&spec, &linear(), 0.1, &x[..100], &y[..100]).unwrap();
        let mut ag = AgAci::new(src, 0.1, default_gamma_grid(), &RuleKind::Boa, true, &y[..100]).unwrap();
        for t in 100..800 {
            let g = ag.issue(&x[t]).unwrap();
            let b = ag.last_bound().unwrap();
            let lows: Vec<f64> = ag.last_experts().iter().map(|i| b.clamp(i.lower)).collect();
            let ups: Vec<f64> = ag.last_experts().iter().map(|i| b.clamp(i.upper)).collect();
            let within = |v: f64, s: &[f64]| {
                s.iter().copied().fold(f64::INFINITY, f64::min) <= v
                    && v <= s.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            assert!(within(g.lower, &lows) && within(g.upper, &ups), "step {t}");
            ag.observe(y[t]).unwrap();
        }
    }

    #[test]
    fn protocol_violations_are_rejected() {
        let (x, y) = gaussian_stream(120, 11, None);
        let spec = SourceSpec::Osscp { window: 100, cal_frac: 0.5, refit_every: 1 };
        let src = CalibrationSource::build(&spec, &linear(), 0.1, &x[..100], &y[..100]).unwrap();
        let mut m = ConformalMethod::Aci(Aci::new(src, 0.1, 0.01).unwrap());
        assert!(matches!(
            m.observe(y[100]),
            Err(ConformalError::Protocol(ProtocolViolation::ObserveBeforeIssue))
        ));
        m.issue(&x[100]).unwrap();
        assert!(matches!(
            m.issue(&x[101]),
            Err(ConformalError::Protocol(ProtocolViolation::IssueWhilePending))
        ));
    }

    #[test]
    fn empty_gamma_grid_is_a_config_error() {
        let (x, y) = gaussian_stream(100, 12, None);
        let spec = SourceSpec::Osscp { window: 100, cal_frac: 0.5, refit_every: 1 };
        let src = CalibrationSource::build(&spec, &linear(), 0.1, &x, &y).unwrap();
        assert!(matches!(
            AgAci::new(src, 0.1, vec![], &RuleKind::Boa, true, &y),
            Err(ConformalError::Config(_))
        ));
    }

    #[test]
    fn state_checkpoint_resumes_identically() {
        let (x, y) = gaussian_stream(400, 13, Some((250, 3.0)));
        let spec = SourceSpec::Horizon { window: 100, cal_frac: 0.5, horizon: 1 };
        let src = CalibrationSource::build(&spec, &linear(), 0.1, &x[..100], &y[..100]).unwrap();
        let mut m = ConformalMethod::AgAci(
            AgAci::new(src, 0.1, default_gamma_grid(), &RuleKind::Boa, true, &y[..100]).unwrap(),
        );
        let first = run(&mut m, &x[100..200], &y[100..200]);
        let json = m.to_json();
        let mut resumed = ConformalMethod::from_json(&json).unwrap();
        assert_eq!(resumed, m);
        let a = run(&mut m, &x[200..], &y[200..]);
        let b = run(&mut resumed, &x[200..], &y[200..]);
        assert_eq!(a, b);
        assert_eq!(first.len(), 100);
        let bumped = json.replacen("\"schema_version\":1", "\"schema_version\":7", 1);
        assert!(matches!(ConformalMethod::from_json(&bumped), Err(ConformalError::Version(7))));
    }

    #[test]
    fn replay_is_deterministic() {
        let (x, y) = gaussian_stream(300, 14, None);
        let spec = SourceSpec::Horizon { window: 80, cal_frac: 0.5, horizon: 1 };
        let build = || {
            let src = CalibrationSource::build(&spec, &linear(), 0.1, &x[..80], &y[..80]).unwrap();
            SplitConformal::new(src, 0.1).unwrap()
        };
        assert_eq!(run(&mut build(), &x[80..], &y[80..]), run(&mut build(), &x[80..], &y[80..]));
    }
}
