//! Two-phase segmentation under noise-model uncertainty.
//!
//! Each scenario owns a relaxed label `φ ∈ [0, 1]`, an auxiliary field
//! `w ≈ ∇φ` with multiplier `λ`, and a progressive-hedging multiplier `v`.
//! One outer iteration runs `inner_sweeps` ADMM sweeps per scenario (in
//! parallel), averages the scenario labels into the consensus, updates `v` on
//! the scenario-consensus gap and resets every scenario label to the
//! consensus, which also becomes the next proximal anchor.

use rayon::prelude::*;

use crate::config::SolverConfig;
use crate::convergence::{self, LayerView, ResidualRecord, Snapshot};
use crate::error::{Error, Result};
use crate::field::{threshold, BinaryMask, MultiChannelField, ScalarField, VectorField};
use crate::grid::{curvature_weight, divergence, gradient, shrink, solve_screened_poisson, SpectralPlan};
use crate::noise::{coupled_potential, estimate_two_phase, NoiseKind, ScenarioSet, ThetaParams};

/// Lower bound applied to images fed to scenario sets containing a model
/// whose potential needs strictly positive data.
pub const POSITIVE_FLOOR: f64 = 1e-6;

/// Clamps the image to `[POSITIVE_FLOOR, 1]` when any scenario needs it.
pub fn prepare_image(f: &MultiChannelField, scenarios: &ScenarioSet) -> MultiChannelField {
    if scenarios.needs_positive_data() {
        f.clamp_floor(POSITIVE_FLOOR)
    } else {
        f.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioState {
    pub phi: ScalarField,
    pub w: VectorField,
    pub lambda: VectorField,
    pub v: ScalarField,
    /// `(θ₁, θ₂)` per channel.
    pub theta: Vec<(ThetaParams, ThetaParams)>,
}

impl ScenarioState {
    /// `φ = φ⁰`, `w = λ = 0`, `v = 0`, θ estimated from `φ⁰`.
    pub fn new(phi0: ScalarField, kind: NoiseKind, f: &MultiChannelField) -> Result<Self> {
        if phi0.dims() != f.dims() {
            return Err(Error::dims(f.dims(), phi0.dims()));
        }
        let (w, h) = phi0.dims();
        let theta = estimate_theta(kind, f, &phi0)?;
        Ok(Self {
            w: VectorField::zeros(w, h),
            lambda: VectorField::zeros(w, h),
            v: ScalarField::zeros(w, h),
            phi: phi0,
            theta,
        })
    }

    pub fn view(&self) -> LayerView<'_> {
        LayerView {
            phi: &self.phi,
            w: &self.w,
            lambda: &self.lambda,
            v: &self.v,
        }
    }
}

fn estimate_theta(
    kind: NoiseKind,
    f: &MultiChannelField,
    phi: &ScalarField,
) -> Result<Vec<(ThetaParams, ThetaParams)>> {
    f.channels()
        .iter()
        .map(|c| estimate_two_phase(kind, c, phi))
        .collect()
}

/// Channel-coupled potentials `(Q₁*, Q₂*)` at the state's θ.
pub fn region_potentials(
    kind: NoiseKind,
    f: &MultiChannelField,
    theta: &[(ThetaParams, ThetaParams)],
) -> Result<(ScalarField, ScalarField)> {
    let t1: Vec<ThetaParams> = theta.iter().map(|t| t.0).collect();
    let t2: Vec<ThetaParams> = theta.iter().map(|t| t.1).collect();
    Ok((coupled_potential(kind, f, &t1)?, coupled_potential(kind, f, &t2)?))
}

/// `r = α₁Q₁* − α₂Q₂*`.
pub fn data_residual(q1: &ScalarField, q2: &ScalarField, alpha1: f64, alpha2: f64) -> Result<ScalarField> {
    q1.zip_map(q2, |a, b| alpha1 * a - alpha2 * b)
}

/// The φ sub-problem with θ, `w`, `λ` and `v` frozen:
///
/// `J(φ) = Σ cφ + Σ vφ + (τ/2)Σ(φ − a)² + Σ λ·(w − ∇φ) + (μ/2)Σ|w − ∇φ|²`
///
/// where `c` is the linearized data coefficient and `a` the proximal anchor.
/// `J` omits terms constant in `φ`.
pub struct PhiSubproblem<'a> {
    pub data: &'a ScalarField,
    pub v: &'a ScalarField,
    pub anchor: &'a ScalarField,
    pub w: &'a VectorField,
    pub lambda: &'a VectorField,
    pub mu: f64,
    pub tau: f64,
}

impl PhiSubproblem<'_> {
    /// `div(λ + μw)`
    fn coupling_divergence(&self) -> ScalarField {
        divergence(&VectorField {
            x: self.w.x.zip_map(&self.lambda.x, |w, l| self.mu * w + l).expect("dims"),
            y: self.w.y.zip_map(&self.lambda.y, |w, l| self.mu * w + l).expect("dims"),
        })
    }

    /// Coupling and proximal part of `J`, excluding the data term.
    pub fn splitting_objective(&self, phi: &ScalarField) -> f64 {
        let g = gradient(phi);
        let (gx, gy) = (g.x.as_slice(), g.y.as_slice());
        let (wx, wy) = (self.w.x.as_slice(), self.w.y.as_slice());
        let (lx, ly) = (self.lambda.x.as_slice(), self.lambda.y.as_slice());
        let (p, v, a) = (phi.as_slice(), self.v.as_slice(), self.anchor.as_slice());
        let mut acc = 0.0;
        for i in 0..p.len() {
            let (dx, dy) = (wx[i] - gx[i], wy[i] - gy[i]);
            let d = p[i] - a[i];
            acc += v[i] * p[i] + 0.5 * self.tau * d * d + lx[i] * dx + ly[i] * dy + 0.5 * self.mu * (dx * dx + dy * dy);
        }
        acc
    }

    pub fn objective(&self, phi: &ScalarField) -> f64 {
        phi.dot(self.data) + self.splitting_objective(phi)
    }

    /// `∇J = c + v + τ(φ − a) + div λ + μ div w − μΔφ`.
    pub fn gradient(&self, phi: &ScalarField) -> ScalarField {
        let div = self.coupling_divergence();
        let lap = divergence(&gradient(phi));
        let mut out = ScalarField::zeros(phi.width(), phi.height());
        let o = out.as_mut_slice();
        let (c, v, a, p) = (self.data.as_slice(), self.v.as_slice(), self.anchor.as_slice(), phi.as_slice());
        for i in 0..o.len() {
            o[i] = c[i] + v[i] + self.tau * (p[i] - a[i]) + div.as_slice()[i] - self.mu * lap.as_slice()[i];
        }
        out
    }

    /// Right-hand side `τa − c − v − div λ − μ div w` of `(−μΔ + τ)φ = rhs`.
    pub fn rhs(&self) -> ScalarField {
        let div = self.coupling_divergence();
        let mut out = ScalarField::zeros(self.data.width(), self.data.height());
        let o = out.as_mut_slice();
        let (c, v, a) = (self.data.as_slice(), self.v.as_slice(), self.anchor.as_slice());
        for i in 0..o.len() {
            o[i] = self.tau * a[i] - c[i] - v[i] - div.as_slice()[i];
        }
        out
    }

    /// Copy of the problem's data coefficient truncated pointwise to
    /// `±(τ + 4μ + |v + div(λ + μw)|)`. Beyond that bound the sign of
    /// `∂J/∂φᵢ` no longer depends on `φ ∈ [0, 1]`, so the minimizer of `J`
    /// over the box is unchanged while the unconstrained solve no longer
    /// spreads extreme coefficients into neighbouring pixels.
    pub fn box_equivalent_data(&self) -> ScalarField {
        let div = self.coupling_divergence();
        let base = self.tau + 4.0 * self.mu;
        let mut out = self.data.clone();
        for ((c, v), d) in out.as_mut_slice().iter_mut().zip(self.v.as_slice()).zip(div.as_slice()) {
            let bound = base + (v + d).abs();
            *c = c.clamp(-bound, bound);
        }
        out
    }

    /// Unconstrained minimizer of `J`.
    pub fn solve(&self, plan: &SpectralPlan) -> Result<ScalarField> {
        let phi = solve_screened_poisson(&self.rhs(), self.mu, self.tau, plan)?;
        if !phi.all_finite() {
            return Err(Error::NonFinite("phi update"));
        }
        Ok(phi)
    }
}

/// φ update: solve with the box-equivalent data coefficient, then clip.
pub(crate) fn solve_phi(
    data: &ScalarField,
    v: &ScalarField,
    anchor: &ScalarField,
    w: &VectorField,
    lambda: &VectorField,
    cfg: &SolverConfig,
    plan: &SpectralPlan,
) -> Result<ScalarField> {
    let raw = PhiSubproblem {
        data,
        v,
        anchor,
        w,
        lambda,
        mu: cfg.mu,
        tau: cfg.tau,
    };
    let data = raw.box_equivalent_data();
    let sub = PhiSubproblem { data: &data, ..raw };
    Ok(sub.solve(plan)?.clamp(0.0, 1.0))
}

/// Heat-flow time applied to φ before its curvature is taken. On a nearly
/// binary label the raw discrete curvature is ±1 on every edge pixel
/// whatever the edge's geometry; after smoothing it tracks the level-line
/// curvature.
pub const CURVATURE_SMOOTHING: f64 = 2.0;

/// `g = α + β|κ|` with `κ` the curvature of the smoothed label.
pub fn edge_weight(phi: &ScalarField, alpha: f64, beta: f64, epsilon: f64, plan: &SpectralPlan) -> Result<ScalarField> {
    if beta == 0.0 {
        return Ok(curvature_weight(phi, alpha, beta, epsilon));
    }
    Ok(curvature_weight(&plan.heat(phi, CURVATURE_SMOOTHING)?, alpha, beta, epsilon))
}

/// `w = shrink(∇φ − λ/μ, g(κ)/μ)` with `g` computed from `phi`, then
/// `λ ← λ + μ(w − ∇φ)`.
pub(crate) fn splitting_update(
    phi: &ScalarField,
    w: &mut VectorField,
    lambda: &mut VectorField,
    cfg: &SolverConfig,
    plan: &SpectralPlan,
) -> Result<()> {
    let g = edge_weight(phi, cfg.alpha, cfg.beta, cfg.epsilon, plan)?;
    let grad = gradient(phi);
    let mu = cfg.mu;
    let target = VectorField {
        x: grad.x.zip_map(&lambda.x, |d, l| d - l / mu).expect("dims"),
        y: grad.y.zip_map(&lambda.y, |d, l| d - l / mu).expect("dims"),
    };
    *w = shrink(&target, &g, mu);
    for (l, (wv, d)) in lambda.x.as_mut_slice().iter_mut().zip(w.x.as_slice().iter().zip(grad.x.as_slice())) {
        *l += mu * (wv - d);
    }
    for (l, (wv, d)) in lambda.y.as_mut_slice().iter_mut().zip(w.y.as_slice().iter().zip(grad.y.as_slice())) {
        *l += mu * (wv - d);
    }
    Ok(())
}

/// One ADMM sweep: θ, then φ (spectral solve and clip), then `w`, then `λ`.
pub fn admm_sweep(
    state: &mut ScenarioState,
    kind: NoiseKind,
    f: &MultiChannelField,
    anchor: &ScalarField,
    cfg: &SolverConfig,
    plan: &SpectralPlan,
) -> Result<()> {
    if state.phi.dims() != f.dims() || anchor.dims() != f.dims() {
        return Err(Error::dims(f.dims(), state.phi.dims()));
    }
    state.theta = estimate_theta(kind, f, &state.phi)?;
    let (q1, q2) = region_potentials(kind, f, &state.theta)?;
    let r = data_residual(&q1, &q2, cfg.alpha1, cfg.alpha2)?;
    state.phi = solve_phi(&r, &state.v, anchor, &state.w, &state.lambda, cfg, plan)?;
    splitting_update(&state.phi, &mut state.w, &mut state.lambda, cfg, plan)?;
    Ok(())
}

/// Probability-weighted average of equally sized fields, summed in order.
pub(crate) fn weighted_average<'a>(
    probs: &[f64],
    fields: impl ExactSizeIterator<Item = &'a ScalarField>,
) -> Result<ScalarField> {
    if fields.len() != probs.len() || probs.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} scenario fields", probs.len()),
            got: format!("{}", fields.len()),
        });
    }
    let mut acc: Option<ScalarField> = None;
    for (p, f) in probs.iter().zip(fields) {
        match acc.as_mut() {
            None => acc = Some(f.map(|v| p * v)),
            Some(a) => {
                f.check_same_dims(a)?;
                a.as_mut_slice().iter_mut().zip(f.as_slice()).for_each(|(a, v)| *a += p * v);
            }
        }
    }
    Ok(acc.expect("nonempty"))
}

/// Consensus `φ_ξ = Σ p(ξᵢ) φ(ξᵢ)`.
pub fn pha_aggregate(states: &[ScenarioState], scenarios: &ScenarioSet) -> Result<ScalarField> {
    weighted_average(&scenarios.probabilities(), states.iter().map(|s| &s.phi))
}

pub(crate) fn multiplier_step(v: &mut ScalarField, phi: &ScalarField, agg: &ScalarField, tau: f64) {
    for ((v, p), a) in v.as_mut_slice().iter_mut().zip(phi.as_slice()).zip(agg.as_slice()) {
        *v += tau * (p - a);
    }
}

/// `v(ξᵢ) ← v(ξᵢ) + τ(φ(ξᵢ) − φ_ξ)` with the pre-consensus `φ(ξᵢ)`, then
/// `φ(ξᵢ) ← φ_ξ`.
pub fn pha_multiplier_update(states: &mut [ScenarioState], agg: &ScalarField, tau: f64) -> Result<()> {
    for s in states.iter_mut() {
        s.phi.check_same_dims(agg)?;
        multiplier_step(&mut s.v, &s.phi, agg, tau);
        s.phi = agg.clone();
    }
    Ok(())
}

/// Per-scenario energy: data terms, elastica term with `g` frozen at the
/// state's φ, and the hedging terms `vφ + (τ/2)(φ − anchor)²`.
pub fn scenario_energy(
    state: &ScenarioState,
    kind: NoiseKind,
    f: &MultiChannelField,
    anchor: &ScalarField,
    cfg: &SolverConfig,
) -> Result<f64> {
    let (q1, q2) = region_potentials(kind, f, &state.theta)?;
    let plan = SpectralPlan::new(f.dims().0, f.dims().1);
    let g = edge_weight(&state.phi, cfg.alpha, cfg.beta, cfg.epsilon, &plan)?;
    let tv = gradient(&state.phi).magnitude();
    let (p, a, v) = (state.phi.as_slice(), anchor.as_slice(), state.v.as_slice());
    let (q1, q2, g, tv) = (q1.as_slice(), q2.as_slice(), g.as_slice(), tv.as_slice());
    let mut e = 0.0;
    for i in 0..p.len() {
        let d = p[i] - a[i];
        e += cfg.alpha1 * q1[i] * p[i]
            + cfg.alpha2 * q2[i] * (1.0 - p[i])
            + g[i] * tv[i]
            + v[i] * p[i]
            + 0.5 * cfg.tau * d * d;
    }
    Ok(e)
}

/// `E = Σ p(ξᵢ) E(ξᵢ)`.
pub fn energy_two_phase(
    states: &[ScenarioState],
    anchor: &ScalarField,
    scenarios: &ScenarioSet,
    f: &MultiChannelField,
    cfg: &SolverConfig,
) -> Result<f64> {
    if states.len() != scenarios.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} scenario states", scenarios.len()),
            got: format!("{}", states.len()),
        });
    }
    let mut e = 0.0;
    for (s, (kind, p)) in states.iter().zip(scenarios.entries()) {
        e += p * scenario_energy(s, *kind, f, anchor, cfg)?;
    }
    Ok(e)
}

/// Centered disk indicator of radius `min(w, h) / 4`.
pub fn default_init(width: usize, height: usize) -> ScalarField {
    let r = width.min(height) as f64 / 4.0;
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    ScalarField::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        if dx * dx + dy * dy <= r * r {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Clone, Debug)]
pub struct TwoPhaseResult {
    pub phi_agg: ScalarField,
    pub mask: BinaryMask,
    /// One record per outer iteration.
    pub diagnostics: Vec<ResidualRecord>,
    pub iterations: usize,
    pub converged: bool,
}

/// Outer-loop driver, stepping one iteration at a time.
pub struct TwoPhaseSolver {
    f: MultiChannelField,
    scenarios: ScenarioSet,
    cfg: SolverConfig,
    plan: SpectralPlan,
    states: Vec<ScenarioState>,
    anchor: ScalarField,
    previous: Snapshot,
    reference: Option<Snapshot>,
    records: Vec<ResidualRecord>,
    converged: bool,
}

impl TwoPhaseSolver {
    pub fn new(
        f: &MultiChannelField,
        scenarios: &ScenarioSet,
        cfg: &SolverConfig,
        phi0: &ScalarField,
    ) -> Result<Self> {
        cfg.validate()?;
        if phi0.dims() != f.dims() {
            return Err(Error::dims(f.dims(), phi0.dims()));
        }
        if !(phi0.min() >= 0.0 && phi0.max() <= 1.0) {
            return Err(Error::param("phi0", "values must lie in [0, 1]"));
        }
        let f = prepare_image(f, scenarios);
        let states = scenarios
            .entries()
            .iter()
            .map(|(kind, _)| ScenarioState::new(phi0.clone(), *kind, &f))
            .collect::<Result<Vec<_>>>()?;
        let energy = energy_two_phase(&states, phi0, scenarios, &f, cfg)?;
        let probs = scenarios.probabilities();
        let views: Vec<LayerView<'_>> = states.iter().map(|s| s.view()).collect();
        let previous = Snapshot::capture(&probs, &[views], std::slice::from_ref(phi0), energy);
        let (w, h) = f.dims();
        Ok(Self {
            plan: SpectralPlan::new(w, h),
            scenarios: scenarios.clone(),
            cfg: cfg.clone(),
            anchor: phi0.clone(),
            f,
            states,
            previous,
            reference: None,
            records: Vec::new(),
            converged: false,
        })
    }

    pub fn states(&self) -> &[ScenarioState] {
        &self.states
    }

    /// Current consensus, which is also the next proximal anchor.
    pub fn aggregate(&self) -> &ScalarField {
        &self.anchor
    }

    pub fn records(&self) -> &[ResidualRecord] {
        &self.records
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Runs one outer iteration and returns its residual record.
    pub fn step(&mut self) -> Result<ResidualRecord> {
        let (f, cfg, plan, anchor) = (&self.f, &self.cfg, &self.plan, &self.anchor);
        self.states
            .par_iter_mut()
            .zip(self.scenarios.entries().par_iter())
            .try_for_each(|(state, (kind, _))| {
                for _ in 0..cfg.inner_sweeps {
                    admm_sweep(state, *kind, f, anchor, cfg, plan)?;
                }
                Ok::<(), Error>(())
            })?;
        let agg = pha_aggregate(&self.states, &self.scenarios)?;
        let energy = energy_two_phase(&self.states, &self.anchor, &self.scenarios, &self.f, &self.cfg)?;
        for s in self.states.iter_mut() {
            multiplier_step(&mut s.v, &s.phi, &agg, self.cfg.tau);
        }
        let probs = self.scenarios.probabilities();
        let views: Vec<LayerView<'_>> = self.states.iter().map(|s| s.view()).collect();
        let current = Snapshot::capture(&probs, &[views], std::slice::from_ref(&agg), energy);
        let reference = self.reference.get_or_insert_with(|| current.clone());
        let record = convergence::residuals(self.records.len(), &current, &self.previous, reference);
        for s in self.states.iter_mut() {
            s.phi = agg.clone();
        }
        self.anchor = agg;
        self.previous = current;
        self.records.push(record);
        self.converged = convergence::should_stop(&record, &self.cfg.tol);
        Ok(record)
    }

    /// Steps until the stopping rule fires or `max_outer` is reached.
    pub fn run(mut self) -> Result<TwoPhaseResult> {
        while !self.converged && self.records.len() < self.cfg.max_outer {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> TwoPhaseResult {
        TwoPhaseResult {
            mask: threshold(&self.anchor, self.cfg.eta),
            phi_agg: self.anchor,
            iterations: self.records.len(),
            diagnostics: self.records,
            converged: self.converged,
        }
    }
}

/// Full two-phase solve from `phi0`.
pub fn segment_two_phase(
    f: &MultiChannelField,
    scenarios: &ScenarioSet,
    cfg: &SolverConfig,
    phi0: &ScalarField,
) -> Result<TwoPhaseResult> {
    TwoPhaseSolver::new(f, scenarios, cfg, phi0)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> ScalarField {
        ScalarField::from_fn(w, h, |_, _| rng.random_range(lo..hi))
    }

    fn two_level(w: usize, h: usize) -> (MultiChannelField, BinaryMask) {
        let truth = BinaryMask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - 15.5, y as f64 - 13.0);
            dx * dx + dy * dy <= 64.0
        });
        let img = ScalarField::from_fn(w, h, |x, y| if truth.get(x, y) { 0.75 } else { 0.25 });
        (MultiChannelField::single(img), truth)
    }

    #[test]
    fn exact_mask_gives_region_statistics() {
        let (f, truth) = two_level(32, 28);
        let phi = ScalarField::from_mask(&truth);
        let mut state = ScenarioState::new(phi.clone(), NoiseKind::Gaussian, &f).unwrap();
        let plan = SpectralPlan::new(32, 28);
        admm_sweep(&mut state, NoiseKind::Gaussian, &f, &phi, &SolverConfig::default(), &plan).unwrap();
        let (t1, t2) = state.theta[0];
        assert!((t1.mu - 0.75).abs() < 1e-12 && (t2.mu - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_sweep_resets_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (12, 10);
        let f = MultiChannelField::single(random_field(&mut rng, w, h, 0.1, 0.9));
        let phi = random_field(&mut rng, w, h, 0.0, 1.0);
        let mut state = ScenarioState::new(phi.clone(), NoiseKind::Gaussian, &f).unwrap();
        state.lambda = VectorField {
            x: random_field(&mut rng, w, h, -1.0, 1.0),
            y: random_field(&mut rng, w, h, -1.0, 1.0),
        };
        let cfg = SolverConfig {
            alpha: 0.0,
            beta: 0.0,
            ..SolverConfig::default()
        };
        admm_sweep(&mut state, NoiseKind::Gaussian, &f, &phi, &cfg, &SpectralPlan::new(w, h)).unwrap();
        assert!(state.lambda.x.l1_norm() + state.lambda.y.l1_norm() < 1e-12);
    }

    #[test]
    fn aggregate_examples() {
        let s = |v: f64| {
            let f = MultiChannelField::single(ScalarField::filled(3, 2, 0.5));
            ScenarioState::new(ScalarField::filled(3, 2, v), NoiseKind::Gaussian, &f)
        };
        // Gaussian estimation on a constant label needs both regions nonempty.
        let a = s(0.3).unwrap();
        let b = s(0.6).unwrap();
        let set = ScenarioSet::new(vec![(NoiseKind::Gaussian, 0.5), (NoiseKind::Gamma, 0.5)]).unwrap();
        let agg = pha_aggregate(&[a.clone(), b.clone()], &set).unwrap();
        assert!(agg.as_slice().iter().all(|v| (v - 0.45).abs() < 1e-15));
        assert!(pha_aggregate(&[a], &set).is_err());
    }

    #[test]
    fn multiplier_increments_hand_computed() {
        let f = MultiChannelField::single(ScalarField::filled(2, 2, 0.5));
        let mut a = ScenarioState::new(ScalarField::filled(2, 2, 0.2), NoiseKind::Gaussian, &f).unwrap();
        let mut b = a.clone();
        a.phi = ScalarField::zeros(2, 2);
        b.phi = ScalarField::filled(2, 2, 1.0);
        let agg = ScalarField::filled(2, 2, 0.5);
        let mut states = vec![a, b];
        pha_multiplier_update(&mut states, &agg, 5.0).unwrap();
        assert!(states[0].v.as_slice().iter().all(|&v| v == -2.5));
        assert!(states[1].v.as_slice().iter().all(|&v| v == 2.5));
        assert!(states.iter().all(|s| s.phi == agg));
    }

    #[test]
    fn energy_of_empty_label_is_background_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = MultiChannelField::single(random_field(&mut rng, 6, 5, 0.1, 0.9));
        let init = ScalarField::from_fn(6, 5, |x, _| if x < 3 { 1.0 } else { 0.0 });
        let mut state = ScenarioState::new(init, NoiseKind::Gaussian, &f).unwrap();
        state.phi = ScalarField::zeros(6, 5);
        let cfg = SolverConfig::default();
        let e = scenario_energy(&state, NoiseKind::Gaussian, &f, &ScalarField::zeros(6, 5), &cfg).unwrap();
        let (_, q2) = region_potentials(NoiseKind::Gaussian, &f, &state.theta).unwrap();
        assert!((e - cfg.alpha2 * q2.sum()).abs() < 1e-9 * e.abs());
    }

    #[test]
    fn noiseless_two_level_is_recovered() {
        let (w, h) = (64, 56);
        let truth = BinaryMask::from_fn(w, h, |x, y| (x as f64 - 30.5).hypot(y as f64 - 27.0) <= 16.0);
        let f = MultiChannelField::single(ScalarField::from_fn(w, h, |x, y| if truth.get(x, y) { 0.75 } else { 0.25 }));
        let cfg = SolverConfig {
            beta: 0.0,
            ..SolverConfig::default()
        };
        let scen = ScenarioSet::single(NoiseKind::Gaussian);
        let res = segment_two_phase(&f, &scen, &cfg, &default_init(w, h)).unwrap();
        assert!(crate::field::dice(&res.mask, &truth).unwrap() >= 0.99);
        assert_eq!(res.diagnostics.len(), res.iterations);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn sweep_keeps_phi_in_unit_interval(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = MultiChannelField::single(random_field(&mut rng, 10, 9, 0.05, 1.0));
            let phi = random_field(&mut rng, 10, 9, 0.0, 1.0);
            let anchor = random_field(&mut rng, 10, 9, 0.0, 1.0);
            let plan = SpectralPlan::new(10, 9);
            for kind in NoiseKind::ALL {
                let mut s = ScenarioState::new(phi.clone(), kind, &f).unwrap();
                admm_sweep(&mut s, kind, &f, &anchor, &SolverConfig::default(), &plan).unwrap();
                prop_assert!(s.phi.min() >= 0.0 && s.phi.max() <= 1.0);
            }
        }

        #[test]
        fn aggregate_is_bounded_by_scenarios(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = MultiChannelField::single(random_field(&mut rng, 5, 4, 0.05, 1.0));
            let set = ScenarioSet::default_mixture();
            let states: Vec<ScenarioState> = set
                .entries()
                .iter()
                .map(|(k, _)| ScenarioState::new(random_field(&mut rng, 5, 4, 0.0, 1.0), *k, &f).unwrap())
                .collect();
            let agg = pha_aggregate(&states, &set).unwrap();
            for i in 0..agg.len() {
                let vals: Vec<f64> = states.iter().map(|s| s.phi.as_slice()[i]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(agg.as_slice()[i] >= lo - 1e-15 && agg.as_slice()[i] <= hi + 1e-15);
            }
        }
    }
}
