//! Segmentation with depth: `n` relaxed shapes ordered front to back, their
//! visibility functions, the hedged ADMM solver, multiphase initialization
//! and occlusion-ordering inference.
//!
//! Layer `h` (0-based, nearest first) is visible where it is present and no
//! nearer layer is: `χ_h = φ_h Π_{j<h}(1 − φ_j)`. The background is visible
//! where no layer is: `χ_n = Π_j (1 − φ_j)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::SolverConfig;
use crate::convergence::{self, LayerView, ResidualRecord, Snapshot};
use crate::error::{Error, Result};
use crate::field::{threshold, BinaryMask, MultiChannelField, ScalarField, VectorField};
use crate::grid::{gradient, SpectralPlan};
use crate::noise::{coupled_potential, estimate_depth, NoiseKind, ScenarioSet, ThetaParams};
use crate::two_phase::{edge_weight, multiplier_step, prepare_image, solve_phi, splitting_update, weighted_average};

/// Largest object count accepted by [`rank_orderings`].
pub const MAX_RANKED_OBJECTS: usize = 5;

/// Visibility functions `χ_0..χ_n` of layers given nearest first.
pub fn characteristic(phis: &[ScalarField]) -> Vec<ScalarField> {
    let (w, h) = phis[0].dims();
    let mut behind = ScalarField::filled(w, h, 1.0);
    let mut out = Vec::with_capacity(phis.len() + 1);
    for phi in phis {
        out.push(phi.zip_map(&behind, |p, b| p * b).expect("dims"));
        behind = behind.zip_map(phi, |b, p| b * (1.0 - p)).expect("dims");
    }
    out.push(behind);
    out
}

/// Permutation of object labels `1..=n`, nearest first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ordering(Vec<usize>);

impl Ordering {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let n = labels.len();
        let mut seen = vec![false; n];
        for &l in &labels {
            if l == 0 || l > n || seen[l - 1] {
                return Err(Error::param(
                    "ordering",
                    format!("{labels:?} is not a permutation of 1..={n}"),
                ));
            }
            seen[l - 1] = true;
        }
        if n == 0 {
            return Err(Error::param("ordering", "needs at least one object"));
        }
        Ok(Self(labels))
    }

    pub fn identity(n: usize) -> Self {
        Self((1..=n).collect())
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// All `n!` orderings in lexicographic order.
    pub fn all(n: usize) -> Vec<Ordering> {
        fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Ordering>) {
            if prefix.len() == used.len() {
                out.push(Ordering(prefix.clone()));
                return;
            }
            for l in 0..used.len() {
                if !used[l] {
                    used[l] = true;
                    prefix.push(l + 1);
                    extend(prefix, used, out);
                    prefix.pop();
                    used[l] = false;
                }
            }
        }
        let mut out = Vec::new();
        extend(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
        out
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

impl FromStr for Ordering {
    type Err = Error;

    /// Accepts labels separated by commas and/or whitespace.
    fn from_str(s: &str) -> Result<Self> {
        let labels = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::param("ordering", format!("bad label `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ordering::new(labels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthScenarioState {
    /// Per layer, nearest first.
    pub phi: Vec<ScalarField>,
    pub w: Vec<VectorField>,
    pub lambda: Vec<VectorField>,
    pub v: Vec<ScalarField>,
    /// Per channel, one θ per visibility function (`n + 1` entries).
    pub theta: Vec<Vec<ThetaParams>>,
}

impl DepthScenarioState {
    pub fn new(phi0: Vec<ScalarField>, kind: NoiseKind, f: &MultiChannelField) -> Result<Self> {
        if phi0.is_empty() {
            return Err(Error::param("objects", "needs at least one object"));
        }
        for p in &phi0 {
            if p.dims() != f.dims() {
                return Err(Error::dims(f.dims(), p.dims()));
            }
        }
        let (w, h) = f.dims();
        let n = phi0.len();
        let theta = estimate_theta(kind, f, &phi0)?;
        Ok(Self {
            w: vec![VectorField::zeros(w, h); n],
            lambda: vec![VectorField::zeros(w, h); n],
            v: vec![ScalarField::zeros(w, h); n],
            phi: phi0,
            theta,
        })
    }

    pub fn objects(&self) -> usize {
        self.phi.len()
    }

    fn view(&self, h: usize) -> LayerView<'_> {
        LayerView {
            phi: &self.phi[h],
            w: &self.w[h],
            lambda: &self.lambda[h],
            v: &self.v[h],
        }
    }
}

fn estimate_theta(kind: NoiseKind, f: &MultiChannelField, phis: &[ScalarField]) -> Result<Vec<Vec<ThetaParams>>> {
    let chi = characteristic(phis);
    f.channels().iter().map(|c| estimate_depth(kind, c, &chi)).collect()
}

/// Channel-coupled potentials `Q_0*..Q_n*`.
pub fn depth_potentials(
    kind: NoiseKind,
    f: &MultiChannelField,
    theta: &[Vec<ThetaParams>],
) -> Result<Vec<ScalarField>> {
    let regions = theta[0].len();
    (0..regions)
        .map(|s| {
            let ts: Vec<ThetaParams> = theta.iter().map(|t| t[s]).collect();
            coupled_potential(kind, f, &ts)
        })
        .collect()
}

/// Derivative of `Σ_s ∫ c_s χ_s` with respect to `φ_h`:
///
/// `Λ_h = Π_{j<h}(1 − φ_j) [c_h − Σ_{s>h} c_s φ_s Π_{h<j<s}(1 − φ_j)]`
///
/// with `φ_n ≡ 1` for the background. `weighted[s]` holds `c_s`.
pub fn occlusion_coefficient(phis: &[ScalarField], weighted: &[ScalarField], h: usize) -> ScalarField {
    let n = phis.len();
    debug_assert_eq!(weighted.len(), n + 1);
    let (w, ht) = phis[0].dims();
    let mut out = ScalarField::zeros(w, ht);
    let o = out.as_mut_slice();
    for (i, o) in o.iter_mut().enumerate() {
        let mut front = 1.0;
        for phi in &phis[..h] {
            front *= 1.0 - phi.as_slice()[i];
        }
        let mut tail = 0.0;
        let mut run = 1.0;
        for s in h + 1..=n {
            let phi_s = if s == n { 1.0 } else { phis[s].as_slice()[i] };
            tail += weighted[s].as_slice()[i] * phi_s * run;
            if s < n {
                run *= 1.0 - phi_s;
            }
        }
        *o = front * weighted[h].as_slice()[i] - front * tail;
    }
    out
}

fn weighted_potentials(q: Vec<ScalarField>, data_weight: f64) -> Vec<ScalarField> {
    q.into_iter().map(|q| q.map(|v| data_weight * v)).collect()
}

/// `Σ_s ∫ c_s χ_s` evaluated directly from the visibility functions.
pub fn data_energy(phis: &[ScalarField], weighted: &[ScalarField]) -> f64 {
    characteristic(phis).iter().zip(weighted).map(|(chi, c)| chi.dot(c)).sum()
}

/// One sweep: θ on the current visibility functions, then for each layer
/// in order the φ solve (with the freshest nearer layers), `w` and `λ`.
pub fn admm_sweep_depth(
    state: &mut DepthScenarioState,
    kind: NoiseKind,
    f: &MultiChannelField,
    anchors: &[ScalarField],
    cfg: &SolverConfig,
    plan: &SpectralPlan,
) -> Result<()> {
    if anchors.len() != state.objects() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} anchors", state.objects()),
            got: format!("{}", anchors.len()),
        });
    }
    state.theta = estimate_theta(kind, f, &state.phi)?;
    let weighted = weighted_potentials(depth_potentials(kind, f, &state.theta)?, cfg.data_weight);
    for h in 0..state.objects() {
        let coeff = occlusion_coefficient(&state.phi, &weighted, h);
        state.phi[h] = solve_phi(&coeff, &state.v[h], &anchors[h], &state.w[h], &state.lambda[h], cfg, plan)?;
        splitting_update(&state.phi[h], &mut state.w[h], &mut state.lambda[h], cfg, plan)?;
    }
    Ok(())
}

fn elastica_energy(phis: &[ScalarField], cfg: &SolverConfig) -> Result<f64> {
    let plan = SpectralPlan::new(phis[0].width(), phis[0].height());
    let mut e = 0.0;
    for p in phis {
        e += gradient(p).magnitude().dot(&edge_weight(p, cfg.alpha, cfg.beta, cfg.epsilon, &plan)?);
    }
    Ok(e)
}

/// Per-scenario energy with hedging terms, `g` frozen at the state's φ.
pub fn scenario_energy_depth(
    state: &DepthScenarioState,
    kind: NoiseKind,
    f: &MultiChannelField,
    anchors: &[ScalarField],
    cfg: &SolverConfig,
) -> Result<f64> {
    let weighted = weighted_potentials(depth_potentials(kind, f, &state.theta)?, cfg.data_weight);
    let mut e = elastica_energy(&state.phi, cfg)? + data_energy(&state.phi, &weighted);
    for ((p, v), a) in state.phi.iter().zip(&state.v).zip(anchors) {
        for ((p, v), a) in p.as_slice().iter().zip(v.as_slice()).zip(a.as_slice()) {
            let d = p - a;
            e += v * p + 0.5 * cfg.tau * d * d;
        }
    }
    Ok(e)
}

/// `E = Σ p(ξᵢ) E(ξᵢ)` including hedging terms.
pub fn energy_depth(
    states: &[DepthScenarioState],
    anchors: &[ScalarField],
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
        e += p * scenario_energy_depth(s, *kind, f, anchors, cfg)?;
    }
    Ok(e)
}

/// Model energy at consensus layers without hedging terms; θ is
/// re-estimated per scenario from the consensus visibility functions.
pub fn model_energy(
    layers: &[ScalarField],
    scenarios: &ScenarioSet,
    f: &MultiChannelField,
    cfg: &SolverConfig,
) -> Result<f64> {
    let f = prepare_image(f, scenarios);
    let elastica = elastica_energy(layers, cfg)?;
    let mut data = 0.0;
    for (kind, p) in scenarios.entries() {
        let theta = estimate_theta(*kind, &f, layers)?;
        let weighted = weighted_potentials(depth_potentials(*kind, &f, &theta)?, cfg.data_weight);
        data += p * data_energy(layers, &weighted);
    }
    Ok(elastica + data)
}

#[derive(Clone, Debug)]
pub struct DepthResult {
    /// Consensus fields indexed by object label (label `l` at `l − 1`).
    pub aggregates: Vec<ScalarField>,
    pub masks: Vec<BinaryMask>,
    /// Model energy at the final consensus.
    pub energy: f64,
    pub diagnostics: Vec<ResidualRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub ordering: Ordering,
}

/// Outer-loop driver over layers given nearest first.
pub struct DepthSolver {
    f: MultiChannelField,
    scenarios: ScenarioSet,
    cfg: SolverConfig,
    plan: SpectralPlan,
    states: Vec<DepthScenarioState>,
    anchors: Vec<ScalarField>,
    previous: Snapshot,
    reference: Option<Snapshot>,
    records: Vec<ResidualRecord>,
    converged: bool,
}

fn capture(probs: &[f64], states: &[DepthScenarioState], aggregates: &[ScalarField], energy: f64) -> Snapshot {
    let layers: Vec<Vec<LayerView<'_>>> = (0..aggregates.len())
        .map(|h| states.iter().map(|s| s.view(h)).collect())
        .collect();
    Snapshot::capture(probs, &layers, aggregates, energy)
}

impl DepthSolver {
    /// `layers0` are the initial fields of the layers, nearest first.
    pub fn new(
        f: &MultiChannelField,
        scenarios: &ScenarioSet,
        cfg: &SolverConfig,
        layers0: &[ScalarField],
    ) -> Result<Self> {
        cfg.validate()?;
        if layers0.is_empty() {
            return Err(Error::param("objects", "needs at least one object"));
        }
        for p in layers0 {
            if p.dims() != f.dims() {
                return Err(Error::dims(f.dims(), p.dims()));
            }
            if !(p.min() >= 0.0 && p.max() <= 1.0) {
                return Err(Error::param("phi0", "values must lie in [0, 1]"));
            }
        }
        let f = prepare_image(f, scenarios);
        let states = scenarios
            .entries()
            .iter()
            .map(|(kind, _)| DepthScenarioState::new(layers0.to_vec(), *kind, &f))
            .collect::<Result<Vec<_>>>()?;
        let energy = energy_depth(&states, layers0, scenarios, &f, cfg)?;
        let previous = capture(&scenarios.probabilities(), &states, layers0, energy);
        let (w, h) = f.dims();
        Ok(Self {
            plan: SpectralPlan::new(w, h),
            scenarios: scenarios.clone(),
            cfg: cfg.clone(),
            anchors: layers0.to_vec(),
            f,
            states,
            previous,
            reference: None,
            records: Vec::new(),
            converged: false,
        })
    }

    pub fn states(&self) -> &[DepthScenarioState] {
        &self.states
    }

    /// Consensus layers, nearest first.
    pub fn aggregates(&self) -> &[ScalarField] {
        &self.anchors
    }

    pub fn records(&self) -> &[ResidualRecord] {
        &self.records
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn step(&mut self) -> Result<ResidualRecord> {
        let (f, cfg, plan, anchors) = (&self.f, &self.cfg, &self.plan, &self.anchors);
        self.states
            .par_iter_mut()
            .zip(self.scenarios.entries().par_iter())
            .try_for_each(|(state, (kind, _))| {
                for _ in 0..cfg.inner_sweeps {
                    admm_sweep_depth(state, *kind, f, anchors, cfg, plan)?;
                }
                Ok::<(), Error>(())
            })?;
        let probs = self.scenarios.probabilities();
        let aggs = (0..self.anchors.len())
            .map(|h| weighted_average(&probs, self.states.iter().map(|s| &s.phi[h])))
            .collect::<Result<Vec<_>>>()?;
        let energy = energy_depth(&self.states, &self.anchors, &self.scenarios, &self.f, &self.cfg)?;
        for s in self.states.iter_mut() {
            for (h, agg) in aggs.iter().enumerate() {
                multiplier_step(&mut s.v[h], &s.phi[h], agg, self.cfg.tau);
            }
        }
        let current = capture(&probs, &self.states, &aggs, energy);
        let reference = self.reference.get_or_insert_with(|| current.clone());
        let record = convergence::residuals(self.records.len(), &current, &self.previous, reference);
        for s in self.states.iter_mut() {
            s.phi = aggs.clone();
        }
        self.anchors = aggs;
        self.previous = current;
        self.records.push(record);
        self.converged = convergence::should_stop(&record, &self.cfg.tol);
        Ok(record)
    }

    pub fn run(mut self) -> Result<(Vec<ScalarField>, Vec<ResidualRecord>, bool)> {
        while !self.converged && self.records.len() < self.cfg.max_outer {
            self.step()?;
        }
        Ok((self.anchors, self.records, self.converged))
    }
}

/// Depth solve with `phi0s` indexed by object label; layers are arranged
/// by `ordering` and results mapped back to label order.
pub fn segment_with_depth(
    f: &MultiChannelField,
    scenarios: &ScenarioSet,
    ordering: &Ordering,
    cfg: &SolverConfig,
    phi0s: &[ScalarField],
) -> Result<DepthResult> {
    if ordering.len() != phi0s.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} initial fields", ordering.len()),
            got: format!("{}", phi0s.len()),
        });
    }
    let layers0: Vec<ScalarField> = ordering.labels().iter().map(|&l| phi0s[l - 1].clone()).collect();
    let (layers, diagnostics, converged) = DepthSolver::new(f, scenarios, cfg, &layers0)?.run()?;
    let energy = model_energy(&layers, scenarios, f, cfg)?;
    let mut aggregates = vec![ScalarField::zeros(1, 1); layers.len()];
    for (layer, &label) in layers.into_iter().zip(ordering.labels()) {
        aggregates[label - 1] = layer;
    }
    Ok(DepthResult {
        masks: aggregates.iter().map(|a| threshold(a, cfg.eta)).collect(),
        aggregates,
        energy,
        iterations: diagnostics.len(),
        diagnostics,
        converged,
        ordering: ordering.clone(),
    })
}

/// Solves every ordering from the same initial fields, sorted by ascending
/// model energy (ties broken by ordering).
pub fn rank_orderings_full(
    f: &MultiChannelField,
    scenarios: &ScenarioSet,
    n: usize,
    cfg: &SolverConfig,
    phi0s: &[ScalarField],
) -> Result<Vec<DepthResult>> {
    if !(2..=MAX_RANKED_OBJECTS).contains(&n) {
        return Err(Error::param(
            "objects",
            format!("ordering search needs 2..={MAX_RANKED_OBJECTS} objects, got {n}"),
        ));
    }
    let mut results = Ordering::all(n)
        .into_par_iter()
        .map(|o| segment_with_depth(f, scenarios, &o, cfg, phi0s))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.energy.total_cmp(&b.energy).then_with(|| a.ordering.cmp(&b.ordering)));
    Ok(results)
}

pub fn rank_orderings(
    f: &MultiChannelField,
    scenarios: &ScenarioSet,
    n: usize,
    cfg: &SolverConfig,
    phi0s: &[ScalarField],
) -> Result<Vec<(Ordering, f64)>> {
    Ok(rank_orderings_full(f, scenarios, n, cfg, phi0s)?
        .into_iter()
        .map(|r| (r.ordering, r.energy))
        .collect())
}

/// One-dimensional Lloyd clustering seeded at evenly spaced levels between
/// the extreme samples. Returns the
/// cluster index of every sample and the cluster centers.
pub fn kmeans_1d(values: &[f64], k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < k {
        return Err(Error::DegenerateClustering(format!(
            "{} distinct levels for {k} clusters",
            sorted.len()
        )));
    }
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mut centers: Vec<f64> = (0..k)
        .map(|i| lo + (hi - lo) * (2 * i + 1) as f64 / (2 * k) as f64)
        .collect();
    let mut labels = vec![usize::MAX; values.len()];
    for _ in 0..200 {
        let mut changed = false;
        for (l, &v) in labels.iter_mut().zip(values) {
            let best = (0..k)
                .min_by(|&a, &b| (v - centers[a]).abs().total_cmp(&(v - centers[b]).abs()))
                .expect("k >= 1");
            if *l != best {
                *l = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&l, &v) in labels.iter().zip(values) {
            sums[l] += v;
            counts[l] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::DegenerateClustering("a cluster became empty".into()));
        }
        for c in 0..k {
            centers[c] = sums[c] / counts[c] as f64;
        }
        if !changed {
            break;
        }
    }
    Ok((labels, centers))
}

/// Initial object fields from a length-regularized hedged multiphase solve
/// seeded by intensity clustering. The most populous of the `n + 1`
/// clusters is the background; the others become objects `1..=n` by
/// descending mean intensity. Returned fields are binary.
///
/// The seed solve runs with `μ ≤ τ`: a wider screened-Poisson kernel lets
/// the clip step erode convex seeds before the data term can hold them.
pub fn init_multiphase(
    f: &MultiChannelField,
    scenarios: &ScenarioSet,
    n: usize,
    cfg: &SolverConfig,
) -> Result<Vec<ScalarField>> {
    if n == 0 {
        return Err(Error::param("objects", "needs at least one object"));
    }
    let intensity = f.channel_mean();
    let (labels, centers) = kmeans_1d(intensity.as_slice(), n + 1)?;
    let mut counts = vec![0usize; n + 1];
    for &l in &labels {
        counts[l] += 1;
    }
    let background = (0..=n).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).expect("n >= 1");
    let mut objects: Vec<usize> = (0..=n).filter(|&c| c != background).collect();
    objects.sort_by(|&a, &b| centers[b].total_cmp(&centers[a]));
    let (w, h) = f.dims();
    let seeds: Vec<ScalarField> = objects
        .iter()
        .map(|&c| {
            ScalarField::from_vec(w, h, labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect())
                .expect("dims")
        })
        .collect();
    let length_cfg = SolverConfig {
        alpha: 1.0,
        beta: 0.0,
        data_weight: 1.0,
        mu: cfg.mu.min(cfg.tau),
        ..cfg.clone()
    };
    let (layers, _, _) = DepthSolver::new(f, scenarios, &length_cfg, &seeds)?.run()?;
    Ok(layers
        .iter()
        .map(|l| ScalarField::from_mask(&threshold(l, cfg.eta)))
        .collect())
}
