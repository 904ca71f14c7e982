//! Relative residuals monitored by the progressive-hedging loops and the
//! stopping rule built on them.
//!
//! Every solver iteration produces a [`Snapshot`]; a [`ResidualRecord`] is
//! computed from the current snapshot, the previous one and the reference
//! snapshot of the first iteration (which normalizes the consensus gap
//! `R_tau` and the splitting gap `R_w`).

use std::io::{self, Write};

use crate::field::{ScalarField, VectorField};

/// Denominators below this value make the corresponding residual 0.
pub const DENOMINATOR_GUARD: f64 = 1e-12;

/// Borrowed per-scenario iterate of one object layer.
#[derive(Clone, Copy)]
pub struct LayerView<'a> {
    pub phi: &'a ScalarField,
    pub w: &'a VectorField,
    pub lambda: &'a VectorField,
    pub v: &'a ScalarField,
}

/// Reduced state of one outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// Σ_h Σ_i p_i ‖φ_{h,i} − φ̄_h‖₁
    pub tau_gap: f64,
    /// Σ_h Σ_i p_i ‖w_{h,i} − ∇φ_{h,i}‖₁
    pub w_gap: f64,
    pub aggregates: Vec<ScalarField>,
    pub v_bar: Vec<ScalarField>,
    pub lambda_bar: Vec<VectorField>,
    pub energy: f64,
}

fn weighted_sum<'a>(probs: &[f64], fields: impl Iterator<Item = &'a ScalarField>) -> ScalarField {
    let mut acc: Option<ScalarField> = None;
    for (p, f) in probs.iter().zip(fields) {
        match acc.as_mut() {
            None => acc = Some(f.map(|v| p * v)),
            Some(a) => a
                .as_mut_slice()
                .iter_mut()
                .zip(f.as_slice())
                .for_each(|(a, v)| *a += p * v),
        }
    }
    acc.expect("at least one scenario")
}

impl Snapshot {
    /// `layers[h][i]` is object `h` under scenario `i`; `aggregates[h]` the
    /// consensus field of object `h`.
    pub fn capture(
        probs: &[f64],
        layers: &[Vec<LayerView<'_>>],
        aggregates: &[ScalarField],
        energy: f64,
    ) -> Self {
        let mut tau_gap = 0.0;
        let mut w_gap = 0.0;
        let mut v_bar = Vec::with_capacity(layers.len());
        let mut lambda_bar = Vec::with_capacity(layers.len());
        for (scen, agg) in layers.iter().zip(aggregates) {
            for (p, l) in probs.iter().zip(scen) {
                tau_gap += p * l.phi.l1_distance(agg);
                w_gap += p * l.w.l1_distance(&crate::grid::gradient(l.phi));
            }
            v_bar.push(weighted_sum(probs, scen.iter().map(|l| l.v)));
            lambda_bar.push(VectorField {
                x: weighted_sum(probs, scen.iter().map(|l| &l.lambda.x)),
                y: weighted_sum(probs, scen.iter().map(|l| &l.lambda.y)),
            });
        }
        Self {
            tau_gap,
            w_gap,
            aggregates: aggregates.to_vec(),
            v_bar,
            lambda_bar,
            energy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualRecord {
    pub iteration: usize,
    pub r_tau: f64,
    pub r_v: f64,
    pub r_phi: f64,
    pub r_e: f64,
    pub r_w: f64,
    pub r_lambda: f64,
    pub energy: f64,
}

/// Tolerances of the gated residuals. `R_v` and `R_lambda` are not gated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub tau: f64,
    pub phi: f64,
    pub w: f64,
    pub energy: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            phi: 1e-3,
            w: 1e-3,
            energy: 1e-5,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den.abs() < DENOMINATOR_GUARD {
        0.0
    } else {
        num / den
    }
}

fn rel_change(cur: &[ScalarField], prev: &[ScalarField]) -> f64 {
    let num: f64 = cur.iter().zip(prev).map(|(a, b)| a.l1_distance(b)).sum();
    let den: f64 = prev.iter().map(|b| b.l1_norm()).sum();
    ratio(num, den)
}

pub fn residuals(
    iteration: usize,
    current: &Snapshot,
    previous: &Snapshot,
    reference: &Snapshot,
) -> ResidualRecord {
    let lam_num: f64 = current
        .lambda_bar
        .iter()
        .zip(&previous.lambda_bar)
        .map(|(a, b)| a.l1_distance(b))
        .sum();
    let lam_den: f64 = previous.lambda_bar.iter().map(|b| b.l1_norm()).sum();
    ResidualRecord {
        iteration,
        r_tau: ratio(current.tau_gap, reference.tau_gap),
        r_v: rel_change(&current.v_bar, &previous.v_bar),
        r_phi: rel_change(&current.aggregates, &previous.aggregates),
        r_e: ratio((current.energy - previous.energy).abs(), previous.energy.abs()),
        r_w: ratio(current.w_gap, reference.w_gap),
        r_lambda: ratio(lam_num, lam_den),
        energy: current.energy,
    }
}

/// True when every gated residual is strictly below its tolerance.
pub fn should_stop(record: &ResidualRecord, tol: &Tolerances) -> bool {
    record.r_tau < tol.tau && record.r_phi < tol.phi && record.r_w < tol.w && record.r_e < tol.energy
}

pub const CSV_HEADER: &str = "iter,R_tau,R_v,R_phi,R_e,R_w,R_lambda,energy";

/// Writes the diagnostics table, one row per outer iteration.
pub fn write_csv(records: &[ResidualRecord], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            r.iteration, r.r_tau, r.r_v, r.r_phi, r.r_e, r.r_w, r.r_lambda, r.energy
        )?;
    }
    Ok(())
}
