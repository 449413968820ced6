use serde::Serialize;
use spinglass_core::cascades::{
    cascade_for, cascade_log_partition, overlap_law_mc, psi_via_cascade, HierGaussianSpec,
};
use spinglass_core::free_energy_mc::{estimate_f, estimate_f_sth, FreeEnergyEstimate, ModelInstance};
use spinglass_core::measures::cdf_stieltjes;
use spinglass_core::parisi_pde::{parisi_value, psi, psi_capital};
use spinglass_core::stats::McEstimate;
use spinglass_core::variational::{
    classical_parisi_value, hj_check, hopf_lax_field, hopf_lax_value, theorem2_grid, theorem2_value,
    VariationalResult,
};
use spinglass_core::DiscreteMeasure;
use thiserror::Error;

use crate::config::{ConfigError, Model};
use crate::output::{num, Output};

/// Largest |Hopf-Lax − classical| reported as agreement by `compare`.
const AGREEMENT_TOL: f64 = 2e-3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Model(#[from] spinglass_core::Error),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use spinglass_core::Error as E;
        match self {
            CliError::Model(E::Numerical { .. } | E::ErrorBoundExceeded { .. }) => 2,
            _ => 1,
        }
    }
}

/// A command's output and the names of searches that did not converge.
pub struct Run {
    pub output: Output,
    pub unconverged: Vec<String>,
}

impl Run {
    fn done(output: Output) -> Self {
        Self {
            output,
            unconverged: Vec::new(),
        }
    }
}

fn note(unconverged: &mut Vec<String>, name: &str, r: &VariationalResult) {
    if !r.diagnostics.converged {
        unconverged.push(name.to_string());
    }
}

fn require(model: &Model, ok: bool, field: &str, message: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(model.invalid(field, message).into())
    }
}

#[derive(Serialize)]
struct ParisiEval<'a> {
    value: f64,
    err_estimate: f64,
    lambda: f64,
    nu: &'a DiscreteMeasure,
}

pub fn parisi_eval(model: &Model) -> Result<Run, CliError> {
    let raw = &model.raw;
    let v = parisi_value(&model.nu, raw.lambda, &model.base, &raw.solver)?;
    let result = ParisiEval {
        value: v.value,
        err_estimate: v.err_estimate,
        lambda: raw.lambda,
        nu: &model.nu,
    };
    Ok(Run::done(Output::json("parisi-eval", model, result)))
}

fn mc_row(name: String, est: McEstimate, target: f64) -> Vec<String> {
    let z = (est.mean - target) / est.stderr;
    vec![
        name,
        num(Some(est.mean)),
        num(Some(est.stderr)),
        num(Some(target)),
        num(z.is_finite().then_some(z)),
    ]
}

pub fn cascade_check(model: &Model) -> Result<Run, CliError> {
    let raw = &model.raw;
    let mc = &raw.monte_carlo;
    let (mu, xi) = (&model.mu, &model.xi);
    let sampler = model.cascade_sampler();
    let (zetas, _) = cascade_for(mu)?;
    let mut rows = Vec::new();

    if !zetas.is_empty() {
        let law = overlap_law_mc(&zetas, mc.branching, sampler, mc.cascade_samples, raw.seed)?;
        let mut edges = vec![0.0];
        edges.extend(&zetas);
        edges.push(1.0);
        for (l, est) in law.into_iter().enumerate() {
            rows.push(mc_row(format!("overlap_level_{l}"), est, edges[l + 1] - edges[l]));
        }
    }

    let theta = |q: f64| q * xi.xi_prime(q) - xi.xi(q);
    let spec = HierGaussianSpec::new(&mu.atoms().iter().map(|&q| theta(q)).collect::<Vec<_>>())?;
    let est = cascade_log_partition(
        &zetas,
        &spec,
        mc.branching,
        sampler,
        mc.cascade_samples,
        raw.seed.wrapping_add(1),
    )?;
    rows.push(mc_row(
        "log_partition_theta".into(),
        est,
        0.5 * cdf_stieltjes(mu, theta, mu.top()),
    ));

    let exact = psi(mu, &model.base, &raw.solver)?.value;
    let est = psi_via_cascade(
        mu,
        &model.base,
        mc.branching,
        sampler,
        mc.cascade_samples,
        raw.seed.wrapping_add(2),
    )?;
    rows.push(mc_row("psi".into(), est, exact));

    let header = ["check", "estimate", "stderr", "target", "z"];
    Ok(Run::done(Output::csv("cascade-check", model, &header, &rows)))
}

fn instance(model: &Model, n: usize) -> Result<ModelInstance, CliError> {
    let raw = &model.raw;
    Ok(ModelInstance::with_sampler(
        n,
        model.xi.clone(),
        model.base.clone(),
        model.mu.clone(),
        raw.t,
        model.disorder_sampler(),
    )?
    .with_sh(raw.s, raw.h)?)
}

/// The large-N value the estimator should approach, where one is available.
fn fe_target(model: &Model, unconverged: &mut Vec<String>) -> Result<Option<f64>, CliError> {
    let raw = &model.raw;
    let opt = &raw.optimizer;
    if raw.t == 0.0 {
        if raw.s > 0.0 {
            return Ok(None);
        }
        return Ok(Some(
            psi_capital(&model.mu, raw.h, &model.base, &raw.solver)?.value,
        ));
    }
    let r = if raw.s > 0.0 {
        theorem2_value(&model.xi, &model.mu, raw.s, raw.t, raw.h, &model.base, opt)?
    } else {
        // exp(h|σ|²) is absorbed into the single-spin law.
        let (tilted, log_norm) = model.base.tilted(raw.h);
        let mut r = hopf_lax_value(&model.xi, &model.mu, raw.t, &tilted, opt)?;
        r.value += log_norm;
        r
    };
    note(unconverged, "target value", &r);
    Ok(Some(r.value))
}

fn estimate(model: &Model, n: usize) -> Result<FreeEnergyEstimate, CliError> {
    let inst = instance(model, n)?;
    let mc = model.mc_config();
    if model.raw.s == 0.0 && model.raw.h == 0.0 {
        Ok(estimate_f(&inst, &mc)?)
    } else {
        Ok(estimate_f_sth(&inst, &mc)?)
    }
}

pub fn fe_mc(model: &Model) -> Result<Run, CliError> {
    let mut unconverged = Vec::new();
    let target = fe_target(model, &mut unconverged)?;
    let mut rows = Vec::new();
    for &n in &model.raw.monte_carlo.n {
        let est = estimate(model, n)?;
        rows.push(vec![
            n.to_string(),
            num(Some(est.mean)),
            num(Some(est.stderr)),
            num(target),
        ]);
    }
    let header = ["N", "mean", "stderr", "target_value"];
    Ok(Run {
        output: Output::csv("fe-mc", model, &header, &rows),
        unconverged,
    })
}

pub fn hopf_lax(model: &Model) -> Result<Run, CliError> {
    let raw = &model.raw;
    require(model, raw.t > 0.0, "t", "the Hopf-Lax formula needs t > 0")?;
    let r = if raw.h == 0.0 {
        hopf_lax_value(&model.xi, &model.mu, raw.t, &model.base, &raw.optimizer)?
    } else {
        hopf_lax_field(&model.xi, &model.mu, raw.t, raw.h, &model.base, &raw.optimizer)?
    };
    let mut unconverged = Vec::new();
    note(&mut unconverged, "hopf-lax", &r);
    Ok(Run {
        output: Output::json("hopf-lax", model, r),
        unconverged,
    })
}

fn require_unit_time(model: &Model) -> Result<(), CliError> {
    require(
        model,
        model.raw.t == 1.0,
        "t",
        "the classical formula is evaluated at t = 1",
    )
}

pub fn parisi_classical(model: &Model) -> Result<Run, CliError> {
    require_unit_time(model)?;
    let r = classical_parisi_value(&model.xi, &model.mu, &model.base, &model.raw.optimizer)?;
    let mut unconverged = Vec::new();
    note(&mut unconverged, "parisi-classical", &r);
    Ok(Run {
        output: Output::json("parisi-classical", model, r),
        unconverged,
    })
}

pub fn theorem2(model: &Model) -> Result<Run, CliError> {
    let raw = &model.raw;
    require(model, raw.s > 0.0 && raw.t > 0.0, "s", "needs s > 0 and t > 0")?;
    let r = theorem2_value(
        &model.xi,
        &model.mu,
        raw.s,
        raw.t,
        raw.h,
        &model.base,
        &raw.optimizer,
    )?;
    let mut unconverged = Vec::new();
    note(&mut unconverged, "theorem2", &r);
    Ok(Run {
        output: Output::json("theorem2", model, r),
        unconverged,
    })
}

pub fn hj_grid(model: &Model) -> Result<Run, CliError> {
    let raw = &model.raw;
    let Some(grid) = &raw.grid else {
        return Err(model
            .invalid("grid", "hj-grid needs a \"grid\" section with s and h axes")
            .into());
    };
    require(model, raw.t > 0.0, "t", "needs t > 0")?;
    let (s_values, h_values) = (grid.s.values(), grid.h.values());
    let f = theorem2_grid(
        &model.xi,
        &model.mu,
        raw.t,
        &s_values,
        &h_values,
        &model.base,
        &raw.optimizer,
    )?;
    let tol = grid.tol.unwrap_or(5.0 * grid.s.step.max(grid.h.step));
    let check = hj_check(&s_values, &h_values, &f, &model.xi, tol)?;
    let inner = h_values.len() - 2;
    let mut rows = Vec::new();
    for (i, &s) in s_values.iter().enumerate() {
        for (j, &h) in h_values.iter().enumerate() {
            let interior = i > 0 && i + 1 < s_values.len() && j > 0 && j + 1 < h_values.len();
            let residual = interior.then(|| check.residuals[(i - 1) * inner + (j - 1)].2);
            let flagged = residual.map_or(String::new(), |r| (r.abs() > tol).to_string());
            rows.push(vec![
                num(Some(s)),
                num(Some(h)),
                num(Some(f[i][j])),
                num(residual),
                flagged,
            ]);
        }
    }
    let header = ["s", "h", "f", "residual", "flagged"];
    Ok(Run::done(Output::csv("hj-grid", model, &header, &rows)))
}

pub fn compare(model: &Model) -> Result<Run, CliError> {
    let raw = &model.raw;
    require_unit_time(model)?;
    require(
        model,
        raw.s == 0.0 && raw.h == 0.0,
        "s",
        "compare runs at s = h = 0",
    )?;
    let hl = hopf_lax_value(&model.xi, &model.mu, raw.t, &model.base, &raw.optimizer)?;
    let cl = classical_parisi_value(&model.xi, &model.mu, &model.base, &raw.optimizer)?;
    let mut unconverged = Vec::new();
    note(&mut unconverged, "hopf-lax", &hl);
    note(&mut unconverged, "parisi-classical", &cl);
    let gap = (hl.value - cl.value).abs();
    let mut rows = Vec::new();
    for &n in &raw.monte_carlo.n {
        let est = estimate(model, n)?;
        rows.push(vec![
            n.to_string(),
            num(Some(est.mean)),
            num(Some(est.stderr)),
            num(Some(hl.value)),
            num(Some(cl.value)),
            num(Some(gap)),
            (gap <= AGREEMENT_TOL).to_string(),
            num(Some((est.mean - hl.value).abs())),
        ]);
    }
    let header = [
        "N",
        "fe_mean",
        "fe_stderr",
        "hopf_lax",
        "classical",
        "formula_gap",
        "formulas_agree",
        "fe_gap",
    ];
    Ok(Run {
        output: Output::csv("compare", model, &header, &rows),
        unconverged,
    })
}
