use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use rpareto::fit::{FitResult, GodambeEstimate, StartOutcome};
use rpareto::mvn_qmc::QmcConfig;
use rpareto::objectives::{ExceedanceSet, Objective};
use rpareto::risk::RiskFunctional;
use rpareto::variogram::VariogramParams;

use crate::FitArgs;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Theta {
    pub kappa: f64,
    pub tau: f64,
    pub eta: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QmcReport {
    pub p: usize,
    pub p_prime: usize,
    pub p_bar: usize,
}

/// JSON document written by `fit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub objective: String,
    pub risk: String,
    pub quantile: f64,
    pub n_events: usize,
    pub threshold: f64,
    pub theta_hat: Option<Theta>,
    pub half_factor: bool,
    pub objective_value: Option<f64>,
    pub se: Option<BTreeMap<String, f64>>,
    pub se_method: Option<String>,
    pub godambe: Option<GodambeEstimate>,
    pub converged: bool,
    pub runtime_seconds: f64,
    pub seed: u64,
    pub qmc: Option<QmcReport>,
    pub starts: Vec<StartOutcome>,
    pub notes: Vec<String>,
}

impl FitReport {
    pub fn new(
        args: &FitArgs,
        objective: &Objective,
        risk: &RiskFunctional,
        exc: &ExceedanceSet,
        qmc: QmcConfig,
    ) -> Self {
        Self {
            objective: objective.to_string(),
            risk: risk.to_string(),
            quantile: args.quantile,
            n_events: exc.len(),
            threshold: exc.u.first().copied().unwrap_or(f64::NAN),
            theta_hat: None,
            half_factor: !args.no_half_factor,
            objective_value: None,
            se: None,
            se_method: None,
            godambe: None,
            converged: false,
            runtime_seconds: 0.0,
            seed: args.seed,
            qmc: objective.is_censored().then_some(QmcReport {
                p: qmc.p,
                p_prime: qmc.p_prime,
                p_bar: args.pbar.max(1),
            }),
            starts: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn fail(&mut self, message: &str, starts: Vec<StartOutcome>, runtime: f64) {
        self.converged = false;
        self.starts = starts;
        self.runtime_seconds = runtime;
        self.notes.push(message.to_string());
    }

    pub fn finish(&mut self, fit: &FitResult, runtime: f64) {
        let t = fit.theta_hat;
        self.theta_hat = Some(Theta {
            kappa: t.kappa,
            tau: t.tau,
            eta: t.eta,
            a: t.a,
        });
        self.half_factor = t.half_factor;
        self.objective_value = Some(fit.objective_value);
        self.se = fit
            .se
            .as_ref()
            .map(|se| fit.params.iter().cloned().zip(se.iter().copied()).collect());
        self.godambe = fit.godambe.clone();
        self.converged = fit.converged;
        self.starts = fit.starts.clone();
        self.runtime_seconds = runtime;
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Fitted parameters from a report written by `fit`.
pub fn read_params(path: &Path) -> anyhow::Result<VariogramParams> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report: FitReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let t = report
        .theta_hat
        .ok_or_else(|| anyhow!("{} has no parameter estimate", path.display()))?;
    let p = VariogramParams::isotropic(t.kappa, t.tau)
        .with_anisotropy(t.eta, t.a)
        .with_half_factor(report.half_factor);
    p.validate()?;
    Ok(p)
}
