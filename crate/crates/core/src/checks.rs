//! Fast invariant suite: tensor symmetry, exact mass balance and
//! nonnegativity on one micro and one macro run.

use serde::Serialize;

use crate::cell_problem::homogenize;
use crate::config::RunConfig;
use crate::error::Result;
use crate::geometry::build_unit_cell;
use crate::timestep::NEGATIVITY_TOL;

/// Relative per-step mass-balance tolerance.
pub const BALANCE_TOL: f64 = 1e-12;
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
    pub passed: bool,
}

impl CheckReport {
    fn push_le(&mut self, name: &str, value: f64, bound: f64) {
        self.add(name, value, bound, value <= bound);
    }

    fn push_ge(&mut self, name: &str, value: f64, bound: f64) {
        self.add(name, value, bound, value >= bound);
    }

    fn add(&mut self, name: &str, value: f64, bound: f64, passed: bool) {
        self.items.push(CheckItem {
            name: name.to_string(),
            value,
            bound,
            passed,
        });
        self.passed &= passed;
    }
}

/// Runs the suite on the largest ε of the configuration.
pub fn run_checks(cfg: &RunConfig) -> Result<CheckReport> {
    let mut report = CheckReport {
        items: Vec::new(),
        passed: true,
    };
    let g = &cfg.geometry;
    let tensor = homogenize(&build_unit_cell(g.d, g.hole_radius.0, g.m)?)?;
    let mut asym: f64 = 0.0;
    for i in 0..g.d {
        for j in 0..g.d {
            asym = asym.max((tensor.get(i, j) - tensor.get(j, i)).abs());
        }
    }
    report.push_le("D symmetry |D_ij - D_ji|", asym, SYMMETRY_TOL);
    report.push_ge("D min eigenvalue", tensor.min_eigenvalue(), f64::MIN_POSITIVE);

    let mut study = cfg.study();
    study.epsilons.truncate(1);
    let cell = study.cell_solution()?;
    let micro = study.run_micro(study.epsilons[0], &cell)?;
    report.push_le("micro mass balance (relative)", micro.record.max_balance_residual(), BALANCE_TOL);
    report.push_ge("micro min concentration", micro.record.min_value(), NEGATIVITY_TOL);
    let mac = study.run_macro(&cell)?;
    report.push_le("macro mass balance (relative)", mac.record.max_balance_residual(), BALANCE_TOL);
    report.push_ge("macro min concentration", mac.record.min_value(), NEGATIVITY_TOL);
    Ok(report)
}
