use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use perfhom::cell_problem::{homogenize, refinement_table, richardson};
use perfhom::checks::run_checks;
use perfhom::config::{parse_config, IcMode, RunConfig};
use perfhom::geometry::{build_unit_cell, PerforatedGrid};
use perfhom::harness::{run_study, FieldSnapshot};
use perfhom::initial_data::{assemble_well_prepared, two_scale_limit_check, verify_compatibility, AnnulusBasis};
use perfhom::io::{snapshot_meta, OutputDir};
use perfhom::numerics::Shape;
use perfhom::{Error, Result};

/// Reaction–diffusion on periodically perforated domains and its homogenized limit.
#[derive(Parser)]
#[command(name = "perfhom", version)]
struct Cli {
    /// Run configuration (sectioned TOML).
    #[arg(long, short, global = true, default_value = "perfhom.toml")]
    config: PathBuf,
    /// Worker threads; 1 keeps outputs bitwise reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory (overrides `run.output`).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Effective tensor and its resolution study.
    Cell,
    /// Micro runs at every configured ε.
    Micro,
    /// Homogenized run.
    Macro,
    /// Well-prepared initial data and compatibility reports.
    PrepareIc,
    /// Full ε-study against the homogenized model.
    Converge,
    /// Fast invariant suite; nonzero exit on failure.
    Check,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    let cfg = parse_config(&cli.config)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| Error::config("--threads", e.to_string()))?;
    let root = cli.output.clone().unwrap_or_else(|| cfg.run.output.clone());
    let out = OutputDir::create(root, &cfg.to_toml())?;
    match cli.command {
        Command::Cell => cell(&cfg, &out),
        Command::Micro => micro(&cfg, &out),
        Command::Macro => macro_run(&cfg, &out),
        Command::PrepareIc => prepare_ic(&cfg, &out),
        Command::Converge => converge(&cfg, &out),
        Command::Check => check(&cfg, &out),
    }
}

fn eps_tag(eps: f64) -> String {
    format!("eps{}", (1.0 / eps).round() as u64)
}

fn write_snapshots(out: &OutputDir, prefix: &str, eps: Option<f64>, h: f64, shape: &Shape, snaps: &[FieldSnapshot]) -> Result<()> {
    for (k, s) in snaps.iter().enumerate() {
        out.write_snapshot(&format!("{prefix}_snap{k:04}"), &snapshot_meta(s.t, eps, h, shape), &s.a)?;
    }
    Ok(())
}

fn cell(cfg: &RunConfig, out: &OutputDir) -> Result<u8> {
    let g = &cfg.geometry;
    let tensor = homogenize(&build_unit_cell(g.d, g.hole_radius.0, g.m)?)?;
    out.write_json("tensor.json", &tensor)?;
    let resolutions = [g.m / 4, g.m / 2, g.m];
    let rows = refinement_table(g.d, g.hole_radius.0, &resolutions)?;
    let mut csv = String::from("m,D11,D12,formula_gap\n");
    for r in &rows {
        csv.push_str(&format!("{},{:.12e},{:.12e},{:.6e}\n", r.m, r.d11, r.d12, r.formula_gap));
    }
    let (extrapolated, order) = richardson(rows[0].d11, rows[1].d11, rows[2].d11);
    csv.push_str(&format!("richardson,{extrapolated:.12e},,{order:.4}\n"));
    out.write_text("refinement.csv", &csv)?;
    println!("theta = {:.9}  D = {:?}  formula gap = {:.3e}", tensor.theta, tensor.d, tensor.formula_gap);
    Ok(0)
}

fn micro(cfg: &RunConfig, out: &OutputDir) -> Result<u8> {
    let study = cfg.study();
    let cell = study.cell_solution()?;
    for &eps in &study.epsilons {
        let run = study.run_micro(eps, &cell)?;
        let tag = eps_tag(eps);
        out.write_text(&format!("micro_{tag}.csv"), &run.record.to_csv())?;
        write_snapshots(out, &format!("micro_{tag}"), Some(eps), run.grid.h(), &run.grid.shape, &run.snapshots)?;
        println!(
            "eps = {eps}: max balance residual {:.2e}, min a {:.6}",
            run.record.max_balance_residual(),
            run.record.min_value()
        );
    }
    Ok(0)
}

fn macro_run(cfg: &RunConfig, out: &OutputDir) -> Result<u8> {
    let study = cfg.study();
    let cell = study.cell_solution()?;
    out.write_json("model.json", &study.model(&cell))?;
    let run = study.run_macro(&cell)?;
    out.write_text("macro.csv", &run.record.to_csv())?;
    write_snapshots(out, "macro", None, run.grid.h, &run.grid.shape, &run.snapshots)?;
    println!("max balance residual {:.2e}, min a {:.6}", run.record.max_balance_residual(), run.record.min_value());
    Ok(0)
}

fn prepare_ic(cfg: &RunConfig, out: &OutputDir) -> Result<u8> {
    let study = cfg.study();
    let cell = study.cell_solution()?;
    if cfg.ic.mode == IcMode::Constant {
        for &eps in &study.epsilons {
            let grid = PerforatedGrid::new(cfg.grid_spec(eps))?;
            let fields = cfg.ic.values.map(|v| grid.fluid_mask.iter().map(|&f| if f { v.0 } else { 0.0 }).collect());
            out.write_snapshot(&format!("ic_{}", eps_tag(eps)), &snapshot_meta(0.0, Some(eps), grid.h(), &grid.shape), &fields)?;
        }
        return Ok(0);
    }
    let basis = AnnulusBasis::new(cfg.ic.n_rho, cfg.ic.n_phi)?;
    let mut grids = Vec::new();
    let mut ics = Vec::new();
    // the compatibility report is informational; only a non-positive field fails
    let mut all_passed = true;
    for &eps in &study.epsilons {
        let grid = PerforatedGrid::new(cfg.grid_spec(eps))?;
        let ic = assemble_well_prepared(&cfg.profiles(), &grid, &cell.cell, &basis, true)?;
        let tag = eps_tag(eps);
        out.write_snapshot(&format!("ic_{tag}"), &snapshot_meta(0.0, Some(eps), grid.h(), &grid.shape), &ic.fields)?;
        let compat = verify_compatibility(&ic, &grid, cfg.ic.compat_constant.0);
        let diag = ic.diagnostics(&grid);
        all_passed &= diag.min_value > 0.0;
        out.write_json(&format!("compatibility_{tag}.json"), &json!({ "compatibility": compat, "diagnostics": diag }))?;
        println!(
            "eps = {eps}: compatibility residual {:.3e} ({} bound {:.3e}), min {:.6}",
            compat.gamma_residual.max(compat.outer_residual),
            if compat.passed { "within" } else { "above" },
            compat.constant * compat.h,
            diag.min_value
        );
        grids.push(grid);
        ics.push(ic);
    }
    let pairs: Vec<_> = ics.iter().zip(&grids).collect();
    out.write_json("two_scale_ic.json", &two_scale_limit_check(&pairs, &study.tests))?;
    Ok(if all_passed { 0 } else { 4 })
}

fn converge(cfg: &RunConfig, out: &OutputDir) -> Result<u8> {
    let result = run_study(&cfg.study())?;
    let report = &result.report;
    out.write_text("convergence.csv", &report.to_csv())?;
    if let Some(l) = &report.ladder {
        out.write_text("ladder.csv", &l.to_csv())?;
    }
    out.write_json("report.json", report)?;
    let summary = report.summary();
    out.write_json("summary.json", &summary)?;
    for (eps, rec) in &result.micro_records {
        out.write_text(&format!("micro_{}.csv", eps_tag(*eps)), &rec.to_csv())?;
    }
    out.write_text("macro.csv", &result.macro_record.to_csv())?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(if summary.passed { 0 } else { 4 })
}

fn check(cfg: &RunConfig, out: &OutputDir) -> Result<u8> {
    let report = run_checks(cfg)?;
    for item in &report.items {
        println!(
            "{} {:<34} {:>12.4e}  (bound {:.1e})",
            if item.passed { "PASS" } else { "FAIL" },
            item.name,
            item.value,
            item.bound
        );
    }
    out.write_json("check.json", &report)?;
    Ok(if report.passed { 0 } else { 4 })
}
