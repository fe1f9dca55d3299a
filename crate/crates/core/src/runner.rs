//! Commands behind the `cavlab` binary. Each command reads a scenario, checks
//! its hypotheses, runs, and writes `report.txt`, `summary.txt` and data files
//! into an output directory.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::forward::{write_pgm, write_snapshot_csv, Stepper};
use crate::geometry::{hausdorff_distance, rasterize, NodeClassification, Region};
use crate::inverse::{compare, reconstruct, Arm, Design, Distinguishability, InverseProblemSpec, Verdict};
use crate::observe::{add_noise, ObservationKind};
use crate::operators::{assemble, bump_bank, commutator_norm};
use crate::scenario::{parse_value, set_path, Expectation, Scenario};
use crate::sources::{validate_boundary_design, validate_hypotheses, HypothesisContext, HypothesisReport, Source};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NONCOMPLIANT: i32 = 2;

/// Commutator norm below which two operators count as commuting.
pub const COMMUTATOR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Forward,
    Observe,
    Counterexample,
    Distinguish,
    Q2,
    Reconstruct,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Observe => "observe",
            Command::Counterexample => "counterexample",
            Command::Distinguish => "distinguish",
            Command::Q2 => "q2",
            Command::Reconstruct => "reconstruct",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    /// Overrides the grid spacing.
    pub h: Option<f64>,
    pub validate_only: bool,
    pub exec: Execution,
    /// Sweep axis and values; default to the scenario's `[sweep]` section.
    pub axis: Option<String>,
    pub values: Option<Vec<f64>>,
}

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: Summary,
    pub report: HypothesisReport,
}

/// Runs `cmd` on the scenario given as TOML text.
pub fn run(cmd: Command, text: &str, opts: &RunOptions) -> Result<Outcome> {
    let mut raw = parse_value(text)?;
    if let Some(h) = opts.h {
        set_path(&mut raw, "grid.h", h)?;
    }
    let scenario = Scenario::from_value(raw.clone())?;
    let seed = opts.seed.unwrap_or(scenario.seed);
    std::fs::create_dir_all(&opts.out)?;

    let (report, operator_lines) = check_hypotheses(&scenario, cmd)?;
    write_report(&opts.out.join("report.txt"), &operator_lines, &report)?;

    let mut summary = Summary::default();
    summary.push("command", cmd.name());
    summary.push("scenario", &scenario.name);
    summary.push("seed", seed);
    summary.push("h", scenario.grid.h);
    summary.push("hypotheses", if report.all_passed() { "PASS" } else { "FAIL" });

    let require = scenario.experiment.as_ref().is_some_and(|e| e.require_compliance);
    if require && !report.all_passed() {
        summary.push("result", "NONCOMPLIANT");
        summary.write(&opts.out.join("summary.txt"))?;
        return Ok(Outcome { exit_code: EXIT_NONCOMPLIANT, summary, report });
    }
    if opts.validate_only {
        summary.push("result", "VALIDATED");
        summary.write(&opts.out.join("summary.txt"))?;
        return Ok(Outcome { exit_code: EXIT_OK, summary, report });
    }

    match cmd {
        Command::Forward => forward(&scenario, opts, &mut summary)?,
        Command::Observe => observe(&scenario, seed, opts, &mut summary)?,
        Command::Counterexample => counterexample(&scenario, opts, &mut summary)?,
        Command::Distinguish => distinguish(&scenario, opts, &mut summary)?,
        Command::Q2 => q2(&scenario, seed, opts, &mut summary)?,
        Command::Reconstruct => reconstruction(&scenario, seed, opts, &mut summary)?,
        Command::Sweep => sweep(&scenario, &raw, opts, &mut summary)?,
    }
    summary.write(&opts.out.join("summary.txt"))?;
    Ok(Outcome { exit_code: EXIT_OK, summary, report })
}

/// Operator checks (hard errors), region checks (hard errors) and the
/// itemized source report.
fn check_hypotheses(s: &Scenario, cmd: Command) -> Result<(HypothesisReport, Vec<String>)> {
    let grid = s.grid()?;
    let e = s.experiment()?;
    let mut names = vec![e.operator.clone()];
    if cmd == Command::Q2 {
        let second = e
            .operator2
            .clone()
            .ok_or_else(|| Error::MissingReference("experiment.operator2: required by the q2 command".into()))?;
        names.push(second);
    }
    let mut lines = Vec::new();
    for name in &names {
        let r = s.operator("experiment.operator", name)?.check(&grid);
        lines.push(format!(
            "operator {name}: alpha={} min_rayleigh={:.6e} c0={} min_c={:.6e} peclet={:.4e}",
            r.alpha, r.min_rayleigh, r.c0, r.min_c, r.peclet
        ));
        r.ensure()?;
    }

    let design = s.design()?;
    let mut cavities = design.candidates.clone();
    if cmd == Command::Reconstruct {
        cavities.push(s.shape("inverse.truth", &s.inverse()?.truth)?.clone());
    }
    let classes = cavities.iter().map(|c| rasterize(c, &grid)).collect::<Result<Vec<_>>>()?;

    let exclusion = e
        .exclusion
        .iter()
        .map(|n| s.region("experiment.exclusion", n).cloned())
        .collect::<Result<Vec<Region>>>()?;
    design.region.check_disjoint(&cavities)?;
    match (design.kind, &design.region) {
        (ObservationKind::ConormalOnGamma, Region::Subboundary { .. }) => {}
        (ObservationKind::InteriorOnOmega, Region::InteriorPatch { .. }) => {}
        _ => {
            return Err(Error::RegionKindMismatch(format!(
                "region '{}' does not fit the observation kind",
                e.region
            )))
        }
    }

    let d = assemble(s.operator("experiment.operator", &e.operator)?, &classes[0])?;
    let omega = (design.kind == ObservationKind::InteriorOnOmega).then_some(&design.region);
    let ctx = HypothesisContext {
        grid: &grid,
        t_final: s.time.t_final,
        cavities: &cavities,
        exclusion: &exclusion,
        omega,
        op: Some(&d),
    };
    let mut report = validate_hypotheses(&s.source, &ctx);
    if let Some(g) = &s.boundary {
        if g.collar.is_some() {
            validate_boundary_design(g, &grid, &cavities, &mut report);
        }
    }
    Ok((report, lines))
}

fn write_report(path: &Path, operators: &[String], report: &HypothesisReport) -> Result<()> {
    let mut text = String::new();
    for l in operators {
        text.push_str(l);
        text.push('\n');
    }
    for c in &report.clauses {
        let status = if c.passed { "PASS" } else { "FAIL" };
        text.push_str(&format!("{}: {status} ({})\n", c.name, c.detail));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn first_arm(s: &Scenario) -> Result<Arm> {
    let e = s.experiment()?;
    Ok(Arm {
        shape: Some(s.shape("experiment.d1", &e.d1)?.clone()),
        op: s.operator("experiment.operator", &e.operator)?.clone(),
        u0: s.initial.u0.clone(),
    })
}

fn second_arm(s: &Scenario) -> Result<Arm> {
    let e = s.experiment()?;
    Ok(Arm {
        shape: Some(s.shape("experiment.d2", &e.d2)?.clone()),
        op: s.operator("experiment.operator", &e.operator)?.clone(),
        u0: s.initial.u0_alt.clone().unwrap_or_else(|| s.initial.u0.clone()),
    })
}

fn classify(arm: &Arm, design: &Design) -> Result<NodeClassification> {
    match &arm.shape {
        Some(c) => rasterize(c, &design.grid),
        None => Ok(NodeClassification::without_cavity(&design.grid)),
    }
}

fn forward(s: &Scenario, opts: &RunOptions, summary: &mut Summary) -> Result<()> {
    let design = s.design()?;
    let arm = first_arm(s)?;
    let cls = classify(&arm, &design)?;
    let u0 = design.initial(&cls, &arm.u0);
    let problem = design.problem(&cls, &arm.op, &u0)?;
    let field = Stepper::new(&problem, &design.time)?.run()?;
    let max_abs = field.snapshots.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if s.time.stride > 1 {
        for (n, u) in field.steps.iter().zip(&field.snapshots) {
            write_snapshot_csv(&opts.out.join(format!("u_{n:06}.csv")), &design.grid, u)?;
        }
    }
    write_snapshot_csv(&opts.out.join("u_final.csv"), &design.grid, field.last())?;
    write_pgm(&opts.out.join("u_final.pgm"), &design.grid, field.last())?;
    summary.push("steps", s.time.nt);
    summary.push("stored", field.steps.len());
    summary.push("max_abs", format!("{max_abs:e}"));
    summary.push("final_max_abs", format!("{:e}", field.last().iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    Ok(())
}

fn observe(s: &Scenario, seed: u64, opts: &RunOptions, summary: &mut Summary) -> Result<()> {
    let design = s.design()?;
    let clean = design.observe(&first_arm(s)?)?.obs;
    let level = s.inverse.as_ref().map_or(0.0, |i| i.noise);
    let obs = add_noise(&clean, level, seed)?;
    obs.write_csv(&opts.out.join("observation.csv"))?;
    summary.push("locations", obs.n_locations());
    summary.push("times", obs.n_times());
    summary.push("rms", format!("{:e}", clean.rms()));
    summary.push("noise", level);
    Ok(())
}

fn push_comparison(summary: &mut Summary, d: &Distinguishability) {
    summary.push("gap", format!("{:e}", d.gap));
    summary.push("floor", format!("{:e}", d.floor));
    summary.push("guard", format!("{:e}", d.guard));
    summary.push("ratio", format!("{:e}", d.ratio));
    summary.push("verdict", d.verdict.as_str());
}

fn expectation_met(expect: Expectation, verdict: Verdict) -> bool {
    match expect {
        Expectation::Distinguishable => verdict == Verdict::Distinguishable,
        Expectation::Indistinguishable => verdict == Verdict::Indistinguishable,
    }
}

fn push_result(summary: &mut Summary, expect: Option<Expectation>, ok: bool) {
    if let Some(e) = expect {
        summary.push("expect", match e {
            Expectation::Distinguishable => "DISTINGUISHABLE",
            Expectation::Indistinguishable => "INDISTINGUISHABLE",
        });
        summary.push("result", if ok { "PASS" } else { "FAIL" });
    }
}

fn write_pair(opts: &RunOptions, d: &Distinguishability) -> Result<()> {
    d.first.write_csv(&opts.out.join("observation_d1.csv"))?;
    d.second.write_csv(&opts.out.join("observation_d2.csv"))
}

fn counterexample(s: &Scenario, opts: &RunOptions, summary: &mut Summary) -> Result<()> {
    let e = s.experiment()?;
    let design = s.design()?;
    let d = compare(&design, &first_arm(s)?, &second_arm(s)?, opts.exec)?;
    write_pair(opts, &d)?;
    push_comparison(summary, &d);
    let expect = e.expect.unwrap_or(Expectation::Indistinguishable);
    let mut ok = expectation_met(expect, d.verdict);
    if let (Source::TimeAffine { f0 }, Some(tol)) = (&s.source, e.affine_tolerance) {
        let err = affine_deviation(s, &design, f0)?;
        summary.push("affine_error", format!("{err:e}"));
        summary.push("affine_tolerance", tol);
        ok &= err <= tol;
    }
    push_result(summary, Some(expect), ok);
    Ok(())
}

/// Largest relative deviation of the zero-data solution from `t f0` over the stored steps.
fn affine_deviation(s: &Scenario, design: &Design, f0: &crate::sources::Profile) -> Result<f64> {
    let arm = first_arm(s)?;
    let cls = classify(&arm, design)?;
    let zero = vec![0.0; design.grid.len()];
    let problem = design.problem(&cls, &arm.op, &zero)?;
    let f = f0.sample(&design.grid);
    let fmax = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    Stepper::new(&problem, &design.time)?.run_with(|_, t, u| {
        if t == 0.0 || fmax == 0.0 {
            return;
        }
        let dev = u.iter().zip(&f).fold(0.0f64, |m, (a, b)| m.max((a - t * b).abs()));
        worst = worst.max(dev / (t * fmax));
    })?;
    Ok(worst)
}

fn distinguish(s: &Scenario, opts: &RunOptions, summary: &mut Summary) -> Result<()> {
    let e = s.experiment()?;
    let d = compare(&s.design()?, &first_arm(s)?, &second_arm(s)?, opts.exec)?;
    write_pair(opts, &d)?;
    push_comparison(summary, &d);
    push_result(summary, e.expect, e.expect.is_some_and(|x| expectation_met(x, d.verdict)));
    Ok(())
}

fn q2(s: &Scenario, seed: u64, opts: &RunOptions, summary: &mut Summary) -> Result<()> {
    let e = s.experiment()?;
    let design = s.design()?;
    if design.kind != ObservationKind::InteriorOnOmega {
        return Err(Error::RegionKindMismatch("the q2 command uses interior observations".into()));
    }
    let name2 = e.operator2.as_deref().unwrap_or(&e.operator);
    let op2 = s.operator("experiment.operator2", name2)?.clone();
    let first = first_arm(s)?;
    let second = Arm { op: op2.clone(), ..second_arm(s)? };
    let bank = bump_bank(&design.grid, 8, seed, 3);
    let comm = commutator_norm(&first.op, &op2, &design.grid, &bank)?;
    let d = compare(&design, &first, &second, opts.exec)?;
    write_pair(opts, &d)?;
    summary.push("commutator", format!("{comm:e}"));
    let commute = comm < COMMUTATOR_TOL;
    summary.push("commuting", if commute { "PASS" } else { "UNMET" });
    let mut report = std::fs::read_to_string(opts.out.join("report.txt")).unwrap_or_default();
    report.push_str(&format!("commuting-operators: {} (commutator norm {comm:e})\n", if commute { "PASS" } else { "UNMET" }));
    std::fs::write(opts.out.join("report.txt"), report)?;
    push_comparison(summary, &d);
    push_result(summary, e.expect, e.expect.is_some_and(|x| expectation_met(x, d.verdict)));
    Ok(())
}

fn reconstruction(s: &Scenario, seed: u64, opts: &RunOptions, summary: &mut Summary) -> Result<()> {
    let inv = s.inverse()?;
    let design = s.design()?;
    let truth = s.shape("inverse.truth", &inv.truth)?.clone();
    let base = first_arm(s)?;
    let clean = design.observe(&Arm { shape: Some(truth.clone()), ..base.clone() })?.obs;
    let data = add_noise(&clean, inv.noise, seed)?;
    data.write_csv(&opts.out.join("data.csv"))?;
    let mut optimizer = inv.optimizer.clone();
    optimizer.seed = seed;
    let spec = InverseProblemSpec {
        data,
        param: s.parameterization()?,
        policy: inv.policy,
        lambda: inv.lambda,
        optimizer,
    };
    let result = reconstruct(&design, &base.op, &spec, opts.exec)?;
    result.write_trace_csv(&opts.out.join("trace.csv"))?;
    write_starts(&opts.out.join("starts.csv"), &result.starts)?;

    let dist = hausdorff_distance(&truth, &result.shape);
    let h = design.grid.h();
    for (i, p) in result.best_params.iter().enumerate() {
        summary.push(format!("p{i}"), format!("{p:.9}"));
    }
    summary.push("misfit", format!("{:e}", result.misfit));
    summary.push("objective", format!("{:e}", result.objective));
    summary.push("evals", result.evals);
    summary.push("budget_exhausted", result.budget_exhausted);
    summary.push("hausdorff", format!("{dist:e}"));
    summary.push("hausdorff_over_h", format!("{:.4}", dist / h));
    if let Some(k) = inv.pass_within_h {
        summary.push("pass_within_h", k);
        summary.push("result", if dist < k * h { "PASS" } else { "FAIL" });
    }
    Ok(())
}

fn write_starts(path: &Path, starts: &[crate::inverse::StartSummary]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "start,evals,converged,best_objective,initial,best")?;
    for st in starts {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.9}")).collect::<Vec<_>>().join(" ");
        writeln!(
            w,
            "{},{},{},{:e},{},{}",
            st.start,
            st.evals,
            st.converged,
            st.best_objective,
            join(&st.initial),
            join(&st.best_params)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub gap: f64,
    pub floor: f64,
    pub ratio: f64,
    pub verdict: Verdict,
}

/// Distinguishability at every value of a numeric config entry.
pub fn sweep_rows(raw: &toml::Value, axis: &str, values: &[f64], exec: Execution) -> Result<Vec<SweepRow>> {
    // the axis must exist even when there is nothing to sweep
    set_path(&mut raw.clone(), axis, 0.0)?;
    let rows = exec.map(values, |&v| -> Result<SweepRow> {
        let mut doc = raw.clone();
        set_path(&mut doc, axis, v)?;
        let s = Scenario::from_value(doc)?;
        let d = compare(&s.design()?, &first_arm(&s)?, &second_arm(&s)?, Execution::Sequential)?;
        Ok(SweepRow { value: v, gap: d.gap, floor: d.floor, ratio: d.ratio, verdict: d.verdict })
    });
    rows.into_iter().collect()
}

fn sweep(s: &Scenario, raw: &toml::Value, opts: &RunOptions, summary: &mut Summary) -> Result<()> {
    let axis = opts
        .axis
        .clone()
        .or_else(|| s.sweep.as_ref().map(|w| w.axis.clone()))
        .ok_or_else(|| Error::BadAxis("no sweep axis given".into()))?;
    let values = opts.values.clone().or_else(|| s.sweep.as_ref().map(|w| w.values.clone())).unwrap_or_default();
    let rows = sweep_rows(raw, &axis, &values, opts.exec)?;

    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(opts.out.join("sweep.csv"))?);
    writeln!(w, "parameter,gap,floor,ratio,verdict")?;
    for r in &rows {
        writeln!(w, "{},{:e},{:e},{:e},{}", r.value, r.gap, r.floor, r.ratio, r.verdict.as_str())?;
    }
    w.flush()?;

    summary.push("axis", &axis);
    summary.push("samples", rows.len());
    if !rows.is_empty() {
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        summary.push("min_ratio", format!("{:e}", ratios.iter().cloned().fold(f64::INFINITY, f64::min)));
        summary.push("max_ratio", format!("{:e}", ratios.iter().cloned().fold(0.0, f64::max)));
        if rows.len() > 1 {
            let xs: Vec<f64> = rows.iter().map(|r| r.value).collect();
            summary.push("spearman", format!("{:.4}", spearman(&xs, &ratios)));
        }
        let expect = s.experiment.as_ref().and_then(|e| e.expect);
        push_result(summary, expect, expect.is_some_and(|x| rows.iter().all(|r| expectation_met(x, r.verdict))));
    }
    Ok(())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (ties get average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_of_monotone_data() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn summary_keeps_order() {
        let mut s = Summary::default();
        s.push("a", 1);
        s.push("b", "x");
        assert_eq!(s.to_text(), "a=1\nb=x\n");
        assert_eq!(s.number("a"), Some(1.0));
    }
}
