//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Criterion 9 (200-agent profile, several minutes) runs only with
//! `NCADMM_ACCEPT_FULL=1` or `-- --include-ignored`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use ncadmm::admm::{reference_point, run_decentralized, run_matrix_form, NoisePlacementMode};
use ncadmm::analysis::{
    audit_contraction, certify, steady_state_from_errors, theory_constants, ViolationKind,
};
use ncadmm::config::ExperimentConfig;
use ncadmm::experiment::{run_experiment, trace_run, CellSummary, TrialInstance};
use ncadmm::noise::{NoiseKind, NoiseModel, RandomStream};
use ncadmm::objective::{aggregate_constants, centralized_solution, make_problem, DesignKind};
use ncadmm::topology::{
    build_arc_matrices, check_laplacian_bound, gen_connected_graph, spectral_summary, Graph,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Outcome {
            pass,
            summary: summary.into(),
            details: Vec::new(),
        }
    }
}

fn within_budget(o: &mut Outcome, elapsed: Duration, budget: Duration) {
    if elapsed > budget {
        o.pass = false;
        o.details
            .push(format!("runtime {elapsed:.1?} exceeds budget {budget:?}"));
    }
}

// ---------------------------------------------------------------- 1

fn structural_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut failures = Vec::new();
    for t in 0..100 {
        let n: usize = rng.gen_range(2..=50);
        // Below ~2 ln N/(N−1) random graphs are almost never connected.
        let lo = (2.0 * (n as f64).ln() / (n as f64 - 1.0)).clamp(0.05, 1.0);
        let rho = if lo >= 1.0 { 1.0 } else { rng.gen_range(lo..=1.0) };
        let g = match gen_connected_graph(n, rho, t) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("graph {t} (N={n}, rho={rho:.3}): {e}"));
                continue;
            }
        };
        let am = build_arc_matrices(&g);
        let mut deg = DMatrix::<f64>::zeros(n, n);
        let mut adj = DMatrix::<f64>::zeros(n, n);
        for &(i, j) in g.edges() {
            adj[(i, j)] = 1.0;
            adj[(j, i)] = 1.0;
            deg[(i, i)] += 1.0;
            deg[(j, j)] += 1.0;
        }
        let q = &am.m_plus * am.m_plus.transpose() * 0.5;
        let l = &am.m_minus * am.m_minus.transpose() * 0.5;
        if q != &deg + &adj || l != &deg - &adj {
            failures.push(format!("graph {t}: Gram identity not exact"));
        }
        match spectral_summary(&am) {
            Ok(s) if check_laplacian_bound(&s) => {}
            Ok(s) => failures.push(format!(
                "graph {t}: l_max={} > 2·maxdeg={}",
                s.l_max,
                2 * s.max_degree
            )),
            Err(e) => failures.push(format!("graph {t}: {e}")),
        }
    }
    let mut o = Outcome::new(
        failures.is_empty(),
        "structural identities: ½M₊M₊ᵀ = D+W, ½M₋M₋ᵀ = D−W exactly and l_max ≤ 2·maxdeg on 100 random graphs",
    );
    o.details = failures;
    o
}

// ---------------------------------------------------------------- 2

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for t in 0..20u64 {
        let n: usize = rng.gen_range(3..=30);
        let lo = (2.0 * (n as f64).ln() / (n as f64 - 1.0)).clamp(0.1, 1.0);
        let rho = if lo >= 1.0 { 1.0 } else { rng.gen_range(lo..=1.0) };
        let c = 10f64.powf(rng.gen_range(-1.0..=1.0));
        let kind = if t % 2 == 0 { DesignKind::Gaussian } else { DesignKind::WellConditioned };
        let model = match t % 4 {
            0 => NoiseModel::Gaussian { sigma_e: 1e-2 },
            1 => NoiseModel::FixedNorm { sigma_e: 1e-3 },
            2 => NoiseModel::Quantizer { delta: 1e-2 },
            _ => NoiseModel::None,
        };
        let run = || -> ncadmm::Result<f64> {
            let g = gen_connected_graph(n, rho, 7000 + t)?;
            let (obj, _) = make_problem(n, 3, 1e-3, kind, 8000 + t)?;
            let stream = RandomStream::new(9000 + t);
            let a = run_decentralized(&g, &obj, c, model, NoisePlacementMode::AnalysisFaithful, 200, stream)?;
            let b = run_matrix_form(&g, &obj, c, model, 200, stream)?;
            let mut d = 0.0_f64;
            for (s, r) in a.states.iter().zip(&b.states) {
                d = d
                    .max((&s.x - &r.x).amax())
                    .max((&s.alpha - &r.alpha).amax())
                    .max((&s.z - &r.z).amax())
                    .max((&s.beta - &r.beta).amax());
            }
            Ok(d)
        };
        match run() {
            Ok(d) => {
                worst = worst.max(d);
                if !(d <= 1e-10) {
                    failures.push(format!("config {t} (N={n}, c={c:.3}): max deviation {d:e}"));
                }
            }
            Err(e) => failures.push(format!("config {t}: {e}")),
        }
    }
    let mut o = Outcome::new(
        failures.is_empty(),
        format!("oracle equivalence: per-node vs matrix form over 200 iterations, 20 configs, max |Δ| = {worst:.2e} (tol 1e-10)"),
    );
    o.details = failures;
    o
}

// ---------------------------------------------------------------- 3

/// G-norm distances below this are at the numerical floor of the iteration.
const GNORM_FLOOR: f64 = 1e-20;

fn noiseless_convergence() -> Outcome {
    let mut failures = Vec::new();
    let mut hits = Vec::new();
    for seed in 0..5u64 {
        let run = || -> ncadmm::Result<(Option<usize>, Option<usize>)> {
            let g = gen_connected_graph(20, 0.2, 300 + seed)?;
            let (obj, true_x) = make_problem(20, 3, 1e-3, DesignKind::WellConditioned, 400 + seed)?;
            let inst = TrialInstance {
                trial: 0,
                x_central: centralized_solution(&obj)?,
                graph: g,
                objective: obj,
                true_x,
            };
            let rows = trace_run(&inst, 0.5, NoiseModel::None, NoisePlacementMode::AnalysisFaithful, 1000, RandomStream::new(seed))?;
            let hit = rows.iter().position(|r| r.edc_mean < 1e-8);
            let bad = rows
                .windows(2)
                .position(|w| w[0].gnorm_sq > GNORM_FLOOR && !(w[1].gnorm_sq < w[0].gnorm_sq));
            Ok((hit, bad))
        };
        match run() {
            Ok((hit, bad)) => {
                match hit {
                    Some(k) => hits.push(k),
                    None => failures.push(format!("seed {seed}: mean E^DC never below 1e-8 in 1000 iterations")),
                }
                if let Some(k) = bad {
                    failures.push(format!("seed {seed}: G-norm distance not strictly decreasing at k={k}"));
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    let mut o = Outcome::new(
        failures.is_empty(),
        format!(
            "noiseless convergence: N=20, ρ=0.2, c=0.5, mean E^DC < 1e-8 at k = {hits:?}; ‖u−u*‖²_G strictly decreasing down to {GNORM_FLOOR:e}"
        ),
    );
    o.details = failures;
    o
}

// ---------------------------------------------------------------- 4 & 6

/// Well-conditioned instance with `c` inside both step-size readings.
fn certified_instance(seed: u64) -> ncadmm::Result<(TrialInstance, f64)> {
    let g = gen_connected_graph(20, 0.2, 500 + seed)?;
    let (obj, true_x) = make_problem(20, 3, 1e-3, DesignKind::WellConditioned, 600 + seed)?;
    let spec = spectral_summary(&build_arc_matrices(&g))?;
    let (m_f, _) = aggregate_constants(&obj)?;
    let sp = spec.sigma_max_mplus;
    let c = 0.9 * 2.0 * m_f / (sp * sp).max(sp);
    let inst = TrialInstance {
        trial: 0,
        x_central: centralized_solution(&obj)?,
        graph: g,
        objective: obj,
        true_x,
    };
    Ok((inst, c))
}

fn contraction_certification() -> Outcome {
    let mut failures = Vec::new();
    let (mut checked, mut switches, mut runs) = (0usize, 0usize, 0usize);
    let mut deltas = (f64::INFINITY, 0.0_f64);
    for seed in 0..50u64 {
        let mut run = || -> ncadmm::Result<Vec<String>> {
            let (inst, c) = certified_instance(seed)?;
            let spec = spectral_summary(&build_arc_matrices(&inst.graph))?;
            let (m_f, big_m_f) = aggregate_constants(&inst.objective)?;
            let report = certify(&spec, m_f, big_m_f, c)?;
            let mut errs = Vec::new();
            if !report.certified() {
                errs.push(format!("seed {seed}: configuration not certified"));
                return Ok(errs);
            }
            deltas = (deltas.0.min(report.delta), deltas.1.max(report.delta));
            let r = reference_point(&inst.graph, &inst.objective)?;
            for (label, model) in [
                ("noiseless", NoiseModel::None),
                ("fixed_norm 1e-3", NoiseModel::FixedNorm { sigma_e: 1e-3 }),
                ("fixed_norm 1e-2", NoiseModel::FixedNorm { sigma_e: 1e-2 }),
            ] {
                let traj = run_decentralized(
                    &inst.graph,
                    &inst.objective,
                    c,
                    model,
                    NoisePlacementMode::AnalysisFaithful,
                    1000,
                    RandomStream::new(seed).with_cell(1),
                )?;
                let audit = audit_contraction(&traj, &r, &report)?;
                runs += 1;
                checked += audit.checked_steps();
                switches += audit.gate_switches();
                let (nc, np) = (
                    audit.count(ViolationKind::Contraction),
                    audit.count(ViolationKind::PrimalBound),
                );
                if nc + np > 0 {
                    let v = audit.violations[0];
                    errs.push(format!(
                        "seed {seed} {label}: {nc} contraction + {np} primal violations (first k={} measured {:e} bound {:e})",
                        v.k, v.measured, v.bound
                    ));
                }
                if audit.checked_steps() == 0 {
                    errs.push(format!("seed {seed} {label}: no gated steps were checked"));
                }
            }
            Ok(errs)
        };
        match run() {
            Ok(errs) => failures.extend(errs),
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    let mut o = Outcome::new(
        failures.is_empty(),
        format!(
            "contraction certificate: 50 seeds × (noiseless, fixed_norm 1e-3, 1e-2), {checked} gated steps checked, 0 violations required (tol 1e-12); δ* ∈ [{:.3e}, {:.3e}], {switches} gate switches over {runs} runs",
            deltas.0, deltas.1
        ),
    );
    o.details = failures;
    o
}

fn steady_state() -> Outcome {
    let mut failures = Vec::new();
    let mut sqrt_holds = [0usize; 2];
    let mut ratios = [0.0_f64; 2];
    for (si, sigma_e) in [1e-3, 1e-2].into_iter().enumerate() {
        for seed in 0..20u64 {
            let run = || -> ncadmm::Result<(f64, f64, bool, bool)> {
                let (inst, c) = certified_instance(seed)?;
                let rows = trace_run(
                    &inst,
                    c,
                    NoiseModel::FixedNorm { sigma_e },
                    NoisePlacementMode::AnalysisFaithful,
                    5000,
                    RandomStream::new(seed).with_cell(2 + si as u64),
                )?;
                let errs: Vec<f64> = rows.iter().map(|r| r.x_err).collect();
                let ss = steady_state_from_errors(&errs, sigma_e, inst.graph.max_degree());
                Ok((ss.tail_mean, ss.bound_stated, ss.holds_stated, ss.holds))
            };
            match run() {
                Ok((tail, bound, stated, sq)) => {
                    ratios[si] = ratios[si].max(tail / bound);
                    if sq {
                        sqrt_holds[si] += 1;
                    }
                    if !stated {
                        failures.push(format!("σ_e={sigma_e} seed {seed}: tail mean {tail:e} > maxdeg·σ_e = {bound:e}"));
                    }
                }
                Err(e) => failures.push(format!("σ_e={sigma_e} seed {seed}: {e}")),
            }
        }
    }
    let mut o = Outcome::new(
        failures.is_empty(),
        format!(
            "steady state: fixed_norm, 20 seeds × 5000 iterations, tail ‖x−x*‖ ≤ maxdeg·σ_e (max ratio {:.3} / {:.3} for σ_e = 1e-3 / 1e-2); √maxdeg·σ_e bound held on {}/20 and {}/20 runs",
            ratios[0], ratios[1], sqrt_holds[0], sqrt_holds[1]
        ),
    );
    o.details = failures;
    o
}

// ---------------------------------------------------------------- 5

fn p3_constants() -> Outcome {
    let g = Graph::path(3).expect("P3");
    let spec = spectral_summary(&build_arc_matrices(&g)).expect("spectrum");
    let r = theory_constants(&spec, 1.0, 1.0, 0.1, 2.0).expect("constants");
    // Oracle: closed forms with σ₊ = σ₋,max = √6, σ̃₋ = √2 typed in by hand.
    let (c, mu, m, big_m) = (0.1_f64, 2.0_f64, 1.0_f64, 1.0_f64);
    let (sp2, sm2, st2) = (6.0_f64, 6.0_f64, 2.0_f64);
    let a = c / 4.0 * sp2 + 2.0 * mu * big_m * big_m / (c * st2) + 4.0 * c * sp2 * sm2 / (st2 * st2);
    let b = 2.0 * sp2 / ((1.0 - 1.0 / mu) * st2);
    let delta = ((m - c * sp2.sqrt() / 2.0) / a).min(1.0 / b);
    let coeff = 1.0 / (m - c / 2.0 * sp2);
    let rel = |x: f64, y: f64| ((x - y) / y).abs();
    let checks = [
        ("a", r.a, a),
        ("b", r.b, b),
        ("delta", r.delta, delta),
        ("x_bound_coeff", r.x_bound_coeff.unwrap_or(f64::NAN), coeff),
    ];
    let mut o = Outcome::new(
        true,
        format!(
            "P3 constants: a = {}, b = {}, δ = {:.7}, x_bound_coeff = {:.6} (tol 1e-12 relative; a = 23.75, b = 12 by hand)",
            r.a,
            r.b,
            r.delta,
            r.x_bound_coeff.unwrap_or(f64::NAN)
        ),
    );
    for (name, got, want) in checks {
        if !(rel(got, want) <= 1e-12) {
            o.pass = false;
            o.details.push(format!("{name}: got {got}, oracle {want}"));
        }
    }
    if a != 23.75 || b != 12.0 {
        o.pass = false;
        o.details.push(format!("oracle disagrees with hand values: a={a}, b={b}"));
    }
    o
}

// ---------------------------------------------------------------- 7 & 9

fn tail_mean(v: &[f64]) -> f64 {
    let n = (v.len() / 10).max(1);
    v[v.len() - n..].iter().sum::<f64>() / n as f64
}

/// Least-squares fit of ln(mean) against k over the decay window: the middle
/// half of the log-decay from mean[0] to the floor, i.e. from the first k
/// past 25% of the way (in ln) to the first k past 75%. At least 3 points.
fn decay_fit(v: &[f64]) -> Option<(usize, usize, f64, f64)> {
    let floor = tail_mean(v);
    let (l0, lf) = (v[0].ln(), floor.ln());
    if !(lf < l0) {
        return None;
    }
    let k0 = v.iter().position(|&y| y.ln() <= l0 + 0.25 * (lf - l0))?;
    let k1 = k0 + v[k0..].iter().position(|&y| y.ln() <= l0 + 0.75 * (lf - l0))?;
    if k1 < k0 + 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = (k0..=k1).map(|k| (k as f64, v[k].ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    Some((k0, k1, 1.0 - ss_res / ss_tot, slope))
}

fn sweep_checks(cells: &[CellSummary], label: &str) -> Outcome {
    let mut details = Vec::new();
    let (mut a_ok, mut b_ok, mut c_ok, mut d_ok) = (true, true, true, true);
    for cell in cells {
        let v = &cell.mean;
        let floor = tail_mean(v);
        // Flat: the final 10% and the 10% before it agree within 25%.
        let n = v.len() / 10;
        let prev = v[v.len() - 2 * n..v.len() - n].iter().sum::<f64>() / n as f64;
        let flat = (floor / prev - 1.0).abs() <= 0.25;
        let decayed = floor <= 0.1 * v[0];
        let last = *v.last().expect("non-empty");
        let fit = decay_fit(v);
        let r2 = fit.map(|f| f.2).unwrap_or(f64::NAN);
        let ca = decayed && flat;
        let cc = last < cell.sigma_e;
        let cd = r2 >= 0.98;
        a_ok &= ca;
        c_ok &= cc;
        d_ok &= cd;
        details.push(format!(
            "c={:<4} σ_e={:<6} floor={:.3e} (prev decile {:.3e}) final={:.3e} window={} R²={:.4}  (a) {} (c) {} (d) {}",
            cell.c,
            cell.sigma_e,
            floor,
            prev,
            last,
            fit.map(|f| format!("[{}, {}]", f.0, f.1)).unwrap_or_else(|| "none".into()),
            r2,
            pf(ca),
            pf(cc),
            pf(cd)
        ));
    }
    let mut cs: Vec<f64> = cells.iter().map(|c| c.c).collect();
    cs.dedup();
    for c in cs {
        let mut row: Vec<&CellSummary> = cells.iter().filter(|x| x.c == c).collect();
        row.sort_by(|x, y| x.sigma_e.total_cmp(&y.sigma_e));
        let ordered = row.windows(2).all(|w| tail_mean(&w[0].mean) < tail_mean(&w[1].mean));
        b_ok &= ordered;
        details.push(format!("c={c}: floors ordered by σ_e (b) {}", pf(ordered)));
    }
    let mut o = Outcome::new(
        a_ok && b_ok && c_ok && d_ok,
        format!(
            "{label}: (a) decay then floor {}, (b) floors ordered by σ_e {}, (c) final < σ_e {}, (d) pre-floor log-linear R² ≥ 0.98 {}",
            pf(a_ok),
            pf(b_ok),
            pf(c_ok),
            pf(d_ok)
        ),
    );
    o.details = details;
    o
}

fn pf(b: bool) -> &'static str {
    if b {
        "PASS"
    } else {
        "FAIL"
    }
}

fn sweep_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.graph.n_nodes = 50;
    cfg.graph.rho = 0.1;
    cfg.problem.dim = 3;
    cfg.trials = 20;
    cfg.admm.c = vec![0.1, 1.0];
    cfg.admm.max_iter = 2000;
    cfg.noise.model = NoiseKind::Gaussian;
    cfg.noise.sigma_e = vec![1e-3, 1e-2];
    cfg
}

fn desk_sweep() -> Outcome {
    match run_experiment(&sweep_config(), None) {
        Ok(sweep) => sweep_checks(&sweep.cells, "desk-scale sweep (N=50, ρ=0.1, 20 trials, c ∈ {0.1, 1}, σ_e ∈ {1e-3, 1e-2})"),
        Err(e) => Outcome::new(false, format!("desk-scale sweep failed: {e}")),
    }
}

fn full_sweep() -> Outcome {
    let mut cfg = sweep_config();
    cfg.apply_full_profile();
    match run_experiment(&cfg, None) {
        Ok(sweep) => sweep_checks(&sweep.cells, "full-scale sweep (N=200, ρ=0.04, 100 trials)"),
        Err(e) => Outcome::new(false, format!("full-scale sweep failed: {e}")),
    }
}

// ---------------------------------------------------------------- 8

fn determinism() -> Outcome {
    let run = || -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg_path = dir.path().join("config.json");
        std::fs::write(&cfg_path, sweep_config().to_json().map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let invoke = |name: &str, jobs: &str| -> Result<Vec<u8>, String> {
            let out = dir.path().join(name);
            let status = Command::new(env!("CARGO_BIN_EXE_ncadmm"))
                .args(["experiment", "--config"])
                .arg(&cfg_path)
                .args(["--seed", "17", "--jobs", jobs, "--out"])
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(String::from_utf8_lossy(&status.stderr).into_owned());
            }
            read(&out)
        };
        Ok((invoke("a.csv", "8")?, invoke("b.csv", "8")?, invoke("c.csv", "1")?))
    };
    match run() {
        Ok((a, b, c)) => {
            let same = a == b && a == c && !a.is_empty();
            Outcome::new(
                same,
                format!(
                    "determinism: experiment CLI twice with --jobs 8 and once with --jobs 1, CSVs byte-identical ({} bytes)",
                    a.len()
                ),
            )
        }
        Err(e) => Outcome::new(false, format!("determinism: CLI run failed: {e}")),
    }
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

// ----------------------------------------------------------------

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // The harness passes filters and flags through; only the ignore switch matters here.
    let full = args.iter().any(|a| a == "--include-ignored" || a == "--ignored")
        || std::env::var("NCADMM_ACCEPT_FULL").is_ok_and(|v| v == "1");
    if args.iter().any(|a| a == "--list") {
        return;
    }

    type Criterion = (u32, fn() -> Outcome, Duration);
    let mut criteria: Vec<Criterion> = vec![
        (1, structural_identities, Duration::from_secs(10)),
        (2, oracle_equivalence, Duration::from_secs(30)),
        (3, noiseless_convergence, Duration::from_secs(5)),
        (4, contraction_certification, Duration::from_secs(120)),
        (5, p3_constants, Duration::from_secs(1)),
        (6, steady_state, Duration::from_secs(120)),
        (7, desk_sweep, Duration::from_secs(120)),
        (8, determinism, Duration::from_secs(300)),
    ];
    if full {
        criteria.push((9, full_sweep, Duration::from_secs(1800)));
    }

    let mut failed = 0;
    for (id, f, budget) in criteria {
        let start = Instant::now();
        let mut o = f();
        let elapsed = start.elapsed();
        within_budget(&mut o, elapsed, budget);
        println!("[{}] criterion {id}: {} ({elapsed:.1?})", pf(o.pass), o.summary);
        for d in &o.details {
            println!("         {d}");
        }
        if !o.pass {
            failed += 1;
        }
    }
    if !full {
        println!("[SKIP] criterion 9: 200-agent profile not run (set NCADMM_ACCEPT_FULL=1 or pass --include-ignored)");
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion/criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
