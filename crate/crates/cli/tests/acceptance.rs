//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#![allow(clippy::needless_range_loop)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stochctl::analyzer::{analyze, AnalyzerConfig, CongestionMode};
use stochctl::certifier::{
    audit_certificate, certify, inequality_audit, condition_check, AuditGrid, CertifyConfig,
};
use stochctl::exact::{truncated_tree, verify_stratification, TreeConfig};
use stochctl::forensics::{break_sets, decode, encode_sequence, reconstruct_witness, witness};
use stochctl::instances::{
    attach_noise, gen_coloring, gen_random, gen_star, AdversaryCandidates, GenConfig, NoiseModel,
    RandomSpec,
};
use stochctl::model::{
    arc_bound, validate_instance, ExplicitInstance, FlawSet, FlawSpec, InitialSpec, Instance,
    InstanceFile, Kernel, StateSpec,
};
use stochctl::simulator::{monte_carlo, run, tail_check, MonteCarloConfig, RunConfig, TailVerdict};
use stochctl_oracles::{grouped_prefix_entropy, literal_break_sets, Dense};

type Outcome = Result<String, String>;

fn star_noisy(p: f64) -> Instance {
    attach_noise(&gen_star(8).unwrap(), &NoiseModel::Point { target: 0 }, p)
        .unwrap()
        .into()
}

fn triangle3() -> Instance {
    gen_coloring(3, &[(0, 1), (1, 2), (0, 2)], 3, &GenConfig::default()).unwrap()
}

fn path2() -> Instance {
    gen_coloring(3, &[(0, 1), (1, 2)], 2, &GenConfig::default()).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {elapsed:.1?}, limit {limit:?}")
    })
}

/// Trajectory corpus shared by the first two criteria: 10⁴ runs.
fn corpus() -> Vec<(String, Instance, u64, u64)> {
    let mut out = Vec::new();
    for p in [0.1, 0.2, 0.4] {
        out.push((format!("STAR9-NOISY p={p}"), star_noisy(p), 2000, 200));
    }
    out.push(("TRIANGLE3".into(), triangle3(), 1500, 500));
    out.push(("PATH2".into(), path2(), 1000, 500));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for k in 0..30u64 {
        let spec = RandomSpec {
            states: rng.random_range(4..=64),
            flaws: rng.random_range(1..=6),
            density: rng.random_range(0.1..0.5),
            p: [0.0, 0.1, 0.3][k as usize % 3],
            seed: 1000 + k,
            ..Default::default()
        };
        out.push((
            format!("random#{k}"),
            gen_random(&spec).unwrap().into(),
            50,
            300,
        ));
    }
    out
}

fn criterion_encoding_and_witness() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut runs = 0usize;
    let mut enc_err: Option<String> = None;
    let mut wit_err: Option<String> = None;
    let mut total_z = 0usize;
    for (name, inst, trials, budget) in corpus() {
        let m = inst.num_flaws();
        for seed in 0..trials {
            runs += 1;
            let t = run(&inst, &RunConfig::new(seed, budget)).unwrap();
            total_z += t.z;
            let w = witness(&t);
            let seq = break_sets(&inst, &t).unwrap();
            let at = || format!("{name} seed {seed}");

            if enc_err.is_none() {
                let res = encode_sequence(&seq, m)
                    .map_err(|e| format!("{}: encode failed: {e}", at()))
                    .and_then(|code| {
                        let expected = m + 2 * seq.z - seq.b0_star().len();
                        ensure(code.len() == expected, || {
                            format!("{}: {} bits, expected {expected}", at(), code.len())
                        })?;
                        let (b0, l) = decode(&code, m)
                            .map_err(|e| format!("{}: decode failed: {e}", at()))?;
                        ensure(&b0 == seq.b0_star() && l == seq.lengths(), || {
                            format!("{}: decode(encode(·)) differs", at())
                        })
                    });
                enc_err = res.err();
            }

            if wit_err.is_none() {
                let res = (|| {
                    let rec = reconstruct_witness(&seq.b_star, inst.priority())
                        .map_err(|e| format!("{}: {e}", at()))?;
                    ensure(rec == w, || {
                        format!("{}: reconstructed {rec:?} vs {w:?}", at())
                    })?;
                    let tail: usize = seq.b_star.iter().skip(1).map(FlawSet::len).sum();
                    ensure(tail == seq.z - seq.b0_star().len(), || {
                        format!(
                            "{}: Σ|B_i*| = {tail}, Z − |B_0*| = {}",
                            at(),
                            seq.z - seq.b0_star().len()
                        )
                    })?;
                    for i in 0..seq.b.len() {
                        let (o, n, s) = (&seq.o[i], &seq.n[i], &seq.b_star[i]);
                        let disjoint = o.is_disjoint(n) && o.is_disjoint(s) && n.is_disjoint(s);
                        let union: FlawSet = o.iter().chain(n).chain(s).copied().collect();
                        ensure(disjoint && union == seq.b[i], || {
                            format!("{}: B_{i} is not B*_{i} ⊎ O_{i} ⊎ N_{i}", at())
                        })?;
                    }
                    if seq.z > 0 {
                        let present: Vec<FlawSet> = t
                            .bad_prefix()
                            .iter()
                            .map(|r| inst.present_flaws(r.state))
                            .collect();
                        let (b, o, n, s) = literal_break_sets(&present, &w);
                        ensure(
                            b == seq.b && o == seq.o && n == seq.n && s == seq.b_star,
                            || format!("{}: differs from the literal break-set oracle", at()),
                        )?;
                    }
                    Ok(())
                })();
                wit_err = res.err();
            }
        }
    }
    let elapsed = start.elapsed();
    let enc = match enc_err {
        Some(e) => Err(e),
        None => within(elapsed, Duration::from_secs(60))
            .map(|_| format!("{runs} trajectories, ΣZ = {total_z}, {elapsed:.1?}")),
    };
    let wit = match wit_err {
        Some(e) => Err(e),
        None if runs < 10_000 => Err(format!("only {runs} trajectories")),
        None => Ok(format!("{runs} trajectories")),
    };
    (enc, wit)
}

fn compare_with_oracle(e: &ExplicitInstance) -> Result<(), String> {
    let d = Dense::new(&e.to_file());
    let inst: Instance = e.clone().into();
    for mode in [CongestionMode::Formal, CongestionMode::Labeled] {
        let a = analyze(
            &inst,
            &AnalyzerConfig {
                congestion_mode: mode,
            },
        )
        .map_err(|x| x.to_string())?;
        for (kernel, graph) in [
            (Kernel::Principal, &a.causality_pr),
            (Kernel::Noise, &a.causality_ns),
        ] {
            let c = d.causality(kernel == Kernel::Noise);
            for i in 0..d.m {
                for j in 0..d.m {
                    ensure(graph.has_edge(i, j) == c[i][j], || {
                        format!("{kernel} edge {i}->{j}")
                    })?;
                }
            }
        }
        for (i, prof) in a.profiles.iter().enumerate() {
            ensure(prof.gamma_pr == d.gamma(false, i), || format!("Γ_pr({i})"))?;
            ensure(prof.gamma_ns == d.gamma(true, i), || format!("Γ_ns({i})"))?;
            let pot = d.potential(i);
            let same = if pot.is_infinite() {
                prof.potential.is_infinite()
            } else {
                (prof.potential - pot).abs() < 1e-9
            };
            ensure(same, || {
                format!("potential({i}): {} vs {pot}", prof.potential)
            })?;
            let labeled = mode == CongestionMode::Labeled;
            ensure(
                prof.congestion_pr.count == d.congestion(false, i, labeled),
                || format!("principal congestion({i}) {mode:?}"),
            )?;
            ensure(
                prof.congestion_ns.count == d.congestion(true, i, labeled),
                || format!("noise congestion({i}) {mode:?}"),
            )?;
            let bits = |c: usize| if c == 0 { 0.0 } else { (c as f64).log2() };
            ensure(
                (prof.congestion_pr.bits - bits(d.congestion(false, i, labeled))).abs() < 1e-9,
                || format!("b_pr({i})"),
            )?;
        }
    }
    ensure(arc_bound(e).ok() == d.arc_bound(), || "B".into())
}

fn criterion_analyzer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa11);
    let mut flaw_total = 0;
    for k in 0..200u64 {
        let spec = RandomSpec {
            states: rng.random_range(2..=256),
            flaws: rng.random_range(0..=8),
            density: rng.random_range(0.02..0.4),
            max_support: rng.random_range(2..=8),
            noise_support: rng.random_range(1..=3),
            p: [0.0, 0.1, 0.3][k as usize % 3],
            seed: k,
        };
        let mut e = gen_random(&spec).unwrap();
        if k % 4 == 3 && spec.p > 0.0 {
            let candidates = if k % 8 == 3 {
                AdversaryCandidates::PrincipalSupport
            } else {
                AdversaryCandidates::All
            };
            e = attach_noise(&e, &NoiseModel::GreedyAdversarial { candidates }, spec.p).unwrap();
        }
        flaw_total += e.num_flaws();
        compare_with_oracle(&e).map_err(|msg| format!("instance {k} ({spec:?}): {msg}"))?;
    }
    Ok(format!("200 instances, {flaw_total} flaws"))
}

fn criterion_tail_bound() -> Outcome {
    let start = Instant::now();
    let inst = star_noisy(0.2);
    let (_, cert) = certify(&inst, &CertifyConfig::default()).map_err(|e| e.to_string())?;
    ensure(cert.certified, || {
        "STAR9-NOISY p=0.2 is not certified".into()
    })?;
    let s_values = [1.0, 2.0, 3.0];
    let budget = cert.step_budget(3.0).unwrap();
    let trials = 100_000u64;
    let stats = monte_carlo(
        &inst,
        &MonteCarloConfig {
            trials,
            seed: 2024,
            budget,
            start: None,
        },
    )
    .map_err(|e| e.to_string())?;
    let report = tail_check(&stats, &cert, &s_values);
    let mut parts = Vec::new();
    for (row, &s) in report.rows.iter().zip(&s_values) {
        // recount directly from the per-trial results
        let t = cert.step_budget(s).unwrap();
        let late = stats
            .results
            .iter()
            .filter(|r| r.hit_step.is_none_or(|h| h > t))
            .count() as f64
            / trials as f64;
        let pi = (-s).exp();
        let limit = pi + 3.0 * (pi * (1.0 - pi) / trials as f64).sqrt();
        ensure(late <= limit && row.verdict == TailVerdict::Pass, || {
            format!("s = {s}: Pr[T > {t}] = {late} exceeds {limit}")
        })?;
        parts.push(format!("s={s}: {late:.5} ≤ {limit:.5} at {t} steps"));
    }
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(parts.join("; "))
}

fn criterion_stratification() -> Outcome {
    let xs: Vec<f64> = (1..=8).map(f64::from).collect();
    let mut absorbed = 0;
    for (name, inst, expect_cert) in [
        ("PATH2", path2(), false),
        ("STAR9-NOISY", star_noisy(0.2), true),
    ] {
        let e = inst.as_explicit().unwrap();
        let d = Dense::new(&e.to_file());
        let (_, cert) = certify(&inst, &CertifyConfig::default()).map_err(|x| x.to_string())?;
        ensure(cert.certified == expect_cert, || {
            format!("{name}: certified = {}", cert.certified)
        })?;
        // small cap for the x0 attempt
        let cfg = TreeConfig {
            cap: 200_000,
            ..Default::default()
        };
        let report =
            verify_stratification(&inst, Some(&cert), &xs, &cfg).map_err(|x| x.to_string())?;
        for row in &report.rows {
            let x = row.x;
            ensure(row.note.is_none(), || {
                format!("{name} x={x}: {:?}", row.note)
            })?;
            ensure(row.lower_ok, || {
                format!(
                    "{name} x={x}: H[P] = {} < x·bad = {}",
                    row.h_p,
                    x * row.bad_mass
                )
            })?;
            ensure(row.sandwich_ok, || {
                format!("{name} x={x}: leaf outside (2^(-x-B), 2^-x]")
            })?;
            ensure(row.mass_ok, || format!("{name} x={x}: mass {}", row.mass))?;
            ensure(row.upper_ok == expect_cert.then_some(true), || {
                format!("{name} x={x}: upper bound check {:?}", row.upper_ok)
            })?;
            let oracle = d
                .bad_mass_matrix_power(x)
                .ok_or_else(|| format!("{name}: matrix oracle not applicable"))?;
            ensure((row.bad_mass - oracle).abs() < 1e-9, || {
                format!(
                    "{name} x={x}: bad mass {} vs matrix power {oracle}",
                    row.bad_mass
                )
            })?;
            let tree =
                truncated_tree(&inst, x, &TreeConfig::default()).map_err(|x| x.to_string())?;
            let leaves: Vec<(Vec<usize>, f64)> = tree
                .leaves
                .iter()
                .map(|l| (l.path.clone(), l.prob))
                .collect();
            let h = grouped_prefix_entropy(&leaves, |s| !e.is_flawless(s));
            ensure((row.h_p - h).abs() < 1e-9, || {
                format!("{name} x={x}: H[P] {} vs oracle {h}", row.h_p)
            })?;
            absorbed += row.absorbed_leaves;
        }
    }
    Ok(format!(
        "PATH2 and STAR9-NOISY, x = 1..8 ({absorbed} leaves absorbed at flawless self-loops)"
    ))
}

fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

fn criterion_inequality_audit() -> Outcome {
    let start = Instant::now();
    let grid = AuditGrid::default();
    ensure(
        grid.deltas == (1..=64).collect::<Vec<_>>() && grid.b_ns.len() == 9 && grid.ps.len() == 99,
        || "unexpected default grid".into(),
    )?;
    let report = inequality_audit(&grid);
    ensure(report.passed(), || {
        format!(
            "{} grid violations, first {:?}",
            report.violations.len(),
            report.violations.first()
        )
    })?;
    // independent recomputation on the same grid
    for delta in 1..=64usize {
        for b in 0..=8 {
            let b = b as f64;
            for k in 1..=99 {
                let p = k as f64 / 100.0;
                let d = delta as f64;
                let chain = (0..=delta)
                    .map(|j| d * h2(j as f64 / d) + j as f64 * (b + 2.0 + h2(p)))
                    .fold(f64::NEG_INFINITY, f64::max);
                ensure(chain < d * (b + 2.5 + h2(p)), || {
                    format!("chain Δ={delta} b={b} p={p}")
                })?;
                let q = p * (d * (b + 2.5 + h2(p)) - 2.0 - h2(p));
                ensure(q <= p * d * (b + 4.0), || {
                    format!("surcharge Δ={delta} b={b} p={p}")
                })?;
            }
        }
    }
    let mut instances: Vec<(String, Instance)> = vec![
        ("STAR9".into(), gen_star(8).unwrap().into()),
        ("TRIANGLE3".into(), triangle3()),
    ];
    for p in [0.1, 0.2, 0.4] {
        instances.push((format!("STAR9-NOISY p={p}"), star_noisy(p)));
    }
    for seed in 0..200 {
        let e = gen_random(&RandomSpec {
            seed,
            density: 0.05,
            max_support: 16,
            p: 0.05,
            ..Default::default()
        })
        .unwrap();
        instances.push((format!("random#{seed}"), e.into()));
    }
    let mut certified = 0;
    for (name, inst) in &instances {
        let (a, cert) = certify(inst, &CertifyConfig::default()).map_err(|x| x.to_string())?;
        if !cert.certified {
            continue;
        }
        certified += 1;
        let r = audit_certificate(&a, &cert);
        ensure(r.passed(), || format!("{name}: {:?}", r.violations))?;
    }
    ensure(certified >= 4, || {
        format!("only {certified} certified instances")
    })?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{} grid points, {certified} certified instances",
        report.points
    ))
}

/// Noiseless instance with uniform principal rows and principal congestion
/// at most 1: every state is the target of at most one flawed state.
fn noiseless_uniform(seed: u64) -> InstanceFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=4);
    let core = rng.random_range(2..=6);
    let n = core + 120;
    let mut members = vec![Vec::new(); m];
    for s in 0..core {
        let mut any = false;
        for mem in members.iter_mut() {
            if rng.random_bool(0.4) {
                mem.push(s);
                any = true;
            }
        }
        if !any {
            members[rng.random_range(0..m)].push(s);
        }
    }
    for mem in &mut members {
        mem.sort_unstable();
    }
    let mut free: Vec<usize> = (0..n).collect();
    free.shuffle(&mut rng);
    let principal = (0..n)
        .map(|s| {
            if s >= core {
                return vec![(s, 1.0)];
            }
            let a = rng.random_range(2..=16usize).min(free.len());
            let mut targets: Vec<usize> = free.split_off(free.len() - a);
            targets.sort_unstable();
            targets.into_iter().map(|t| (t, 1.0 / a as f64)).collect()
        })
        .collect();
    let names: Vec<String> = (0..m).map(|i| format!("g{i}")).collect();
    let mut priority = names.clone();
    priority.shuffle(&mut rng);
    InstanceFile {
        states: StateSpec::Count(n),
        flaws: names
            .into_iter()
            .zip(members)
            .map(|(name, members)| FlawSpec { name, members })
            .collect(),
        priority,
        principal,
        noise: None,
        p: 0.0,
        initial: InitialSpec::State(0),
    }
}

fn criterion_noiseless_recovery() -> Outcome {
    let (mut yes, mut no) = (0, 0);
    for seed in 0..100 {
        let file = noiseless_uniform(seed);
        let e = validate_instance(&file).map_err(|x| format!("seed {seed}: {x}"))?;
        let a =
            analyze(&e.clone().into(), &AnalyzerConfig::default()).map_err(|x| x.to_string())?;
        ensure(a.profiles.iter().all(|p| p.b_pr == 0.0), || {
            format!("seed {seed}: b_pr ≠ 0")
        })?;
        let verdict = condition_check(&a.profiles, 0.0, 1e-9).certified;
        let oracle = Dense::new(&file).reciprocal_support_criterion();
        ensure(verdict == oracle, || {
            format!("seed {seed}: check {verdict}, Σ1/a_j < 1/4 {oracle}")
        })?;
        if oracle {
            yes += 1;
        } else {
            no += 1;
        }
    }
    Ok(format!("100 instances agree ({yes} below 1/4, {no} not)"))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_stochctl")
}

fn instances_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../instances")
}

fn run_cli(args: &[&str], out: &Path, threads: &str) -> Result<(Vec<u8>, Vec<u8>), String> {
    let o = Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    let code = o.status.code().unwrap_or(-1);
    ensure(code == 0 || code == 1, || {
        format!(
            "{args:?} exited {code}: {}",
            String::from_utf8_lossy(&o.stderr)
        )
    })?;
    let file = std::fs::read(out).map_err(|e| e.to_string())?;
    Ok((file, o.stdout))
}

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let inst = instances_dir();
    let p = |f: &str| inst.join(f).display().to_string();
    let star = p("star9.json");
    let noisy = p("star9-noisy.json");
    let tri = p("triangle3.json");
    let cases: Vec<(Vec<String>, &str)> = vec![
        (
            vec!["gen".into(), "random".into(), "--seed".into(), "5".into()],
            "json",
        ),
        (
            vec![
                "gen".into(),
                "coloring".into(),
                "--vertices".into(),
                "4".into(),
                "--edges".into(),
                "0-1,1-2,2-3".into(),
                "--colors".into(),
                "3".into(),
                "--noise".into(),
                "uniform".into(),
                "--p".into(),
                "0.1".into(),
            ],
            "json",
        ),
        (vec!["analyze".into(), tri.clone()], "json"),
        (vec!["analyze".into(), tri.clone()], "csv"),
        (vec!["certify".into(), noisy.clone()], "json"),
        (vec!["certify".into(), p("path2.json")], "txt"),
        (
            vec![
                "simulate".into(),
                star.clone(),
                "--trials".into(),
                "10".into(),
                "--seed".into(),
                "7".into(),
            ],
            "csv",
        ),
        (
            vec![
                "simulate".into(),
                noisy.clone(),
                "--trials".into(),
                "5000".into(),
                "--seed".into(),
                "3".into(),
            ],
            "csv",
        ),
        (
            vec![
                "simulate".into(),
                tri.clone(),
                "--trials".into(),
                "2000".into(),
                "--seed".into(),
                "11".into(),
            ],
            "json",
        ),
        (
            vec!["forensics".into(), tri.clone(), "--seed".into(), "9".into()],
            "json",
        ),
        (
            vec!["tree".into(), noisy.clone(), "--x".into(), "6".into()],
            "json",
        ),
        (vec!["audit".into(), star.clone(), noisy.clone()], "json"),
    ];
    for (k, (args, ext)) in cases.iter().enumerate() {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let a = dir.path().join(format!("{k}a.{ext}"));
        let b = dir.path().join(format!("{k}b.{ext}"));
        let first = run_cli(&args, &a, "1")?;
        let second = run_cli(&args, &b, "4")?;
        ensure(first == second, || {
            format!("{args:?}: outputs differ between runs")
        })?;
        ensure(
            String::from_utf8_lossy(&first.0).contains("\"command\""),
            || format!("{args:?}: no manifest in output"),
        )?;
    }
    Ok(format!(
        "{} commands byte-identical across runs and thread counts",
        cases.len()
    ))
}

fn main() {
    let started = Instant::now();
    let (enc, wit) = criterion_encoding_and_witness();
    let results: Vec<(&str, Outcome)> = vec![
        ("1 encoding round-trip", enc),
        ("2 witness reconstruction", wit),
        ("3 analyzer vs oracle", criterion_analyzer_oracle()),
        ("4 end-to-end tail bound", criterion_tail_bound()),
        ("5 stratification exactness", criterion_stratification()),
        ("6 inequality audit", criterion_inequality_audit()),
        ("7 noiseless recovery", criterion_noiseless_recovery()),
        ("8 CLI determinism", criterion_determinism()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL ({why})");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1?}",
        results.len() - failed,
        started.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
