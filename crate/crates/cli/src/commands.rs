use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use stochctl::analyzer::{analyze, Analysis, AnalyzerConfig, CongestionMode};
use stochctl::certifier::{
    audit_certificate, certify, inequality_audit, AuditGrid, AuditReport, Certificate,
    CertifyConfig,
};
use stochctl::exact::{
    bad_mass, prefix_entropy, truncated_tree, verify_stratification, TreeConfig,
};
use stochctl::forensics::{analyze_trajectory, ForensicsReport};
use stochctl::instances::{
    attach_noise_to, AdversaryCandidates, Flavor, GenConfig, GeneratedDocument, GeneratorSpec,
    InstanceDocument, NoiseModel, RandomSpec,
};
use stochctl::model::Instance;
use stochctl::simulator::{
    monte_carlo, run, tail_check, MonteCarloConfig, RunConfig, TailReport, Trajectory,
};

use crate::output::{
    csv_document, digest, json_document, load_document, text_document, unsupported, Format,
    Manifest, Sink,
};
use crate::{
    AnalyzeArgs, AuditArgs, CertifyArgs, Cli, Command, CongestionArg, DotKernel, Family, FlavorArg,
    ForensicsArgs, GenArgs, SimulateArgs, TreeArgs,
};

/// Budget used by `simulate` when the instance has no certificate.
const FALLBACK_BUDGET: u64 = 10_000;

pub fn dispatch(cli: &Cli) -> Result<u8> {
    let sink = Sink::new(cli.format, cli.out.clone());
    match &cli.command {
        Command::Gen(a) => gen(cli, a, &sink),
        Command::Analyze(a) => analyze_cmd(cli, a, &sink),
        Command::Certify(a) => certify_cmd(cli, a, &sink),
        Command::Simulate(a) => simulate(cli, a, &sink),
        Command::Forensics(a) => forensics(cli, a, &sink),
        Command::Tree(a) => tree(cli, a, &sink),
        Command::Audit(a) => audit(cli, a, &sink),
    }
}

fn params(cli: &Cli, sink: &Sink, args: &impl Serialize, resolved: Value) -> Value {
    json!({
        "args": args,
        "explicit_cap": cli.explicit_cap,
        "format": sink.format,
        "resolved": resolved,
    })
}

fn load(path: &Path, cap: u128) -> Result<(Instance, String)> {
    let doc = load_document(path)?;
    let parsed: InstanceDocument = serde_json::from_value(doc.value)
        .with_context(|| format!("{} is not an instance document", path.display()))?;
    let inst = parsed.build(cap)?;
    Ok((inst, doc.digest))
}

fn congestion_mode(c: CongestionArg) -> CongestionMode {
    match c {
        CongestionArg::Formal => CongestionMode::Formal,
        CongestionArg::Labeled => CongestionMode::Labeled,
    }
}

fn fmt_bits(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn fmt_set<'a>(s: impl IntoIterator<Item = &'a usize>) -> String {
    s.into_iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

// gen

fn parse_noise(spec: &str) -> Result<NoiseModel> {
    Ok(match spec {
        "selfloop" => NoiseModel::SelfLoop,
        "uniform" => NoiseModel::Uniform,
        "greedy" => NoiseModel::GreedyAdversarial {
            candidates: AdversaryCandidates::PrincipalSupport,
        },
        "greedy-all" => NoiseModel::GreedyAdversarial {
            candidates: AdversaryCandidates::All,
        },
        other => match other.strip_prefix("point:") {
            Some(t) => NoiseModel::Point {
                target: t
                    .parse()
                    .with_context(|| format!("bad point target {t:?}"))?,
            },
            None => bail!("unknown noise model {other:?}"),
        },
    })
}

fn parse_edges(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(str::trim)
        .filter(|e| !e.is_empty())
        .map(|e| {
            let (u, v) = e
                .split_once('-')
                .with_context(|| format!("bad edge {e:?}"))?;
            Ok((u.trim().parse()?, v.trim().parse()?))
        })
        .collect()
}

fn parse_clauses(s: &str) -> Result<Vec<Vec<i64>>> {
    s.split(';')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(|c| {
            c.split(|ch: char| ch == ',' || ch.is_whitespace())
                .filter(|l| !l.is_empty())
                .map(|l| l.parse().with_context(|| format!("bad literal {l:?}")))
                .collect()
        })
        .collect()
}

fn gen(cli: &Cli, a: &GenArgs, sink: &Sink) -> Result<u8> {
    if sink.format != Format::Json {
        return unsupported(sink.format, "gen").map(|_| 2);
    }
    let flavor = match a.flavor {
        FlavorArg::Auto => Flavor::Auto,
        FlavorArg::Explicit => Flavor::Explicit,
        FlavorArg::Implicit => Flavor::Implicit,
    };
    let generator = match &a.family {
        Family::Star { k } => GeneratorSpec::Star { k: *k },
        Family::Coloring {
            vertices,
            edges,
            colors,
        } => GeneratorSpec::Coloring {
            vertices: *vertices,
            edges: parse_edges(edges)?,
            colors: *colors,
        },
        Family::Ksat { vars, clauses } => GeneratorSpec::Ksat {
            vars: *vars,
            clauses: parse_clauses(clauses)?,
        },
        Family::Random {
            states,
            flaws,
            density,
            max_support,
            noise_support,
            seed,
        } => GeneratorSpec::Random(RandomSpec {
            states: *states,
            flaws: *flaws,
            density: *density,
            max_support: *max_support,
            noise_support: *noise_support,
            p: a.p.unwrap_or(RandomSpec::default().p),
            seed: *seed,
        }),
    };
    let is_random = matches!(generator, GeneratorSpec::Random(_));
    let noise = match (&a.noise, is_random) {
        (Some(n), _) => Some(parse_noise(n)?),
        (None, true) => None,
        (None, false) => Some(NoiseModel::SelfLoop),
    };
    let p = a.p.unwrap_or(0.0);
    let cfg = GenConfig {
        explicit_cap: cli.explicit_cap,
        flavor,
    };
    let base = generator.build(&cfg)?;
    let inst = match &noise {
        Some(model) => attach_noise_to(&base, model, p)?,
        None => base,
    };
    let mut body = match &inst {
        Instance::Explicit(e) => serde_json::to_value(e.to_file())?,
        _ => serde_json::to_value(GeneratedDocument {
            generator,
            noise: noise.unwrap_or_default(),
            p,
            flavor: Flavor::Implicit,
        })?,
    };
    let manifest =
        Manifest::new("gen", &params(cli, sink, a, json!({ "p": p }))).with_digest(&digest(&body)?);
    for w in inst_warnings(&inst) {
        eprintln!("warning: {w}");
    }
    if let Value::Object(map) = &mut body {
        map.insert("manifest".into(), serde_json::to_value(&manifest)?);
    }
    let mut text = serde_json::to_string_pretty(&body)?;
    text.push('\n');
    sink.write(&text)?;
    Ok(0)
}

fn inst_warnings(inst: &Instance) -> Vec<String> {
    match inst.as_explicit() {
        Ok(e) => e.warnings().to_vec(),
        Err(_) => Vec::new(),
    }
}

// analyze

#[derive(Serialize)]
struct FlawRow {
    flaw: usize,
    name: String,
    potential: String,
    b_pr: f64,
    b_ns: f64,
    delta: usize,
    q: f64,
    amenability: String,
    addressed_states: usize,
    gamma_pr: String,
    gamma_ns: String,
}

fn flaw_rows(a: &Analysis) -> Vec<FlawRow> {
    a.profiles
        .iter()
        .map(|p| FlawRow {
            flaw: p.flaw,
            name: p.name.clone(),
            potential: fmt_bits(p.potential),
            b_pr: p.b_pr,
            b_ns: p.b_ns,
            delta: p.delta,
            q: p.q,
            amenability: fmt_bits(p.amenability),
            addressed_states: p.addressed_states,
            gamma_pr: fmt_set(&p.gamma_pr),
            gamma_ns: fmt_set(&p.gamma_ns),
        })
        .collect()
}

fn analysis_text(a: &Analysis) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "states {}  flaws {}  p {}  h(p) {:.6}  b_ns {:.6}  congestion {:?}",
        a.num_states, a.num_flaws, a.p, a.h_p, a.b_ns, a.congestion_mode
    );
    let _ = writeln!(
        out,
        "{:<12} {:>10} {:>9} {:>9} {:>4} {:>10} {:>11}  gamma_pr",
        "flaw", "potential", "b_pr", "b_ns", "Δ", "q", "amenability"
    );
    for r in flaw_rows(a) {
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>9.6} {:>9.6} {:>4} {:>10.6} {:>11}  {{{}}}",
            r.name, r.potential, r.b_pr, r.b_ns, r.delta, r.q, r.amenability, r.gamma_pr
        );
    }
    out
}

fn analyze_cmd(cli: &Cli, a: &AnalyzeArgs, sink: &Sink) -> Result<u8> {
    let (inst, dig) = load(&a.instance, cli.explicit_cap)?;
    let analysis = analyze(
        &inst,
        &AnalyzerConfig {
            congestion_mode: congestion_mode(a.congestion),
        },
    )?;
    let manifest = Manifest::new("analyze", &params(cli, sink, a, Value::Null)).with_digest(&dig);
    if let Some(kernel) = a.dot {
        let graph = match kernel {
            DotKernel::Principal => &analysis.causality_pr,
            DotKernel::Noise => &analysis.causality_ns,
        };
        let names: Vec<String> = analysis.profiles.iter().map(|p| p.name.clone()).collect();
        let dot = format!(
            "// manifest {}\n{}",
            manifest.compact(),
            graph.to_dot(&names)
        );
        sink.write(&dot)?;
        return Ok(0);
    }
    let body = match sink.format {
        Format::Json => json_document(&manifest, &analysis)?,
        Format::Text => text_document(&manifest, &analysis_text(&analysis)),
        Format::Csv => csv_document(&manifest, &flaw_rows(&analysis))?,
    };
    sink.write(&body)?;
    Ok(0)
}

// certify

#[derive(Serialize)]
struct CertifyResult<'a> {
    certified: bool,
    analysis: &'a Analysis,
    certificate: &'a Certificate,
}

#[derive(Serialize)]
struct SumRow {
    flaw: usize,
    name: String,
    sum: f64,
    threshold: f64,
    ok: bool,
}

fn certificate_text(c: &Certificate) -> String {
    let mut out = String::new();
    let t = &c.condition;
    let _ = writeln!(out, "certified {}", c.certified);
    if let Some(r) = &c.reason {
        let _ = writeln!(out, "reason {r}");
    }
    let _ = writeln!(
        out,
        "p {}  h(p) {:.6}  threshold {:.6e}",
        t.p, t.h_p, t.threshold
    );
    for s in &t.sums {
        let _ = writeln!(
            out,
            "  {:<12} sum {:.6e}  {}",
            s.name,
            s.sum,
            if s.ok { "ok" } else { "FAIL" }
        );
    }
    if let Some(ls) = &c.lambda_star {
        let _ = writeln!(out, "lambda* {:.6}", ls.lambda);
    }
    if let Some(b) = c.b {
        let _ = writeln!(out, "B {b}  Ξ {:.6}  Δ {}", c.xi, c.delta);
    }
    for (label, bounds) in [("bounds", &c.bounds), ("bounds at λ", &c.bounds_at_lambda)] {
        if let Some(bd) = bounds {
            let _ = writeln!(
                out,
                "{label}: λ {:.6}  M0 {:.6}  x0 {:.6}  R {:.6}",
                bd.lambda, bd.m0, bd.x0, bd.r
            );
            for r in &bd.rows {
                let _ = writeln!(
                    out,
                    "  s {}  E {:.6}  steps {:.6}  failure ≤ {:.6e}",
                    r.s, r.distance, r.steps, r.failure_bound
                );
            }
        }
    }
    out
}

fn certify_cmd(cli: &Cli, a: &CertifyArgs, sink: &Sink) -> Result<u8> {
    let (inst, dig) = load(&a.instance, cli.explicit_cap)?;
    let cfg = CertifyConfig {
        tolerance: a.tolerance,
        lambda_tolerance: a.lambda_tolerance,
        pad: a.pad,
        lambda: a.lambda,
        s_values: a.s.clone(),
        analyzer: AnalyzerConfig {
            congestion_mode: congestion_mode(a.congestion),
        },
    };
    let (analysis, cert) = certify(&inst, &cfg)?;
    let manifest = Manifest::new("certify", &params(cli, sink, a, Value::Null)).with_digest(&dig);
    let body = match sink.format {
        Format::Json => json_document(
            &manifest,
            &CertifyResult {
                certified: cert.certified,
                analysis: &analysis,
                certificate: &cert,
            },
        )?,
        Format::Text => text_document(&manifest, &certificate_text(&cert)),
        Format::Csv => {
            let rows: Vec<SumRow> = cert
                .condition
                .sums
                .iter()
                .map(|s| SumRow {
                    flaw: s.flaw,
                    name: s.name.clone(),
                    sum: s.sum,
                    threshold: cert.condition.threshold,
                    ok: s.ok,
                })
                .collect();
            csv_document(&manifest, &rows)?
        }
    };
    sink.write(&body)?;
    Ok(if cert.certified { 0 } else { 1 })
}

// simulate

#[derive(Serialize)]
struct TrialRow {
    trial: u64,
    hit_step: Option<u64>,
    censored: bool,
}

#[derive(Serialize)]
struct TrialRowContinued {
    trial: u64,
    hit_step: Option<u64>,
    censored: bool,
    flawless_at_end: bool,
    flawless_fraction: f64,
}

#[derive(Serialize)]
struct TailPoint {
    t: u64,
    tail: f64,
}

#[derive(Serialize)]
struct SimulateSummary {
    trials: u64,
    seed: u64,
    budget: u64,
    budget_source: &'static str,
    hits: u64,
    censored: u64,
    mean_hit_step: Option<f64>,
    tail_table: Vec<TailPoint>,
    tail_check: Option<TailReport>,
}

fn summary_text(s: &SimulateSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "trials {}  seed {}  budget {} ({})",
        s.trials, s.seed, s.budget, s.budget_source
    );
    let mean = s
        .mean_hit_step
        .map_or("-".to_string(), |m| format!("{m:.4}"));
    let _ = writeln!(
        out,
        "hits {}  censored {}  mean hit step {mean}",
        s.hits, s.censored
    );
    for p in &s.tail_table {
        let _ = writeln!(out, "  Pr[T > {}] = {:.6}", p.t, p.tail);
    }
    if let Some(tc) = &s.tail_check {
        for r in &tc.rows {
            let _ = writeln!(
                out,
                "  s {}  steps {}  empirical {}  limit {:.6}  {:?}",
                r.s,
                r.steps.map_or("-".into(), |v| v.to_string()),
                r.empirical.map_or("-".into(), |v| format!("{v:.6}")),
                r.limit,
                r.verdict
            );
        }
    }
    out
}

fn simulate(cli: &Cli, a: &SimulateArgs, sink: &Sink) -> Result<u8> {
    let (inst, dig) = load(&a.instance, cli.explicit_cap)?;
    let cert = if inst.is_explicit() {
        Some(
            certify(
                &inst,
                &CertifyConfig {
                    s_values: a.s.clone(),
                    ..Default::default()
                },
            )?
            .1,
        )
    } else {
        None
    };
    let certified = cert.as_ref().filter(|c| c.certified);
    let s_max = a.s.iter().copied().fold(1.0, f64::max);
    let (budget, budget_source) = match (a.budget, certified.and_then(|c| c.step_budget(s_max))) {
        (Some(b), _) => (b, "flag"),
        (None, Some(b)) => (b, "certificate"),
        (None, None) => (FALLBACK_BUDGET, "default"),
    };
    if budget == 0 {
        bail!("--budget must be at least 1");
    }
    let stats = monte_carlo(
        &inst,
        &MonteCarloConfig {
            trials: a.trials,
            seed: a.seed,
            budget,
            start: a.start,
        },
    )?;
    let mut ts: Vec<u64> = [budget / 8, budget / 4, budget / 2, budget]
        .into_iter()
        .chain(
            a.s.iter()
                .filter_map(|&s| certified.and_then(|c| c.step_budget(s))),
        )
        .filter(|&t| t > 0 && t <= budget)
        .collect();
    ts.sort_unstable();
    ts.dedup();
    let summary = SimulateSummary {
        trials: stats.trials,
        seed: stats.seed,
        budget,
        budget_source,
        hits: stats.trials - stats.censored(),
        censored: stats.censored(),
        mean_hit_step: stats.mean_hit_step(),
        tail_table: stats
            .tail_table(&ts)
            .into_iter()
            .map(|(t, tail)| TailPoint { t, tail })
            .collect(),
        tail_check: cert.as_ref().map(|c| tail_check(&stats, c, &a.s)),
    };
    let manifest = Manifest::new(
        "simulate",
        &params(
            cli,
            sink,
            a,
            json!({ "budget": budget, "budget_source": budget_source }),
        ),
    )
    .with_digest(&dig)
    .with_seeds(vec![a.seed]);
    let body = match sink.format {
        Format::Json => json_document(&manifest, &summary)?,
        Format::Text => text_document(&manifest, &summary_text(&summary)),
        Format::Csv if a.continue_after_hit => {
            let rows = continued_rows(&inst, a, budget)?;
            csv_document(&manifest, &rows)?
        }
        Format::Csv => {
            let rows: Vec<TrialRow> = stats
                .results
                .iter()
                .map(|r| TrialRow {
                    trial: r.trial,
                    hit_step: r.hit_step,
                    censored: r.censored(),
                })
                .collect();
            csv_document(&manifest, &rows)?
        }
    };
    sink.write(&body)?;
    if sink.format == Format::Csv && sink.out.is_some() {
        print!("{}", json_document(&manifest, &summary)?);
    }
    Ok(0)
}

/// Exploratory runs that keep going after the first flawless state.
fn continued_rows(
    inst: &Instance,
    a: &SimulateArgs,
    budget: u64,
) -> Result<Vec<TrialRowContinued>> {
    (0..a.trials)
        .map(|trial| {
            let t = run(
                inst,
                &RunConfig {
                    seed: a.seed,
                    stream: trial,
                    max_steps: budget,
                    start: a.start,
                    continue_after_hit: true,
                },
            )?;
            let hit = t.hit_step().map(|z| z as u64);
            let flawless = t.states().filter(|&s| inst.is_flawless(s)).count();
            Ok(TrialRowContinued {
                trial,
                hit_step: hit,
                censored: hit.is_none(),
                flawless_at_end: t.records.last().is_some_and(|r| inst.is_flawless(r.state)),
                flawless_fraction: flawless as f64 / t.records.len() as f64,
            })
        })
        .collect()
}

// forensics

#[derive(Serialize)]
struct ForensicsResult<'a> {
    trajectory: &'a Trajectory,
    report: &'a ForensicsReport,
}

fn forensics_text(inst: &Instance, t: &Trajectory, r: &ForensicsReport) -> String {
    let mut out = String::new();
    let states: Vec<String> = t.states().map(|s| s.to_string()).collect();
    let _ = writeln!(
        out,
        "trajectory ({:?}, Z = {}): {}",
        t.terminal,
        t.z,
        states.join(" ")
    );
    let names: Vec<String> = r.witness.iter().map(|&f| inst.flaw_name(f)).collect();
    let _ = writeln!(out, "witness: {}", names.join(" "));
    let seq = &r.sequence;
    for i in 0..seq.b.len() {
        let _ = writeln!(
            out,
            "  i {i}: B {{{}}}  O {{{}}}  N {{{}}}  B* {{{}}}",
            fmt_set(&seq.b[i]),
            fmt_set(&seq.o[i]),
            fmt_set(&seq.n[i]),
            fmt_set(&seq.b_star[i])
        );
    }
    let lengths: Vec<String> = r.lengths.iter().map(|l| l.to_string()).collect();
    let _ = writeln!(out, "lengths: {}", lengths.join(" "));
    let _ = writeln!(
        out,
        "code ({} bits, expected {}):",
        r.code.len(),
        r.expected_len
    );
    let _ = writeln!(out, "  hex {}", r.code.to_hex());
    let _ = writeln!(out, "  bin {}", r.code.to_binary());
    let _ = writeln!(
        out,
        "round trip {}  witness reconstruction {}",
        verdict(r.round_trip),
        verdict(r.reconstruction_ok)
    );
    out
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn forensics(cli: &Cli, a: &ForensicsArgs, sink: &Sink) -> Result<u8> {
    let (inst, dig) = load(&a.instance, cli.explicit_cap)?;
    let t = run(
        &inst,
        &RunConfig {
            seed: a.seed,
            stream: a.stream,
            max_steps: a.budget,
            start: a.start,
            continue_after_hit: false,
        },
    )?;
    let report = analyze_trajectory(&inst, &t)?;
    let manifest = Manifest::new("forensics", &params(cli, sink, a, Value::Null))
        .with_digest(&dig)
        .with_seeds(vec![a.seed]);
    let body = match sink.format {
        Format::Json => json_document(
            &manifest,
            &ForensicsResult {
                trajectory: &t,
                report: &report,
            },
        )?,
        Format::Text => text_document(&manifest, &forensics_text(&inst, &t, &report)),
        Format::Csv => return unsupported(sink.format, "forensics").map(|_| 2),
    };
    sink.write(&body)?;
    let ok =
        report.round_trip && report.reconstruction_ok && report.code.len() == report.expected_len;
    Ok(if ok { 0 } else { 2 })
}

// tree

#[derive(Serialize)]
struct TreeChecks {
    b: Option<u32>,
    lower_ok: Option<bool>,
    sandwich_ok: Option<bool>,
    absorbed_leaves: usize,
    mass: f64,
    mass_ok: bool,
    upper_ok: Option<bool>,
    passed: bool,
}

#[derive(Serialize)]
struct TreeResult {
    x: f64,
    root: usize,
    num_leaves: usize,
    leaves: Option<Vec<stochctl::exact::Leaf>>,
    bad_mass: f64,
    #[serde(rename = "H_P")]
    h_p: f64,
    checks: TreeChecks,
}

fn tree(cli: &Cli, a: &TreeArgs, sink: &Sink) -> Result<u8> {
    let (inst, dig) = load(&a.instance, cli.explicit_cap)?;
    let cfg = TreeConfig {
        cap: a.cap,
        root: a.root,
        keep_paths: !a.no_leaves,
    };
    let t = truncated_tree(&inst, a.x, &cfg)?;
    let bm = bad_mass(&t);
    let h = prefix_entropy(&t);
    // per-row checks only, no x0 tree
    let row = verify_stratification(&inst, None, &[a.x], &cfg)
        .ok()
        .and_then(|r| r.rows.into_iter().next().map(|row| (r.b, row)));
    let (_, cert) = certify(&inst, &CertifyConfig::default())?;
    let upper_ok = cert
        .bounds
        .as_ref()
        .filter(|_| cert.certified)
        .map(|bd| h <= bd.lambda * a.x + bd.m0 + stochctl::exact::EXACT_TOLERANCE);
    let mass = t.total_mass();
    let mass_ok = (mass - 1.0).abs() <= stochctl::exact::EXACT_TOLERANCE;
    let checks = TreeChecks {
        b: row.as_ref().map(|r| r.0),
        lower_ok: row.as_ref().map(|r| r.1.lower_ok),
        sandwich_ok: row.as_ref().map(|r| r.1.sandwich_ok),
        absorbed_leaves: t.leaves.iter().filter(|l| l.absorbed).count(),
        mass,
        mass_ok,
        upper_ok,
        passed: mass_ok
            && upper_ok.unwrap_or(true)
            && row.as_ref().is_none_or(|r| r.1.lower_ok && r.1.sandwich_ok),
    };
    let manifest =
        Manifest::new("tree", &params(cli, sink, a, json!({ "root": t.root }))).with_digest(&dig);
    let passed = checks.passed;
    let result = TreeResult {
        x: a.x,
        root: t.root,
        num_leaves: t.leaves.len(),
        bad_mass: bm,
        h_p: h,
        leaves: (!a.no_leaves).then_some(t.leaves),
        checks,
    };
    let body = match sink.format {
        Format::Json => json_document(&manifest, &result)?,
        Format::Text => {
            let c = &result.checks;
            let mut s = String::new();
            let _ = writeln!(
                s,
                "x {}  root {}  leaves {}  bad mass {:.12}  H[P] {:.12}",
                result.x, result.root, result.num_leaves, result.bad_mass, result.h_p
            );
            let _ = writeln!(
                s,
                "lower {:?}  sandwich {:?}  mass {:.12} ({})  upper {:?}  absorbed {}",
                c.lower_ok,
                c.sandwich_ok,
                c.mass,
                verdict(c.mass_ok),
                c.upper_ok,
                c.absorbed_leaves
            );
            text_document(&manifest, &s)
        }
        Format::Csv => match &result.leaves {
            Some(leaves) => {
                #[derive(Serialize)]
                struct LeafRow {
                    path: String,
                    depth: usize,
                    prob: f64,
                    log2_prob: f64,
                    is_bad: bool,
                    absorbed: bool,
                }
                let rows: Vec<LeafRow> = leaves
                    .iter()
                    .map(|l| LeafRow {
                        path: fmt_set(&l.path),
                        depth: l.depth,
                        prob: l.prob,
                        log2_prob: l.log2_prob,
                        is_bad: l.is_bad,
                        absorbed: l.absorbed,
                    })
                    .collect();
                csv_document(&manifest, &rows)?
            }
            None => bail!("--format csv lists leaves; drop --no-leaves"),
        },
    };
    sink.write(&body)?;
    Ok(if passed { 0 } else { 2 })
}

// audit

#[derive(Serialize)]
struct InstanceAudit {
    instance: String,
    digest: String,
    certified: bool,
    lambda: Option<f64>,
    report: AuditReport,
}

#[derive(Serialize)]
struct AuditResult {
    grid: AuditGrid,
    inequalities: AuditReport,
    instances: Vec<InstanceAudit>,
    passed: bool,
}

fn audit(cli: &Cli, a: &AuditArgs, sink: &Sink) -> Result<u8> {
    let grid = AuditGrid {
        deltas: (1..=a.max_delta).collect(),
        b_ns: (0..=a.max_b_ns).map(f64::from).collect(),
        ..AuditGrid::default()
    };
    let inequalities = inequality_audit(&grid);
    let mut instances = Vec::new();
    for path in &a.instances {
        let (inst, dig) = load(path, cli.explicit_cap)?;
        let (analysis, cert) = certify(&inst, &CertifyConfig::default())?;
        instances.push(InstanceAudit {
            instance: path.display().to_string(),
            digest: dig,
            certified: cert.certified,
            lambda: cert.lambda(),
            report: audit_certificate(&analysis, &cert),
        });
    }
    let passed = inequalities.passed() && instances.iter().all(|i| i.report.passed());
    let result = AuditResult {
        grid,
        inequalities,
        instances,
        passed,
    };
    let manifest = Manifest::new("audit", &params(cli, sink, a, Value::Null));
    let body = match sink.format {
        Format::Json => json_document(&manifest, &result)?,
        Format::Text => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "grid points {}  violations {}",
                result.inequalities.points,
                result.inequalities.violations.len()
            );
            for v in &result.inequalities.violations {
                let _ = writeln!(
                    s,
                    "  {:?} Δ {} b_ns {} p {}: {} vs {}",
                    v.kind, v.delta, v.b_ns, v.p, v.lhs, v.rhs
                );
            }
            for i in &result.instances {
                let _ = writeln!(
                    s,
                    "{}: certified {}  flaws checked {}  violations {}",
                    i.instance,
                    i.certified,
                    i.report.points,
                    i.report.violations.len()
                );
            }
            let _ = writeln!(s, "{}", if passed { "PASS" } else { "FAIL" });
            text_document(&manifest, &s)
        }
        Format::Csv => {
            let rows: Vec<_> = result
                .inequalities
                .violations
                .iter()
                .chain(result.instances.iter().flat_map(|i| &i.report.violations))
                .map(|v| {
                    json!([
                        format!("{:?}", v.kind),
                        v.delta,
                        v.b_ns,
                        v.p,
                        v.flaw,
                        v.lhs,
                        v.rhs
                    ])
                })
                .collect();
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["kind", "delta", "b_ns", "p", "flaw", "lhs", "rhs"])?;
            for r in rows {
                let fields: Vec<String> = r
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|v| match v {
                        Value::String(s) => s.clone(),
                        Value::Null => String::new(),
                        other => other.to_string(),
                    })
                    .collect();
                w.write_record(&fields)?;
            }
            format!(
                "# manifest {}\n{}",
                manifest.compact(),
                String::from_utf8(w.into_inner()?)?
            )
        }
    };
    sink.write(&body)?;
    Ok(if passed { 0 } else { 2 })
}
