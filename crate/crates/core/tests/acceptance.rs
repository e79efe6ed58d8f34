//! Acceptance suite. Runs every criterion, prints one `[PASS]`/`[FAIL]` line
//! each, and exits non-zero if any fails.
//!
//! `cargo test -p lorashift --test acceptance`

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use lorashift::analysis::{
    exact_logit_shift, first_order_single, first_order_total, flip_criterion, margin_report, remainder_sweep,
};
use lorashift::cli::run_with;
use lorashift::linalg::{SeededRng, Vector};
use lorashift::lora::{random_lora, scale, LoraAdapter, LoraSet};
use lorashift::model::{
    build_model, forward, jvp_from_site, propagate_from_site, ModelConfig, SiteId, Slot, TransformerModel,
};

const TOKENS: [usize; 3] = [3, 1, 4];
const RANK: usize = 2;
const ALPHA: f64 = 1.0;

type Check = Result<String, String>;

/// Id, title, check and optional runtime budget in seconds.
type Criterion = (&'static str, &'static str, fn() -> Check, Option<u64>);

fn reference() -> TransformerModel {
    build_model(&ModelConfig::reference()).expect("reference model")
}

fn adapter(rng: &mut SeededRng, m: &TransformerModel, site: SiteId, init: f64) -> LoraAdapter {
    random_lora(rng, m, site, RANK, ALPHA, init).expect("adapter")
}

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn ac1_jvp() -> Check {
    let m = reference();
    let trace = forward(&m, &TOKENS).map_err(e)?;
    let mut rng = SeededRng::new(101);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for site in m.sites() {
        let base = trace.site_outputs[&site].clone();
        let d_out = base[0].dim();
        for _ in 0..10 {
            let v: Vec<Vector> = (0..TOKENS.len())
                .map(|_| Vector::new((0..d_out).map(|_| rng.next_gaussian()).collect()))
                .collect::<Result<_, _>>()
                .map_err(e)?;
            let vnorm = v.iter().map(|x| x.norm().powi(2)).sum::<f64>().sqrt();
            let h = 1e-5 / vnorm;
            let shifted = |s: f64| -> Vec<Vector> { base.iter().zip(&v).map(|(b, d)| b.axpy(s, d).unwrap()).collect() };
            let plus = propagate_from_site(&m, site, &shifted(h), &TOKENS).map_err(e)?;
            let minus = propagate_from_site(&m, site, &shifted(-h), &TOKENS).map_err(e)?;
            let fd = plus.sub(&minus).map_err(e)?.scale(1.0 / (2.0 * h)).map_err(e)?;
            let j = jvp_from_site(&m, site, &TOKENS, &v).map_err(e)?;
            let rel = j.sub(&fd).map_err(e)?.norm() / fd.norm();
            worst = worst.max(rel);
            count += 1;
        }
    }
    ensure(
        worst <= 1e-6,
        format!("{count} site/direction pairs, max relative error {worst:.3e} (tol 1e-6)"),
    )
}

fn reference_set(m: &TransformerModel) -> LoraSet {
    // Same adapter as configs/reference.toml.
    let mut rng = SeededRng::new(11);
    LoraSet::from_adapters([adapter(&mut rng, m, SiteId::new(2, Slot::MlpDown), 0.2)]).unwrap()
}

fn ac2_convergence() -> Check {
    let m = reference();
    let grid = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4];
    let mut lines = Vec::new();
    let mut ok = true;
    let mut run = |label: &str, set: &LoraSet| -> Result<(), String> {
        let r = remainder_sweep(&m, set, &TOKENS, 5, &grid).map_err(e)?;
        let slope = r.fitted_slope.unwrap_or(f64::NAN);
        let dec = r.tail_strictly_decreasing(3);
        ok &= dec && (1.8..=2.2).contains(&slope) && !r.linear_exact;
        lines.push(format!("{label}: slope {slope:.4}, tail decreasing {dec}"));
        Ok(())
    };
    run("L2.mlp_down", &reference_set(&m))?;
    let mut rng = SeededRng::new(202);
    let multi = LoraSet::from_adapters(
        [
            SiteId::new(0, Slot::AttnOut),
            SiteId::new(1, Slot::MlpDown),
            SiteId::new(3, Slot::AttnOut),
        ]
        .map(|s| adapter(&mut rng, &m, s, 0.2)),
    )
    .unwrap();
    run("3-site", &multi)?;
    ensure(ok, lines.join("; "))
}

fn ac3_linear_chain() -> Check {
    let m = build_model(&ModelConfig::reference().linear_chain()).map_err(e)?;
    let mut worst: f64 = 0.0;
    let mut all_exact = true;
    for (i, site) in m.sites().into_iter().enumerate() {
        let mut rng = SeededRng::new(300 + i as u64);
        let set = LoraSet::from_adapters([adapter(&mut rng, &m, site, 0.2)]).unwrap();
        let trace = forward(&m, &[3]).map_err(e)?;
        for eps in [1.0, 0.1] {
            let s = scale(&set, eps);
            let exact = exact_logit_shift(&m, &s, &[3], 5).map_err(e)?;
            let (fo, _) = first_order_total(&m, &trace, &s, 5).map_err(e)?;
            worst = worst.max((exact - fo).abs());
        }
        let sweep = remainder_sweep(&m, &set, &[3], 5, &[1.0, 0.3, 0.1, 0.03, 0.01]).map_err(e)?;
        all_exact &= sweep.linear_exact;
    }
    ensure(
        worst <= 1e-10 && all_exact,
        format!("8 single-site fixtures, max |exact - first_order| {worst:.3e} (tol 1e-10), linear_exact {all_exact}"),
    )
}

fn ac4_additivity() -> Check {
    let m = reference();
    let trace = forward(&m, &TOKENS).map_err(e)?;
    let mut rng = SeededRng::new(404);
    let sites = [
        SiteId::new(0, Slot::MlpDown),
        SiteId::new(1, Slot::AttnOut),
        SiteId::new(3, Slot::MlpDown),
    ];
    let adapters: Vec<LoraAdapter> = sites.iter().map(|&s| adapter(&mut rng, &m, s, 0.3)).collect();
    let set = LoraSet::from_adapters(adapters.clone()).unwrap();
    let y = 5;
    let (fo, per_site) = first_order_total(&m, &trace, &set, y).map_err(e)?;
    let h = 1e-5;
    let fd = (exact_logit_shift(&m, &scale(&set, h), &TOKENS, y).map_err(e)?
        - exact_logit_shift(&m, &scale(&set, -h), &TOKENS, y).map_err(e)?)
        / (2.0 * h);
    let rel = (fo - fd).abs() / fd.abs();

    // Each per-site value must not depend on which other sites are present.
    let mut independent = true;
    for (i, a) in adapters.iter().enumerate() {
        let alone = first_order_single(&m, &trace, a, 1.0, y).map_err(e)?;
        let pair = LoraSet::from_adapters([a.clone(), adapters[(i + 1) % 3].clone()]).unwrap();
        let (_, pair_terms) = first_order_total(&m, &trace, &pair, y).map_err(e)?;
        let in_pair = pair_terms.iter().find(|t| t.site == a.site()).unwrap().first_order;
        let in_set = per_site.iter().find(|t| t.site == a.site()).unwrap().first_order;
        independent &= alone.to_bits() == in_pair.to_bits() && alone.to_bits() == in_set.to_bits();
    }
    ensure(
        rel <= 1e-5 && independent,
        format!("first_order {fo:.6e} vs FD {fd:.6e}, relative {rel:.3e} (tol 1e-5); per-site bitwise independent {independent}"),
    )
}

fn random_site(rng: &mut SeededRng, m: &TransformerModel) -> SiteId {
    let sites = m.sites();
    sites[(rng.next_u64() % sites.len() as u64) as usize]
}

fn random_tokens(rng: &mut SeededRng, vocab: usize) -> Vec<usize> {
    let len = 1 + (rng.next_u64() % 4) as usize;
    (0..len).map(|_| (rng.next_u64() % vocab as u64) as usize).collect()
}

fn random_pair(rng: &mut SeededRng, vocab: usize) -> (usize, usize) {
    let a = (rng.next_u64() % vocab as u64) as usize;
    let b = (a + 1 + (rng.next_u64() % (vocab as u64 - 1)) as usize) % vocab;
    (a, b)
}

fn random_set(rng: &mut SeededRng, m: &TransformerModel, init: f64) -> LoraSet {
    let n = 1 + (rng.next_u64() % 3) as usize;
    let mut set = LoraSet::new();
    while set.len() < n {
        let site = random_site(rng, m);
        if set.get(site).is_none() {
            set.insert(adapter(rng, m, site, init)).unwrap();
        }
    }
    set
}

fn ac5_margin() -> Check {
    let m = reference();
    let mut rng = SeededRng::new(505);
    let mut worst: f64 = 0.0;
    let mut identity = 0;
    let mut flips = 0;
    for _ in 0..50 {
        let tokens = random_tokens(&mut rng, 50);
        let (y_doc, y_pre) = random_pair(&mut rng, 50);
        let eps = 0.5 + 4.5 * rng.next_uniform();
        let set = random_set(&mut rng, &m, 0.3).with_scale(eps);
        let r = margin_report(&m, &set, &tokens, y_doc, y_pre).map_err(e)?;
        let diff = exact_logit_shift(&m, &set, &tokens, y_doc).map_err(e)?
            - exact_logit_shift(&m, &set, &tokens, y_pre).map_err(e)?;
        worst = worst.max(((r.m - r.m0) - diff).abs());
        let flip = flip_criterion(&r);
        identity += flip.identity_consistent as usize;
        flips += (r.m0 > 0.0 && r.m < 0.0 || r.m0 < 0.0 && r.m > 0.0) as usize;
    }
    ensure(
        worst <= 1e-12 && identity == 50,
        format!("50 trials, max |(m - m0) - shift difference| {worst:.3e} (tol 1e-12), flip identity {identity}/50, sign changes {flips}"),
    )
}

fn ac6_flip_prediction() -> Check {
    let m = reference();
    let mut rng = SeededRng::new(606);
    let (mut accepted, mut correct, mut flipped, mut drawn) = (0, 0, 0, 0);
    while accepted < 200 {
        drawn += 1;
        if drawn > 20_000 {
            return Err(format!("only {accepted} admissible trials in {drawn} draws"));
        }
        let tokens = random_tokens(&mut rng, 50);
        let (y_doc, y_pre) = random_pair(&mut rng, 50);
        let unit = random_set(&mut rng, &m, 0.3);
        let kappa = 0.5 + rng.next_uniform();
        let probe = margin_report(&m, &unit, &tokens, y_doc, y_pre).map_err(e)?;
        if probe.first_order_margin.abs() < 1e-9 {
            continue;
        }
        // Aim the first-order margin at kappa times the distance to the boundary.
        let eps = kappa * -probe.m0 / probe.first_order_margin;
        let r = margin_report(&m, &unit.with_scale(eps), &tokens, y_doc, y_pre).map_err(e)?;
        if r.margin_remainder.abs() >= 0.1 * r.first_order_margin.abs() {
            continue;
        }
        accepted += 1;
        correct += (r.flip_predicted == r.flip_actual) as usize;
        flipped += r.flip_actual as usize;
    }
    let rate = correct as f64 / accepted as f64;
    ensure(
        rate >= 0.95,
        format!(
            "{correct}/{accepted} correct ({:.1}%, need 95%), {flipped} actual flips, {drawn} draws",
            100.0 * rate
        ),
    )
}

fn ac7_scaling() -> Check {
    let m = reference();
    let trace = forward(&m, &TOKENS).map_err(e)?;
    let mut rng = SeededRng::new(707);
    let mut worst: f64 = 0.0;
    let mut halves = true;
    for site in m.sites() {
        let a = adapter(&mut rng, &m, site, 0.2);
        let base = first_order_single(&m, &trace, &a, 1.0, 5).map_err(e)?;
        for c in [0.37, 3.1, -2.6, 1e-3] {
            let by_alpha = first_order_single(&m, &trace, &a.with_alpha(c * ALPHA).map_err(e)?, 1.0, 5).map_err(e)?;
            let by_eps = first_order_single(&m, &trace, &a, c, 5).map_err(e)?;
            for v in [by_alpha, by_eps] {
                worst = worst.max((v - c * base).abs() / (c * base).abs());
            }
        }
        let doubled = first_order_single(&m, &trace, &a.padded_to_rank(2 * RANK).map_err(e)?, 1.0, 5).map_err(e)?;
        halves &= doubled == 0.5 * base;
    }
    ensure(
        worst <= 1e-12 && halves,
        format!("max relative deviation in alpha/eps {worst:.3e} (tol 1e-12); r -> 2r halves exactly at every site {halves}"),
    )
}

fn ac8_reproducible() -> Check {
    let configs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs");
    let dir = tempfile::tempdir().map_err(e)?;
    let mut compared = 0;
    for cfg in ["reference.toml", "linear_chain.toml"] {
        for cmd in ["gen-model", "gen-lora", "analyze", "margin", "sweep"] {
            let mut files = Vec::new();
            for run in ["a", "b"] {
                let out = dir.path().join(cfg).join(cmd).join(run);
                let outcome = run_with(cmd, &configs.join(cfg), &out).map_err(|c| c.message)?;
                files.push(outcome.files);
            }
            for (a, b) in files[0].iter().zip(&files[1]) {
                if read(a)? != read(b)? {
                    return Err(format!("{cmd} on {cfg}: {} differs between runs", name(a)));
                }
                compared += 1;
            }
        }
    }
    ensure(
        compared >= 16,
        format!("{compared} report files byte-identical across reruns"),
    )
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(e)
}

fn name(p: &Path) -> String {
    p.file_name().unwrap().to_string_lossy().into_owned()
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("AC1", "JVP correctness", ac1_jvp, Some(5)),
        ("AC2", "second-order convergence", ac2_convergence, Some(10)),
        ("AC3", "linear-chain exactness", ac3_linear_chain, Some(2)),
        ("AC4", "multi-layer additivity", ac4_additivity, Some(5)),
        ("AC5", "margin consistency", ac5_margin, Some(30)),
        ("AC6", "flip prediction", ac6_flip_prediction, Some(60)),
        ("AC7", "scaling laws", ac7_scaling, None),
        ("AC8", "reproducibility", ac8_reproducible, None),
    ];
    let mut failed = 0;
    for (id, title, check, budget) in criteria {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let over = budget.is_some_and(|s| took > Duration::from_secs(s));
        let (ok, detail) = match result {
            Ok(d) => (!over, d),
            Err(d) => (false, d),
        };
        let budget = budget.map(|s| format!(", budget {s} s")).unwrap_or_default();
        println!(
            "[{}] {id} {title}: {detail} ({:.2} s{budget})",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
        failed += !ok as usize;
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
